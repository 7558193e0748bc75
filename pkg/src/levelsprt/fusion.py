"""Fusion-center SPRT and the baseline detectors it is compared with."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .codec import ChannelModel, EncoderParams, decode_arrays, encode_delays
from .lts import sample_path
from .models import InvalidParameterError

KINDS = (
    "centralized",
    "time_encoded",
    "time_encoded_random",
    "quantized",
    "ignore_overshoot",
    "bit_llr_calibrated",
    "uniform_sampling",
    "decision_fusion_majority",
)


def wald_thresholds(alpha: float, beta: float) -> tuple[float, float]:
    """Wald's approximate SPRT thresholds ``(a, b)``; the test stops outside ``(-b, a)``."""
    if not (0 < alpha < 0.5 and 0 < beta < 0.5):
        raise InvalidParameterError(f"error targets must lie in (0, 1/2), got {alpha}, {beta}")
    return math.log((1 - beta) / alpha), math.log((1 - alpha) / beta)


@dataclass(frozen=True)
class DetectorVariant:
    """Message semantics of one detector.

    ``bits`` is the number of overshoot bits for ``quantized`` (``None``
    means unlimited); ``period`` is the transmission period for
    ``uniform_sampling``.
    """

    kind: str
    bits: Optional[int] = None
    period: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown detector kind {self.kind!r}")
        if self.kind == "quantized" and self.bits is not None and self.bits < 1:
            raise InvalidParameterError("quantized detectors need bits >= 1")
        if self.kind == "uniform_sampling" and (self.period is None or self.period < 1):
            raise InvalidParameterError("uniform_sampling needs a period >= 1")

    @property
    def name(self) -> str:
        if self.kind == "quantized":
            return f"quantized({'inf' if self.bits is None else self.bits})"
        if self.kind == "uniform_sampling":
            return f"uniform_sampling({self.period})"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "DetectorVariant":
        """Parse names such as ``time_encoded``, ``quantized(2)`` or ``uniform_sampling(4)``."""
        m = re.fullmatch(r"\s*(\w+)\s*(?:\(\s*(\w+)\s*\))?\s*", text)
        if not m:
            raise InvalidParameterError(f"cannot parse detector {text!r}")
        kind, arg = m.groups()
        if kind == "quantized":
            bits = None if arg in (None, "inf") else int(arg)
            return cls(kind, bits=bits)
        if kind == "uniform_sampling":
            return cls(kind, period=int(arg) if arg else None)
        if arg is not None:
            raise InvalidParameterError(f"detector {kind!r} takes no argument")
        return cls(kind)

    def __str__(self):
        return self.name


@dataclass
class FusionState:
    """Running SPRT at the fusion center."""

    threshold_a: float
    threshold_b: float
    llr_hat: float = 0.0
    decision: Optional[int] = None
    stop_time: float = math.nan
    message_count: int = 0
    late_arrivals: int = 0
    last_arrival: float = -math.inf

    @property
    def running(self) -> bool:
        return self.decision is None

    @property
    def stop_ticks(self) -> int:
        return math.ceil(self.stop_time)

    def on_message(self, bit: int, overshoot_estimate: float, delta: float, arrival_time: float) -> "FusionState":
        """Add ``bit * (delta + overshoot_estimate)`` and apply the stopping rule."""
        if not self.running:
            self.late_arrivals += 1
            return self
        if arrival_time < self.last_arrival:
            raise InvalidParameterError("messages must be processed in arrival order")
        self.last_arrival = arrival_time
        return self.add(bit * (delta + overshoot_estimate), arrival_time)

    def add(self, lam: float, arrival_time: float) -> "FusionState":
        self.llr_hat += lam
        self.message_count += 1
        if self.llr_hat >= self.threshold_a:
            self.decision, self.stop_time = 1, arrival_time
        elif self.llr_hat <= -self.threshold_b:
            self.decision, self.stop_time = 0, arrival_time
        return self


def majority_decision(local_decisions) -> int:
    """1 when strictly more than half of the local decisions are 1."""
    d = list(local_decisions)
    return int(sum(d) > len(d) / 2)


def quantize_overshoot(q: np.ndarray, theta: float, bits: Optional[int]) -> np.ndarray:
    """Uniform quantizer of ``[0, theta]`` with ``2**bits`` cells, midpoint reconstruction."""
    q = np.asarray(q, dtype=float)
    if bits is None:
        return q.copy()
    levels = 2 ** bits
    step = theta / levels
    cell = np.clip(np.floor(q / step), 0, levels - 1)
    return (cell + 0.5) * step


@dataclass
class DetectionSetup:
    """Everything a detector needs besides the observation path."""

    delta: float
    threshold_a: float
    threshold_b: float
    encoder: Optional[EncoderParams] = None
    channel: ChannelModel = field(default_factory=ChannelModel)
    random_encoder: Optional[EncoderParams] = None
    random_channel: Optional[ChannelModel] = None
    theta: Optional[float] = None
    bit_llr: Optional[tuple[float, float]] = None
    local_thresholds: Optional[tuple[float, float]] = None
    max_ticks: int = 10_000_000


@dataclass
class Outcome:
    decision: int
    stop_time_raw: float
    messages: int
    saturations: int = 0
    decode_integrity_events: int = 0
    processed: Optional[list] = None

    @property
    def stop_ticks(self) -> int:
        return math.ceil(self.stop_time_raw)


def _first_exit(stat: np.ndarray, a: float, b: float) -> int:
    hit = np.flatnonzero((stat >= a) | (stat <= -b))
    return int(hit[0]) if hit.size else -1


def run_centralized(llr: np.ndarray, stride: int, a: float, b: float) -> Optional[Outcome]:
    """SPRT on the sum of the exact local LLRs."""
    g = llr.sum(axis=0)
    j = _first_exit(g, a, b)
    if j < 0:
        return None
    return Outcome(int(g[j] >= a), float((j + 1) * stride), (j + 1) * llr.shape[0])


def run_decision_fusion(llr: np.ndarray, stride: int, a: float, b: float) -> Optional[Outcome]:
    """Local SPRTs per sensor, majority rule at the FC.

    The FC stops as soon as the majority outcome is settled: ``H1`` once
    more than ``K/2`` sensors chose 1, ``H0`` once that can no longer happen.
    """
    K = llr.shape[0]
    need_one = K // 2 + 1
    need_zero = K - K // 2
    local = []
    for k in range(K):
        j = _first_exit(llr[k], a, b)
        if j >= 0:
            local.append(((j + 1) * stride, k, int(llr[k, j] >= a)))
    local.sort()
    ones = zeros = 0
    for n, (tick, _, d) in enumerate(local, 1):
        ones += d
        zeros += 1 - d
        if ones >= need_one:
            return Outcome(1, float(tick), n)
        if zeros >= need_zero:
            return Outcome(0, float(tick), n)
    return None


def build_messages(variant: DetectorVariant, llr: np.ndarray, stride: int, setup: DetectionSetup,
                   delay_rngs=None):
    """Messages every sensor sends over the path, in arrival order.

    Returns a dict of arrays ``arrival, sensor, tick, bit, lam, sat, bad,
    q`` (``q`` is the true overshoot, for tests only).
    """
    K, n = llr.shape
    parts = []
    for k in range(K):
        if variant.kind == "uniform_sampling":
            P = variant.period
            if P % stride:
                raise InvalidParameterError(f"period {P} is not a multiple of the stride {stride}")
            idx = np.arange(P // stride - 1, n, P // stride)
            vals = llr[k, idx]
            lam = np.diff(vals, prepend=0.0)
            ticks = (idx + 1) * stride
            bits = np.where(lam > 0, 1, -1)
            z = np.zeros(idx.size)
            parts.append(dict(arrival=ticks.astype(float), whole=ticks, frac=z, tick=ticks, bit=bits,
                              lam=lam, sat=z.astype(bool), bad=z.astype(bool), q=z, sensor=np.full(idx.size, k)))
            continue
        ticks, bits, q, _ = sample_path(llr[k], setup.delta, stride, k)
        m = ticks.size
        frac = np.zeros(m)
        sat = np.zeros(m, dtype=bool)
        bad = np.zeros(m, dtype=bool)
        if variant.kind in ("time_encoded", "time_encoded_random"):
            if variant.kind == "time_encoded":
                enc, ch = setup.encoder, setup.channel
            else:
                enc, ch = setup.random_encoder, setup.random_channel
            if enc is None or ch is None:
                raise InvalidParameterError(f"{variant.kind} needs encoder and channel settings")
            xi, sat = encode_delays(q, enc)
            nu = ch.draw(None if delay_rngs is None else delay_rngs[k], m)
            frac = xi + nu
            _, q_hat, bad = decode_arrays(ticks, frac, enc, ch)
        elif variant.kind == "quantized":
            if variant.bits is not None and setup.theta is None:
                raise InvalidParameterError("quantized detectors need an overshoot bound theta")
            q_hat = quantize_overshoot(q, setup.theta, variant.bits)
        elif variant.kind == "ignore_overshoot":
            q_hat = np.zeros(m)
        elif variant.kind == "bit_llr_calibrated":
            if setup.bit_llr is None:
                raise InvalidParameterError("bit_llr_calibrated needs pre-computed bit LLRs")
            up, down = setup.bit_llr
            lam = np.where(bits > 0, up, down)
            parts.append(dict(arrival=ticks.astype(float), whole=ticks, frac=frac, tick=ticks, bit=bits,
                              lam=lam, sat=sat, bad=bad, q=q, sensor=np.full(m, k)))
            continue
        else:
            raise InvalidParameterError(f"{variant.kind} does not use level-triggered messages")
        lam = bits * (setup.delta + q_hat)
        parts.append(dict(arrival=ticks + frac, whole=ticks, frac=frac, tick=ticks, bit=bits, lam=lam,
                          sat=sat, bad=bad, q=q, sensor=np.full(m, k)))
    msgs = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
    order = np.lexsort((msgs["sensor"], msgs["arrival"]))
    return {key: v[order] for key, v in msgs.items()}


def run_messages(variant: DetectorVariant, llr: np.ndarray, stride: int, setup: DetectionSetup,
                 delay_rngs=None, keep_transcript: bool = False) -> Optional[Outcome]:
    """FC recursion over the messages of a level-triggered (or uniform) scheme.

    Only messages that arrive before the next unseen tick are used, so the
    result is ``None`` when the path is too short to settle the test.
    """
    n = llr.shape[1]
    msgs = build_messages(variant, llr, stride, setup, delay_rngs)
    horizon = n * stride + stride
    if variant.kind == "time_encoded" and setup.channel.kind == "deterministic":
        horizon += setup.channel.delay
    complete = msgs["arrival"] < horizon
    cum = np.cumsum(msgs["lam"][complete])
    j = _first_exit(cum, setup.threshold_a, setup.threshold_b)
    if j < 0:
        return None
    transcript = None
    if keep_transcript:
        transcript = [(int(msgs["sensor"][i]), int(msgs["tick"][i]), int(msgs["bit"][i]), float(msgs["lam"][i]))
                      for i in range(j + 1)]
    return Outcome(int(cum[j] >= setup.threshold_a), float(msgs["arrival"][j]), j + 1,
                   int(msgs["sat"][: j + 1].sum()), int(msgs["bad"][: j + 1].sum()), transcript)


def run_variant(variant: DetectorVariant, llr: np.ndarray, stride: int, setup: DetectionSetup,
                delay_rngs=None, keep_transcript: bool = False) -> Optional[Outcome]:
    """One detector on one (possibly truncated) LLR path; ``None`` if undecided."""
    if variant.kind == "centralized":
        return run_centralized(llr, stride, setup.threshold_a, setup.threshold_b)
    if variant.kind == "decision_fusion_majority":
        a, b = setup.local_thresholds or (setup.threshold_a, setup.threshold_b)
        return run_decision_fusion(llr, stride, a, b)
    return run_messages(variant, llr, stride, setup, delay_rngs, keep_transcript)
