"""Level-triggered sampling of a local LLR signal."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .models import InvalidParameterError


class SequencingError(ValueError):
    pass


@dataclass(frozen=True)
class SampleEvent:
    sensor_id: int
    tick: int
    bit: int
    overshoot: float


@dataclass
class SamplerState:
    """Reference point of one sensor's sampler.

    ``stride`` is the number of ticks between LLR evaluations (1 for the
    per-tick scheme, ``S_d`` for the slow radar scheme).
    """

    delta: float
    stride: int = 1
    sensor_id: int = 0
    last_sample_llr: float = 0.0
    last_sample_tick: int = 0
    last_eval_tick: int = 0

    def step(self, tick: int, llr_value: float) -> Optional[SampleEvent]:
        """Feed the exact local LLR at ``tick``; return an event on a level crossing."""
        if tick % self.stride or tick <= self.last_eval_tick:
            raise SequencingError(
                f"tick {tick} is not a stride-{self.stride} tick after {self.last_eval_tick}")
        self.last_eval_tick = tick
        change = llr_value - self.last_sample_llr
        if abs(change) < self.delta:
            return None
        self.last_sample_llr = llr_value
        self.last_sample_tick = tick
        return SampleEvent(self.sensor_id, tick, 1 if change > 0 else -1, abs(change) - self.delta)


def solve_delta(kl_sum: float, rate: float, tol: float = 1e-10) -> float:
    """Threshold giving an average of ``rate`` messages per tick.

    Solves ``delta * tanh(delta / 2) = kl_sum / rate`` by bisection. The
    left side is increasing and bounded above by ``delta``.
    """
    if kl_sum < 0 or not rate > 0:
        raise InvalidParameterError(f"need kl_sum >= 0 and rate > 0, got {kl_sum}, {rate}")
    c = kl_sum / rate
    if c == 0:
        return 0.0
    lo, hi = 0.0, max(c, 1.0) + 1.0
    # Bisect to machine resolution; the residual then sits far below tol
    # because the slope near the root is at most 1 + delta/2.
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid * math.tanh(mid / 2) < c:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4e-16 * hi:
            break
    root = 0.5 * (lo + hi)
    if abs(root * math.tanh(root / 2) - c) > max(tol, 1e-15 * c):
        raise ArithmeticError(f"bisection did not converge for c={c}")
    return root


def sample_path(llr: np.ndarray, delta: float, stride: int = 1, sensor_id: int = 0):
    """Run the sampler over a whole path of evaluated LLR values.

    ``llr[j]`` is the exact local LLR at tick ``stride * (j + 1)``. Returns
    arrays ``(ticks, bits, overshoots, sampled_llr)``, equivalent to feeding
    every value through :meth:`SamplerState.step`.
    """
    llr = np.asarray(llr, dtype=float)
    n = llr.size
    idx_out, bits = [], []
    if delta <= 0:
        # Every evaluation is a sample.
        ch = np.diff(llr, prepend=0.0)
        idx = np.arange(n)
        ticks = (idx + 1) * stride
        return ticks, np.where(ch[idx] > 0, 1, -1), np.abs(ch[idx]), llr[idx]
    ref = 0.0
    start = 0
    window = 32
    while start < n:
        seg = llr[start:start + window] - ref
        hit = np.flatnonzero(np.abs(seg) >= delta)
        if hit.size == 0:
            start += window
            window *= 2
            continue
        j = start + int(hit[0])
        idx_out.append(j)
        bits.append(1 if llr[j] > ref else -1)
        ref = llr[j]
        start = j + 1
        window = 32
    idx = np.asarray(idx_out, dtype=np.int64)
    sampled = llr[idx]
    prev = np.concatenate(([0.0], sampled[:-1]))
    return (idx + 1) * stride, np.asarray(bits, dtype=np.int64), np.abs(sampled - prev) - delta, sampled
