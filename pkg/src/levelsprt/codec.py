"""Time encoding of overshoots and the sensor-to-FC channel.

A sensor that samples at tick ``t`` with overshoot ``q`` transmits its sign
bit at ``t + offset + q / r``. The FC recovers ``t`` as the integer part of
the (delay-corrected) arrival time and ``q`` from the fractional part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lts import SampleEvent
from .models import InvalidParameterError


class InfeasibleEncodingError(ValueError):
    pass


class DecodeIntegrityError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderParams:
    slope_r: float
    offset: float = 0.0
    saturation_epsilon: float = 1e-6

    def __post_init__(self):
        if not self.slope_r > 0:
            raise InvalidParameterError("slope_r must be positive")
        if not 0 < self.saturation_epsilon < 1:
            raise InvalidParameterError("saturation_epsilon must lie in (0, 1)")
        if not 0 <= self.offset or not 2 * self.offset + self.saturation_epsilon < 1:
            raise InvalidParameterError(
                f"offset {self.offset} leaves no room in the [offset, 1 - offset) delay budget")

    @property
    def budget(self) -> float:
        """Largest encodable ``q / r``; keeps the delay below ``1 - offset``."""
        return 1.0 - 2.0 * self.offset - self.saturation_epsilon


@dataclass
class ChannelModel:
    """Delay between transmission and arrival at the FC.

    ``kind`` is ``"ideal"``, ``"deterministic"`` (fixed ``delay``) or
    ``"random"`` (uniform on ``[0, bound]``). The FC subtracts the estimate
    ``nu_hat`` (the distribution mean unless given); ``phi_hat`` bounds the
    estimation error.
    """

    kind: str = "ideal"
    delay: float = 0.0
    bound: float = 0.0
    nu_hat: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("ideal", "deterministic", "random"):
            raise InvalidParameterError(f"unknown channel kind {self.kind!r}")
        if self.delay < 0 or self.bound < 0:
            raise InvalidParameterError("channel delays must be non-negative")
        if self.nu_hat is None:
            self.nu_hat = {"ideal": 0.0, "deterministic": self.delay, "random": self.bound / 2}[self.kind]

    @property
    def phi_hat(self) -> float:
        if self.kind == "random":
            return max(self.nu_hat, self.bound - self.nu_hat)
        return 0.0

    def draw(self, rng: Optional[np.random.Generator], n: int) -> np.ndarray:
        if self.kind == "ideal":
            return np.zeros(n)
        if self.kind == "deterministic":
            return np.full(n, self.delay)
        return self.bound * rng.random(n)


@dataclass
class Message:
    """One transmitted bit.

    Times are kept as an integer tick plus a fractional part so that
    decoding stays exact at any clock value; ``transmit_time`` and
    ``arrival_time`` are the combined reals.
    """

    sensor_id: int
    bit: int
    tick: int
    transmit_frac: float
    arrival_frac: float
    true_overshoot: float = field(default=math.nan, compare=False)
    saturated: bool = False

    @property
    def transmit_time(self) -> float:
        return self.tick + self.transmit_frac

    @property
    def arrival_time(self) -> float:
        return self.tick + self.arrival_frac


def min_slope(theta: float, phi_hat: float) -> float:
    """Smallest admissible decoding slope, ``theta / (1 - 2 phi_hat)``."""
    if not theta > 0:
        raise InvalidParameterError("theta must be positive")
    if not 0 <= phi_hat < 0.5:
        raise InfeasibleEncodingError(f"phi_hat={phi_hat} leaves no room for encoding")
    return theta / (1.0 - 2.0 * phi_hat)


def encode_delays(overshoot: np.ndarray, params: EncoderParams) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised encoder: transmission delays and a saturation mask."""
    x = np.asarray(overshoot, dtype=float) / params.slope_r
    sat = x > params.budget
    return params.offset + np.minimum(x, params.budget), sat


def encode(event: SampleEvent, params: EncoderParams) -> Message:
    if event.overshoot < 0:
        raise InvalidParameterError("overshoot must be non-negative")
    xi, sat = encode_delays(np.array([event.overshoot]), params)
    x = float(xi[0])
    return Message(event.sensor_id, event.bit, int(event.tick), x, x, event.overshoot, bool(sat[0]))


def transmit(message: Message, channel: ChannelModel, rng: Optional[np.random.Generator] = None) -> Message:
    nu = float(channel.draw(rng, 1)[0])
    return Message(message.sensor_id, message.bit, message.tick, message.transmit_frac,
                   message.transmit_frac + nu, message.true_overshoot, message.saturated)


def decode_arrays(whole: np.ndarray, frac: np.ndarray, params: EncoderParams, channel: ChannelModel):
    """Vectorised decoder for arrival times ``whole + frac``.

    Returns ``(ticks, overshoot_estimates, integrity_mask)``. The mask flags
    messages whose corrected fractional part falls below the offset by more
    than ``phi_hat``; their estimate is clamped to 0.
    """
    corrected = np.asarray(frac, dtype=float) - channel.nu_hat
    carry = np.floor(corrected)
    x = corrected - carry - params.offset
    bad = x < -channel.phi_hat - 1e-12
    ticks = np.asarray(whole, dtype=np.int64) + carry.astype(np.int64)
    return ticks, params.slope_r * np.maximum(x, 0.0), bad


def decode(arrival, params: EncoderParams, channel: ChannelModel) -> tuple[int, float]:
    """Recover ``(sampling tick, overshoot estimate)`` from an arrival.

    ``arrival`` is a :class:`Message`, a ``(whole, frac)`` pair, or a real
    arrival time (split here, which costs precision at large clock values).
    """
    if isinstance(arrival, Message):
        whole, frac = arrival.tick, arrival.arrival_frac
    elif isinstance(arrival, tuple):
        whole, frac = arrival
    else:
        whole = math.floor(arrival)
        frac = arrival - whole
    ticks, q, bad = decode_arrays(np.array([whole]), np.array([frac]), params, channel)
    if bad[0]:
        raise DecodeIntegrityError(
            f"arrival {whole}+{frac} decodes below the encoder offset; channel bound mis-specified?")
    return int(ticks[0]), float(q[0])
