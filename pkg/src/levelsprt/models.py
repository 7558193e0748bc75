"""Observation models as sources of local log-likelihood ratios.

All LLRs are in nats. A :class:`SensorModel` draws i.i.d. observations
and maps each one to its LLR increment; a :class:`Scenario` bundles the
sensors of a network and produces the exact local LLR paths a trial needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
from typing import Callable, Optional

import numpy as np

from .rng import TrialStreams, stream


class InvalidParameterError(ValueError):
    pass


class UnsupportedMethodError(ValueError):
    pass


@dataclass(frozen=True)
class KlNumbers:
    """Per-tick KL information numbers, ``i0 = E0[-l]`` and ``i1 = E1[l]``."""

    i0: float
    i1: float
    i0_se: float = 0.0
    i1_se: float = 0.0

    def under(self, hypothesis: int) -> float:
        return self.i1 if hypothesis == 1 else self.i0


@dataclass(frozen=True)
class SensorModel:
    """H0/H1 observation distributions of one sensor.

    ``sampler(hypothesis, rng, size)`` draws observations; ``llr_increment``
    maps observations to ``log f1(y)/f0(y)``. ``analytic_kl`` is optional.
    """

    id: int
    sampler: Callable[[int, np.random.Generator, int], np.ndarray]
    llr_increment: Callable[[np.ndarray], np.ndarray]
    analytic_kl: Optional[KlNumbers] = None

    def sample(self, hypothesis: int, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.sampler(hypothesis, rng, size)


def _gaussian_sample(m, sigma, hypothesis, rng, size):
    return m * hypothesis + sigma * rng.standard_normal(size)


def _gaussian_llr(m, s2, y):
    return (m * np.asarray(y) - 0.5 * m * m) / s2


def gaussian_shift_model(mean_shift: float, sigma: float, id: int = 1) -> SensorModel:
    """Normal(0, sigma^2) under H0 against Normal(mean_shift, sigma^2) under H1."""
    if not sigma > 0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma}")
    m = float(mean_shift)
    s2 = float(sigma) ** 2
    sampler = partial(_gaussian_sample, m, float(sigma))
    llr = partial(_gaussian_llr, m, s2)
    kl = 0.5 * m * m / s2
    return SensorModel(id=id, sampler=sampler, llr_increment=llr, analytic_kl=KlNumbers(kl, kl))


def kl_numbers(model: SensorModel, method: str = "analytic", n_draws: int = 100_000, seed: int = 0) -> KlNumbers:
    """KL numbers of ``model``, closed form or by Monte Carlo.

    The Monte Carlo path returns the sample means of ``-l`` under H0 and
    ``l`` under H1, with their standard errors.
    """
    if method == "analytic":
        if model.analytic_kl is None:
            raise UnsupportedMethodError(f"sensor {model.id} has no closed-form KL numbers")
        return model.analytic_kl
    if method != "monte_carlo":
        raise UnsupportedMethodError(f"unknown method {method!r}")
    if n_draws < 1:
        raise InvalidParameterError("n_draws must be >= 1")
    out = []
    for h in (0, 1):
        rng = stream(seed, model.id, h)
        l = model.llr_increment(model.sample(h, rng, n_draws))
        l = -l if h == 0 else l
        se = float(l.std(ddof=1) / math.sqrt(n_draws)) if n_draws > 1 else math.inf
        out.append((float(l.mean()), se))
    return KlNumbers(out[0][0], out[1][0], out[0][1], out[1][1])


def likelihood_ratio_identity(model: SensorModel, n_draws: int, seed: int = 0) -> tuple[float, float]:
    """Monte Carlo estimate of ``E0[exp(l)]`` and its standard error (should be 1)."""
    rng = stream(seed, model.id, 0)
    w = np.exp(model.llr_increment(model.sample(0, rng, n_draws)))
    return float(w.mean()), float(w.std(ddof=1) / math.sqrt(n_draws))


class Scenario:
    """A network of sensors producing exact local LLR paths.

    Subclasses implement :meth:`llr_paths`. Local LLRs are evaluated every
    ``stride`` ticks; column ``j`` of a path holds the value at tick
    ``stride * (j + 1)``.
    """

    num_sensors: int
    stride: int = 1

    def llr_paths(self, streams: TrialStreams, n_evals: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(detector_llr, true_llr)``, both of shape ``(K, n_evals)``.

        ``detector_llr`` is the statistic the sensors sample; ``true_llr`` is
        the exact likelihood ratio of the data, used for importance-sampling
        weights (NaN at evaluation ticks where it is not available).
        """
        raise NotImplementedError

    def kl_per_tick(self, hypothesis: int, n_draws: int = 20_000, seed: int = 0) -> np.ndarray:
        """Per-sensor ``|E_i[L_stride]| / stride`` under ``hypothesis``."""
        streams = TrialStreams(seed, 0, hypothesis)
        vals = np.empty((n_draws, self.num_sensors))
        for j in range(n_draws):
            streams.trial = j
            det, _ = self.llr_paths(streams, 1)
            vals[j] = det[:, 0]
        return np.abs(vals.mean(axis=0)) / self.stride

    def describe(self) -> dict:
        return {}


class IidScenario(Scenario):
    """Independent sensors, each with i.i.d. observations and additive LLRs."""

    def __init__(self, sensors: list[SensorModel]):
        if not sensors:
            raise InvalidParameterError("at least one sensor is required")
        self.sensors = list(sensors)
        self.num_sensors = len(sensors)
        self.stride = 1

    def increments(self, streams: TrialStreams, n_ticks: int) -> np.ndarray:
        out = np.empty((self.num_sensors, n_ticks))
        for i, s in enumerate(self.sensors):
            y = s.sample(streams.hypothesis, streams.get(i, "observation"), n_ticks)
            out[i] = s.llr_increment(y)
        return out

    def llr_paths(self, streams, n_evals):
        L = np.cumsum(self.increments(streams, n_evals), axis=1)
        return L, L

    def kl_per_tick(self, hypothesis, n_draws=20_000, seed=0):
        kls = []
        for s in self.sensors:
            if s.analytic_kl is not None:
                kls.append(s.analytic_kl.under(hypothesis))
            else:
                kls.append(kl_numbers(s, "monte_carlo", n_draws, seed).under(hypothesis))
        return np.asarray(kls, dtype=float)


def gaussian_network(num_sensors: int = 2, mean_shift: float = 10 ** 0.25, sigma: float = 1.0) -> IidScenario:
    """Identical Gaussian-shift sensors; defaults give the two-sensor example network."""
    return IidScenario([gaussian_shift_model(mean_shift, sigma, id=k + 1) for k in range(num_sensors)])
