"""Counter-based random stream splitting.

Every random draw in a simulation is taken from a stream keyed by
``(seed, trial, hypothesis, sensor, purpose)``. The n-th draw of a stream
always corresponds to the n-th tick (or n-th message) of that sensor, so a
trial is reproducible regardless of how many detectors run on it or in
which order trials are executed.
"""

from __future__ import annotations

import numpy as np

# Stable integer codes; never renumber, only append.
PURPOSES = {
    "noise": 0,
    "channel_coeff": 1,
    "channel_delay": 2,
    "observation": 3,
    "calibration": 4,
    "kl": 5,
}


def stream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream identified by ``seed`` and an integer key."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


class TrialStreams:
    """Factory of per-(sensor, purpose) generators for one trial."""

    def __init__(self, seed: int, trial: int, hypothesis: int):
        self.seed = int(seed)
        self.trial = int(trial)
        self.hypothesis = int(hypothesis)

    def get(self, sensor: int, purpose: str) -> np.random.Generator:
        return stream(self.seed, self.trial, self.hypothesis, sensor, PURPOSES[purpose])


def complex_normal(rng: np.random.Generator, size, mean: complex = 0.0, var: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex normal draws, N_c(mean, var).

    Draws are filled in row-major order from ``2 * prod(size)`` real normals,
    so a larger ``size`` along the first axis extends the same sequence.
    """
    size = (size,) if np.isscalar(size) else tuple(size)
    z = rng.standard_normal(size + (2,))
    return mean + np.sqrt(var / 2.0) * (z[..., 0] + 1j * z[..., 1])
