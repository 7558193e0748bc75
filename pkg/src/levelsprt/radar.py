"""Widely separated MIMO radar: scenario synthesis and receiver LLRs.

Each receiver ``k`` sees the superposition of ``M`` orthogonal waveforms
reflected by the target, attenuated by ``d_mk ** -eta`` and scaled by a
random channel coefficient ``h_mk``. The four Swerling cases differ in the
mean of ``h`` (0 or ``mu``) and in whether ``h`` is redrawn every tick.

Distances are in km, times in seconds. Tick ``t`` (1-based) is the sample
taken at ``t * T_s``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .models import InvalidParameterError, Scenario
from .rng import TrialStreams, complex_normal, stream

log = logging.getLogger(__name__)

SPEED_OF_LIGHT_KM_S = 299_792.458
DETECTORS = ("wsprt", "gslrt", "gslrt_orth", "recursive")


class ConditioningError(ArithmeticError):
    """The Hermitian matrix of a receiver is not numerically positive definite."""


@dataclass(frozen=True)
class Geometry:
    tx_positions: np.ndarray
    rx_positions: np.ndarray
    target_position: np.ndarray
    path_loss_eta: float = 2.0
    carrier_frequency: float = 5e6

    def __post_init__(self):
        tx = np.atleast_2d(np.asarray(self.tx_positions, float))
        rx = np.atleast_2d(np.asarray(self.rx_positions, float))
        x0 = np.asarray(self.target_position, float)
        object.__setattr__(self, "tx_positions", tx)
        object.__setattr__(self, "rx_positions", rx)
        object.__setattr__(self, "target_position", x0)
        if tx.shape[1] != 3 or rx.shape[1] != 3 or x0.shape != (3,):
            raise InvalidParameterError("positions must be 3-vectors")
        if np.any(self.distances <= 0):
            raise InvalidParameterError("a transmitter-target-receiver path has zero length")
        for name, pos in (("transmitter", tx), ("receiver", rx)):
            hits = np.flatnonzero(np.linalg.norm(pos - x0, axis=1) == 0)
            if hits.size:
                log.warning("target coincides with %s %s", name, (hits + 1).tolist())

    @property
    def num_tx(self) -> int:
        return self.tx_positions.shape[0]

    @property
    def num_rx(self) -> int:
        return self.rx_positions.shape[0]

    @property
    def distances(self) -> np.ndarray:
        """``d[m, k]``, transmitter to target to receiver (km)."""
        dt = np.linalg.norm(self.tx_positions - self.target_position, axis=1)
        dr = np.linalg.norm(self.rx_positions - self.target_position, axis=1)
        return dt[:, None] + dr[None, :]

    @property
    def delays(self) -> np.ndarray:
        """Propagation delays ``D[m, k]`` in seconds."""
        return self.distances / SPEED_OF_LIGHT_KM_S

    @property
    def delay_phases(self) -> np.ndarray:
        """Carrier phase factors ``exp(-j 2 pi f_c D)`` carried by the channel coefficients."""
        return np.exp(-2j * np.pi * self.carrier_frequency * self.delays)


def reference_geometry(num_tx: int, num_rx: int, eta: float = 2.0, carrier_frequency: float = 5e6) -> Geometry:
    """Transmitters at ``(m, 0, 0)``, receivers at ``(0, k, 0)``, target at ``(20, 15, 0)`` km."""
    if num_tx < 1 or num_rx < 1:
        raise InvalidParameterError("need at least one transmitter and one receiver")
    tx = np.array([[m, 0.0, 0.0] for m in range(1, num_tx + 1)])
    rx = np.array([[0.0, k, 0.0] for k in range(1, num_rx + 1)])
    return Geometry(tx, rx, np.array([20.0, 15.0, 0.0]), eta, carrier_frequency)


paper_geometry = reference_geometry


def waveform_sample(m: int, t: float, S: float) -> complex:
    """``exp(j 2 pi m t / S) / sqrt(S)`` on ``[0, S)``, zero elsewhere."""
    if not 0 <= t < S:
        return 0j
    return complex(np.exp(2j * np.pi * m * t / S) / math.sqrt(S))


def waveform_table(num_tx: int, samples_per_waveform: int, S: float) -> np.ndarray:
    """Discrete waveforms over one period, shape ``(S_d, M)``.

    Row ``i`` is tick ``t`` with ``t % S_d == i``; the envelope repeats
    every ``S_d`` ticks. Phases use the integer sample index so that no
    rounding of ``t * T_s`` can leak across the period boundary.
    """
    i = np.arange(samples_per_waveform)[:, None]
    m = np.arange(1, num_tx + 1)[None, :]
    w = np.exp(2j * np.pi * m * i / samples_per_waveform)
    # Snap rounding residue (e.g. the 1e-16 imaginary part of exp(j pi)) so
    # that orthogonal sets give exactly zero cross terms.
    w = np.where(np.abs(w.real) < 1e-12, 0, w.real) + 1j * np.where(np.abs(w.imag) < 1e-12, 0, w.imag)
    return w / math.sqrt(S)


# ------------------------------------------------------------ matched filters

@dataclass
class MatchedFilterBank:
    """Running matched-filter statistics of one receiver.

    ``v[m] = c_m / s2 * sum y_t conj(s^m_t)``, ``u[m] = c_m^2 / s2 * sum |s^m_t|^2``
    and ``z[m, n] = c_m c_n / s2 * sum conj(s^m_t) s^n_t`` for ``m != n``,
    where ``c_m = sqrt(E/M) d_m ** -eta``. ``z`` is oriented so that
    ``gram = diag(u + 1) + z`` is the matrix of the quadratic form in ``h``.
    """

    scale: np.ndarray
    noise_var: float
    v: np.ndarray = None
    u: np.ndarray = None
    z: np.ndarray = None
    ticks: int = 0

    def __post_init__(self):
        M = len(self.scale)
        self.scale = np.asarray(self.scale, float)
        if self.v is None:
            self.v = np.zeros(M, complex)
            self.u = np.zeros(M)
            self.z = np.zeros((M, M), complex)

    def update(self, y: complex, s: np.ndarray) -> "MatchedFilterBank":
        c = self.scale
        self.v += c * y * np.conj(s) / self.noise_var
        self.u += c * c * np.abs(s) ** 2 / self.noise_var
        cs = c * s
        outer = np.outer(np.conj(cs), cs) / self.noise_var
        np.fill_diagonal(outer, 0)
        self.z += outer
        self.ticks += 1
        return self

    @classmethod
    def from_scratch(cls, ys: Sequence[complex], waveforms: np.ndarray, scale, noise_var: float):
        """Recompute the statistics from the whole history; ``waveforms[t]`` pairs with ``ys[t]``."""
        ys = np.asarray(ys, complex)
        w = np.asarray(waveforms, complex)[: ys.size]
        c = np.asarray(scale, float)
        cs = c * w
        v = np.conj(cs).T @ ys / noise_var
        u = np.sum(np.abs(cs) ** 2, axis=0) / noise_var
        z = np.conj(cs).T @ cs / noise_var
        np.fill_diagonal(z, 0)
        return cls(c, noise_var, v, u, z, ys.size)

    @property
    def gram(self) -> np.ndarray:
        return np.diag(self.u + 1.0) + self.z


def _quad_logdet(G: np.ndarray, a: np.ndarray, need_logdet: bool = True):
    """``a^H G^-1 a`` and ``log det G`` for stacks of Hermitian positive-definite ``G``."""
    off = G - np.einsum("...ii->...i", G)[..., None] * np.eye(G.shape[-1])
    diag = np.einsum("...ii->...i", G).real
    if not np.any(off):
        return np.sum(np.abs(a) ** 2 / diag, axis=-1), np.sum(np.log(diag), axis=-1)
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("matched-filter Gram matrix is not positive definite") from exc
    w = np.linalg.solve(L, a[..., None])[..., 0]
    quad = np.sum(np.abs(w) ** 2, axis=-1)
    logdet = 2.0 * np.sum(np.log(np.einsum("...ii->...i", L).real), axis=-1) if need_logdet else None
    return quad, logdet


# ----------------------------------------------------------- LLR formulas

def _check_p(p):
    if p <= 0:
        raise InvalidParameterError("the block index p must be positive")


def llr_sw1_wsprt(filters: MatchedFilterBank, scenario: Optional["RadarScenario"] = None, p: int = 1) -> float:
    """Swerling 1 WSPRT at tick ``p * S_d``: ``sum_m |V|^2/(U+1) - log(U+1)``."""
    _check_p(p)
    return llr_sw3_wsprt(filters, None, p, mu=0.0)


def llr_sw3_wsprt(filters: MatchedFilterBank, scenario: Optional["RadarScenario"] = None, p: int = 1,
                  mu: Optional[complex] = None) -> float:
    """Swerling 3 WSPRT at tick ``p * S_d``; assumes orthogonal waveforms there."""
    _check_p(p)
    mu = scenario.mu if mu is None else mu
    u1 = filters.u + 1.0
    return float(np.sum(np.abs(filters.v + mu) ** 2 / u1 - abs(mu) ** 2 - np.log(u1)))


def llr_sw1_gslrt(filters: MatchedFilterBank, scenario: Optional["RadarScenario"] = None, t: int = 1) -> float:
    """GSLRT statistic ``a^H G^-1 a - M log(pi)`` (no orthogonality needed)."""
    return llr_sw3_gslrt(filters, None, t, mu=0.0)


def llr_sw3_gslrt(filters: MatchedFilterBank, scenario: Optional["RadarScenario"] = None, t: int = 1,
                  mu: Optional[complex] = None) -> float:
    mu = scenario.mu if mu is None else mu
    M = filters.v.size
    quad, _ = _quad_logdet(filters.gram, filters.v + mu, need_logdet=False)
    return float(quad - M * (abs(mu) ** 2 + math.log(math.pi)))


def gslrt_orth(filters: MatchedFilterBank, mu: complex = 0.0) -> float:
    """Diagonal GSLRT form, valid where the cross terms vanish."""
    M = filters.v.size
    return float(np.sum(np.abs(filters.v + mu) ** 2 / (filters.u + 1.0)) - M * (abs(mu) ** 2 + math.log(math.pi)))


def marginal_llr(filters: MatchedFilterBank, mu: complex = 0.0) -> float:
    """Exact slow-fluctuation LLR for any waveforms: ``a~^H G^-1 a~ - M|mu|^2 - log det G``."""
    M = filters.v.size
    quad, logdet = _quad_logdet(filters.gram, filters.v + mu)
    return float(quad - M * abs(mu) ** 2 - logdet)


def sw2_increment(y, rho2: float, noise_var: float):
    g = rho2 + noise_var
    return rho2 / (g * noise_var) * np.abs(y) ** 2 + math.log(noise_var / g)


def sw4_increment(y, mu_tilde, rho2: float, noise_var: float):
    g = rho2 + noise_var
    y = np.asarray(y)
    cross = 2.0 * np.real(np.conj(y) * mu_tilde)
    return (rho2 / noise_var * np.abs(y) ** 2 + cross - np.abs(mu_tilde) ** 2) / g + math.log(noise_var / g)


def llr_sw2(prev_llr: float, y: complex, scenario: "RadarScenario", k: int = 0) -> float:
    """Fast-fluctuation Rayleigh target: add one tick's LLR increment."""
    return float(prev_llr + sw2_increment(y, scenario.rho2[k], scenario.noise_var[k]))


def llr_sw4(prev_llr: float, y: complex, scenario: "RadarScenario", tick: int, k: int = 0) -> float:
    """Fast-fluctuation Rician target: add one tick's LLR increment."""
    mt = scenario.mu_tilde(k, np.array([tick]))[0]
    return float(prev_llr + sw4_increment(y, mt, scenario.rho2[k], scenario.noise_var[k]))


# ------------------------------------------------------------------- scenario

@dataclass
class RadarScenario(Scenario):
    """One MIMO radar configuration and the receivers' LLR detector.

    ``detector`` is ``wsprt`` or ``gslrt_orth`` (evaluated every ``S_d``
    ticks, Swerling 1/3), ``gslrt`` (every tick, Swerling 1/3) or
    ``recursive`` (every tick, Swerling 2/4). ``snr_db`` sets the total
    energy ``E = noise_var * 10 ** (snr_db / 10)``.
    """

    num_tx: int = 2
    num_rx: int = 2
    snr_db: float = 3.0
    swerling: int = 1
    detector: str = "wsprt"
    waveform_duration: float = 2e-7
    samples_per_waveform: int = 2
    noise_var: object = 1.0
    mu: complex = (1 + 1j) / 3
    geometry: Optional[Geometry] = None
    path_loss_eta: float = 2.0
    carrier_frequency: float = 5e6
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.swerling not in (1, 2, 3, 4):
            raise InvalidParameterError(f"Swerling case must be 1-4, got {self.swerling}")
        if self.detector not in DETECTORS:
            raise InvalidParameterError(f"unknown radar detector {self.detector!r}")
        fast = self.swerling in (2, 4)
        if fast and self.detector != "recursive":
            raise InvalidParameterError(f"Swerling {self.swerling} only supports the recursive LLR, "
                                        f"not {self.detector}")
        if not fast and self.detector == "recursive":
            raise InvalidParameterError(f"Swerling {self.swerling} needs wsprt, gslrt or gslrt_orth")
        if self.samples_per_waveform < 1 or int(self.samples_per_waveform) != self.samples_per_waveform:
            raise InvalidParameterError("samples_per_waveform must be a positive integer")
        if not self.waveform_duration > 0:
            raise InvalidParameterError("waveform_duration must be positive")
        if self.geometry is None:
            self.geometry = reference_geometry(self.num_tx, self.num_rx, self.path_loss_eta, self.carrier_frequency)
        if (self.geometry.num_tx, self.geometry.num_rx) != (self.num_tx, self.num_rx):
            raise InvalidParameterError("geometry does not match num_tx / num_rx")
        nv = np.broadcast_to(np.asarray(self.noise_var, float), (self.num_rx,)).copy()
        if np.any(nv <= 0):
            raise InvalidParameterError("noise variances must be positive")
        self.noise_var = nv
        if self.swerling in (1, 2):
            self.mu = 0.0
        self.mu = complex(self.mu)
        self.num_sensors = self.num_rx
        self.stride = self.samples_per_waveform if self.detector in ("wsprt", "gslrt_orth") else 1
        self.waveforms = waveform_table(self.num_tx, self.samples_per_waveform, self.waveform_duration)
        if self.stride > 1 and not self.orthogonal:
            log.warning("waveforms are not orthogonal over %d samples with M=%d; %s uses the full-matrix form",
                        self.samples_per_waveform, self.num_tx, self.detector)

    # derived quantities -------------------------------------------------
    @property
    def sample_period(self) -> float:
        return self.waveform_duration / self.samples_per_waveform

    @property
    def energy(self) -> float:
        """Total transmit energy ``E``, from the SNR relative to the first receiver's noise."""
        return float(self.noise_var[0] * 10 ** (self.snr_db / 10))

    @property
    def scale(self) -> np.ndarray:
        """``c[m, k] = sqrt(E/M) * d_mk ** -eta``."""
        d = self.geometry.distances
        return math.sqrt(self.energy / self.num_tx) * d ** (-self.geometry.path_loss_eta)

    @property
    def rho2(self) -> np.ndarray:
        """Per-receiver signal power with unit-variance channels, ``sum_m c_mk^2 / S``."""
        return np.sum(self.scale ** 2, axis=0) / self.waveform_duration

    @property
    def orthogonal(self) -> bool:
        w = self.waveforms
        cross = np.conj(w).T @ w
        np.fill_diagonal(cross, 0)
        return bool(np.max(np.abs(cross), initial=0.0) <= 1e-9 * np.abs(w[0, 0]) ** 2)

    def waveform(self, ticks: np.ndarray) -> np.ndarray:
        """``s^m_t`` for 1-based ticks, shape ``(len(ticks), M)``."""
        return self.waveforms[np.asarray(ticks) % self.samples_per_waveform]

    @property
    def llr_floor(self) -> float:
        """Lower bound of a receiver's detector statistic (``-inf`` unless GSLRT)."""
        if self.detector in ("gslrt", "gslrt_orth"):
            return -self.num_tx * (abs(self.mu) ** 2 + math.log(math.pi))
        return -math.inf

    def mu_tilde(self, k: int, ticks: np.ndarray) -> np.ndarray:
        return self.mu * (self.waveform(ticks) @ self.scale[:, k])

    def describe(self) -> dict:
        return {"model": "radar", "num_tx": self.num_tx, "num_rx": self.num_rx, "snr_db": self.snr_db,
                "swerling": self.swerling, "detector": self.detector, "stride": self.stride,
                "energy": self.energy}

    # synthesis ----------------------------------------------------------
    def draw_channels(self, hypothesis: int, rng: np.random.Generator, n_ticks: int, k: int = 0,
                      batch: tuple = ()) -> Optional[np.ndarray]:
        """Channel coefficients of receiver ``k``: shape ``batch + (M,)`` or ``batch + (n_ticks, M)``.

        Returns ``None`` under H0. Draws are prefix-consistent in ``n_ticks``.
        """
        if hypothesis == 0:
            return None
        M = self.num_tx
        if self.swerling in (1, 3):
            return complex_normal(rng, batch + (M,), self.mu)
        return complex_normal(rng, batch + (n_ticks, M), self.mu)

    def synthesize(self, k: int, hypothesis: int, h, noise_rng: np.random.Generator, n_ticks: int,
                   batch: tuple = ()) -> np.ndarray:
        """Receiver ``k`` observations ``y_1..y_n``, shape ``batch + (n_ticks,)``."""
        w = complex_normal(noise_rng, batch + (n_ticks,), 0.0, self.noise_var[k])
        if hypothesis == 0 or self.energy == 0:
            return w
        s = self.waveform(np.arange(1, n_ticks + 1)) * self.scale[:, k]  # (n, M)
        if self.swerling in (1, 3):
            sig = np.einsum("nm,...m->...n", s, h)
        else:
            sig = np.sum(s * h, axis=-1)
        return sig + w

    def observe(self, streams: TrialStreams, k: int, n_ticks: int) -> np.ndarray:
        h = self.draw_channels(streams.hypothesis, streams.get(k, "channel_coeff"), n_ticks, k)
        return self.synthesize(k, streams.hypothesis, h, streams.get(k, "noise"), n_ticks)

    # LLR streams --------------------------------------------------------
    def _gram_series(self, k: int, idx: np.ndarray) -> np.ndarray:
        """``G`` at 0-based tick indices ``idx`` (tick ``idx + 1``), shape ``(len(idx), M, M)``."""
        Sd = self.samples_per_waveform
        key = ("gram_period", k)
        if key not in self._cache:
            cs = self.waveforms * self.scale[:, k]
            per = np.einsum("tm,tn->tmn", np.conj(cs), cs) / self.noise_var[k]
            ticks = np.arange(1, Sd + 1)
            per = per[ticks % Sd]
            self._cache[key] = (np.cumsum(per, axis=0), per.sum(axis=0))
        partial, full = self._cache[key]
        n = np.asarray(idx) + 1
        q, r = np.divmod(n, Sd)
        G = q[:, None, None] * full
        has = r > 0
        G[has] += partial[r[has] - 1]
        return G + np.eye(self.num_tx)

    def receiver_llrs(self, y: np.ndarray, k: int, n_evals: int) -> tuple[np.ndarray, np.ndarray]:
        """Detector and exact LLR of receiver ``k`` at its evaluation ticks.

        ``y`` has shape ``batch + (n_evals * stride,)``.
        """
        st = self.stride
        n_ticks = n_evals * st
        idx = np.arange(st - 1, n_ticks, st)
        if self.detector == "recursive":
            yy = y[..., :n_ticks]
            if self.swerling == 2:
                inc = sw2_increment(yy, self.rho2[k], self.noise_var[k])
            else:
                inc = sw4_increment(yy, self.mu_tilde(k, np.arange(1, n_ticks + 1)), self.rho2[k],
                                    self.noise_var[k])
            L = np.cumsum(inc, axis=-1)
            return L, L
        s = self.waveform(np.arange(1, n_ticks + 1))
        c = self.scale[:, k]
        V = np.cumsum(y[..., :n_ticks, None] * np.conj(s) * c, axis=-2)[..., idx, :] / self.noise_var[k]
        G = self._gram_series(k, idx)
        M = self.num_tx
        mu2 = abs(self.mu) ** 2
        quad, logdet = _quad_logdet(np.broadcast_to(G, V.shape + (M,)), V + self.mu)
        exact = quad - M * mu2 - logdet
        if self.detector == "wsprt":
            det = exact
        else:
            det = quad - M * (mu2 + math.log(math.pi))
        return det, exact

    def llr_paths(self, streams: TrialStreams, n_evals: int):
        det = np.empty((self.num_rx, n_evals))
        true = np.empty((self.num_rx, n_evals))
        for k in range(self.num_rx):
            y = self.observe(streams, k, n_evals * self.stride)
            det[k], true[k] = self.receiver_llrs(y, k, n_evals)
        return det, true

    def kl_per_tick(self, hypothesis: int, n_draws: int = 20_000, seed: int = 0) -> np.ndarray:
        """``|E_i[L_stride]| / stride`` per receiver, by batched Monte Carlo."""
        out = np.empty(self.num_rx)
        for k in range(self.num_rx):
            ch = stream(seed, k, hypothesis, 0, 5)
            nz = stream(seed, k, hypothesis, 1, 5)
            h = self.draw_channels(hypothesis, ch, self.stride, k, (n_draws,))
            y = self.synthesize(k, hypothesis, h, nz, self.stride, (n_draws,))
            det, _ = self.receiver_llrs(y, k, 1)
            out[k] = abs(det[..., 0].mean()) / self.stride
        return out


def lr_identity(scenario: RadarScenario, n_draws: int = 100_000, n_evals: int = 1, seed: int = 0,
                exact: bool = False) -> tuple[float, float]:
    """Monte Carlo ``E0[exp(L)]`` of receiver 1 after ``n_evals`` evaluations, with its standard error.

    ``exact=True`` uses the exact marginal LLR instead of the detector statistic.
    """
    nz = stream(seed, 0, 0, 1, 5)
    y = scenario.synthesize(0, 0, None, nz, n_evals * scenario.stride, (n_draws,))
    det, ex = scenario.receiver_llrs(y, 0, n_evals)
    w = np.exp((ex if exact else det)[..., -1])
    return float(w.mean()), float(w.std(ddof=1) / math.sqrt(n_draws))
