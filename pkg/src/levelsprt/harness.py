"""Monte Carlo engine: trials, importance sampling, calibration and sweeps."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .codec import ChannelModel, EncoderParams, min_slope
from .fusion import DetectionSetup, DetectorVariant, run_variant, wald_thresholds
from .lts import sample_path, solve_delta
from .models import InvalidParameterError, Scenario
from .rng import TrialStreams

log = logging.getLogger(__name__)

SWEEP_HEADER = ("axis", "detector", "mean_delay_ticks", "ci95_low", "ci95_high", "mean_messages", "censored_rate")


@dataclass
class TrialResult:
    detector: str
    trial: int
    hypothesis_simulated: int
    decision: int
    stop_ticks: int
    stop_time_raw: float
    messages: int
    is_weight: float = 1.0
    exact_llr: float = math.nan
    saturations: int = 0
    decode_integrity_events: int = 0
    censored: bool = False
    transcript: Optional[list] = field(default=None, repr=False)


@dataclass
class Experiment:
    """A scenario plus a fully calibrated detection setup."""

    scenario: Scenario
    detectors: list[DetectorVariant]
    setup: DetectionSetup
    seed: int = 0
    thresholds: dict = field(default_factory=dict)
    initial_evals: int = 32
    info: dict = field(default_factory=dict)

    def setup_for(self, variant: DetectorVariant) -> DetectionSetup:
        ab = self.thresholds.get(variant.name)
        if ab is None:
            return self.setup
        return replace(self.setup, threshold_a=ab[0], threshold_b=ab[1])


# ---------------------------------------------------------------- calibration

def calibration_events(scenario: Scenario, delta: float, hypothesis: int, n_events: int, seed: int,
                       path_evals: int = 256, max_paths: int = 5000):
    """Sample up to ``n_events`` level-triggered events from fresh trial paths.

    Returns ``(bits, overshoots)``. Paths are short so that, for
    non-stationary LLRs, events resemble those of real trials. At most
    ``max_paths`` paths are drawn; a shortfall is logged.
    """
    bits, qs = [], []
    total = 0
    for trial in range(max_paths):
        if total >= n_events:
            break
        det, _ = scenario.llr_paths(TrialStreams(seed, trial, hypothesis), path_evals)
        for k in range(scenario.num_sensors):
            _, b, q, _ = sample_path(det[k], delta, scenario.stride, k)
            bits.append(b)
            qs.append(q)
            total += b.size
    if total < n_events:
        log.warning("only %d of %d calibration events under H%d in %d paths", total, n_events, hypothesis,
                    max_paths)
    if not bits:
        return np.zeros(0, dtype=int), np.zeros(0)
    return np.concatenate(bits)[:n_events], np.concatenate(qs)[:n_events]


def calibrate_delta(scenario: Scenario, rate: float, hypothesis="1", n_draws: int = 20_000, seed: int = 0) -> float:
    """Level-triggering threshold for ``rate`` messages per tick from the network KL sum.

    ``hypothesis`` is 0, 1 or ``"max"`` (the larger of the two KL sums).
    """
    if str(hypothesis) == "max":
        kl = max(scenario.kl_per_tick(h, n_draws, seed).sum() for h in (0, 1))
    else:
        kl = scenario.kl_per_tick(int(hypothesis), n_draws, seed).sum()
    return solve_delta(float(kl), rate)


def measure_message_rate(scenario: Scenario, delta: float, hypothesis: int, n_ticks: int, seed: int = 0) -> float:
    """Long-run messages per tick of the whole network on one long path."""
    n = max(1, n_ticks // scenario.stride)
    det, _ = scenario.llr_paths(TrialStreams(seed, 0, hypothesis), n)
    count = sum(sample_path(det[k], delta, scenario.stride)[0].size for k in range(scenario.num_sensors))
    return count / (n * scenario.stride)


def calibrate_delta_empirical(scenario: Scenario, rate: float, hypothesis: int = 1, n_ticks: int = 100_000,
                              seed: int = 0, iters: int = 40) -> float:
    """Threshold whose simulated message rate matches ``rate`` (accounts for overshoot)."""
    lo, hi = 0.0, calibrate_delta(scenario, rate, hypothesis, seed=seed)
    while measure_message_rate(scenario, hi, hypothesis, n_ticks, seed) > rate:
        lo, hi = hi, 2 * hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if measure_message_rate(scenario, mid, hypothesis, n_ticks, seed) > rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def bit_llr_constants(bits0: np.ndarray, bits1: np.ndarray) -> tuple[float, float]:
    """LLR of a received sign bit, ``log P1(b)/P0(b)`` for ``b = +1`` and ``b = -1``."""
    out = []
    for b in (1, -1):
        p1 = max(np.mean(bits1 == b), 0.5 / bits1.size)
        p0 = max(np.mean(bits0 == b), 0.5 / bits0.size)
        out.append(math.log(p1 / p0))
    return out[0], out[1]


def prepare(scenario: Scenario, detectors: Sequence, alpha: float = 1e-2, beta: float = 1e-2, *,
            rate: Optional[float] = None, delta: Optional[float] = None, calibration_hypothesis="1",
            channel: Optional[ChannelModel] = None, random_bound: float = 0.04, theta: Optional[float] = None,
            theta_percentile: float = 99.99, calibration_n: int = 100_000, slope: Optional[float] = None,
            slope_margin: float = 1.01, epsilon: float = 1e-6, thresholds: Optional[tuple[float, float]] = None,
            max_ticks: int = 10_000_000, seed: int = 0, kl_draws: int = 20_000) -> Experiment:
    """Calibrate everything the detectors need and return an :class:`Experiment`.

    ``rate`` defaults to ``K/4`` messages per tick. The overshoot bound
    ``theta`` defaults to the given percentile of calibration overshoots.
    """
    detectors = [d if isinstance(d, DetectorVariant) else DetectorVariant.parse(d) for d in detectors]
    K = scenario.num_sensors
    rate = K / 4 if rate is None else rate
    if delta is None:
        delta = calibrate_delta(scenario, rate, calibration_hypothesis, kl_draws, seed)
    a, b = thresholds if thresholds is not None else wald_thresholds(alpha, beta)
    floor = getattr(scenario, "llr_floor", -math.inf) * K
    if floor > -b:
        log.warning("summed local statistics never fall below %.3f, so the lower threshold %.3f "
                    "cannot be reached; H0 is never declared", floor, -b)
    channel = channel or ChannelModel()
    info = {"rate": rate, "delta": delta}
    kinds = {d.kind for d in detectors}
    needs_events = kinds & {"time_encoded", "time_encoded_random", "quantized", "bit_llr_calibrated"}
    bit_llr = None
    if needs_events and delta > 0:
        n_each = calibration_n if "bit_llr_calibrated" in kinds else calibration_n // 2
        b0, q0 = calibration_events(scenario, delta, 0, n_each, seed + 1)
        b1, q1 = calibration_events(scenario, delta, 1, n_each, seed + 2)
        if theta is None:
            pooled = np.concatenate([q0, q1])
            if pooled.size == 0:
                raise InvalidParameterError(f"no level-triggered events at delta={delta:g}; give theta explicitly")
            theta = float(np.percentile(pooled, theta_percentile))
        if "bit_llr_calibrated" in kinds:
            bit_llr = bit_llr_constants(b0, b1)
            info["bit_llr"] = list(bit_llr)
    if theta is not None:
        theta = max(theta, 1e-12)
        info["theta"] = theta
    encoder = random_encoder = random_channel = None
    if theta is not None:
        phi_hat = channel.phi_hat
        r = slope if slope is not None else slope_margin * min_slope(theta, phi_hat)
        encoder = EncoderParams(r, phi_hat, epsilon)
        random_channel = ChannelModel("random", bound=random_bound)
        rr = slope_margin * min_slope(theta, random_channel.phi_hat)
        random_encoder = EncoderParams(rr, random_channel.phi_hat, epsilon)
        info.update(slope=r, random_slope=rr, random_bound=random_bound)
    setup = DetectionSetup(delta=delta, threshold_a=a, threshold_b=b, encoder=encoder, channel=channel,
                           random_encoder=random_encoder, random_channel=random_channel, theta=theta,
                           bit_llr=bit_llr, local_thresholds=wald_thresholds(alpha, beta) if thresholds is None
                           else (a, b), max_ticks=max_ticks)
    return Experiment(scenario, detectors, setup, seed=seed, info=info)


# --------------------------------------------------------------------- trials

def simulate_trial(exp: Experiment, hypothesis: int, trial: int, variants: Optional[Sequence] = None,
                   keep_transcript: bool = False) -> dict[str, TrialResult]:
    """Run several detectors on the same observation path (common random numbers).

    The path is regenerated with a doubled horizon until every detector
    stops or ``max_ticks`` is reached; random streams are prefix-consistent
    so regeneration does not alter earlier draws.
    """
    variants = exp.detectors if variants is None else _variants(variants)
    sc = exp.scenario
    stride = sc.stride
    streams = TrialStreams(exp.seed, trial, hypothesis)
    max_evals = max(1, exp.setup.max_ticks // stride)
    n = min(exp.initial_evals, max_evals)
    pending = list(variants)
    results: dict[str, TrialResult] = {}
    sign = -1.0 if hypothesis == 1 else 1.0
    while True:
        det, true = sc.llr_paths(streams, n)
        finite = np.isfinite(true[0])
        for v in list(pending):
            rngs = [streams.get(k, "channel_delay") for k in range(sc.num_sensors)]
            out = run_variant(v, det, stride, exp.setup_for(v), rngs, keep_transcript)
            if out is None:
                continue
            st = math.ceil(out.stop_time_raw)
            j0 = max(0, -(-st // stride) - 1)
            cand = np.flatnonzero(finite[j0:])
            if cand.size == 0:
                continue
            L = float(true[:, j0 + cand[0]].sum())
            results[v.name] = TrialResult(v.name, trial, hypothesis, out.decision, st, out.stop_time_raw,
                                          out.messages, math.exp(sign * L) if abs(L) < 700 else
                                          (0.0 if sign * L < 0 else math.inf), L, out.saturations,
                                          out.decode_integrity_events, False, out.processed)
            pending.remove(v)
        if not pending:
            break
        if n >= max_evals:
            for v in pending:
                results[v.name] = TrialResult(v.name, trial, hypothesis, -1, exp.setup.max_ticks,
                                              float(exp.setup.max_ticks), 0, 0.0, math.nan, censored=True)
            break
        n = min(2 * n, max_evals)
    return {v.name: results[v.name] for v in variants}


def _variants(items) -> list[DetectorVariant]:
    return [v if isinstance(v, DetectorVariant) else DetectorVariant.parse(v) for v in items]


def run_trial(exp: Experiment, hypothesis: int, variant, seed: int) -> TrialResult:
    """Single detector, single trial; ``seed`` selects the trial stream."""
    v = variant if isinstance(variant, DetectorVariant) else DetectorVariant.parse(variant)
    return simulate_trial(exp, hypothesis, seed, [v])[v.name]


def run_trials(exp: Experiment, hypothesis: int, n_trials: int, variants=None, start: int = 0,
               workers: int = 1) -> dict[str, list[TrialResult]]:
    """Trials ``start .. start + n_trials - 1``; results ordered by trial index."""
    variants = exp.detectors if variants is None else _variants(variants)
    idx = range(start, start + n_trials)
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_trial_job, [(exp, hypothesis, i, variants) for i in idx], chunksize=64))
    else:
        rows = [simulate_trial(exp, hypothesis, i, variants) for i in idx]
    return {v.name: [r[v.name] for r in rows] for v in variants}


def _trial_job(args):
    return simulate_trial(*args)


# ----------------------------------------------------------- error estimation

@dataclass
class ErrorEstimate:
    estimate: float
    std_error: float
    events: int
    upper: float

    def __iter__(self):
        return iter((self.estimate, self.std_error))


def error_from_trials(trials: Sequence[TrialResult], target_error: str, method: str = "importance") -> ErrorEstimate:
    """Error probability from trials already simulated.

    ``importance``: trials simulated under the *other* hypothesis, weighted
    by the exact likelihood ratio at the stopping tick.
    ``direct``: trials simulated under the hypothesis whose error is wanted.
    """
    wrong = 1 if target_error == "false_alarm" else 0
    ok = [t for t in trials if not t.censored]
    n = len(trials)
    if method == "importance":
        vals = np.array([t.is_weight if t.decision == wrong else 0.0 for t in ok] + [0.0] * (n - len(ok)))
    else:
        vals = np.array([1.0 if t.decision == wrong else 0.0 for t in ok] + [0.0] * (n - len(ok)))
    events = int(np.count_nonzero(vals))
    est = float(vals.mean()) if n else math.nan
    se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    if events:
        upper = est + 3 * se
    else:
        # rule of three on the event count, scaled by the largest weight an event could carry
        w = [t.is_weight for t in ok if math.isfinite(t.is_weight)] if method == "importance" else []
        upper = 3.0 / max(n, 1) * (max(w) if w else 1.0)
    return ErrorEstimate(est, se, events, upper)


def estimate_error_probability(exp: Experiment, variant, target_error: str, n_trials: int, seed: int = 0,
                               method: str = "importance") -> ErrorEstimate:
    """Estimate ``P0(decide 1)`` (``false_alarm``) or ``P1(decide 0)`` (``miss``)."""
    if n_trials < 1:
        raise InvalidParameterError("n_trials must be >= 1")
    if target_error not in ("false_alarm", "miss"):
        raise InvalidParameterError(f"unknown error type {target_error!r}")
    v = variant if isinstance(variant, DetectorVariant) else DetectorVariant.parse(variant)
    null = 0 if target_error == "false_alarm" else 1
    sim_h = 1 - null if method == "importance" else null
    e = replace(exp, seed=seed)
    trials = run_trials(e, sim_h, n_trials, [v])[v.name]
    return error_from_trials(trials, target_error, method)


@dataclass
class CalibrationResult:
    a: float
    b: float
    alpha_hat: float
    beta_hat: float
    alpha_se: float
    beta_se: float
    iterations: int
    converged: bool


def calibrate_thresholds(exp: Experiment, variant, alpha: float, beta: float, budget: int = 2000,
                         seed: int = 0, max_iter: int = 40) -> CalibrationResult:
    """Adjust ``(a, b)`` from the Wald values until both errors land in ``[0.5, 1] x`` target.

    Error rates are estimated by importance sampling with the same trial
    streams at every step, so estimates are a deterministic function of
    the thresholds. Moves are log-ratio steps inside a shrinking bracket;
    an inconsistent bracket (noise) doubles the trial count.
    """
    if budget < 1000:
        raise InvalidParameterError("budget must be at least 1000 trials per step")
    v = variant if isinstance(variant, DetectorVariant) else DetectorVariant.parse(variant)
    a, b = wald_thresholds(alpha, beta)
    brackets = {"a": [0.0, math.inf], "b": [0.0, math.inf]}
    n = budget
    for it in range(1, max_iter + 1):
        e = replace(exp, seed=seed, thresholds={**exp.thresholds, v.name: (a, b)})
        fa = error_from_trials(run_trials(e, 1, n, [v])[v.name], "false_alarm")
        mi = error_from_trials(run_trials(e, 0, n, [v])[v.name], "miss")
        ok_a = 0.5 * alpha <= fa.estimate <= alpha
        ok_b = 0.5 * beta <= mi.estimate <= beta
        if ok_a and ok_b:
            return CalibrationResult(a, b, fa.estimate, mi.estimate, fa.std_error, mi.std_error, it, True)
        new = {}
        for key, x, est, target, good in (("a", a, fa.estimate, alpha, ok_a), ("b", b, mi.estimate, beta, ok_b)):
            lo, hi = brackets[key]
            if good:
                new[key] = x
                continue
            if est > target:
                lo = max(lo, x)
            else:
                hi = min(hi, x)
            if lo >= hi:
                n *= 2
                lo, hi = 0.0, math.inf
            brackets[key] = [lo, hi]
            step = math.log(est / (0.75 * target)) if est > 0 else -1.0
            cand = x + step
            if not lo < cand < hi:
                cand = 0.5 * (lo + hi) if math.isfinite(hi) else max(lo + 1.0, cand)
            new[key] = cand
        a, b = new["a"], new["b"]
    return CalibrationResult(a, b, fa.estimate, mi.estimate, fa.std_error, mi.std_error, max_iter, False)


# --------------------------------------------------------------------- sweeps

@dataclass
class SweepSpec:
    """One experiment axis.

    ``build(value)`` returns the :class:`Experiment` for a grid value.
    """

    axis: str
    grid: list
    build: object
    trials_per_point: int = 10_000
    hypothesis: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.axis not in ("alpha_beta", "snr", "num_rx", "num_tx"):
            raise InvalidParameterError(f"unknown sweep axis {self.axis!r}")
        if not self.grid:
            raise InvalidParameterError("sweep grid is empty")
        if list(self.grid) != sorted(self.grid):
            raise InvalidParameterError("sweep grid must be sorted")
        if self.trials_per_point < 1:
            raise InvalidParameterError("trials_per_point must be >= 1")


@dataclass
class SweepRow:
    axis: float
    detector: str
    mean_delay_ticks: float
    ci95_low: float
    ci95_high: float
    mean_messages: float
    censored_rate: float

    def as_tuple(self):
        return tuple(getattr(self, k) for k in SWEEP_HEADER)


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list[SweepRow]
    trials: dict  # (axis value, detector) -> list[TrialResult]
    experiments: dict

    def delays(self, value, detector) -> np.ndarray:
        return np.array([t.stop_ticks for t in self.trials[(value, detector)]], dtype=float)

    def row(self, value, detector) -> SweepRow:
        for r in self.rows:
            if r.axis == value and r.detector == detector:
                return r
        raise KeyError((value, detector))

    def to_csv(self) -> str:
        return rows_to_csv(self.rows)


def summarize(value, detector: str, trials: Sequence[TrialResult]) -> SweepRow:
    done = [t for t in trials if not t.censored]
    cens = 1.0 - len(done) / len(trials)
    if not done:
        return SweepRow(value, detector, math.nan, math.nan, math.nan, math.nan, cens)
    d = np.array([t.stop_ticks for t in done], dtype=float)
    m = float(d.mean())
    half = 1.96 * float(d.std(ddof=1)) / math.sqrt(d.size) if d.size > 1 else math.inf
    msgs = float(np.mean([t.messages for t in done]))
    return SweepRow(value, detector, m, m - half, m + half, msgs, cens)


def run_sweep(spec: SweepSpec) -> SweepResult:
    """Aggregate delay rows over the grid; detectors share trials at each point."""
    rows, store, exps = [], {}, {}
    for value in spec.grid:
        exp = spec.build(value)
        exps[value] = exp
        res = run_trials(exp, spec.hypothesis, spec.trials_per_point, workers=spec.workers)
        for v in exp.detectors:
            store[(value, v.name)] = res[v.name]
            row = summarize(value, v.name, res[v.name])
            if row.censored_rate == 1.0:
                log.warning("sweep point %s=%s fully censored for %s", spec.axis, value, v.name)
            rows.append(row)
    return SweepResult(spec, rows, store, exps)


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def rows_to_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        w.writerow([_fmt(x) for x in r.as_tuple()])
    return buf.getvalue()


TRIAL_HEADER = ("trial", "detector", "hypothesis", "decision", "stop_ticks", "stop_time_raw", "messages",
                "is_weight", "exact_llr", "saturations", "decode_integrity_events", "censored")


def trials_to_csv(trials: Iterable[TrialResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRIAL_HEADER)
    for t in trials:
        w.writerow([t.trial, t.detector, t.hypothesis_simulated, t.decision, t.stop_ticks, _fmt(t.stop_time_raw),
                    t.messages, _fmt(t.is_weight), _fmt(t.exact_llr), t.saturations, t.decode_integrity_events,
                    int(t.censored)])
    return buf.getvalue()


# ------------------------------------------------------------------ analysis

def paired_difference(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Mean and standard error of ``x - y`` over paired trials."""
    d = np.asarray(x, float) - np.asarray(y, float)
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size))


def fit_slope(x: Sequence[float], y: Sequence[float], se: Sequence[float]) -> tuple[float, float]:
    """Weighted least-squares slope of ``y`` on ``x`` and its standard error."""
    x, y, se = (np.asarray(v, float) for v in (x, y, se))
    w = 1.0 / np.maximum(se, 1e-12) ** 2
    xm = np.sum(w * x) / w.sum()
    ym = np.sum(w * y) / w.sum()
    sxx = np.sum(w * (x - xm) ** 2)
    slope = np.sum(w * (x - xm) * (y - ym)) / sxx
    return float(slope), float(math.sqrt(1.0 / sxx))
