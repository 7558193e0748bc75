import math

import numpy as np
import pytest

from levelsprt.fusion import DetectorVariant, majority_decision
from levelsprt.harness import (SWEEP_HEADER, SweepSpec, calibrate_delta, calibrate_delta_empirical,
                               calibrate_thresholds, error_from_trials, estimate_error_probability, fit_slope,
                               measure_message_rate, paired_difference, prepare, replace, run_sweep, run_trials,
                               simulate_trial, summarize, TrialResult)
from levelsprt.lts import solve_delta
from levelsprt.models import InvalidParameterError, gaussian_network
from levelsprt.radar import RadarScenario
from levelsprt.rng import TrialStreams


def test_importance_sampling_agrees_with_direct(gaussian_exp):
    direct = estimate_error_probability(gaussian_exp, "centralized", "false_alarm", 20_000, seed=21, method="direct")
    weighted = estimate_error_probability(gaussian_exp, "centralized", "false_alarm", 20_000, seed=22)
    assert direct.events > 20 and weighted.events > 20
    assert abs(direct.estimate - weighted.estimate) < 3 * math.hypot(direct.std_error, weighted.std_error)
    assert weighted.std_error < direct.std_error


def test_wald_bound_and_symmetry(gaussian_exp):
    fa = estimate_error_probability(gaussian_exp, "centralized", "false_alarm", 5000, seed=5)
    mi = estimate_error_probability(gaussian_exp, "centralized", "miss", 5000, seed=6)
    assert fa.estimate <= 1e-2 / (1 - 1e-2)
    assert abs(fa.estimate - mi.estimate) < 3 * math.hypot(fa.std_error, mi.std_error)


def test_wald_bound_at_small_alpha():
    exp = prepare(gaussian_network(), ["centralized"], 1e-4, 1e-4, seed=0)
    fa = estimate_error_probability(exp, "centralized", "false_alarm", 5000, seed=8)
    assert fa.events > 0
    assert fa.estimate <= 1e-4 + 3 * fa.std_error


def test_zero_events_upper_bound_uses_weights():
    # simulated under H1, none decided 1: no false-alarm events
    trials = [TrialResult("centralized", i, 1, 0, 3, 3.0, 6, w) for i, w in enumerate((1e-3, 4e-3, 2e-3))]
    est = error_from_trials(trials, "false_alarm")
    assert est.events == 0 and est.estimate == 0
    assert est.upper == pytest.approx(3 / 3 * 4e-3)
    assert error_from_trials(trials, "false_alarm", method="direct").upper == pytest.approx(1.0)


def test_estimate_errors():
    exp = prepare(gaussian_network(), ["centralized"], seed=0)
    with pytest.raises(InvalidParameterError):
        estimate_error_probability(exp, "centralized", "false_alarm", 0)
    with pytest.raises(InvalidParameterError):
        estimate_error_probability(exp, "centralized", "bogus", 10)


def test_no_errors_gives_rule_of_three():
    exp = prepare(gaussian_network(), ["centralized"], 1e-8, 1e-8, seed=0)
    est = estimate_error_probability(exp, "centralized", "false_alarm", 300, seed=1, method="direct")
    assert est.events == 0 and est.estimate == 0 and est.upper == pytest.approx(0.01)


def test_threshold_monotonicity_under_common_numbers():
    exp = prepare(gaussian_network(), ["centralized"], seed=0)
    prev = math.inf
    for a in (1.0, 2.0, 3.0, 4.0, 5.0):
        e = replace(exp, seed=4, thresholds={"centralized": (a, 4.6)})
        fa = error_from_trials(run_trials(e, 1, 3000)["centralized"], "false_alarm").estimate
        assert fa <= prev
        prev = fa


def test_calibrate_thresholds_no_op():
    # small increments: Wald's approximation is nearly exact and already on target
    exp = prepare(gaussian_network(2, 0.3), ["centralized"], seed=0)
    res = calibrate_thresholds(exp, "centralized", 1e-2, 1e-2, budget=1000, seed=9)
    assert res.converged and res.iterations == 1
    assert (res.a, res.b) == (math.log(99), math.log(99))


def test_calibrated_a_grows_as_alpha_halves():
    exp = prepare(gaussian_network(), ["centralized"], seed=0)
    r1 = calibrate_thresholds(exp, "centralized", 1e-2, 1e-2, budget=2000, seed=9)
    r2 = calibrate_thresholds(exp, "centralized", 5e-3, 1e-2, budget=2000, seed=9)
    assert r1.converged and r2.converged
    assert r2.a > r1.a


def test_calibrate_thresholds_hits_targets():
    exp = prepare(gaussian_network(), ["centralized"], seed=0)
    res = calibrate_thresholds(exp, "centralized", 1e-2, 1e-2, budget=2000, seed=9)
    assert res.converged
    assert 0.5e-2 <= res.alpha_hat <= 1e-2 and 0.5e-2 <= res.beta_hat <= 1e-2
    # Wald thresholds are conservative, so calibration loosens them
    assert res.a < math.log(99) and res.b < math.log(99)
    with pytest.raises(InvalidParameterError):
        calibrate_thresholds(exp, "centralized", 1e-2, 1e-2, budget=10)


def test_reproducible_and_worker_independent(gaussian_exp):
    dets = ["centralized", "time_encoded", "quantized(2)"]
    r1 = run_trials(gaussian_exp, 1, 40, dets)
    r2 = run_trials(gaussian_exp, 1, 40, dets)
    r3 = run_trials(gaussian_exp, 1, 40, dets, workers=2)
    assert r1 == r2 == r3
    part = run_trials(gaussian_exp, 1, 20, dets, start=20)
    assert part["time_encoded"] == r1["time_encoded"][20:]
    single = simulate_trial(gaussian_exp, 1, 7, ["time_encoded"])["time_encoded"]
    assert single == r1["time_encoded"][7]


def test_common_random_numbers(gaussian_exp):
    res = run_trials(gaussian_exp, 1, 500, ["centralized", "time_encoded", "quantized(2)", "ignore_overshoot"])
    c = np.array([t.stop_ticks for t in res["centralized"]])
    for name in ("time_encoded", "quantized(2)", "ignore_overshoot"):
        d = np.array([t.stop_ticks for t in res[name]])
        assert np.mean(c <= d) >= 0.95


def test_censoring():
    exp = prepare(gaussian_network(), ["centralized", "time_encoded"], 1e-12, 1e-12, max_ticks=3, seed=0,
                  calibration_n=2000)
    res = run_trials(exp, 1, 50)
    cens = [t for t in res["time_encoded"] if t.censored]
    assert cens and all(t.decision == -1 and t.stop_ticks == 3 for t in cens)
    row = summarize(0, "time_encoded", res["time_encoded"])
    assert row.censored_rate == pytest.approx(len(cens) / 50)
    err = error_from_trials(res["time_encoded"], "miss")
    assert err.estimate >= 0


def test_sweep_rows_and_csv():
    def build(ab):
        return prepare(gaussian_network(), ["centralized", "time_encoded"], ab, ab, seed=1, calibration_n=2000)

    spec = SweepSpec("alpha_beta", [1e-3, 1e-2], build, trials_per_point=30)
    res = run_sweep(spec)
    lines = res.to_csv().splitlines()
    assert lines[0] == ",".join(SWEEP_HEADER)
    assert len(lines) == 1 + 4
    r = res.row(1e-3, "centralized")
    assert r.ci95_low <= r.mean_delay_ticks <= r.ci95_high
    assert res.delays(1e-3, "centralized").mean() == pytest.approx(r.mean_delay_ticks)
    assert res.row(1e-3, "centralized").mean_delay_ticks >= res.row(1e-2, "centralized").mean_delay_ticks
    with pytest.raises(InvalidParameterError):
        SweepSpec("alpha_beta", [1e-2, 1e-3], build)
    with pytest.raises(InvalidParameterError):
        SweepSpec("temperature", [1], build)


def test_sprt_delay_sanity(gaussian_exp):
    res = run_trials(gaussian_exp, 1, 2000, ["centralized"])["centralized"]
    mean = np.mean([t.stop_ticks for t in res])
    hits = np.mean([t.decision == 1 for t in res])
    assert hits >= 1 - 1e-2 - 3 * math.sqrt(1e-2 * 0.99 / len(res))
    I1 = gaussian_network().kl_per_tick(1).sum()
    a = b = math.log(99)
    wald = (0.99 * a - 0.01 * b) / I1
    # overshoot and the integer clock only add delay, by at most one tick plus one increment
    assert wald <= mean <= wald + 2.5


def test_tiny_delta_recovers_centralized():
    exp = prepare(gaussian_network(), ["centralized", "time_encoded"], delta=1e-9, seed=2, calibration_n=4000)
    res = run_trials(exp, 1, 200)
    agree = 0
    for c, t in zip(res["centralized"], res["time_encoded"]):
        agree += c.decision == t.decision
        # every sample is sent; tick-t messages arrive inside (t, t + 1)
        assert t.messages >= 2 * (t.stop_ticks - 2) + 1
        assert t.stop_ticks <= c.stop_ticks + 1
    assert agree >= 190


def test_decision_fusion_matches_oracle(gaussian_exp):
    sc = gaussian_exp.scenario
    a = b = math.log(99)
    res = run_trials(gaussian_exp, 1, 100, ["decision_fusion_majority"])["decision_fusion_majority"]
    for t in res:
        det, _ = sc.llr_paths(TrialStreams(gaussian_exp.seed, t.trial, 1), 400)
        local = []
        for k in range(sc.num_sensors):
            hit = np.flatnonzero((det[k] >= a) | (det[k] <= -b))[0]
            local.append((hit + 1, int(det[k, hit] >= a)))
        # with two sensors the fusion rule needs both votes unless they agree on H0 early
        times = sorted(local)
        decision = majority_decision([d for _, d in local])
        stop = times[-1][0]
        if times[0][1] == 0:
            stop = times[0][0] if decision == 0 and sum(d == 0 for _, d in local) >= 1 else stop
        assert t.decision == decision
        assert t.stop_ticks == stop


def test_calibrate_delta_matches_solver():
    sc = gaussian_network()
    assert calibrate_delta(sc, 0.5, 1) == pytest.approx(solve_delta(2 * 10 ** 0.5 / 2, 0.5), rel=1e-9)
    assert calibrate_delta(sc, 0.5, "max") == calibrate_delta(sc, 0.5, 0)


def test_empirical_delta_hits_rate():
    sc = gaussian_network()
    d = calibrate_delta_empirical(sc, 0.5, n_ticks=20_000, iters=20)
    assert measure_message_rate(sc, d, 1, 20_000) == pytest.approx(0.5, abs=0.01)
    assert d < calibrate_delta(sc, 0.5, 1)


def test_fit_slope_and_paired_difference():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    y = 2.5 * x - 1
    s, se = fit_slope(x, y, np.ones(4))
    assert s == pytest.approx(2.5) and se == pytest.approx(1 / math.sqrt(5))
    w = np.array([1.0, 2.0, 1.0, 0.5])
    y2 = y + np.array([0.1, -0.2, 0.05, 0.3])
    want = np.polyfit(x, y2, 1, w=1 / w)[0]
    assert fit_slope(x, y2, w)[0] == pytest.approx(want)
    m, se = paired_difference([3, 4, 5], [1, 1, 1])
    assert m == 3 and se == pytest.approx(1 / math.sqrt(3))


def test_variant_names_round_trip(gaussian_exp):
    for v in gaussian_exp.detectors:
        assert DetectorVariant.parse(v.name) == v


def test_transmitter_sweep_is_flat():
    # with as many samples per waveform as transmitters the waveforms stay orthogonal
    def build(m):
        return prepare(RadarScenario(num_tx=m, samples_per_waveform=10), ["centralized"], 1e-3, 1e-3, seed=1)

    res = run_sweep(SweepSpec("num_tx", list(range(2, 11)), build, trials_per_point=1000))
    d = [r.mean_delay_ticks for r in res.rows]
    assert (max(d) - min(d)) / max(d) < 0.25
