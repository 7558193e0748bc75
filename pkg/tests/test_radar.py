import logging
import math
from types import SimpleNamespace

import numpy as np
import pytest

from levelsprt.models import InvalidParameterError
from levelsprt.radar import (Geometry, MatchedFilterBank, RadarScenario, gslrt_orth, llr_sw1_gslrt,
                             llr_sw1_wsprt, llr_sw2, llr_sw3_gslrt, llr_sw3_wsprt, llr_sw4, lr_identity,
                             marginal_llr, reference_geometry, sw2_increment, sw4_increment, waveform_sample)
from levelsprt.rng import TrialStreams, complex_normal


def design(sc, k, n):
    """Signal matrix A[t, m] = sqrt(E/M) d^-eta s^m_t built from the scalar waveform function."""
    Ts = sc.sample_period
    S = sc.waveform_duration
    A = np.empty((n, sc.num_tx), complex)
    for t in range(1, n + 1):
        for m in range(1, sc.num_tx + 1):
            # cyclic envelope; integer arithmetic keeps the phase exact
            tau = (t % sc.samples_per_waveform) * Ts
            A[t - 1, m - 1] = waveform_sample(m, tau, S)
    d = sc.geometry.distances[:, k]
    return A * math.sqrt(sc.energy / sc.num_tx) * d ** (-sc.geometry.path_loss_eta)


def oracle_marginal(y, A, mu, s2):
    """log N_c(y; A mu, s2 I + A A^H) - log N_c(y; 0, s2 I)."""
    n = y.size
    C = s2 * np.eye(n) + A @ A.conj().T
    r = y - A @ np.full(A.shape[1], mu)
    _, logdet = np.linalg.slogdet(C)
    l1 = -np.real(r.conj() @ np.linalg.solve(C, r)) - logdet
    l0 = -np.real(y.conj() @ y) / s2 - n * math.log(s2)
    return l1 - l0


def oracle_gslrt(y, A, mu, s2):
    M = A.shape[1]
    h = np.linalg.solve(A.conj().T @ A / s2 + np.eye(M), A.conj().T @ y / s2 + mu)
    post = -np.sum(np.abs(y - A @ h) ** 2) / s2 - np.sum(np.abs(h - mu) ** 2) - M * math.log(math.pi)
    return post + np.sum(np.abs(y) ** 2) / s2, h


def bank_for(sc, y, k=0):
    return MatchedFilterBank.from_scratch(y, sc.waveform(np.arange(1, y.size + 1)), sc.scale[:, k],
                                          sc.noise_var[k])


def test_reference_geometry():
    g = reference_geometry(2, 2)
    assert g.distances[0, 0] == pytest.approx(math.sqrt(586) + math.sqrt(596), abs=1e-12)
    assert g.distances[0, 0] == pytest.approx(48.6205, abs=1e-4)
    assert g.delays[0, 0] == pytest.approx(g.distances[0, 0] / 299_792.458)
    g40 = reference_geometry(40, 15)
    assert int(np.argmin(g40.distances[:, 14])) + 1 == 20
    with pytest.raises(InvalidParameterError):
        reference_geometry(0, 1)


def test_degenerate_geometry_warns(caplog):
    with caplog.at_level(logging.WARNING):
        g = Geometry([[20, 15, 0]], [[0, 1, 0]], [20, 15, 0])
    assert "coincides" in caplog.text
    assert g.distances[0, 0] == pytest.approx(math.hypot(20, 14))


def test_waveform_sample():
    S = 2e-7
    assert waveform_sample(1, S / 2, S) == pytest.approx(-1 / math.sqrt(S))
    assert waveform_sample(1, S, S) == 0
    assert waveform_sample(1, -1e-9, S) == 0
    s1 = [waveform_sample(1, t * S / 2, S) for t in (1, 2)]
    s2 = [waveform_sample(2, t * S / 2, S) for t in (1, 2)]
    # t = S lies outside the support; the cyclic envelope maps it to 0
    s1[1] = waveform_sample(1, 0.0, S)
    s2[1] = waveform_sample(2, 0.0, S)
    assert abs(sum(a * np.conj(b) for a, b in zip(s1, s2))) < 1e-9 / S
    sc = RadarScenario()
    assert sc.orthogonal


def test_channel_draws():
    sc1 = RadarScenario(swerling=1)
    h = sc1.draw_channels(1, np.random.default_rng(0), 50)
    assert h.shape == (2,)
    assert sc1.draw_channels(0, np.random.default_rng(0), 5) is None
    sc2 = RadarScenario(swerling=2, detector="recursive")
    h = sc2.draw_channels(1, np.random.default_rng(1), 500_000)
    assert h.shape == (500_000, 2)
    assert abs(np.mean(np.abs(h) ** 2) - 1) < 0.005
    sc3 = RadarScenario(swerling=3)
    h = sc3.draw_channels(1, np.random.default_rng(2), 1, batch=(500_000,))
    m = h.mean()
    assert abs(m.real - 1 / 3) < 0.005 and abs(m.imag - 1 / 3) < 0.005


def test_slow_channels_constant_over_ticks():
    sc = RadarScenario(swerling=1, snr_db=60)
    st = TrialStreams(0, 0, 1)
    y = sc.observe(st, 0, 40)
    # with negligible noise the ratio y_t / s_t (single-tx projection) is stable across periods
    A = design(sc, 0, 40)
    h_hat_a = np.linalg.lstsq(A[:20], y[:20], rcond=None)[0]
    h_hat_b = np.linalg.lstsq(A[20:], y[20:], rcond=None)[0]
    np.testing.assert_allclose(h_hat_a, h_hat_b, rtol=1e-3)


def test_observation_power():
    sc = RadarScenario(swerling=2, detector="recursive")
    rng = np.random.default_rng(3)
    y0 = sc.synthesize(0, 0, None, rng, 200_000)
    assert abs(np.mean(np.abs(y0) ** 2) - 1) < 0.01
    h = sc.draw_channels(1, rng, 200_000)
    y1 = sc.synthesize(0, 1, h, rng, 200_000)
    assert np.mean(np.abs(y1) ** 2) == pytest.approx(sc.rho2[0] + 1, rel=0.01)
    assert sc.rho2[0] == pytest.approx((sc.energy / 2) * np.sum(sc.geometry.distances[:, 0] ** -4.0) / 2e-7)


def test_zero_energy():
    sc = RadarScenario(swerling=1, snr_db=-math.inf)
    st = TrialStreams(2, 0, 1)
    y1 = sc.observe(st, 0, 10)
    y0 = sc.synthesize(0, 0, None, st.get(0, "noise"), 10)
    np.testing.assert_array_equal(y0, y1)
    assert llr_sw1_wsprt(bank_for(sc, y1), sc, 5) == 0.0


@pytest.mark.parametrize("swerling", [1, 3])
def test_wsprt_matches_exact_marginal(swerling):
    sc = RadarScenario(swerling=swerling)
    for trial in range(3):
        y = sc.observe(TrialStreams(1, trial, 1), 0, 12)
        for p in (1, 3, 6):
            n = p * sc.samples_per_waveform
            bank = bank_for(sc, y[:n])
            want = oracle_marginal(y[:n], design(sc, 0, n), sc.mu, 1.0)
            got = llr_sw3_wsprt(bank, sc, p) if swerling == 3 else llr_sw1_wsprt(bank, sc, p)
            assert got == pytest.approx(want, abs=1e-9)


def test_wsprt_scalar_formula():
    """Single transmitter: the per-block formula in terms of p / T_s and M / E."""
    sc = RadarScenario(num_tx=1, num_rx=1, swerling=1, snr_db=3)
    y = 0.7 * design(sc, 0, 2)[:, 0] / sc.scale[0, 0] * 1e-3 + np.array([0.1 + 0.2j, -0.3j])
    bank = bank_for(sc, y)
    Ts, E, d = sc.sample_period, sc.energy, sc.geometry.distances[0, 0]
    s = design(sc, 0, 2)[:, 0] / sc.scale[0, 0]
    mf = abs(np.sum(y * np.conj(s))) ** 2
    p = 1
    want = mf / (1.0 * (p / Ts + (1 / E) * 1.0 / d ** -4)) - math.log(E * (p / Ts) * d ** -4 / 1.0 + 1)
    assert llr_sw1_wsprt(bank, sc, p) == pytest.approx(want, rel=1e-12)
    with pytest.raises(InvalidParameterError):
        llr_sw1_wsprt(bank, sc, 0)


def test_sw3_reduces_to_sw1():
    sc = RadarScenario(swerling=3)
    y = sc.observe(TrialStreams(0, 0, 1), 0, 8)
    bank = bank_for(sc, y)
    assert llr_sw3_wsprt(bank, sc, 4, mu=0.0) == llr_sw1_wsprt(bank, sc, 4)
    assert llr_sw3_gslrt(bank, sc, 8, mu=0.0) == llr_sw1_gslrt(bank, sc, 8)


@pytest.mark.parametrize("swerling,n", [(1, 1), (1, 4), (1, 7), (3, 3), (3, 8)])
def test_gslrt_matches_map_definition(swerling, n):
    sc = RadarScenario(swerling=swerling, detector="gslrt")
    y = sc.observe(TrialStreams(5, 1, 1), 0, n)
    A = design(sc, 0, n)
    want, h_map = oracle_gslrt(y, A, sc.mu, 1.0)
    bank = bank_for(sc, y)
    got = llr_sw3_gslrt(bank, sc, n) if swerling == 3 else llr_sw1_gslrt(bank, sc, n)
    assert got == pytest.approx(want, abs=1e-9)

    def post(h):
        return -np.sum(np.abs(y - A @ h) ** 2) - np.sum(np.abs(h - sc.mu) ** 2)

    rng = np.random.default_rng(0)
    for _ in range(10):
        step = 1e-3 * complex_normal(rng, 2)
        assert post(h_map + step) <= post(h_map)


def test_gslrt_scalar_and_orthogonal_forms():
    sc = RadarScenario(num_tx=1, swerling=1, detector="gslrt")
    y = sc.observe(TrialStreams(0, 2, 1), 0, 5)
    bank = bank_for(sc, y)
    assert llr_sw1_gslrt(bank, sc, 5) == pytest.approx(abs(bank.v[0]) ** 2 / (bank.u[0] + 1) - math.log(math.pi))
    sc3 = RadarScenario(num_tx=1, swerling=3, detector="gslrt")
    b3 = bank_for(sc3, y)
    assert llr_sw3_gslrt(b3, sc3, 5) == pytest.approx(
        abs(b3.v[0] + sc3.mu) ** 2 / (b3.u[0] + 1) - (abs(sc3.mu) ** 2 + math.log(math.pi)))
    for swerling in (1, 3):
        sc = RadarScenario(swerling=swerling, detector="gslrt")
        y = sc.observe(TrialStreams(0, 3, 1), 0, 20)
        for t in range(2, 21, 2):
            bank = bank_for(sc, y[:t])
            assert np.max(np.abs(bank.z)) < 1e-12
            assert llr_sw3_gslrt(bank, sc, t) == pytest.approx(gslrt_orth(bank, sc.mu), abs=1e-9)


def test_sw2_increment():
    assert sw2_increment(math.sqrt(2), 1.0, 1.0) == pytest.approx(1 - math.log(2), abs=1e-12)
    assert sw2_increment(0.0, 1.0, 1.0) == pytest.approx(math.log(0.5))
    fake = SimpleNamespace(rho2=[1.0], noise_var=[1.0])
    assert llr_sw2(0.5, 1 + 1j, fake) == pytest.approx(0.5 + 1 - math.log(2))
    sc = RadarScenario(swerling=2, detector="recursive")
    rng = np.random.default_rng(7)
    y0 = sc.synthesize(0, 0, None, rng, 10 ** 6)
    y1 = sc.synthesize(0, 1, sc.draw_channels(1, rng, 10 ** 6), rng, 10 ** 6)
    assert sw2_increment(y1, sc.rho2[0], 1.0).mean() > 0
    assert sw2_increment(y0, sc.rho2[0], 1.0).mean() < 0


def test_sw4_increment():
    sc = RadarScenario(swerling=4, detector="recursive")
    rho2, mt = sc.rho2[0], sc.mu_tilde(0, np.array([1, 2]))
    y = np.array([0.3 - 0.1j, -1.2 + 0.4j])
    np.testing.assert_allclose(sw4_increment(y, 0.0, rho2, 1.0), sw2_increment(y, rho2, 1.0), atol=1e-15)
    at_mean = sw4_increment(mt, mt, rho2, 1.0)
    want = (rho2 * np.abs(mt) ** 2 + np.abs(mt) ** 2) / (rho2 + 1) + math.log(1 / (rho2 + 1))
    np.testing.assert_allclose(at_mean, want, atol=1e-12)
    # exact Gaussian log density ratio as oracle
    g = rho2 + 1
    direct = -np.abs(y - mt) ** 2 / g - math.log(g) + np.abs(y) ** 2
    np.testing.assert_allclose(sw4_increment(y, mt, rho2, 1.0), direct, atol=1e-12)
    assert llr_sw4(0.0, y[1], sc, 2) == pytest.approx(direct[1])
    assert abs(mt[0]) == pytest.approx(abs(sc.mu * design(sc, 0, 1)[0].sum()))


@pytest.mark.parametrize("swerling,detector", [(1, "wsprt"), (2, "recursive"), (3, "wsprt"), (4, "recursive")])
def test_likelihood_ratio_identity(swerling, detector):
    sc = RadarScenario(swerling=swerling, detector=detector)
    blocks = 1 if detector == "wsprt" else 2
    mean, se = lr_identity(sc, 100_000, blocks, seed=11)
    assert abs(mean - 1) <= 3 * se


def test_incremental_equals_from_scratch():
    sc = RadarScenario(num_tx=3, samples_per_waveform=4, swerling=3, detector="gslrt")
    y = sc.observe(TrialStreams(0, 0, 1), 0, 37)
    s = sc.waveform(np.arange(1, 38))
    bank = MatchedFilterBank(sc.scale[:, 0], 1.0)
    for t in range(37):
        bank.update(y[t], s[t])
        ref = MatchedFilterBank.from_scratch(y[: t + 1], s, sc.scale[:, 0], 1.0)
        assert np.max(np.abs(bank.v - ref.v)) < 1e-10
        assert np.max(np.abs(bank.u - ref.u)) < 1e-10
        assert np.max(np.abs(bank.z - ref.z)) < 1e-10
    assert np.all(np.diff([bank.u]) >= 0)
    np.testing.assert_allclose(bank.gram, bank.gram.conj().T)
    assert np.all(np.linalg.eigvalsh(bank.gram) > 0)


def test_vectorised_streams_match_filters():
    for swerling, det in ((3, "gslrt"), (1, "wsprt"), (3, "gslrt_orth"), (4, "recursive")):
        sc = RadarScenario(swerling=swerling, detector=det)
        y = sc.observe(TrialStreams(9, 0, 1), 0, 20)
        L, exact = sc.receiver_llrs(y, 0, 20 // sc.stride)
        t = 20
        bank = bank_for(sc, y)
        if det == "gslrt":
            assert L[-1] == pytest.approx(llr_sw3_gslrt(bank, sc, t), abs=1e-9)
            assert exact[-1] == pytest.approx(marginal_llr(bank, sc.mu), abs=1e-9)
        elif det == "wsprt":
            assert L[-1] == pytest.approx(llr_sw1_wsprt(bank, sc, t // 2), abs=1e-9)
        elif det == "gslrt_orth":
            assert L[-1] == pytest.approx(gslrt_orth(bank, sc.mu), abs=1e-9)
        else:
            want = 0.0
            for i in range(t):
                want = llr_sw4(want, y[i], sc, i + 1)
            assert L[-1] == pytest.approx(want, abs=1e-9)


@pytest.mark.parametrize("swerling,detector", [(1, "wsprt"), (1, "gslrt"), (2, "recursive"), (3, "gslrt_orth"),
                                               (4, "recursive")])
def test_mean_llr_increases_under_h1(swerling, detector):
    sc = RadarScenario(swerling=swerling, detector=detector)
    n = 12 // sc.stride
    paths = np.array([sc.llr_paths(TrialStreams(0, i, 1), n)[0][0] for i in range(1000)])
    m = paths.mean(axis=0)
    assert np.all(np.diff(m) > 0)


def test_detector_validation():
    with pytest.raises(InvalidParameterError):
        RadarScenario(swerling=2, detector="wsprt")
    with pytest.raises(InvalidParameterError):
        RadarScenario(swerling=1, detector="recursive")
    with pytest.raises(InvalidParameterError):
        RadarScenario(swerling=5)
    with pytest.raises(InvalidParameterError):
        RadarScenario(detector="bogus")
    assert RadarScenario(detector="wsprt").stride == 2
    assert RadarScenario(detector="gslrt").stride == 1


def test_non_orthogonal_waveforms_use_full_form(caplog):
    with caplog.at_level(logging.WARNING):
        sc = RadarScenario(num_tx=3, swerling=1, detector="wsprt")
    assert not sc.orthogonal and "not orthogonal" in caplog.text
    y = sc.observe(TrialStreams(0, 0, 1), 0, 6)
    L, _ = sc.receiver_llrs(y, 0, 3)
    assert L[-1] == pytest.approx(oracle_marginal(y, design(sc, 0, 6), 0.0, 1.0), abs=1e-9)


def test_gslrt_floor():
    sc = RadarScenario(swerling=1, detector="gslrt")
    assert sc.llr_floor == pytest.approx(-2 * math.log(math.pi))
    assert RadarScenario().llr_floor == -math.inf
