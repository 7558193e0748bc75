import pytest

from levelsprt import gaussian_network, prepare


@pytest.fixture(scope="session")
def gaussian_exp():
    """Two-sensor Gaussian network at alpha = beta = 1e-2 with every baseline."""
    dets = ["centralized", "time_encoded", "time_encoded_random", "quantized(2)", "quantized(inf)",
            "quantized(50)", "ignore_overshoot", "bit_llr_calibrated", "uniform_sampling(4)",
            "decision_fusion_majority"]
    return prepare(gaussian_network(), dets, 1e-2, 1e-2, seed=3, calibration_n=20_000)
