"""Decentralized sequential detection with level-triggered sampling and time-encoded overshoots."""

from .codec import (ChannelModel, DecodeIntegrityError, EncoderParams, InfeasibleEncodingError, Message,
                    decode, encode, min_slope, transmit)
from .fusion import DetectorVariant, FusionState, majority_decision, wald_thresholds
from .harness import (Experiment, SweepSpec, TrialResult, calibrate_delta, calibrate_thresholds,
                      estimate_error_probability, prepare, run_sweep, run_trial, run_trials, simulate_trial)
from .lts import SampleEvent, SamplerState, SequencingError, solve_delta
from .models import (InvalidParameterError, KlNumbers, SensorModel, UnsupportedMethodError,
                     gaussian_network, gaussian_shift_model, kl_numbers)
from .radar import Geometry, MatchedFilterBank, RadarScenario, paper_geometry, reference_geometry

__version__ = "0.1.0"
