"""Experiment configuration: YAML schema, validation and experiment building."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Optional, Union

import yaml

from .codec import ChannelModel, InfeasibleEncodingError
from .fusion import DetectorVariant
from .harness import Experiment, SweepSpec, prepare
from .models import InvalidParameterError, gaussian_network
from .radar import DETECTORS as RADAR_DETECTORS, RadarScenario


class ConfigError(ValueError):
    """Malformed configuration; the message names the key and, when known, its line."""


@dataclass
class ModelConfig:
    kind: str = "gaussian"
    # gaussian
    num_sensors: int = 2
    mean_shift: float = 10 ** 0.25
    sigma: float = 1.0
    # radar
    num_tx: int = 2
    num_rx: int = 2
    snr_db: float = 3.0
    swerling: int = 1
    detector: str = "wsprt"
    waveform_duration: float = 2e-7
    samples_per_waveform: int = 2
    noise_var: float = 1.0
    mu: list = field(default_factory=lambda: [1 / 3, 1 / 3])
    path_loss_eta: float = 2.0
    carrier_frequency: float = 5e6


@dataclass
class EncoderConfig:
    slope: Union[str, float] = "auto"
    theta: Union[str, float] = "auto"
    theta_percentile: float = 99.99
    slope_margin: float = 1.01
    epsilon: float = 1e-6
    calibration_events: int = 100_000


@dataclass
class ChannelConfig:
    kind: str = "ideal"
    delay: float = 0.0
    bound: float = 0.0
    random_bound: float = 0.04


@dataclass
class ThresholdConfig:
    mode: str = "wald"
    alpha: float = 1e-2
    beta: float = 1e-2
    budget: int = 2000
    a: Optional[float] = None
    b: Optional[float] = None
    per_detector: dict = field(default_factory=dict)


@dataclass
class SweepConfig:
    axis: str = "alpha_beta"
    grid: list = field(default_factory=list)
    trials_per_point: Optional[int] = None


@dataclass
class ExperimentConfig:
    trials: int
    model: ModelConfig = field(default_factory=ModelConfig)
    detectors: list = field(default_factory=lambda: ["centralized", "time_encoded"])
    rate: Union[str, float] = "auto"
    delta: Union[str, float] = "auto"
    calibration_hypothesis: Union[int, str] = 1
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    sweep: Optional[SweepConfig] = None
    hypothesis: int = 1
    seed: int = 0
    max_ticks: int = 10_000_000
    workers: int = 1
    output_dir: str = "out"

    def to_dict(self) -> dict:
        """Canonical plain-data form (all defaults filled in)."""
        d = asdict(self)
        if self.sweep is None:
            d.pop("sweep")
        return _canon(d)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)


_BLOCKS = {"model": ModelConfig, "encoder": EncoderConfig, "channel": ChannelConfig,
           "thresholds": ThresholdConfig, "sweep": SweepConfig}


def _canon(x):
    if isinstance(x, dict):
        return {str(k): _canon(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_canon(v) for v in x]
    if isinstance(x, bool) or x is None or isinstance(x, str):
        return x
    if isinstance(x, int):
        return int(x)
    if isinstance(x, float):
        return float(x)
    return x


# ------------------------------------------------------------------ parsing

def _line_map(text: str) -> dict:
    """Map of dotted key paths to 1-based line numbers."""
    lines = {}

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                path = f"{prefix}.{k.value}" if prefix else str(k.value)
                lines[path] = k.start_mark.line + 1
                walk(v, path)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                lines[f"{prefix}[{i}]"] = v.start_mark.line + 1
                walk(v, f"{prefix}[{i}]")

    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return lines
    if root is not None:
        walk(root, "")
    return lines


class _Checker:
    def __init__(self, lines: dict):
        self.lines = lines

    def fail(self, path: str, msg: str):
        line = self.lines.get(path)
        where = f" (line {line})" if line else ""
        raise ConfigError(f"{path}: {msg}{where}")

    def number(self, path, v, *, integer=False, auto=False, positive=False, nonneg=False, optional=False):
        if v is None and optional:
            return None
        if auto and v == "auto":
            return v
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            if isinstance(v, str):
                try:
                    v = float(v)
                except ValueError:
                    self.fail(path, f"expected a number{' or auto' if auto else ''}, got {v!r}")
            else:
                self.fail(path, f"expected a number, got {v!r}")
        if integer:
            if float(v) != int(v):
                self.fail(path, f"expected an integer, got {v!r}")
            v = int(v)
        else:
            v = float(v)
        if not math.isfinite(v):
            self.fail(path, "must be finite")
        if positive and not v > 0:
            self.fail(path, f"must be positive, got {v}")
        if nonneg and v < 0:
            self.fail(path, f"must be non-negative, got {v}")
        return v

    def block(self, path: str, raw, cls):
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            self.fail(path, "expected a mapping")
        names = {f.name for f in fields(cls)}
        for k in raw:
            if k not in names:
                self.fail(f"{path}.{k}", "unknown key")
        return raw


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate YAML text."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1})" if mark else ""
        raise ConfigError(f"invalid YAML{where}: {exc}") from exc
    return config_from_dict(raw or {}, _line_map(text))


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_from_dict(raw: dict, lines: Optional[dict] = None) -> ExperimentConfig:
    ck = _Checker(lines or {})
    if not isinstance(raw, dict):
        ck.fail("<root>", "expected a mapping")
    top = {f.name for f in fields(ExperimentConfig)}
    for k in raw:
        if k not in top:
            ck.fail(str(k), "unknown key")
    if "trials" not in raw:
        raise ConfigError("trials: required key is missing")
    raw = copy.deepcopy(raw)

    m = ck.block("model", raw.get("model"), ModelConfig)
    model = ModelConfig(**m)
    if model.kind not in ("gaussian", "radar"):
        ck.fail("model.kind", f"must be gaussian or radar, got {model.kind!r}")
    for key, kw in (("num_sensors", dict(integer=True, positive=True)), ("mean_shift", {}),
                    ("sigma", dict(positive=True)), ("num_tx", dict(integer=True, positive=True)),
                    ("num_rx", dict(integer=True, positive=True)), ("snr_db", {}),
                    ("swerling", dict(integer=True)), ("waveform_duration", dict(positive=True)),
                    ("samples_per_waveform", dict(integer=True, positive=True)),
                    ("noise_var", dict(positive=True)), ("path_loss_eta", dict(nonneg=True)),
                    ("carrier_frequency", dict(positive=True))):
        setattr(model, key, ck.number(f"model.{key}", getattr(model, key), **kw))
    if model.swerling not in (1, 2, 3, 4):
        ck.fail("model.swerling", f"must be 1, 2, 3 or 4, got {model.swerling}")
    if model.detector not in RADAR_DETECTORS:
        ck.fail("model.detector", f"must be one of {', '.join(RADAR_DETECTORS)}")
    if model.kind == "radar":
        fast = model.swerling in (2, 4)
        if fast != (model.detector == "recursive"):
            ck.fail("model.detector", f"{model.detector} is not available for Swerling {model.swerling}"
                    f" (cases 1/3: wsprt, gslrt, gslrt_orth; cases 2/4: recursive)")
    if isinstance(model.mu, (int, float)):
        model.mu = [float(model.mu), 0.0]
    if not isinstance(model.mu, list) or len(model.mu) != 2:
        ck.fail("model.mu", "expected [real, imag]")
    model.mu = [ck.number("model.mu", v) for v in model.mu]

    dets = raw.get("detectors", ["centralized", "time_encoded"])
    if not isinstance(dets, list) or not dets:
        ck.fail("detectors", "expected a non-empty list")
    canon = []
    for i, d in enumerate(dets):
        try:
            canon.append(DetectorVariant.parse(str(d)).name)
        except InvalidParameterError as exc:
            ck.fail(f"detectors[{i}]", str(exc))
    if len(set(canon)) != len(canon):
        ck.fail("detectors", "duplicate detector")

    enc = EncoderConfig(**ck.block("encoder", raw.get("encoder"), EncoderConfig))
    enc.slope = ck.number("encoder.slope", enc.slope, auto=True, positive=True)
    enc.theta = ck.number("encoder.theta", enc.theta, auto=True, positive=True)
    enc.theta_percentile = ck.number("encoder.theta_percentile", enc.theta_percentile, positive=True)
    if enc.theta_percentile > 100:
        ck.fail("encoder.theta_percentile", "must be at most 100")
    enc.slope_margin = ck.number("encoder.slope_margin", enc.slope_margin, positive=True)
    if enc.slope_margin <= 1:
        ck.fail("encoder.slope_margin", "must exceed 1 so the slope is strictly above its minimum")
    enc.epsilon = ck.number("encoder.epsilon", enc.epsilon, positive=True)
    if enc.epsilon >= 1:
        ck.fail("encoder.epsilon", "must lie in (0, 1)")
    enc.calibration_events = ck.number("encoder.calibration_events", enc.calibration_events, integer=True,
                                       positive=True)

    ch = ChannelConfig(**ck.block("channel", raw.get("channel"), ChannelConfig))
    if ch.kind not in ("ideal", "deterministic", "random"):
        ck.fail("channel.kind", f"must be ideal, deterministic or random, got {ch.kind!r}")
    ch.delay = ck.number("channel.delay", ch.delay, nonneg=True)
    ch.bound = ck.number("channel.bound", ch.bound, nonneg=True)
    ch.random_bound = ck.number("channel.random_bound", ch.random_bound, nonneg=True)
    for key, phi in (("channel.bound", ch.bound / 2 if ch.kind == "random" else 0.0),
                     ("channel.random_bound", ch.random_bound / 2)):
        if 2 * phi + enc.epsilon >= 1:
            ck.fail(key, "delay estimation error bound leaves no room for encoding (offset >= 1/2)")

    th = ThresholdConfig(**ck.block("thresholds", raw.get("thresholds"), ThresholdConfig))
    if th.mode not in ("wald", "calibrate"):
        ck.fail("thresholds.mode", f"must be wald or calibrate, got {th.mode!r}")
    for key in ("alpha", "beta"):
        v = ck.number(f"thresholds.{key}", getattr(th, key))
        if not 0 < v < 0.5:
            ck.fail(f"thresholds.{key}", f"must lie in (0, 1/2), got {v}")
        setattr(th, key, v)
    th.budget = ck.number("thresholds.budget", th.budget, integer=True)
    if th.mode == "calibrate" and th.budget < 1000:
        ck.fail("thresholds.budget", "calibration needs at least 1000 trials per step")
    th.a = ck.number("thresholds.a", th.a, positive=True, optional=True)
    th.b = ck.number("thresholds.b", th.b, positive=True, optional=True)
    if (th.a is None) != (th.b is None):
        ck.fail("thresholds.a" if th.a is None else "thresholds.b", "a and b must be given together")
    if not isinstance(th.per_detector, dict):
        ck.fail("thresholds.per_detector", "expected a mapping of detector to [a, b]")
    pd = {}
    for name, ab in th.per_detector.items():
        path = f"thresholds.per_detector.{name}"
        if not isinstance(ab, list) or len(ab) != 2:
            ck.fail(path, "expected [a, b]")
        try:
            name = DetectorVariant.parse(str(name)).name
        except InvalidParameterError as exc:
            ck.fail(path, str(exc))
        pd[name] = [ck.number(path, v, positive=True) for v in ab]
    th.per_detector = pd

    sweep = None
    if raw.get("sweep") is not None:
        sweep = SweepConfig(**ck.block("sweep", raw["sweep"], SweepConfig))
        if sweep.axis not in ("alpha_beta", "snr", "num_rx", "num_tx"):
            ck.fail("sweep.axis", f"unknown axis {sweep.axis!r}")
        if not isinstance(sweep.grid, list) or not sweep.grid:
            ck.fail("sweep.grid", "expected a non-empty list")
        integer = sweep.axis in ("num_rx", "num_tx")
        sweep.grid = [ck.number(f"sweep.grid[{i}]", v, integer=integer) for i, v in enumerate(sweep.grid)]
        if sweep.axis == "alpha_beta":
            # Grid order is by decreasing error target, i.e. increasing |log alpha|.
            key = [-v for v in sweep.grid]
            if any(not 0 < v < 0.5 for v in sweep.grid):
                ck.fail("sweep.grid", "error targets must lie in (0, 1/2)")
        else:
            key = sweep.grid
        if key != sorted(key) or len(set(key)) != len(key):
            ck.fail("sweep.grid", "grid must be strictly ordered")
        if sweep.axis in ("snr", "num_tx") and model.kind != "radar":
            ck.fail("sweep.axis", f"{sweep.axis} sweeps need a radar model")
        sweep.trials_per_point = ck.number("sweep.trials_per_point", sweep.trials_per_point, integer=True,
                                           positive=True, optional=True)

    cfg = ExperimentConfig(
        trials=ck.number("trials", raw["trials"], integer=True, positive=True),
        model=model, detectors=canon,
        rate=ck.number("rate", raw.get("rate", "auto"), auto=True, positive=True),
        delta=ck.number("delta", raw.get("delta", "auto"), auto=True, nonneg=True),
        calibration_hypothesis=raw.get("calibration_hypothesis", 1),
        encoder=enc, channel=ch, thresholds=th, sweep=sweep,
        hypothesis=ck.number("hypothesis", raw.get("hypothesis", 1), integer=True),
        seed=ck.number("seed", raw.get("seed", 0), integer=True, nonneg=True),
        max_ticks=ck.number("max_ticks", raw.get("max_ticks", 10_000_000), integer=True, positive=True),
        workers=ck.number("workers", raw.get("workers", 1), integer=True, positive=True),
        output_dir=str(raw.get("output_dir", "out")),
    )
    if cfg.hypothesis not in (0, 1):
        ck.fail("hypothesis", "must be 0 or 1")
    if str(cfg.calibration_hypothesis) not in ("0", "1", "max"):
        ck.fail("calibration_hypothesis", "must be 0, 1 or max")
    if cfg.calibration_hypothesis != "max":
        cfg.calibration_hypothesis = int(cfg.calibration_hypothesis)
    return cfg


# ------------------------------------------------------------ experiments

def build_scenario(model: ModelConfig):
    if model.kind == "gaussian":
        return gaussian_network(model.num_sensors, model.mean_shift, model.sigma)
    return RadarScenario(num_tx=model.num_tx, num_rx=model.num_rx, snr_db=model.snr_db, swerling=model.swerling,
                         detector=model.detector, waveform_duration=model.waveform_duration,
                         samples_per_waveform=model.samples_per_waveform, noise_var=model.noise_var,
                         mu=complex(*model.mu), path_loss_eta=model.path_loss_eta,
                         carrier_frequency=model.carrier_frequency)


def with_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    """Copy of ``cfg`` with one sweep axis set to ``value``."""
    c = copy.deepcopy(cfg)
    if axis == "alpha_beta":
        c.thresholds.alpha = c.thresholds.beta = float(value)
        c.thresholds.a = c.thresholds.b = None
        c.thresholds.per_detector = {}
    elif axis == "snr":
        c.model.snr_db = float(value)
    elif axis == "num_rx":
        if c.model.kind == "gaussian":
            c.model.num_sensors = int(value)
        else:
            c.model.num_rx = int(value)
    elif axis == "num_tx":
        c.model.num_tx = int(value)
    else:
        raise ConfigError(f"sweep.axis: unknown axis {axis!r}")
    return c


def build_experiment(cfg: ExperimentConfig) -> Experiment:
    """Calibrate Δ, θ, encoder and thresholds for a configuration."""
    scenario = build_scenario(cfg.model)
    ch = cfg.channel
    channel = ChannelModel(ch.kind, delay=ch.delay, bound=ch.bound)
    th = cfg.thresholds
    try:
        exp = prepare(
            scenario, cfg.detectors, th.alpha, th.beta,
            rate=None if cfg.rate == "auto" else cfg.rate,
            delta=None if cfg.delta == "auto" else cfg.delta,
            calibration_hypothesis=cfg.calibration_hypothesis, channel=channel, random_bound=ch.random_bound,
            theta=None if cfg.encoder.theta == "auto" else cfg.encoder.theta,
            theta_percentile=cfg.encoder.theta_percentile, calibration_n=cfg.encoder.calibration_events,
            slope=None if cfg.encoder.slope == "auto" else cfg.encoder.slope,
            slope_margin=cfg.encoder.slope_margin, epsilon=cfg.encoder.epsilon,
            thresholds=(th.a, th.b) if th.a is not None else None, max_ticks=cfg.max_ticks, seed=cfg.seed)
    except InfeasibleEncodingError as exc:
        raise ConfigError(f"encoder: {exc}") from exc
    exp.thresholds = {k: tuple(v) for k, v in th.per_detector.items()}
    return exp


def sweep_spec(cfg: ExperimentConfig, trials: Optional[int] = None) -> SweepSpec:
    if cfg.sweep is None:
        raise ConfigError("sweep: block is missing")
    sw = cfg.sweep
    n = trials or sw.trials_per_point or cfg.trials
    grid = sw.grid
    if sw.axis == "alpha_beta":
        # SweepSpec wants ascending values; build() maps back.
        grid = sorted(grid)
    return SweepSpec(sw.axis, grid, lambda v: build_experiment(with_axis(cfg, sw.axis, v)), n, cfg.hypothesis,
                     cfg.workers)
