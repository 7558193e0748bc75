"""Command-line front end.

Subcommands ``run``, ``sweep``, ``calibrate-delta`` and
``calibrate-thresholds`` read a YAML experiment configuration and write
CSV tables plus a YAML summary into the output directory.
"""

from __future__ import annotations

import argparse
import copy
import logging
import math
import os
import sys
import tempfile
from typing import Optional

import numpy as np
import yaml

from .config import ConfigError, ExperimentConfig, build_experiment, load_config, sweep_spec, with_axis
from .fusion import DetectorVariant
from .harness import (calibrate_delta, calibrate_thresholds, error_from_trials, run_sweep, run_trials,
                      summarize, trials_to_csv)
from .models import InvalidParameterError

log = logging.getLogger("levelsprt")


def atomic_write(path: str, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and an atomic rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def _dump(d: dict) -> str:
    return yaml.safe_dump(_plain(d), sort_keys=False, default_flow_style=False)


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    cfg = copy.deepcopy(cfg)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.trials is not None:
        cfg.trials = args.trials
        if cfg.sweep is not None:
            cfg.sweep.trials_per_point = args.trials
    if args.out_dir is not None:
        cfg.output_dir = args.out_dir
    return cfg


def _experiment_info(exp) -> dict:
    s = exp.setup
    out = {"scenario": exp.scenario.describe() or {"model": "gaussian", "num_sensors": exp.scenario.num_sensors},
           "delta": s.delta, "threshold_a": s.threshold_a, "threshold_b": s.threshold_b}
    out.update({k: v for k, v in exp.info.items() if k not in ("delta",)})
    if exp.thresholds:
        out["per_detector_thresholds"] = {k: list(v) for k, v in exp.thresholds.items()}
    return out


def _calibrate_all(cfg: ExperimentConfig, exp, quiet: bool) -> dict:
    """Empirical threshold calibration for every detector; returns achieved errors."""
    th = cfg.thresholds
    achieved = {}
    for v in exp.detectors:
        if v.kind == "decision_fusion_majority":
            continue
        res = calibrate_thresholds(exp, v, th.alpha, th.beta, th.budget, seed=cfg.seed + 7919)
        exp.thresholds[v.name] = (res.a, res.b)
        achieved[v.name] = {"a": res.a, "b": res.b, "alpha_hat": res.alpha_hat, "beta_hat": res.beta_hat,
                            "alpha_se": res.alpha_se, "beta_se": res.beta_se, "converged": res.converged,
                            "iterations": res.iterations}
        if not quiet:
            print(f"calibrated {v.name}: a={res.a:.4f} b={res.b:.4f} "
                  f"alpha_hat={res.alpha_hat:.3g} beta_hat={res.beta_hat:.3g}")
    return achieved


def cmd_run(cfg: ExperimentConfig, quiet: bool = False) -> int:
    exp = build_experiment(cfg)
    calibration = _calibrate_all(cfg, exp, quiet) if cfg.thresholds.mode == "calibrate" else None
    h = cfg.hypothesis
    main = run_trials(exp, h, cfg.trials, workers=cfg.workers)
    other = run_trials(exp, 1 - h, cfg.trials, workers=cfg.workers)
    by_h = {h: main, 1 - h: other}
    rows, detectors = [], {}
    for v in exp.detectors:
        fa = error_from_trials(by_h[1][v.name], "false_alarm")
        mi = error_from_trials(by_h[0][v.name], "miss")
        trials = main[v.name]
        row = summarize(h, v.name, trials)
        sats = sum(t.saturations for t in trials)
        msgs = sum(t.messages for t in trials)
        detectors[v.name] = {
            "mean_delay_ticks": row.mean_delay_ticks, "ci95": [row.ci95_low, row.ci95_high],
            "mean_messages": row.mean_messages, "censored_rate": row.censored_rate,
            "false_alarm": {"estimate": fa.estimate, "std_error": fa.std_error, "events": fa.events,
                            "upper": fa.upper},
            "miss": {"estimate": mi.estimate, "std_error": mi.std_error, "events": mi.events, "upper": mi.upper},
            "saturation_rate": sats / msgs if msgs else 0.0,
            "decode_integrity_events": sum(t.decode_integrity_events for t in trials),
        }
        rows.extend(main[v.name])
        rows.extend(other[v.name])
        if not quiet:
            print(f"{v.name:28s} delay {row.mean_delay_ticks:9.3f} [{row.ci95_low:.3f}, {row.ci95_high:.3f}]"
                  f"  P_fa {fa.estimate:.3g}  P_miss {mi.estimate:.3g}")
    out = cfg.output_dir
    atomic_write(os.path.join(out, "trials.csv"), trials_to_csv(rows))
    summary = {"command": "run", "config": cfg.to_dict(), "seed": cfg.seed, "targets":
               {"alpha": cfg.thresholds.alpha, "beta": cfg.thresholds.beta},
               "experiment": _experiment_info(exp), "detectors": detectors}
    if calibration is not None:
        summary["calibration"] = calibration
    atomic_write(os.path.join(out, "summary.yaml"), _dump(summary))
    return 0


def cmd_sweep(cfg: ExperimentConfig, quiet: bool = False) -> int:
    spec = sweep_spec(cfg)
    res = run_sweep(spec)
    out = cfg.output_dir
    atomic_write(os.path.join(out, "sweep.csv"), res.to_csv())
    points = []
    for value, exp in res.experiments.items():
        info = _experiment_info(exp)
        info["axis_value"] = value
        info["saturation_rate"] = {
            name: (sum(t.saturations for t in res.trials[(value, name)]) /
                   max(1, sum(t.messages for t in res.trials[(value, name)])))
            for name in (v.name for v in exp.detectors)}
        points.append(info)
    summary = {"command": "sweep", "config": cfg.to_dict(), "seed": cfg.seed, "axis": spec.axis,
               "trials_per_point": spec.trials_per_point, "points": points}
    atomic_write(os.path.join(out, "summary.yaml"), _dump(summary))
    if not quiet:
        sys.stdout.write(res.to_csv())
    return 0


def cmd_calibrate_delta(cfg: ExperimentConfig, quiet: bool = False) -> int:
    from .config import build_scenario

    sc = build_scenario(cfg.model)
    rate = sc.num_sensors / 4 if cfg.rate == "auto" else cfg.rate
    delta = calibrate_delta(sc, rate, cfg.calibration_hypothesis, seed=cfg.seed)
    derived = copy.deepcopy(cfg)
    derived.delta = delta
    derived.rate = rate
    out = cfg.output_dir
    atomic_write(os.path.join(out, "derived_config.yaml"), derived.dump())
    atomic_write(os.path.join(out, "summary.yaml"), _dump({"command": "calibrate-delta", "rate": rate,
                                                          "delta": delta, "seed": cfg.seed}))
    if not quiet:
        print(f"delta = {delta!r} for rate {rate} messages per tick")
    return 0


def cmd_calibrate_thresholds(cfg: ExperimentConfig, quiet: bool = False) -> int:
    exp = build_experiment(cfg)
    achieved = _calibrate_all(cfg, exp, quiet)
    derived = copy.deepcopy(cfg)
    derived.thresholds.mode = "wald"
    derived.thresholds.per_detector = {k: [v["a"], v["b"]] for k, v in achieved.items()}
    out = cfg.output_dir
    atomic_write(os.path.join(out, "derived_config.yaml"), derived.dump())
    atomic_write(os.path.join(out, "summary.yaml"), _dump({"command": "calibrate-thresholds", "seed": cfg.seed,
                                                          "targets": {"alpha": cfg.thresholds.alpha,
                                                                      "beta": cfg.thresholds.beta},
                                                          "calibration": achieved}))
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "calibrate-delta": cmd_calibrate_delta,
            "calibrate-thresholds": cmd_calibrate_thresholds}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="levelsprt", description="Decentralized sequential detection experiments.")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    sub.required = True
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="YAML experiment configuration")
        s.add_argument("--out-dir", help="output directory (overrides output_dir)")
        s.add_argument("--seed", type=int, help="top-level seed override")
        s.add_argument("--trials", type=int, help="trial count override")
        s.add_argument("--quiet", action="store_true", help="suppress progress output")
    return p


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.trials is not None and args.trials < 1:
            raise ConfigError("trials: must be positive")
        if args.command == "sweep" and cfg.sweep is None:
            raise ConfigError("sweep: block is required for the sweep command")
        return COMMANDS[args.command](cfg, args.quiet)
    except (ConfigError, InvalidParameterError, OSError) as exc:
        print(f"levelsprt: error: {exc}", file=sys.stderr)
        return 2
    except ArithmeticError as exc:
        print(f"levelsprt: runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
