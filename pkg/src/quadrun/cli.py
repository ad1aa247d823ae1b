"""Command line: train, eval, sweep, plot, inspect-checkpoint.

Exit codes: 0 success, 2 configuration or input error, 3 training
diverged. Relative output directories are placed under the directory
named by the QUADRUN_OUTPUT_ROOT environment variable when it is set.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from . import experiments, plots
from .checkpoint import CheckpointError, inspect_checkpoint
from .config import (ACTION_SPACES, PLOT_KINDS, TERRAINS, ConfigError,
                     ExperimentConfig, config_from_dict,
                     load_experiment_config)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
OUTPUT_ROOT_VAR = "QUADRUN_OUTPUT_ROOT"


def _float_list(text: str) -> list[float]:
    text = text.strip()
    if text in ("", "none"):
        return []
    return [float(item) for item in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quadrun",
        description="Quadruped locomotion training and evaluation harness.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="experiment YAML file")
        p.add_argument("--output-dir", help="where results are written")
        p.add_argument("--seed", type=int, help="run seed")

    p = sub.add_parser("train", help="run PPO training")
    common(p)
    p.add_argument("--terrain", choices=TERRAINS)
    p.add_argument("--action-space", choices=ACTION_SPACES)
    p.add_argument("--total-steps", type=int)
    p.add_argument("--no-randomization", action="store_true",
                   help="disable all dynamics randomization")
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--num-envs", type=int)
    p.add_argument("--workers", type=int, help="rollout thread count")
    p.add_argument("--checkpoint-interval", type=int)
    p.add_argument("--log-every", type=int, default=10,
                   help="console progress period in iterations")

    p = sub.add_parser("eval", help="evaluate a checkpoint over N trials")
    common(p)
    p.add_argument("--checkpoint", help="policy checkpoint to evaluate")
    p.add_argument("--trials", type=int)
    p.add_argument("--duration", type=float, help="trial length in seconds")
    p.add_argument("--label", default="eval", help="condition label in output")
    p.add_argument("--plain", action="store_true",
                   help="use the training simulator profile, not the "
                        "held-out one")
    p.add_argument("--payload", type=float, help="fixed payload mass (kg)")
    p.add_argument("--friction", type=float, help="ground friction override")

    p = sub.add_parser("sweep", help="robustness sweep over a checkpoint")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--trials", type=int)
    p.add_argument("--payloads", type=_float_list,
                   help="comma-separated payload masses (kg)")
    p.add_argument("--frictions", type=_float_list,
                   help="comma-separated friction coefficients")
    p.add_argument("--dt-scales", type=_float_list,
                   help="comma-separated integrator step scales")
    p.add_argument("--sweep-workers", type=int)

    p = sub.add_parser("plot", help="render an SVG from a harness CSV")
    common(p)
    p.add_argument("--kind", choices=PLOT_KINDS)
    p.add_argument("--source", help="backing CSV file (or run directory)")
    p.add_argument("--out", help="output SVG path")

    p = sub.add_parser("inspect-checkpoint",
                       help="print a checkpoint's header and layout")
    p.add_argument("path")
    return parser


# ---------------------------------------------------------------------------
# Config assembly
# ---------------------------------------------------------------------------

def _deep_update(target: dict, extra: dict) -> dict:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(target.get(key), dict):
            _deep_update(target[key], value)
        else:
            target[key] = value
    return target


def _collect_overrides(args: argparse.Namespace) -> dict:
    out: dict = {"mode": args.command}
    direct = {
        "output_dir": getattr(args, "output_dir", None),
        "seed": getattr(args, "seed", None),
        "terrain": getattr(args, "terrain", None),
        "action_space": getattr(args, "action_space", None),
        "total_steps": getattr(args, "total_steps", None),
    }
    for key, value in direct.items():
        if value is not None:
            out[key] = value
    ppo = {
        "learning_rate": getattr(args, "learning_rate", None),
        "num_envs": getattr(args, "num_envs", None),
        "num_workers": getattr(args, "workers", None),
        "checkpoint_interval": getattr(args, "checkpoint_interval", None),
    }
    ppo = {k: v for k, v in ppo.items() if v is not None}
    if ppo:
        out["ppo"] = ppo
    if getattr(args, "no_randomization", False):
        out["randomization"] = {"link_mass": False, "friction": False,
                                "payload": False}
    ev = {
        "checkpoint": getattr(args, "checkpoint", None),
        "trials": getattr(args, "trials", None),
        "duration_seconds": getattr(args, "duration", None),
    }
    if getattr(args, "plain", False):
        ev["perturbed"] = False
    ev = {k: v for k, v in ev.items() if v is not None}
    if ev:
        out["eval"] = ev
    sweep = {
        "payloads": getattr(args, "payloads", None),
        "frictions": getattr(args, "frictions", None),
        "dt_scales": getattr(args, "dt_scales", None),
        "workers": getattr(args, "sweep_workers", None),
    }
    sweep = {k: v for k, v in sweep.items() if v is not None}
    if sweep:
        out["sweep"] = sweep
    plot = {
        "kind": getattr(args, "kind", None),
        "source": getattr(args, "source", None),
    }
    plot = {k: v for k, v in plot.items() if v is not None}
    if plot:
        out["plot"] = plot
    return out


def _assemble_config(args: argparse.Namespace) -> ExperimentConfig:
    base = (load_experiment_config(args.config) if args.config
            else ExperimentConfig())
    cfg = config_from_dict(_collect_overrides(args), base=base)
    root = os.environ.get(OUTPUT_ROOT_VAR)
    if root and not os.path.isabs(cfg.output_dir):
        cfg = dataclasses.replace(
            cfg, output_dir=os.path.join(root, cfg.output_dir))
    return cfg


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_train(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    log_every = max(1, args.log_every)

    def progress(row: dict) -> bool:
        if row["iteration"] % log_every == 0:
            print(f"iter {row['iteration']:5d}  "
                  f"steps {row['env_steps']:>9d}  "
                  f"reward {row['mean_episode_reward']:8.2f}  "
                  f"speed {row['mean_speed']:5.2f} m/s")
        return False

    result = experiments.run_training(cfg, stop_callback=progress)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics:    {result.metrics_path}")
    if result.iterations > 0:
        svg = os.path.join(cfg.output_dir, "training_curves.svg")
        plots.plot_training(result.metrics_path, svg)
        print(f"curves:     {svg}")
    if result.diverged:
        print("training diverged (non-finite loss); stopping early",
              file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    checkpoint = cfg.eval.checkpoint
    if not checkpoint:
        raise ConfigError("eval.checkpoint: no checkpoint given")
    policy, normalizer, _ = experiments.load_policy(checkpoint)
    report = experiments.evaluate_policy(
        policy, normalizer, cfg, label=args.label,
        payload=args.payload, friction=args.friction)
    os.makedirs(cfg.output_dir, exist_ok=True)
    experiments.write_summary_csv(
        os.path.join(cfg.output_dir, "eval_summary.csv"), [report])
    experiments.write_trial_csv(
        os.path.join(cfg.output_dir, "eval_trials.csv"), [report])
    print("condition, mean_distance_m, success_rate")
    print(report.table_row())
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    checkpoint = cfg.eval.checkpoint
    if not checkpoint:
        raise ConfigError("eval.checkpoint: no checkpoint given")
    policy, normalizer, _ = experiments.load_policy(checkpoint)
    result = experiments.robustness_sweep(policy, normalizer, cfg)
    plots.plot_sweep(result.summary_path,
                     os.path.join(cfg.output_dir, "sweep_summary.svg"))
    plots.plot_velocity(result.velocity_path,
                        os.path.join(cfg.output_dir, "velocity_traces.svg"))
    if result.trace_path:
        plots.plot_traces(result.trace_path,
                          os.path.join(cfg.output_dir,
                                       "state_torque_trace.svg"))
    print("condition, mean_distance_m, success_rate")
    for report in result.reports:
        print(report.table_row())
    return EXIT_OK


def cmd_plot(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    source = cfg.plot.source
    if not source:
        raise ConfigError("plot.source: no input CSV given")
    out = args.out
    if not out:
        if os.path.isdir(source):
            out = os.path.join(source, f"{cfg.plot.kind}.svg")
        else:
            out = os.path.splitext(source)[0] + ".svg"
    plots.make_plot(cfg.plot.kind, source, out)
    print(out)
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    info = inspect_checkpoint(args.path)
    print(f"format version:  {info['version']}")
    print(f"iteration:       {info['iteration']}")
    print(f"env steps:       {info['env_steps']}")
    print(f"observation dim: {info['obs_dim']}")
    print(f"action dim:      {info['act_dim']}")
    print(f"hidden layers:   {info['hidden']}")
    print(f"parameters:      {info['parameter_count']}")
    if info["has_normalizer"]:
        print(f"normalizer:      {info['normalizer_samples']:.0f} samples")
    else:
        print("normalizer:      none")
    for head, n_in, n_out in info["layers"]:
        print(f"  {head:6s} {n_in:4d} -> {n_out:d}")
    print(f"file size:       {info['file_bytes']} bytes")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "inspect-checkpoint":
            return cmd_inspect(args)
        cfg = _assemble_config(args)
        if args.command == "train":
            return cmd_train(cfg, args)
        if args.command == "eval":
            return cmd_eval(cfg, args)
        if args.command == "sweep":
            return cmd_sweep(cfg, args)
        return cmd_plot(cfg, args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
