"""Experiment harness: environment construction, evaluation, sweeps.

Evaluation deliberately runs under a simulator profile the policy never
trained on (stiffer contact springs, a coarser integrator with the same
control period, a smaller foot sphere, nominal unrandomized masses, and
off-nominal friction), so a success rate measured here says something
about robustness rather than memorization of one simulator.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import os

import numpy as np

from .checkpoint import load_checkpoint
from .config import ExperimentConfig
from .dynamics import ContactParams, write_trajectory
from .env import QuadrupedEnv, RandomizationConfig
from .model import RobotParams
from .nets import GaussianPolicy
from .ppo import TrainResult, train

# Held-out evaluation profile. The 1.25 ms integrator runs 8 substeps so
# the 100 Hz control period is unchanged.
PERTURBED_K_NORMAL = 60000.0
PERTURBED_D_NORMAL = 500.0
PERTURBED_DT = 1.25e-3
PERTURBED_FOOT_RADIUS = 0.015
PERTURBED_MU = 0.6

CONTROL_PERIOD = 0.01


def _robot_params(cfg: ExperimentConfig) -> RobotParams:
    if cfg.robot_file:
        return RobotParams.from_file(cfg.robot_file)
    return RobotParams.nominal()


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def make_training_env(cfg: ExperimentConfig, index: int) -> QuadrupedEnv:
    return QuadrupedEnv(
        params=_robot_params(cfg),
        terrain_mode=cfg.terrain,
        randomization=cfg.randomization,
        reward=cfg.reward,
        action_mode=cfg.action_space,
        cartesian_gains=cfg.gains.cartesian(),
        joint_gains=cfg.gains.joint(),
        seed=1000 * cfg.seed + index,
    )


def run_training(cfg: ExperimentConfig, stop_callback=None) -> TrainResult:
    ppo_cfg = dataclasses.replace(cfg.ppo, seed=cfg.seed)
    return train(lambda i: make_training_env(cfg, i), ppo_cfg,
                 cfg.total_steps, cfg.output_dir, stop_callback=stop_callback)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def make_eval_env(cfg: ExperimentConfig,
                  payload: float | None = None,
                  friction: float | None = None,
                  dt_scale: float | None = None) -> QuadrupedEnv:
    """Evaluation environment for one condition.

    With `cfg.eval.perturbed` the held-out profile applies; the three
    optional knobs then perturb single axes on top of it (a fixed
    payload mass, a ground friction coefficient, an integrator-step
    scale). Masses are nominal: no per-episode randomization.
    """
    ev = cfg.eval
    if ev.perturbed:
        contact = ContactParams(k_normal=PERTURBED_K_NORMAL,
                                d_normal=PERTURBED_D_NORMAL)
        dt = PERTURBED_DT
        foot_radius = PERTURBED_FOOT_RADIUS
        mu = PERTURBED_MU
    else:
        contact = ContactParams()
        dt = 1e-3
        foot_radius = None
        mu = 0.75
    if friction is not None:
        mu = float(friction)
    if dt_scale is not None:
        dt = dt * float(dt_scale)
    inner_steps = max(1, round(CONTROL_PERIOD / dt))

    if payload is not None and payload > 0.0:
        randomization = RandomizationConfig(
            link_mass=False, friction=False, payload=True,
            payload_probability=1.0,
            payload_mass_range=(float(payload), float(payload)),
            payload_offset_limits=(0.0, 0.0, 0.0))
    else:
        randomization = RandomizationConfig.none()

    period = dt * inner_steps
    return QuadrupedEnv(
        params=_robot_params(cfg),
        terrain_mode=ev.terrain,
        randomization=randomization,
        reward=cfg.reward,
        action_mode=cfg.action_space,
        cartesian_gains=cfg.gains.cartesian(),
        joint_gains=cfg.gains.joint(),
        contact=contact,
        dt=dt,
        inner_steps=inner_steps,
        max_episode_steps=int(round(ev.duration_seconds / period)),
        foot_radius_override=foot_radius,
        nominal_mu=mu,
        eval_mode=True,
    )


@dataclasses.dataclass
class TrialResult:
    distance: float
    fell: bool
    steps: int
    mean_speed: float
    velocities: np.ndarray          # forward base velocity per control step
    trace: np.ndarray | None = None  # inner-loop rows when recorded


@dataclasses.dataclass
class EvalReport:
    """Mean distance and success rate over repeated fixed-length trials."""

    label: str
    trials: list[TrialResult]
    period: float = CONTROL_PERIOD

    @property
    def mean_distance(self) -> float:
        return float(np.mean([t.distance for t in self.trials]))

    @property
    def success_rate(self) -> float:
        return float(np.mean([0.0 if t.fell else 1.0 for t in self.trials]))

    @property
    def mean_speed(self) -> float:
        return float(np.mean([t.mean_speed for t in self.trials]))

    def table_row(self) -> str:
        return (f"{self.label}, {self.mean_distance:.2f}, "
                f"{self.success_rate:.2f}")


def run_trial(env: QuadrupedEnv, policy: GaussianPolicy, seed: int,
              record: bool = False) -> TrialResult:
    """One deterministic episode with the policy's mean action."""
    obs = env.reset(seed=seed)
    distance = 0.0
    velocities = []
    rows = []
    done = False
    info: dict = {}
    while not done:
        action = policy.mean_action(obs[None])[0]
        obs, _, done, info = env.step(action, record=record)
        distance += info["progress"]
        velocities.append(info["speed"])
        if record and env.last_result.record is not None:
            rows.append(env.last_result.record)
    steps = len(velocities)
    return TrialResult(
        distance=distance,
        fell=bool(info["fell"]),
        steps=steps,
        mean_speed=distance / (steps * env.period) if steps else 0.0,
        velocities=np.asarray(velocities),
        trace=np.concatenate(rows) if rows else None,
    )


def load_policy(checkpoint_path: str):
    """(policy, normalizer, meta) from a checkpoint file."""
    return load_checkpoint(checkpoint_path)


def evaluate_policy(policy: GaussianPolicy, normalizer,
                    cfg: ExperimentConfig, label: str = "eval",
                    payload: float | None = None,
                    friction: float | None = None,
                    dt_scale: float | None = None,
                    record_first_trial: bool = False) -> EvalReport:
    """Repeated-trial evaluation of one condition; deterministic per seed."""
    env = make_eval_env(cfg, payload=payload, friction=friction,
                        dt_scale=dt_scale)
    env.normalizer = normalizer
    trials = []
    for t in range(cfg.eval.trials):
        trials.append(run_trial(env, policy, seed=cfg.eval.seed + t,
                                record=record_first_trial and t == 0))
    return EvalReport(label=label, trials=trials, period=env.period)


def write_trial_csv(path: str, reports: list[EvalReport]) -> None:
    """Per-trial rows for a list of conditions (one row per trial)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["condition", "trial", "distance_m", "fell",
                         "steps", "mean_speed_mps"])
        for report in reports:
            for t, trial in enumerate(report.trials):
                writer.writerow([report.label, t, f"{trial.distance:.17g}",
                                 int(trial.fell), trial.steps,
                                 f"{trial.mean_speed:.17g}"])


def write_summary_csv(path: str, reports: list[EvalReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["condition", "mean_distance_m", "success_rate",
                         "mean_speed_mps"])
        for report in reports:
            writer.writerow([report.label, f"{report.mean_distance:.17g}",
                             f"{report.success_rate:.17g}",
                             f"{report.mean_speed:.17g}"])


def write_velocity_csv(path: str, reports: list[EvalReport]) -> None:
    """First-trial forward-velocity trace per condition."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["condition", "time_s", "forward_velocity_mps"])
        for report in reports:
            for i, v in enumerate(report.trials[0].velocities):
                writer.writerow([report.label,
                                 f"{(i + 1) * report.period:.17g}",
                                 f"{v:.17g}"])


# ---------------------------------------------------------------------------
# Robustness sweep
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class SweepResult:
    reports: list[EvalReport]
    summary_path: str
    trials_path: str
    velocity_path: str
    trace_path: str | None


def sweep_conditions(cfg: ExperimentConfig) -> list[tuple[str, dict]]:
    conditions = []
    for m in cfg.sweep.payloads:
        conditions.append((f"payload_{m:g}kg", {"payload": float(m)}))
    for mu in cfg.sweep.frictions:
        conditions.append((f"friction_{mu:g}", {"friction": float(mu)}))
    for s in cfg.sweep.dt_scales:
        conditions.append((f"dt_x{s:g}", {"dt_scale": float(s)}))
    return conditions


def robustness_sweep(policy: GaussianPolicy, normalizer,
                     cfg: ExperimentConfig) -> SweepResult:
    """Evaluate every sweep condition; write CSVs from a single collector.

    Conditions run in parallel (each owns its environment; the policy
    and normalizer are only read), and the files are written in the
    fixed condition order, so output is identical for any worker count.
    """
    conditions = sweep_conditions(cfg)
    if not conditions:
        raise ValueError("sweep has no conditions")

    def run_one(item):
        label, kwargs = item
        return evaluate_policy(policy, normalizer, cfg, label=label,
                               record_first_trial=True, **kwargs)

    with concurrent.futures.ThreadPoolExecutor(
            max_workers=cfg.sweep.workers) as pool:
        reports = list(pool.map(run_one, conditions))

    os.makedirs(cfg.output_dir, exist_ok=True)
    summary_path = os.path.join(cfg.output_dir, "sweep_summary.csv")
    trials_path = os.path.join(cfg.output_dir, "sweep_trials.csv")
    velocity_path = os.path.join(cfg.output_dir, "velocity_traces.csv")
    write_summary_csv(summary_path, reports)
    write_trial_csv(trials_path, reports)
    write_velocity_csv(velocity_path, reports)

    trace_path = None
    first_trace = reports[0].trials[0].trace
    if first_trace is not None:
        trace_path = os.path.join(cfg.output_dir, "state_torque_trace.csv")
        write_trajectory(trace_path, first_trace)
    return SweepResult(reports=reports, summary_path=summary_path,
                       trials_path=trials_path, velocity_path=velocity_path,
                       trace_path=trace_path)
