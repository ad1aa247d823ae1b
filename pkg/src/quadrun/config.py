"""Experiment configuration: a YAML schema with strict key checking.

The schema is the dataclass tree itself; the loader walks a parsed YAML
mapping against it, rejects unknown keys at any depth, and coerces
scalars and lists onto the defaults' types. Reward, randomization, and
optimizer sections reuse the runtime dataclasses directly so a config
file can set any of their fields without a parallel schema drifting out
of date.
"""

from __future__ import annotations

import dataclasses

import yaml

from .control import CartesianGains, JointGains
from .env import RandomizationConfig, RewardWeights
from .ppo import PpoConfig

MODES = ("train", "eval", "sweep", "plot")
TERRAINS = ("flat", "rough")
ACTION_SPACES = ("cartesian", "joint", "joint_restricted")
PLOT_KINDS = ("training", "velocity", "traces", "sweep")


class ConfigError(ValueError):
    """Malformed or contradictory experiment configuration."""


def _triple(value, path: str) -> tuple[float, float, float]:
    if isinstance(value, (int, float)):
        return (float(value),) * 3
    items = tuple(float(v) for v in value)
    if len(items) != 3:
        raise ConfigError(f"{path}: expected a scalar or an xyz triple")
    return items


@dataclasses.dataclass
class GainsSection:
    """Scalar controller gains, applied uniformly on all axes."""

    cartesian_kp: float = 700.0
    cartesian_kd: float = 12.0
    joint_kp: float = 50.0
    joint_kd: float = 0.5

    def cartesian(self) -> CartesianGains:
        return CartesianGains(k_p=_triple(self.cartesian_kp, "gains.cartesian_kp"),
                              k_d=_triple(self.cartesian_kd, "gains.cartesian_kd"))

    def joint(self) -> JointGains:
        return JointGains(k_p=float(self.joint_kp), k_d=float(self.joint_kd))


@dataclasses.dataclass
class EvalSection:
    """Policy evaluation protocol: N trials of a fixed maximum duration.

    `perturbed` selects the held-out simulator profile (stiffer contact,
    coarser integrator, different foot radius, nominal masses) that no
    training run ever sees.
    """

    checkpoint: str | None = None
    trials: int = 10
    duration_seconds: float = 20.0
    perturbed: bool = True
    terrain: str = "flat"
    seed: int = 1000


@dataclasses.dataclass
class SweepSection:
    """Robustness sweep axes; each listed value is one eval condition."""

    payloads: tuple = (0.0, 5.0, 10.0, 15.0)
    frictions: tuple = (0.5, 0.75, 1.0)
    dt_scales: tuple = (1.25,)
    workers: int = 4


@dataclasses.dataclass
class PlotSection:
    source: str | None = None   # CSV file (or run directory for `training`)
    kind: str = "training"


@dataclasses.dataclass
class ExperimentConfig:
    """One experiment: what to run, on what terrain, with which knobs.

    The top-level `seed` is the run's seed; `ppo.seed` in a file is
    overridden by it when training starts so that one value controls the
    whole run.
    """

    mode: str = "train"
    output_dir: str = "runs/default"
    seed: int = 0
    terrain: str = "flat"
    action_space: str = "cartesian"
    total_steps: int = 2_000_000
    robot_file: str | None = None
    gains: GainsSection = dataclasses.field(default_factory=GainsSection)
    reward: RewardWeights = dataclasses.field(default_factory=RewardWeights)
    randomization: RandomizationConfig = dataclasses.field(
        default_factory=RandomizationConfig)
    ppo: PpoConfig = dataclasses.field(default_factory=PpoConfig)
    eval: EvalSection = dataclasses.field(default_factory=EvalSection)
    sweep: SweepSection = dataclasses.field(default_factory=SweepSection)
    plot: PlotSection = dataclasses.field(default_factory=PlotSection)

    def validate(self) -> None:
        def choice(value, options, path):
            if value not in options:
                raise ConfigError(
                    f"{path}: {value!r} is not one of {', '.join(options)}")

        choice(self.mode, MODES, "mode")
        choice(self.terrain, TERRAINS, "terrain")
        choice(self.action_space, ACTION_SPACES, "action_space")
        choice(self.eval.terrain, TERRAINS, "eval.terrain")
        choice(self.plot.kind, PLOT_KINDS, "plot.kind")
        if self.total_steps < 0:
            raise ConfigError("total_steps: must be non-negative")
        if self.eval.trials < 1:
            raise ConfigError("eval.trials: need at least one trial")
        if self.eval.duration_seconds <= 0:
            raise ConfigError("eval.duration_seconds: must be positive")
        if self.sweep.workers < 1:
            raise ConfigError("sweep.workers: need at least one worker")
        try:
            self.gains.cartesian()
            self.gains.joint()
        except ValueError as exc:
            raise ConfigError(f"gains: {exc}") from exc
        for name in ("mass_scale_range", "friction_range",
                     "payload_mass_range"):
            bounds = getattr(self.randomization, name)
            if len(bounds) != 2 or bounds[0] > bounds[1]:
                raise ConfigError(f"randomization.{name}: not a (lo, hi) pair")
        if not 0.0 <= self.randomization.payload_probability <= 1.0:
            raise ConfigError(
                "randomization.payload_probability: not a probability")
        if len(self.randomization.payload_offset_limits) != 3:
            raise ConfigError(
                "randomization.payload_offset_limits: expected xyz limits")
        try:
            self.ppo.validate()
        except ValueError as exc:
            raise ConfigError(f"ppo: {exc}") from exc


# ---------------------------------------------------------------------------
# Loader
# ---------------------------------------------------------------------------

def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _convert(default, value, path: str):
    if dataclasses.is_dataclass(default):
        return _merge_dataclass(default, value, path)
    if default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected an integer")
        if float(value) != int(value):
            raise ConfigError(f"{path}: expected an integer")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        element = default[0] if default else 0.0
        return tuple(_convert(element, v, f"{path}[{i}]")
                     for i, v in enumerate(value))
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    raise ConfigError(f"{path}: unsupported field type")


def _merge_dataclass(base, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    names = {f.name for f in dataclasses.fields(base)}
    updates = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"{_join(path, key)}: unknown key")
        updates[key] = _convert(getattr(base, key), value, _join(path, key))
    return dataclasses.replace(base, **updates)


def config_from_dict(data: dict, base: ExperimentConfig | None = None,
                     ) -> ExperimentConfig:
    """Build (or override) a config from a nested plain dict; validates."""
    cfg = _merge_dataclass(base if base is not None else ExperimentConfig(),
                           data if data is not None else {}, "")
    cfg.validate()
    return cfg


def load_experiment_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data)
