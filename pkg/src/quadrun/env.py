"""Locomotion environment: run forward as fast and as cheaply as possible.

The policy commands leg-frame foot targets (or joint targets in the baseline
modes) at 100 Hz; each environment step runs ten 1 ms physics/control inner
steps. Observations are a fixed 64-feature vector passed through a streaming
normalizer. Per-episode dynamics randomization (link masses, friction,
payload) and a random box field provide the training distribution.

`QuadrupedEnv` is single-owner; `VectorEnv` fans a batch of them out over a
thread pool (the physics kernels release the GIL) and merges normalizer
statistics at synchronization points, so results are independent of thread
scheduling.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import math
import os

import numpy as np

from . import kernels
from .control import CartesianGains, JointGains
from .dynamics import ContactParams, GRAVITY, SimState, Simulator, Terrain
from .model import (NUM_BODIES, NUM_JOINTS, NUM_LEGS, RobotModel, RobotParams,
                    SIDE_SIGNS, WorkspaceError, build_robot_model,
                    leg_inverse_kinematics, within_joint_limits)

OBS_DIM = 64
EPISODE_SECONDS = 10.0

# Commandable foot-position box per leg, leg-frame metres.
FOOT_X_RANGE = (-0.2, 0.2)
FOOT_Y_RANGE = (-0.05, 0.05)
FOOT_Z_RANGE = (-0.33, -0.15)

FALL_HEIGHT = 0.15
FALL_TILT = math.radians(60.0)


# ---------------------------------------------------------------------------
# Actions
# ---------------------------------------------------------------------------

def scale_action(action) -> np.ndarray:
    """Map a [-1,1]^12 action to four leg-frame foot targets (4, 3).

    Per axis the map is affine, midpoint plus action times half range, so the
    zero action commands (0, 0, -0.24) on every leg.
    """
    a = np.clip(np.asarray(action, dtype=np.float64).reshape(NUM_LEGS, 3),
                -1.0, 1.0)
    lo = np.array([FOOT_X_RANGE[0], FOOT_Y_RANGE[0], FOOT_Z_RANGE[0]])
    hi = np.array([FOOT_X_RANGE[1], FOOT_Y_RANGE[1], FOOT_Z_RANGE[1]])
    return 0.5 * (lo + hi) + a * 0.5 * (hi - lo)


def scale_joint_action(action, q_lo, q_hi) -> np.ndarray:
    """Map a [-1,1]^12 action to joint targets inside [q_lo, q_hi]."""
    a = np.clip(np.asarray(action, dtype=np.float64).reshape(NUM_JOINTS),
                -1.0, 1.0)
    q_lo = np.asarray(q_lo, dtype=np.float64)
    q_hi = np.asarray(q_hi, dtype=np.float64)
    return 0.5 * (q_lo + q_hi) + a * 0.5 * (q_hi - q_lo)


def restricted_joint_ranges(params: RobotParams,
                            grid: tuple[int, int, int] = (9, 5, 9),
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Joint ranges reachable through the Cartesian foot box, per joint (12,).

    Samples the foot box on a grid, runs inverse kinematics, and keeps the
    per-joint extremes of the solutions that respect the joint limits. This
    is the angle region a foot-space policy actually visits, which the
    restricted joint-PD baseline uses as its target range.
    """
    lo12 = np.empty(NUM_JOINTS)
    hi12 = np.empty(NUM_JOINTS)
    per_side: dict[float, tuple[np.ndarray, np.ndarray]] = {}
    for side in (-1.0, 1.0):
        lo = np.full(3, np.inf)
        hi = np.full(3, -np.inf)
        for x in np.linspace(*FOOT_X_RANGE, grid[0]):
            for y in np.linspace(*FOOT_Y_RANGE, grid[1]):
                for z in np.linspace(*FOOT_Z_RANGE, grid[2]):
                    try:
                        q = leg_inverse_kinematics((x, y, z), side, params)
                    except WorkspaceError:
                        continue
                    if not within_joint_limits(q, params):
                        continue
                    lo = np.minimum(lo, q)
                    hi = np.maximum(hi, q)
        if not np.all(np.isfinite(lo)):
            raise WorkspaceError("foot box unreachable within joint limits")
        per_side[side] = (lo, hi)
    for leg, side in enumerate(SIDE_SIGNS):
        lo, hi = per_side[side]
        lo12[3 * leg:3 * leg + 3] = lo
        hi12[3 * leg:3 * leg + 3] = hi
    return lo12, hi12


# ---------------------------------------------------------------------------
# Reward
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class RewardWeights:
    """Weights of the progress/energy/survival reward."""

    progress: float = 2.0
    energy: float = 0.008
    progress_cap: float = 0.06   # metres per policy step; 6 m/s at 100 Hz
    survival: float = 0.01
    fall_penalty: float = -10.0


def locomotion_reward(forward_progress: float, energy: float, fell: bool,
                      weights: RewardWeights | None = None) -> float:
    """Per-step reward: capped forward progress minus energy, plus survival.

    `forward_progress` is the base x displacement over the step (m) and
    `energy` the summed per-joint |torque * joint velocity| integral (J).
    A falling step additionally receives the fall penalty.
    """
    w = weights if weights is not None else RewardWeights()
    r = (w.progress * min(forward_progress, w.progress_cap)
         - w.energy * energy + w.survival)
    if fell:
        r += w.fall_penalty
    return r


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------

class ObservationNormalizer:
    """Streaming per-feature mean/variance with an associative merge.

    Uses Welford's update and the parallel-variance combine, so worker
    statistics can be merged at batch boundaries in a fixed order and the
    result does not depend on thread scheduling. Normalized outputs are
    clipped to +/-10 standard scores. With fewer than two samples the
    transform is the identity (plus clipping).
    """

    def __init__(self, dim: int = OBS_DIM):
        self.count = 0.0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def update(self, x) -> None:
        x = np.asarray(x, dtype=np.float64)
        self.count += 1.0
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (x - self.mean)

    def merge(self, other: "ObservationNormalizer") -> None:
        if other.count == 0.0:
            return
        if self.count == 0.0:
            self.count = other.count
            self.mean = other.mean.copy()
            self.m2 = other.m2.copy()
            return
        total = self.count + other.count
        delta = other.mean - self.mean
        self.m2 = (self.m2 + other.m2
                   + delta * delta * self.count * other.count / total)
        self.mean = self.mean + delta * (other.count / total)
        self.count = total

    def std(self) -> np.ndarray:
        if self.count < 2.0:
            return np.ones_like(self.mean)
        return np.sqrt(np.maximum(self.m2 / self.count, 1e-8))

    def normalize(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.clip((x - self.mean) / self.std(), -10.0, 10.0)

    def state_arrays(self) -> tuple[float, np.ndarray, np.ndarray]:
        return self.count, self.mean.copy(), self.m2.copy()

    @classmethod
    def from_state(cls, count, mean, m2) -> "ObservationNormalizer":
        mean = np.asarray(mean, dtype=np.float64)
        n = cls(mean.shape[0])
        n.count = float(count)
        n.mean = mean.copy()
        n.m2 = np.asarray(m2, dtype=np.float64).copy()
        return n


def time_remaining_feature(step_index: int, period: float,
                           eval_mode: bool,
                           episode_seconds: float = EPISODE_SECONDS) -> float:
    """Seconds left in the episode; held at 2 after t=8 s in eval mode."""
    t = step_index * period
    if eval_mode and t > 8.0:
        return 2.0
    return episode_seconds - t


def build_observation(state: SimState, model: RobotModel, contacts,
                      step_index: int, period: float = 0.01,
                      eval_mode: bool = False,
                      episode_seconds: float = EPISODE_SECONDS) -> np.ndarray:
    """Assemble the raw (un-normalized) 64-feature observation.

    Layout: base height (1), orientation quaternion wxyz (4), base linear
    velocity (3), base angular velocity (3), joint angles (12), joint
    velocities (12), leg-frame foot positions (12), leg-frame foot
    velocities (12), contact booleans (4), time remaining (1). The body x
    and y coordinates are deliberately absent.
    """
    p = model.params
    q = state.joint_angles
    qd = state.joint_velocities
    foot_p = np.empty((NUM_LEGS, 3))
    foot_v = np.empty((NUM_LEGS, 3))
    for leg in range(NUM_LEGS):
        j = 3 * leg
        pos, vel, _ = kernels.leg_foot_state(
            q[j], q[j + 1], q[j + 2], qd[j], qd[j + 1], qd[j + 2],
            SIDE_SIGNS[leg], p.hip_lateral_offset,
            p.link_lengths[0], p.link_lengths[1])
        foot_p[leg] = pos
        foot_v[leg] = vel

    obs = np.empty(OBS_DIM)
    obs[0] = state.base_position[2]
    obs[1:5] = state.base_quaternion
    obs[5:8] = state.base_linear_velocity
    obs[8:11] = state.base_angular_velocity
    obs[11:23] = q
    obs[23:35] = qd
    obs[35:47] = foot_p.ravel()
    obs[47:59] = foot_v.ravel()
    obs[59:63] = np.asarray(contacts, dtype=np.float64)
    obs[63] = time_remaining_feature(step_index, period, eval_mode,
                                     episode_seconds)
    return obs


def roll_pitch_from_quaternion(quat) -> tuple[float, float]:
    """Roll and pitch (rad) of a wxyz quaternion, aerospace convention."""
    w, x, y, z = (float(v) for v in quat)
    roll = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    sp = 2.0 * (w * y - z * x)
    pitch = math.asin(max(-1.0, min(1.0, sp)))
    return roll, pitch


# ---------------------------------------------------------------------------
# Randomization and terrain
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class RandomizationConfig:
    """Per-episode dynamics randomization toggles and ranges."""

    link_mass: bool = True
    friction: bool = True
    payload: bool = True
    mass_scale_range: tuple[float, float] = (0.8, 1.2)
    friction_range: tuple[float, float] = (0.5, 1.0)
    payload_probability: float = 0.8
    payload_mass_range: tuple[float, float] = (0.0, 15.0)
    payload_offset_limits: tuple[float, float, float] = (0.15, 0.05, 0.05)

    @classmethod
    def none(cls) -> "RandomizationConfig":
        return cls(link_mass=False, friction=False, payload=False)


@dataclasses.dataclass
class SampledDynamics:
    """One draw of randomized dynamics."""

    model: RobotModel
    mu: float
    mass_scales: np.ndarray | None = None
    payload_mass: float = 0.0
    payload_offset: np.ndarray | None = None


def randomize_dynamics(params: RobotParams, cfg: RandomizationConfig,
                       rng: np.random.Generator,
                       nominal_mu: float = 0.75) -> SampledDynamics:
    """Sample a randomized model and friction coefficient.

    Draw order is fixed (mass scales, friction, payload coin, payload mass,
    payload offset) and disabled groups draw nothing, so a given config and
    rng state always produce the same model. Link-mass scales are i.i.d.
    uniform and scale each body's inertia linearly; the payload is folded
    into the base body about its new center of mass.
    """
    model = build_robot_model(params)
    mu = nominal_mu
    scales = None
    payload_mass = 0.0
    payload_offset = None
    if cfg.link_mass:
        scales = rng.uniform(*cfg.mass_scale_range, size=NUM_BODIES)
        model = model.with_scaled_links(scales)
    if cfg.friction:
        mu = float(rng.uniform(*cfg.friction_range))
    if cfg.payload and rng.random() < cfg.payload_probability:
        payload_mass = float(rng.uniform(*cfg.payload_mass_range))
        lim = np.asarray(cfg.payload_offset_limits, dtype=np.float64)
        payload_offset = rng.uniform(-lim, lim)
        model = model.with_payload(payload_mass, payload_offset)
    return SampledDynamics(model=model, mu=mu, mass_scales=scales,
                           payload_mass=payload_mass,
                           payload_offset=payload_offset)


def generate_rough_terrain(rng: np.random.Generator, num_boxes: int = 100,
                           max_height: float = 0.04,
                           max_extent: float = 1.0,
                           field_length: float = 20.0,
                           field_width: float = 6.0,
                           x_start: float = 0.5,
                           wall_y: float = 3.0,
                           mu: float = 0.75) -> Terrain:
    """Random box field ahead of the start pose, with side walls.

    Box heights and x/y extents are uniform on half-open intervals that
    exclude zero (so no degenerate boxes), yaw is uniform on [0, 2pi), and
    centers are uniform over the field_length x field_width area starting
    x_start in front of the origin.
    """
    if max_height <= 0.0:
        raise ValueError("max_height must be positive")
    rows = np.empty((num_boxes, 7))
    for i in range(num_boxes):
        cx = x_start + rng.uniform(0.0, field_length)
        cy = rng.uniform(-0.5 * field_width, 0.5 * field_width)
        height = max_height * (1.0 - rng.random())
        wx = max_extent * (1.0 - rng.random())
        wy = max_extent * (1.0 - rng.random())
        yaw = rng.uniform(0.0, 2.0 * math.pi)
        rows[i] = Terrain.make_box((cx, cy), (wx, wy), height, yaw)
    return Terrain(mu=mu, boxes=rows, wall_y=wall_y)


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------

class QuadrupedEnv:
    """Forward-locomotion task on the articulated-body simulator.

    One policy step runs `inner_steps` physics steps of `dt` seconds (10 ms
    by default). Episodes last `episode_seconds` of simulated time or end
    early on a fall (low base, excessive tilt, or a non-foot link touching
    terrain); divergence of the integrator counts as a fall and is flagged.

    `action_mode` selects the interface: "cartesian" foot targets through
    the impedance controller, or "joint" / "joint_restricted" PD targets
    over the full or box-restricted joint ranges.

    `max_episode_steps` decouples the trial length from `episode_seconds`:
    evaluation runs trials longer than the training horizon while the
    time-remaining feature keeps its training-time scale (and, in eval
    mode, its late-episode hold value).
    """

    observation_dim = OBS_DIM
    action_dim = NUM_JOINTS

    def __init__(self,
                 params: RobotParams | None = None,
                 terrain_mode: str = "flat",
                 randomization: RandomizationConfig | None = None,
                 reward: RewardWeights | None = None,
                 action_mode: str = "cartesian",
                 cartesian_gains: CartesianGains | None = None,
                 joint_gains: JointGains | None = None,
                 contact: ContactParams | None = None,
                 dt: float = 1e-3,
                 inner_steps: int = 10,
                 episode_seconds: float = EPISODE_SECONDS,
                 max_episode_steps: int | None = None,
                 foot_radius_override: float | None = None,
                 nominal_mu: float = 0.75,
                 eval_mode: bool = False,
                 normalizer: ObservationNormalizer | None = None,
                 seed: int = 0):
        if terrain_mode not in ("flat", "rough"):
            raise ValueError(f"unknown terrain_mode {terrain_mode!r}")
        if action_mode not in ("cartesian", "joint", "joint_restricted"):
            raise ValueError(f"unknown action_mode {action_mode!r}")
        self.params = params if params is not None else RobotParams.nominal()
        self.terrain_mode = terrain_mode
        self.randomization = (randomization if randomization is not None
                              else RandomizationConfig.none())
        self.reward_weights = reward if reward is not None else RewardWeights()
        self.action_mode = action_mode
        self.cartesian_gains = (cartesian_gains if cartesian_gains is not None
                                else CartesianGains())
        self.joint_gains = (joint_gains if joint_gains is not None
                            else JointGains())
        self.contact = contact if contact is not None else ContactParams()
        self.dt = float(dt)
        self.inner_steps = int(inner_steps)
        self.period = self.dt * self.inner_steps
        self.episode_seconds = float(episode_seconds)
        self.max_steps = (int(max_episode_steps) if max_episode_steps
                          else int(round(self.episode_seconds / self.period)))
        self.foot_radius_override = foot_radius_override
        self.nominal_mu = float(nominal_mu)
        self.eval_mode = eval_mode
        self.normalizer = normalizer
        self.pending_stats = ObservationNormalizer(OBS_DIM)
        self._rng = np.random.default_rng(seed)

        if action_mode == "joint":
            lo, hi = self.params.joint_limit_arrays()
            self._joint_lo, self._joint_hi = lo, hi
        elif action_mode == "joint_restricted":
            self._joint_lo, self._joint_hi = restricted_joint_ranges(self.params)
        else:
            self._joint_lo = self._joint_hi = None

        self.sim: Simulator | None = None
        self.state: SimState | None = None
        self.step_count = 0
        self.last_contacts = np.zeros(NUM_LEGS, dtype=bool)
        self.last_result = None
        self.last_raw_observation: np.ndarray | None = None
        self.current: SampledDynamics | None = None
        self._prev_x = 0.0
        self._needs_reset = True

    # -- lifecycle ---------------------------------------------------------

    def reset(self, seed: int | None = None) -> np.ndarray:
        """Sample dynamics and terrain, stand the robot up, return the obs."""
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        draw = randomize_dynamics(self.params, self.randomization, self._rng,
                                  self.nominal_mu)
        model = draw.model
        if self.foot_radius_override is not None:
            model = dataclasses.replace(model,
                                        foot_radius=self.foot_radius_override)
            draw = dataclasses.replace(draw, model=model)
        if self.terrain_mode == "rough":
            terrain = generate_rough_terrain(self._rng, mu=draw.mu)
        else:
            terrain = Terrain.flat(mu=draw.mu)
        self.current = draw
        self.sim = Simulator(model, terrain, contact=self.contact, dt=self.dt)
        self.state = self._standing_state(model, terrain)
        self.step_count = 0
        self._prev_x = float(self.state.base_position[0])
        self._needs_reset = False
        self.last_result = None
        self.last_contacts = np.array(
            [c.in_contact for c in self.sim.contact_forces(self.state)])
        return self._observe()

    def _standing_state(self, model: RobotModel, terrain: Terrain) -> SimState:
        """Feet at the action-space midpoints, base settled onto the springs.

        The base height puts each foot at its static equilibrium penetration
        (weight / (4 k_normal)) above the highest surface under the feet, so
        the stance is load-bearing from the first step.
        """
        state = SimState()
        q = np.empty(NUM_JOINTS)
        target = np.array([0.0, 0.0, 0.5 * (FOOT_Z_RANGE[0] + FOOT_Z_RANGE[1])])
        for leg, side in enumerate(SIDE_SIGNS):
            q[3 * leg:3 * leg + 3] = leg_inverse_kinematics(
                target, side, model.params)
        state.joint_angles[:] = q
        ground = max(
            terrain.surface_height(float(hp[0]), float(hp[1]))
            for hp in model.hip_positions)
        sag = model.total_mass * GRAVITY / (NUM_LEGS * self.contact.k_normal)
        state.base_position[2] = (ground - target[2] + model.foot_radius - sag)
        return state

    # -- stepping ----------------------------------------------------------

    def step(self, action, record: bool = False,
             ) -> tuple[np.ndarray, float, bool, dict]:
        if self._needs_reset:
            raise RuntimeError("episode is over; call reset() first")
        assert self.sim is not None and self.state is not None

        if self.action_mode == "cartesian":
            targets = scale_action(action)
            self.state, res = self.sim.control_step(
                self.state, foot_targets=targets,
                cartesian_gains=self.cartesian_gains,
                n_steps=self.inner_steps, record=record)
        else:
            targets = scale_joint_action(action, self._joint_lo, self._joint_hi)
            self.state, res = self.sim.control_step(
                self.state, joint_targets=targets,
                joint_gains=self.joint_gains, n_steps=self.inner_steps,
                record=record)

        self.step_count += 1
        self.last_result = res
        self.last_contacts = res.feet_in_contact(self.contact.contact_threshold)

        x = float(self.state.base_position[0])
        progress = x - self._prev_x
        self._prev_x = x
        fell = bool(res.diverged) or self._fallen(self.state)
        reward = locomotion_reward(progress, res.energy_abs, fell,
                                   self.reward_weights)
        timeout = not fell and self.step_count >= self.max_steps
        done = fell or timeout
        if done:
            self._needs_reset = True

        obs = self._observe()
        info = {
            "progress": progress,
            "speed": progress / self.period,
            "energy": res.energy_abs,
            "energy_net": res.energy_net,
            "max_torque": res.max_abs_torque,
            "contacts": self.last_contacts.copy(),
            "fell": fell,
            "diverged": bool(res.diverged),
            "timeout": timeout,
        }
        return obs, reward, done, info

    def _observe(self) -> np.ndarray:
        raw = build_observation(self.state, self.sim.model, self.last_contacts,
                                self.step_count, self.period, self.eval_mode,
                                self.episode_seconds)
        self.last_raw_observation = raw
        if not self.eval_mode:
            self.pending_stats.update(raw)
        if self.normalizer is not None:
            return self.normalizer.normalize(raw)
        return raw

    def drain_stats(self) -> ObservationNormalizer:
        """Hand over locally accumulated observation statistics."""
        pending = self.pending_stats
        self.pending_stats = ObservationNormalizer(OBS_DIM)
        return pending

    # -- termination -------------------------------------------------------

    def _fallen(self, state: SimState) -> bool:
        if state.base_position[2] < FALL_HEIGHT:
            return True
        roll, pitch = roll_pitch_from_quaternion(state.base_quaternion)
        if abs(roll) > FALL_TILT or abs(pitch) > FALL_TILT:
            return True
        return self._nonfoot_touching(state)

    def _nonfoot_touching(self, state: SimState) -> bool:
        """Knee points or base-box corners at or below the local surface."""
        terrain = self.sim.terrain
        origins = self.sim.body_origins(state)
        r = self.sim.model.params.link_radius
        for leg in range(NUM_LEGS):
            knee = origins[3 + 3 * leg]
            if knee[2] - r < terrain.surface_height(knee[0], knee[1]):
                return True
        rot = kernels.quat_to_rot(state.base_quaternion)
        length, width, height = self.sim.model.params.body_dims
        base = state.base_position
        for sx in (-1.0, 1.0):
            for sy in (-1.0, 1.0):
                corner = base + rot @ np.array(
                    [sx * 0.5 * length, sy * 0.5 * width, -0.5 * height])
                if corner[2] < terrain.surface_height(corner[0], corner[1]):
                    return True
        return False


# ---------------------------------------------------------------------------
# Vectorized wrapper
# ---------------------------------------------------------------------------

class VectorEnv:
    """Steps N single-owner environments on a thread pool.

    The jitted physics releases the GIL, so threads give real parallelism
    without serializing state. Each environment keeps its own RNG and
    statistics accumulator; `sync_normalizer` merges those into the shared
    normalizer in environment order, which makes training trajectories
    independent of worker count and scheduling.

    On episode end the environment auto-resets and the step returns the
    first observation of the new episode; the finished episode's totals are
    reported under info["episode"].
    """

    def __init__(self, envs: list,
                 normalizer: ObservationNormalizer | None = None,
                 max_workers: int | None = None):
        if not envs:
            raise ValueError("need at least one environment")
        self.envs = envs
        self.normalizer = normalizer
        if normalizer is not None:
            for env in envs:
                env.normalizer = normalizer
        self.action_dim = int(getattr(envs[0], "action_dim", NUM_JOINTS))
        workers = max_workers or min(len(envs), os.cpu_count() or 1)
        self._pool = concurrent.futures.ThreadPoolExecutor(max_workers=workers)
        self._ep_return = np.zeros(len(envs))
        self._ep_length = np.zeros(len(envs), dtype=np.int64)
        self._ep_distance = np.zeros(len(envs))

    def __enter__(self) -> "VectorEnv":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        self._pool.shutdown(wait=True)

    def __len__(self) -> int:
        return len(self.envs)

    @property
    def num_envs(self) -> int:
        return len(self.envs)

    def reset_all(self) -> np.ndarray:
        obs = list(self._pool.map(lambda env: env.reset(), self.envs))
        self._ep_return[:] = 0.0
        self._ep_length[:] = 0
        self._ep_distance[:] = 0.0
        return np.stack(obs)

    def step(self, actions) -> tuple[np.ndarray, np.ndarray, np.ndarray, list]:
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (len(self.envs), self.action_dim):
            raise ValueError(
                f"actions must have shape ({len(self.envs)}, "
                f"{self.action_dim}), got {actions.shape}")
        results = list(self._pool.map(self._step_one,
                                      range(len(self.envs)), actions))
        obs = np.stack([r[0] for r in results])
        rewards = np.array([r[1] for r in results])
        dones = np.array([r[2] for r in results], dtype=bool)
        infos = [r[3] for r in results]
        return obs, rewards, dones, infos

    def _step_one(self, i: int, action) -> tuple[np.ndarray, float, bool, dict]:
        env = self.envs[i]
        obs, reward, done, info = env.step(action)
        self._ep_return[i] += reward
        self._ep_length[i] += 1
        self._ep_distance[i] += info.get("progress", 0.0)
        if done:
            length = int(self._ep_length[i])
            distance = float(self._ep_distance[i])
            period = float(getattr(env, "period", 1.0))
            info["episode"] = {
                "reward": float(self._ep_return[i]),
                "length": length,
                "distance": distance,
                "speed": distance / (length * period),
            }
            self._ep_return[i] = 0.0
            self._ep_length[i] = 0
            self._ep_distance[i] = 0.0
            obs = env.reset()
        return obs, reward, done, info

    def sync_normalizer(self) -> None:
        """Merge per-environment statistics into the shared normalizer."""
        for env in self.envs:
            if not hasattr(env, "drain_stats"):
                continue
            pending = env.drain_stats()
            if self.normalizer is not None:
                self.normalizer.merge(pending)
