"""Floating-base rigid-body simulation.

Forward dynamics uses the O(n) articulated-body algorithm over the 13-body
tree; foot-terrain interaction is a penalty spring-damper with regularized
Coulomb friction; integration is semi-implicit Euler at a fixed step
(1 ms default). The heavy lifting lives in jitted kernels; this module owns
the state/terrain types and the simulator API.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import kernels
from .model import NUM_JOINTS, NUM_LEGS, RobotModel

GRAVITY = 9.81


class SimulationDiverged(RuntimeError):
    """Raised when integration produces a non-finite state."""


class SimState:
    """Simulation state as named views over a flat 38-float vector.

    Layout: base position (3), base orientation quaternion w,x,y,z (4),
    joint angles (12, FR,FL,RR,RL x hip,thigh,knee), base linear velocity (3,
    world), base angular velocity (3, world), joint velocities (12), time (1).
    """

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray | None = None):
        if data is None:
            data = np.zeros(kernels.STATE_DIM)
            data[kernels.QUAT] = 1.0
        else:
            data = np.asarray(data, dtype=np.float64)
            if data.shape != (kernels.STATE_DIM,):
                raise ValueError(f"state vector must have shape "
                                 f"({kernels.STATE_DIM},), got {data.shape}")
        self.data = data

    @property
    def base_position(self):
        return self.data[kernels.POS:kernels.POS + 3]

    @property
    def base_quaternion(self):
        return self.data[kernels.QUAT:kernels.QUAT + 4]

    @property
    def joint_angles(self):
        return self.data[kernels.Q:kernels.Q + NUM_JOINTS]

    @property
    def base_linear_velocity(self):
        return self.data[kernels.LINVEL:kernels.LINVEL + 3]

    @property
    def base_angular_velocity(self):
        return self.data[kernels.ANGVEL:kernels.ANGVEL + 3]

    @property
    def joint_velocities(self):
        return self.data[kernels.QD:kernels.QD + NUM_JOINTS]

    @property
    def time(self) -> float:
        return float(self.data[kernels.TIME])

    @time.setter
    def time(self, value: float):
        self.data[kernels.TIME] = value

    def copy(self) -> "SimState":
        return SimState(self.data.copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def __repr__(self):
        p = self.base_position
        return (f"SimState(t={self.time:.3f}, base=({p[0]:.3f}, {p[1]:.3f}, "
                f"{p[2]:.3f}))")


@dataclasses.dataclass
class Terrain:
    """Ground plane z=0 plus static boxes and optional side walls.

    Boxes are stored as rows (center_x, center_y, half_x, half_y, height,
    cos_yaw, sin_yaw); each box rests on the ground and extends up to
    `height`. Walls (when wall_y > 0) are vertical planes at y = +/- wall_y.
    The friction coefficient mu applies to ground, boxes, and walls alike.
    """

    mu: float = 0.75
    boxes: np.ndarray = dataclasses.field(
        default_factory=lambda: np.zeros((0, 7)))
    wall_y: float = 0.0

    def __post_init__(self):
        self.boxes = np.ascontiguousarray(self.boxes, dtype=np.float64)
        if self.boxes.ndim != 2 or self.boxes.shape[1] != 7:
            raise ValueError("boxes must be an (n, 7) array")

    @classmethod
    def flat(cls, mu: float = 0.75) -> "Terrain":
        return cls(mu=mu)

    @staticmethod
    def make_box(center_xy, full_widths, height, yaw) -> np.ndarray:
        """Build one box row from center, full x/y widths, height and yaw."""
        return np.array([center_xy[0], center_xy[1],
                         0.5 * full_widths[0], 0.5 * full_widths[1],
                         height, np.cos(yaw), np.sin(yaw)])

    def surface_height(self, x: float, y: float) -> float:
        return kernels.surface_height(x, y, self.boxes)


@dataclasses.dataclass
class ContactParams:
    """Penalty contact gains.

    Normal force f_n = max(0, k_normal * depth - d_normal * v_normal);
    tangential force -k_tangent * v_slip clamped to the cone mu * f_n.
    A foot counts as in contact when its normal force exceeds
    contact_threshold (N).
    """

    k_normal: float = 30000.0
    d_normal: float = 1000.0
    k_tangent: float = 500.0
    contact_threshold: float = 1.0
    # Effective contact mass bounding the discrete damping coefficients at
    # m/dt (the foot's apparent mass is ~0.1 kg; without the bound the
    # explicit damper chatters at dt=1e-3). See kernels.foot_contacts.
    damping_mass: float = 0.1


@dataclasses.dataclass
class ContactPoint:
    foot_index: int
    depth: float
    normal_force: float
    tangential_force: float
    force: np.ndarray
    in_contact: bool


@dataclasses.dataclass
class InnerLoopResult:
    """Aggregates from one policy-period inner loop."""

    energy_abs: float
    energy_net: float
    max_abs_torque: float
    diverged: bool
    steps_done: int
    mean_normal_force: np.ndarray = dataclasses.field(
        default_factory=lambda: np.zeros(NUM_LEGS))
    record: np.ndarray | None = None

    def feet_in_contact(self, threshold: float = 1.0) -> np.ndarray:
        """Per-foot contact booleans from the period-averaged normal force."""
        return self.mean_normal_force > threshold


TRAJECTORY_COLUMNS = (
    ["time", "base_x", "base_y", "base_z",
     "quat_w", "quat_x", "quat_y", "quat_z"]
    + [f"q_{i}" for i in range(NUM_JOINTS)]
    + ["vel_x", "vel_y", "vel_z", "omega_x", "omega_y", "omega_z"]
    + [f"qd_{i}" for i in range(NUM_JOINTS)]
    + [f"tau_{i}" for i in range(NUM_JOINTS)]
    + [f"contact_{leg}" for leg in ("fr", "fl", "rr", "rl")]
)


def write_trajectory(path, rows: np.ndarray):
    """Dump recorded inner-loop rows to CSV with the documented column order."""
    header = ",".join(TRAJECTORY_COLUMNS)
    np.savetxt(path, rows, delimiter=",", header=header, comments="",
               fmt="%.17g")


class Simulator:
    """Owns the model arrays and terrain; stateless between calls apart from
    configuration, so one instance per rollout worker composes cleanly."""

    def __init__(self, model: RobotModel, terrain: Terrain | None = None,
                 contact: ContactParams | None = None, dt: float = 1e-3,
                 gravity: float = GRAVITY, limit_stiffness: float = 300.0,
                 limit_damping: float = 5.0):
        self.model = model
        self.terrain = terrain if terrain is not None else Terrain.flat()
        self.contact = contact if contact is not None else ContactParams()
        self.dt = float(dt)
        self.gravity = float(gravity)
        self.limit_stiffness = float(limit_stiffness)
        self.limit_damping = float(limit_damping)
        self._no_lock = np.zeros(NUM_JOINTS, dtype=np.bool_)

    # -- spec operations ---------------------------------------------------

    def forward_dynamics(self, state: SimState, applied_torques,
                         external_foot_forces=None, base_fixed: bool = False,
                         locked_joints=None) -> np.ndarray:
        """Generalized accelerations (18,) under gravity, torques, and the
        given world-frame foot forces.

        Order: base linear acceleration (world), base angular acceleration
        (world), joint accelerations. `base_fixed` and `locked_joints` are
        test modes that freeze the base / individual joints (their velocities
        should be zero for the frozen coordinates to be meaningful).
        """
        torques = np.asarray(applied_torques, dtype=np.float64)
        if not (state.is_finite() and np.all(np.isfinite(torques))):
            raise ValueError("non-finite state or torques")
        if external_foot_forces is None:
            foot_forces = np.zeros((NUM_LEGS, 3))
        else:
            foot_forces = np.asarray(external_foot_forces, dtype=np.float64)
            if not np.all(np.isfinite(foot_forces)):
                raise ValueError("non-finite external foot forces")
        locked = self._no_lock if locked_joints is None else \
            np.asarray(locked_joints, dtype=np.bool_)

        m = self.model
        r_all, o_all, xup, v = kernels.compute_kinematics(
            state.data, m.parent, m.joint_axis, m.joint_pos)
        pw, _ = kernels.foot_world_states(r_all, o_all, v, m.foot_offset)
        fext = kernels._foot_spatial_forces(r_all, o_all, foot_forces, pw)
        accel = kernels.articulated_body_accel(
            xup, v, state.joint_velocities, torques, fext, m.parent,
            m.joint_axis, m.body_mass, m.body_com, m.body_inertia,
            self.gravity, base_fixed, locked)
        a_lin, a_ang = kernels.base_accel_to_world(accel, r_all[0], v[0])
        out = np.empty(18)
        out[:3] = a_lin
        out[3:6] = a_ang
        out[6:] = accel[6:]
        return out

    def contact_forces(self, state: SimState) -> list[ContactPoint]:
        """Per-foot contact points for the current state."""
        m = self.model
        r_all, o_all, _, v = kernels.compute_kinematics(
            state.data, m.parent, m.joint_axis, m.joint_pos)
        pw, vw = kernels.foot_world_states(r_all, o_all, v, m.foot_offset)
        force, fn, ft, depth, flags = kernels.foot_contacts(
            pw, vw, self.terrain.boxes, self.terrain.wall_y, self.terrain.mu,
            self.contact.k_normal, self.contact.d_normal,
            self.contact.k_tangent, self.contact.damping_mass / self.dt,
            m.foot_radius)
        return [ContactPoint(foot_index=i, depth=float(depth[i]),
                             normal_force=float(fn[i]),
                             tangential_force=float(ft[i]),
                             force=force[i].copy(),
                             in_contact=bool(flags[i] > 0.0))
                for i in range(NUM_LEGS)]

    def actuator_model(self, commanded_torque, joint_velocity):
        """Torque cap and speed rule; accepts scalars or arrays."""
        cmd = np.asarray(commanded_torque, dtype=np.float64)
        vel = np.asarray(joint_velocity, dtype=np.float64)
        if cmd.shape == ():
            return kernels.actuator_torque(float(cmd), float(vel),
                                           self.model.max_torque,
                                           self.model.max_joint_speed)
        out = np.empty_like(cmd)
        flat_c = cmd.ravel()
        flat_v = vel.ravel()
        flat_o = out.ravel()
        for i in range(flat_c.size):
            flat_o[i] = kernels.actuator_torque(flat_c[i], flat_v[i],
                                                self.model.max_torque,
                                                self.model.max_joint_speed)
        return out

    def integrate_step(self, state: SimState, accelerations,
                       dt: float | None = None) -> SimState:
        """One semi-implicit Euler step; raises SimulationDiverged on a
        non-finite result."""
        accel = np.asarray(accelerations, dtype=np.float64)
        h = self.dt if dt is None else float(dt)
        data = kernels.integrate_semi_implicit(state.data, accel[:3],
                                               accel[3:6], accel[6:], h)
        out = SimState(data)
        if not out.is_finite():
            raise SimulationDiverged(f"non-finite state at t={state.time}")
        return out

    # -- composite stepping ------------------------------------------------

    def step(self, state: SimState, commanded_torques,
             dt: float | None = None) -> SimState:
        """One full physics step from commanded joint torques: actuator
        model, joint-limit penalties, contacts, dynamics, integration."""
        applied = self.actuator_model(commanded_torques,
                                      state.joint_velocities)
        limit_tau = kernels.limit_penalty_torques(
            state.joint_angles, state.joint_velocities,
            self.model.q_min, self.model.q_max,
            self.limit_stiffness, self.limit_damping)
        contacts = self.contact_forces(state)
        foot_forces = np.stack([c.force for c in contacts])
        accel = self.forward_dynamics(state, applied + limit_tau,
                                      external_foot_forces=foot_forces)
        return self.integrate_step(state, accel, dt)

    def control_step(self, state: SimState, foot_targets=None,
                     joint_targets=None, cartesian_gains=None,
                     joint_gains=None, n_steps: int = 10,
                     record: bool = False) -> tuple[SimState, InnerLoopResult]:
        """Run the jitted inner loop for one policy period.

        Exactly one of foot_targets (4,3 leg frame, Cartesian impedance mode)
        or joint_targets (12, joint PD mode) must be given, with matching
        gains. Divergence is reported in the result, not raised, so the
        environment can turn it into a terminal transition.
        """
        from .control import CartesianGains, JointGains

        if (foot_targets is None) == (joint_targets is None):
            raise ValueError("give exactly one of foot_targets/joint_targets")
        if foot_targets is not None:
            mode = 0
            gains = cartesian_gains or CartesianGains()
            kp_cart = gains.kp_diag()
            kd_cart = gains.kd_diag()
            kp_joint = 0.0
            kd_joint = 0.0
            ft = np.ascontiguousarray(foot_targets, dtype=np.float64)
            jt = np.zeros(NUM_JOINTS)
        else:
            mode = 1
            gains = joint_gains or JointGains()
            kp_cart = np.zeros(3)
            kd_cart = np.zeros(3)
            kp_joint = gains.k_p
            kd_joint = gains.k_d
            ft = np.zeros((NUM_LEGS, 3))
            jt = np.ascontiguousarray(joint_targets, dtype=np.float64)

        buf = np.zeros((n_steps, kernels.RECORD_WIDTH)) if record \
            else np.zeros((1, kernels.RECORD_WIDTH))
        m = self.model
        data, e_abs, e_net, max_tau, diverged, steps_done, fn_mean = \
            kernels.run_control_steps(
                state.data, mode, ft, jt, kp_cart, kd_cart, kp_joint,
                kd_joint, m.parent, m.joint_axis, m.joint_pos, m.body_mass,
                m.body_com, m.body_inertia, m.foot_offset, m.side_signs,
                m.params.hip_lateral_offset, m.params.link_lengths[0],
                m.params.link_lengths[1], m.q_min, m.q_max,
                self.limit_stiffness, self.limit_damping, m.max_torque,
                m.max_joint_speed, self.terrain.boxes, self.terrain.wall_y,
                self.terrain.mu, self.contact.k_normal, self.contact.d_normal,
                self.contact.k_tangent, self.contact.damping_mass / self.dt,
                m.foot_radius, self.gravity, n_steps, self.dt, record, buf)
        result = InnerLoopResult(
            energy_abs=float(e_abs), energy_net=float(e_net),
            max_abs_torque=float(max_tau), diverged=bool(diverged),
            steps_done=int(steps_done), mean_normal_force=fn_mean,
            record=buf[:steps_done] if record else None)
        return SimState(data), result

    # -- diagnostics -------------------------------------------------------

    def mechanical_energy(self, state: SimState) -> float:
        """Kinetic plus gravitational potential energy (for drift tests)."""
        m = self.model
        r_all, o_all, _, v = kernels.compute_kinematics(
            state.data, m.parent, m.joint_axis, m.joint_pos)
        total = 0.0
        for i in range(len(m.body_mass)):
            spatial_inertia = kernels._spatial_inertia(
                m.body_mass[i], m.body_com[i], m.body_inertia[i])
            total += 0.5 * v[i] @ spatial_inertia @ v[i]
            com_w = o_all[i] + r_all[i] @ m.body_com[i]
            total += m.body_mass[i] * self.gravity * com_w[2]
        return float(total)

    def linear_momentum(self, state: SimState) -> np.ndarray:
        """World-frame linear momentum of the whole mechanism."""
        m = self.model
        r_all, o_all, _, v = kernels.compute_kinematics(
            state.data, m.parent, m.joint_axis, m.joint_pos)
        p = np.zeros(3)
        for i in range(len(m.body_mass)):
            w_b = v[i, :3]
            v_b = v[i, 3:]
            v_com_b = v_b + np.cross(w_b, m.body_com[i])
            p += m.body_mass[i] * (r_all[i] @ v_com_b)
        return p

    def foot_world_positions(self, state: SimState) -> np.ndarray:
        m = self.model
        r_all, o_all, _, v = kernels.compute_kinematics(
            state.data, m.parent, m.joint_axis, m.joint_pos)
        pw, _ = kernels.foot_world_states(r_all, o_all, v, m.foot_offset)
        return pw

    def body_origins(self, state: SimState) -> np.ndarray:
        """World positions of all 13 body-frame origins (knee points are the
        calf origins; used for the fall-detection clearance test)."""
        m = self.model
        r_all, o_all, _, _ = kernels.compute_kinematics(
            state.data, m.parent, m.joint_axis, m.joint_pos)
        return o_all
