"""Robot description and per-leg kinematics.

The robot is a 12-joint quadruped: a floating base plus four 3-DOF legs.
Legs are ordered FR, FL, RR, RL; joints within a leg are ordered
(hip abduction, thigh pitch, knee pitch).

Conventions (leg frame, fixed at the hip, axes aligned with the body):
  * x forward, y left, z up.
  * Hip abduction q1 rotates about +x.
  * q2 = q3 = 0 puts the thigh straight down (-z) with the calf collinear.
  * Positive thigh pitch q2 swings the foot forward (+x).
  * The knee angle q3 is negative over its whole travel; the calf direction
    in the leg frame makes angle (q2 - q3) with -z, measured toward +x.

With these choices the closed-form foot position is

    x = l1 sin(q2) + l2 sin(q2 - q3)
    z = -l1 cos(q2) - l2 cos(q2 - q3)
    p = R_x(q1) @ (x, s*d, z)          s = +1 left / -1 right, d = hip offset

All angles are radians; degrees appear only in configuration files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

LEG_NAMES = ("FR", "FL", "RR", "RL")
# y-sign of each leg: right legs sit at negative y.
SIDE_SIGNS = (-1.0, 1.0, -1.0, 1.0)
LEFT = 1.0
RIGHT = -1.0

NUM_LEGS = 4
NUM_JOINTS = 12
NUM_BODIES = 13  # base + 4 legs x (hip link, thigh, calf)


class WorkspaceError(ValueError):
    """Raised when an inverse-kinematics target is unreachable."""


@dataclass
class RobotParams:
    """Physical description of the quadruped (SI units, radians)."""

    total_mass: float = 12.0
    body_inertia: tuple[float, float, float] = (0.0168, 0.0565, 0.0647)
    body_dims: tuple[float, float, float] = (0.361, 0.194, 0.114)  # l, w, h
    link_lengths: tuple[float, float] = (0.2, 0.2)  # thigh l1, calf l2
    hip_lateral_offset: float = 0.08
    # Per-link mass split; the four leg links repeat per leg.
    base_mass: float = 5.25
    hip_mass: float = 0.6
    thigh_mass: float = 0.9
    calf_mass: float = 0.15
    foot_mass: float = 0.0375
    # Joint travel (rad): hip abduction, thigh pitch, knee pitch.
    hip_limit: tuple[float, float] = (math.radians(-46.0), math.radians(46.0))
    thigh_limit: tuple[float, float] = (math.radians(-60.0), math.radians(240.0))
    knee_limit: tuple[float, float] = (math.radians(-154.5), math.radians(-52.5))
    max_torque: float = 33.5
    max_joint_speed: float = 21.0
    gear_ratio: float = 9.0
    foot_radius: float = 0.02
    link_radius: float = 0.02  # leg links modelled as thin cylinders

    def validate(self) -> None:
        if self.total_mass <= 0.0:
            raise ValueError("total_mass must be positive")
        if any(i <= 0.0 for i in self.body_inertia):
            raise ValueError("body inertia entries must be positive")
        leg_mass = self.hip_mass + self.thigh_mass + self.calf_mass + self.foot_mass
        link_sum = self.base_mass + NUM_LEGS * leg_mass
        if not math.isclose(link_sum, self.total_mass, rel_tol=1e-9):
            raise ValueError(
                f"per-link masses sum to {link_sum:.6f}, expected total_mass "
                f"{self.total_mass:.6f}"
            )
        for lo, hi in (self.hip_limit, self.thigh_limit, self.knee_limit):
            if lo >= hi:
                raise ValueError("joint limit lower bound must be below upper bound")

    @classmethod
    def nominal(cls) -> "RobotParams":
        p = cls()
        p.validate()
        return p

    @classmethod
    def from_file(cls, path: str) -> "RobotParams":
        """Load from a flat key-value YAML file (degrees at this boundary)."""
        with open(path) as fh:
            raw = yaml.safe_load(fh)
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: expected a flat key-value mapping")
        known = {
            "total_mass", "body_inertia", "body_length", "body_width",
            "body_height", "link_lengths", "hip_lateral_offset", "base_mass",
            "hip_mass", "thigh_mass", "calf_mass", "foot_mass",
            "hip_limit_deg", "thigh_limit_deg", "knee_limit_deg",
            "max_torque", "max_joint_speed", "gear_ratio", "foot_radius",
            "link_radius",
        }
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
        for key, value in raw.items():
            if isinstance(value, dict):
                raise ValueError(f"{path}: nested value under '{key}' not allowed")

        def deg_pair(key, default):
            if key not in raw:
                return default
            lo, hi = raw[key]
            return (math.radians(float(lo)), math.radians(float(hi)))

        defaults = cls()
        p = cls(
            total_mass=float(raw.get("total_mass", defaults.total_mass)),
            body_inertia=tuple(raw.get("body_inertia", defaults.body_inertia)),
            body_dims=(
                float(raw.get("body_length", defaults.body_dims[0])),
                float(raw.get("body_width", defaults.body_dims[1])),
                float(raw.get("body_height", defaults.body_dims[2])),
            ),
            link_lengths=tuple(raw.get("link_lengths", defaults.link_lengths)),
            hip_lateral_offset=float(
                raw.get("hip_lateral_offset", defaults.hip_lateral_offset)),
            base_mass=float(raw.get("base_mass", defaults.base_mass)),
            hip_mass=float(raw.get("hip_mass", defaults.hip_mass)),
            thigh_mass=float(raw.get("thigh_mass", defaults.thigh_mass)),
            calf_mass=float(raw.get("calf_mass", defaults.calf_mass)),
            foot_mass=float(raw.get("foot_mass", defaults.foot_mass)),
            hip_limit=deg_pair("hip_limit_deg", defaults.hip_limit),
            thigh_limit=deg_pair("thigh_limit_deg", defaults.thigh_limit),
            knee_limit=deg_pair("knee_limit_deg", defaults.knee_limit),
            max_torque=float(raw.get("max_torque", defaults.max_torque)),
            max_joint_speed=float(
                raw.get("max_joint_speed", defaults.max_joint_speed)),
            gear_ratio=float(raw.get("gear_ratio", defaults.gear_ratio)),
            foot_radius=float(raw.get("foot_radius", defaults.foot_radius)),
            link_radius=float(raw.get("link_radius", defaults.link_radius)),
        )
        p.validate()
        return p

    def joint_limit_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(q_min, q_max) for the 12 joints in FR,FL,RR,RL x hip,thigh,knee order."""
        lo = np.array([self.hip_limit[0], self.thigh_limit[0], self.knee_limit[0]] * 4)
        hi = np.array([self.hip_limit[1], self.thigh_limit[1], self.knee_limit[1]] * 4)
        return lo, hi


# ---------------------------------------------------------------------------
# Leg kinematics
# ---------------------------------------------------------------------------

def leg_forward_kinematics(q, side: float, params: RobotParams) -> np.ndarray:
    """Foot position in the leg frame (relative to the hip origin).

    q: (hip abduction, thigh pitch, knee pitch) in rad.
    side: +1 for a left leg, -1 for a right leg.
    """
    q1, q2, q3 = float(q[0]), float(q[1]), float(q[2])
    l1, l2 = params.link_lengths
    d = side * params.hip_lateral_offset
    xp = l1 * math.sin(q2) + l2 * math.sin(q2 - q3)
    zp = -l1 * math.cos(q2) - l2 * math.cos(q2 - q3)
    c1, s1 = math.cos(q1), math.sin(q1)
    return np.array([xp, c1 * d - s1 * zp, s1 * d + c1 * zp])


def leg_jacobian(q, side: float, params: RobotParams) -> np.ndarray:
    """3x3 foot Jacobian d(foot position)/dq in the leg frame.

    Singular configurations (straight leg) return a singular matrix.
    """
    q1, q2, q3 = float(q[0]), float(q[1]), float(q[2])
    l1, l2 = params.link_lengths
    d = side * params.hip_lateral_offset
    s2, c2 = math.sin(q2), math.cos(q2)
    s23, c23 = math.sin(q2 - q3), math.cos(q2 - q3)
    c1, s1 = math.cos(q1), math.sin(q1)
    zp = -l1 * c2 - l2 * c23
    dx2 = l1 * c2 + l2 * c23
    dz2 = l1 * s2 + l2 * s23
    dx3 = -l2 * c23
    dz3 = -l2 * s23
    return np.array([
        [0.0, dx2, dx3],
        [-s1 * d - c1 * zp, -s1 * dz2, -s1 * dz3],
        [c1 * d - s1 * zp, c1 * dz2, c1 * dz3],
    ])


def foot_velocity(q, qdot, side: float, params: RobotParams) -> np.ndarray:
    """Leg-frame foot velocity J(q) @ qdot."""
    return leg_jacobian(q, side, params) @ np.asarray(qdot, dtype=float)


def leg_inverse_kinematics(p_target, side: float, params: RobotParams) -> np.ndarray:
    """Joint angles reaching p_target in the leg frame.

    Picks the knee-negative branch (the only one inside the knee's travel)
    and the foot-below-hip solution for the abduction angle.
    Raises WorkspaceError for unreachable targets.
    """
    px, py, pz = (float(v) for v in p_target)
    l1, l2 = params.link_lengths
    d = side * params.hip_lateral_offset

    ryz_sq = py * py + pz * pz
    d_sq = d * d
    if ryz_sq < d_sq - 1e-12:
        raise WorkspaceError(
            f"target {tuple(p_target)} lies inside the hip offset cylinder")
    zp = -math.sqrt(max(ryz_sq - d_sq, 0.0))
    q1 = math.atan2(pz, py) - math.atan2(zp, d)
    # Wrap so the abduction angle stays in (-pi, pi].
    q1 = math.atan2(math.sin(q1), math.cos(q1))

    r_sq = px * px + zp * zp
    cos_knee = (r_sq - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    if cos_knee > 1.0 + 1e-9 or cos_knee < -1.0 - 1e-9:
        raise WorkspaceError(
            f"target {tuple(p_target)} outside the reachable annulus")
    cos_knee = min(1.0, max(-1.0, cos_knee))
    q3 = -math.acos(cos_knee)
    beta = -q3
    q2 = math.atan2(px, -zp) - math.atan2(l2 * math.sin(beta),
                                          l1 + l2 * math.cos(beta))
    return np.array([q1, q2, q3])


def within_joint_limits(q, params: RobotParams, margin: float = 0.0) -> bool:
    """Limit query for one leg's (hip, thigh, knee) angles."""
    limits = (params.hip_limit, params.thigh_limit, params.knee_limit)
    return all(lo + margin <= float(a) <= hi - margin
               for a, (lo, hi) in zip(q, limits))


# ---------------------------------------------------------------------------
# Rigid-body tree
# ---------------------------------------------------------------------------

def cylinder_inertia(mass: float, length: float, radius: float, axis: int) -> np.ndarray:
    """Inertia of a solid cylinder about its COM, symmetry axis along `axis`."""
    perp = mass * (3.0 * radius * radius + length * length) / 12.0
    axial = 0.5 * mass * radius * radius
    diag = [perp, perp, perp]
    diag[axis] = axial
    return np.diag(diag)


def combine_rigid_bodies(m1, c1, i1, m2, c2, i2):
    """Merge two rigid bodies (mass, COM, inertia about COM, shared frame).

    Returns (mass, com, inertia about the combined COM) via the parallel-axis
    theorem. A point mass contributes a zero inertia matrix.
    """
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    m = m1 + m2
    com = (m1 * c1 + m2 * c2) / m

    def shift(mass, c, inertia):
        r = c - com
        return inertia + mass * (np.dot(r, r) * np.eye(3) - np.outer(r, r))

    return m, com, shift(m1, c1, np.asarray(i1, float)) + shift(m2, c2, np.asarray(i2, float))


@dataclass
class RobotModel:
    """Articulated-tree description consumed by the dynamics core.

    Body 0 is the floating base; leg ``l`` owns bodies ``1 + 3l`` (hip link),
    ``2 + 3l`` (thigh) and ``3 + 3l`` (calf, with the foot mass folded in).
    Joint ``j`` connects body ``j + 1`` to its parent.
    """

    params: RobotParams
    parent: np.ndarray          # (13,) int; -1 for the base
    joint_axis: np.ndarray      # (12, 3) unit axis in the parent frame
    joint_pos: np.ndarray       # (12, 3) joint origin in the parent frame
    body_mass: np.ndarray       # (13,)
    body_com: np.ndarray        # (13, 3) COM in the body frame
    body_inertia: np.ndarray    # (13, 3, 3) about the COM, body frame
    foot_offset: np.ndarray     # (3,) foot point in the calf frame
    hip_positions: np.ndarray   # (4, 3) hip origins on the base
    side_signs: np.ndarray      # (4,)
    q_min: np.ndarray           # (12,)
    q_max: np.ndarray           # (12,)
    max_torque: float
    max_joint_speed: float
    foot_radius: float

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.body_mass))

    def leg_params(self) -> RobotParams:
        """Parameters for per-leg kinematics of this (possibly scaled) model."""
        return self.params

    def with_scaled_links(self, scales) -> "RobotModel":
        """Per-body mass scaling; inertia scales with the mass (geometry fixed).

        `scales` has 13 entries in body order (base first). The foot mass is
        part of its calf body, so a calf scale applies to the composite.
        """
        scales = np.asarray(scales, dtype=float)
        if scales.shape != (NUM_BODIES,):
            raise ValueError(f"expected {NUM_BODIES} scales, got {scales.shape}")
        return replace(
            self,
            body_mass=self.body_mass * scales,
            body_inertia=self.body_inertia * scales[:, None, None],
        )

    def with_payload(self, mass: float, offset) -> "RobotModel":
        """Rigidly attach a point mass to the base at `offset` from its frame."""
        if mass <= 0.0:
            return self
        m, com, inertia = combine_rigid_bodies(
            self.body_mass[0], self.body_com[0], self.body_inertia[0],
            mass, offset, np.zeros((3, 3)),
        )
        body_mass = self.body_mass.copy()
        body_com = self.body_com.copy()
        body_inertia = self.body_inertia.copy()
        body_mass[0] = m
        body_com[0] = com
        body_inertia[0] = inertia
        return replace(self, body_mass=body_mass, body_com=body_com,
                       body_inertia=body_inertia)


def build_robot_model(params: RobotParams) -> RobotModel:
    """Assemble the 13-body tree from physical parameters."""
    params.validate()
    l1, l2 = params.link_lengths
    d = params.hip_lateral_offset
    half_l = params.body_dims[0] / 2.0
    half_w = params.body_dims[1] / 2.0
    r_link = params.link_radius

    parent = np.full(NUM_BODIES, -1, dtype=np.int64)
    joint_axis = np.zeros((NUM_JOINTS, 3))
    joint_pos = np.zeros((NUM_JOINTS, 3))
    body_mass = np.zeros(NUM_BODIES)
    body_com = np.zeros((NUM_BODIES, 3))
    body_inertia = np.zeros((NUM_BODIES, 3, 3))

    body_mass[0] = params.base_mass
    body_inertia[0] = np.diag(params.body_inertia)

    hip_x = (half_l, half_l, -half_l, -half_l)
    hip_positions = np.zeros((NUM_LEGS, 3))
    calf_m, calf_com, calf_inertia = combine_rigid_bodies(
        params.calf_mass, (0.0, 0.0, -l2 / 2.0),
        cylinder_inertia(params.calf_mass, l2, r_link, axis=2),
        params.foot_mass, (0.0, 0.0, -l2), np.zeros((3, 3)),
    )

    for leg in range(NUM_LEGS):
        s = SIDE_SIGNS[leg]
        hip_positions[leg] = (hip_x[leg], s * half_w, 0.0)
        hip_body = 1 + 3 * leg
        thigh_body = 2 + 3 * leg
        calf_body = 3 + 3 * leg
        j = 3 * leg

        # Hip abduction about +x at the hip origin on the base.
        parent[hip_body] = 0
        joint_axis[j] = (1.0, 0.0, 0.0)
        joint_pos[j] = hip_positions[leg]
        body_mass[hip_body] = params.hip_mass
        body_com[hip_body] = (0.0, s * d / 2.0, 0.0)
        body_inertia[hip_body] = cylinder_inertia(params.hip_mass, d, r_link * 1.25, axis=1)

        # Thigh pitch about -y, offset laterally from the hip joint.
        parent[thigh_body] = hip_body
        joint_axis[j + 1] = (0.0, -1.0, 0.0)
        joint_pos[j + 1] = (0.0, s * d, 0.0)
        body_mass[thigh_body] = params.thigh_mass
        body_com[thigh_body] = (0.0, 0.0, -l1 / 2.0)
        body_inertia[thigh_body] = cylinder_inertia(params.thigh_mass, l1, r_link, axis=2)

        # Knee pitch about +y at the thigh tip.
        parent[calf_body] = thigh_body
        joint_axis[j + 2] = (0.0, 1.0, 0.0)
        joint_pos[j + 2] = (0.0, 0.0, -l1)
        body_mass[calf_body] = calf_m
        body_com[calf_body] = calf_com
        body_inertia[calf_body] = calf_inertia

    q_min, q_max = params.joint_limit_arrays()
    return RobotModel(
        params=params,
        parent=parent,
        joint_axis=joint_axis,
        joint_pos=joint_pos,
        body_mass=body_mass,
        body_com=body_com,
        body_inertia=body_inertia,
        foot_offset=np.array([0.0, 0.0, -l2]),
        hip_positions=hip_positions,
        side_signs=np.array(SIDE_SIGNS),
        q_min=q_min,
        q_max=q_max,
        max_torque=params.max_torque,
        max_joint_speed=params.max_joint_speed,
        foot_radius=params.foot_radius,
    )
