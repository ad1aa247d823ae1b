"""Torque generation.

Two controllers: the Cartesian impedance law that maps leg-frame foot-target
errors through the Jacobian transpose, and the joint-space PD baseline used
by the comparison harness.
"""

from __future__ import annotations

import dataclasses

import numpy as np


@dataclasses.dataclass
class CartesianGains:
    """Diagonal stiffness (N/m) and damping (N·s/m) of the virtual
    spring-damper rendered at each foot."""

    k_p: tuple[float, float, float] = (700.0, 700.0, 700.0)
    k_d: tuple[float, float, float] = (12.0, 12.0, 12.0)

    def __post_init__(self):
        if any(g < 0 for g in self.k_p) or any(g < 0 for g in self.k_d):
            raise ValueError("gains must be non-negative")

    def kp_diag(self) -> np.ndarray:
        return np.asarray(self.k_p, dtype=np.float64)

    def kd_diag(self) -> np.ndarray:
        return np.asarray(self.k_d, dtype=np.float64)


@dataclasses.dataclass
class JointGains:
    """Scalar per-joint PD gains for the joint-space baseline."""

    k_p: float = 50.0
    k_d: float = 0.5

    def __post_init__(self):
        if self.k_p < 0 or self.k_d < 0:
            raise ValueError("gains must be non-negative")


def cartesian_pd_torques(p_d, p, v, jac, gains: CartesianGains) -> np.ndarray:
    """Leg torques tau = J^T [K_p (p_d - p) - K_d v].

    All quantities are leg-frame; no clamping here, the actuator model
    limits torques downstream. The damping acts on the absolute foot
    velocity (desired foot velocity is implicitly zero).
    """
    p_d = np.asarray(p_d, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    jac = np.asarray(jac, dtype=np.float64)
    force = gains.kp_diag() * (p_d - p) - gains.kd_diag() * v
    return jac.T @ force


def joint_pd_torques(q_d, q, qd, gains: JointGains) -> np.ndarray:
    """Joint torques tau_i = k_p (q_d,i - q_i) - k_d qd_i."""
    q_d = np.asarray(q_d, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    qd = np.asarray(qd, dtype=np.float64)
    return gains.k_p * (q_d - q) - gains.k_d * qd
