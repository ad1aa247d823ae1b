"""A 1-D linear-quadratic track task for exercising the learner end to end.

Dynamics x' = a_x * x + b_u * u with reward 2 - x^2 - 0.01 u^2 and actions
clipped to [-1, 1]; episodes are a fixed number of steps from a uniform
random start. A discrete Riccati solve gives the unconstrained optimal
feedback gain, whose clipped rollout return serves as the reference
optimum (the clip binds only far from the origin).
"""

import numpy as np

A_X = 0.9
B_U = 0.5
STATE_COST = 1.0
ACTION_COST = 0.01
STEP_BONUS = 2.0
START_RANGE = 2.0


class LinearTrackEnv:
    """Single-owner toy environment with the quadruped env's step protocol."""

    observation_dim = 1
    action_dim = 1
    period = 1.0

    def __init__(self, seed: int = 0, horizon: int = 32):
        self._rng = np.random.default_rng(seed)
        self.horizon = horizon
        self.x = 0.0
        self.steps = 0
        self.normalizer = None

    def reset(self, seed=None):
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self.x = float(self._rng.uniform(-START_RANGE, START_RANGE))
        self.steps = 0
        return np.array([self.x])

    def step(self, action):
        u = float(np.clip(np.asarray(action).reshape(()), -1.0, 1.0))
        reward = STEP_BONUS - STATE_COST * self.x * self.x \
            - ACTION_COST * u * u
        self.x = A_X * self.x + B_U * u
        self.steps += 1
        done = self.steps >= self.horizon
        return np.array([self.x]), reward, done, {"progress": 0.0}


def riccati_gain(tol: float = 1e-14) -> float:
    """Optimal feedback gain u = -k x of the unconstrained problem."""
    p = STATE_COST
    while True:
        p_next = STATE_COST + A_X * A_X * p \
            - (A_X * B_U * p) ** 2 / (ACTION_COST + B_U * B_U * p)
        if abs(p_next - p) < tol:
            break
        p = p_next
    return A_X * B_U * p / (ACTION_COST + B_U * B_U * p)


def optimal_mean_return(episodes: int = 4000, horizon: int = 32,
                        seed: int = 0) -> float:
    """Monte-Carlo mean return of the clipped Riccati policy."""
    k = riccati_gain()
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(episodes):
        x = rng.uniform(-START_RANGE, START_RANGE)
        ep = 0.0
        for _ in range(horizon):
            u = float(np.clip(-k * x, -1.0, 1.0))
            ep += STEP_BONUS - STATE_COST * x * x - ACTION_COST * u * u
            x = A_X * x + B_U * u
        total += ep
    return total / episodes


def policy_mean_return(policy, normalizer=None, episodes: int = 200,
                       horizon: int = 32, seed: int = 1) -> float:
    """Mean return of a trained policy's deterministic actions."""
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(episodes):
        x = rng.uniform(-START_RANGE, START_RANGE)
        ep = 0.0
        for _ in range(horizon):
            obs = np.array([[x]])
            if normalizer is not None:
                obs = normalizer.normalize(obs[0])[None, :]
            u = float(np.clip(policy.mean_action(obs)[0, 0], -1.0, 1.0))
            ep += STEP_BONUS - STATE_COST * x * x - ACTION_COST * u * u
            x = A_X * x + B_U * u
        total += ep
    return total / episodes
