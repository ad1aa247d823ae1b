"""On-policy learner: GAE, clipped-surrogate updates, rollout loop.

The loss and its gradients are written out by hand against the nets module
so they can be checked against finite differences; the trainer wires the
vectorized environment, the advantage pipeline, and Adam into the usual
collect/update iteration with CSV metrics and periodic checkpoints.
"""

from __future__ import annotations

import csv
import dataclasses
import os

import numpy as np

from .checkpoint import save_checkpoint
from .env import ObservationNormalizer, VectorEnv
from .nets import Adam, GaussianPolicy, clip_grad_norm, gaussian_log_prob


@dataclasses.dataclass
class PpoConfig:
    """Optimization hyperparameters (defaults as tuned for this task)."""

    learning_rate: float = 1e-4
    epochs: int = 10
    minibatch_size: int = 128
    gamma: float = 0.99
    lam: float = 0.95
    clip_epsilon: float = 0.2
    value_coeff: float = 1.0
    entropy_coeff: float = 0.0
    horizon: int = 4096            # total transitions per iteration
    num_envs: int = 8
    num_workers: int | None = None  # thread pool size; defaults to num_envs
    hidden: tuple[int, ...] = (200, 100)
    log_std_init: float = -0.5
    log_std_bounds: tuple[float, float] = (-5.0, 1.0)
    max_grad_norm: float | None = None  # optional global-norm clip, e.g. 0.5
    advantage_norm: bool = True
    normalize_observations: bool = True
    float32: bool = False
    checkpoint_interval: int = 25   # iterations between periodic checkpoints
    seed: int = 0

    def validate(self) -> None:
        if self.horizon % self.num_envs != 0:
            raise ValueError(
                f"horizon {self.horizon} must divide evenly across "
                f"{self.num_envs} environments")
        if self.minibatch_size > self.horizon:
            raise ValueError("minibatch larger than one rollout")
        if not (0.0 < self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ValueError("gamma/lam out of range")

    @property
    def dtype(self):
        return np.float32 if self.float32 else np.float64


# ---------------------------------------------------------------------------
# Advantage estimation
# ---------------------------------------------------------------------------

def gae(rewards, values, dones, bootstrap_value, gamma: float, lam: float,
        ) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and value targets for one sequence.

    `dones[t]` marks a terminal transition; the recursion restarts there
    and the bootstrap value only feeds a non-terminal final step. Returns
    (advantages, returns) with returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    n = rewards.shape[0]
    if values.shape[0] != n or dones.shape[0] != n:
        raise ValueError("sequence lengths differ")
    advantages = np.empty(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        next_value = bootstrap_value if t == n - 1 else values[t + 1]
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        advantages[t] = last
    return advantages, advantages + values


# ---------------------------------------------------------------------------
# Clipped surrogate
# ---------------------------------------------------------------------------

def clipped_surrogate(ratio, advantage, epsilon: float):
    """Per-sample PPO objective min(r*A, clip(r, 1-eps, 1+eps)*A)."""
    ratio = np.asarray(ratio, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    return np.minimum(ratio * advantage,
                      np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantage)


def ppo_loss(policy: GaussianPolicy, batch: dict, cfg: PpoConfig,
             ) -> tuple[float, list[np.ndarray], dict]:
    """Loss, exact parameter gradients, and diagnostics for one minibatch.

    `batch` carries observations, (pre-clamp) actions, old log-probs,
    advantages and returns. The old-policy snapshot enters through the
    stored log-probs. Gradient layout matches policy.parameters().
    """
    obs = np.asarray(batch["observations"], dtype=policy.dtype)
    actions = np.asarray(batch["actions"], dtype=policy.dtype)
    logp_old = np.asarray(batch["log_probs"], dtype=np.float64)
    adv = np.asarray(batch["advantages"], dtype=np.float64)
    returns = np.asarray(batch["returns"], dtype=np.float64)
    n = obs.shape[0]

    raw, actor_cache = policy.actor.forward(obs)
    mean = np.tanh(raw)
    logp = gaussian_log_prob(actions, mean, policy.log_std)
    ratio = np.exp(logp - logp_old)
    surrogate = clipped_surrogate(ratio, adv, cfg.clip_epsilon)
    policy_loss = -float(np.mean(surrogate))

    values, critic_cache = policy.critic.forward(obs)
    value_err = values[:, 0] - returns
    value_loss = cfg.value_coeff * float(np.mean(value_err * value_err))

    # Diagonal-Gaussian entropy is state independent.
    entropy = float(np.sum(policy.log_std) + 0.5 * policy.act_dim
                    * (1.0 + np.log(2.0 * np.pi)))
    loss = policy_loss + value_loss - cfg.entropy_coeff * entropy

    # The min() picks the unclipped branch (gradient r*A through logp)
    # or the clipped one, whose gradient vanishes because clip saturates
    # exactly when the branches differ.
    unclipped = ratio * adv
    use_unclipped = unclipped <= surrogate
    dloss_dlogp = np.where(use_unclipped, -unclipped / n, 0.0)

    std = np.exp(policy.log_std)
    z = (actions - mean) / std
    grad_mean = dloss_dlogp[:, None] * (z / std)
    grad_raw = grad_mean * (1.0 - mean * mean)
    actor_grads, _ = policy.actor.backward(actor_cache,
                                           grad_raw.astype(policy.dtype))

    grad_log_std = (dloss_dlogp[:, None] * (z * z - 1.0)).sum(axis=0)
    grad_log_std -= cfg.entropy_coeff
    grad_log_std = grad_log_std.astype(policy.dtype)

    grad_values = (2.0 * cfg.value_coeff / n) * value_err[:, None]
    critic_grads, _ = policy.critic.backward(critic_cache,
                                             grad_values.astype(policy.dtype))

    grads = [*actor_grads, grad_log_std, *critic_grads]
    stats = {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy,
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > cfg.clip_epsilon)),
        "approx_kl": float(np.mean(logp_old - logp)),
    }
    return float(loss), grads, stats


# ---------------------------------------------------------------------------
# Rollout storage
# ---------------------------------------------------------------------------

class RolloutBuffer:
    """Fixed-size on-policy storage, time-major over parallel environments."""

    def __init__(self, steps: int, num_envs: int, obs_dim: int, act_dim: int):
        self.steps = steps
        self.num_envs = num_envs
        self.observations = np.zeros((steps, num_envs, obs_dim))
        self.actions = np.zeros((steps, num_envs, act_dim))
        self.log_probs = np.zeros((steps, num_envs))
        self.rewards = np.zeros((steps, num_envs))
        self.values = np.zeros((steps, num_envs))
        self.dones = np.zeros((steps, num_envs))
        self.pos = 0

    def add(self, obs, actions, log_probs, rewards, values, dones) -> None:
        if self.pos >= self.steps:
            raise IndexError("rollout buffer full")
        t = self.pos
        self.observations[t] = obs
        self.actions[t] = actions
        self.log_probs[t] = log_probs
        self.rewards[t] = rewards
        self.values[t] = values
        self.dones[t] = dones
        self.pos += 1

    @property
    def full(self) -> bool:
        return self.pos == self.steps

    def reset(self) -> None:
        self.pos = 0

    def compute_targets(self, bootstrap_values, gamma: float, lam: float,
                        ) -> dict:
        """Per-environment GAE, then flatten to one batch of transitions."""
        if not self.full:
            raise ValueError("buffer not full")
        bootstrap_values = np.asarray(bootstrap_values, dtype=np.float64)
        advantages = np.empty((self.steps, self.num_envs))
        returns = np.empty((self.steps, self.num_envs))
        for e in range(self.num_envs):
            advantages[:, e], returns[:, e] = gae(
                self.rewards[:, e], self.values[:, e], self.dones[:, e],
                float(bootstrap_values[e]), gamma, lam)
        n = self.steps * self.num_envs
        return {
            "observations": self.observations.reshape(n, -1),
            "actions": self.actions.reshape(n, -1),
            "log_probs": self.log_probs.reshape(n),
            "advantages": advantages.reshape(n),
            "returns": returns.reshape(n),
        }


def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
    """Batch standardization to zero mean, unit std."""
    return (advantages - advantages.mean()) / (advantages.std() + 1e-8)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

METRIC_COLUMNS = (
    "iteration", "env_steps", "episodes", "mean_episode_reward",
    "max_episode_reward", "mean_episode_length", "mean_speed",
    "policy_loss", "value_loss", "entropy", "clip_fraction", "approx_kl",
    "log_std_mean",
)


@dataclasses.dataclass
class TrainResult:
    checkpoint_path: str
    metrics_path: str
    iterations: int
    env_steps: int
    diverged: bool
    policy: GaussianPolicy
    normalizer: ObservationNormalizer | None


def train(env_factory, cfg: PpoConfig, total_steps: int, out_dir: str,
          stop_callback=None) -> TrainResult:
    """Run PPO until `total_steps` environment transitions (or early stop).

    `env_factory(index)` builds one environment per worker slot; the
    factory owns per-environment seeding. Metrics go to metrics.csv (full
    float precision), checkpoints to checkpoint_*.bin plus a final
    checkpoint_final.bin. `stop_callback(row_dict)` may end training early
    by returning True. A non-finite loss halts immediately with the
    diverged flag set; the run is otherwise deterministic for a fixed
    config, seed, and worker count.
    """
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    envs = [env_factory(i) for i in range(cfg.num_envs)]
    obs_dim = int(getattr(envs[0], "observation_dim"))
    act_dim = int(getattr(envs[0], "action_dim"))
    normalizer = (ObservationNormalizer(obs_dim)
                  if cfg.normalize_observations else None)
    policy = GaussianPolicy(obs_dim, act_dim, hidden=cfg.hidden, rng=rng,
                            log_std_init=cfg.log_std_init,
                            log_std_bounds=cfg.log_std_bounds,
                            dtype=cfg.dtype)
    optimizer = Adam(policy.parameters(), lr=cfg.learning_rate)
    steps_per_env = cfg.horizon // cfg.num_envs
    buffer = RolloutBuffer(steps_per_env, cfg.num_envs, obs_dim, act_dim)

    metrics_path = os.path.join(out_dir, "metrics.csv")
    final_path = os.path.join(out_dir, "checkpoint_final.bin")
    iteration = 0
    env_steps = 0
    diverged = False
    last_reward = float("nan")
    last_speed = float("nan")
    last_length = float("nan")

    metrics_file = open(metrics_path, "w", newline="")
    writer = csv.writer(metrics_file)
    writer.writerow(METRIC_COLUMNS)

    def emit_checkpoint(path: str) -> None:
        save_checkpoint(path, policy, normalizer,
                        iteration=iteration, env_steps=env_steps)

    try:
        with VectorEnv(envs, normalizer=normalizer,
                       max_workers=cfg.num_workers or cfg.num_envs) as vec:
            obs = vec.reset_all()
            while env_steps < total_steps and not diverged:
                buffer.reset()
                ep_rewards: list[float] = []
                ep_lengths: list[int] = []
                ep_speeds: list[float] = []
                for _ in range(steps_per_env):
                    actions, logp, values = policy.act(obs, rng)
                    next_obs, rewards, dones, infos = vec.step(
                        np.clip(actions, -1.0, 1.0))
                    buffer.add(obs, actions, logp, rewards, values, dones)
                    for info in infos:
                        ep = info.get("episode")
                        if ep is not None:
                            ep_rewards.append(ep["reward"])
                            ep_lengths.append(ep["length"])
                            ep_speeds.append(ep["speed"])
                    obs = next_obs
                bootstrap = policy.value(np.asarray(obs, dtype=policy.dtype))
                vec.sync_normalizer()

                data = buffer.compute_targets(bootstrap, cfg.gamma, cfg.lam)
                if cfg.advantage_norm:
                    data["advantages"] = normalize_advantages(
                        data["advantages"])
                total = data["advantages"].shape[0]
                iter_stats = None
                for _ in range(cfg.epochs):
                    perm = rng.permutation(total)
                    for start in range(0, total, cfg.minibatch_size):
                        idx = perm[start:start + cfg.minibatch_size]
                        minibatch = {k: v[idx] for k, v in data.items()}
                        loss, grads, stats = ppo_loss(policy, minibatch, cfg)
                        if not np.isfinite(loss):
                            diverged = True
                            break
                        if cfg.max_grad_norm is not None:
                            clip_grad_norm(grads, cfg.max_grad_norm)
                        optimizer.step(grads)
                        policy.clamp_log_std()
                        iter_stats = stats
                    if diverged:
                        break

                iteration += 1
                env_steps += cfg.horizon
                if ep_rewards:
                    last_reward = float(np.mean(ep_rewards))
                    last_speed = float(np.mean(ep_speeds))
                    last_length = float(np.mean(ep_lengths))
                row = {
                    "iteration": iteration,
                    "env_steps": env_steps,
                    "episodes": len(ep_rewards),
                    "mean_episode_reward": last_reward,
                    "max_episode_reward": (float(np.max(ep_rewards))
                                           if ep_rewards else float("nan")),
                    "mean_episode_length": last_length,
                    "mean_speed": last_speed,
                    "policy_loss": (iter_stats or {}).get("policy_loss",
                                                          float("nan")),
                    "value_loss": (iter_stats or {}).get("value_loss",
                                                         float("nan")),
                    "entropy": (iter_stats or {}).get("entropy", float("nan")),
                    "clip_fraction": (iter_stats or {}).get("clip_fraction",
                                                            float("nan")),
                    "approx_kl": (iter_stats or {}).get("approx_kl",
                                                        float("nan")),
                    "log_std_mean": float(np.mean(policy.log_std)),
                }
                writer.writerow(_format_row(row))
                metrics_file.flush()
                if cfg.checkpoint_interval > 0 \
                        and iteration % cfg.checkpoint_interval == 0:
                    emit_checkpoint(os.path.join(
                        out_dir, f"checkpoint_{iteration:05d}.bin"))
                if stop_callback is not None and stop_callback(row):
                    break
    finally:
        metrics_file.close()

    emit_checkpoint(final_path)
    return TrainResult(checkpoint_path=final_path, metrics_path=metrics_path,
                       iterations=iteration, env_steps=env_steps,
                       diverged=diverged, policy=policy,
                       normalizer=normalizer)


def _format_row(row: dict) -> list[str]:
    out = []
    for key in METRIC_COLUMNS:
        value = row[key]
        if isinstance(value, int):
            out.append(str(value))
        else:
            out.append(f"{value:.17g}")
    return out
