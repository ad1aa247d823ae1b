"""Dense networks with hand-written backprop, and a minimal Adam.

numpy only. The actor is a tanh MLP whose output is squashed through a
final tanh so mean actions live in [-1,1]; exploration noise is diagonal
Gaussian with a state-independent, learnable log standard deviation. The
critic shares the architecture with a scalar linear head. Float64 by
default; float32 is available for training throughput.
"""

from __future__ import annotations

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


class MLP:
    """Fully connected network, tanh hidden layers, linear output.

    Parameters are exposed as the flat list [W0, b0, W1, b1, ...] so an
    optimizer (or a finite-difference probe) can walk them generically.
    Weights are Gaussian with 1/sqrt(fan_in) scale; `final_scale` shrinks
    the output layer, which keeps initial policy means near zero.
    """

    def __init__(self, sizes: list[int], rng: np.random.Generator,
                 final_scale: float = 1.0, dtype=np.float64):
        self.sizes = list(sizes)
        self.dtype = dtype
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        last = len(sizes) - 2
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = (final_scale if i == last else 1.0) / math.sqrt(n_in)
            w = rng.normal(0.0, scale, size=(n_in, n_out)).astype(dtype)
            self.weights.append(w)
            self.biases.append(np.zeros(n_out, dtype=dtype))

    def parameters(self) -> list[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Returns (output, cache); cache holds each layer's input."""
        h = np.asarray(x, dtype=self.dtype)
        if h.ndim == 1:
            h = h[None, :]
        cache = [h]
        n = len(self.weights)
        for i in range(n):
            z = h @ self.weights[i] + self.biases[i]
            h = np.tanh(z) if i < n - 1 else z
            cache.append(h)
        return h, cache

    def backward(self, cache: list[np.ndarray], grad_out: np.ndarray,
                 ) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients for parameters() order plus the input gradient.

        `cache` is the forward cache; `grad_out` is dLoss/d output, shape
        (batch, sizes[-1]).
        """
        g = np.asarray(grad_out, dtype=self.dtype)
        n = len(self.weights)
        grad_w: list[np.ndarray] = [None] * n
        grad_b: list[np.ndarray] = [None] * n
        for i in range(n - 1, -1, -1):
            if i < n - 1:
                # cache[i + 1] is tanh(z); its derivative is 1 - tanh^2.
                g = g * (1.0 - cache[i + 1] * cache[i + 1])
            grad_w[i] = cache[i].T @ g
            grad_b[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
        grads = []
        for w, b in zip(grad_w, grad_b):
            grads.append(w)
            grads.append(b)
        return grads, g


class GaussianPolicy:
    """Actor-critic pair with a diagonal-Gaussian action distribution.

    The actor MLP emits a pre-squash mean; actions are sampled around
    tanh(raw mean) and the log-likelihood is that of the unclamped
    Gaussian sample (callers clamp to [-1,1] for execution only). The
    log-std vector is state independent and clamped to `log_std_bounds`
    after every optimizer step.
    """

    def __init__(self, obs_dim: int, act_dim: int,
                 hidden: tuple[int, ...] = (200, 100),
                 rng: np.random.Generator | None = None,
                 log_std_init: float = -0.5,
                 log_std_bounds: tuple[float, float] = (-5.0, 1.0),
                 dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.hidden = tuple(hidden)
        self.log_std_bounds = log_std_bounds
        self.dtype = dtype
        sizes = [obs_dim, *hidden, act_dim]
        self.actor = MLP(sizes, rng, final_scale=0.01, dtype=dtype)
        self.critic = MLP([obs_dim, *hidden, 1], rng, dtype=dtype)
        self.log_std = np.full(act_dim, log_std_init, dtype=dtype)

    def parameters(self) -> list[np.ndarray]:
        return [*self.actor.parameters(), self.log_std,
                *self.critic.parameters()]

    def clamp_log_std(self) -> None:
        np.clip(self.log_std, *self.log_std_bounds, out=self.log_std)

    # -- inference ---------------------------------------------------------

    def mean_action(self, obs: np.ndarray) -> np.ndarray:
        raw, _ = self.actor.forward(obs)
        return np.tanh(raw)

    def value(self, obs: np.ndarray) -> np.ndarray:
        out, _ = self.critic.forward(obs)
        return out[:, 0]

    def act(self, obs: np.ndarray, rng: np.random.Generator,
            ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Sample actions for a batch: (actions, log-probs, values).

        Actions are the raw Gaussian samples; they may stick out of
        [-1,1] and the caller clamps before execution, keeping the stored
        likelihood consistent with what was sampled.
        """
        obs = np.asarray(obs, dtype=self.dtype)
        raw, _ = self.actor.forward(obs)
        mean = np.tanh(raw)
        std = np.exp(self.log_std)
        noise = rng.standard_normal(mean.shape).astype(self.dtype)
        actions = mean + std * noise
        logp = gaussian_log_prob(actions, mean, self.log_std)
        return actions, logp, self.value(obs)

    # -- serialization helpers --------------------------------------------

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, vec: np.ndarray) -> None:
        offset = 0
        for p in self.parameters():
            n = p.size
            p[...] = vec[offset:offset + n].reshape(p.shape)
            offset += n
        if offset != vec.size:
            raise ValueError(f"flat vector has {vec.size} entries, "
                             f"policy needs {offset}")


def gaussian_log_prob(x: np.ndarray, mean: np.ndarray,
                      log_std: np.ndarray) -> np.ndarray:
    """Row-wise log density of a diagonal Gaussian (batch, dims)."""
    z = (x - mean) * np.exp(-log_std)
    return (-0.5 * np.sum(z * z, axis=1) - np.sum(log_std)
            - 0.5 * x.shape[1] * LOG_2PI)


class Adam:
    """Adam over a list of parameter arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameters")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale gradients in place to a global L2 norm cap; returns the norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm > 0.0:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total
