"""Learner tests: GAE, clipped surrogate, gradients, buffer, training loop."""

import os

import numpy as np
import pytest

from _toy import LinearTrackEnv, optimal_mean_return, policy_mean_return
from quadrun.checkpoint import load_checkpoint
from quadrun.nets import (Adam, GaussianPolicy, MLP, clip_grad_norm,
                          gaussian_log_prob)
from quadrun.ppo import (PpoConfig, RolloutBuffer, clipped_surrogate, gae,
                         normalize_advantages, ppo_loss, train)


# ---------------------------------------------------------------------------
# GAE
# ---------------------------------------------------------------------------

def test_gae_single_step():
    adv, ret = gae([1.0], [0.0], [0.0], 0.0, 0.99, 0.95)
    np.testing.assert_allclose(adv, [1.0], atol=1e-15)
    np.testing.assert_allclose(ret, [1.0], atol=1e-15)


def test_gae_two_step_hand_case():
    adv, ret = gae([1.0, 1.0], [0.0, 0.0], [0.0, 0.0], 0.0, 0.99, 0.95)
    np.testing.assert_allclose(adv, [1.9405, 1.0], atol=1e-12)
    np.testing.assert_allclose(ret, adv, atol=1e-15)


def _brute_force_gae(rewards, values, dones, bootstrap, gamma, lam):
    n = len(rewards)

    def delta(t):
        next_v = bootstrap if t == n - 1 else values[t + 1]
        return rewards[t] + gamma * next_v * (1.0 - dones[t]) - values[t]

    adv = np.zeros(n)
    for t in range(n):
        coef = 1.0
        acc = 0.0
        for k in range(t, n):
            acc += coef * delta(k)
            if dones[k]:
                break
            coef *= gamma * lam
        adv[t] = acc
    return adv


def test_gae_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 65))
        rewards = rng.normal(size=n)
        values = rng.normal(size=n)
        dones = (rng.random(n) < 0.15).astype(float)
        bootstrap = float(rng.normal())
        gamma = float(rng.uniform(0.5, 1.0))
        lam = float(rng.uniform(0.0, 1.0))
        adv, ret = gae(rewards, values, dones, bootstrap, gamma, lam)
        expected = _brute_force_gae(rewards, values, dones, bootstrap,
                                    gamma, lam)
        np.testing.assert_allclose(adv, expected, atol=1e-12)
        np.testing.assert_allclose(ret, expected + values, atol=1e-12)


def test_gae_terminal_blocks_bootstrap():
    # A terminal final step must ignore the bootstrap value entirely.
    adv_a, _ = gae([1.0], [0.0], [1.0], 123.0, 0.99, 0.95)
    adv_b, _ = gae([1.0], [0.0], [1.0], -77.0, 0.99, 0.95)
    np.testing.assert_array_equal(adv_a, adv_b)
    np.testing.assert_allclose(adv_a, [1.0], atol=1e-15)


def test_gae_rejects_length_mismatch():
    with pytest.raises(ValueError):
        gae([1.0, 1.0], [0.0], [0.0, 0.0], 0.0, 0.99, 0.95)


# ---------------------------------------------------------------------------
# Clipped surrogate
# ---------------------------------------------------------------------------

def test_surrogate_hand_cases():
    assert clipped_surrogate(1.5, 1.0, 0.2) == pytest.approx(1.2, abs=1e-15)
    assert clipped_surrogate(0.5, -1.0, 0.2) == pytest.approx(-0.8, abs=1e-15)


def test_surrogate_ratio_one_passes_advantage():
    adv = np.array([2.3, -0.7, 0.0, 11.0])
    np.testing.assert_array_equal(clipped_surrogate(np.ones(4), adv, 0.2),
                                  adv)


def test_surrogate_never_exceeds_either_branch():
    rng = np.random.default_rng(1)
    ratio = rng.uniform(0.0, 3.0, size=2000)
    adv = rng.normal(size=2000)
    eps = 0.2
    s = clipped_surrogate(ratio, adv, eps)
    assert np.all(s <= ratio * adv + 1e-12)
    assert np.all(s <= np.clip(ratio, 1 - eps, 1 + eps) * adv + 1e-12)


# ---------------------------------------------------------------------------
# Loss gradients
# ---------------------------------------------------------------------------

def _random_batch(rng, policy, n=24):
    return {
        "observations": rng.normal(size=(n, policy.obs_dim)),
        "actions": rng.normal(scale=0.6, size=(n, policy.act_dim)),
        "log_probs": rng.normal(scale=0.2, size=n) - 2.0,
        "advantages": rng.normal(size=n),
        "returns": rng.normal(size=n),
    }


def _fd_check(policy, batch, cfg, rng, probes=150, eps=1e-6):
    _, grads, _ = ppo_loss(policy, batch, cfg)
    flat_grads = np.concatenate([g.ravel() for g in grads])
    theta = policy.get_flat()
    # Always probe every log-std entry; they sit right after the actor.
    actor_size = sum(p.size for p in policy.actor.parameters())
    idx = set(range(actor_size, actor_size + policy.act_dim))
    idx.update(rng.choice(theta.size, size=probes, replace=False).tolist())
    worst = 0.0
    for i in sorted(idx):
        bumped = theta.copy()
        bumped[i] += eps
        policy.set_flat(bumped)
        up, _, _ = ppo_loss(policy, batch, cfg)
        bumped[i] -= 2 * eps
        policy.set_flat(bumped)
        down, _, _ = ppo_loss(policy, batch, cfg)
        fd = (up - down) / (2 * eps)
        scale = max(abs(fd), abs(flat_grads[i]), 1e-8)
        worst = max(worst, abs(fd - flat_grads[i]) / scale)
    policy.set_flat(theta)
    return worst


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    policy = GaussianPolicy(5, 3, hidden=(8, 6), rng=rng)
    batch = _random_batch(rng, policy)
    cfg = PpoConfig(clip_epsilon=0.2, value_coeff=1.0, entropy_coeff=0.01)
    assert _fd_check(policy, batch, cfg, rng) < 1e-4


def test_loss_gradients_match_fd_without_entropy():
    rng = np.random.default_rng(3)
    policy = GaussianPolicy(6, 2, hidden=(10,), rng=rng)
    batch = _random_batch(rng, policy)
    cfg = PpoConfig(clip_epsilon=0.1, value_coeff=0.5, entropy_coeff=0.0)
    assert _fd_check(policy, batch, cfg, rng) < 1e-4


def test_loss_at_snapshot_equals_advantage_mean():
    # With theta = theta_old every ratio is one and the surrogate term is
    # exactly the batch advantage mean.
    rng = np.random.default_rng(4)
    policy = GaussianPolicy(4, 2, hidden=(8,), rng=rng)
    obs = rng.normal(size=(16, 4))
    actions, logp, _ = policy.act(obs, rng)
    batch = {
        "observations": obs,
        "actions": actions,
        "log_probs": logp,
        "advantages": rng.normal(size=16),
        "returns": rng.normal(size=16),
    }
    cfg = PpoConfig(value_coeff=0.0)
    loss, _, stats = ppo_loss(policy, batch, cfg)
    assert stats["policy_loss"] == pytest.approx(
        -float(np.mean(batch["advantages"])), abs=1e-12)
    assert stats["clip_fraction"] == 0.0


def test_zero_advantages_leave_actor_untouched():
    rng = np.random.default_rng(5)
    policy = GaussianPolicy(4, 2, hidden=(8,), rng=rng)
    batch = _random_batch(rng, policy)
    batch["advantages"] = np.zeros(24)
    cfg = PpoConfig(entropy_coeff=0.0)
    _, grads, _ = ppo_loss(policy, batch, cfg)
    n_actor = len(policy.actor.parameters())
    for g in grads[:n_actor]:
        np.testing.assert_array_equal(g, 0.0)
    np.testing.assert_array_equal(grads[n_actor], 0.0)  # log_std


def _straight_line_pg_grads(policy, batch, cfg):
    """Importance-weighted policy gradient with no clipping machinery."""
    obs = np.asarray(batch["observations"], dtype=policy.dtype)
    actions = np.asarray(batch["actions"], dtype=policy.dtype)
    n = obs.shape[0]
    raw, cache = policy.actor.forward(obs)
    mean = np.tanh(raw)
    logp = gaussian_log_prob(actions, mean, policy.log_std)
    ratio = np.exp(logp - batch["log_probs"])
    dlogp = -(ratio * batch["advantages"]) / n
    std = np.exp(policy.log_std)
    z = (actions - mean) / std
    grad_raw = dlogp[:, None] * (z / std) * (1.0 - mean * mean)
    actor_grads, _ = policy.actor.backward(cache, grad_raw)
    grad_log_std = (dlogp[:, None] * (z * z - 1.0)).sum(axis=0)
    values, vcache = policy.critic.forward(obs)
    err = values[:, 0] - batch["returns"]
    critic_grads, _ = policy.critic.backward(
        vcache, (2.0 * cfg.value_coeff / n) * err[:, None])
    return [*actor_grads, grad_log_std, *critic_grads]


def test_infinite_clip_reduces_to_vanilla_policy_gradient():
    rng = np.random.default_rng(6)
    policy = GaussianPolicy(5, 3, hidden=(8, 6), rng=rng)
    batch = _random_batch(rng, policy)
    cfg = PpoConfig(clip_epsilon=1e12, value_coeff=1.0, entropy_coeff=0.0)
    _, ppo_grads, _ = ppo_loss(policy, batch, cfg)
    pg_grads = _straight_line_pg_grads(policy, batch, cfg)
    for a, b in zip(ppo_grads, pg_grads):
        assert np.max(np.abs(a - b)) < 1e-10


def test_advantage_rescaling_is_invariant_after_normalization():
    rng = np.random.default_rng(7)
    policy = GaussianPolicy(5, 3, hidden=(8, 6), rng=rng)
    batch = _random_batch(rng, policy, n=64)
    cfg = PpoConfig()
    base = dict(batch)
    base["advantages"] = normalize_advantages(batch["advantages"])
    scaled = dict(batch)
    scaled["advantages"] = normalize_advantages(1000.0 * batch["advantages"])
    _, grads_a, _ = ppo_loss(policy, base, cfg)
    _, grads_b, _ = ppo_loss(policy, scaled, cfg)
    for a, b in zip(grads_a, grads_b):
        scale = max(float(np.max(np.abs(a))), 1e-12)
        assert np.max(np.abs(a - b)) / scale < 1e-6


def test_normalize_advantages_moments():
    rng = np.random.default_rng(8)
    adv = normalize_advantages(rng.normal(3.0, 5.0, size=4096))
    assert abs(float(adv.mean())) < 1e-12
    assert float(adv.std()) == pytest.approx(1.0, abs=1e-6)


# ---------------------------------------------------------------------------
# Networks and optimizer
# ---------------------------------------------------------------------------

def test_zero_weights_give_zero_mean_and_value():
    policy = GaussianPolicy(64, 12, rng=np.random.default_rng(9))
    policy.set_flat(np.zeros(policy.get_flat().size))
    obs = np.random.default_rng(10).normal(size=(5, 64))
    np.testing.assert_array_equal(policy.mean_action(obs), 0.0)
    np.testing.assert_array_equal(policy.value(obs), 0.0)


def test_mean_action_is_bounded_and_deterministic():
    rng = np.random.default_rng(11)
    policy = GaussianPolicy(6, 4, hidden=(16,), rng=rng)
    obs = 100.0 * rng.normal(size=(40, 6))
    a1 = policy.mean_action(obs)
    a2 = policy.mean_action(obs)
    np.testing.assert_array_equal(a1, a2)
    assert np.all(np.abs(a1) <= 1.0)


def test_act_samples_around_mean():
    rng = np.random.default_rng(12)
    policy = GaussianPolicy(3, 2, hidden=(8,), rng=rng)
    policy.log_std[:] = np.log(0.3)
    obs = np.tile(rng.normal(size=3), (4000, 1))
    actions, logp, values = policy.act(obs, np.random.default_rng(13))
    mean = policy.mean_action(obs[:1])[0]
    np.testing.assert_allclose(actions.mean(axis=0), mean, atol=0.02)
    np.testing.assert_allclose(actions.std(axis=0), 0.3, atol=0.02)
    assert logp.shape == (4000,)
    assert values.shape == (4000,)


def test_log_prob_matches_scalar_formula():
    rng = np.random.default_rng(14)
    x = rng.normal(size=(20, 3))
    mean = rng.normal(size=(20, 3))
    log_std = rng.uniform(-1.0, 0.5, size=3)
    got = gaussian_log_prob(x, mean, log_std)
    std = np.exp(log_std)
    expected = np.sum(
        -0.5 * ((x - mean) / std) ** 2 - log_std
        - 0.5 * np.log(2.0 * np.pi), axis=1)
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_mlp_backward_matches_fd():
    rng = np.random.default_rng(15)
    net = MLP([4, 7, 3], rng)
    x = rng.normal(size=(5, 4))

    def loss_of(params_flat):
        offset = 0
        for p in net.parameters():
            p[...] = params_flat[offset:offset + p.size].reshape(p.shape)
            offset += p.size
        out, _ = net.forward(x)
        return 0.5 * float(np.sum(out * out))

    out, cache = net.forward(x)
    grads, grad_x = net.backward(cache, out)
    flat = np.concatenate([g.ravel() for g in grads])
    theta = np.concatenate([p.ravel() for p in net.parameters()])
    eps = 1e-6
    for i in rng.choice(theta.size, size=30, replace=False):
        b = theta.copy()
        b[i] += eps
        up = loss_of(b)
        b[i] -= 2 * eps
        down = loss_of(b)
        fd = (up - down) / (2 * eps)
        assert abs(fd - flat[i]) / max(abs(fd), 1e-8) < 1e-5
    loss_of(theta)

    # Input gradient too.
    for i in range(x.size):
        xb = x.copy().ravel()
        xb[i] += eps
        up = 0.5 * float(np.sum(net.forward(xb.reshape(x.shape))[0] ** 2))
        xb[i] -= 2 * eps
        down = 0.5 * float(np.sum(net.forward(xb.reshape(x.shape))[0] ** 2))
        fd = (up - down) / (2 * eps)
        assert abs(fd - grad_x.ravel()[i]) < 1e-5


def test_adam_first_step_is_signed_learning_rate():
    p = np.array([1.0, -2.0, 0.5])
    opt = Adam([p], lr=0.01)
    g = np.array([0.3, -4.0, 0.0])
    opt.step([g])
    np.testing.assert_allclose(p, [1.0 - 0.01, -2.0 + 0.01, 0.5], atol=1e-6)


def test_adam_rejects_mismatched_grads():
    opt = Adam([np.zeros(3)], lr=0.1)
    with pytest.raises(ValueError):
        opt.step([np.zeros(3), np.zeros(2)])


def test_grad_norm_clip():
    g = [np.array([3.0, 0.0]), np.array([4.0])]
    norm = clip_grad_norm(g, 2.5)
    assert norm == pytest.approx(5.0)
    total = np.sqrt(sum(float(np.sum(x * x)) for x in g))
    assert total == pytest.approx(2.5)
    g2 = [np.array([0.3, 0.4])]
    clip_grad_norm(g2, 2.5)
    np.testing.assert_allclose(g2[0], [0.3, 0.4])


def test_log_std_clamp():
    policy = GaussianPolicy(3, 2, hidden=(4,), rng=np.random.default_rng(16))
    policy.log_std[:] = [7.0, -12.0]
    policy.clamp_log_std()
    np.testing.assert_array_equal(policy.log_std, [1.0, -5.0])


def test_flat_round_trip():
    policy = GaussianPolicy(5, 3, hidden=(6,), rng=np.random.default_rng(17))
    theta = policy.get_flat()
    policy.set_flat(np.arange(theta.size, dtype=float))
    np.testing.assert_array_equal(policy.get_flat(),
                                  np.arange(theta.size, dtype=float))
    with pytest.raises(ValueError):
        policy.set_flat(np.zeros(theta.size + 1))


def test_float32_mode_runs():
    rng = np.random.default_rng(18)
    policy = GaussianPolicy(5, 3, hidden=(8,), rng=rng, dtype=np.float32)
    assert policy.actor.weights[0].dtype == np.float32
    batch = _random_batch(rng, policy)
    cfg = PpoConfig(float32=True)
    loss, grads, _ = ppo_loss(policy, batch, cfg)
    assert np.isfinite(loss)
    assert grads[0].dtype == np.float32


# ---------------------------------------------------------------------------
# Rollout buffer
# ---------------------------------------------------------------------------

def test_buffer_flattening_is_time_major():
    buf = RolloutBuffer(steps=2, num_envs=3, obs_dim=1, act_dim=1)
    for t in range(2):
        obs = np.array([[10 * t + e] for e in range(3)], dtype=float)
        buf.add(obs, obs, np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3))
    data = buf.compute_targets(np.zeros(3), 0.99, 0.95)
    np.testing.assert_array_equal(
        data["observations"].ravel(), [0, 1, 2, 10, 11, 12])


def test_buffer_gae_runs_per_environment():
    steps, n_envs = 5, 3
    rng = np.random.default_rng(19)
    buf = RolloutBuffer(steps, n_envs, obs_dim=2, act_dim=1)
    rewards = rng.normal(size=(steps, n_envs))
    values = rng.normal(size=(steps, n_envs))
    dones = (rng.random((steps, n_envs)) < 0.3).astype(float)
    for t in range(steps):
        buf.add(np.zeros((n_envs, 2)), np.zeros((n_envs, 1)), np.zeros(n_envs),
                rewards[t], values[t], dones[t])
    bootstrap = rng.normal(size=n_envs)
    data = buf.compute_targets(bootstrap, 0.97, 0.9)
    adv = data["advantages"].reshape(steps, n_envs)
    for e in range(n_envs):
        expected, _ = gae(rewards[:, e], values[:, e], dones[:, e],
                          float(bootstrap[e]), 0.97, 0.9)
        np.testing.assert_allclose(adv[:, e], expected, atol=1e-12)


def test_buffer_overflow_and_underflow():
    buf = RolloutBuffer(1, 2, 1, 1)
    args = (np.zeros((2, 1)), np.zeros((2, 1)), np.zeros(2), np.zeros(2),
            np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        buf.compute_targets(np.zeros(2), 0.99, 0.95)
    buf.add(*args)
    with pytest.raises(IndexError):
        buf.add(*args)
    assert buf.full
    buf.reset()
    assert not buf.full


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _toy_config(**overrides):
    base = dict(learning_rate=3e-4, horizon=2048, num_envs=8,
                minibatch_size=128, epochs=10, hidden=(64, 64),
                normalize_observations=True, seed=7, checkpoint_interval=0)
    base.update(overrides)
    return PpoConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        PpoConfig(horizon=100, num_envs=8).validate()
    with pytest.raises(ValueError):
        PpoConfig(minibatch_size=10000, horizon=4096).validate()
    PpoConfig().validate()


def test_zero_total_steps_writes_untrained_checkpoint(tmp_path):
    cfg = _toy_config()
    res = train(lambda i: LinearTrackEnv(seed=100 + i), cfg, total_steps=0,
                out_dir=str(tmp_path))
    assert res.iterations == 0
    assert res.env_steps == 0
    assert not res.diverged
    policy, _, meta = load_checkpoint(res.checkpoint_path)
    assert meta["iteration"] == 0
    # The checkpoint must hold the untouched initial parameters.
    reference = GaussianPolicy(1, 1, hidden=cfg.hidden,
                               rng=np.random.default_rng(cfg.seed),
                               log_std_init=cfg.log_std_init)
    np.testing.assert_array_equal(policy.get_flat(), reference.get_flat())
    with open(res.metrics_path) as fh:
        lines = fh.read().strip().splitlines()
    assert len(lines) == 1  # header only


def test_training_is_deterministic(tmp_path):
    outputs = []
    for name in ("a", "b"):
        cfg = _toy_config(seed=21)
        res = train(lambda i: LinearTrackEnv(seed=500 + i), cfg,
                    total_steps=3 * cfg.horizon,
                    out_dir=str(tmp_path / name))
        with open(res.metrics_path, "rb") as fh:
            metrics = fh.read()
        with open(res.checkpoint_path, "rb") as fh:
            ckpt = fh.read()
        outputs.append((metrics, ckpt))
    assert outputs[0][0] == outputs[1][0]
    assert outputs[0][1] == outputs[1][1]


def test_training_metrics_schema(tmp_path):
    cfg = _toy_config(checkpoint_interval=1)
    res = train(lambda i: LinearTrackEnv(seed=300 + i), cfg,
                total_steps=2 * cfg.horizon, out_dir=str(tmp_path))
    with open(res.metrics_path) as fh:
        lines = fh.read().strip().splitlines()
    header = lines[0].split(",")
    assert header[:4] == ["iteration", "env_steps", "episodes",
                          "mean_episode_reward"]
    assert len(lines) == 3
    first = lines[1].split(",")
    assert int(first[0]) == 1
    assert int(first[1]) == cfg.horizon
    assert os.path.exists(tmp_path / "checkpoint_00001.bin")
    assert os.path.exists(tmp_path / "checkpoint_00002.bin")


def test_stop_callback_ends_training(tmp_path):
    cfg = _toy_config()
    res = train(lambda i: LinearTrackEnv(seed=400 + i), cfg,
                total_steps=50 * cfg.horizon, out_dir=str(tmp_path),
                stop_callback=lambda row: row["iteration"] >= 2)
    assert res.iterations == 2
    assert not res.diverged


@pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
def test_divergent_run_is_flagged(tmp_path):
    # One Adam step of this size blows the critic output past 1e200, so
    # the squared value error overflows to inf on the next minibatch.
    cfg = _toy_config(learning_rate=1e200)
    res = train(lambda i: LinearTrackEnv(seed=600 + i), cfg,
                total_steps=20 * cfg.horizon, out_dir=str(tmp_path))
    assert res.diverged
    assert res.iterations < 20


def test_toy_task_reaches_analytic_optimum(tmp_path):
    cfg = _toy_config()
    res = train(lambda i: LinearTrackEnv(seed=100 + i), cfg,
                total_steps=200_000, out_dir=str(tmp_path))
    assert not res.diverged
    achieved = policy_mean_return(res.policy, res.normalizer)
    optimal = optimal_mean_return()
    assert achieved >= 0.95 * optimal
