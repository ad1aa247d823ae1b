"""Checkpoint binary format: round trips, header validation, inspection."""

import numpy as np
import pytest

from quadrun.checkpoint import (CheckpointError, inspect_checkpoint,
                                load_checkpoint, save_checkpoint)
from quadrun.env import ObservationNormalizer
from quadrun.nets import GaussianPolicy


def _make_policy(obs_dim=7, act_dim=3, hidden=(10, 6), seed=0):
    return GaussianPolicy(obs_dim, act_dim, hidden=hidden,
                          rng=np.random.default_rng(seed))


def _make_normalizer(dim=7, seed=1):
    norm = ObservationNormalizer(dim)
    rng = np.random.default_rng(seed)
    for row in rng.normal(2.0, 3.0, size=(50, dim)):
        norm.update(row)
    return norm


def test_round_trip_is_bitwise_exact(tmp_path):
    path = str(tmp_path / "ckpt.bin")
    policy = _make_policy()
    policy.log_std[:] = [-0.3, 0.1, -2.0]
    norm = _make_normalizer()
    save_checkpoint(path, policy, norm, iteration=42, env_steps=172032)

    loaded, loaded_norm, meta = load_checkpoint(path)
    np.testing.assert_array_equal(loaded.get_flat(), policy.get_flat())
    assert meta["iteration"] == 42
    assert meta["env_steps"] == 172032
    assert meta["obs_dim"] == 7
    assert meta["act_dim"] == 3
    assert meta["hidden"] == (10, 6)
    c0, m0, s0 = norm.state_arrays()
    c1, m1, s1 = loaded_norm.state_arrays()
    assert c1 == c0
    np.testing.assert_array_equal(m1, m0)
    np.testing.assert_array_equal(s1, s0)


def test_round_trip_without_normalizer(tmp_path):
    path = str(tmp_path / "ckpt.bin")
    policy = _make_policy(hidden=(5,))
    save_checkpoint(path, policy)
    loaded, norm, meta = load_checkpoint(path)
    assert norm is None
    assert meta["hidden"] == (5,)
    np.testing.assert_array_equal(loaded.get_flat(), policy.get_flat())


def test_float32_policy_saves_as_float64(tmp_path):
    path = str(tmp_path / "ckpt.bin")
    policy = GaussianPolicy(4, 2, hidden=(6,), rng=np.random.default_rng(2),
                            dtype=np.float32)
    save_checkpoint(path, policy)
    loaded, _, _ = load_checkpoint(path)
    assert loaded.get_flat().dtype == np.float64
    np.testing.assert_allclose(loaded.get_flat(),
                               policy.get_flat().astype(np.float64))


def test_loaded_policy_reproduces_outputs(tmp_path):
    path = str(tmp_path / "ckpt.bin")
    policy = _make_policy()
    save_checkpoint(path, policy)
    loaded, _, _ = load_checkpoint(path)
    obs = np.random.default_rng(3).normal(size=(9, 7))
    np.testing.assert_array_equal(loaded.mean_action(obs),
                                  policy.mean_action(obs))
    np.testing.assert_array_equal(loaded.value(obs), policy.value(obs))


def test_bad_magic_rejected(tmp_path):
    path = str(tmp_path / "ckpt.bin")
    save_checkpoint(path, _make_policy())
    with open(path, "r+b") as fh:
        fh.write(b"JUNK")
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(path)


def test_unknown_version_rejected(tmp_path):
    path = str(tmp_path / "ckpt.bin")
    save_checkpoint(path, _make_policy())
    with open(path, "r+b") as fh:
        fh.seek(4)
        fh.write((99).to_bytes(4, "little"))
    with pytest.raises(CheckpointError, match="version 99"):
        load_checkpoint(path)


def test_truncated_file_rejected(tmp_path):
    path = str(tmp_path / "ckpt.bin")
    save_checkpoint(path, _make_policy(), _make_normalizer())
    with open(path, "rb") as fh:
        data = fh.read()
    short = str(tmp_path / "short.bin")
    with open(short, "wb") as fh:
        fh.write(data[:-9])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(short)


def test_trailing_bytes_rejected(tmp_path):
    path = str(tmp_path / "ckpt.bin")
    save_checkpoint(path, _make_policy())
    with open(path, "ab") as fh:
        fh.write(b"\x00" * 16)
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)


def test_normalizer_dimension_mismatch_rejected(tmp_path):
    path = str(tmp_path / "ckpt.bin")
    with pytest.raises(CheckpointError, match="dimension"):
        save_checkpoint(path, _make_policy(obs_dim=7), _make_normalizer(dim=5))


def test_inspect_reports_structure(tmp_path):
    path = str(tmp_path / "ckpt.bin")
    policy = _make_policy(obs_dim=7, act_dim=3, hidden=(10, 6))
    norm = _make_normalizer()
    save_checkpoint(path, policy, norm, iteration=5, env_steps=1000)
    info = inspect_checkpoint(path)
    assert info["iteration"] == 5
    assert info["env_steps"] == 1000
    assert info["obs_dim"] == 7
    assert info["act_dim"] == 3
    assert info["hidden"] == (10, 6)
    assert info["has_normalizer"]
    assert info["normalizer_samples"] == 50.0
    assert info["layers"] == [
        ("actor", 7, 10), ("actor", 10, 6), ("actor", 6, 3),
        ("critic", 7, 10), ("critic", 10, 6), ("critic", 6, 1),
    ]
    assert info["parameter_count"] == policy.get_flat().size
    import os
    assert info["file_bytes"] == os.path.getsize(path)


def test_inspect_without_normalizer(tmp_path):
    path = str(tmp_path / "ckpt.bin")
    save_checkpoint(path, _make_policy())
    info = inspect_checkpoint(path)
    assert not info["has_normalizer"]
    assert "normalizer_samples" not in info


def test_atomic_write_leaves_no_temp_file(tmp_path):
    path = str(tmp_path / "ckpt.bin")
    save_checkpoint(path, _make_policy())
    leftovers = [p.name for p in tmp_path.iterdir() if p.name != "ckpt.bin"]
    assert leftovers == []
