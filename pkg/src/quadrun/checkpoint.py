"""Versioned binary checkpoints for the policy and its normalizer.

Byte layout, all little-endian, no padding:

    offset 0   magic ``QRCP`` (4 bytes)
    4          format version, uint32 (currently 1)
    8          training iteration, uint64
    16         environment steps so far, uint64
    24         observation dim, uint32
    28         action dim, uint32
    32         hidden layer count H, uint32, then H widths as uint32
    ...        normalizer flag, uint8: 0 absent, 1 present
    ...        if present: sample count float64, then mean and m2, each
               observation-dim float64
    ...        log-std vector, action-dim float64
    ...        actor then critic, layer by layer: weight matrix row-major
               float64, then its bias vector float64

Weights are stored as float64 regardless of the training dtype, so a
checkpoint round trip is exact for double-precision policies and a
widening cast otherwise.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .env import ObservationNormalizer
from .nets import GaussianPolicy

MAGIC = b"QRCP"
VERSION = 1


class CheckpointError(RuntimeError):
    """Malformed, truncated, or incompatible checkpoint file."""


def save_checkpoint(path: str, policy: GaussianPolicy,
                    normalizer: ObservationNormalizer | None = None,
                    iteration: int = 0, env_steps: int = 0) -> None:
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    buf += struct.pack("<QQ", iteration, env_steps)
    buf += struct.pack("<II", policy.obs_dim, policy.act_dim)
    buf += struct.pack("<I", len(policy.hidden))
    buf += struct.pack(f"<{len(policy.hidden)}I", *policy.hidden)
    if normalizer is None:
        buf += struct.pack("<B", 0)
    else:
        count, mean, m2 = normalizer.state_arrays()
        if mean.shape[0] != policy.obs_dim:
            raise CheckpointError("normalizer dimension does not match policy")
        buf += struct.pack("<B", 1)
        buf += struct.pack("<d", count)
        buf += mean.astype("<f8").tobytes()
        buf += m2.astype("<f8").tobytes()
    buf += np.asarray(policy.log_std, dtype="<f8").tobytes()
    for mlp in (policy.actor, policy.critic):
        for w, b in zip(mlp.weights, mlp.biases):
            buf += np.ascontiguousarray(w, dtype="<f8").tobytes()
            buf += np.asarray(b, dtype="<f8").tobytes()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count: int, shape=None) -> np.ndarray:
        arr = np.frombuffer(self.take(8 * count), dtype="<f8").copy()
        return arr.reshape(shape) if shape is not None else arr


def _read_header(reader: _Reader) -> dict:
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{reader.path}: not a checkpoint file")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointError(
            f"{reader.path}: format version {version} is not supported "
            f"(this build reads version {VERSION})")
    iteration, env_steps = reader.unpack("<QQ")
    obs_dim, act_dim = reader.unpack("<II")
    (n_hidden,) = reader.unpack("<I")
    hidden = reader.unpack(f"<{n_hidden}I")
    return {
        "version": version,
        "iteration": iteration,
        "env_steps": env_steps,
        "obs_dim": obs_dim,
        "act_dim": act_dim,
        "hidden": tuple(hidden),
    }


def load_checkpoint(path: str) -> tuple[GaussianPolicy,
                                        ObservationNormalizer | None, dict]:
    """Rebuild the policy (float64) and normalizer from a checkpoint."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    meta = _read_header(reader)
    (has_norm,) = reader.unpack("<B")
    normalizer = None
    if has_norm:
        (count,) = reader.unpack("<d")
        mean = reader.floats(meta["obs_dim"])
        m2 = reader.floats(meta["obs_dim"])
        normalizer = ObservationNormalizer.from_state(count, mean, m2)
    policy = GaussianPolicy(meta["obs_dim"], meta["act_dim"],
                            hidden=meta["hidden"],
                            rng=np.random.default_rng(0))
    policy.log_std[...] = reader.floats(meta["act_dim"])
    for mlp in (policy.actor, policy.critic):
        for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
            mlp.weights[i] = reader.floats(w.size, shape=w.shape)
            mlp.biases[i] = reader.floats(b.size, shape=b.shape)
    if reader.offset != len(reader.data):
        raise CheckpointError(
            f"{path}: {len(reader.data) - reader.offset} trailing bytes")
    return policy, normalizer, meta


def inspect_checkpoint(path: str) -> dict:
    """Header summary plus parameter counts, without building the policy."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    meta = _read_header(reader)
    (has_norm,) = reader.unpack("<B")
    meta["has_normalizer"] = bool(has_norm)
    if has_norm:
        (count,) = reader.unpack("<d")
        meta["normalizer_samples"] = count
        reader.floats(2 * meta["obs_dim"])
    n_params = meta["act_dim"]  # log_std
    layers = []
    for head, out_dims in (("actor", list(meta["hidden"]) + [meta["act_dim"]]),
                           ("critic", list(meta["hidden"]) + [1])):
        n_in = meta["obs_dim"]
        for n_out in out_dims:
            layers.append((head, n_in, n_out))
            n_params += n_in * n_out + n_out
            n_in = n_out
    meta["layers"] = layers
    meta["parameter_count"] = n_params
    meta["file_bytes"] = len(reader.data)
    return meta
