"""Static SVG figures rendered from the harness CSV files.

Every plotter takes the backing CSV (the data of record) and an output
path; nothing here recomputes results. Headless rendering only.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402


def _read_rows(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return rows


def _finite(rows: list[dict], key: str) -> np.ndarray:
    return np.array([float(r[key]) for r in rows])


def plot_training(source: str, out_path: str) -> str:
    """Reward and forward-speed learning curves from metrics.csv."""
    if os.path.isdir(source):
        source = os.path.join(source, "metrics.csv")
    rows = _read_rows(source)
    steps = _finite(rows, "env_steps")
    reward = _finite(rows, "mean_episode_reward")
    speed = _finite(rows, "mean_speed")

    fig, (ax_r, ax_s) = plt.subplots(2, 1, figsize=(7.0, 6.0), sharex=True)
    ax_r.plot(steps, reward, color="tab:blue")
    ax_r.set_ylabel("mean episode reward")
    ax_r.grid(True, alpha=0.3)
    ax_s.plot(steps, speed, color="tab:orange")
    ax_s.set_ylabel("mean forward speed (m/s)")
    ax_s.set_xlabel("environment steps")
    ax_s.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path


def plot_velocity(source: str, out_path: str) -> str:
    """Forward velocity against time, one line per condition."""
    rows = _read_rows(source)
    by_condition: dict[str, list[tuple[float, float]]] = {}
    for r in rows:
        by_condition.setdefault(r["condition"], []).append(
            (float(r["time_s"]), float(r["forward_velocity_mps"])))

    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    for label, points in by_condition.items():
        arr = np.asarray(points)
        ax.plot(arr[:, 0], arr[:, 1], label=label, linewidth=1.0)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("forward velocity (m/s)")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path


def plot_traces(source: str, out_path: str) -> str:
    """Joint angles, applied torques, and base state from an episode trace."""
    data = np.genfromtxt(source, delimiter=",", names=True)
    t = data["time"]
    fig, (ax_q, ax_tau, ax_b) = plt.subplots(3, 1, figsize=(7.5, 8.0),
                                             sharex=True)
    for i in range(12):
        ax_q.plot(t, data[f"q_{i}"], linewidth=0.8)
        ax_tau.plot(t, data[f"tau_{i}"], linewidth=0.8)
    ax_q.set_ylabel("joint angle (rad)")
    ax_q.grid(True, alpha=0.3)
    ax_tau.set_ylabel("joint torque (N·m)")
    ax_tau.grid(True, alpha=0.3)
    ax_b.plot(t, data["base_z"], label="base height (m)")
    ax_b.plot(t, data["vel_x"], label="forward velocity (m/s)")
    ax_b.set_xlabel("time (s)")
    ax_b.grid(True, alpha=0.3)
    ax_b.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path


def plot_sweep(source: str, out_path: str) -> str:
    """Mean distance bars with success-rate markers per condition."""
    rows = _read_rows(source)
    labels = [r["condition"] for r in rows]
    dist = _finite(rows, "mean_distance_m")
    success = _finite(rows, "success_rate")
    x = np.arange(len(labels))

    fig, ax = plt.subplots(figsize=(max(6.0, 0.9 * len(labels)), 4.5))
    ax.bar(x, dist, color="tab:blue", alpha=0.8)
    ax.set_ylabel("mean distance (m)", color="tab:blue")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax2 = ax.twinx()
    ax2.plot(x, success, "o-", color="tab:red")
    ax2.set_ylabel("success rate", color="tab:red")
    ax2.set_ylim(-0.05, 1.05)
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path


PLOTTERS = {
    "training": plot_training,
    "velocity": plot_velocity,
    "traces": plot_traces,
    "sweep": plot_sweep,
}


def make_plot(kind: str, source: str, out_path: str) -> str:
    try:
        plotter = PLOTTERS[kind]
    except KeyError:
        raise ValueError(f"unknown plot kind {kind!r}") from None
    return plotter(source, out_path)
