"""Static report figures, written as SVG through matplotlib's Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_trajectory", "plot_timing", "plot_loss_history", "savefig"]

STATE_LABELS = {3: ("x [m]", "y [m]", r"$\theta$ [rad]")}
INPUT_LABELS = {2: ("v [m/s]", r"$\omega$ [rad/s]")}

plt.rcParams.update({
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 8,
    "svg.hashsalt": "ncr",
})


def savefig(fig, path, description: str | None = None) -> Path:
    """Save ``fig`` as SVG with a fixed salt and no timestamp so reruns match byte for byte."""
    path = Path(path)
    metadata = {"Date": None}
    if description:
        metadata["Description"] = description
    fig.savefig(path, format="svg", metadata=metadata, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_trajectory(record, path, title: str | None = None, description: str | None = None) -> Path:
    """State (left) and input (right) time histories of one closed-loop run."""
    t = record.times
    p = record.states.shape[1]
    q = record.inputs.shape[1]
    s_lab = STATE_LABELS.get(p, tuple(f"z{i + 1}" for i in range(p)))
    u_lab = INPUT_LABELS.get(q, tuple(f"u{j + 1}" for j in range(q)))
    fig, (ax_z, ax_u) = plt.subplots(1, 2, figsize=(8, 3))
    for i in range(p):
        ax_z.plot(t, record.states[:, i], label=s_lab[i])
    if record.z_ref is not None and np.any(record.z_ref):
        for i in range(p):
            ax_z.axhline(record.z_ref[i], color=f"C{i}", ls=":", lw=0.8)
    ax_z.set_xlabel("t [s]")
    ax_z.set_title("state")
    ax_z.legend()
    for j in range(q):
        ax_u.step(t[:-1], record.inputs[:, j], where="post", label=u_lab[j])
    ax_u.set_xlabel("t [s]")
    ax_u.set_title("input")
    ax_u.legend()
    if title:
        fig.suptitle(title)
    return savefig(fig, path, description)


def plot_timing(horizons: Sequence[int], times: Mapping[str, Sequence[float]], path,
                description: str | None = None) -> Path:
    """Per-step time vs horizon: MPC in seconds (left), log time for every controller (right)."""
    fig, (ax_lin, ax_log) = plt.subplots(1, 2, figsize=(8, 3))
    h = np.asarray(horizons)
    if "MPC" in times:
        ax_lin.plot(h, np.asarray(times["MPC"]) * 1e3, "o-", color="C1", label="MPC")
    ax_lin.set_xlabel("prediction horizon")
    ax_lin.set_ylabel("time per step [ms]")
    ax_lin.legend()
    for i, (name, vals) in enumerate(times.items()):
        ax_log.plot(h, np.log(np.asarray(vals)), "o-", label=name, color="C1" if name == "MPC" else "C0")
    ax_log.set_xlabel("prediction horizon")
    ax_log.set_ylabel("ln(time per step [s])")
    ax_log.legend()
    return savefig(fig, path, description)


def plot_loss_history(history, path, description: str | None = None) -> Path:
    epochs = [r[0] for r in history]
    fig, ax = plt.subplots(figsize=(4.5, 3))
    for idx, name in ((1, "stage"), (2, "terminal"), (3, "co-state"), (4, "total")):
        ax.semilogy(epochs, [r[idx] for r in history], label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.legend()
    return savefig(fig, path, description)
