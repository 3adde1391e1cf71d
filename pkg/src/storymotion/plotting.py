"""Report figures rendered to files (Agg backend, no display)."""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .fileio import atomic_write_bytes  # noqa: E402

plt.rcParams.update({
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
})

# keep PNGs byte-stable across runs
_META = {"Software": None}


def _save(fig, path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", bbox_inches="tight", metadata=_META)
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def plot_trajectory(path, hip_xz: np.ndarray, desired_xz: np.ndarray | None = None,
                    fps: float = 30.0, title: str = "") -> None:
    """Top-down hip trace, plus the desired path and per-frame error when given."""
    ncols = 1 if desired_xz is None else 2
    fig, axes = plt.subplots(1, ncols, figsize=(4.2 * ncols, 3.8), squeeze=False)
    ax = axes[0, 0]
    if desired_xz is not None:
        ax.plot(desired_xz[:, 0], desired_xz[:, 1], color="0.6", lw=2.0, label="desired")
    ax.plot(hip_xz[:, 0], hip_xz[:, 1], color="C0", lw=1.2, label="hip")
    ax.plot(*hip_xz[0], "o", color="C0", ms=4)
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("z (m)")
    ax.legend(frameon=False, loc="best")
    if title:
        ax.set_title(title)
    if desired_xz is not None:
        err = np.linalg.norm(hip_xz - desired_xz, axis=1)
        ax = axes[0, 1]
        t = np.arange(len(err)) / fps
        ax.plot(t, err, color="C3", lw=1.0)
        ax.axhline(err.mean(), color="C3", ls="--", lw=0.8)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("trajectory error (m)")
    _save(fig, path)


def plot_synthesis(path, hip_xz: np.ndarray, starts: list[int], labels: list[str],
                   schedule_xz: np.ndarray | None = None) -> None:
    """Hip trace coloured by placed clip, with the scheduled path underneath."""
    fig, ax = plt.subplots(figsize=(4.6, 4.2))
    if schedule_xz is not None:
        ax.plot(schedule_xz[:, 0], schedule_xz[:, 1], color="0.75", lw=2.5, label="schedule")
    bounds = list(starts) + [len(hip_xz) - 1]
    seen = {}
    for k in range(len(starts)):
        a, b = bounds[k], min(bounds[k + 1], len(hip_xz) - 1)
        lab = labels[k]
        c = seen.setdefault(lab, f"C{len(seen) % 10}")
        ax.plot(hip_xz[a:b + 1, 0], hip_xz[a:b + 1, 1], color=c, lw=1.3, label=lab)
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("z (m)")
    handles, names = ax.get_legend_handles_labels()
    uniq = dict(zip(names, handles))
    ax.legend(uniq.values(), uniq.keys(), frameon=False, fontsize=7)
    _save(fig, path)
