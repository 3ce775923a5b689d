"""Static PNG figures: difference images, velocity heatmaps, time-space profiles."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".png")
    os.close(fd)
    try:
        # fixed metadata keeps reruns byte-identical
        fig.savefig(tmp, format="png", dpi=100, metadata={"Software": None})
        os.replace(tmp, path)
    finally:
        plt.close(fig)
        if os.path.exists(tmp):
            os.remove(tmp)


def difference_image(gt, rec, mask):
    """``|rec| - |gt|`` inside the mask, 0 outside."""
    return np.where(mask, np.abs(rec) - np.abs(gt), 0.0)


def time_space_profile(seq, row):
    """Magnitudes along one x row for every frame, shape ``(Nt, Ny)``."""
    return np.abs(np.asarray(seq)[:, row, :])


def plot_differences(path, gt, recons, mask, frame):
    models = list(recons)
    diffs = [difference_image(gt[frame], recons[m][frame], mask) for m in models]
    lim = max(float(np.max(np.abs(d))) for d in diffs) or 1.0
    fig, axes = plt.subplots(1, len(models), figsize=(3 * len(models), 3), squeeze=False)
    for ax, m, d in zip(axes[0], models, diffs):
        im = ax.imshow(d, cmap="RdBu_r", vmin=-lim, vmax=lim)
        ax.set_title(m)
        ax.axis("off")
    fig.colorbar(im, ax=axes[0].tolist(), shrink=0.8)
    _save(fig, path)


def plot_velocity(path, v, frame, title=""):
    """Heatmaps of the four real velocity components at one frame."""
    comps = [("Re vx", v[0, frame].real), ("Re vy", v[1, frame].real),
             ("Im vx", v[0, frame].imag), ("Im vy", v[1, frame].imag)]
    lim = max(float(np.max(np.abs(c))) for _, c in comps) or 1.0
    fig, axes = plt.subplots(1, 4, figsize=(12, 3))
    for ax, (name, c) in zip(axes, comps):
        im = ax.imshow(c, cmap="RdBu_r", vmin=-lim, vmax=lim)
        ax.set_title(name)
        ax.axis("off")
    fig.colorbar(im, ax=list(axes), shrink=0.8)
    if title:
        fig.suptitle(title)
    _save(fig, path)


def plot_profiles(path, gt, recons, row):
    seqs = {"gt": gt, **recons}
    fig, axes = plt.subplots(1, len(seqs), figsize=(2.5 * len(seqs), 3), squeeze=False)
    vmax = float(np.max(np.abs(gt)))
    for ax, (name, s) in zip(axes[0], seqs.items()):
        ax.imshow(time_space_profile(s, row), cmap="gray", vmin=0, vmax=vmax, aspect="auto")
        ax.set_title(name)
        ax.set_xlabel("y")
        ax.set_ylabel("t")
    _save(fig, path)


def write_figures(out, gt, recons, mask, velocities, v_gt, frames, profile_row):
    out = Path(out)
    nt, nx, _ = gt.shape
    written = []
    frames = [f for f in frames if 0 <= f < nt]
    if recons:
        for f in frames:
            p = out / f"difference_frame{f}.png"
            plot_differences(p, gt, recons, mask, f)
            written.append(p)
        row = min(max(profile_row, 0), nx - 1)
        p = out / f"profile_row{row}.png"
        plot_profiles(p, gt, recons, row)
        written.append(p)
    vels = dict(velocities)
    if v_gt is not None:
        vels["gt"] = v_gt
    for name, v in vels.items():
        for f in frames:
            p = out / f"velocity_{name}_frame{f}.png"
            plot_velocity(p, v, f, title=name)
            written.append(p)
    return written
