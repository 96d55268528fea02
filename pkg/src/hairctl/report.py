"""Per-frame coverage statistics as CSV plus a summary figure."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import BundleError  # noqa: E402

COLUMNS = ("frame", "hair_pixels", "pose_pixels", "hair_centroid_x", "hair_centroid_y")


def frame_stats(seq):
    rows = []
    for i, f in enumerate(seq.frames):
        px = f.image.pixels
        mask = f.mask.bits if f.mask is not None else np.zeros(px.shape[:2], dtype=bool)
        pose = px.any(axis=2) & ~mask
        ys, xs = np.nonzero(mask)
        cx = float(xs.mean()) if len(xs) else float("nan")
        cy = float(ys.mean()) if len(ys) else float("nan")
        rows.append((i + 1, int(mask.sum()), int(pose.sum()), cx, cy))
    return rows


def write_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([r[0], r[1], r[2], f"{r[3]:.4f}", f"{r[4]:.4f}"])


def plot_report(seq, rows, path):
    data = np.array(rows, dtype=float)
    fig, axes = plt.subplots(2, 2, figsize=(10, 6.5), dpi=100)
    ax = axes[0, 0]
    ax.imshow(seq.frames[0].image.pixels)
    ax.set_title("frame 1")
    ax.axis("off")
    ax = axes[0, 1]
    ax.imshow(seq.frames[-1].image.pixels)
    ax.set_title(f"frame {len(seq)}")
    ax.axis("off")

    ax = axes[1, 0]
    ax.plot(data[:, 0], data[:, 1], label="hair (mask)")
    ax.plot(data[:, 0], data[:, 2], label="pose")
    ax.set_xlabel("frame")
    ax.set_ylabel("pixels")
    ax.legend(frameon=False)

    ax = axes[1, 1]
    sc = ax.scatter(data[:, 3], data[:, 4], c=data[:, 0], s=8, cmap="viridis")
    w, h = seq.resolution
    ax.set_xlim(0, w)
    ax.set_ylim(h, 0)
    ax.set_aspect("equal")
    ax.set_xlabel("x [px]")
    ax.set_ylabel("y [px]")
    ax.set_title("hair coverage centroid")
    fig.colorbar(sc, ax=ax, label="frame")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def write_report(seq, directory, stem="report"):
    """Write ``<stem>.csv`` and ``<stem>.png``; returns both paths."""
    out = Path(directory)
    rows = frame_stats(seq)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_csv(rows, out / f"{stem}.csv")
        plot_report(seq, rows, out / f"{stem}.png")
    except OSError as exc:
        raise BundleError(f"cannot write report to {out}: {exc}") from exc
    return out / f"{stem}.csv", out / f"{stem}.png"
