"""Optional matplotlib rendering of report data to image files.

Kept separate from the metric computations: the report CSV/JSON files are the
primary outputs, figures are an opt-in convenience (``--figures`` on the CLI).
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_FLAG_KEYS = (("coverage_ratio", "coverage reliable"),
              ("size_ratio", "size reliable"),
              ("robust_ratio", "robust"))


def reliability_heatmaps(ratios: Sequence[dict], out_path) -> Path:
    """One heatmap per reliability type over the (training, calibration) radius grid."""
    train_radii = sorted({r["train_radius"] for r in ratios})
    calib_radii = sorted({r["calib_radius"] for r in ratios})
    grids = {key: np.full((len(train_radii), len(calib_radii)), np.nan) for key, _ in _FLAG_KEYS}
    for r in ratios:
        i = train_radii.index(r["train_radius"])
        j = calib_radii.index(r["calib_radius"])
        for key, _ in _FLAG_KEYS:
            grids[key][i, j] = r[key]

    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6), constrained_layout=True)
    for ax, (key, title) in zip(axes, _FLAG_KEYS):
        im = ax.imshow(grids[key], vmin=0.0, vmax=1.0, origin="lower", cmap="viridis",
                       aspect="auto")
        ax.set_xticks(range(len(calib_radii)), calib_radii)
        ax.set_yticks(range(len(train_radii)), train_radii)
        ax.set_xlabel("calibration edit radius")
        ax.set_ylabel("training edit radius")
        ax.set_title(title)
        fig.colorbar(im, ax=ax, shrink=0.85)
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def reliability_curves(ratios: Sequence[dict], out_path) -> Path:
    """Reliability ratios along the diagonal of the radius grid (or along
    whichever single axis varies)."""
    diag = [r for r in ratios if r["train_radius"] == r["calib_radius"]]
    if len(diag) < 2:
        diag = sorted(ratios, key=lambda r: (r["train_radius"], r["calib_radius"]))
    xs = list(range(len(diag)))
    labels = [f"({r['train_radius']},{r['calib_radius']})" for r in diag]

    fig, ax = plt.subplots(figsize=(5.5, 3.6), constrained_layout=True)
    for key, title in _FLAG_KEYS:
        ax.plot(xs, [r[key] for r in diag], marker="o", label=title)
    ax.set_xticks(xs, labels, rotation=45)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("(training, calibration) radius")
    ax.set_ylabel("certified ratio")
    ax.legend()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
