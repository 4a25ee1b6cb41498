"""Qualitative figure: input image and zero contours of warm-up, semi-supervised and true SDFs."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import matplotlib as mpl

mpl.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from core.checkpoint import Checkpoint  # noqa: E402
from core.data import Sample, analytic_sdf, grid_points  # noqa: E402
from core.errors import PreconditionError  # noqa: E402
from core.trainer import predict_grid  # noqa: E402

logger = logging.getLogger(__name__)

CONTOUR_STYLES = {
    "warm-up": dict(colors="tab:orange", linestyles="--"),
    "semi-supervised": dict(colors="tab:blue", linestyles="-"),
    "ground truth": dict(colors="black", linestyles=":"),
}


def contour_figure(samples: Sequence[Sample], warmup: Checkpoint, semi: Checkpoint, resolution: int = 64):
    if not samples:
        raise PreconditionError("contour figure needs at least one sample")
    fig, axes = plt.subplots(len(samples), 2, figsize=(6, 3 * len(samples)), squeeze=False)
    centres = (np.arange(resolution) + 0.5) / resolution
    for (ax_img, ax_sdf), sample in zip(axes, samples):
        ax_img.imshow(sample.image, origin="lower", extent=(0, 1, 0, 1))
        ax_img.set_title(f"sample {sample.index}")
        fields = {
            "warm-up": predict_grid(warmup, sample.image, resolution),
            "semi-supervised": predict_grid(semi, sample.image, resolution),
            "ground truth": analytic_sdf(sample.shape, grid_points(resolution)).reshape(resolution, resolution),
        }
        for label, values in fields.items():
            if values.min() < 0.0 < values.max():
                ax_sdf.contour(centres, centres, values, levels=[0.0], **CONTOUR_STYLES[label])
            else:
                logger.warning(f"Sample {sample.index}: {label} field has no zero contour")
            ax_sdf.plot([], [], color=CONTOUR_STYLES[label]["colors"], linestyle=CONTOUR_STYLES[label]["linestyles"],
                        label=label)
        ax_sdf.set_xlim(0, 1)
        ax_sdf.set_ylim(0, 1)
        ax_sdf.set_aspect("equal")
    axes[0, 1].legend(loc="upper right", fontsize=7)
    fig.tight_layout()
    return fig


def save_contour_figure(path: str | Path, samples: Sequence[Sample], warmup: Checkpoint, semi: Checkpoint,
                        resolution: int = 64) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig = contour_figure(samples, warmup, semi, resolution)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    logger.info(f"Wrote contour figure for {len(samples)} samples to {path}")
    return path
