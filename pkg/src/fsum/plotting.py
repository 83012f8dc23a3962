"""Figures: F-SUM heatmaps and correlation summaries.

Everything draws on explicit ``Figure`` objects with the Agg canvas, so
rendering is safe off the main thread and never opens a window.
"""

import math
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import matplotlib as mpl
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .errors import AlignmentError
from .imageio import to_gray

MIN_RENDER_SIDE = 640
OVERLAY_ALPHA = 0.5

STYLE = {
    "font.size": 10,
    "axes.titlesize": 11,
    "axes.labelsize": 10,
    "xtick.labelsize": 9,
    "ytick.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.facecolor": "white",
}


@contextmanager
def figure_style(**overrides):
    with mpl.rc_context({**STYLE, **overrides}):
        yield


def _save(fig, path, dpi=100, description=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    FigureCanvasAgg(fig)
    meta = {"Software": None}
    if description:
        meta["Description"] = description
    fig.savefig(path, dpi=dpi, metadata=meta)
    return path


def cell_centers(n, size):
    return (np.arange(n) + 0.5) * (size / n) - 0.5


def upsample_map(values, width, height):
    """Bilinear upsampling with cell centres on the fixation-grid pixel centres.

    Outside the outermost centres the edge values are held constant.
    """
    v = np.asarray(values, dtype=np.float64)
    rows, cols = v.shape
    ys = np.arange(height, dtype=np.float64)
    xs = np.arange(width, dtype=np.float64)
    cy = cell_centers(rows, height)
    cx = cell_centers(cols, width)
    tmp = np.empty((height, cols))
    for c in range(cols):
        tmp[:, c] = np.interp(ys, cy, v[:, c])
    out = np.empty((height, width))
    for y in range(height):
        out[y] = np.interp(xs, cx, tmp[y])
    return out


def colorize(values, cmap="viridis", vmin=0.0, vmax=1.0):
    """RGB floats in [0, 1] for a scalar field."""
    norm = mpl.colors.Normalize(vmin=vmin, vmax=vmax, clip=True)
    return np.asarray(mpl.colormaps[cmap](norm(np.asarray(values, dtype=np.float64))))[..., :3]


def heatmap_rgb(fmap, image=None, mode="standalone", cmap="viridis", shape=None):
    """Heatmap pixels at image resolution; ``overlay`` blends over the image at alpha 0.5."""
    if image is not None:
        shape = np.asarray(image).shape[:2]
    if shape is None:
        raise ValueError("need the image or its shape")
    h, w = shape
    heat = colorize(upsample_map(fmap.normalized, w, h), cmap)
    if mode == "standalone":
        return heat
    if mode != "overlay":
        raise ValueError(f"unknown mode {mode!r}")
    if image is None:
        raise ValueError("overlay needs the image")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    return (1 - OVERLAY_ALPHA) * img + OVERLAY_ALPHA * heat


def render_heatmap(fmap, image, path, mode="standalone", cmap="viridis", image_id=None, description=None):
    """Write the map as a PNG with the source image's aspect ratio and a min/max colour strip."""
    if image_id is not None and image_id != fmap.image_id:
        raise AlignmentError(f"map {fmap.image_id!r} does not belong to image {image_id!r}")
    h, w = np.asarray(image).shape[:2]
    scale = max(1, math.ceil(MIN_RENDER_SIDE / max(w, h)))
    rgb = heatmap_rgb(fmap, image, mode, cmap)
    with figure_style():
        fig = Figure(figsize=(w * scale / 100.0, h * scale / 100.0))
        ax = fig.add_axes([0, 0, 1, 1])
        ax.imshow(rgb, interpolation="nearest", aspect="auto")
        ax.set_axis_off()
        cax = ax.inset_axes([0.03, 0.04, 0.35, 0.035])
        sm = mpl.cm.ScalarMappable(norm=mpl.colors.Normalize(0.0, 1.0), cmap=cmap)
        cb = fig.colorbar(sm, cax=cax, orientation="horizontal")
        lo, hi = float(fmap.normalized.min()), float(fmap.normalized.max())
        cb.set_ticks([0.0, 1.0])
        cb.set_ticklabels([f"min {lo:.2f}", f"max {hi:.2f}"])
        cax.tick_params(labelsize=8, colors="white", length=0)
        cax.set_title(fmap.image_id, fontsize=8, color="white", loc="left")
        return _save(fig, path, description=description)


def render_correlations(report, path, description=None):
    """Forest plot of r (95% CI) per metric, one panel per behavioural measure."""
    measures = report.get("measures", {})
    n = max(1, len(measures))
    with figure_style():
        fig = Figure(figsize=(4.2 * n, 3.6), layout="constrained")
        axes = fig.subplots(1, n, squeeze=False)[0]
        for ax, (name, table) in zip(axes, measures.items()):
            rows = table["rows"]
            labels = [r["metric_name"] for r in rows]
            r = np.array([row["r"] for row in rows])
            lo = np.array([row["ci_low"] for row in rows])
            hi = np.array([row["ci_high"] for row in rows])
            y = np.arange(len(rows))[::-1]
            ax.errorbar(r, y, xerr=np.vstack([r - lo, hi - r]), fmt="o", color="k", ecolor="0.5", capsize=3)
            if table.get("human_human_r") is not None:
                ax.axvline(table["human_human_r"], color="tab:red", ls="--", lw=1, label="human-human")
                ax.legend(loc="best", fontsize=8, frameon=False)
            ax.axvline(0, color="0.8", lw=0.8)
            ax.set_yticks(y)
            ax.set_yticklabels(labels)
            ax.set_xlim(-1, 1)
            ax.set_xlabel("Pearson r (95% CI)")
            ax.set_title(name)
        if not measures:
            axes[0].text(0.5, 0.5, "no behavioural measures", ha="center", va="center")
            axes[0].set_axis_off()
        return _save(fig, path, description=description)


def render_foveation_preview(image, foveated, fixation, path):
    """Side-by-side original / foveated render with the fixation marked."""
    with figure_style():
        fig = Figure(figsize=(8, 4), layout="constrained")
        for ax, im, title in zip(fig.subplots(1, 2), (image, foveated), ("original", "foveated")):
            ax.imshow(im if np.asarray(im).ndim == 3 else to_gray(im), cmap="gray", vmin=0, vmax=1)
            ax.plot([fixation[0]], [fixation[1]], "r+", ms=10)
            ax.set_title(title)
            ax.set_axis_off()
        return _save(fig, path)
