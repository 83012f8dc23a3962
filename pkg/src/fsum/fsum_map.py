"""Fixation grid, per-fixation captioning and the foveated scene-understanding map."""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .backends.base import DESCRIPTION_PROMPT
from .errors import DegenerateInputError, FsumError, ShapeError
from .foveation import FixationPoint, FoveationParams, build_pyramid, foveate
from .imageio import MIN_SIDE, check_image

GRID_TARGET = 120
GRID_RANGE = (108, 136)
EMBED_BATCH = 128


@dataclass
class FixationGrid:
    rows: int
    cols: int
    pitch_x: float
    pitch_y: float
    points: List[List[FixationPoint]]

    @property
    def size(self):
        return self.rows * self.cols

    def flat(self):
        """((m, n), point) in row-major order."""
        return [((m, n), self.points[m][n]) for m in range(self.rows) for n in range(self.cols)]


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def make_grid(width, height, target=GRID_TARGET, bounds=GRID_RANGE):
    """Uniform fixation grid with about ``target`` points, between ``bounds``.

    ``rows = round(sqrt(target / aspect))`` and ``cols = round(rows * aspect)``
    with ``aspect = width / height``. If the count falls outside ``bounds``
    rows are adjusted before cols, smallest total change first. Points sit at
    cell centres, in pixel-index coordinates.
    """
    if width < MIN_SIDE or height < MIN_SIDE:
        raise ValueError(f"image must be at least {MIN_SIDE}x{MIN_SIDE}")
    lo, hi = bounds
    aspect = width / height
    rows = max(1, _round_half_up(math.sqrt(target / aspect)))
    cols = max(1, _round_half_up(rows * aspect))
    if not lo <= rows * cols <= hi:
        sign = 1 if rows * cols < lo else -1
        found = None
        for total in range(1, rows + cols + hi):
            for dr in range(total, -1, -1):
                r, c = rows + sign * dr, cols + sign * (total - dr)
                if 1 <= r <= height and 1 <= c <= width and lo <= r * c <= hi:
                    found = (r, c)
                    break
            if found:
                break
        if found is None:
            raise ValueError(f"no grid within {bounds} for a {width}x{height} image")
        rows, cols = found
    px, py = width / cols, height / rows
    points = [
        [FixationPoint((n + 0.5) * px - 0.5, (m + 0.5) * py - 0.5) for n in range(cols)]
        for m in range(rows)
    ]
    return FixationGrid(rows, cols, px, py, points)


def _unit_rows(vectors, where):
    arr = np.asarray([np.asarray(v, dtype=np.float64) for v in vectors])
    sq = np.einsum("ij,ij->i", arr, arr)
    if np.any(sq == 0) or not np.all(np.isfinite(sq)):
        raise DegenerateInputError(f"zero-norm or non-finite embedding in {where}")
    return arr, sq


def mean_pairwise_cosine(gold, foveated, where="cell"):
    """Mean cosine similarity over all (gold, foveated) ordered pairs."""
    g, gsq = _unit_rows(gold, "gold set")
    f, fsq = _unit_rows(foveated, where)
    if g.shape[1] != f.shape[1]:
        raise ShapeError(f"embedding dim mismatch in {where}: {g.shape[1]} vs {f.shape[1]}")
    # dot / sqrt(|g|^2 |f|^2) is exactly +-1 for parallel vectors
    cos = (g @ f.T) / np.sqrt(np.outer(gsq, fsq))
    return float(np.clip(cos, -1.0, 1.0).mean())


def build_raw_map(gold, fov):
    """Raw map: each cell is the mean pairwise cosine between gold and that cell's embeddings.

    ``fov`` is a rows x cols nested list; every cell holds exactly
    ``len(gold)`` embeddings.
    """
    n = len(gold)
    if n < 1:
        raise ShapeError("need at least one gold embedding")
    rows = len(fov)
    if rows == 0:
        raise ShapeError("empty fixation grid")
    cols = len(fov[0])
    raw = np.empty((rows, cols))
    for m in range(rows):
        if len(fov[m]) != cols:
            raise ShapeError(f"ragged grid: row {m} has {len(fov[m])} cells, expected {cols}")
        for c in range(cols):
            cell = fov[m][c]
            if len(cell) != n:
                raise ShapeError(f"cell ({m}, {c}) has {len(cell)} embeddings, expected {n}")
            raw[m, c] = mean_pairwise_cosine(gold, cell, where=f"cell ({m}, {c})")
    return raw


@dataclass
class NormalizationStats:
    global_min: float
    global_max: float
    source: str = ""
    n_values: int = 0

    def __post_init__(self):
        if self.global_min > self.global_max:
            raise ValueError("global_min must be <= global_max")

    def to_dict(self):
        return {
            "global_min": self.global_min,
            "global_max": self.global_max,
            "source": self.source,
            "n_values": self.n_values,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["global_min"]), float(d["global_max"]), d.get("source", ""), int(d.get("n_values", 0)))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def from_values(cls, values, source=""):
        vals = np.concatenate([np.ravel(v) for v in values])
        if vals.size == 0:
            raise ShapeError("no values to normalise")
        return cls(float(vals.min()), float(vals.max()), source, int(vals.size))

    def apply(self, values, fallback=False):
        """Min-max map onto [0, 1]; values beyond the stored range are clipped."""
        v = np.asarray(values, dtype=np.float64)
        span = self.global_max - self.global_min
        if span <= 0:
            if fallback:
                return np.full_like(v, 0.5)
            raise DegenerateInputError("all pooled values are equal; cannot min-max normalise")
        return np.clip((v - self.global_min) / span, 0.0, 1.0)


def normalize_maps(raws, source="", fallback=False):
    """Pool every cell of every map, min-max normalise, return (maps, stats)."""
    raws = [np.asarray(r, dtype=np.float64) for r in raws]
    if not raws:
        raise ShapeError("need at least one map")
    stats = NormalizationStats.from_values(raws, source=source)
    return [stats.apply(r, fallback=fallback) for r in raws], stats


@dataclass
class FSumMap:
    image_id: str
    raw: np.ndarray
    normalized: np.ndarray
    n_samples: int
    stats_ref: Optional[str] = None
    extra: dict = field(default_factory=dict)

    @property
    def rows(self):
        return self.raw.shape[0]

    @property
    def cols(self):
        return self.raw.shape[1]

    def to_dict(self):
        d = {
            "image_id": self.image_id,
            "rows": self.rows,
            "cols": self.cols,
            "n_samples": self.n_samples,
            "raw": self.raw.tolist(),
            "normalized": self.normalized.tolist(),
            "stats_ref": self.stats_ref,
        }
        d.update(self.extra)
        return d

    @classmethod
    def from_dict(cls, d):
        raw = np.asarray(d["raw"], dtype=np.float64)
        norm = np.asarray(d["normalized"], dtype=np.float64)
        if raw.shape != (d["rows"], d["cols"]) or norm.shape != raw.shape:
            raise ShapeError(f"map {d.get('image_id')} does not match its declared shape")
        known = {"image_id", "rows", "cols", "n_samples", "raw", "normalized", "stats_ref"}
        extra = {k: v for k, v in d.items() if k not in known}
        return cls(d["image_id"], raw, norm, int(d["n_samples"]), d.get("stats_ref"), extra)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class MapSettings:
    n_samples: int = 5
    temperature: Optional[float] = None  # None: the caption backend's default
    grid_target: int = GRID_TARGET
    foveation: FoveationParams = FoveationParams()
    workers: int = 4
    prompt: str = DESCRIPTION_PROMPT


def _embed_all(embedding, texts):
    out = []
    for i in range(0, len(texts), EMBED_BATCH):
        out.extend(embedding.embed(texts[i:i + EMBED_BATCH]))
    return out


def caption_grid(image, caption, settings=MapSettings()):
    """Gold descriptions plus descriptions of every foveated render.

    Returns ``(grid, gold_texts, cell_texts)`` with ``cell_texts[m][n]`` a list
    of ``settings.n_samples`` strings.
    """
    img = check_image(image)
    h, w = img.shape[:2]
    n = settings.n_samples
    gold = caption.describe(img, settings.prompt, n, settings.temperature).texts
    grid = make_grid(w, h, settings.grid_target)
    pyramid = build_pyramid(img, settings.foveation.pyramid_levels)

    def work(item):
        idx, ((m, c), pt) = item
        try:
            fov = foveate(img, pt, settings.foveation, pyramid=pyramid)
            return (m, c), caption.describe(fov, settings.prompt, n, settings.temperature).texts
        except FsumError as exc:
            exc.fixation_index = idx
            exc.args = (f"fixation #{idx} at ({pt.x:.1f}, {pt.y:.1f}): {exc}",) + exc.args[1:]
            raise

    items = list(enumerate(grid.flat()))
    if settings.workers > 1:
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            results = list(pool.map(work, items))
    else:
        results = [work(it) for it in items]
    cells = [[None] * grid.cols for _ in range(grid.rows)]
    for (m, c), texts in results:
        cells[m][c] = texts
    return grid, gold, cells


def build_fsum(image, caption, embedding, settings=MapSettings(), image_id="", stats=None, fallback=False):
    """Compute the F-SUM of one image.

    With ``stats`` the normalised map uses those dataset-wide bounds;
    otherwise the map is normalised against its own range.
    """
    grid, gold_texts, cells = caption_grid(image, caption, settings)
    flat = [t for row in cells for cell in row for t in cell]
    vectors = _embed_all(embedding, list(gold_texts) + flat)
    n = settings.n_samples
    gold_vecs = vectors[:n]
    it = iter(vectors[n:])
    fov = [[[next(it) for _ in range(n)] for _ in range(grid.cols)] for _ in range(grid.rows)]
    raw = build_raw_map(gold_vecs, fov)
    if stats is None:
        stats = NormalizationStats.from_values([raw], source=image_id)
        stats_ref = None
    else:
        stats_ref = stats.source or None
    return FSumMap(image_id, raw, stats.apply(raw, fallback=fallback), n, stats_ref)
