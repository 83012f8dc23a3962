"""Weighted Ripley's K aggregation of a normalised map into a difficulty score.

For every ordered pair of distinct cells ``p != q`` at grid distance ``d``
the product of their values is accumulated into the distance bin ``r`` that
contains ``d``, divided by the number of cells::

    K(r) = (1 / n_cells) * sum_{p != q, d_pq in bin r} w_p * w_q

and the score is the 1/r-weighted mean ``S = sum_r K(r)/r / sum_r 1/r``.
Bins are half-open ``(r-1, r]`` by default; ``closed=True`` uses ``[r-1, r]``,
which counts integer distances in two neighbouring bins.
"""

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import signal

from .errors import DegenerateInputError
from .fsum_map import NormalizationStats

DEFAULT_R = 10


def _as_map(values):
    w = np.asarray(values, dtype=np.float64)
    if w.ndim != 2 or w.size == 0:
        raise ValueError(f"expected a nonempty 2-D map, got shape {w.shape}")
    return w


def _pair_sums(w):
    """Sum of w_p * w_q for every displacement q - p, with squared displacement lengths."""
    rows, cols = w.shape
    corr = signal.correlate2d(w, w, mode="full")
    di = np.arange(-(rows - 1), rows)[:, None]
    dj = np.arange(-(cols - 1), cols)[None, :]
    d2 = di * di + dj * dj
    corr[rows - 1, cols - 1] = 0.0  # p == q
    return corr, d2


def _bin_mask(d2, r, closed):
    lo, hi = (r - 1) ** 2, r * r
    if closed:
        return (d2 >= lo) & (d2 <= hi) & (d2 > 0)
    return (d2 > lo) & (d2 <= hi)


def k_values(values, R=DEFAULT_R, closed=False):
    """[K(1), ..., K(R)] for a map."""
    if R < 1:
        raise ValueError("R must be >= 1")
    w = _as_map(values)
    corr, d2 = _pair_sums(w)
    n = w.size
    return [float(corr[_bin_mask(d2, r, closed)].sum() / n) for r in range(1, R + 1)]


def ripley_k(values, r, closed=False):
    if r < 1:
        raise ValueError("r must be >= 1")
    return k_values(values, R=r, closed=closed)[-1]


def harmonic(R):
    return math.fsum(1.0 / r for r in range(1, R + 1))


def weighted_k_score(values, R=DEFAULT_R, closed=False):
    ks = k_values(values, R, closed)
    return math.fsum(k / r for r, k in enumerate(ks, start=1)) / harmonic(R)


def brute_force_oracle(values, R=DEFAULT_R, closed=False):
    """Literal loop over ordered cell pairs, binning each pair's Euclidean distance."""
    w = np.asarray(values, dtype=np.float64)
    rows, cols = w.shape
    cells = [(i, j) for i in range(rows) for j in range(cols)]
    n = len(cells)
    k = [0.0] * (R + 1)
    for p in cells:
        for q in cells:
            if p == q:
                continue
            d = math.sqrt((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2)
            for r in range(1, R + 1):
                inside = (r - 1 <= d <= r) if closed else (r - 1 < d <= r)
                if inside:
                    k[r] += w[p] * w[q]
    total = sum((k[r] / n) / r for r in range(1, R + 1))
    return total / sum(1.0 / r for r in range(1, R + 1))


@dataclass
class ScoreReport:
    image_id: str
    k_values: List[float]
    R: int
    s_raw: float
    n_cells: int
    difficulty: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def to_row(self):
        return {
            "image_id": self.image_id,
            "k_values": json.dumps(self.k_values),
            "s_raw": repr(self.s_raw),
            "difficulty": "" if self.difficulty is None else repr(self.difficulty),
        }

    def to_dict(self):
        return {
            "image_id": self.image_id,
            "k_values": self.k_values,
            "R": self.R,
            "s_raw": self.s_raw,
            "n_cells": self.n_cells,
            "difficulty": self.difficulty,
        }


def score_map(values, image_id="", R=DEFAULT_R, closed=False):
    w = _as_map(values)
    ks = k_values(w, R, closed)
    s = math.fsum(k / r for r, k in enumerate(ks, start=1)) / harmonic(R)
    return ScoreReport(image_id, ks, R, s, int(w.size))


def difficulty_from_scores(s_raws, stats=None, fallback=False, source=""):
    """Inverted min-max of raw scores: the best-understood scene gets 0, the worst 1.

    Returns ``(difficulties, stats)``. Pass stored ``stats`` to score new
    images against an earlier dataset.
    """
    s = np.asarray(s_raws, dtype=np.float64)
    if stats is None:
        stats = NormalizationStats.from_values([s], source=source)
        if stats.global_max == stats.global_min and not fallback:
            raise DegenerateInputError("all raw scores are equal; cannot derive difficulties")
    normalized = stats.apply(s, fallback=fallback)
    return [float(1.0 - v) for v in normalized], stats
