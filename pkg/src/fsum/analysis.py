"""Correlating image metrics with human behaviour.

Behaviour is averaged per image (after validity screening) and correlated
with each metric by Pearson's r. Confidence intervals and the paired test
of ``r_reference - r_metric > 0`` come from one shared set of bootstrap
resamples, drawn from a single seeded generator.
"""

import csv
import logging
import math
import warnings
from collections import defaultdict
from collections.abc import Mapping
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .backends.base import cosine
from .errors import AlignmentError, CoverageError, DataError, DegenerateInputError, UndefinedCorrelationError

logger = logging.getLogger(__name__)

CONDITIONS = ("free-viewing", "2-saccade", "4-saccade")
N_BOOT = 10_000
VALIDITY_THRESHOLD = 0.75
MAX_SKIP_FRACTION = 0.01
_CHUNK = 500


@dataclass
class BehavioralRecord:
    participant_id: str
    image_id: str
    condition: str = "free-viewing"
    rt_ms: Optional[float] = None
    saccade_count: Optional[int] = None
    description: Optional[str] = None
    valid: bool = True
    accuracy: Optional[float] = None

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise DataError(f"unknown condition {self.condition!r}")
        if self.rt_ms is None and self.saccade_count is None and not self.description and self.accuracy is None:
            raise DataError(f"record {self.participant_id}/{self.image_id} carries no measure")
        if self.rt_ms is not None and not self.rt_ms > 0:
            raise DataError(f"rt_ms must be > 0 (record {self.participant_id}/{self.image_id})")
        if self.saccade_count is not None and self.saccade_count < 0:
            raise DataError("saccade_count must be >= 0")
        if self.condition != "free-viewing" and self.rt_ms is not None:
            raise DataError("response times are only recorded in the free-viewing condition")


def _opt(value, cast):
    value = (value or "").strip()
    if value == "" or value.lower() == "nan":
        return None
    return cast(value)


def load_behavior_csv(path):
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"participant_id", "image_id"} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            try:
                records.append(BehavioralRecord(
                    participant_id=row["participant_id"].strip(),
                    image_id=row["image_id"].strip(),
                    condition=(row.get("condition") or "free-viewing").strip(),
                    rt_ms=_opt(row.get("rt_ms"), float),
                    saccade_count=_opt(row.get("saccade_count"), lambda s: int(float(s))),
                    description=_opt(row.get("description"), str),
                    accuracy=_opt(row.get("accuracy"), float),
                ))
            except ValueError as exc:
                raise DataError(f"{path}: bad row {row}: {exc}") from exc
    return records


def write_behavior_csv(records, path):
    fields = ["participant_id", "image_id", "condition", "rt_ms", "saccade_count", "description"]
    if any(r.accuracy is not None for r in records):
        fields.append("accuracy")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in records:
            w.writerow({f: "" if getattr(r, f) is None else getattr(r, f) for f in fields})


def load_scores_csv(path, score_metric="fsum"):
    """Metric scores as ``{metric_name: {image_id: value}}``.

    Accepts the long format ``image_id, metric_name, value`` or a score table
    with a ``difficulty`` column (filed under ``score_metric``).
    """
    out = defaultdict(dict)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        if {"image_id", "metric_name", "value"} <= cols:
            for row in reader:
                v = _opt(row["value"], float)
                if v is not None:
                    out[row["metric_name"].strip()][row["image_id"].strip()] = v
        elif {"image_id", "difficulty"} <= cols:
            for row in reader:
                v = _opt(row["difficulty"], float)
                if v is not None:
                    out[score_metric][row["image_id"].strip()] = v
        else:
            raise DataError(f"{path}: expected columns image_id,metric_name,value or image_id,difficulty")
    return dict(out)


def pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise AlignmentError("pearson needs two 1-D series of equal length")
    if x.size < 3:
        raise DataError("pearson needs at least 3 observations")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(np.dot(xc, xc))
    syy = float(np.dot(yc, yc))
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("correlation with a constant series is undefined")
    return float(np.clip(np.dot(xc, yc) / math.sqrt(sxx * syy), -1.0, 1.0))


def _rows_pearson(X, Y):
    """Row-wise Pearson r for (B, n) arrays; NaN where a row is constant."""
    xc = X - X.mean(axis=1, keepdims=True)
    yc = Y - Y.mean(axis=1, keepdims=True)
    sxx = np.einsum("ij,ij->i", xc, xc)
    syy = np.einsum("ij,ij->i", yc, yc)
    sxy = np.einsum("ij,ij->i", xc, yc)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = sxy / np.sqrt(sxx * syy)
    # a resample that is constant up to rounding has no defined correlation
    n = X.shape[1]
    xs = (1e-10 * np.abs(X).max(axis=1)) ** 2 * n
    ys = (1e-10 * np.abs(Y).max(axis=1)) ** 2 * n
    r[(sxx <= xs) | (syy <= ys)] = np.nan
    return np.clip(r, -1.0, 1.0)


def _align(*series):
    """Turn mappings keyed by image id (or plain sequences) into aligned arrays."""
    if all(isinstance(s, Mapping) for s in series):
        keys = set(series[0])
        for s in series[1:]:
            if set(s) != keys:
                raise AlignmentError("series cover different image sets")
        order = sorted(keys)
        return [np.array([s[k] for k in order], dtype=np.float64) for s in series]
    if any(isinstance(s, Mapping) for s in series):
        raise AlignmentError("cannot align a mapping with an unkeyed sequence")
    arrs = [np.asarray(s, dtype=np.float64) for s in series]
    if len({a.shape for a in arrs}) != 1:
        raise AlignmentError(f"series lengths differ: {[a.size for a in arrs]}")
    return arrs


def bootstrap_rs(metrics, behavior, n_boot=N_BOOT, seed=0):
    """Bootstrap r for each metric column against ``behavior``, resampling images.

    ``metrics`` is (n, M). Returns a (n_boot, M) array with NaN for
    degenerate resamples.
    """
    metrics = np.asarray(metrics, dtype=np.float64)
    if metrics.ndim == 1:
        metrics = metrics[:, None]
    behavior = np.asarray(behavior, dtype=np.float64)
    n, M = metrics.shape
    rng = np.random.default_rng(seed)
    out = np.empty((n_boot, M))
    for start in range(0, n_boot, _CHUNK):
        b = min(_CHUNK, n_boot - start)
        idx = rng.integers(0, n, size=(b, n))
        Y = behavior[idx]
        for m in range(M):
            out[start:start + b, m] = _rows_pearson(metrics[idx, m], Y)
    return out


def _check_skips(rs, n_boot):
    skipped = int(np.isnan(rs).sum())
    if skipped > MAX_SKIP_FRACTION * n_boot:
        raise DegenerateInputError(f"{skipped} of {n_boot} bootstrap resamples were degenerate (> 1%)")
    return skipped


def percentile_ci(rs, level=0.95):
    rs = rs[~np.isnan(rs)]
    tail = (1 - level) / 2 * 100
    lo, hi = np.percentile(rs, [tail, 100 - tail])
    return float(lo), float(hi)


def bootstrap(x, y, n_boot=N_BOOT, seed=0):
    """Percentile 95% CI of Pearson r over image resamples."""
    x, y = _align(x, y)
    pearson(x, y)
    rs = bootstrap_rs(x, y, n_boot, seed)[:, 0]
    _check_skips(rs, n_boot)
    return percentile_ci(rs)


def delta_p_value(r_a, r_b):
    """One-sided bootstrap p for r_a - r_b > 0; exact ties count one half."""
    ok = ~(np.isnan(r_a) | np.isnan(r_b))
    d = r_a[ok] - r_b[ok]
    if d.size == 0:
        raise DegenerateInputError("no usable bootstrap resamples")
    return float(((d < 0).sum() + 0.5 * (d == 0).sum()) / d.size)


def paired_delta_test(metric_a_scores, metric_b_scores, behavior, n_boot=N_BOOT, seed=0):
    """Bootstrap p-value for ``r(a, behavior) > r(b, behavior)``."""
    a, b, y = _align(metric_a_scores, metric_b_scores, behavior)
    rs = bootstrap_rs(np.column_stack([a, b]), y, n_boot, seed)
    _check_skips(rs, 2 * n_boot)
    return delta_p_value(rs[:, 0], rs[:, 1])


def participant_matrix(records, measure, condition=None):
    """(participants, images, matrix) of a measure; NaN where absent or invalid."""
    cells = {}
    for r in records:
        if condition is not None and r.condition != condition:
            continue
        if not r.valid:
            continue
        v = measure(r) if callable(measure) else getattr(r, measure)
        if v is None:
            continue
        cells[(r.participant_id, r.image_id)] = float(v)
    participants = sorted({p for p, _ in cells})
    images = sorted({i for _, i in cells})
    pi = {p: k for k, p in enumerate(participants)}
    ii = {i: k for k, i in enumerate(images)}
    mat = np.full((len(participants), len(images)), np.nan)
    for (p, i), v in cells.items():
        mat[pi[p], ii[i]] = v
    return participants, images, mat


def leave_one_out_consistency(records, measure="rt_ms", condition=None, min_shared=3):
    """Mean over participants of r(their measure, mean of everyone else)."""
    participants, _, mat = participant_matrix(records, measure, condition)
    if len(participants) < 3:
        raise CoverageError("need at least 3 participants")
    present = ~np.isnan(mat)
    filled = np.where(present, mat, 0.0)
    tot = filled.sum(axis=0)
    cnt = present.sum(axis=0)
    rs = []
    for k in range(len(participants)):
        other_cnt = cnt - present[k]
        shared = present[k] & (other_cnt > 0)
        if shared.sum() < min_shared:
            continue
        others = (tot - filled[k])[shared] / other_cnt[shared]
        try:
            rs.append(pearson(mat[k, shared], others))
        except UndefinedCorrelationError:
            logger.warning("participant %s has a constant measure; skipped", participants[k])
    if len(rs) < 3:
        raise CoverageError("fewer than 3 participants overlap with the others on enough images")
    return float(np.mean(rs))


def _embed_one(embedding, texts):
    return embedding.embed(list(texts))


def validity_screen(description, gold_standards, embedding, threshold=VALIDITY_THRESHOLD):
    """True (keep) iff the description is at least ``threshold`` similar to some gold standard."""
    if not gold_standards:
        raise DataError("no gold standards to screen against")
    vecs = _embed_one(embedding, [description] + list(gold_standards))
    best = max(cosine(vecs[0], g) for g in vecs[1:])
    return best >= threshold


def description_accuracy(response, references, embedding):
    """Mean cosine similarity between a response and each reference caption."""
    if not references:
        raise DataError("references must be nonempty")
    vecs = _embed_one(embedding, [response] + list(references))
    return math.fsum(cosine(vecs[0], r) for r in vecs[1:]) / len(references)


def screen_records(records, references, embedding, threshold=VALIDITY_THRESHOLD):
    """Mark free-viewing records whose typed description fails the screen; returns the discard rate."""
    checked = discarded = 0
    for r in records:
        if r.condition != "free-viewing" or not r.description:
            continue
        refs = references.get(r.image_id)
        if not refs:
            continue
        checked += 1
        r.valid = validity_screen(r.description, refs, embedding, threshold)
        discarded += not r.valid
    return discarded / checked if checked else 0.0


def aggregate_by_image(records, measure, condition=None):
    """Per-image mean of a measure over valid records; images with no valid record are dropped."""
    sums = defaultdict(float)
    counts = defaultdict(int)
    seen = set()
    for r in records:
        if condition is not None and r.condition != condition:
            continue
        seen.add(r.image_id)
        if not r.valid:
            continue
        v = measure(r) if callable(measure) else getattr(r, measure)
        if v is None or (isinstance(v, float) and math.isnan(v)):
            continue
        sums[r.image_id] += float(v)
        counts[r.image_id] += 1
    dropped = sorted(seen - set(counts))
    if dropped:
        warnings.warn(f"{len(dropped)} image(s) have no valid records and were excluded: {dropped[:5]}")
    return {i: sums[i] / counts[i] for i in sorted(counts)}


@dataclass
class CorrelationReport:
    metric_name: str
    r: float
    ci_low: Optional[float]
    ci_high: Optional[float]
    n_boot: int
    p_delta: Optional[float] = None
    reference: Optional[str] = None
    n_images: int = 0
    n_skipped: int = 0

    def __post_init__(self):
        if not -1.0 <= self.r <= 1.0:
            raise ValueError("r must lie in [-1, 1]")

    def to_dict(self):
        return asdict(self)


def participant_bootstrap_rs(records, measure, metrics, images, n_boot=N_BOOT, seed=0, condition=None):
    """Bootstrap r resampling participants; image means are recomputed per resample.

    ``metrics`` is (len(images), M), aligned with ``images``. Returns (n_boot, M).
    """
    participants, rec_images, mat = participant_matrix(records, measure, condition)
    col = {i: k for k, i in enumerate(rec_images)}
    missing = [i for i in images if i not in col]
    if missing:
        raise AlignmentError(f"no behaviour for images {missing[:5]}")
    mat = mat[:, [col[i] for i in images]]
    metrics = np.asarray(metrics, dtype=np.float64).reshape(len(images), -1)
    present = ~np.isnan(mat)
    filled = np.where(present, mat, 0.0)
    rng = np.random.default_rng(seed)
    P = len(participants)
    rs = np.full((n_boot, metrics.shape[1]), np.nan)
    for b in range(n_boot):
        w = np.bincount(rng.integers(0, P, size=P), minlength=P).astype(float)
        cnt = w @ present
        ok = cnt > 0
        if ok.sum() < 3:
            continue
        means = (w @ filled)[ok] / cnt[ok]
        for m in range(metrics.shape[1]):
            try:
                rs[b, m] = pearson(metrics[ok, m], means)
            except UndefinedCorrelationError:
                pass
    return rs


def bootstrap_participants(records, measure, scores, n_boot=N_BOOT, seed=0, condition=None):
    """95% CI of r when participants (not images) are resampled."""
    _, rec_images, _ = participant_matrix(records, measure, condition)
    images = [i for i in rec_images if i in scores]
    if len(images) < 3:
        raise CoverageError("fewer than 3 scored images with behaviour")
    rs = participant_bootstrap_rs(records, measure, [scores[i] for i in images], images, n_boot, seed, condition)
    _check_skips(rs[:, 0], n_boot)
    return percentile_ci(rs[:, 0])


def correlation_table(metric_scores, behavior, reference_metric, n_boot=N_BOOT, seed=0,
                      reference_overrides=None, scheme="images", records=None, measure=None,
                      condition=None, direction=1):
    """Table-1 style rows: each metric's r with CI and p for (reference - metric) > 0.

    ``metric_scores`` maps metric name -> {image_id: value}; ``behavior`` is
    {image_id: per-image mean}. Only images shared by every metric and the
    behaviour are used, so all rows see the same resamples. With
    ``scheme="participants"`` the resampling unit is the participant, which
    needs ``records`` and ``measure``. ``direction=-1`` is for measures where
    a stronger negative correlation is the better prediction (accuracy), so
    the p-value tests ``-(r_ref - r_m) > 0``.
    """
    if reference_metric not in metric_scores:
        raise DataError(f"reference metric {reference_metric!r} not among {sorted(metric_scores)}")
    overrides = dict(reference_overrides or {})
    names = list(metric_scores)
    references = {reference_metric} | set(overrides.values())
    shared = set(behavior)
    for name in names:
        shared &= set(metric_scores[name])
    images = sorted(shared)
    if len(images) < 3:
        raise CoverageError("fewer than 3 images have both behaviour and every metric")
    y = np.array([behavior[i] for i in images])
    X = np.column_stack([[metric_scores[n][i] for i in images] for n in names])
    if scheme == "images":
        rs = bootstrap_rs(X, y, n_boot, seed)
    elif scheme == "participants":
        if records is None or measure is None:
            raise DataError("participant resampling needs the behavioural records and measure")
        rs = participant_bootstrap_rs(records, measure, X, images, n_boot, seed, condition)
    else:
        raise DataError(f"unknown bootstrap scheme {scheme!r}")
    rows = []
    for k, name in enumerate(names):
        r = pearson(X[:, k], y)
        skipped = _check_skips(rs[:, k], n_boot)
        lo, hi = percentile_ci(rs[:, k])
        ref = overrides.get(name, reference_metric)
        p = None
        if name not in references and ref in names:
            p = delta_p_value(direction * rs[:, names.index(ref)], direction * rs[:, k])
        rows.append(CorrelationReport(name, r, lo, hi, n_boot, p, None if p is None else ref, len(images), skipped))
    return rows


# measure name -> (record attribute, condition, direction of a better prediction)
MEASURES = {
    "rt": ("rt_ms", "free-viewing", 1),
    "saccades": ("saccade_count", "free-viewing", 1),
    "accuracy_2sacc": ("accuracy", "2-saccade", -1),
    "accuracy_4sacc": ("accuracy", "4-saccade", -1),
}


def score_accuracy(records, references, embedding):
    """Fill ``record.accuracy`` for saccade-limited records with a description.

    Records without a description keep any precomputed accuracy.
    """
    n = 0
    for r in records:
        if r.condition == "free-viewing" or not r.description:
            continue
        refs = references.get(r.image_id)
        if refs:
            r.accuracy = description_accuracy(r.description, refs, embedding)
            n += 1
    return n


def build_report(records, metric_scores, reference_metric="fsum", n_boot=N_BOOT, seed=0,
                 references=None, embedding=None, threshold=VALIDITY_THRESHOLD,
                 scheme="images", reference_overrides=None):
    """Screen, aggregate and correlate; one table per behavioural measure.

    ``references`` ({image_id: [5 captions]}) and ``embedding`` enable the
    validity screen and the description-accuracy measures.
    """
    report = {
        "reference_metric": reference_metric,
        "n_boot": n_boot,
        "seed": seed,
        "bootstrap_scheme": scheme,
        "validity_threshold": threshold,
        "validity_screened": False,
        "discard_rate": None,
        "measures": {},
        "notes": [],
    }
    if references and embedding is not None:
        report["discard_rate"] = screen_records(records, references, embedding, threshold)
        report["validity_screened"] = True
        score_accuracy(records, references, embedding)
    else:
        report["notes"].append("no references/embedding backend: validity screen and accuracy skipped")
    for name, (attr, cond, direction) in MEASURES.items():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            behavior = aggregate_by_image(records, attr, cond)
        if len(behavior) < 3:
            continue
        try:
            rows = correlation_table(metric_scores, behavior, reference_metric, n_boot, seed,
                                     reference_overrides, scheme, records, attr, cond, direction)
        except (CoverageError, UndefinedCorrelationError) as exc:
            report["notes"].append(f"{name}: {exc}")
            continue
        try:
            human = leave_one_out_consistency(records, attr, cond)
        except (CoverageError, UndefinedCorrelationError) as exc:
            human = None
            report["notes"].append(f"{name}: human-human consistency unavailable ({exc})")
        report["measures"][name] = {
            "direction": direction,
            "rows": [row.to_dict() for row in rows],
            "human_human_r": human,
            "n_images": rows[0].n_images,
        }
    return report
