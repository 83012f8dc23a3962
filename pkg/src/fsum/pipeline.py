"""End-to-end runs: manifest -> maps -> scores -> baselines -> renders -> reports.

Artifacts land in ``out/{dataset_id}/{maps,scores,renders,reports}/`` with a
single ``run.json`` provenance record. Nothing written depends on wall-clock
time or cache state, so a rerun with the same config hash is byte-identical.
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, baselines
from .backends import build_backends
from .errors import BackendError, CapabilityError, ConfigError, DataError, FsumError
from .fsum_map import FSumMap, NormalizationStats, build_fsum
from .imageio import load_image
from .plotting import render_correlations, render_heatmap
from .scoring import difficulty_from_scores, score_map

log = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.10
NORMALIZATION_FILE = "normalization.json"
BASELINE_METRICS = ("pixel-entropy", "edge-density", "entropy", "prompted")
TABLE_FIELDS = ["metric", "r", "ci_low", "ci_high", "p_delta", "reference", "n_images", "n_boot"]


def _dump(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _describe(provenance):
    return f"config_hash={provenance['config_hash']} code_version={provenance['code_version']}"


@dataclass
class ErrorLedger:
    """Per-image failures; the run continues until too many images fail."""

    entries: list = field(default_factory=list)

    def add(self, image_id, stage, exc):
        log.warning("%s: %s failed: %s", image_id, stage, exc)
        self.entries.append({
            "image_id": image_id,
            "stage": stage,
            "error": type(exc).__name__,
            "message": str(exc),
            "exit_code": exc.exit_code if isinstance(exc, FsumError) else DataError.exit_code,
        })

    @property
    def failed_images(self):
        return sorted({e["image_id"] for e in self.entries})

    def check(self, n_images, limit=MAX_FAILURE_FRACTION):
        failed = len(self.failed_images)
        if n_images and failed / n_images > limit:
            msg = f"{failed} of {n_images} images failed (limit {limit:.0%}); see errors.json"
            # an unreachable or broken backend is reported as such
            if all(e["exit_code"] == BackendError.exit_code for e in self.entries):
                raise BackendError(msg)
            raise DataError(msg)


# ---------------------------------------------------------------------------
# stages


def build_maps(manifest, config, caption, embedding, maps_dir, ledger=None, provenance=None):
    """Raw maps for every manifest image, normalised over the pooled dataset.

    Returns ``{image_id: FSumMap}``; failures go to ``ledger``.
    """
    ledger = ErrorLedger() if ledger is None else ledger
    provenance = provenance or config.provenance()
    settings = config.map_settings
    maps_dir = Path(maps_dir)
    raw = {}
    for entry in manifest.entries:
        try:
            image = load_image(entry.path)
            raw[entry.image_id] = build_fsum(image, caption, embedding, settings, entry.image_id)
        except ConfigError:
            raise
        except FsumError as exc:
            ledger.add(entry.image_id, "map", exc)
    if not raw:
        raise DataError("no image produced a map")
    stats = NormalizationStats.from_values([m.raw for m in raw.values()], source=manifest.dataset_id)
    fallback = len(raw) == 1
    _dump({**stats.to_dict(), **provenance}, maps_dir / NORMALIZATION_FILE)
    maps = {}
    for image_id, m in raw.items():
        fmap = FSumMap(image_id, m.raw, stats.apply(m.raw, fallback=fallback), m.n_samples,
                       NORMALIZATION_FILE, dict(provenance))
        fmap.save(maps_dir / f"{image_id}.json")
        maps[image_id] = fmap
    return maps


def load_maps(maps_dir):
    """Every map JSON in ``maps_dir`` (other JSON files are ignored), keyed by image id."""
    maps = {}
    for path in sorted(Path(maps_dir).glob("*.json")):
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: {exc}") from exc
        if isinstance(doc, dict) and "raw" in doc and "image_id" in doc:
            maps[doc["image_id"]] = FSumMap.from_dict(doc)
    if not maps:
        raise DataError(f"no maps found in {maps_dir}")
    return maps


def score_maps(maps, config, stats=None):
    """Score the normalised maps and attach dataset-normalised difficulties."""
    ids = sorted(maps)
    reports = [score_map(maps[i].normalized, i, config.R, config.closed_bins) for i in ids]
    diffs, stats = difficulty_from_scores([r.s_raw for r in reports], stats=stats,
                                          fallback=len(reports) == 1, source="s_raw")
    for r, d in zip(reports, diffs):
        r.difficulty = d
    return reports, stats


def write_scores(reports, path, provenance):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = ["image_id", "k_values", "s_raw", "difficulty", "config_hash", "code_version"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow({**r.to_row(), **provenance})
    jsonl = path.with_suffix(".jsonl")
    with open(jsonl, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(json.dumps({**r.to_dict(), **provenance}, sort_keys=True) + "\n")
    return path


def compute_baselines(manifest, config, caption, metrics=BASELINE_METRICS, ledger=None, notes=None):
    """Long-format rows ``(image_id, metric_name, value)`` for the requested baselines."""
    ledger = ErrorLedger() if ledger is None else ledger
    notes = [] if notes is None else notes
    metrics = list(metrics)
    unknown = set(metrics) - set(BASELINE_METRICS)
    if unknown:
        raise DataError(f"unknown baseline metrics {sorted(unknown)}")
    if "entropy" in metrics and not caption.supports_loglik:
        notes.append(f"entropy skipped: backend {caption.backend_id} does not expose token log-likelihoods")
        metrics.remove("entropy")
    opts = config.data["baselines"]
    rows = []
    for entry in manifest.entries:
        try:
            image = load_image(entry.path)
        except FsumError as exc:
            ledger.add(entry.image_id, "baseline", exc)
            continue
        for metric in metrics:
            try:
                if metric == "pixel-entropy":
                    value = baselines.pixel_entropy(image)
                elif metric == "edge-density":
                    value = baselines.edge_density(image, float(opts.get("edge_threshold", 0.1)))
                elif metric == "entropy":
                    value = baselines.language_entropy(
                        image, caption, int(config.data["sampling"]["entropy_samples"]),
                        config.temperature, bool(opts.get("per_token", False))).h_hat
                else:
                    value = baselines.prompted_difficulty(image, caption).score
            except CapabilityError:
                raise
            except FsumError as exc:
                ledger.add(entry.image_id, f"baseline:{metric}", exc)
                continue
            rows.append((entry.image_id, metric, float(value)))
    return rows


def write_long_csv(rows, path, provenance=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    extra = provenance or {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "metric_name", "value", *extra])
        for image_id, metric, value in rows:
            w.writerow([image_id, metric, repr(float(value)), *extra.values()])
    return path


def scores_to_long(reports, metric="fsum"):
    return [(r.image_id, metric, r.difficulty) for r in reports]


def rows_to_scores(rows):
    out = {}
    for image_id, metric, value in rows:
        out.setdefault(metric, {})[image_id] = value
    return out


def render_maps(maps, manifest, renders_dir, config, ledger=None, provenance=None):
    ledger = ErrorLedger() if ledger is None else ledger
    cmap = config.data["render"].get("colormap", "viridis")
    desc = _describe(provenance or config.provenance())
    paths = []
    for entry in manifest.entries:
        fmap = maps.get(entry.image_id)
        if fmap is None:
            continue
        try:
            image = load_image(entry.path)
            for mode in ("standalone", "overlay"):
                out = Path(renders_dir) / f"{entry.image_id}_{mode}.png"
                paths.append(render_heatmap(fmap, image, out, mode, cmap, entry.image_id, description=desc))
        except FsumError as exc:
            ledger.add(entry.image_id, "render", exc)
    return paths


def write_report(report, reports_dir, provenance):
    """``analysis.json``, one Table-1-style CSV per measure, and ``correlations.png``."""
    reports_dir = Path(reports_dir)
    report = {**report, **provenance}
    _dump(report, reports_dir / "analysis.json")
    for name, table in report["measures"].items():
        with open(reports_dir / f"table_{name}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=TABLE_FIELDS, lineterminator="\n")
            w.writeheader()
            for row in table["rows"]:
                w.writerow({
                    "metric": row["metric_name"],
                    "r": repr(row["r"]),
                    "ci_low": repr(row["ci_low"]),
                    "ci_high": repr(row["ci_high"]),
                    "p_delta": "" if row["p_delta"] is None else repr(row["p_delta"]),
                    "reference": row["reference"] or "",
                    "n_images": row["n_images"],
                    "n_boot": row["n_boot"],
                })
            hh = table["human_human_r"]
            w.writerow({"metric": "human-human", "r": "" if hh is None else repr(hh),
                        "n_images": table["n_images"]})
    render_correlations(report, reports_dir / "correlations.png", description=_describe(provenance))
    return reports_dir / "analysis.json"


def analyze(records, metric_scores, config, references=None, embedding=None, reference_metric=None,
            seed=None, reference_overrides=None):
    opts = config.analysis
    return analysis.build_report(
        records,
        metric_scores,
        reference_metric=reference_metric or opts["reference_metric"],
        n_boot=int(opts["n_boot"]),
        seed=config.seed if seed is None else seed,
        references=references,
        embedding=embedding,
        threshold=float(opts["validity_threshold"]),
        scheme=opts["bootstrap_scheme"],
        reference_overrides=reference_overrides,
    )


# ---------------------------------------------------------------------------
# orchestration


def run_pipeline(manifest, config, out_dir, behavior=None, extra_scores=None, backends=None):
    """Run every stage; returns the dataset output directory.

    ``behavior`` is a behavioural CSV path or a list of records;
    ``extra_scores`` is an optional third-party long-format scores CSV.
    ``backends`` overrides the profile's ``(caption, embedding)`` pair.
    """
    root = Path(out_dir) / manifest.dataset_id
    provenance = config.provenance()
    if backends is None:
        backends = build_backends(config.profile, cache_dir=config.cache_dir)
    caption, embedding = backends
    ledger = ErrorLedger()
    notes = []

    maps = build_maps(manifest, config, caption, embedding, root / "maps", ledger, provenance)
    reports, score_stats = score_maps(maps, config)
    write_scores(reports, root / "scores" / "scores.csv", provenance)
    _dump({**score_stats.to_dict(), **provenance}, root / "scores" / "score_normalization.json")

    metrics = config.data["baselines"].get("metrics", list(BASELINE_METRICS))
    rows = compute_baselines(manifest, config, caption, metrics, ledger, notes)
    write_long_csv(rows, root / "scores" / "baselines.csv", provenance)
    all_rows = scores_to_long(reports) + rows
    write_long_csv(all_rows, root / "scores" / "metrics.csv", provenance)

    if config.data["render"].get("enabled", True):
        render_maps(maps, manifest, root / "renders", config, ledger, provenance)

    if behavior is not None:
        records = analysis.load_behavior_csv(behavior) if isinstance(behavior, (str, Path)) else list(behavior)
        metric_scores = rows_to_scores(all_rows)
        if extra_scores is not None:
            for name, vals in analysis.load_scores_csv(extra_scores).items():
                metric_scores.setdefault(name, {}).update(vals)
        report = analyze(records, metric_scores, config, manifest.references or None, embedding)
        write_report(report, root / "reports", provenance)

    difficulties = np.array([r.difficulty for r in reports])
    summary = {
        "dataset_id": manifest.dataset_id,
        "n_images": len(manifest.entries),
        "n_maps": len(maps),
        "n_scores": len(reports),
        "failed_images": ledger.failed_images,
        "mean_difficulty": float(difficulties.mean()),
        "notes": notes,
        **provenance,
    }
    _dump(summary, root / "reports" / "summary.json")
    _dump({"errors": ledger.entries, **provenance}, root / "reports" / "errors.json")
    _dump({
        "dataset_id": manifest.dataset_id,
        "profile": config.profile_name,
        "config": {k: v for k, v in config.data.items() if k not in ("cache_dir", "concurrency")},
        "artifacts": sorted({str(p.relative_to(root)) for p in root.rglob("*") if p.is_file()} | {"run.json"}),
        **provenance,
    }, root / "run.json")
    ledger.check(len(manifest.entries))
    return root
