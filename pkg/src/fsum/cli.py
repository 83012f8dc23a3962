"""Command-line entry points.

``fsum <command>`` with commands foveate, build, score, baseline, analyze,
render, run and synth; ``foveate`` is also installed as its own script.
Exit codes: 0 success, 2 config error, 3 backend error, 4 data error.
"""

import argparse
import logging
import sys
from pathlib import Path

from . import __version__, analysis, pipeline, synthetic
from .backends import build_backends
from .config import Manifest, RunConfig
from .errors import CapabilityError, DataError, FsumError
from .fsum_map import NormalizationStats
from .foveation import FixationPoint, foveate
from .imageio import load_image, save_png

log = logging.getLogger("fsum")


def _fixation(text):
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y, got {text!r}") from None
    return FixationPoint(x, y)


def _override(text):
    metric, sep, ref = text.partition("=")
    if not sep or not metric or not ref:
        raise argparse.ArgumentTypeError(f"expected METRIC=REFERENCE, got {text!r}")
    return metric, ref


def _load_config(args):
    overrides = {}
    if getattr(args, "profile", None):
        overrides["profile"] = args.profile
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "cache_dir", None):
        overrides["cache_dir"] = args.cache_dir
    return RunConfig.load(getattr(args, "config", None), **overrides)


def _backends(cfg, args):
    cache = None if getattr(args, "no_cache", False) else cfg.cache_dir
    return build_backends(cfg.profile, cache_dir=cache)


def _common(p, seed=True):
    p.add_argument("--config", type=Path, help="TOML run configuration")
    p.add_argument("--profile", help="backend profile (stub, closed, open or one defined in the config)")
    p.add_argument("--cache-dir", help="response cache directory")
    p.add_argument("--no-cache", action="store_true", help="do not read or write the response cache")
    if seed:
        p.add_argument("--seed", type=int)


# ---------------------------------------------------------------------------
# commands


def cmd_foveate(args):
    cfg = RunConfig.load(args.params)
    image = load_image(args.image)
    out = args.out or Path(args.image).with_name(Path(args.image).stem + "_foveated.png")
    fov = foveate(image, args.fix, cfg.foveation)
    save_png(fov, out)
    if args.preview:
        from .plotting import render_foveation_preview

        render_foveation_preview(image, fov, args.fix, args.preview)
    print(out)
    return 0


def cmd_build(args):
    cfg = _load_config(args)
    manifest = Manifest.load(args.manifest)
    caption, embedding = _backends(cfg, args)
    ledger = pipeline.ErrorLedger()
    maps = pipeline.build_maps(manifest, cfg, caption, embedding, args.out, ledger)
    pipeline._dump({"errors": ledger.entries, **cfg.provenance()}, Path(args.out) / "errors.json")
    ledger.check(len(manifest.entries))
    print(f"{len(maps)} maps written to {args.out}")
    return 0


def cmd_score(args):
    cfg = _load_config(args)
    maps = pipeline.load_maps(args.maps)
    stats = NormalizationStats.load(args.stats) if args.stats else None
    reports, stats = pipeline.score_maps(maps, cfg, stats)
    pipeline.write_scores(reports, args.out, cfg.provenance())
    if args.save_stats:
        stats.save(args.save_stats)
    for r in reports:
        print(f"{r.image_id}\t{r.s_raw:.6f}\t{r.difficulty:.4f}")
    return 0


def cmd_baseline(args):
    cfg = _load_config(args)
    manifest = Manifest.load(args.manifest)
    caption, _ = _backends(cfg, args)
    ledger = pipeline.ErrorLedger()
    notes = []
    rows = pipeline.compute_baselines(manifest, cfg, caption, [args.metric], ledger, notes)
    if args.metric == "entropy" and notes:
        raise CapabilityError(notes[0])
    pipeline.write_long_csv(rows, args.out)
    ledger.check(len(manifest.entries))
    print(f"{len(rows)} rows written to {args.out}")
    return 0


def cmd_analyze(args):
    cfg = _load_config(args)
    records = analysis.load_behavior_csv(args.behavior)
    scores = {}
    for path in args.scores:
        for name, vals in analysis.load_scores_csv(path).items():
            scores.setdefault(name, {}).update(vals)
    references = embedding = None
    if args.manifest is not None:
        references = Manifest.load(args.manifest).references or None
        if references:
            _, embedding = _backends(cfg, args)
    if args.n_boot is not None:
        cfg.data["analysis"]["n_boot"] = args.n_boot
    if args.scheme is not None:
        cfg.data["analysis"]["bootstrap_scheme"] = args.scheme
    report = pipeline.analyze(records, scores, cfg, references, embedding,
                              reference_metric=args.reference_metric, seed=cfg.seed,
                              reference_overrides=dict(args.override or []))
    pipeline.write_report(report, args.out, cfg.provenance())
    for name, table in report["measures"].items():
        print(f"[{name}] n={table['n_images']}")
        print("metric,r,ci_low,ci_high,p_delta")
        for row in table["rows"]:
            p = "" if row["p_delta"] is None else f"{row['p_delta']:.4f}"
            print(f"{row['metric_name']},{row['r']:.4f},{row['ci_low']:.4f},{row['ci_high']:.4f},{p}")
        hh = table["human_human_r"]
        print(f"human-human,{'' if hh is None else f'{hh:.4f}'},,,")
    for note in report["notes"]:
        print(f"note: {note}", file=sys.stderr)
    return 0


def cmd_render(args):
    cfg = _load_config(args)
    maps = pipeline.load_maps(args.maps)
    manifest = Manifest.load(args.manifest)
    ledger = pipeline.ErrorLedger()
    paths = pipeline.render_maps(maps, manifest, args.out, cfg, ledger)
    for p in paths:
        print(p)
    ledger.check(len(maps))
    return 0


def cmd_run(args):
    cfg = _load_config(args)
    manifest = Manifest.load(args.manifest)
    backends = _backends(cfg, args)
    root = pipeline.run_pipeline(manifest, cfg, args.out, behavior=args.behavior,
                                 extra_scores=args.scores, backends=backends)
    print(root)
    return 0


def cmd_synth(args):
    manifest = synthetic.make_synthetic_dataset(args.out, args.n_images, args.seed, args.dataset_id)
    out = Path(args.out)
    records = synthetic.behavior_for_manifest(manifest, args.participants, args.seed)
    analysis.write_behavior_csv(records, out / "behavior.csv")
    print(out / "manifest.json")
    print(out / "behavior.csv")
    return 0


# ---------------------------------------------------------------------------
# parsers


def _add_foveate_args(p):
    p.add_argument("--image", required=True, type=Path)
    p.add_argument("--fix", required=True, type=_fixation, metavar="X,Y", help="fixation in pixel coordinates")
    p.add_argument("--out", type=Path)
    p.add_argument("--params", type=Path, help="TOML file with a [foveation] section")
    p.add_argument("--preview", type=Path, help="also write a side-by-side preview PNG")
    p.set_defaults(func=cmd_foveate)


def build_parser():
    parser = argparse.ArgumentParser(prog="fsum", description="Foveated scene understanding maps and difficulty scores.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    _add_foveate_args(sub.add_parser("foveate", help="render one foveated view"))

    p = sub.add_parser("build", help="compute maps for a manifest")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="directory for map JSON files")
    _common(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("score", help="score a directory of maps")
    p.add_argument("--maps", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="scores CSV (a .jsonl twin is written alongside)")
    p.add_argument("--stats", type=Path, help="stored score normalisation to apply instead of pooling")
    p.add_argument("--save-stats", type=Path)
    _common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("baseline", help="compute one baseline metric")
    p.add_argument("--metric", required=True, choices=pipeline.BASELINE_METRICS)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _common(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("analyze", help="correlate metric scores with behaviour")
    p.add_argument("--behavior", required=True, type=Path)
    p.add_argument("--scores", required=True, type=Path, action="append",
                   help="scores CSV (long format or a score table); repeatable")
    p.add_argument("--reference-metric", default="fsum")
    p.add_argument("--override", type=_override, action="append", metavar="METRIC=REF",
                   help="compare METRIC against REF instead of the reference metric")
    p.add_argument("--manifest", type=Path, help="manifest with human references (enables screening)")
    p.add_argument("--n-boot", type=int)
    p.add_argument("--scheme", choices=("images", "participants"))
    p.add_argument("--out", type=Path, default=Path("reports"))
    _common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("render", help="render heatmaps for a directory of maps")
    p.add_argument("--maps", required=True, type=Path)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("run", help="end-to-end pipeline")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--behavior", type=Path)
    p.add_argument("--scores", type=Path, help="extra third-party scores (long format)")
    _common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="write a synthetic dataset and behaviour CSV")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--n-images", type=int, default=10)
    p.add_argument("--participants", type=int, default=8)
    p.add_argument("--dataset-id", default="synthetic")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def _dispatch(parser, argv):
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * getattr(args, "verbose", 0)
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FsumError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except KeyboardInterrupt:
        return 130


def main(argv=None):
    return _dispatch(build_parser(), argv)


def foveate_main(argv=None):
    parser = argparse.ArgumentParser(prog="foveate", description="Render one foveated view of an image.")
    _add_foveate_args(parser)
    return _dispatch(parser, argv)


if __name__ == "__main__":
    sys.exit(main())
