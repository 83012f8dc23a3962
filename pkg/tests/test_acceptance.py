"""Acceptance criteria 1-8, each printing one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` (or ``-m acceptance``).
"""

import csv
import json
import shutil
import time

import httpx
import numpy as np
import pytest

from fsum.analysis import (
    BehavioralRecord,
    bootstrap,
    paired_delta_test,
    pearson,
    write_behavior_csv,
)
from fsum.backends import build_backends
from fsum.baselines import entropy_from_logliks, language_entropy
from fsum.cli import main
from fsum.config import BUILTIN_PROFILES, RunConfig
from fsum.errors import CapabilityError
from fsum.foveation import FoveationParams, blend_weights, build_pyramid, foveate
from fsum.fsum_map import build_raw_map, mean_pairwise_cosine
from fsum.pipeline import run_pipeline
from fsum.scoring import brute_force_oracle, weighted_k_score
from fsum.synthetic import behavior_for_manifest, correlated_with, make_synthetic_dataset, participants_with_means

pytestmark = pytest.mark.acceptance

H10 = sum(1.0 / r for r in range(1, 11))


@pytest.fixture
def report(capsys):
    """Call ``report(n, title, ok, detail)`` to print the criterion's verdict line."""

    def emit(n, title, ok, detail=""):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} [{'PASS' if ok else 'FAIL'}] {title}" + (f" -- {detail}" if detail else ""))
        assert ok, detail

    return emit


def test_1_spatial_statistic_oracle(report):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        rows, cols = rng.integers(5, 13, size=2)
        w = rng.random((rows, cols))
        worst = max(worst, abs(weighted_k_score(w) - brute_force_oracle(w)))
    elapsed = time.perf_counter() - t0
    hand = weighted_k_score(np.ones((2, 2)))
    ok = worst < 1e-9 and elapsed < 10 and abs(hand - 2.5 / H10) < 1e-9 and abs(hand - 0.85354) < 1e-5
    report(1, "weighted K equals brute-force oracle", ok,
           f"max |diff| {worst:.1e}, {elapsed:.2f}s, 2x2 ones s_raw {hand:.12f}")


def test_2_scoring_design(report):
    rng = np.random.default_rng(7)
    uniform = [weighted_k_score(np.full((9, 12), v)) for v in np.linspace(0.05, 1, 20)]
    monotone = bool(np.all(np.diff(uniform) > 0))
    clustered = np.zeros((8, 8))
    clustered[2:6, 2:6] = 1.0
    dispersed = np.zeros((8, 8))
    dispersed[::2, ::2] = 1.0
    order = weighted_k_score(clustered) > weighted_k_score(dispersed)
    sym_err = scale_err = 0.0
    for _ in range(50):
        w = rng.random(tuple(rng.integers(3, 12, size=2)))
        s = weighted_k_score(w)
        for t in (np.fliplr(w), np.flipud(w), np.rot90(w), np.rot90(w, 3)):
            sym_err = max(sym_err, abs(weighted_k_score(t) - s))
        c = rng.uniform(0.1, 3.0)
        scale_err = max(scale_err, abs(weighted_k_score(c * w) - c * c * s))
    ok = monotone and order and sym_err <= 1e-12 and scale_err <= 1e-12
    report(2, "scoring design criteria", ok,
           f"uniform monotone={monotone}, clustered>dispersed={order}, "
           f"symmetry err {sym_err:.1e}, scaling err {scale_err:.1e}")


def test_3_raw_map_correctness(report):
    hand = mean_pairwise_cosine([[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [1.0, 0.0]])
    rng = np.random.default_rng(3)
    perm_err = 0.0
    for _ in range(50):
        n, d = int(rng.integers(2, 7)), int(rng.integers(3, 20))
        gold = rng.normal(size=(n, d))
        fov = [[rng.normal(size=(n, d)) for _ in range(3)] for _ in range(2)]
        base = build_raw_map(gold, fov)
        shuffled = [[cell[rng.permutation(n)] for cell in row] for row in fov]
        perm_err = max(perm_err, float(np.abs(build_raw_map(gold[rng.permutation(n)], shuffled) - base).max()))
    v = rng.normal(size=32)
    ones = build_raw_map([v] * 5, [[[v] * 5] * 12] * 9)
    ok = hand == 0.5 and perm_err < 1e-12 and np.array_equal(ones, np.ones((9, 12)))
    report(3, "raw map (mean pairwise cosine)", ok,
           f"N=2 case {hand!r}, permutation err {perm_err:.1e}, identical -> all ones {bool(np.all(ones == 1.0))}")


def test_4_foveation_invariants(report):
    const = np.full((480, 640, 3), 0.4)
    idem = all(np.array_equal(level, const) for level in build_pyramid(const, 6)) and \
        np.array_equal(foveate(const, (100.0, 200.0)), const)
    params = FoveationParams()
    worst_fovea = 0.0
    monotone = 0
    convex = True
    edges = [0, 8, 16, 32, 64, 128, 240]
    yy, xx = np.mgrid[0:480, 0:640]
    for seed in range(20):
        rng = np.random.default_rng(seed)
        img = rng.random((480, 640))
        fix = (float(rng.uniform(240, 400)), float(rng.uniform(200, 280)))
        out = foveate(img, fix, params)
        w = blend_weights(img.shape, fix, params)
        convex &= bool(np.all(w >= 0) and np.allclose(w.sum(axis=0), 1.0, atol=1e-12))
        fovea = w[0] == 1.0
        worst_fovea = max(worst_fovea, float(np.abs(out - img)[fovea].max()))
        ecc = np.hypot(xx - fix[0], yy - fix[1])
        err = np.abs(out - img)
        ann = [err[(ecc >= a) & (ecc < b)].mean() for a, b in zip(edges[:-1], edges[1:])]
        monotone += bool(np.all(np.diff(ann) >= 0) and ann[-1] > ann[0])
    ok = idem and worst_fovea <= 1 / 255 and monotone == 20 and convex
    report(4, "foveation invariants", ok,
           f"constant exact={idem}, foveal max err {worst_fovea:.1e}, monotone seeds {monotone}/20, convex={convex}")


def test_5_entropy_arithmetic(report, monkeypatch):
    cases = [entropy_from_logliks([0.0]), entropy_from_logliks([-1.0, -3.0]), entropy_from_logliks([-2.5] * 10)]
    exact = cases == [0.0, 2.0, 2.5]
    monkeypatch.setenv("OPENAI_API_KEY", "unused")
    monkeypatch.setenv("GEMINI_API_KEY", "unused")
    requests = []

    def handler(request):
        requests.append(request)
        return httpx.Response(500)

    caption, _ = build_backends(BUILTIN_PROFILES["closed"], transport=httpx.MockTransport(handler))
    try:
        language_entropy(np.zeros((64, 64)), caption)
        raised = False
    except CapabilityError:
        raised = True
    ok = exact and raised and not requests
    report(5, "entropy arithmetic and closed-profile capability error", ok,
           f"cases {cases}, capability error raised={raised}, requests sent={len(requests)}")


def test_6_statistics(report):
    t0 = time.perf_counter()
    x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    closed_form = (abs(pearson(x, 2 * x + 3) - 1) <= 1e-12 and abs(pearson(x, -x) + 1) <= 1e-12
                   and abs(pearson([1.0, 2.0, 3.0, 4.0], [1.0, -1.0, -1.0, 1.0])) <= 1e-12)
    rng = np.random.default_rng(11)
    a, b = rng.normal(size=(2, 80))
    reproducible = bootstrap(a, a + b, 10_000, seed=3) == bootstrap(a, a + b, 10_000, seed=3)
    rho, hits = 0.5, 0
    for rep in range(100):
        r = np.random.default_rng(500 + rep)
        xs, ys = r.multivariate_normal([0, 0], [[1, rho], [rho, 1]], size=100).T
        lo, hi = bootstrap(xs, ys, 2000, seed=rep)
        hits += lo <= rho <= hi
    m = rng.normal(size=100)
    y = 0.5 * m + rng.normal(size=100)
    p_same = paired_delta_test(m, m.copy(), y, 10_000, seed=5)
    elapsed = time.perf_counter() - t0
    ok = closed_form and reproducible and hits >= 90 and abs(p_same - 0.5) <= 0.05 and elapsed < 120
    report(6, "statistics", ok,
           f"closed forms={closed_form}, bit-reproducible={reproducible}, coverage {hits}/100, "
           f"identical-metric p {p_same}, {elapsed:.1f}s")


def _tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_7_end_to_end_offline(report, tmp_path, no_network):
    t0 = time.perf_counter()
    manifest = make_synthetic_dataset(tmp_path / "data", n_images=10, seed=0)
    behavior = behavior_for_manifest(manifest, 8, seed=0)
    write_behavior_csv(behavior, tmp_path / "behavior.csv")
    cfg = RunConfig.load(None, cache_dir=str(tmp_path / "cache"))
    root = run_pipeline(manifest, cfg, tmp_path / "run1", behavior=tmp_path / "behavior.csv")
    first = _tree(root)
    shutil.rmtree(root)
    root2 = run_pipeline(manifest, cfg, tmp_path / "run2", behavior=tmp_path / "behavior.csv")
    second = _tree(root2)
    elapsed = time.perf_counter() - t0
    n_maps = sum(k.startswith("maps/img") for k in first)
    n_renders = sum(k.startswith("renders/") for k in first)
    has = all(k in first for k in ("scores/scores.csv", "reports/analysis.json", "reports/table_rt.csv", "run.json"))
    identical = first == second
    ok = n_maps == 10 and n_renders == 20 and has and identical and not no_network and elapsed < 60
    report(7, "end-to-end offline run", ok,
           f"{n_maps} maps, {n_renders} heatmaps, report={has}, byte-identical={identical}, "
           f"network calls={len(no_network)}, {elapsed:.1f}s")


# constructed per-image correlations of the reference metric with each measure
FSUM_R = {"rt": 0.47, "saccades": 0.51, "accuracy_2sacc": -0.56, "accuracy_4sacc": -0.54}
# baselines are built against RT only; their r on the other measures is computed, not set
BASELINE_RT_R = {"edge-density": 0.30, "entropy": 0.22, "prompted": 0.10}


def _synthetic_study(tmp_path, n_images=277, seed=0):
    """Behaviour CSV and scores CSV whose per-image correlations are known exactly."""
    rng = np.random.default_rng(seed)
    ids = [f"s{k:03d}" for k in range(n_images)]
    latent = rng.normal(size=n_images)
    metrics = {"fsum": latent}
    measures = {}
    for measure, r in FSUM_R.items():
        # standardised so integer saccade counts keep the signal
        y = correlated_with(metrics["fsum"], r, rng)
        measures[measure] = (y - y.mean()) / y.std()
    for name, r in BASELINE_RT_R.items():
        metrics[name] = correlated_with(measures["rt"], r, rng)
    records = []
    specs = {
        "rt": ("rt_ms", "free-viewing", 17, lambda v: 4000 + 800 * v),
        "saccades": ("saccade_count", "free-viewing", 17, lambda v: 12 + 3 * v),
        "accuracy_2sacc": ("accuracy", "2-saccade", 16, lambda v: 0.6 + 0.05 * v),
        "accuracy_4sacc": ("accuracy", "4-saccade", 16, lambda v: 0.7 + 0.05 * v),
    }
    free = {}
    for measure, (column, cond, n_part, scale) in specs.items():
        means = {i: float(scale(v)) for i, v in zip(ids, measures[measure])}
        recs = participants_with_means(means, n_part, 0.5 * float(np.std(list(means.values()))), rng, column, cond)
        if cond == "free-viewing":
            for r in recs:
                free.setdefault((r.participant_id, r.image_id), {}).update(
                    {k: getattr(r, k) for k in ("rt_ms", "saccade_count") if getattr(r, k) is not None})
        else:
            records.extend(recs)
    for (pid, iid), vals in sorted(free.items()):
        records.append(BehavioralRecord(pid, iid, "free-viewing", **vals))
    write_behavior_csv(records, tmp_path / "behavior.csv")
    with open(tmp_path / "scores.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "metric_name", "value"])
        for name, vals in metrics.items():
            for i, v in zip(ids, vals):
                w.writerow([i, name, repr(float(v))])
    expected = {m: {name: pearson(metrics[name], measures[m]) for name in metrics} for m in measures}
    return expected


def test_8_correlation_table_recovers_constructed_r(report, tmp_path, capsys):
    expected = _synthetic_study(tmp_path)
    out = tmp_path / "reports"
    code = main(["analyze", "--behavior", str(tmp_path / "behavior.csv"), "--scores", str(tmp_path / "scores.csv"),
                 "--reference-metric", "fsum", "--seed", "7", "--out", str(out)])
    table_out = capsys.readouterr().out
    doc = json.loads((out / "analysis.json").read_text())
    worst = 0.0
    shaped = True
    for measure, want in expected.items():
        table = doc["measures"][measure]
        rows = {r["metric_name"]: r for r in table["rows"]}
        shaped &= table["n_images"] == 277 and table["human_human_r"] is not None
        shaped &= all(r["ci_low"] is not None and r["ci_high"] is not None for r in rows.values())
        shaped &= rows["fsum"]["p_delta"] is None and all(
            rows[m]["p_delta"] is not None for m in rows if m != "fsum")
        for name, r in want.items():
            worst = max(worst, abs(rows[name]["r"] - r))
        with open(out / f"table_{measure}.csv") as fh:
            header = next(csv.reader(fh))
        shaped &= header[:5] == ["metric", "r", "ci_low", "ci_high", "p_delta"]
    recovered = {m: round(doc["measures"][m]["rows"][0]["r"], 3) for m in expected}
    ok = code == 0 and shaped and worst <= 0.05
    with capsys.disabled():
        print("\n" + table_out.strip())
        print("note: real-data correlations need the original 277-image behavioural dataset and commercial "
              "backends; only the harness is validated here.")
    report(8, "correlation-table report on synthetic n=277", ok,
           f"max |r - constructed| {worst:.2e}, fsum r per measure {recovered}")
