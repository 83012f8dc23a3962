import csv
import json
import shutil

import numpy as np
import pytest
from PIL import Image

from fsum.backends import CachedCaptionBackend, CachedEmbeddingBackend, ResponseCache, StubCaptionBackend, StubEmbeddingBackend
from fsum.cli import foveate_main, main
from fsum.config import Manifest, ManifestEntry, RunConfig
from fsum.errors import DataError
from fsum.imageio import save_png
from fsum.pipeline import run_pipeline
from fsum.synthetic import behavior_for_manifest, make_synthetic_dataset


def _config(tmp_path, **kw):
    return RunConfig.load(None, cache_dir=str(tmp_path / "cache"), analysis={"n_boot": 500}, **kw)


def _cached_stubs(cache_dir):
    inner = StubCaptionBackend(), StubEmbeddingBackend()
    cache = ResponseCache(cache_dir)
    return inner, (CachedCaptionBackend(inner[0], cache), CachedEmbeddingBackend(inner[1], cache))


def _digests(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_stub_run_emits_maps_scores_and_summary(tmp_path, synthetic_dataset, no_network):
    cfg = _config(tmp_path)
    root = run_pipeline(synthetic_dataset, cfg, tmp_path / "out")
    assert root == tmp_path / "out" / "synth5"
    assert len([p for p in (root / "maps").glob("img*.json")]) == 5
    with open(root / "scores" / "scores.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5 and {r["config_hash"] for r in rows} == {cfg.hash()}
    summary = json.loads((root / "reports" / "summary.json").read_text())
    assert summary["n_maps"] == 5 and summary["failed_images"] == []
    run = json.loads((root / "run.json").read_text())
    assert run["config_hash"] == cfg.hash() and "maps/img000.json" in run["artifacts"]
    assert json.loads((root / "maps" / "img000.json").read_text())["config_hash"] == cfg.hash()
    with Image.open(root / "renders" / "img000_overlay.png") as im:
        assert cfg.hash() in im.info["Description"]
    metrics = {r["metric_name"] for r in csv.DictReader(open(root / "scores" / "metrics.csv"))}
    assert metrics == {"fsum", "pixel-entropy", "edge-density", "entropy", "prompted"}
    assert no_network == []


def test_rerun_from_cache_is_identical_with_zero_backend_calls(tmp_path, synthetic_dataset):
    cfg = _config(tmp_path)
    behavior = behavior_for_manifest(synthetic_dataset, 4, seed=1)
    _, backends = _cached_stubs(tmp_path / "cache")
    root = run_pipeline(synthetic_dataset, cfg, tmp_path / "out", behavior=behavior, backends=backends)
    first = _digests(root)
    assert (root / "reports" / "analysis.json").exists()
    shutil.rmtree(root)
    inner, backends = _cached_stubs(tmp_path / "cache")
    behavior = behavior_for_manifest(synthetic_dataset, 4, seed=1)
    run_pipeline(synthetic_dataset, cfg, tmp_path / "out", behavior=behavior, backends=backends)
    assert _digests(root) == first
    assert inner[0].calls == 0 and inner[1].calls == 0


def _with_missing(tmp_path, n_good):
    src = make_synthetic_dataset(tmp_path / "data", n_images=n_good, seed=5, dataset_id="partial")
    entries = src.entries + [ManifestEntry("ghost", tmp_path / "data" / "images" / "ghost.png")]
    return Manifest("partial", entries)


def test_missing_file_is_quarantined(tmp_path):
    manifest = _with_missing(tmp_path, 9)
    root = run_pipeline(manifest, _config(tmp_path), tmp_path / "out")
    errors = json.loads((root / "reports" / "errors.json").read_text())["errors"]
    assert {e["image_id"] for e in errors} == {"ghost"}
    assert {e["stage"] for e in errors} == {"map", "baseline"}
    assert len(list((root / "maps").glob("img*.json"))) == 9


def test_too_many_failures_fail_the_run(tmp_path):
    manifest = _with_missing(tmp_path, 4)
    with pytest.raises(DataError, match="1 of 5 images failed"):
        run_pipeline(manifest, _config(tmp_path), tmp_path / "out")
    # the ledger is still written
    assert (tmp_path / "out" / "partial" / "reports" / "errors.json").exists()


# ---------------------------------------------------------------------------
# CLI


@pytest.fixture(scope="module")
def cli_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--n-images", "6", "--participants", "4"]) == 0
    return root


def test_cli_foveate(tmp_path, capsys):
    img = np.random.default_rng(0).random((48, 64))
    src = save_png(img, tmp_path / "in.png")
    out = tmp_path / "fov.png"
    assert foveate_main(["--image", str(src), "--fix", "10,20", "--out", str(out)]) == 0
    assert main(["foveate", "--image", str(src), "--fix", "10,20", "--preview", str(tmp_path / "p.png")]) == 0
    with Image.open(out) as im:
        assert im.size == (64, 48)
    assert (tmp_path / "in_foveated.png").exists() and (tmp_path / "p.png").exists()
    assert foveate_main(["--image", str(src), "--fix", "100,20", "--out", str(out)]) == 4


def test_cli_build_score_render_baseline_analyze(cli_data, tmp_path, capsys):
    data = cli_data / "data"
    cache = ["--cache-dir", str(tmp_path / "cache")]
    manifest = str(data / "manifest.json")
    assert main(["build", "--manifest", manifest, "--out", str(tmp_path / "maps"), *cache]) == 0
    assert len(list((tmp_path / "maps").glob("img*.json"))) == 6
    assert main(["score", "--maps", str(tmp_path / "maps"), "--out", str(tmp_path / "scores.csv"),
                 "--save-stats", str(tmp_path / "stats.json")]) == 0
    assert (tmp_path / "scores.jsonl").exists()
    assert main(["score", "--maps", str(tmp_path / "maps"), "--out", str(tmp_path / "again.csv"),
                 "--stats", str(tmp_path / "stats.json")]) == 0
    assert (tmp_path / "scores.csv").read_text() == (tmp_path / "again.csv").read_text()
    assert main(["render", "--maps", str(tmp_path / "maps"), "--manifest", manifest,
                 "--out", str(tmp_path / "renders")]) == 0
    assert len(list((tmp_path / "renders").glob("*.png"))) == 12
    for metric in ("pixel-entropy", "edge-density", "entropy", "prompted"):
        out = tmp_path / f"{metric}.csv"
        assert main(["baseline", "--metric", metric, "--manifest", manifest, "--out", str(out), *cache]) == 0
        assert len(out.read_text().splitlines()) == 7
    capsys.readouterr()
    code = main(["analyze", "--behavior", str(data / "behavior.csv"), "--scores", str(tmp_path / "scores.csv"),
                 "--scores", str(tmp_path / "edge-density.csv"), "--reference-metric", "fsum", "--seed", "7",
                 "--n-boot", "300", "--manifest", manifest, "--out", str(tmp_path / "reports"), *cache])
    out = capsys.readouterr().out
    assert code == 0
    assert "metric,r,ci_low,ci_high,p_delta" in out and "human-human" in out
    table = list(csv.DictReader(open(tmp_path / "reports" / "table_rt.csv")))
    assert [r["metric"] for r in table] == ["fsum", "edge-density", "human-human"]
    assert table[0]["p_delta"] == "" and table[1]["p_delta"] != ""


def test_cli_run(cli_data, tmp_path):
    data = cli_data / "data"
    args = ["run", "--manifest", str(data / "manifest.json"), "--out", str(tmp_path / "out"),
            "--behavior", str(data / "behavior.csv"), "--cache-dir", str(tmp_path / "cache")]
    assert main(args) == 0
    assert (tmp_path / "out" / "synthetic" / "reports" / "correlations.png").exists()


def test_cli_exit_codes(cli_data, tmp_path, monkeypatch):
    data = cli_data / "data"
    manifest = str(data / "manifest.json")
    # config error
    assert main(["build", "--manifest", manifest, "--out", str(tmp_path / "m"), "--profile", "nope"]) == 2
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    assert main(["build", "--manifest", manifest, "--out", str(tmp_path / "m"), "--profile", "closed"]) == 2
    # data error
    assert main(["build", "--manifest", str(tmp_path / "none.json"), "--out", str(tmp_path / "m")]) == 4
    assert main(["score", "--maps", str(tmp_path / "empty"), "--out", str(tmp_path / "s.csv")]) == 4
    # backend errors: capability, and an unreachable endpoint
    monkeypatch.setenv("OPENAI_API_KEY", "x")
    monkeypatch.setenv("GEMINI_API_KEY", "x")
    assert main(["baseline", "--metric", "entropy", "--manifest", manifest, "--out", str(tmp_path / "e.csv"),
                 "--profile", "closed", "--no-cache"]) == 3
    cfg = tmp_path / "dead.toml"
    cfg.write_text('[profiles.dead]\nkind = "remote"\nbase_url = "http://127.0.0.1:9"\ncaption_model = "m"\n'
                   'embedding_model = "e"\nattempts = 1\n')
    assert main(["baseline", "--metric", "prompted", "--manifest", manifest, "--out", str(tmp_path / "p.csv"),
                 "--config", str(cfg), "--profile", "dead", "--no-cache"]) == 3
