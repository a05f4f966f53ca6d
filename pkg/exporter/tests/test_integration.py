"""End-to-end: exporter output consumed by the recognition engine through its
public CLI and file formats only."""

import json
import shutil
import subprocess

import pytest

from peva_export.export import run_export

pytestmark = pytest.mark.skipif(shutil.which("peva") is None,
                                reason="engine CLI not installed")


def export_tree(image_tree, tmp_path, template="A photo of {CLASS}"):
    root, categories_file = image_tree
    out = tmp_path / "export"
    out.mkdir()
    run_export(root, categories_file, template, "toy:32",
               out / "test.pevf", out / "prompts.pevf", out / "manifest.json")
    return out


def run_engine(*args):
    return subprocess.run(["peva", *map(str, args)], capture_output=True, text=True)


def test_engine_zero_shot_on_exported_features(image_tree, tmp_path):
    out = export_tree(image_tree, tmp_path)
    metrics = tmp_path / "metrics.json"
    proc = run_engine("zero-shot", "--manifest", out / "manifest.json", "--out", metrics)
    assert proc.returncode == 0, proc.stderr
    doc = json.loads(metrics.read_text())
    # toy backbone aligns solid-color renders with their prompts exactly
    assert doc["accuracy"] == 1.0
    assert set(doc["per_class"]) == {"red", "green", "blue", "yellow"}


def test_engine_weighted_and_average_modes_both_run(image_tree, tmp_path):
    out = export_tree(image_tree, tmp_path)
    for agg in ("peva", "avg"):
        metrics = tmp_path / f"{agg}.json"
        proc = run_engine("zero-shot", "--manifest", out / "manifest.json",
                          "--agg", agg, "--out", metrics)
        assert proc.returncode == 0, proc.stderr
        assert json.loads(metrics.read_text())["accuracy"] == 1.0


def test_engine_dump_matches_record_count(image_tree, tmp_path):
    out = export_tree(image_tree, tmp_path)
    dump = tmp_path / "emb.csv"
    proc = run_engine("dump-embeddings", "--manifest", out / "manifest.json",
                      "--out", dump)
    assert proc.returncode == 0, proc.stderr
    lines = dump.read_text().splitlines()
    assert len(lines) == 1 + 12  # header + 4 categories x 3 shapes


def test_engine_trains_on_exported_features(image_tree, tmp_path):
    out = export_tree(image_tree, tmp_path)
    # train split reuses the export; K=2 of 3 shapes per class
    manifest = json.loads((out / "manifest.json").read_text())
    manifest["splits"]["train"] = manifest["splits"]["test"]
    (out / "manifest.json").write_text(json.dumps(manifest))
    run_dir = tmp_path / "run"
    proc = run_engine("train", "--manifest", out / "manifest.json", "--k", 2,
                      "--epochs", 5, "--seed", 0, "--out", run_dir)
    assert proc.returncode == 0, proc.stderr
    metrics = tmp_path / "eval.json"
    proc = run_engine("eval", "--manifest", out / "manifest.json",
                      "--checkpoint", run_dir / "checkpoint.pevf", "--out", metrics)
    assert proc.returncode == 0, proc.stderr
    assert "accuracy" in json.loads(metrics.read_text())
