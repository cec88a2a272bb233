import json
import subprocess
import sys

import pytest

from sdekit.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def corpus(tmp_path):
    path = tmp_path / "corpus.jsonl"
    assert run("fixtures", "--n", 120, "--seed", 3, "--out", path, "--schema-out", tmp_path / "d1.json") == 0
    return path


def test_fixtures_are_reproducible(tmp_path, corpus):
    again = tmp_path / "again.jsonl"
    run("fixtures", "--n", 120, "--seed", 3, "--out", again)
    assert again.read_bytes() == corpus.read_bytes()
    assert json.loads((tmp_path / "d1.json").read_text())["task_id"] == "D1"


def test_render_parse_score_report(tmp_path, corpus):
    samples, parsed = tmp_path / "samples.jsonl", tmp_path / "parsed.jsonl"
    assert run("render", "--corpus", corpus, "--strategy", "EW-SDE", "--limit", 50, "--variant", 2, "--out", samples) == 0
    lines = samples.read_text().splitlines()
    assert len(lines) == 50
    assert run("parse", "--predictions", samples, "--strategy", "EW-SDE", "--out", parsed) == 0
    assert all(not json.loads(l)["format_error"] for l in parsed.read_text().splitlines())

    gold = tmp_path / "gold.jsonl"
    gold.write_text("\n".join(corpus.read_text().splitlines()[:50]) + "\n")
    reports = tmp_path / "reports"
    reports.mkdir()
    grid = tmp_path / "grid"
    assert run("grid", "--baseline", "EW-SDE", "--group", "Reasoning", "--train-size", 500, "--out", grid) == 0
    manifests = sorted(grid.glob("*.json"))
    assert len(manifests) == 3
    for m in manifests:
        # echo the EW-SDE gold responses under every strategy of the grid
        assert run("score", "--manifest", m, "--gold", gold, "--predictions", samples,
                   "--out", reports / m.name) == 0
    text = tmp_path / "summary.txt"
    assert run("report", "--reports", reports, "--text-out", text, "--json-out", tmp_path / "s.json") == 0
    assert "No-CoT (baseline)" in text.read_text()


def test_grid_emits_datasets(tmp_path, corpus):
    out = tmp_path / "runs"
    assert run("grid", "--baseline", "ES-SDE", "--group", "Input", "--train-size", 100, "--corpus", corpus,
               "--out", out) == 0
    runs = sorted(p.name for p in out.iterdir())
    assert len(runs) == 4
    assert all((out / r / "train.jsonl").exists() for r in runs)


def test_exit_codes(tmp_path, corpus, capsys):
    assert run("render", "--corpus", corpus, "--strategy", "bogus", "--out", tmp_path / "x") == 1
    assert run("render", "--corpus", tmp_path / "missing.jsonl", "--strategy", "ES-SDE", "--out", tmp_path / "x") == 2
    assert run("fixtures", "--schema", "D9", "--out", tmp_path / "x") == 1
    assert run("report", "--reports", tmp_path) == 1
    assert "error:" in capsys.readouterr().err


def test_module_help():
    proc = subprocess.run([sys.executable, "-m", "sdekit", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("fixtures", "render", "grid", "parse", "score", "report"):
        assert cmd in proc.stdout
