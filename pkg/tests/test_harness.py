import json

import numpy as np
import pytest

from sdekit.designspace import DesignStrategy, ablation_grid, preset
from sdekit.harness import (
    DEFAULT_TRAINER,
    EvalReport,
    HarnessError,
    RunManifest,
    ablation_tables,
    average_rankings,
    compare_to_baseline,
    emit_run,
    format_summary,
    grid_manifests,
    load_manifest,
    load_report,
    scope_average,
    score_run,
    summarize_reports,
    table_delta,
    table_kappas,
)
from sdekit.renderer import render_response
from sdekit.schema import Span, SpanRecord


def test_manifest_roundtrip(tmp_path):
    m = RunManifest("r1", "D1", preset("ES-SDE"), 500, decode_seed=3, label="Lines", cell="D1/500", baseline="x")
    path = tmp_path / "m.json"
    from sdekit.harness import save_manifest
    save_manifest(m, path)
    assert load_manifest(path) == m
    assert m.trainer_metadata == DEFAULT_TRAINER
    with pytest.raises(HarnessError):
        RunManifest("a/b", "D1", preset("ES-SDE"), 500)
    with pytest.raises(HarnessError):
        RunManifest("a", "D1", preset("ES-SDE"), 0)


def test_grid_manifests_ids_are_unique():
    grid = ablation_grid(preset("EW-SDE"), "Output")
    ms = grid_manifests(grid, "D1")
    assert len(ms) == 10
    assert len({m.run_id for m in ms}) == 10
    assert {m.baseline for m in ms} == {"Natural, TxtLabel, OU"}
    assert ms[0].run_id == "D1-500-output-natural-txtlabel-ou"


def test_emit_run_writes_three_files(tmp_path, d1, d1_corpus):
    m = RunManifest("r1", "D1", DesignStrategy.from_string("inst_last/mi/json/pu/txt/rcot"), 100)
    paths = emit_run(m, d1_corpus, d1, tmp_path / "r1")
    train = [json.loads(l) for l in paths["train"].read_text().splitlines()]
    evals = [json.loads(l) for l in paths["eval"].read_text().splitlines()]
    assert len(train) == 100 and len(evals) == len(d1_corpus) - 100
    assert train[0]["train_on_input"] is True
    assert set(evals[0]) == {"id", "prompt"}
    assert load_manifest(paths["manifest"]) == m
    again = emit_run(m, d1_corpus, d1, tmp_path / "r1b")
    assert again["train"].read_bytes() == paths["train"].read_bytes()


def test_emit_run_checks_size_and_rationales(tmp_path, d1, d1_corpus, span_schema):
    with pytest.raises(HarnessError, match="train_size"):
        emit_run(RunManifest("r", "D1", preset("ES-SDE"), 10_000), d1_corpus, d1, tmp_path)
    spans = [SpanRecord("s", "x", (Span("protein", "x"),))]
    with pytest.raises(HarnessError, match="rationales"):
        emit_run(RunManifest("r", "g", DesignStrategy.from_string("inst_first/no_mi/lines/pu/txt/cot"), 1),
                 spans, span_schema, tmp_path)


def test_score_run_masa(d1, d1_corpus):
    m = RunManifest("r", "D1", preset("EW-SDE"), 1)
    gold = d1_corpus[:60]
    preds = [(r.id, render_response(r, preset("EW-SDE"), d1)) for r in gold]
    preds[0] = (preds[0][0], "garbage")
    report = score_run(m, gold, preds, d1)
    assert report.error_rate == pytest.approx(1 / 60)
    assert 0 < report.kappa.kappa < 1
    assert report.headline == report.kappa.kappa
    assert set(report.per_aspect_kappa) == set(d1.aspects)
    with pytest.raises(HarnessError, match="no prediction"):
        score_run(m, gold, preds[1:], d1)
    with pytest.raises(HarnessError, match="not in gold"):
        score_run(m, gold[1:], preds, d1)


def test_score_run_span_and_report_roundtrip(tmp_path, span_schema):
    gold = [SpanRecord("a", "", (Span("protein", "IL-2"),)), SpanRecord("b", "", ())]
    m = RunManifest("sp", "g", preset("ES-SDE"), 1)
    report = score_run(m, gold, [("a", "protein: IL-2 protein\nDNA: []\ncell type: []"), ("b", "none")], span_schema)
    assert report.f1_soft.f1 == 1.0 and report.f1_hard.f1 == 0.0
    assert report.headline == 1.0
    path = tmp_path / "rep.json"
    path.write_text(json.dumps(report.to_dict()))
    assert load_report(path) == report


def test_compare_to_baseline():
    d = compare_to_baseline({"Inst-last": 0.8091, "Inst-first": 0.8136}, "Inst-last")
    assert d["Inst-last"] == 0.0
    assert d["Inst-first"] == pytest.approx(0.0045, abs=1e-12)
    with pytest.raises(HarnessError):
        compare_to_baseline({"a": 1.0}, "b")


def test_rankings_with_ties():
    s = average_rankings({"a": [0.9, 0.5], "b": [0.9, 0.7], "c": [0.1, 0.6]})
    assert s.mean_rank == {"a": 2.25, "b": 1.25, "c": 2.5}
    assert [o for o, _ in s.ordered()] == ["b", "a", "c"]
    assert np.allclose(s.ranks.sum(axis=0), 6)


@pytest.mark.parametrize("bad", [{}, {"a": [1.0], "b": [1.0, 2.0]}, {"a": [None], "b": [1.0]}, {"a": []}])
def test_rankings_reject_bad_grids(bad):
    with pytest.raises(HarnessError):
        average_rankings(bad)


def test_published_tables():
    t = ablation_tables()
    assert len(t["models"]) == 6
    k = table_kappas(t, "c-llama2-chat", 500, "Input")
    assert list(k)[0] == "Inst-last, No-MI"
    assert np.isnan(scope_average(k["No-inst"], "OOD"))
    assert table_delta(t, "c-llama2-chat", "Input", "Inst-first", sizes=(500,)) == pytest.approx(0.0121, abs=1e-9)
    with pytest.raises(HarnessError):
        table_kappas(t, "gpt", 500, "Input")


def _report(label, cell, kappa):
    from sdekit.metrics import KappaResult
    return EvalReport(run_id=f"{cell}-{label}".replace("/", "-"), task_kind="masa", error_rate=0.0, n=1,
                      kappa=KappaResult(kappa, 0.0, kappa), label=label, cell=cell, baseline="base")


def test_summary_table():
    reports = [_report("base", "D1/500", 0.80), _report("alt", "D1/500", 0.85),
               _report("base", "D1/1000", 0.82), _report("alt", "D1/1000", 0.81)]
    summary = summarize_reports(reports)
    assert summary["mean_delta"]["alt"] == pytest.approx(0.02)
    assert summary["rankings"]["mean_rank"] == {"base": 1.5, "alt": 1.5}
    text = format_summary(summary)
    assert "base (baseline)" in text and "+0.0200" in text
    with pytest.raises(HarnessError):
        summarize_reports(reports + [_report("alt", "D1/500", 0.1)])
