import json
import math
from fractions import Fraction

import numpy as np
import pytest

from sdekit.designspace import preset
from sdekit.metrics import (
    ConfusionMatrix,
    MetricError,
    WeightMatrix,
    build_confusion,
    corpus_perplexity,
    format_error_rate,
    hard_match,
    load_nlls,
    match_count,
    perplexity,
    slot_accuracy,
    soft_match,
    span_f1,
    weighted_kappa,
)
from sdekit.parser import parse_output
from sdekit.renderer import render_response
from sdekit.schema import LABEL_ORDER, MasaRecord, SentimentLabel, Span, SpanRecord

P, NEU, N, U = LABEL_ORDER


def test_default_weights():
    w = WeightMatrix.default().w
    assert w[0] == (1, Fraction(1, 2), 0, Fraction(1, 2))
    assert w[3][1] == Fraction(2, 3)
    assert all(w[i][i] == 1 for i in range(4))


@pytest.mark.parametrize("bad", [[[1] * 3] * 4, [[2, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]])
def test_weight_validation(bad):
    with pytest.raises(MetricError):
        WeightMatrix(bad)


def test_kappa_is_exact_and_symmetric_in_perfect_case():
    r = weighted_kappa(ConfusionMatrix(np.diag([3, 0, 2, 5])))
    assert r.kappa == 1.0 and r.po_exact == 1


def test_banded_fixture():
    r = weighted_kappa(ConfusionMatrix(np.array([[5, 1, 0, 0], [1, 5, 1, 0], [0, 1, 5, 1], [0, 0, 1, 5]])))
    assert r.po_exact == Fraction(35, 39) and r.pe_exact == Fraction(2461, 4056)
    assert Fraction(r.kappa).limit_denominator(10_000) == Fraction(1179, 1595)


def test_identity_weights_reduce_to_cohen():
    counts = np.array([[10, 2, 1, 0], [3, 8, 0, 1], [0, 1, 9, 2], [1, 0, 2, 7]])
    k = weighted_kappa(ConfusionMatrix(counts), WeightMatrix(np.eye(4, dtype=int).tolist())).kappa
    p = counts / counts.sum()
    po, pe = np.trace(p), p.sum(1) @ p.sum(0)
    assert k == pytest.approx((po - pe) / (1 - pe), abs=1e-12)


def test_degenerate_and_empty_rejected():
    one_cell = np.zeros((4, 4), dtype=int)
    one_cell[0, 0] = 7
    with pytest.raises(MetricError, match="undefined"):
        weighted_kappa(ConfusionMatrix(one_cell))
    with pytest.raises(MetricError):
        weighted_kappa(ConfusionMatrix.zeros())


def test_confusion_add_and_sum():
    a = ConfusionMatrix.zeros()
    a.add(P, N)
    b = a + a
    assert b.n == 2 and b.to_list()[0][2] == 2
    with pytest.raises(MetricError):
        ConfusionMatrix(np.full((4, 4), -1))


def test_confusion_from_parsed_outputs(d1, d1_corpus):
    gold = d1_corpus[:40]
    outcomes = [(r.id, parse_output(render_response(r, preset("ES-SDE"), d1), preset("ES-SDE"), d1)) for r in gold]
    pooled, per_aspect = build_confusion(gold, outcomes, d1)
    assert pooled.n == 40 * len(d1.aspects)
    assert np.array_equal(pooled.counts, sum((m for m in per_aspect.values()), ConfusionMatrix.zeros()).counts)
    assert slot_accuracy(gold, outcomes, d1) == 1.0
    assert format_error_rate(outcomes) == 0.0


def test_alignment_errors(d1, d1_corpus):
    gold = d1_corpus[:3]
    out = parse_output("none", preset("EW-SDE"), d1)
    with pytest.raises(MetricError, match="missing"):
        build_confusion(gold, [(gold[0].id, out)], d1)
    with pytest.raises(MetricError, match="unknown"):
        build_confusion(gold, {r.id: out for r in gold} | {"zz": out}, d1)
    with pytest.raises(MetricError, match="duplicate"):
        build_confusion(gold, [(gold[0].id, out)] * 2, d1)
    with pytest.raises(MetricError):
        format_error_rate([])


def test_match_rules():
    assert hard_match(("protein", "IL-2"), ("protein", " il-2 "))
    assert not hard_match(("protein", "IL-2"), ("DNA", "IL-2"))
    assert soft_match(("DNA", "IL-2 gene"), ("DNA", "IL-2"))
    assert soft_match(("DNA", "IL-2"), ("DNA", "the IL-2 gene"))
    assert not soft_match(("DNA", "IL-2"), ("DNA", ""))


def test_matching_reassigns_to_find_larger_matching():
    # first-come assignment would give gold[0] the long prediction and strand gold[1]
    gold = [("p", "il-2"), ("p", "il-2 receptor")]
    pred = [("p", "il-2 receptor"), ("p", "il")]
    assert match_count(gold, pred, "soft") == 2
    with pytest.raises(MetricError):
        match_count(gold, pred, "fuzzy")


def test_span_f1_counts():
    gold = [SpanRecord("a", "", (Span("protein", "IL-2"), Span("DNA", "IL-2 gene")))]
    score = span_f1(gold, [("a", [("protein", "IL-2"), ("DNA", "gene"), ("protein", "p50")])], "soft")
    assert (score.tp, score.fp, score.fn) == (2, 1, 0)
    assert score.f1 == pytest.approx(0.8)
    hard = span_f1(gold, {"a": [{"type": "protein", "mention": "il-2"}]}, "hard")
    assert (hard.precision, hard.recall) == (1.0, 0.5)


def test_perplexity_validation():
    with pytest.raises(MetricError):
        perplexity([])
    with pytest.raises(MetricError):
        perplexity([-0.1])
    with pytest.raises(MetricError):
        perplexity([1.0, 2.0], context_boundary=2)
    assert perplexity([math.log(3)] * 5).ppl == math.exp(math.log(3))


def test_corpus_perplexity(tmp_path):
    path = tmp_path / "nll.jsonl"
    rows = [{"id": "a", "nlls": [9.0, math.log(2)], "context_boundary": 1}, {"id": "b", "nlls": [math.log(2)]}]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    res = corpus_perplexity(load_nlls(path))
    assert res.token_count == 2 and res.ppl == pytest.approx(2.0)
    with pytest.raises(MetricError, match="sequence a"):
        corpus_perplexity([("a", [1.0], 3)])
