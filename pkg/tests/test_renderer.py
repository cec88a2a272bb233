import pytest

from sdekit.designspace import DesignStrategy, enumerate_strategies, preset
from sdekit.parser import parse_output
from sdekit.renderer import (
    RenderError,
    PromptTemplate,
    default_template,
    load_samples,
    render_corpus,
    render_eval_prompt,
    render_prompt,
    render_response,
    render_sample,
    save_samples,
)
from sdekit.schema import MasaRecord, SentimentLabel, Span, SpanRecord

P, N, U = SentimentLabel.POSITIVE, SentimentLabel.NEGATIVE, SentimentLabel.UNMENTIONED


@pytest.fixture
def record(d1):
    labels = {a: U for a in d1.aspects}
    labels.update(food=P, price=N)
    return MasaRecord("x1", "Tasty food but pricey.", labels, {"food": "tasty dishes", "price": "too expensive"})


def s(text):
    return DesignStrategy.from_string(text)


def test_es_sde_response(record, d1):
    assert render_response(record, preset("ES-SDE"), d1) == (
        "food: positive\nbeverage: unmentioned\nprice: negative\n"
        "hygiene: unmentioned\nstaff attitude: unmentioned\nparking convenience: unmentioned"
    )


def test_ew_sde_response(record, d1):
    assert render_response(record, preset("EW-SDE"), d1) == (
        "The sentiment toward food is positive. The sentiment toward price is negative."
    )


def test_heuristic_response(record, d1):
    assert render_response(record, preset("Heuristic"), d1) == "food: [positive]\nprice: [negative]"


def test_numeric_json_and_reasoning_order(record, d1):
    out = render_response(record, s("inst_first/no_mi/json/ou/num/cot"), d1)
    assert out.split("\n")[0] == '{"aspect":"food","description":"tasty dishes","sentiment":"1"}'
    out = render_response(record, s("inst_first/no_mi/lines/pu/txt/rcot"), d1)
    assert out.split("\n")[:2] == ["food: positive <= tasty dishes", "beverage: unmentioned <= not mentioned"]
    out = render_response(record, s("inst_first/no_mi/natural/ou/txt/cot"), d1)
    assert out.startswith("tasty dishes The sentiment toward food is positive.")


def test_all_unmentioned_under_ou_gives_none(d1):
    rec = MasaRecord("e", "Nothing here.", {a: U for a in d1.aspects}, {})
    for fmt in ("natural", "lines", "json"):
        assert render_response(rec, s(f"inst_first/no_mi/{fmt}/ou/txt/no_cot"), d1) == "none"


def test_missing_rationale_raises(d1, record):
    bare = MasaRecord(record.id, record.text, record.labels)
    with pytest.raises(RenderError, match="rationale"):
        render_response(bare, s("inst_first/no_mi/lines/pu/txt/cot"), d1)


def test_placement(record, d1):
    first = render_prompt(record, s("inst_first/no_mi/lines/pu/txt/no_cot"), d1)
    last = render_prompt(record, s("inst_last/no_mi/lines/pu/txt/no_cot"), d1)
    none = render_prompt(record, s("no_inst/no_mi/lines/pu/txt/no_cot"), d1)
    assert first.endswith("Review: Tasty food but pricey.")
    assert last.startswith("Review: Tasty food but pricey.\n\n")
    assert none == "Review: Tasty food but pricey."


def test_instruction_mentions_format_and_labels(record, d1):
    prompt = render_prompt(record, s("inst_first/no_mi/lines/pu/num/no_cot"), d1)
    assert '"1" (positive)' in prompt and '"99"' in prompt
    assert "staff attitude" in prompt


def test_variants_differ_and_range_is_checked(record, d1):
    strat = preset("ES-SDE")
    texts = {render_prompt(record, strat, d1, variant=v) for v in range(3)}
    assert len(texts) == 3
    with pytest.raises(RenderError):
        render_prompt(record, strat, d1, variant=3)


def test_template_rejects_unknown_slot():
    base = default_template()
    with pytest.raises(RenderError):
        PromptTemplate(("Say {colour}",), base.text_preamble, base.format_clauses, base.unmentioned_clauses)


def test_sample_bytes_are_deterministic(tmp_path, d1_corpus, d1):
    strat = preset("ES-SDE")
    a = render_corpus(d1_corpus[:20], strat, d1)
    b = render_corpus(d1_corpus[:20], strat, d1)
    assert a == b
    path = tmp_path / "s.jsonl"
    save_samples(a, path)
    assert load_samples(path) == a
    mi = render_sample(d1_corpus[0], s("inst_first/mi/lines/pu/txt/no_cot"), d1)
    assert mi.train_on_input and not a[0].train_on_input


def test_in_context_prompt_contains_exemplars(d1_corpus, d1):
    strat = preset("ES-SDE")
    prompt = render_eval_prompt(d1_corpus[0], strat, d1, exemplars=d1_corpus[1:3])
    assert prompt.count("Review: ") == 3
    assert render_response(d1_corpus[1], strat, d1) in prompt


def test_masa_roundtrip_every_strategy(d1_corpus, d1):
    for strat in enumerate_strategies():
        for rec in d1_corpus[:15]:
            out = parse_output(render_response(rec, strat, d1), strat, d1)
            assert not out.format_error and not out.repairs
            assert out.predictions == dict(rec.labels)


SPAN_RECORDS = [
    SpanRecord("s1", "IL-2 gene in T cells", (Span("protein", "IL-2"), Span("DNA", "IL-2 gene"), Span("cell type", "T cells"))),
    SpanRecord("s2", "NF-kB and p50", (Span("protein", "NF-kB"), Span("protein", "p50"))),
    SpanRecord("s3", "nothing", ()),
]


def test_span_roundtrip(span_schema):
    for strat in enumerate_strategies():
        if strat.reasoning.value != "no_cot":
            continue
        for rec in SPAN_RECORDS:
            out = parse_output(render_response(rec, strat, span_schema), strat, span_schema)
            assert not out.format_error and not out.repairs, (str(strat), rec.id, out)
            assert out.predictions == [(sp.type, sp.mention) for sp in sorted(
                rec.spans, key=lambda sp: span_schema.aspects.index(sp.type))]


def test_span_formats(span_schema):
    rec = SPAN_RECORDS[1]
    assert render_response(rec, s("inst_first/no_mi/lines/pu/txt/no_cot"), span_schema) == (
        "protein: NF-kB; p50\nDNA: []\ncell type: []"
    )
    assert render_response(rec, s("inst_first/no_mi/natural/ou/txt/no_cot"), span_schema) == (
        'The protein mentions are "NF-kB", "p50".'
    )
    assert render_response(rec, s("inst_first/no_mi/json/ou/txt/no_cot"), span_schema) == (
        '{"type":"protein","mentions":["NF-kB","p50"]}'
    )


@pytest.mark.parametrize("fmt,mention", [("lines", "a;b"), ("natural", 'say "x"'), ("json", "a\nb"), ("lines", " pad")])
def test_span_mentions_that_cannot_be_read_back_are_rejected(span_schema, fmt, mention):
    rec = SpanRecord("bad", "t", (Span("protein", mention),))
    with pytest.raises(RenderError):
        render_response(rec, s(f"inst_first/no_mi/{fmt}/pu/txt/no_cot"), span_schema)


def test_span_reasoning_rejected(span_schema):
    with pytest.raises(RenderError):
        render_response(SPAN_RECORDS[0], s("inst_first/no_mi/lines/pu/txt/cot"), span_schema)
