"""Render task records into prompt/response training samples.

Response grammars (the parser reads exactly these back):

* Lines: ``"{aspect}: {label}"`` per line; CoT puts ``"{description} => "``
  before the label, R-CoT puts ``" <= {description}"`` after it.
* Lines-of-list: as Lines with the value written ``[label]`` (``[]`` when
  unmentioned under PU).
* JSON: one compact object per line, keys ``aspect`` then ``sentiment``;
  ``description`` goes before ``sentiment`` for CoT and after it for R-CoT.
* Natural: sentences ``"The sentiment toward {aspect} is {label}."`` or, for a
  placeholder, ``"{aspect} is not mentioned."``, joined by single spaces; the
  description is a separate sentence before (CoT) or after (R-CoT).

Under OU a record with no mentioned aspect renders as the single word
``none`` in every format.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .designspace import (
    DesignStrategy,
    InputModeling,
    LabelStyle,
    OutputFormat,
    Placement,
    Reasoning,
    Unmentioned,
)
from .schema import AspectSchema, MasaRecord, SentimentLabel, SpanRecord, TaskRecord


class RenderError(ValueError):
    pass


UNMENTIONED_DESCRIPTION = "not mentioned"
EMPTY_OU_RESPONSE = "none"
EMPTY_LIST = "[]"
COT_SEP = " => "
RCOT_SEP = " <= "
MENTION_SEP = "; "
LIST_SEP = ", "

NATURAL_SENTENCE = "The sentiment toward {aspect} is {label}."
NATURAL_PLACEHOLDER = "{aspect} is not mentioned."
SPAN_NATURAL_SENTENCE = "The {type} mentions are {mentions}."
SPAN_NATURAL_EMPTY = "There is no {type} mention."

SLOTS = ("aspect_list", "format_clause", "unmentioned_clause")
_SLOT_RE = re.compile(r"\{(\w+)\}")


# ---------------------------------------------------------------- templates

@dataclass(frozen=True)
class PromptTemplate:
    """Instruction wording for one task kind.

    ``instructions`` are the interchangeable formulations (inst-1, inst-2, ...)
    and may reference the slots ``{aspect_list}``, ``{format_clause}`` and
    ``{unmentioned_clause}``. Clause tables may reference ``{labels}`` and
    ``{placeholder}``.
    """

    instructions: tuple[str, ...]
    text_preamble: str
    format_clauses: Mapping[tuple[OutputFormat, LabelStyle], str]
    unmentioned_clauses: Mapping[tuple[OutputFormat, Unmentioned], str]
    reasoning_clauses: Mapping[Reasoning, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "instructions", tuple(self.instructions))
        if not self.instructions:
            raise RenderError("template needs at least one instruction variant")
        for i, text in enumerate(self.instructions):
            unknown = set(_SLOT_RE.findall(text)) - set(SLOTS)
            if unknown:
                raise RenderError(f"inst-{i + 1} references unknown slot(s) {sorted(unknown)}")


def _fill(text: str, **slots: str) -> str:
    for name, value in slots.items():
        text = text.replace("{" + name + "}", value)
    return text


def _masa_template() -> PromptTemplate:
    fmt = {}
    for style in LabelStyle:
        fmt[(OutputFormat.NATURAL, style)] = (
            'Answer with one sentence per aspect, "The sentiment toward <aspect> is <label>.", '
            "where <label> is {labels}."
        )
        fmt[(OutputFormat.LINES, style)] = (
            'Answer with one line per aspect in the form "<aspect>: <label>", where <label> is {labels}.'
        )
        fmt[(OutputFormat.LINES_OF_LIST, style)] = (
            'Answer with one line per aspect in the form "<aspect>: [<label>]", where <label> is {labels}.'
        )
        fmt[(OutputFormat.JSON, style)] = (
            'Answer with one JSON object per line, {"aspect": "<aspect>", "sentiment": "<label>"}, '
            "where <label> is {labels}."
        )
    ou = 'Leave out aspects the review does not mention; if it mentions none of them, answer "none".'
    unm = {
        (OutputFormat.NATURAL, Unmentioned.PU): 'For an aspect the review does not mention, write "<aspect> is not mentioned."',
        (OutputFormat.LINES, Unmentioned.PU): 'Use "{placeholder}" as the label of aspects the review does not mention.',
        (OutputFormat.LINES_OF_LIST, Unmentioned.PU): 'Write "[]" for aspects the review does not mention.',
        (OutputFormat.JSON, Unmentioned.PU): 'Use "{placeholder}" as the sentiment of aspects the review does not mention.',
    }
    for f in OutputFormat:
        unm[(f, Unmentioned.OU)] = ou
    return PromptTemplate(
        instructions=(
            "Analyze the sentiment of the review toward each of these aspects: {aspect_list}. "
            "{format_clause} {unmentioned_clause}",
            "Read the customer review and decide how the reviewer feels about {aspect_list}. "
            "{format_clause} {unmentioned_clause}",
            "For every aspect in the list [{aspect_list}], identify the opinion expressed in the review. "
            "{format_clause} {unmentioned_clause}",
        ),
        text_preamble="Review: ",
        format_clauses=fmt,
        unmentioned_clauses=unm,
        reasoning_clauses={
            Reasoning.COT: "Give a short description of the evidence before each label.",
            Reasoning.RCOT: "Give a short description of the evidence after each label.",
        },
    )


def _span_template() -> PromptTemplate:
    fmt = {}
    for style in LabelStyle:
        fmt[(OutputFormat.NATURAL, style)] = (
            'Answer with one sentence per type, The <type> mentions are "<mention>", "<mention>".'
        )
        fmt[(OutputFormat.LINES, style)] = (
            'Answer with one line per type in the form "<type>: <mention>; <mention>".'
        )
        fmt[(OutputFormat.LINES_OF_LIST, style)] = (
            'Answer with one line per type in the form "<type>: [<mention>, <mention>]".'
        )
        fmt[(OutputFormat.JSON, style)] = (
            'Answer with one JSON object per line, {"type": "<type>", "mentions": ["<mention>", ...]}.'
        )
    ou = 'Leave out types with no mention; if there are none at all, answer "none".'
    unm = {
        (OutputFormat.NATURAL, Unmentioned.PU): 'For a type with no mention, write "There is no <type> mention."',
        (OutputFormat.LINES, Unmentioned.PU): 'Write "<type>: []" for types with no mention.',
        (OutputFormat.LINES_OF_LIST, Unmentioned.PU): 'Write "<type>: []" for types with no mention.',
        (OutputFormat.JSON, Unmentioned.PU): "Use an empty mentions list for types with no mention.",
    }
    for f in OutputFormat:
        unm[(f, Unmentioned.OU)] = ou
    return PromptTemplate(
        instructions=(
            "Extract every mention of the following types from the text: {aspect_list}. "
            "{format_clause} {unmentioned_clause}",
            "Find all spans in the text that belong to one of these types: {aspect_list}. "
            "{format_clause} {unmentioned_clause}",
            "Identify the {aspect_list} mentions that occur in the text below. "
            "{format_clause} {unmentioned_clause}",
        ),
        text_preamble="Text: ",
        format_clauses=fmt,
        unmentioned_clauses=unm,
    )


def default_template(kind: str = "masa") -> PromptTemplate:
    if kind == "masa":
        return _masa_template()
    if kind == "span":
        return _span_template()
    raise RenderError(f"no default template for task kind {kind!r}")


def label_token(label: SentimentLabel, strategy: DesignStrategy, schema: AspectSchema) -> str:
    if strategy.label_style is LabelStyle.NUM:
        return schema.numeric_label_map[label]
    if label is SentimentLabel.UNMENTIONED:
        return schema.placeholder_token
    return label.value


def _labels_phrase(strategy: DesignStrategy, schema: AspectSchema) -> str:
    labs = (SentimentLabel.POSITIVE, SentimentLabel.NEUTRAL, SentimentLabel.NEGATIVE)
    if strategy.label_style is LabelStyle.NUM:
        parts = [f'"{schema.numeric_label_map[lab]}" ({lab.value})' for lab in labs]
    else:
        parts = [f'"{lab.value}"' for lab in labs]
    return f"{parts[0]}, {parts[1]} or {parts[2]}"


def build_instruction(strategy: DesignStrategy, schema: AspectSchema, template: PromptTemplate, variant: int = 0) -> str:
    if not 0 <= variant < len(template.instructions):
        raise RenderError(f"instruction variant {variant} out of range (template has {len(template.instructions)})")
    fmt = strategy.output_format
    format_clause = template.format_clauses[(fmt, strategy.label_style)]
    reasoning = template.reasoning_clauses.get(strategy.reasoning)
    if reasoning:
        format_clause = f"{format_clause} {reasoning}"
    slots = {
        "labels": _labels_phrase(strategy, schema),
        "placeholder": label_token(SentimentLabel.UNMENTIONED, strategy, schema),
    }
    return _fill(
        template.instructions[variant],
        aspect_list=", ".join(schema.aspects),
        format_clause=_fill(format_clause, **slots),
        unmentioned_clause=_fill(template.unmentioned_clauses[(fmt, strategy.unmentioned)], **slots),
    )


# ---------------------------------------------------------------- responses

def _json_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def _description(record: MasaRecord, aspect: str) -> str:
    if record.labels[aspect] is SentimentLabel.UNMENTIONED:
        return UNMENTIONED_DESCRIPTION
    text = (record.rationales or {}).get(aspect)
    if not text or not text.strip():
        raise RenderError(f"record {record.id}: no rationale for mentioned aspect {aspect!r}")
    if "\n" in text:
        raise RenderError(f"record {record.id}: rationale for {aspect!r} spans several lines")
    return text.strip()


def render_masa_response(record: MasaRecord, strategy: DesignStrategy, schema: AspectSchema) -> str:
    fmt, reasoning = strategy.output_format, strategy.reasoning
    segments = []
    for aspect in schema.aspects:
        try:
            label = record.labels[aspect]
        except KeyError:
            raise RenderError(f"record {record.id} missing aspect {aspect!r}") from None
        unmentioned = label is SentimentLabel.UNMENTIONED
        if unmentioned and strategy.unmentioned is Unmentioned.OU:
            continue
        desc = _description(record, aspect) if reasoning is not Reasoning.NO_COT else None
        token = label_token(label, strategy, schema)

        if fmt is OutputFormat.JSON:
            obj = {"aspect": aspect}
            if reasoning is Reasoning.COT:
                obj["description"] = desc
            obj["sentiment"] = token
            if reasoning is Reasoning.RCOT:
                obj["description"] = desc
            segments.append(_json_line(obj))
        elif fmt is OutputFormat.NATURAL:
            if unmentioned and strategy.unmentioned is Unmentioned.PU:
                core = NATURAL_PLACEHOLDER.format(aspect=aspect)
            else:
                core = NATURAL_SENTENCE.format(aspect=aspect, label=token)
            if reasoning is Reasoning.COT:
                core = f"{desc} {core}"
            elif reasoning is Reasoning.RCOT:
                core = f"{core} {desc}"
            segments.append(core)
        else:
            if fmt is OutputFormat.LINES_OF_LIST:
                value = EMPTY_LIST if unmentioned else f"[{token}]"
            else:
                value = token
            if reasoning is Reasoning.COT:
                value = f"{desc}{COT_SEP}{value}"
            elif reasoning is Reasoning.RCOT:
                value = f"{value}{RCOT_SEP}{desc}"
            segments.append(f"{aspect}: {value}")

    if not segments:
        return EMPTY_OU_RESPONSE
    return (" " if fmt is OutputFormat.NATURAL else "\n").join(segments)


def group_spans(record: SpanRecord, schema: AspectSchema) -> dict[str, list[str]]:
    """Mentions per type in schema order, keeping record order within a type."""
    grouped: dict[str, list[str]] = {t: [] for t in schema.aspects}
    for span in record.spans:
        if span.type not in grouped:
            raise RenderError(f"record {record.id}: unknown span type {span.type!r}")
        grouped[span.type].append(span.mention)
    return grouped


def canonical_spans(record: SpanRecord, schema: AspectSchema) -> list[tuple[str, str]]:
    return [(t, m) for t, ms in group_spans(record, schema).items() for m in ms]


def _check_mention(record_id: str, mention: str, fmt: OutputFormat) -> None:
    # a mention that collides with the format's own delimiters cannot be read back
    bad = ["\n"]
    if fmt is OutputFormat.LINES:
        bad.append(MENTION_SEP.strip())
    elif fmt is OutputFormat.LINES_OF_LIST:
        bad += [LIST_SEP.strip(), "[", "]"]
    elif fmt is OutputFormat.NATURAL:
        bad.append('"')
    hit = [b for b in bad if b in mention]
    if hit or mention != mention.strip() or mention == EMPTY_LIST:
        raise RenderError(f"record {record_id}: mention {mention!r} cannot be written in {fmt.value} format")


def render_span_response(record: SpanRecord, strategy: DesignStrategy, schema: AspectSchema) -> str:
    if strategy.reasoning is not Reasoning.NO_COT:
        raise RenderError(f"record {record.id}: span records carry no rationales for reasoning designs")
    fmt = strategy.output_format
    segments = []
    for span_type, mentions in group_spans(record, schema).items():
        for m in mentions:
            _check_mention(record.id, m, fmt)
        if not mentions and strategy.unmentioned is Unmentioned.OU:
            continue
        if fmt is OutputFormat.JSON:
            segments.append(_json_line({"type": span_type, "mentions": mentions}))
        elif fmt is OutputFormat.NATURAL:
            if mentions:
                quoted = ", ".join(f'"{m}"' for m in mentions)
                segments.append(SPAN_NATURAL_SENTENCE.format(type=span_type, mentions=quoted))
            else:
                segments.append(SPAN_NATURAL_EMPTY.format(type=span_type))
        elif fmt is OutputFormat.LINES_OF_LIST:
            segments.append(f"{span_type}: [{LIST_SEP.join(mentions)}]")
        else:
            segments.append(f"{span_type}: {MENTION_SEP.join(mentions) if mentions else EMPTY_LIST}")
    if not segments:
        return EMPTY_OU_RESPONSE
    return (" " if fmt is OutputFormat.NATURAL else "\n").join(segments)


def render_response(record: TaskRecord, strategy: DesignStrategy, schema: AspectSchema) -> str:
    if isinstance(record, SpanRecord):
        return render_span_response(record, strategy, schema)
    return render_masa_response(record, strategy, schema)


# ---------------------------------------------------------------- samples

@dataclass(frozen=True)
class TrainingSample:
    id: str
    prompt: str
    response: str
    train_on_input: bool
    strategy: DesignStrategy
    instruction_variant: int

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "prompt": self.prompt,
            "response": self.response,
            "train_on_input": self.train_on_input,
            "strategy": self.strategy.to_string(),
            "instruction_variant": self.instruction_variant,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainingSample":
        return cls(
            id=str(d["id"]),
            prompt=d["prompt"],
            response=d["response"],
            train_on_input=bool(d["train_on_input"]),
            strategy=DesignStrategy.from_string(d["strategy"]),
            instruction_variant=int(d["instruction_variant"]),
        )


def render_prompt(
    record: TaskRecord,
    strategy: DesignStrategy,
    schema: AspectSchema,
    template: PromptTemplate | None = None,
    variant: int = 0,
) -> str:
    template = template or default_template(schema.kind)
    instruction = build_instruction(strategy, schema, template, variant)
    body = template.text_preamble + record.text
    if strategy.placement is Placement.INST_FIRST:
        return f"{instruction}\n\n{body}"
    if strategy.placement is Placement.INST_LAST:
        return f"{body}\n\n{instruction}"
    return body


def render_sample(
    record: TaskRecord,
    strategy: DesignStrategy,
    schema: AspectSchema,
    template: PromptTemplate | None = None,
    variant: int = 0,
) -> TrainingSample:
    """Render one record; identical inputs always give identical bytes."""
    return TrainingSample(
        id=record.id,
        prompt=render_prompt(record, strategy, schema, template, variant),
        response=render_response(record, strategy, schema),
        train_on_input=strategy.input_modeling is InputModeling.MI,
        strategy=strategy,
        instruction_variant=variant,
    )


def render_corpus(
    records: Iterable[TaskRecord],
    strategy: DesignStrategy,
    schema: AspectSchema,
    template: PromptTemplate | None = None,
    variant: int = 0,
) -> list[TrainingSample]:
    template = template or default_template(schema.kind)
    samples = []
    for record in records:
        try:
            samples.append(render_sample(record, strategy, schema, template, variant))
        except RenderError as exc:
            msg = str(exc)
            raise RenderError(msg if record.id in msg else f"record {record.id}: {msg}") from None
    return samples


def render_eval_prompt(
    record: TaskRecord,
    strategy: DesignStrategy,
    schema: AspectSchema,
    exemplars: Sequence[TaskRecord] = (),
    template: PromptTemplate | None = None,
    variant: int = 0,
) -> str:
    """Zero-shot prompt, or an in-context prompt with worked exemplars first."""
    template = template or default_template(schema.kind)
    blocks = []
    for ex in exemplars:
        sample = render_sample(ex, strategy, schema, template, variant)
        blocks.append(f"{sample.prompt}\n\n{sample.response}")
    blocks.append(render_prompt(record, strategy, schema, template, variant))
    return "\n\n".join(blocks)


def save_samples(samples: Iterable[TrainingSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")


def load_samples(path: str | Path) -> list[TrainingSample]:
    with open(path, encoding="utf-8") as fh:
        return [TrainingSample.from_dict(json.loads(line)) for line in fh if line.strip()]
