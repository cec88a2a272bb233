"""Task-agnostic data model for annotated corpora and a seeded fixture generator.

Two record kinds are supported: multi-aspect sentiment records (``MasaRecord``)
and typed-span records (``SpanRecord``, for nested NER and event detection).
Both serialize to JSON-lines with a fixed key order so that
``load_corpus(save_corpus(x)) == x`` holds byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np


class CorpusError(ValueError):
    """Raised when a corpus or schema file cannot be loaded or validated."""


class SentimentLabel(str, Enum):
    POSITIVE = "positive"
    NEUTRAL = "neutral"
    NEGATIVE = "negative"
    UNMENTIONED = "unmentioned"

    @classmethod
    def parse(cls, value: str) -> "SentimentLabel":
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise CorpusError(f"unknown sentiment label {value!r}") from None


# Row/column order of every confusion and weight matrix.
LABEL_ORDER: tuple[SentimentLabel, ...] = tuple(SentimentLabel)

DEFAULT_NUMERIC_LABELS: dict[SentimentLabel, str] = {
    SentimentLabel.POSITIVE: "1",
    SentimentLabel.NEUTRAL: "0",
    SentimentLabel.NEGATIVE: "-1",
    SentimentLabel.UNMENTIONED: "99",
}


@dataclass(frozen=True)
class AspectSchema:
    """Ordered target inventory of one task.

    For sentiment tasks ``aspects`` are the aspect names; for span tasks they
    are the span types, in the order responses list them.
    """

    task_id: str
    aspects: tuple[str, ...]
    numeric_label_map: Mapping[SentimentLabel, str] = field(
        default_factory=lambda: dict(DEFAULT_NUMERIC_LABELS)
    )
    placeholder_token: str = "unmentioned"
    kind: str = "masa"
    aliases: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "aspects", tuple(self.aspects))
        problems = schema_violations(self)
        if problems:
            raise CorpusError(f"invalid schema {self.task_id!r}: " + "; ".join(problems))

    def to_dict(self) -> dict:
        d = {
            "task_id": self.task_id,
            "aspects": list(self.aspects),
            "numeric_label_map": {lab.value: self.numeric_label_map[lab] for lab in LABEL_ORDER},
            "placeholder_token": self.placeholder_token,
        }
        if self.kind != "masa":
            d["kind"] = self.kind
        if self.aliases:
            d["aliases"] = dict(self.aliases)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "AspectSchema":
        try:
            numeric = d.get("numeric_label_map") or {k.value: v for k, v in DEFAULT_NUMERIC_LABELS.items()}
            return cls(
                task_id=str(d["task_id"]),
                aspects=tuple(d["aspects"]),
                numeric_label_map={SentimentLabel.parse(k): str(v) for k, v in numeric.items()},
                placeholder_token=d.get("placeholder_token", "unmentioned"),
                kind=d.get("kind", "masa"),
                aliases=dict(d.get("aliases", {})),
            )
        except KeyError as exc:
            raise CorpusError(f"schema missing field {exc.args[0]!r}") from None


def schema_violations(schema: AspectSchema) -> list[str]:
    problems = []
    if schema.kind not in ("masa", "span"):
        problems.append(f"unknown task kind {schema.kind!r}")
    if not schema.aspects:
        problems.append("no aspects")
    if any(not isinstance(a, str) or not a.strip() for a in schema.aspects):
        problems.append("empty aspect name")
    # names are written as "name: value" lines
    bad = [a for a in schema.aspects if isinstance(a, str) and (":" in a or "\n" in a or a != a.strip())]
    if bad:
        problems.append(f"aspect name(s) {bad} contain ':', a newline or outer whitespace")
    if len(set(schema.aspects)) != len(schema.aspects):
        problems.append("duplicate aspect names")
    if set(schema.numeric_label_map) != set(LABEL_ORDER):
        problems.append("numeric_label_map must cover all four labels")
    elif len(set(schema.numeric_label_map.values())) != len(LABEL_ORDER):
        problems.append("numeric_label_map is not injective")
    if not schema.placeholder_token:
        problems.append("empty placeholder token")
    for alias, target in schema.aliases.items():
        if target not in schema.aspects:
            problems.append(f"alias {alias!r} targets unknown aspect {target!r}")
    return problems


@dataclass(frozen=True)
class MasaRecord:
    id: str
    text: str
    labels: Mapping[str, SentimentLabel]
    rationales: Mapping[str, str] | None = None

    def to_dict(self) -> dict:
        d = {"id": self.id, "text": self.text, "labels": {a: lab.value for a, lab in self.labels.items()}}
        if self.rationales is not None:
            d["rationales"] = dict(self.rationales)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "MasaRecord":
        labels = d["labels"]
        if not isinstance(labels, Mapping):
            raise CorpusError("'labels' must be an object")
        rationales = d.get("rationales")
        return cls(
            id=str(d["id"]),
            text=d["text"],
            labels={a: SentimentLabel.parse(v) for a, v in labels.items()},
            rationales=dict(rationales) if rationales is not None else None,
        )


@dataclass(frozen=True)
class Span:
    type: str
    mention: str
    start: int | None = None
    end: int | None = None

    def to_dict(self) -> dict:
        d = {"type": self.type, "mention": self.mention}
        if self.start is not None:
            d["start"] = self.start
        if self.end is not None:
            d["end"] = self.end
        return d


@dataclass(frozen=True)
class SpanRecord:
    id: str
    text: str
    spans: tuple[Span, ...]

    def __post_init__(self):
        object.__setattr__(self, "spans", tuple(self.spans))

    def to_dict(self) -> dict:
        return {"id": self.id, "text": self.text, "spans": [s.to_dict() for s in self.spans]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SpanRecord":
        spans = tuple(
            Span(s["type"], s["mention"], s.get("start"), s.get("end")) for s in d["spans"]
        )
        return cls(id=str(d["id"]), text=d["text"], spans=spans)


TaskRecord = Union[MasaRecord, SpanRecord]


def validate_record(record: TaskRecord, schema: AspectSchema | None = None) -> list[str]:
    """Return every invariant the record violates; an empty list means valid."""
    problems = []
    if not record.id:
        problems.append("empty id")
    if isinstance(record, MasaRecord):
        for aspect, label in record.labels.items():
            if not isinstance(label, SentimentLabel):
                problems.append(f"aspect {aspect!r} has non-label value {label!r}")
        if schema is not None:
            for aspect in schema.aspects:
                if aspect not in record.labels:
                    problems.append(f"record {record.id} missing aspect {aspect!r}")
            for aspect in record.labels:
                if aspect not in schema.aspects:
                    problems.append(f"record {record.id} has unknown aspect {aspect!r}")
        if record.rationales is not None:
            known = schema.aspects if schema is not None else record.labels
            for aspect in record.rationales:
                if aspect not in known:
                    problems.append(f"unknown rationale aspect {aspect!r}")
    elif isinstance(record, SpanRecord):
        for i, span in enumerate(record.spans):
            if not span.mention:
                problems.append(f"span {i}: empty mention")
            if not span.type:
                problems.append(f"span {i}: empty type")
            elif schema is not None and span.type not in schema.aspects:
                problems.append(f"span {i}: unknown span type {span.type!r}")
            if (span.start is None) != (span.end is None):
                problems.append(f"span {i}: offsets must be given together")
            elif span.start is not None:
                if not 0 <= span.start <= span.end <= len(record.text):
                    problems.append(f"span {i}: offsets out of range")
                elif record.text[span.start:span.end] != span.mention:
                    problems.append(f"span {i}: text slice does not equal mention {span.mention!r}")
    else:
        problems.append(f"unsupported record type {type(record).__name__}")
    return problems


def record_from_dict(d: Mapping, kind: str) -> TaskRecord:
    if kind == "masa":
        return MasaRecord.from_dict(d)
    if kind == "span":
        return SpanRecord.from_dict(d)
    raise CorpusError(f"unknown corpus kind {kind!r}")


def load_corpus(path: str | Path, kind: str = "masa", schema: AspectSchema | None = None) -> list[TaskRecord]:
    """Read a JSON-lines corpus, validating every record.

    Blank lines are not allowed: record count equals line count.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                record = record_from_dict(json.loads(line), kind)
            except (json.JSONDecodeError, KeyError, TypeError, CorpusError) as exc:
                reason = f"missing field {exc.args[0]!r}" if isinstance(exc, KeyError) else str(exc)
                raise CorpusError(f"{path}:{lineno}: malformed record: {reason}") from None
            problems = validate_record(record, schema)
            if problems:
                raise CorpusError(f"{path}:{lineno}: " + "; ".join(problems))
            records.append(record)
    return records


def dumps_record(record: TaskRecord) -> str:
    return json.dumps(record.to_dict(), ensure_ascii=False)


def save_corpus(records: Iterable[TaskRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(dumps_record(record) + "\n")


def load_schema(path: str | Path) -> AspectSchema:
    with open(path, encoding="utf-8") as fh:
        try:
            return AspectSchema.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}: {exc}") from None


def save_schema(schema: AspectSchema, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(schema.to_dict(), fh, ensure_ascii=False, indent=2)
        fh.write("\n")


def _data(name: str) -> dict:
    return json.loads(resources.files("sdekit").joinpath("data", name).read_text(encoding="utf-8"))


def builtin_schema(task_id: str) -> AspectSchema:
    """The two restaurant-review aspect inventories, ``"D1"`` and ``"D2"``."""
    tasks = _data("label_distributions.json")["tasks"]
    if task_id not in tasks:
        raise CorpusError(f"no builtin schema {task_id!r}; known: {sorted(tasks)}")
    aliases = _data("aspect_aliases.json")["aliases"].get(task_id, {})
    return AspectSchema(task_id=task_id, aspects=tuple(tasks[task_id]["train500"]), aliases=aliases)


# ---------------------------------------------------------------- distributions

@dataclass(frozen=True)
class LabelDistribution:
    """Per-aspect label fractions; each aspect's row sums to one."""

    fractions: Mapping[str, Mapping[SentimentLabel, float]]

    def __post_init__(self):
        for aspect, row in self.fractions.items():
            if any(v < 0 for v in row.values()):
                raise CorpusError(f"negative fraction for aspect {aspect!r}")
            total = sum(row.values())
            if abs(total - 1.0) > 1e-9:
                raise CorpusError(f"fractions for aspect {aspect!r} sum to {total!r}, not 1")

    @classmethod
    def from_percentages(cls, rows: Mapping[str, Sequence[float]], normalize: bool = False) -> "LabelDistribution":
        """Build from ``aspect -> [pos, neu, neg, unm]`` percentages.

        Published tables are rounded to two decimals; ``normalize=True`` rescales
        rows that total 99.99 or 100.01 instead of rejecting them.
        """
        fractions = {}
        for aspect, row in rows.items():
            values = [float(v) for v in row]
            if len(values) != 4:
                raise CorpusError(f"aspect {aspect!r}: expected 4 percentages, got {len(values)}")
            total = sum(values) if normalize else 100.0
            fractions[aspect] = {lab: v / total for lab, v in zip(LABEL_ORDER, values)}
        return cls(fractions)

    def to_dict(self) -> dict:
        return {a: {lab.value: row[lab] for lab in LABEL_ORDER} for a, row in self.fractions.items()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LabelDistribution":
        return cls({a: {SentimentLabel.parse(k): float(v) for k, v in row.items()} for a, row in d.items()})


def builtin_distribution(task_id: str, split: str = "train500") -> LabelDistribution:
    """Label distribution of a builtin task; ``split`` is train500, train1000 or test."""
    tasks = _data("label_distributions.json")["tasks"]
    try:
        rows = tasks[task_id][split]
    except KeyError:
        raise CorpusError(f"no builtin distribution {task_id}/{split}") from None
    return LabelDistribution.from_percentages(rows, normalize=True)


def load_distribution(path: str | Path) -> LabelDistribution:
    with open(path, encoding="utf-8") as fh:
        return LabelDistribution.from_dict(json.load(fh))


# ---------------------------------------------------------------- fixtures

def _quota(n: int, probs: Sequence[float]) -> list[int]:
    # largest-remainder rounding so counts sum to n exactly
    raw = [p * n for p in probs]
    counts = [int(np.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def generate_fixture_corpus(
    schema: AspectSchema,
    dist: LabelDistribution,
    n: int,
    seed: int,
    id_prefix: str = "r",
) -> list[MasaRecord]:
    """Synthesize ``n`` review records whose label frequencies follow ``dist``.

    Each aspect's labels are allocated by exact quota and then shuffled, so
    empirical frequencies are within ``1/n`` of the targets. Review text
    mentions exactly the aspects with a label other than unmentioned, and every
    mentioned aspect gets a rationale.
    """
    if n < 1:
        raise CorpusError("n must be at least 1")
    missing = [a for a in schema.aspects if a not in dist.fractions]
    if missing:
        raise CorpusError(f"distribution is missing aspect(s): {', '.join(map(repr, missing))}")

    bank = _data("sentence_bank.json")
    rng = np.random.default_rng(seed)
    columns = {}
    for aspect in schema.aspects:
        counts = _quota(n, [dist.fractions[aspect].get(lab, 0.0) for lab in LABEL_ORDER])
        column = np.repeat(np.arange(len(LABEL_ORDER)), counts)
        columns[aspect] = rng.permutation(column)

    width = len(str(n - 1))
    records = []
    for i in range(n):
        labels = {a: LABEL_ORDER[int(columns[a][i])] for a in schema.aspects}
        mentioned = [a for a in schema.aspects if labels[a] is not SentimentLabel.UNMENTIONED]
        sentences = [bank["openers"][int(rng.integers(len(bank["openers"])))]]
        rationales = {}
        for j in rng.permutation(len(mentioned)):
            aspect = mentioned[int(j)]
            pool = bank["sentences"][labels[aspect].value]
            sentences.append(pool[int(rng.integers(len(pool)))].format(aspect=aspect))
        for aspect in mentioned:
            pool = bank["rationales"][labels[aspect].value]
            rationales[aspect] = pool[int(rng.integers(len(pool)))].format(aspect=aspect)
        records.append(
            MasaRecord(id=f"{id_prefix}{i:0{width}d}", text=" ".join(sentences), labels=labels, rationales=rationales)
        )
    return records
