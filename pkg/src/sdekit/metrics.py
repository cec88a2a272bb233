"""Evaluation arithmetic: weighted kappa, format-error rate, span F1, slot
accuracy and perplexity.

Kappa is computed in exact rational arithmetic (counts are integers and the
default weights are simple fractions) and converted to float only at the end,
so the textbook anchors come out exactly.
"""

from __future__ import annotations

import json
import math
import re
import statistics
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .parser import ParseOutcome
from .schema import LABEL_ORDER, AspectSchema, MasaRecord, SentimentLabel, Span, SpanRecord


class MetricError(ValueError):
    pass


_INDEX = {lab: i for i, lab in enumerate(LABEL_ORDER)}


# ---------------------------------------------------------------- kappa

def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    return Fraction(float(x))


@dataclass(frozen=True)
class WeightMatrix:
    """4x4 agreement weights; rows are gold labels, columns predicted labels,
    both in ``LABEL_ORDER`` (positive, neutral, negative, unmentioned)."""

    w: tuple[tuple[Fraction, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(_frac(x) for x in row) for row in self.w)
        if len(rows) != 4 or any(len(r) != 4 for r in rows):
            raise MetricError("weight matrix must be 4x4")
        if any(not 0 <= x <= 1 for r in rows for x in r):
            raise MetricError("weights must lie in [0, 1]")
        if any(rows[i][i] != 1 for i in range(4)):
            raise MetricError("diagonal weights must be 1")
        object.__setattr__(self, "w", rows)

    @classmethod
    def default(cls) -> "WeightMatrix":
        h, t = Fraction(1, 2), Fraction(2, 3)
        return cls((
            (1, h, 0, h),
            (t, 1, t, t),
            (0, h, 1, h),
            (h, t, h, 1),
        ))

    def as_array(self) -> np.ndarray:
        return np.array([[float(x) for x in row] for row in self.w])

    def to_dict(self) -> dict:
        return {"labels": [lab.value for lab in LABEL_ORDER], "weights": [[str(x) for x in row] for row in self.w]}


@dataclass(frozen=True)
class ConfusionMatrix:
    """Integer counts ``c[gold][predicted]`` in ``LABEL_ORDER``."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.shape != (4, 4):
            raise MetricError(f"confusion matrix must be 4x4, got shape {c.shape}")
        if not np.all(np.equal(np.mod(c, 1), 0)) or np.any(c < 0):
            raise MetricError("confusion counts must be non-negative integers")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @classmethod
    def zeros(cls) -> "ConfusionMatrix":
        return cls(np.zeros((4, 4), dtype=np.int64))

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def add(self, gold: SentimentLabel, pred: SentimentLabel) -> None:
        self.counts[_INDEX[gold], _INDEX[pred]] += 1

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def probabilities(self) -> np.ndarray:
        if self.n == 0:
            raise MetricError("empty confusion matrix")
        return self.counts / self.n

    def to_list(self) -> list[list[int]]:
        return self.counts.tolist()


@dataclass(frozen=True)
class KappaResult:
    po: float
    pe: float
    kappa: float
    po_exact: Fraction | None = None
    pe_exact: Fraction | None = None

    def to_dict(self) -> dict:
        return {"po": self.po, "pe": self.pe, "kappa": self.kappa}


def weighted_kappa(conf: ConfusionMatrix, w: WeightMatrix | None = None) -> KappaResult:
    """kappa = (Po - Pe) / (1 - Pe), Po = sum w_ij p_ij, Pe = sum w_ij p_i. p_.j."""
    w = w or WeightMatrix.default()
    c = [[int(x) for x in row] for row in conf.counts]
    n = sum(map(sum, c))
    if n == 0:
        raise MetricError("cannot compute kappa of an empty confusion matrix")
    rows = [sum(r) for r in c]
    cols = [sum(c[i][j] for i in range(4)) for j in range(4)]
    po_num = sum(w.w[i][j] * c[i][j] for i in range(4) for j in range(4))
    pe_num = sum(w.w[i][j] * rows[i] * cols[j] for i in range(4) for j in range(4))
    po = Fraction(po_num) / n
    pe = Fraction(pe_num) / (n * n)
    if pe == 1:
        raise MetricError("degenerate marginals: chance agreement is 1, kappa undefined")
    kappa = (po - pe) / (1 - pe)
    return KappaResult(float(po), float(pe), float(kappa), po, pe)


# ---------------------------------------------------------------- sentiment slots

def _align(gold: Sequence, outcomes, what: str) -> list[tuple[object, object]]:
    """Pair gold records with ``(id, outcome)`` items (or a mapping id->outcome)."""
    if isinstance(outcomes, Mapping):
        by_id = dict(outcomes)
    else:
        by_id = {}
        for rid, out in outcomes:
            if rid in by_id:
                raise MetricError(f"duplicate {what} id {rid!r}")
            by_id[rid] = out
    gold_ids = [g.id for g in gold]
    missing = [i for i in gold_ids if i not in by_id]
    extra = sorted(set(by_id) - set(gold_ids))
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing {what} for id(s) {', '.join(missing[:10])}" + (" ..." if len(missing) > 10 else ""))
        if extra:
            parts.append(f"unknown {what} id(s) {', '.join(extra[:10])}" + (" ..." if len(extra) > 10 else ""))
        raise MetricError("; ".join(parts))
    return [(g, by_id[g.id]) for g in gold]


def _prediction_for(outcome, aspect: str) -> SentimentLabel:
    preds = outcome.predictions if isinstance(outcome, ParseOutcome) else outcome
    return preds.get(aspect, SentimentLabel.UNMENTIONED)


def build_confusion(
    gold: Sequence[MasaRecord], outcomes, schema: AspectSchema
) -> tuple[ConfusionMatrix, dict[str, ConfusionMatrix]]:
    """Pooled and per-aspect confusion over every (record, aspect) slot."""
    pooled = ConfusionMatrix.zeros()
    per_aspect = {a: ConfusionMatrix.zeros() for a in schema.aspects}
    for record, outcome in _align(gold, outcomes, "prediction"):
        for aspect in schema.aspects:
            g = record.labels[aspect]
            p = _prediction_for(outcome, aspect)
            pooled.add(g, p)
            per_aspect[aspect].add(g, p)
    return pooled, per_aspect


def slot_accuracy(gold: Sequence[MasaRecord], outcomes, schema: AspectSchema) -> float:
    pairs = _align(gold, outcomes, "prediction")
    total = hits = 0
    for record, outcome in pairs:
        for aspect in schema.aspects:
            total += 1
            hits += record.labels[aspect] is _prediction_for(outcome, aspect)
    if total == 0:
        raise MetricError("no slots to score")
    return hits / total


def format_error_rate(outcomes: Iterable) -> float:
    flags = [(o[1] if isinstance(o, tuple) else o).format_error for o in outcomes]
    if not flags:
        raise MetricError("format error rate of an empty outcome list")
    return sum(flags) / len(flags)


# ---------------------------------------------------------------- span F1

_WS = re.compile(r"\s+")


def normalize_mention(text: str) -> str:
    return _WS.sub(" ", text).strip().casefold()


def hard_match(gold: tuple[str, str], pred: tuple[str, str]) -> bool:
    return gold[0] == pred[0] and normalize_mention(gold[1]) == normalize_mention(pred[1])


def soft_match(gold: tuple[str, str], pred: tuple[str, str]) -> bool:
    """Same type and one normalized mention contains the other."""
    if gold[0] != pred[0]:
        return False
    g, p = normalize_mention(gold[1]), normalize_mention(pred[1])
    return bool(g) and bool(p) and (g in p or p in g)


MATCHERS = {"hard": hard_match, "soft": soft_match}


def match_count(gold: Sequence[tuple[str, str]], pred: Sequence[tuple[str, str]], mode: str) -> int:
    """Size of a largest one-to-one gold/pred matching.

    Gold spans are taken in order; each claims the first compatible free
    prediction, and a prediction already taken is reassigned along an
    augmenting path when that lets one more gold span match. For the hard rule
    this never needs reassignment; for the containment rule plain first-come
    assignment can strand a gold span that had a free alternative.
    """
    try:
        ok = MATCHERS[mode]
    except KeyError:
        raise MetricError(f"unknown match mode {mode!r}; expected hard or soft") from None
    adj = [[j for j, p in enumerate(pred) if ok(g, p)] for g in gold]
    owner = [-1] * len(pred)

    def claim(i: int, seen: list[bool]) -> bool:
        for j in adj[i]:
            if seen[j]:
                continue
            seen[j] = True
            if owner[j] < 0 or claim(owner[j], seen):
                owner[j] = i
                return True
        return False

    return sum(claim(i, [False] * len(pred)) for i in range(len(gold)))


@dataclass(frozen=True)
class MatchScore:
    mode: str
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
        }


def _as_pairs(spans) -> list[tuple[str, str]]:
    out = []
    for s in spans:
        if isinstance(s, Span):
            out.append((s.type, s.mention))
        elif isinstance(s, Mapping):
            out.append((s["type"], s["mention"]))
        else:
            t, m = s
            out.append((t, m))
    return out


def span_f1(gold: Sequence[SpanRecord], pred, mode: str = "soft") -> MatchScore:
    """Micro P/R/F1 over a corpus; ``pred`` is ``[(id, spans)]`` or id->spans.

    A ``ParseOutcome`` may stand in for the span list.
    """
    tp = n_gold = n_pred = 0
    for record, spans in _align(gold, pred, "prediction"):
        if isinstance(spans, ParseOutcome):
            spans = spans.predictions
        g, p = _as_pairs(record.spans), _as_pairs(spans)
        tp += match_count(g, p, mode)
        n_gold += len(g)
        n_pred += len(p)
    return MatchScore(mode, tp, n_pred - tp, n_gold - tp)


# ---------------------------------------------------------------- perplexity

@dataclass(frozen=True)
class PerplexityResult:
    token_count: int
    mean_nll: float
    ppl: float

    def to_dict(self) -> dict:
        return {"token_count": self.token_count, "mean_nll": self.mean_nll, "ppl": self.ppl}


def perplexity(nlls: Sequence[float], context_boundary: int | None = None) -> PerplexityResult:
    """exp of the mean per-token NLL; with a boundary only later tokens count,
    i.e. the prompt is treated as context."""
    values = [float(x) for x in nlls]
    if not values:
        raise MetricError("perplexity of an empty NLL list")
    if any(x < 0 or math.isnan(x) for x in values):
        raise MetricError("NLL values must be non-negative numbers")
    if context_boundary is not None:
        if not 0 <= context_boundary < len(values):
            raise MetricError(f"context boundary {context_boundary} outside [0, {len(values)})")
        values = values[context_boundary:]
    mean = statistics.fmean(values) if len(set(values)) > 1 else values[0]
    return PerplexityResult(len(values), mean, math.exp(mean))


def load_nlls(path: str | Path) -> list[tuple[str, list[float], int | None]]:
    """Read ``{"id", "nlls", "context_boundary"}`` JSON-lines."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                rows.append((str(d["id"]), [float(x) for x in d["nlls"]], d.get("context_boundary")))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise MetricError(f"{path}:{lineno}: malformed NLL line ({exc})") from None
    return rows


def corpus_perplexity(rows: Iterable[tuple[str, Sequence[float], int | None]]) -> PerplexityResult:
    """Token-weighted perplexity over many sequences."""
    selected: list[float] = []
    for rid, nlls, boundary in rows:
        if boundary is not None and not 0 <= boundary < len(nlls):
            raise MetricError(f"sequence {rid}: context boundary {boundary} outside [0, {len(nlls)})")
        selected.extend(nlls[boundary:] if boundary is not None else nlls)
    return perplexity(selected)
