"""Recover structured predictions from raw model output.

Parsing runs in two tiers. The strict pass accepts only the exact response
grammar of the strategy (see :mod:`sdekit.renderer`), tolerating leading or
trailing whitespace and letter case of aspects and labels; its failure is what
``format_error`` reports. When it fails, the relaxed pass applies the ordered
repair rules below and records which ones changed something:

    R1 WhitespaceNormalize      R6 JsonQuoteRepair
    R2 PunctuationVariant       R7 TrailingTextStripped
    R3 CaseFold                 R8 DuplicateAspectFirstWins
    R4 LabelSynonym             R9 MissingAspectDefaulted
    R5 AspectAlias

Anything still unreadable is left in ``residue``; a sentiment aspect with no
reading ends up unmentioned.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping, Sequence, Union

from .designspace import DesignStrategy, LabelStyle, OutputFormat, Reasoning, Unmentioned
from .renderer import COT_SEP, EMPTY_LIST, EMPTY_OU_RESPONSE, LIST_SEP, MENTION_SEP, RCOT_SEP
from .schema import AspectSchema, SentimentLabel


class ParseError(ValueError):
    pass


class RepairKind(str, Enum):
    WHITESPACE_NORMALIZE = "WhitespaceNormalize"
    PUNCTUATION_VARIANT = "PunctuationVariant"
    CASE_FOLD = "CaseFold"
    LABEL_SYNONYM = "LabelSynonym"
    ASPECT_ALIAS = "AspectAlias"
    JSON_QUOTE_REPAIR = "JsonQuoteRepair"
    TRAILING_TEXT_STRIPPED = "TrailingTextStripped"
    DUPLICATE_ASPECT_FIRST_WINS = "DuplicateAspectFirstWins"
    MISSING_ASPECT_DEFAULTED = "MissingAspectDefaulted"


RULE_ORDER = tuple(RepairKind)
WS = RepairKind.WHITESPACE_NORMALIZE
PUNCT = RepairKind.PUNCTUATION_VARIANT
CASE = RepairKind.CASE_FOLD
SYN = RepairKind.LABEL_SYNONYM
ALIAS = RepairKind.ASPECT_ALIAS
JSONFIX = RepairKind.JSON_QUOTE_REPAIR
TRAIL = RepairKind.TRAILING_TEXT_STRIPPED
DUP = RepairKind.DUPLICATE_ASPECT_FIRST_WINS
MISSING = RepairKind.MISSING_ASPECT_DEFAULTED

SpanPrediction = tuple[str, str]
Predictions = Union[dict[str, SentimentLabel], list[SpanPrediction]]


@dataclass(frozen=True)
class ParseOutcome:
    predictions: Predictions
    format_error: bool
    repairs: tuple[RepairKind, ...] = ()
    residue: str = ""

    def to_dict(self) -> dict:
        if isinstance(self.predictions, dict):
            preds = {a: lab.value for a, lab in self.predictions.items()}
        else:
            preds = [{"type": t, "mention": m} for t, m in self.predictions]
        return {
            "predictions": preds,
            "format_error": self.format_error,
            "repairs": [r.value for r in self.repairs],
            "residue": self.residue,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ParseOutcome":
        preds = d["predictions"]
        if isinstance(preds, dict):
            predictions: Predictions = {a: SentimentLabel(v) for a, v in preds.items()}
        else:
            predictions = [(p["type"], p["mention"]) for p in preds]
        return cls(
            predictions=predictions,
            format_error=bool(d["format_error"]),
            repairs=tuple(RepairKind(r) for r in d.get("repairs", [])),
            residue=d.get("residue", ""),
        )


# ---------------------------------------------------------------- text rules

_FULLWIDTH = [
    (re.compile(r"\s*：\s*"), ": "),
    (re.compile(r"\s*；\s*"), "; "),
    (re.compile(r"\s*，\s*"), ", "),
    (re.compile(r"\s*。\s*"), ". "),
    (re.compile(r"\s*！\s*"), "! "),
    (re.compile(r"（"), "("),
    (re.compile(r"）"), ")"),
    (re.compile(r"[［【]"), "["),
    (re.compile(r"[］】]"), "]"),
    (re.compile(r"[“”„]"), '"'),
    (re.compile(r"[‘’]"), "'"),
]
_SPACES = re.compile(r"[ \t　 ]+")


def _collapse(line: str) -> str:
    return _SPACES.sub(" ", line).strip()


def _ascii_punct(text: str) -> str:
    for pat, rep in _FULLWIDTH:
        text = pat.sub(rep, text)
    return _collapse(text)


def _alias_key(name: str) -> str:
    return re.sub(r"[\s_\-]+", " ", name.strip().lower())


@lru_cache(maxsize=1)
def label_synonym_table() -> dict[str, SentimentLabel]:
    raw = json.loads(resources.files("sdekit").joinpath("data", "label_synonyms.json").read_text(encoding="utf-8"))
    table = {}
    for label, words in raw["synonyms"].items():
        for w in words:
            table[w.lower()] = SentimentLabel(label)
    return table


def _ordered(kinds: Iterable[RepairKind]) -> tuple[RepairKind, ...]:
    present = set(kinds)
    return tuple(k for k in RULE_ORDER if k in present)


# ---------------------------------------------------------------- vocabulary

class _Vocab:
    """Aspect and label lookups for one (strategy, schema) pair."""

    def __init__(self, strategy: DesignStrategy, schema: AspectSchema):
        self.strategy = strategy
        self.schema = schema
        self.aspects = {a.lower(): a for a in schema.aspects}
        self.aliases = {_alias_key(a): a for a in schema.aspects}
        for alias, target in schema.aliases.items():
            self.aliases.setdefault(_alias_key(alias), target)

        fmt = strategy.output_format
        placeholder_ok = strategy.unmentioned is Unmentioned.PU and fmt in (OutputFormat.LINES, OutputFormat.JSON)
        mentioned = (SentimentLabel.POSITIVE, SentimentLabel.NEUTRAL, SentimentLabel.NEGATIVE)
        if strategy.label_style is LabelStyle.NUM:
            self.canonical = {lab: schema.numeric_label_map[lab] for lab in mentioned}
            if placeholder_ok:
                self.canonical[SentimentLabel.UNMENTIONED] = schema.numeric_label_map[SentimentLabel.UNMENTIONED]
        else:
            self.canonical = {lab: lab.value for lab in mentioned}
            if placeholder_ok:
                self.canonical[SentimentLabel.UNMENTIONED] = schema.placeholder_token
        self.strict_labels = {tok.lower(): lab for lab, tok in self.canonical.items()}
        self.exact_labels = {tok: lab for lab, tok in self.canonical.items()}

        syn = dict(label_synonym_table())
        for lab in SentimentLabel:
            syn.setdefault(lab.value, lab)
            syn.setdefault(schema.numeric_label_map[lab].lower(), lab)
        syn.setdefault(schema.placeholder_token.lower(), SentimentLabel.UNMENTIONED)
        self.synonyms = syn

    # aspects
    def strict_aspect(self, name: str) -> str | None:
        return self.aspects.get(name.lower())

    def relaxed_aspect(self, name: str) -> tuple[str, set] | None:
        name = name.strip()
        if name in self.schema.aspects:
            return name, set()
        if name.lower() in self.aspects:
            return self.aspects[name.lower()], {CASE}
        key = _alias_key(name.strip("\"'"))
        if key in self.aliases:
            return self.aliases[key], {ALIAS}
        return None

    # labels
    def strict_label(self, token: str) -> SentimentLabel | None:
        if self.strategy.label_style is LabelStyle.NUM:
            m = re.fullmatch(r"\s*(['\"]?)\s*(-?\d+)\s*\1\s*", token)
            return self.exact_labels.get(m.group(2)) if m else None
        return self.strict_labels.get(token.lower())

    def relaxed_label(self, token: str) -> tuple[SentimentLabel, set] | None:
        if isinstance(token, (int, float)) and not isinstance(token, bool):
            token = str(int(token)) if float(token).is_integer() else str(token)
        if not isinstance(token, str):
            return None
        kinds = set()
        t = _collapse(token)
        if t != token:
            kinds.add(WS)
        stripped = t.strip("\"'").rstrip(".,;!。").strip()
        if stripped != t:
            numeric_quotes = self.strategy.label_style is LabelStyle.NUM and self.strict_label(t) is not None
            if not numeric_quotes:
                kinds.add(PUNCT)
            t = stripped
        if t in self.exact_labels:
            return self.exact_labels[t], kinds
        if t.lower() in self.strict_labels:
            return self.strict_labels[t.lower()], kinds | {CASE}
        if t.lower() in self.synonyms:
            return self.synonyms[t.lower()], kinds | {SYN}
        return None


# ---------------------------------------------------------------- sentiment parsing

@dataclass
class _Scan:
    """Relaxed-pass accumulator."""

    found: list = field(default_factory=list)  # (aspect, value) in text order
    kinds: set = field(default_factory=set)
    residue: list = field(default_factory=list)
    trailing: list = field(default_factory=list)

    def finish_trailing(self, pieces: list[tuple[int, str]], last_hit: int):
        # unreadable pieces after the last readable one are stripped as trailing prose
        for idx, piece in pieces:
            if self.found and idx > last_hit:
                self.trailing.append(piece)
            else:
                self.residue.append(piece)
        if self.trailing:
            self.kinds.add(TRAIL)


def _split_reasoning(value: str) -> str:
    if "=>" in value:
        value = value.rsplit("=>", 1)[1]
    if "<=" in value:
        value = value.split("<=", 1)[0]
    return value.strip()


class _MasaParser:
    def __init__(self, strategy: DesignStrategy, schema: AspectSchema):
        self.s = strategy
        self.schema = schema
        self.v = _Vocab(strategy, schema)
        alt = "|".join(re.escape(a) for a in sorted(schema.aspects, key=len, reverse=True))
        alias_alt = "|".join(
            re.escape(a) for a in sorted({*schema.aspects, *schema.aliases}, key=len, reverse=True)
        )
        if strategy.label_style is LabelStyle.NUM:
            codes = "|".join(re.escape(t) for t in self.v.exact_labels)
            lab = rf"['\"]?\s*(?:{codes})\s*['\"]?"
        else:
            lab = "|".join(re.escape(t) for t in self.v.exact_labels)
        core = rf"(?<!\S)The sentiment toward (?P<asp>{alt}) is (?P<lab>{lab})\."
        if strategy.unmentioned is Unmentioned.PU:
            core += rf"|(?<!\S)(?P<asp2>{alt}) is not mentioned\."
        self.nat_strict = re.compile(core, re.IGNORECASE)
        self.nat_relaxed = re.compile(
            r"the sentiment toward (?P<asp>[^.]+?) is (?P<lab>[^.]+?)(?P<end>\.|$)"
            rf"|(?<![\w])(?P<asp2>{alias_alt}) is not mentioned(?P<end2>\.|$)",
            re.IGNORECASE,
        )

    # ---- public
    def parse(self, text: str) -> ParseOutcome:
        strict = self.strict(text)
        if strict is not None:
            return ParseOutcome(strict, format_error=False)
        return self.relaxed(text)

    def _complete(self, found: dict[str, SentimentLabel]) -> dict[str, SentimentLabel]:
        return {a: found.get(a, SentimentLabel.UNMENTIONED) for a in self.schema.aspects}

    # ---- strict
    def strict(self, text: str) -> dict[str, SentimentLabel] | None:
        body = text.strip()
        ou = self.s.unmentioned is Unmentioned.OU
        if ou and body.lower() == EMPTY_OU_RESPONSE:
            return self._complete({})
        fmt = self.s.output_format
        if fmt is OutputFormat.NATURAL:
            pairs = self._strict_natural(body)
        else:
            pairs = []
            for line in body.split("\n"):
                pair = self._strict_json(line) if fmt is OutputFormat.JSON else self._strict_line(line)
                if pair is None:
                    return None
                pairs.append(pair)
        if not pairs:
            return None
        found = {}
        for aspect, label in pairs:
            if aspect in found:
                return None
            if ou and label is SentimentLabel.UNMENTIONED:
                return None
            found[aspect] = label
        if not ou and len(found) != len(self.schema.aspects):
            return None
        return self._complete(found)

    def _strict_line(self, line: str):
        if ": " not in line:
            return None
        name, value = line.split(": ", 1)
        aspect = self.v.strict_aspect(name)
        if aspect is None:
            return None
        r = self.s.reasoning
        if r is Reasoning.COT:
            if COT_SEP not in value:
                return None
            desc, value = value.rsplit(COT_SEP, 1)
            if not desc.strip():
                return None
        elif r is Reasoning.RCOT:
            if RCOT_SEP not in value:
                return None
            value, desc = value.split(RCOT_SEP, 1)
            if not desc.strip():
                return None
        if self.s.output_format is OutputFormat.LINES_OF_LIST:
            if value == EMPTY_LIST:
                return (aspect, SentimentLabel.UNMENTIONED) if self.s.unmentioned is Unmentioned.PU else None
            if not (value.startswith("[") and value.endswith("]")):
                return None
            value = value[1:-1]
        label = self.v.strict_label(value)
        return None if label is None else (aspect, label)

    def _expected_keys(self) -> list[str]:
        r = self.s.reasoning
        if r is Reasoning.COT:
            return ["aspect", "description", "sentiment"]
        if r is Reasoning.RCOT:
            return ["aspect", "sentiment", "description"]
        return ["aspect", "sentiment"]

    def _strict_json(self, line: str):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            return None
        if not isinstance(obj, dict) or list(obj) != self._expected_keys():
            return None
        if "description" in obj and (not isinstance(obj["description"], str) or not obj["description"].strip()):
            return None
        if not isinstance(obj["aspect"], str):
            return None
        aspect = self.v.strict_aspect(obj["aspect"])
        value = obj["sentiment"]
        if isinstance(value, int) and not isinstance(value, bool) and self.s.label_style is LabelStyle.NUM:
            value = str(value)
        if aspect is None or not isinstance(value, str):
            return None
        label = self.v.strict_label(value)
        return None if label is None else (aspect, label)

    def _strict_natural(self, body: str):
        pairs = []
        gaps = []
        pos = 0
        for m in self.nat_strict.finditer(body):
            gaps.append(body[pos:m.start()])
            pos = m.end()
            if m.group("asp") is not None:
                aspect = self.v.strict_aspect(m.group("asp"))
                label = self.v.strict_label(m.group("lab"))
            else:
                aspect = self.v.strict_aspect(m.group("asp2"))
                label = SentimentLabel.UNMENTIONED
            if aspect is None or label is None:
                return []
            pairs.append((aspect, label))
        gaps.append(body[pos:])
        if not pairs or not _natural_gaps_ok(gaps, self.s.reasoning):
            return []
        return pairs

    # ---- relaxed
    def relaxed(self, text: str) -> ParseOutcome:
        scan = _Scan()
        body = text.strip()
        if self.s.output_format is OutputFormat.NATURAL:
            self._relaxed_natural(body, scan)
        else:
            self._relaxed_lines(body, scan)

        found: dict[str, SentimentLabel] = {}
        for aspect, label in scan.found:
            if aspect in found:
                scan.kinds.add(DUP)
                continue
            found[aspect] = label
        if self.s.unmentioned is Unmentioned.PU and any(a not in found for a in self.schema.aspects):
            scan.kinds.add(MISSING)
        residue = "\n".join(p for p in scan.residue + scan.trailing if p)
        return ParseOutcome(self._complete(found), format_error=True, repairs=_ordered(scan.kinds), residue=residue)

    def _relaxed_lines(self, body: str, scan: _Scan):
        raw_lines = body.replace("\r\n", "\n").replace("\r", "\n").split("\n")
        if body != body.replace("\r", ""):
            scan.kinds.add(WS)
        pieces = []
        last_hit = -1
        for idx, line in enumerate(raw_lines):
            if not line.strip():
                scan.kinds.add(WS)
                continue
            if self.s.unmentioned is Unmentioned.OU and line.strip().lower() == EMPTY_OU_RESPONSE and len(raw_lines) == 1:
                continue
            if self.s.output_format is OutputFormat.JSON:
                hit = self._strict_json(line)
                result = (hit, set(), "") if hit else self._relaxed_json(line)
            else:
                hit = self._strict_line(line)
                result = (hit, set(), "") if hit else self._relaxed_line(line)
            if result is None:
                pieces.append((idx, line))
                continue
            pair, kinds, tail = result
            scan.found.append(pair)
            scan.kinds |= kinds
            last_hit = idx
            if tail:
                scan.trailing.append(tail)
                scan.kinds.add(TRAIL)
        scan.finish_trailing(pieces, last_hit)

    def _relaxed_line(self, line: str):
        kinds = set()
        s = _collapse(line)
        if s != line:
            kinds.add(WS)
        s2 = _ascii_punct(s)
        if s2 != s:
            kinds.add(PUNCT)
        m = re.match(r"^(.*?)\s*:\s*(.*)$", s2)
        if not m:
            return None
        name, value = m.groups()
        if s2 != f"{name}: {value}":
            kinds.add(WS)
        value = _split_reasoning(value)
        if value.startswith("[") and value.endswith("]"):
            inner = value[1:-1].strip()
            if self.s.output_format is not OutputFormat.LINES_OF_LIST:
                kinds.add(PUNCT)
            if not inner:
                if self.s.output_format is not OutputFormat.LINES_OF_LIST or self.s.unmentioned is Unmentioned.OU:
                    kinds.add(SYN)
                resolved_label = (SentimentLabel.UNMENTIONED, set())
            else:
                resolved_label = self.v.relaxed_label(inner)
        else:
            if self.s.output_format is OutputFormat.LINES_OF_LIST:
                kinds.add(PUNCT)
            resolved_label = self.v.relaxed_label(value)
        resolved_aspect = self.v.relaxed_aspect(name)
        if resolved_aspect is None or resolved_label is None:
            return None
        aspect, k1 = resolved_aspect
        label, k2 = resolved_label
        if label is SentimentLabel.UNMENTIONED and SYN not in k2 and not self._placeholder_expected():
            k2 = k2 | {SYN}
        return (aspect, label), kinds | k1 | k2, ""

    def _placeholder_expected(self) -> bool:
        return self.s.unmentioned is Unmentioned.PU

    def _relaxed_json(self, line: str):
        kinds = set()
        s = line.strip()
        if s != line:
            kinds.add(WS)
        s2 = _ascii_punct(s)
        if s2 != _collapse(s):
            kinds.add(PUNCT)
        obj, tail, fixed = _load_json_object(s2)
        if obj is None:
            return None
        if fixed:
            kinds.add(JSONFIX)
        keys = {k.lower(): k for k in obj if isinstance(k, str)}
        if "aspect" not in keys or "sentiment" not in keys:
            return None
        if any(keys[k] != k for k in ("aspect", "sentiment")):
            kinds.add(CASE)
        name, value = obj[keys["aspect"]], obj[keys["sentiment"]]
        if not isinstance(name, str):
            return None
        resolved_aspect = self.v.relaxed_aspect(name)
        resolved_label = self.v.relaxed_label(value)
        if resolved_aspect is None or resolved_label is None:
            return None
        (aspect, k1), (label, k2) = resolved_aspect, resolved_label
        if label is SentimentLabel.UNMENTIONED and SYN not in k2 and not self._placeholder_expected():
            k2 = k2 | {SYN}
        return (aspect, label), kinds | k1 | k2, tail

    def _relaxed_natural(self, body: str, scan: _Scan):
        s = _collapse(body.replace("\r", " ").replace("\n", " "))
        if s != body:
            scan.kinds.add(WS)
        s2 = _ascii_punct(s)
        if s2 != s:
            scan.kinds.add(PUNCT)
        reasoning = self.s.reasoning
        pos = 0
        gaps = []
        for m in self.nat_relaxed.finditer(s2):
            gaps.append(s2[pos:m.start()].strip())
            pos = m.end()
            kinds = set()
            if m.group("asp") is not None:
                resolved_aspect = self.v.relaxed_aspect(m.group("asp"))
                resolved_label = self.v.relaxed_label(m.group("lab"))
                end = m.group("end")
            else:
                resolved_aspect = self.v.relaxed_aspect(m.group("asp2"))
                resolved_label = (SentimentLabel.UNMENTIONED, set())
                end = m.group("end2")
                if self.s.unmentioned is Unmentioned.OU:
                    kinds.add(SYN)
            if resolved_aspect is None or resolved_label is None:
                scan.residue.append(m.group(0))
                continue
            if not end:
                kinds.add(PUNCT)
            (aspect, k1), (label, k2) = resolved_aspect, resolved_label
            if m.group("asp") is not None and label is SentimentLabel.UNMENTIONED and SYN not in k2:
                k2 = k2 | {SYN}
            scan.found.append((aspect, label))
            scan.kinds |= kinds | k1 | k2
        tail = s2[pos:].strip()
        # descriptions occupy the gaps of reasoning designs
        if reasoning is Reasoning.NO_COT:
            scan.residue.extend(g for g in gaps if g)
        elif reasoning is Reasoning.RCOT and gaps and gaps[0]:
            scan.residue.append(gaps[0])
        if tail:
            if reasoning is Reasoning.RCOT and scan.found:
                pass
            elif scan.found:
                scan.trailing.append(tail)
                scan.kinds.add(TRAIL)
            elif not (self.s.unmentioned is Unmentioned.OU and tail.lower() == EMPTY_OU_RESPONSE):
                scan.residue.append(tail)


def _natural_gaps_ok(gaps: list[str], reasoning: Reasoning) -> bool:
    lead, middle, tail = gaps[0], gaps[1:-1], gaps[-1]

    def desc_ok(d: str) -> bool:
        return bool(d) and d == d.strip()

    if reasoning is Reasoning.NO_COT:
        return lead == "" and tail == "" and all(g == " " for g in middle)
    inner_ok = all(len(g) > 2 and g[0] == " " and g[-1] == " " and desc_ok(g[1:-1]) for g in middle)
    if reasoning is Reasoning.COT:
        return lead.endswith(" ") and desc_ok(lead[:-1]) and tail == "" and inner_ok
    return lead == "" and tail.startswith(" ") and desc_ok(tail[1:]) and inner_ok


def _load_json_object(text: str):
    """Decode the JSON object at the start of ``text``.

    Returns ``(obj, trailing_text, repaired)``; ``obj`` is None when even the
    quote/comma/brace repairs do not yield an object.
    """
    decoder = json.JSONDecoder()
    start = text.find("{")
    if start < 0:
        return None, "", False
    candidate = text[start:]
    try:
        obj, end = decoder.raw_decode(candidate)
        if isinstance(obj, dict):
            return obj, candidate[end:].strip(), False
    except json.JSONDecodeError:
        pass
    fixed = candidate
    if '"' not in fixed:
        fixed = fixed.replace("'", '"')
    else:
        fixed = re.sub(r"(?<=[{,:\s])'([^'\"]*)'(?=\s*[:,}])", r'"\1"', fixed)
    fixed = re.sub(r"([{,]\s*)([A-Za-z_][\w ]*?)(\s*:)", r'\1"\2"\3', fixed)
    fixed = re.sub(r",\s*}", "}", fixed)
    if fixed.count("{") > fixed.count("}"):
        fixed = fixed.rstrip().rstrip(",") + "}"
    try:
        obj, end = decoder.raw_decode(fixed)
    except json.JSONDecodeError:
        return None, "", False
    if not isinstance(obj, dict):
        return None, "", False
    return obj, fixed[end:].strip(), True


# ---------------------------------------------------------------- span parsing

class _SpanParser:
    def __init__(self, strategy: DesignStrategy, schema: AspectSchema):
        self.s = strategy
        self.schema = schema
        self.v = _Vocab(strategy, schema)
        alt = "|".join(re.escape(a) for a in sorted(schema.aspects, key=len, reverse=True))
        strict = rf'(?<!\S)The (?P<t>{alt}) mentions are (?P<ms>"[^"]+"(?:, "[^"]+")*)\.'
        if strategy.unmentioned is Unmentioned.PU:
            strict += rf"|(?<!\S)There is no (?P<t2>{alt}) mention\."
        self.nat_strict = re.compile(strict, re.IGNORECASE)
        self.nat_relaxed = re.compile(
            r'the (?P<t>[^."]+?) mentions are (?P<ms>(?:"[^"]*"|[^."])+?)(?P<end>\.(?=\s|$)|$)'
            r"|there is no (?P<t2>[^.]+?) mentions?(?P<end2>\.|$)",
            re.IGNORECASE,
        )

    def parse(self, text: str) -> ParseOutcome:
        strict = self.strict(text)
        if strict is not None:
            return ParseOutcome(strict, format_error=False)
        return self.relaxed(text)

    @staticmethod
    def _flatten(found: dict[str, list[str]], order: Sequence[str]) -> list[SpanPrediction]:
        return [(t, m) for t in order if t in found for m in found[t]]

    def strict(self, text: str) -> list[SpanPrediction] | None:
        body = text.strip()
        ou = self.s.unmentioned is Unmentioned.OU
        if ou and body.lower() == EMPTY_OU_RESPONSE:
            return []
        fmt = self.s.output_format
        if fmt is OutputFormat.NATURAL:
            entries = self._strict_natural(body)
        else:
            entries = []
            for line in body.split("\n"):
                entry = self._strict_json(line) if fmt is OutputFormat.JSON else self._strict_line(line)
                if entry is None:
                    return None
                entries.append(entry)
        if not entries:
            return None
        found: dict[str, list[str]] = {}
        for span_type, mentions in entries:
            if span_type in found or (ou and not mentions):
                return None
            found[span_type] = mentions
        if not ou and len(found) != len(self.schema.aspects):
            return None
        return self._flatten(found, self.schema.aspects)

    def _strict_line(self, line: str):
        if ": " not in line:
            return None
        name, value = line.split(": ", 1)
        span_type = self.v.strict_aspect(name)
        if span_type is None:
            return None
        if value == EMPTY_LIST:
            return (span_type, []) if self.s.unmentioned is Unmentioned.PU else None
        if self.s.output_format is OutputFormat.LINES_OF_LIST:
            if not (value.startswith("[") and value.endswith("]")):
                return None
            mentions = value[1:-1].split(LIST_SEP)
        else:
            mentions = value.split(MENTION_SEP)
        if any(not m or m != m.strip() for m in mentions):
            return None
        return span_type, mentions

    def _strict_json(self, line: str):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            return None
        if not isinstance(obj, dict) or list(obj) != ["type", "mentions"]:
            return None
        span_type = self.v.strict_aspect(obj["type"]) if isinstance(obj["type"], str) else None
        mentions = obj["mentions"]
        if span_type is None or not isinstance(mentions, list):
            return None
        if any(not isinstance(m, str) or not m for m in mentions):
            return None
        if not mentions and self.s.unmentioned is Unmentioned.OU:
            return None
        return span_type, mentions

    def _strict_natural(self, body: str):
        entries = []
        gaps = []
        pos = 0
        for m in self.nat_strict.finditer(body):
            gaps.append(body[pos:m.start()])
            pos = m.end()
            if m.group("t") is not None:
                entries.append((self.v.strict_aspect(m.group("t")), re.findall(r'"([^"]+)"', m.group("ms"))))
            else:
                entries.append((self.v.strict_aspect(m.group("t2")), []))
        gaps.append(body[pos:])
        if not entries or not _natural_gaps_ok(gaps, Reasoning.NO_COT):
            return []
        return entries

    # ---- relaxed
    def relaxed(self, text: str) -> ParseOutcome:
        scan = _Scan()
        body = text.strip()
        if self.s.output_format is OutputFormat.NATURAL:
            self._relaxed_natural(body, scan)
        else:
            self._relaxed_lines(body, scan)
        found: dict[str, list[str]] = {}
        for span_type, mentions in scan.found:
            if span_type in found:
                scan.kinds.add(DUP)
                continue
            found[span_type] = mentions
        if self.s.unmentioned is Unmentioned.PU and any(t not in found for t in self.schema.aspects):
            scan.kinds.add(MISSING)
        residue = "\n".join(p for p in scan.residue + scan.trailing if p)
        return ParseOutcome(
            self._flatten(found, self.schema.aspects), format_error=True, repairs=_ordered(scan.kinds), residue=residue
        )

    def _empty_value(self, value: str, kinds: set) -> bool:
        """True if ``value`` spells an empty mention list."""
        if value == EMPTY_LIST:
            if self.s.unmentioned is Unmentioned.OU:
                kinds.add(SYN)
            return True
        if self.v.synonyms.get(value.lower()) is SentimentLabel.UNMENTIONED:
            kinds.add(SYN)
            return True
        return False

    def _mentions(self, raw: Iterable[str], kinds: set) -> list[str]:
        out = []
        for m in raw:
            clean = _collapse(m)
            if clean != m:
                kinds.add(WS)
            if clean:
                out.append(clean)
            else:
                kinds.add(WS)
        return out

    def _relaxed_lines(self, body: str, scan: _Scan):
        raw_lines = body.replace("\r\n", "\n").replace("\r", "\n").split("\n")
        if "\r" in body:
            scan.kinds.add(WS)
        pieces = []
        last_hit = -1
        for idx, line in enumerate(raw_lines):
            if not line.strip():
                scan.kinds.add(WS)
                continue
            if self.s.unmentioned is Unmentioned.OU and line.strip().lower() == EMPTY_OU_RESPONSE and len(raw_lines) == 1:
                continue
            if self.s.output_format is OutputFormat.JSON:
                hit = self._strict_json(line)
                result = (hit, set(), "") if hit else self._relaxed_json(line)
            else:
                hit = self._strict_line(line)
                # once the strict pass has failed, a lone "none" reads as an empty list, not a mention
                if hit and len(hit[1]) == 1 and self.v.synonyms.get(hit[1][0].lower()) is SentimentLabel.UNMENTIONED:
                    hit = None
                result = (hit, set(), "") if hit else self._relaxed_line(line)
            if result is None:
                pieces.append((idx, line))
                continue
            entry, kinds, tail = result
            scan.found.append(entry)
            scan.kinds |= kinds
            last_hit = idx
            if tail:
                scan.trailing.append(tail)
                scan.kinds.add(TRAIL)
        scan.finish_trailing(pieces, last_hit)

    def _relaxed_line(self, line: str):
        kinds = set()
        s = _collapse(line)
        if s != line:
            kinds.add(WS)
        s2 = _ascii_punct(s)
        if s2 != s:
            kinds.add(PUNCT)
        m = re.match(r"^(.*?)\s*:\s*(.*)$", s2)
        if not m:
            return None
        name, value = m.groups()
        if s2 != f"{name}: {value}":
            kinds.add(WS)
        resolved = self.v.relaxed_aspect(name)
        if resolved is None:
            return None
        span_type, k1 = resolved
        kinds |= k1
        if self._empty_value(value, kinds):
            return (span_type, []), kinds, ""
        bracketed = value.startswith("[") and value.endswith("]")
        if self.s.output_format is OutputFormat.LINES_OF_LIST:
            if bracketed:
                value = value[1:-1]
            else:
                kinds.add(PUNCT)
            raw = value.split(",")
        else:
            if bracketed:
                kinds.add(PUNCT)
                value = value[1:-1]
                raw = value.split(",")
            else:
                raw = value.split(";")
        # separators come back with their canonical trailing space
        raw = [r[1:] if i and r.startswith(" ") else r for i, r in enumerate(raw)]
        mentions = self._mentions(raw, kinds)
        if not mentions:
            return None
        return (span_type, mentions), kinds, ""

    def _relaxed_json(self, line: str):
        kinds = set()
        s = line.strip()
        if s != line:
            kinds.add(WS)
        s2 = _ascii_punct(s)
        if s2 != _collapse(s):
            kinds.add(PUNCT)
        obj, tail, fixed = _load_json_object(s2)
        if obj is None:
            return None
        if fixed:
            kinds.add(JSONFIX)
        keys = {k.lower(): k for k in obj if isinstance(k, str)}
        if "type" not in keys or "mentions" not in keys:
            return None
        if any(keys[k] != k for k in ("type", "mentions")):
            kinds.add(CASE)
        name, mentions = obj[keys["type"]], obj[keys["mentions"]]
        resolved = self.v.relaxed_aspect(name) if isinstance(name, str) else None
        if resolved is None:
            return None
        span_type, k1 = resolved
        kinds |= k1
        if isinstance(mentions, str):
            if self._empty_value(mentions, kinds):
                return (span_type, []), kinds, tail
            kinds.add(JSONFIX)
            mentions = [mentions]
        if not isinstance(mentions, list) or not all(isinstance(m, str) for m in mentions):
            return None
        cleaned = self._mentions(mentions, kinds)
        if not cleaned and self.s.unmentioned is Unmentioned.OU:
            kinds.add(SYN)
        return (span_type, cleaned), kinds, tail

    def _relaxed_natural(self, body: str, scan: _Scan):
        s = _collapse(body.replace("\r", " ").replace("\n", " "))
        if s != body:
            scan.kinds.add(WS)
        s2 = _ascii_punct(s)
        if s2 != s:
            scan.kinds.add(PUNCT)
        pos = 0
        for m in self.nat_relaxed.finditer(s2):
            gap = s2[pos:m.start()].strip()
            if gap:
                scan.residue.append(gap)
            pos = m.end()
            kinds = set()
            if m.group("t") is not None:
                resolved = self.v.relaxed_aspect(m.group("t"))
                quoted = re.findall(r'"([^"]*)"', m.group("ms"))
                if not quoted:
                    kinds.add(PUNCT)
                    quoted = [p.strip() for p in m.group("ms").split(",")]
                mentions = self._mentions(quoted, kinds)
                end = m.group("end")
            else:
                resolved = self.v.relaxed_aspect(m.group("t2"))
                mentions = []
                end = m.group("end2")
                if self.s.unmentioned is Unmentioned.OU:
                    kinds.add(SYN)
            if resolved is None:
                scan.residue.append(m.group(0))
                continue
            if not end:
                kinds.add(PUNCT)
            span_type, k1 = resolved
            scan.found.append((span_type, mentions))
            scan.kinds |= kinds | k1
        tail = s2[pos:].strip()
        if tail:
            if scan.found:
                scan.trailing.append(tail)
                scan.kinds.add(TRAIL)
            elif not (self.s.unmentioned is Unmentioned.OU and tail.lower() == EMPTY_OU_RESPONSE):
                scan.residue.append(tail)


# ---------------------------------------------------------------- public API

def _schema_key(schema: AspectSchema) -> str:
    return json.dumps(schema.to_dict(), sort_keys=True, ensure_ascii=False)


class _SchemaHandle:
    # AspectSchema holds dicts and is not hashable; wrap it for the cache
    __slots__ = ("schema", "key")

    def __init__(self, schema: AspectSchema):
        self.schema = schema
        self.key = _schema_key(schema)

    def __hash__(self):
        return hash(self.key)

    def __eq__(self, other):
        return isinstance(other, _SchemaHandle) and other.key == self.key


@lru_cache(maxsize=256)
def _cached_parser(strategy: DesignStrategy, handle: _SchemaHandle):
    if handle.schema.kind == "span":
        return _SpanParser(strategy, handle.schema)
    return _MasaParser(strategy, handle.schema)


def parse_output(text: str, strategy: DesignStrategy, schema: AspectSchema) -> ParseOutcome:
    """Parse one raw model output. Never raises on malformed text."""
    if not isinstance(text, str):
        text = "" if text is None else str(text)
    return _cached_parser(strategy, _SchemaHandle(schema)).parse(text)


def batch_parse(
    texts: Sequence[tuple[str, str]], strategy: DesignStrategy, schema: AspectSchema
) -> list[tuple[str, ParseOutcome]]:
    seen = set()
    for rid, _ in texts:
        if rid in seen:
            raise ParseError(f"duplicate prediction id {rid!r}")
        seen.add(rid)
    return [(rid, parse_output(text, strategy, schema)) for rid, text in texts]


def load_predictions(path) -> list[tuple[str, str]]:
    """Read ``{"id", "output"}`` JSON-lines.

    Rendered sample files (key ``response``) are accepted too, which lets
    gold responses be fed back as predictions.
    """
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                out.append((str(d["id"]), d["output"] if "output" in d else d["response"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: malformed prediction line ({exc})") from None
    return out


def save_outcomes(outcomes: Iterable[tuple[str, ParseOutcome]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rid, outcome in outcomes:
            fh.write(json.dumps({"id": rid, **outcome.to_dict()}, ensure_ascii=False) + "\n")


def load_outcomes(path) -> list[tuple[str, ParseOutcome]]:
    with open(path, encoding="utf-8") as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    return [(str(r["id"]), ParseOutcome.from_dict(r)) for r in rows]
