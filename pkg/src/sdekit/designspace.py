"""The six sample-design axes, named presets and one-option ablation grids."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, fields, replace
from enum import Enum
from typing import Iterator


class DesignError(ValueError):
    pass


class Placement(str, Enum):
    INST_FIRST = "inst_first"
    INST_LAST = "inst_last"
    NO_INST = "no_inst"


class InputModeling(str, Enum):
    MI = "mi"
    NO_MI = "no_mi"


class OutputFormat(str, Enum):
    NATURAL = "natural"
    LINES = "lines"
    JSON = "json"
    # Lines whose value side is a bracketed list; a flavour of LINES used by
    # the heuristic baseline, not part of the enumerated design space.
    LINES_OF_LIST = "lines_of_list"

    @property
    def is_lines(self) -> bool:
        return self in (OutputFormat.LINES, OutputFormat.LINES_OF_LIST)


CORE_FORMATS = (OutputFormat.NATURAL, OutputFormat.LINES, OutputFormat.JSON)


class Unmentioned(str, Enum):
    PU = "pu"
    OU = "ou"


class LabelStyle(str, Enum):
    TXT = "txt"
    NUM = "num"


class Reasoning(str, Enum):
    NO_COT = "no_cot"
    COT = "cot"
    RCOT = "rcot"


@dataclass(frozen=True)
class DesignStrategy:
    placement: Placement
    input_modeling: InputModeling
    output_format: OutputFormat
    unmentioned: Unmentioned
    label_style: LabelStyle
    reasoning: Reasoning

    def __post_init__(self):
        # accept raw strings for convenience
        for f in fields(self):
            value = getattr(self, f.name)
            enum_cls = _AXES[f.name]
            if not isinstance(value, enum_cls):
                try:
                    object.__setattr__(self, f.name, enum_cls(value))
                except ValueError:
                    choices = ", ".join(m.value for m in enum_cls)
                    raise DesignError(f"bad {f.name} value {value!r}; expected one of {choices}") from None

    def to_string(self) -> str:
        """Compact form, e.g. ``inst_first/no_mi/lines/pu/txt/no_cot``."""
        return "/".join(getattr(self, f.name).value for f in fields(self))

    __str__ = to_string

    @classmethod
    def from_string(cls, text: str) -> "DesignStrategy":
        """Parse the compact form; preset names are accepted as well."""
        text = text.strip()
        if text in PRESETS:
            return PRESETS[text]
        parts = [p.strip().lower().replace("-", "_") for p in text.split("/")]
        if len(parts) != 6:
            raise DesignError(
                f"strategy {text!r} must have 6 '/'-separated fields "
                "(placement/modeling/format/unmentioned/labelstyle/reasoning) or be one of "
                + ", ".join(PRESETS)
            )
        return cls(*parts)

    def axes(self) -> tuple:
        return tuple(getattr(self, f.name) for f in fields(self))


_AXES = {
    "placement": Placement,
    "input_modeling": InputModeling,
    "output_format": OutputFormat,
    "unmentioned": Unmentioned,
    "label_style": LabelStyle,
    "reasoning": Reasoning,
}


def hamming(a: DesignStrategy, b: DesignStrategy) -> int:
    """Number of axes on which two strategies differ."""
    return sum(x != y for x, y in zip(a.axes(), b.axes()))


PRESETS: dict[str, DesignStrategy] = {
    "ES-SDE": DesignStrategy(
        Placement.INST_FIRST, InputModeling.NO_MI, OutputFormat.LINES,
        Unmentioned.PU, LabelStyle.TXT, Reasoning.NO_COT,
    ),
    "EW-SDE": DesignStrategy(
        Placement.INST_LAST, InputModeling.NO_MI, OutputFormat.NATURAL,
        Unmentioned.OU, LabelStyle.TXT, Reasoning.NO_COT,
    ),
    "Heuristic": DesignStrategy(
        Placement.INST_FIRST, InputModeling.NO_MI, OutputFormat.LINES_OF_LIST,
        Unmentioned.OU, LabelStyle.TXT, Reasoning.NO_COT,
    ),
}


def preset(name: str) -> DesignStrategy:
    try:
        return PRESETS[name]
    except KeyError:
        raise DesignError(f"unknown preset {name!r}; known presets: {', '.join(PRESETS)}") from None


def enumerate_strategies() -> Iterator[DesignStrategy]:
    """All 3*2*3*2*2*3 = 216 strategies of the core design space."""
    for combo in itertools.product(Placement, InputModeling, CORE_FORMATS, Unmentioned, LabelStyle, Reasoning):
        yield DesignStrategy(*combo)


# Row names used in the option-ablation tables.
OPTION_LABELS = {
    Placement.INST_FIRST: "Inst-first",
    Placement.INST_LAST: "Inst-last",
    Placement.NO_INST: "No-inst",
    InputModeling.MI: "MI",
    InputModeling.NO_MI: "No-MI",
    OutputFormat.NATURAL: "Natural",
    OutputFormat.LINES: "Lines",
    OutputFormat.JSON: "JSON",
    OutputFormat.LINES_OF_LIST: "Lines-of-list",
    Unmentioned.PU: "PU",
    Unmentioned.OU: "OU",
    LabelStyle.TXT: "TxtLabel",
    LabelStyle.NUM: "NumLabel",
    Reasoning.NO_COT: "No-CoT",
    Reasoning.COT: "CoT",
    Reasoning.RCOT: "R-CoT",
}

GROUPS = ("Input", "Output", "Reasoning")


@dataclass(frozen=True)
class AblationGrid:
    group: str
    baseline: DesignStrategy
    variants: tuple[tuple[str, DesignStrategy], ...]

    def runs(self) -> list[tuple[str, DesignStrategy]]:
        """Baseline first (labelled by its group options), then the variants."""
        return [(baseline_label(self.baseline, self.group), self.baseline), *self.variants]


def baseline_label(strategy: DesignStrategy, group: str) -> str:
    if group == "Input":
        parts = (strategy.placement, strategy.input_modeling)
    elif group == "Output":
        parts = (strategy.output_format, strategy.label_style, strategy.unmentioned)
    elif group == "Reasoning":
        parts = (strategy.reasoning,)
    else:
        raise DesignError(f"unknown group {group!r}; expected one of {', '.join(GROUPS)}")
    return ", ".join(OPTION_LABELS[p] for p in parts)


def _flip(axis_value, options):
    return [o for o in options if o != axis_value]


def ablation_grid(baseline: DesignStrategy, group: str) -> AblationGrid:
    """Single-option variants of ``baseline`` for one option family."""
    edits: list[tuple[str, object]] = []
    if group == "Input":
        edits += [("placement", p) for p in _flip(baseline.placement, Placement)]
        edits += [("input_modeling", m) for m in _flip(baseline.input_modeling, InputModeling)]
    elif group == "Output":
        edits += [("output_format", f) for f in _flip(baseline.output_format, CORE_FORMATS)]
        edits += [("label_style", s) for s in _flip(baseline.label_style, LabelStyle)]
        edits += [("unmentioned", u) for u in _flip(baseline.unmentioned, Unmentioned)]
    elif group == "Reasoning":
        edits += [("reasoning", r) for r in _flip(baseline.reasoning, Reasoning)]
    else:
        raise DesignError(f"unknown group {group!r}; expected one of {', '.join(GROUPS)}")
    variants = tuple((OPTION_LABELS[value], replace(baseline, **{axis: value})) for axis, value in edits)
    return AblationGrid(group=group, baseline=baseline, variants=variants)


def validate_strategy(strategy: DesignStrategy, has_rationales: bool) -> list[str]:
    """Check a strategy against what a corpus can support.

    Only the reasoning options carry a data requirement: CoT and R-CoT need a
    rationale per mentioned aspect.
    """
    if strategy.reasoning is not Reasoning.NO_COT and not has_rationales:
        return [f"reasoning requires rationales ({OPTION_LABELS[strategy.reasoning]} selected)"]
    return []
