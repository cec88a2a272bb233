import pytest

from sdekit.designspace import (
    DesignError,
    DesignStrategy,
    OutputFormat,
    PRESETS,
    Reasoning,
    ablation_grid,
    baseline_label,
    enumerate_strategies,
    hamming,
    preset,
    validate_strategy,
)


def test_space_has_216_distinct_strategies():
    strategies = list(enumerate_strategies())
    assert len(strategies) == 216 == len(set(strategies))
    assert all(s.output_format is not OutputFormat.LINES_OF_LIST for s in strategies)


def test_compact_string_roundtrip():
    for s in enumerate_strategies():
        assert DesignStrategy.from_string(str(s)) == s


def test_presets():
    assert str(preset("ES-SDE")) == "inst_first/no_mi/lines/pu/txt/no_cot"
    assert str(preset("EW-SDE")) == "inst_last/no_mi/natural/ou/txt/no_cot"
    assert PRESETS["Heuristic"].output_format is OutputFormat.LINES_OF_LIST
    assert DesignStrategy.from_string("ES-SDE") == preset("ES-SDE")
    with pytest.raises(DesignError):
        preset("nope")


@pytest.mark.parametrize("text", ["a/b", "inst_first/no_mi/lines/pu/txt/maybe", ""])
def test_bad_strings_rejected(text):
    with pytest.raises(DesignError):
        DesignStrategy.from_string(text)


def test_hyphen_and_case_tolerated():
    assert DesignStrategy.from_string("Inst-First/No-MI/lines/PU/txt/No-CoT") == preset("ES-SDE")


def test_hamming():
    es, ew = preset("ES-SDE"), preset("EW-SDE")
    assert hamming(es, es) == 0
    assert hamming(es, ew) == 3


@pytest.mark.parametrize("group,count", [("Input", 3), ("Output", 4), ("Reasoning", 2)])
def test_grid_sizes_from_every_baseline(group, count):
    for base in enumerate_strategies():
        grid = ablation_grid(base, group)
        assert len(grid.variants) == count
        assert all(hamming(base, v) == 1 for _, v in grid.variants)
        assert len({v for _, v in grid.variants}) == count


def test_grid_labels():
    grid = ablation_grid(DesignStrategy.from_string("inst_last/no_mi/natural/pu/txt/no_cot"), "Output")
    assert [label for label, _ in grid.runs()] == ["Natural, TxtLabel, PU", "Lines", "JSON", "NumLabel", "OU"]
    with pytest.raises(DesignError):
        baseline_label(grid.baseline, "Style")


def test_reasoning_needs_rationales():
    cot = DesignStrategy.from_string("inst_first/no_mi/lines/pu/txt/cot")
    assert validate_strategy(cot, has_rationales=False)
    assert validate_strategy(cot, has_rationales=True) == []
    assert cot.reasoning is Reasoning.COT
