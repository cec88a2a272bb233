"""Experiment plumbing: run manifests, dataset emission, scoring, baseline
deltas and average rankings.

The toolkit never trains or decodes; a run is a manifest plus the files a
trainer consumes, and scoring starts from a file of raw model outputs.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .designspace import AblationGrid, DesignStrategy, validate_strategy
from .metrics import (
    KappaResult,
    MatchScore,
    MetricError,
    build_confusion,
    format_error_rate,
    slot_accuracy,
    span_f1,
    weighted_kappa,
)
from .parser import batch_parse
from .renderer import PromptTemplate, default_template, render_corpus, render_prompt, save_samples
from .schema import AspectSchema, TaskRecord, _data


class HarnessError(ValueError):
    pass


DEFAULT_TRAINER = {"lr": 1e-4, "batch_size": 4, "lora_rank": 8, "lora_alpha": 32, "lora_dropout": 0.1}


@dataclass(frozen=True)
class RunManifest:
    run_id: str
    task_id: str
    strategy: DesignStrategy
    train_size: int
    instruction_variant: int = 0
    decode_seed: int | None = None
    trainer_metadata: Mapping = field(default_factory=lambda: dict(DEFAULT_TRAINER))
    # where the run sits in a report: option label, cell name, and the label of its baseline
    label: str | None = None
    cell: str | None = None
    baseline: str | None = None

    def __post_init__(self):
        if not self.run_id or re.search(r"[\\/]", self.run_id):
            raise HarnessError(f"run_id {self.run_id!r} must be non-empty and contain no path separators")
        if self.train_size < 1:
            raise HarnessError("train_size must be positive")

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "task_id": self.task_id,
            "strategy": self.strategy.to_string(),
            "train_size": self.train_size,
            "instruction_variant": self.instruction_variant,
            "decode_seed": self.decode_seed,
            "trainer_metadata": dict(self.trainer_metadata),
            "label": self.label,
            "cell": self.cell,
            "baseline": self.baseline,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunManifest":
        try:
            return cls(
                run_id=d["run_id"],
                task_id=d["task_id"],
                strategy=DesignStrategy.from_string(d["strategy"]),
                train_size=int(d["train_size"]),
                instruction_variant=int(d.get("instruction_variant", 0)),
                decode_seed=d.get("decode_seed"),
                trainer_metadata=dict(d.get("trainer_metadata", DEFAULT_TRAINER)),
                label=d.get("label"),
                cell=d.get("cell"),
                baseline=d.get("baseline"),
            )
        except KeyError as exc:
            raise HarnessError(f"manifest missing field {exc.args[0]!r}") from None


def save_manifest(manifest: RunManifest, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest.to_dict(), fh, indent=2)
        fh.write("\n")


def load_manifest(path: str | Path) -> RunManifest:
    with open(path, encoding="utf-8") as fh:
        try:
            return RunManifest.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise HarnessError(f"{path}: {exc}") from None


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "-", text).strip("-").lower()


def grid_manifests(
    grid: AblationGrid, task_id: str, train_sizes: Sequence[int] = (500, 1000), **extra
) -> list[RunManifest]:
    """One manifest per (train size, option) of an ablation grid."""
    runs = grid.runs()
    base_label = runs[0][0]
    out = []
    for size in train_sizes:
        for label, strategy in runs:
            out.append(RunManifest(
                run_id=f"{task_id}-{size}-{_slug(grid.group)}-{_slug(label)}",
                task_id=task_id,
                strategy=strategy,
                train_size=size,
                label=label,
                cell=f"{task_id}/{size}",
                baseline=base_label,
                **extra,
            ))
    return out


def emit_run(
    manifest: RunManifest,
    corpus: Sequence[TaskRecord],
    schema: AspectSchema,
    out_dir: str | Path,
    template: PromptTemplate | None = None,
    test_corpus: Sequence[TaskRecord] | None = None,
) -> dict[str, Path]:
    """Write ``train.jsonl``, ``eval.jsonl`` and ``manifest.json`` into ``out_dir``.

    Training samples are the first ``train_size`` records. Evaluation prompts
    come from ``test_corpus``, or from the records after the training slice
    when no test split is given.
    """
    if len(corpus) < manifest.train_size:
        raise HarnessError(f"run {manifest.run_id}: corpus has {len(corpus)} records, train_size is {manifest.train_size}")
    has_rationales = all(getattr(r, "rationales", None) is not None for r in corpus)
    problems = validate_strategy(manifest.strategy, has_rationales)
    if problems:
        raise HarnessError(f"run {manifest.run_id}: " + "; ".join(problems))
    template = template or default_template(schema.kind)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train = render_corpus(corpus[: manifest.train_size], manifest.strategy, schema, template, manifest.instruction_variant)
    test = list(test_corpus) if test_corpus is not None else list(corpus[manifest.train_size:])
    paths = {"train": out / "train.jsonl", "eval": out / "eval.jsonl", "manifest": out / "manifest.json"}
    save_samples(train, paths["train"])
    with open(paths["eval"], "w", encoding="utf-8", newline="\n") as fh:
        for record in test:
            prompt = render_prompt(record, manifest.strategy, schema, template, manifest.instruction_variant)
            fh.write(json.dumps({"id": record.id, "prompt": prompt}, ensure_ascii=False) + "\n")
    save_manifest(manifest, paths["manifest"])
    return paths


# ---------------------------------------------------------------- scoring

@dataclass(frozen=True)
class EvalReport:
    run_id: str
    task_kind: str
    error_rate: float
    n: int
    kappa: KappaResult | None = None
    per_aspect_kappa: Mapping[str, float | None] = field(default_factory=dict)
    confusion: list | None = None
    accuracy: float | None = None
    f1_hard: MatchScore | None = None
    f1_soft: MatchScore | None = None
    label: str | None = None
    cell: str | None = None
    baseline: str | None = None

    @property
    def headline(self) -> float:
        """Kappa for sentiment runs, soft F1 for span runs."""
        if self.task_kind == "span":
            return self.f1_soft.f1
        return self.kappa.kappa

    def to_dict(self) -> dict:
        d = {"run_id": self.run_id, "task_kind": self.task_kind, "n": self.n, "error_rate": self.error_rate,
             "headline": self.headline}
        if self.kappa is not None:
            d["kappa"] = self.kappa.to_dict()
            d["per_aspect_kappa"] = dict(self.per_aspect_kappa)
            d["confusion"] = self.confusion
            d["accuracy"] = self.accuracy
        if self.f1_hard is not None:
            d["f1_hard"] = self.f1_hard.to_dict()
            d["f1_soft"] = self.f1_soft.to_dict()
        d.update(label=self.label, cell=self.cell, baseline=self.baseline)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalReport":
        def score(x):
            return None if x is None else MatchScore(x["mode"], x["tp"], x["fp"], x["fn"])

        k = d.get("kappa")
        return cls(
            run_id=d["run_id"],
            task_kind=d["task_kind"],
            error_rate=float(d["error_rate"]),
            n=int(d["n"]),
            kappa=None if k is None else KappaResult(k["po"], k["pe"], k["kappa"]),
            per_aspect_kappa=d.get("per_aspect_kappa", {}),
            confusion=d.get("confusion"),
            accuracy=d.get("accuracy"),
            f1_hard=score(d.get("f1_hard")),
            f1_soft=score(d.get("f1_soft")),
            label=d.get("label"),
            cell=d.get("cell"),
            baseline=d.get("baseline"),
        )


def load_report(path: str | Path) -> EvalReport:
    with open(path, encoding="utf-8") as fh:
        try:
            return EvalReport.from_dict(json.load(fh))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise HarnessError(f"{path}: not an evaluation report ({exc})") from None


def score_run(
    manifest: RunManifest,
    gold: Sequence[TaskRecord],
    predictions: Sequence[tuple[str, str]],
    schema: AspectSchema,
) -> EvalReport:
    """Parse raw outputs under the run's strategy and score them against gold.

    ``gold`` is the evaluated split: every gold id needs a prediction and
    every prediction id must be a gold id.
    """
    gold_ids = {r.id for r in gold}
    pred_ids = [rid for rid, _ in predictions]
    missing = sorted(gold_ids - set(pred_ids))
    unknown = sorted(set(pred_ids) - gold_ids)
    if missing:
        raise HarnessError(f"run {manifest.run_id}: no prediction for id(s) {', '.join(missing[:20])}"
                           + (" ..." if len(missing) > 20 else ""))
    if unknown:
        raise HarnessError(f"run {manifest.run_id}: prediction id(s) not in gold: {', '.join(unknown[:20])}")
    outcomes = batch_parse(predictions, manifest.strategy, schema)
    common = dict(run_id=manifest.run_id, error_rate=format_error_rate(outcomes), n=len(outcomes),
                  label=manifest.label, cell=manifest.cell, baseline=manifest.baseline)
    if schema.kind == "span":
        return EvalReport(task_kind="span", f1_hard=span_f1(gold, outcomes, "hard"),
                          f1_soft=span_f1(gold, outcomes, "soft"), **common)
    pooled, per_aspect = build_confusion(gold, outcomes, schema)
    per_kappa = {}
    for aspect, conf in per_aspect.items():
        try:
            per_kappa[aspect] = weighted_kappa(conf).kappa
        except MetricError:
            per_kappa[aspect] = None  # one label only: chance agreement is certain
    return EvalReport(
        task_kind="masa",
        kappa=weighted_kappa(pooled),
        per_aspect_kappa=per_kappa,
        confusion=pooled.to_list(),
        accuracy=slot_accuracy(gold, outcomes, schema),
        **common,
    )


# ---------------------------------------------------------------- comparison

def _metric(x) -> float:
    return x.headline if isinstance(x, EvalReport) else float(x)


def compare_to_baseline(reports: Mapping[str, EvalReport | float], baseline: str) -> dict[str, float]:
    """Headline-metric difference of every label from the baseline label."""
    if baseline not in reports:
        raise HarnessError(f"baseline {baseline!r} not among {sorted(reports)}")
    base = _metric(reports[baseline])
    return {label: (0.0 if label == baseline else _metric(r) - base) for label, r in reports.items()}


@dataclass(frozen=True)
class RankingSummary:
    options: tuple[str, ...]
    cells: tuple[str, ...]
    ranks: np.ndarray  # options x cells
    mean_rank: Mapping[str, float]

    def ordered(self) -> list[tuple[str, float]]:
        return sorted(self.mean_rank.items(), key=lambda kv: (kv[1], self.options.index(kv[0])))

    def to_dict(self) -> dict:
        return {
            "options": list(self.options),
            "cells": list(self.cells),
            "ranks": self.ranks.tolist(),
            "mean_rank": dict(self.mean_rank),
        }


def average_rankings(
    scores: Mapping[str, Sequence[float]], cells: Sequence[str] | None = None
) -> RankingSummary:
    """Rank options within each cell (1 = best score, ties share the average
    rank) and average the ranks over cells."""
    options = tuple(scores)
    if not options:
        raise HarnessError("no options to rank")
    lengths = {len(v) for v in scores.values()}
    if len(lengths) != 1:
        raise HarnessError(f"ragged score grid: option lengths {sorted(lengths)}")
    n_cells = lengths.pop()
    if n_cells == 0:
        raise HarnessError("score grid has no cells")
    grid = np.array([[np.nan if v is None else float(v) for v in scores[o]] for o in options])
    if np.isnan(grid).any():
        holes = [(options[i], j) for i, j in zip(*np.where(np.isnan(grid)))]
        raise HarnessError(f"score grid has missing values at {holes[:5]}")
    cells = tuple(cells) if cells is not None else tuple(f"cell{j}" for j in range(n_cells))
    if len(cells) != n_cells:
        raise HarnessError("cell names do not match grid width")
    from scipy.stats import rankdata  # slow import; only ranking needs it

    ranks = rankdata(-grid, axis=0, method="average")
    mean = ranks.mean(axis=1)
    return RankingSummary(options, cells, ranks, {o: float(m) for o, m in zip(options, mean)})


# ---------------------------------------------------------------- published ablation tables

TABLE_COLUMNS = ("D1->D1", "D2->D2", "D1->D2", "D2->D1")
ID_COLUMNS = ("D1->D1", "D2->D2")
OOD_COLUMNS = ("D1->D2", "D2->D1")


def ablation_tables() -> dict:
    """Published per-model ablation results, used to test report arithmetic.

    Layout: ``models[model][size][group] -> [{"option", "kappa", "wrong"}]``,
    columns as in ``TABLE_COLUMNS``; the first option of each group is its
    baseline and ``None`` marks a configuration that was not run.
    """
    return _data("ablation_tables.json")


def table_kappas(tables: Mapping, model: str, size: int, group: str) -> dict[str, list[float | None]]:
    try:
        rows = tables["models"][model][str(size)][group]
    except KeyError:
        raise HarnessError(f"no table entry for {model}/{size}/{group}") from None
    return {r["option"]: r["kappa"] for r in rows}


def scope_average(kappas: Sequence[float | None], scope: str = "ID") -> float:
    cols = ID_COLUMNS if scope == "ID" else OOD_COLUMNS
    values = [kappas[TABLE_COLUMNS.index(c)] for c in cols]
    if any(v is None for v in values):
        return math.nan
    return sum(values) / len(values)


def table_delta(
    tables: Mapping, model: str, group: str, option: str, sizes: Sequence[int] = (500, 1000), scope: str = "ID"
) -> float:
    """Average over sizes and tasks of ``option - baseline`` for one model,
    every (size, task) cell weighted equally."""
    diffs = []
    cols = ID_COLUMNS if scope == "ID" else OOD_COLUMNS
    for size in sizes:
        kappas = table_kappas(tables, model, size, group)
        base = next(iter(kappas.values()))
        if option not in kappas:
            raise HarnessError(f"option {option!r} not in {model}/{size}/{group}")
        for c in cols:
            i = TABLE_COLUMNS.index(c)
            if kappas[option][i] is None or base[i] is None:
                continue
            diffs.append(kappas[option][i] - base[i])
    if not diffs:
        raise HarnessError(f"no comparable cells for {model}/{group}/{option}")
    return sum(diffs) / len(diffs)


def table_ranking_grid(
    tables: Mapping,
    group: str,
    models: Sequence[str] | None = None,
    sizes: Sequence[int] = (500, 1000),
    scope: str = "ID",
) -> tuple[dict[str, list[float]], list[str]]:
    """Options x cells score grid, one cell per (model, size, task column)."""
    models = list(models) if models is not None else list(tables["models"])
    cols = ID_COLUMNS if scope == "ID" else OOD_COLUMNS
    grid: dict[str, list[float]] = {}
    cells = []
    for model in models:
        for size in sizes:
            kappas = table_kappas(tables, model, size, group)
            for c in cols:
                i = TABLE_COLUMNS.index(c)
                cells.append(f"{model}/{size}/{c}")
                for option, values in kappas.items():
                    grid.setdefault(option, []).append(values[i])
    return grid, cells


# ---------------------------------------------------------------- report tables

def summarize_reports(reports: Sequence[EvalReport], baseline: str | None = None) -> dict:
    """Per-cell deltas against the baseline plus average rankings over cells."""
    if not reports:
        raise HarnessError("no reports to summarize")
    by_cell: dict[str, dict[str, EvalReport]] = {}
    for r in reports:
        label = r.label or r.run_id
        cell = r.cell or "all"
        if label in by_cell.setdefault(cell, {}):
            raise HarnessError(f"two reports for option {label!r} in cell {cell!r}")
        by_cell[cell][label] = r
    if baseline is None:
        named = {r.baseline for r in reports if r.baseline}
        if len(named) != 1:
            raise HarnessError("cannot infer the baseline label; pass one explicitly")
        baseline = named.pop()
    cells = sorted(by_cell)
    labels = list(dict.fromkeys(r.label or r.run_id for r in reports))
    deltas = {cell: compare_to_baseline(by_cell[cell], baseline) for cell in cells}
    complete = [c for c in cells if all(l in by_cell[c] for l in labels)]
    scores = {l: [by_cell[c][l].headline for c in complete] for l in labels}
    rankings = average_rankings(scores, complete) if complete else None
    mean_delta = {
        l: float(np.mean([deltas[c][l] for c in cells if l in deltas[c]])) for l in labels
    }
    return {
        "baseline": baseline,
        "cells": cells,
        "headline": {c: {l: r.headline for l, r in by_cell[c].items()} for c in cells},
        "delta": deltas,
        "mean_delta": mean_delta,
        "rankings": rankings.to_dict() if rankings else None,
    }


def format_summary(summary: Mapping) -> str:
    """Aligned plain-text table: one row per option, one column per cell."""
    cells = summary["cells"]
    labels = list(summary["mean_delta"])
    ranks = summary["rankings"]["mean_rank"] if summary["rankings"] else {}
    header = ["option", *cells, "mean delta", "mean rank"]
    rows = []
    for l in labels:
        row = [l + (" (baseline)" if l == summary["baseline"] else "")]
        for c in cells:
            h = summary["headline"][c].get(l)
            d = summary["delta"][c].get(l)
            row.append("-" if h is None else f"{h:.4f} ({d:+.4f})")
        row.append(f"{summary['mean_delta'][l]:+.4f}")
        row.append(f"{ranks[l]:.2f}" if l in ranks else "-")
        rows.append(row)
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(x).ljust(w) for x, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(str(x).ljust(w) for x, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"
