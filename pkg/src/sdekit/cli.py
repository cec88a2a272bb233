"""Command-line entry point: ``sdekit <command> ...`` (or ``python3 -m sdekit``).

Exit status is 0 on success, 1 when input fails validation and 2 when a file
cannot be read or written.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .designspace import GROUPS, DesignStrategy, ablation_grid
from .harness import (
    RunManifest,
    emit_run,
    format_summary,
    grid_manifests,
    load_manifest,
    load_report,
    save_manifest,
    score_run,
    summarize_reports,
)
from .parser import batch_parse, load_predictions, save_outcomes
from .renderer import render_corpus, save_samples
from .schema import (
    CorpusError,
    builtin_distribution,
    builtin_schema,
    generate_fixture_corpus,
    load_corpus,
    load_distribution,
    load_schema,
    save_corpus,
    save_schema,
)


def resolve_schema(spec: str):
    """A builtin task id (``D1``, ``D2``) or a path to a schema JSON file."""
    if Path(spec).is_file():
        return load_schema(spec)
    try:
        return builtin_schema(spec)
    except CorpusError:
        raise CorpusError(f"{spec!r} is neither a schema file nor a builtin task id") from None


def resolve_distribution(spec: str | None, schema):
    """A path, a builtin split name (train500, train1000, test), or None for train500."""
    if spec and Path(spec).is_file():
        return load_distribution(spec)
    return builtin_distribution(schema.task_id, spec or "train500")


def _write_json(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, ensure_ascii=False) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_fixtures(args) -> int:
    schema = resolve_schema(args.schema)
    dist = resolve_distribution(args.dist, schema)
    records = generate_fixture_corpus(schema, dist, args.n, args.seed, id_prefix=args.id_prefix)
    save_corpus(records, args.out)
    if args.schema_out:
        save_schema(schema, args.schema_out)
    print(f"wrote {len(records)} records to {args.out}", file=sys.stderr)
    return 0


def cmd_render(args) -> int:
    schema = resolve_schema(args.schema)
    strategy = DesignStrategy.from_string(args.strategy)
    records = load_corpus(args.corpus, kind=schema.kind, schema=schema)
    if args.limit is not None:
        records = records[: args.limit]
    samples = render_corpus(records, strategy, schema, variant=args.variant)
    save_samples(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}", file=sys.stderr)
    return 0


def cmd_grid(args) -> int:
    baseline = DesignStrategy.from_string(args.baseline)
    grid = ablation_grid(baseline, args.group)
    manifests = grid_manifests(grid, args.task, args.train_size, instruction_variant=args.variant)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = test = schema = None
    if args.corpus:
        schema = resolve_schema(args.schema or args.task)
        corpus = load_corpus(args.corpus, kind=schema.kind, schema=schema)
        test = load_corpus(args.test, kind=schema.kind, schema=schema) if args.test else None
    for m in manifests:
        if corpus is not None:
            emit_run(m, corpus, schema, out / m.run_id, test_corpus=test)
        else:
            save_manifest(m, out / f"{m.run_id}.json")
    for m in manifests:
        print(f"{m.run_id}\t{m.label}\t{m.strategy}")
    return 0


def cmd_parse(args) -> int:
    schema = resolve_schema(args.schema)
    strategy = DesignStrategy.from_string(args.strategy)
    outcomes = batch_parse(load_predictions(args.predictions), strategy, schema)
    save_outcomes(outcomes, args.out)
    errors = sum(o.format_error for _, o in outcomes)
    print(f"parsed {len(outcomes)} outputs, {errors} with format errors", file=sys.stderr)
    return 0


def cmd_score(args) -> int:
    if args.manifest:
        manifest = load_manifest(args.manifest)
        if args.strategy:
            manifest = replace(manifest, strategy=DesignStrategy.from_string(args.strategy))
    elif args.strategy:
        manifest = RunManifest(
            run_id=args.run_id, task_id=args.schema or "D1", strategy=DesignStrategy.from_string(args.strategy), train_size=1
        )
    else:
        raise CorpusError("score needs --manifest or --strategy")
    schema = resolve_schema(args.schema or manifest.task_id)
    gold = load_corpus(args.gold, kind=schema.kind, schema=schema)
    report = score_run(manifest, gold, load_predictions(args.predictions), schema)
    _write_json(report.to_dict(), args.out)
    return 0


def cmd_report(args) -> int:
    paths = sorted(Path(args.reports).glob("*.json"))
    if not paths:
        raise CorpusError(f"no report files in {args.reports}")
    summary = summarize_reports([load_report(p) for p in paths], baseline=args.baseline)
    table = format_summary(summary)
    if args.json_out:
        _write_json(summary, args.json_out)
    if args.text_out:
        Path(args.text_out).write_text(table, encoding="utf-8")
    if not args.json_out and not args.text_out:
        sys.stdout.write(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdekit", description="Render, parse and score fine-tuning sample designs.")
    sub = p.add_subparsers(dest="command", required=True)
    strategy_help = "compact strategy string placement/modeling/format/unmentioned/labelstyle/reasoning, or a preset name"

    f = sub.add_parser("fixtures", help="generate a synthetic labelled corpus")
    f.add_argument("--schema", default="D1", help="builtin task id or schema JSON path (default D1)")
    f.add_argument("--dist", help="distribution JSON path or builtin split (train500, train1000, test)")
    f.add_argument("--n", type=int, default=1000)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--id-prefix", default="r")
    f.add_argument("--out", required=True)
    f.add_argument("--schema-out", help="also write the schema JSON here")
    f.set_defaults(func=cmd_fixtures)

    r = sub.add_parser("render", help="render a corpus into prompt/response samples")
    r.add_argument("--corpus", required=True)
    r.add_argument("--schema", default="D1")
    r.add_argument("--strategy", required=True, help=strategy_help)
    r.add_argument("--variant", type=int, default=0, help="0-based instruction variant")
    r.add_argument("--limit", type=int)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    g = sub.add_parser("grid", help="one-option ablation manifests around a baseline")
    g.add_argument("--baseline", required=True, help=strategy_help)
    g.add_argument("--group", required=True, choices=GROUPS)
    g.add_argument("--task", default="D1")
    g.add_argument("--train-size", type=int, nargs="+", default=[500, 1000])
    g.add_argument("--variant", type=int, default=0)
    g.add_argument("--corpus", help="also emit datasets from this training corpus")
    g.add_argument("--test", help="test split for eval prompts")
    g.add_argument("--schema")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_grid)

    pa = sub.add_parser("parse", help="parse raw model outputs")
    pa.add_argument("--predictions", required=True, help='JSON-lines with "id" and "output" (or "response")')
    pa.add_argument("--strategy", required=True, help=strategy_help)
    pa.add_argument("--schema", default="D1")
    pa.add_argument("--out", required=True)
    pa.set_defaults(func=cmd_parse)

    s = sub.add_parser("score", help="score predictions against gold")
    s.add_argument("--manifest")
    s.add_argument("--strategy", help=strategy_help)
    s.add_argument("--run-id", default="run")
    s.add_argument("--schema")
    s.add_argument("--gold", required=True)
    s.add_argument("--predictions", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_score)

    rp = sub.add_parser("report", help="baseline deltas and rankings over a directory of reports")
    rp.add_argument("--reports", required=True)
    rp.add_argument("--baseline", help="baseline option label (default: taken from the reports)")
    rp.add_argument("--json-out")
    rp.add_argument("--text-out")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # every validation error in the package derives from ValueError
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
