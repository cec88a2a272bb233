"""Recompute baseline deltas and average rankings from the bundled published
ablation results.

    python3 demos/published_rankings.py
"""

from sdekit.harness import ablation_tables, average_rankings, table_delta, table_kappas, table_ranking_grid

tables = ablation_tables()
models = list(tables["models"])

for group in ("Input", "Output", "Reasoning"):
    options = list(table_kappas(tables, models[0], 500, group))
    baseline, variants = options[0], options[1:]
    print(f"=== {group} (baseline: {baseline})")
    print("ID-average kappa delta per model, both training sizes pooled")
    print("  " + "model".ljust(16) + "".join(v.rjust(12) for v in variants))
    for model in models:
        row = [table_delta(tables, model, group, v) for v in variants]
        print("  " + model.ljust(16) + "".join(f"{d:+12.4f}" for d in row))
    grid, cells = table_ranking_grid(tables, group)
    summary = average_rankings(grid, cells)
    ranked = ", ".join(f"{o} {r:.3f}" for o, r in summary.ordered())
    print(f"mean rank over {len(cells)} in-domain cells (1 = best): {ranked}")
    print()
