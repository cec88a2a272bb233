"""Render one synthetic review under the three named designs, corrupt a model
output by hand, and watch the relaxed parser repair it.

    python3 demos/walkthrough.py
"""

from sdekit.designspace import preset
from sdekit.parser import parse_output
from sdekit.renderer import render_sample
from sdekit.schema import builtin_distribution, builtin_schema, generate_fixture_corpus

schema = builtin_schema("D1")
record = generate_fixture_corpus(schema, builtin_distribution("D1"), 5, seed=4)[2]

for name in ("ES-SDE", "EW-SDE", "Heuristic"):
    sample = render_sample(record, preset(name), schema)
    print(f"=== {name} ({sample.strategy})")
    print("--- prompt")
    print(sample.prompt)
    print("--- response")
    print(sample.response)
    print()

# a plausible sloppy generation for the ES-SDE design
noisy = "Sure! Here you go:\nFood： Good\ndrinks: bad\nprice: neutral\nprice: negative\nHope this helps."
out = parse_output(noisy, preset("ES-SDE"), schema)
print("=== repairing a noisy ES-SDE output")
print(noisy)
print("--- format error:", out.format_error)
print("--- repairs:", ", ".join(r.value for r in out.repairs))
print("--- residue:", repr(out.residue))
for aspect, label in out.predictions.items():
    print(f"    {aspect:<20} {label.value}")
