import sys

import pytest

from sdekit.schema import AspectSchema, builtin_distribution, builtin_schema, generate_fixture_corpus


@pytest.fixture(scope="session")
def d1():
    return builtin_schema("D1")


@pytest.fixture(scope="session")
def d2():
    return builtin_schema("D2")


@pytest.fixture(scope="session")
def span_schema():
    return AspectSchema(task_id="genia-mini", aspects=("protein", "DNA", "cell type"), kind="span",
                        aliases={"proteins": "protein", "cell_type": "cell type"})


@pytest.fixture(scope="session")
def d1_corpus(d1):
    return generate_fixture_corpus(d1, builtin_distribution("D1"), 300, seed=11)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, title = results[number]
        terminalreporter.write_line(f"AC{number:<2} {'PASS' if ok else 'FAIL'}  {title}")
