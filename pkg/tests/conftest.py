from pathlib import Path

import pytest


def write_tsv(path: Path, rows):
    path.write_text("".join("\t".join(str(c) for c in r) + "\n" for r in rows), encoding="utf-8")
    return path


@pytest.fixture
def corpus_files(tmp_path):
    """Write abstracts/entities/relations TSVs from row lists; returns their paths."""

    def make(abstracts, entities, relations=None):
        a = write_tsv(tmp_path / "abstracts.tsv", abstracts)
        e = write_tsv(tmp_path / "entities.tsv", entities)
        r = write_tsv(tmp_path / "relations.tsv", relations) if relations is not None else None
        return a, e, r

    return make


_ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """``criterion(n, name, ok, detail)`` records one acceptance line, then asserts ``ok``."""

    def record(n, name, ok, detail="", assert_ok=True):
        line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        _ACCEPTANCE.append(line)
        print(line)
        if assert_ok:
            assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
