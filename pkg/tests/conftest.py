import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

RESULTS: dict[int, tuple[str, str]] = {}


class _Criterion:
    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.notes: list[str] = []

    def note(self, msg: str) -> None:
        self.notes.append(msg)

    def __enter__(self):
        return self

    def __exit__(self, et, ev, tb):
        verdict = "PASS" if et is None else "FAIL"
        detail = "; ".join(self.notes)
        if et is not None:
            detail = f"{detail}; {et.__name__}: {ev}".lstrip("; ")
        RESULTS[self.number] = (verdict, f"{self.title}: {detail}")
        line = f"criterion {self.number:2d} {verdict}  {self.title}: {detail}"
        print(line, file=sys.__stdout__, flush=True)
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        verdict, text = RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d} {verdict}  {text}")
