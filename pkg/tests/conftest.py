from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from trifit.structure_io import ProteinStructure  # noqa: E402


def make_structure(ca, residues=None, pid="P1", start=1) -> ProteinStructure:
    ca = np.asarray(ca, dtype=np.float64)
    residues = residues or "A" * len(ca)
    return ProteinStructure(pid, np.arange(start, start + len(ca)), residues, ca)


@pytest.fixture
def line3():
    """Three collinear residues 3.8 A apart."""
    return make_structure([[0.0, 0, 0], [3.8, 0, 0], [7.6, 0, 0]], "ACD")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# --- acceptance summary -----------------------------------------------------

_VERDICTS: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    detail = dict(report.user_properties).get("detail", "")
    if report.when == "call" or report.outcome != "passed":
        verdict = "PASS" if report.outcome == "passed" else "FAIL"
        if name not in _VERDICTS or verdict == "FAIL":
            _VERDICTS[name] = (verdict, detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_VERDICTS, key=lambda n: int(n.split("_")[1][1:])):
        verdict, detail = _VERDICTS[name]
        terminalreporter.write_line(f"{verdict}  {name}  {detail}")
