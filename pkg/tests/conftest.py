import logging
from typing import Dict, List

import numpy as np
import pytest

from spaace_sim.core import Mode, Trace
from spaace_sim.scenario import ComparisonRow, compare, get_case, run


@pytest.fixture(scope="session")
def case_rows():
    """compare() results per built-in case, computed once per session."""
    cache: Dict[str, Dict[Mode, ComparisonRow]] = {}

    def _rows(name: str) -> Dict[Mode, ComparisonRow]:
        if name not in cache:
            rows: List[ComparisonRow] = compare(name)
            assert all(row.ok for row in rows), [row.error for row in rows]
            cache[name] = {row.mode: row for row in rows}
        return cache[name]

    return _rows


@pytest.fixture(scope="session")
def case1_1_trace():
    return run(get_case("case1_1"))


@pytest.fixture
def trace_of():
    """Builds a Trace on a uniform grid; x_ref doubles as x_ref_mod."""

    def _make(t, x, x_ref=None, dt=None) -> Trace:
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        ref = np.asarray(x_ref, dtype=float) if x_ref is not None else np.zeros_like(x)
        step = dt if dt is not None else float(t[1] - t[0])
        return Trace(t, ref, ref, x, dt=step, t_sample=step)

    return _make


@pytest.fixture(autouse=True)
def _restore_root_logger():
    """cli.main installs its own root handler; put the test runner's back afterwards."""
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)
