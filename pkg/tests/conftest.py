from __future__ import annotations

import numpy as np
import pytest

from sasgrid.actions import build_catalogue
from sasgrid.grid import GenSpec, GridSpec, LineSpec, LoadSpec, Substation, load_preset


def triangle(limit: float = 1.0) -> GridSpec:
    """Three substations joined by equal-reactance lines: 0-1, 0-2, 2-1."""
    subs = [Substation(i, f"s{i}") for i in range(3)]
    lines = [LineSpec(0, 0, 1, 1.0, limit), LineSpec(1, 0, 2, 1.0, limit), LineSpec(2, 2, 1, 1.0, limit)]
    gens = [GenSpec(0, 0, 0.0, 300.0, 50.0)]
    loads = [LoadSpec(0, 1, 100.0)]
    return GridSpec(subs, lines, gens, loads, name="triangle", base_mva=100.0)


@pytest.fixture(scope="session")
def case5():
    return load_preset("case5")


@pytest.fixture(scope="session")
def case14():
    return load_preset("case14")


@pytest.fixture(scope="session")
def cat5(case5):
    return build_catalogue(case5)


@pytest.fixture(scope="session")
def cat14(case14):
    return build_catalogue(case14)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_topology(spec: GridSpec, rng: np.random.Generator, p_split: float = 0.4, p_off: float = 0.1):
    """Random bus vectors and line outages with no element left hanging alone."""
    from sasgrid.grid import initial_topology, isolated_slots

    while True:
        topo = initial_topology(spec)
        for slots in spec.sub_slots:
            if rng.random() < p_split:
                topo.bus_of[list(slots)] = rng.integers(1, 3, len(slots))
        for ln in range(spec.n_line):
            if rng.random() < p_off:
                topo.bus_of[2 * ln] = topo.bus_of[2 * ln + 1] = 0
                topo.line_connected[ln] = False
        if not isolated_slots(spec, topo.bus_of):
            return topo


# -- acceptance report -------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
