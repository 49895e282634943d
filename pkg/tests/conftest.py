"""Shared fine-grid oracles.

The implicit reference at dx* = dt* = 1e-3 takes minutes per case, so each
oracle is computed at most once per session.
"""

import pytest

from mohl import cases
from mohl.reference import GridConfig, euler_implicit_run

ORACLE_SPACING = 1e-3


def fine_oracle(case):
    grid = GridConfig.from_spacing(ORACLE_SPACING, ORACLE_SPACING, case.model)
    res = euler_implicit_run(case, grid, output_dt=case.dt_star)
    assert res.ok, res.error
    return res


@pytest.fixture(scope="session")
def single_layer_oracle():
    return fine_oracle(cases.single_layer())


@pytest.fixture(scope="session")
def multilayer_oracle():
    return fine_oracle(cases.multilayer())


@pytest.fixture
def report(capsys):
    """Print one acceptance line, visible even when output is captured."""

    def emit(number: int, title: str, passed: bool, detail: str):
        with capsys.disabled():
            print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {number:>2} {title}: {detail}")
        return passed

    return emit
