import numpy as np
import pytest

from dewm.data import PanelDataset
from dewm.propensity import PropensityModel


def random_panel(rng, n=30, T=2, k=(1, 0), p_treat=0.5, scale=1.0):
    """Small panel with fair-coin treatments and normal outcomes."""
    D = (rng.random((n, T)) < p_treat).astype(np.int8)
    Y = scale * rng.normal(size=(n, T))
    X = [rng.normal(size=(n, k[t])) for t in range(T)]
    return PanelDataset(D, Y, X)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def half():
    return PropensityModel.known(0.5, 2)


# acceptance verdicts ---------------------------------------------------------------------

ACCEPTANCE: dict = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    """Store the verdict of an acceptance criterion for the end-of-run summary."""
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}")
