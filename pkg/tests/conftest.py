import numpy as np
import pytest

from spincert.fock import half_filling
from spincert.model import Geometry, ModelParams, TiltedHubbard, build_spin_squared
from spincert.spectral import low_spectrum


class Chain4:
    def __init__(self):
        self.geometry = Geometry.chain(4)
        self.params = ModelParams()
        self.sector = half_filling(4)
        self.model = TiltedHubbard(self.geometry, self.params, self.sector)
        self.S2 = build_spin_squared(self.sector)

    def spectrum(self, eps, k=12):
        return {r.label: r for r in low_spectrum(self.model(eps), self.S2, k, sector=self.sector)}


@pytest.fixture(scope="session")
def chain4():
    return Chain4()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line; all lines are repeated in the terminal summary."""

    def _report(n, ok, detail):
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
