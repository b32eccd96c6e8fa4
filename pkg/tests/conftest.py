import numpy as np
import pytest

from sdrobust import (
    ControlOperator,
    DiagonalGenerator,
    DualFunctional,
    ExtrapolationVector,
    HeatSystemSpec,
    RankOnePerturbation,
    SampledSystem,
    build_heat_system,
)


def scalar_system(lam=0.0, b=1.0, F=-1.0, tau=1.0, d=None, h=None, c=0.0, omega=0.0):
    gen = DiagonalGenerator([lam])
    P = None
    if d is not None:
        P = RankOnePerturbation(ExtrapolationVector([d]), DualFunctional([h]), c)
    return SampledSystem(gen, ControlOperator(ExtrapolationVector([b])), DualFunctional([F]), tau, P, omega)


@pytest.fixture
def heat32():
    return build_heat_system(HeatSystemSpec(N=32, c=0.05))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
