import numpy as np
import pytest

from occmom.cli import load_problem
from occmom.ocp import Horizon, InitialMeasure, OcpProblem, SemialgebraicSet
from occmom.poly import VarSpace, parse


@pytest.fixture(scope="session")
def di_file():
    return load_problem("double_integrator")


@pytest.fixture(scope="session")
def di_problem(di_file):
    """Minimum-time double integrator with a Dirac start at (-0.5, -0.8)."""
    return di_file.problem


@pytest.fixture(scope="session")
def regulator_file():
    return load_problem("nonlinear_regulator")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def decay_problem(x0=1.0, **kw) -> OcpProblem:
    """``x' = -x`` with running cost ``x^2`` steered to the origin; value ``x0^2 / 2``."""
    space = VarSpace(False, 1, 0)
    x = parse("x1", space)
    opts = dict(C_T=SemialgebraicSet((parse("4 - x1^2", space),), "trajectory"),
                initial=InitialMeasure.dirac([x0]), final_mode="singleton", x_T=[0.0], time_bound=20.0)
    opts.update(kw)
    return OcpProblem(space, (-x,), x * x, parse("0", space), **opts)


def integrator_problem(x0=(0.0, 0.0), T=1.0) -> OcpProblem:
    """Fixed-horizon double integrator with quadratic costs (feasible from anywhere)."""
    space = VarSpace(True, 2, 1)
    f = (parse("x2", space), parse("u1", space))
    return OcpProblem(space, f, parse("x1^2 + u1^2", space), parse("x2^2", space),
                      C_T=SemialgebraicSet((parse("1 - u1^2", space),), "trajectory"),
                      horizon=Horizon.fixed(T), initial=InitialMeasure.dirac(x0))
