import sys
import warnings

import numpy as np
import pytest

from koopman_kernel import collocation as co
from koopman_kernel import dynsys as ds
from koopman_kernel import kernel as kn


def solve_builtin(name, lam, sigma, shape, lo, hi, eta_rel=co.DEFAULT_ETA_REL):
    vf = ds.builtin(name)
    lin = ds.linearize(vf)
    box = co.Box.cube(lo, hi, vf.dimension)
    gs = co.build(vf, lin, lin.select(target=lam), co.sample(box, co.Grid(shape)),
                  kn.GaussianKernel(sigma), eta_rel=eta_rel)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return vf, gs, co.solve(gs)


@pytest.fixture(scope="session")
def example1_l1():
    return solve_builtin("example1", -1.0, (2, 2), (30, 30), -1, 1)


@pytest.fixture(scope="session")
def example1_l2():
    return solve_builtin("example1", 3.0, (2, 3), (30, 30), -1, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.LINES:
        terminalreporter.write_line(line)
