import numpy as np
import pytest

from pcagrowth.config import ModelParams, Piecewise, RunConfig, TherapySchedule
from pcagrowth.grid import Grid


def make_params(**kw):
    base = dict(lam=1.0, eta=1.0, D=1.0, gamma_h=1.0, gamma_c=2.0, gamma_p=1.0,
                alpha_h=0.3, alpha_c=0.4, S_h=0.5, S_c=1.0, M=0.0625, m_ref=1.0,
                rho=0.2, A=0.1, sigma_l=0.0, sigma_r=1.0)
    base.update(kw)
    return ModelParams(**base)


def make_schedule(params, u=0.0, s=0.1):
    sch = TherapySchedule(u=Piecewise((0.0,), (u,)), s=Piecewise((0.0,), (s,)))
    return sch.with_flag(params)


@pytest.fixture
def params():
    return make_params()


@pytest.fixture
def schedule(params):
    return make_schedule(params)


@pytest.fixture
def grid1():
    return Grid((31,), (1.0,))


@pytest.fixture
def grid2():
    return Grid((12, 10), (1.0, 1.5))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def run_config(grid, **kw):
    base = dict(n=grid.n, L=grid.L, dt=0.05, t_end=2.0, initial="random", seed=3,
                phi0=1.0, sigma0=0.5, p0=1.0)
    base.update(kw)
    return RunConfig(**base)


# one summary line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = {}


def record_acceptance(number, title, passed, detail):
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
