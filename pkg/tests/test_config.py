import math
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from pcagrowth.config import (ModelParams, Piecewise, TherapySchedule, dump_config, load_config,
                              load_sweep_axis, validate_decay_condition)
from pcagrowth.errors import ConfigError, MissingKey, NegativeSchedule, NonPositiveCoefficient

from conftest import make_params

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

DOC = """
[params]
lambda = 1.0
eta = 0.5
D = 0.25
gamma_h = 1.0
gamma_c = 2.0
gamma_p = 1.5
alpha_h = 0.3
alpha_c = 0.4
S_h = 0.5
S_c = 1.0
M = 0.1
m_ref = 1.0
rho = 2.0
A = 1.0

[therapy]
u_times = [0.0, 2.0]
u_values = [0.2, 0.0]
s_values = [0.05]

[run]
n = [15]
dt = 0.1
t_end = 2.0
output_every = 2
"""


def test_valid_document_echoes_params():
    params, sched, run = load_config(DOC)
    assert params.lam == 1.0 and params.eta == 0.5 and params.D == 0.25
    assert params.gamma_p == 1.5 and params.rho == 2.0 and params.A == 1.0
    assert params.gamma_ch == params.gamma_c - params.gamma_h == 1.0
    assert params.S_ch == 0.5
    assert params.alpha_ch == pytest.approx(0.1)
    # defaults for the unspecified tilt threshold and reference
    assert params.sigma_l == 0.0 and params.sigma_r == 1.0
    assert sched.u_sup == 0.2 and sched.s_sup == 0.05 and sched.s_le_Sc
    assert run.n == (15,) and run.L == (1.0,) and run.n_steps == 20


def test_zero_uptake_rejected():
    with pytest.raises(NonPositiveCoefficient) as exc:
        load_config(DOC.replace("gamma_h = 1.0", "gamma_h = 0"))
    assert exc.value.name == "gamma_h"


@pytest.mark.parametrize("key", ["lambda", "eta", "D", "gamma_c", "gamma_p", "alpha_h", "alpha_c", "S_h", "S_c"])
def test_each_positive_coefficient_named(key):
    with pytest.raises(NonPositiveCoefficient) as exc:
        load_config(DOC, [f"params.{key}=-1"])
    assert exc.value.name == key


def test_negative_schedule_rejected():
    with pytest.raises(NegativeSchedule):
        load_config(DOC.replace("s_values = [0.05]", "s_values = [-0.1]"))


def test_missing_key():
    with pytest.raises(MissingKey):
        load_config(DOC.replace("S_c = 1.0\n", ""))


def test_mobility_may_vanish_but_not_be_negative():
    params, _, _ = load_config(DOC, ["M=0"])
    assert params.M == 0.0
    with pytest.raises(NonPositiveCoefficient):
        load_config(DOC, ["M=-0.1"])


def test_s_le_Sc_flag():
    _, sched, _ = load_config(DOC, ["s_values=[1.5]"])
    assert not sched.s_le_Sc
    _, sched, _ = load_config(DOC, ["s_values=[1.0]"])
    assert sched.s_le_Sc


def test_run_invariants():
    with pytest.raises(ConfigError):
        load_config(DOC, ["output_every=3"])  # 20 steps
    with pytest.raises(ConfigError):
        load_config(DOC, ["t_end=0.05"])
    with pytest.raises(ConfigError):
        load_config(DOC, ["dt=0"])
    with pytest.raises(ConfigError):
        load_config(DOC, ["initial=spiral"])


def test_overrides_are_revalidated():
    params, _, run = load_config(DOC, ["params.M=0.3", "seed=9"])
    assert params.M == 0.3 and run.seed == 9
    with pytest.raises(NonPositiveCoefficient):
        load_config(DOC, ["eta=0"])


def test_auto_dt_respects_dt_max():
    from pcagrowth.stepper import dt_max

    params, sched, run = load_config(DOC, ["dt=auto", "output_every=1"])
    assert run.dt <= dt_max(params, sched)
    assert run.n_steps * run.dt == pytest.approx(run.t_end)


def test_profiles_must_match_grid():
    prof = "[" + ",".join(["0.1"] * 15) + "]"
    _, sched, _ = load_config(DOC, [f"s_profiles=[{prof}]", "s_times=[0.0]"])
    assert sched.s.cells == 15 and sched.s_sup == 0.1
    with pytest.raises(ConfigError):
        load_config(DOC, ["s_profiles=[[0.1, 0.2]]", "s_times=[0.0]"])


def test_piecewise_evaluation():
    pw = Piecewise(times=(0.0, 1.0, 3.0), values=(0.5, 0.0, 0.25))
    assert pw(0.0) == 0.5 and pw(0.999) == 0.5 and pw(1.0) == 0.0 and pw(10.0) == 0.25
    assert pw.sup == 0.5
    with pytest.raises(ConfigError):
        Piecewise(times=(0.5,), values=(1.0,))


def test_round_trip_exact():
    params, sched, run = load_config(DOC)
    again = load_config(dump_config(params, sched, run))
    assert again == (params, sched, run)


@pytest.mark.parametrize("name", ["decay.ini", "random_2d.ini", "steady.ini"])
def test_sample_configs_round_trip(name):
    loaded = load_config((CONFIGS / name).read_text())
    assert load_config(dump_config(*loaded)) == loaded


def test_sweep_axis():
    axis = load_sweep_axis((CONFIGS / "sweep_M.ini").read_text())
    assert axis.name == "M" and axis.values == (0.0, 0.05, 0.1)
    assert load_sweep_axis(DOC) is None


pos = st.floats(min_value=1e-6, max_value=1e6, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(lam=pos, eta=pos, gh=pos, gc=pos, sh=pos, rho=st.floats(-10, 10), sr=pos)
def test_round_trip_property(lam, eta, gh, gc, sh, rho, sr):
    params = make_params(lam=lam, eta=eta, gamma_h=gh, gamma_c=gc, S_h=sh, rho=rho, sigma_r=sr).validate()
    sched = TherapySchedule(u=Piecewise((0.0, 1.5), (0.1, 1 / 3)), s=Piecewise((0.0,), (0.0,))).with_flag(params)
    _, _, run = load_config(DOC)
    assert load_config(dump_config(params, sched, run)) == (params, sched, run)


def test_decay_condition_trivial_case():
    p = make_params(gamma_c=1.0, alpha_c=0.3, gamma_h=1.0, gamma_p=1.0)
    c = validate_decay_condition(p, lambda1=1.0, f_sup=0.0)
    assert c.holds and c.beta == 0.5


def test_decay_condition_zero_diffusion_fails():
    p = make_params(lam=0.0)
    c = validate_decay_condition(p, lambda1=9.0, f_sup=0.1)
    terms = 1.0**2 * 0.5**2 / 1.0 + 0.1**2 / 2 + 0.2
    assert not c.holds
    assert c.margin == pytest.approx(-terms, rel=1e-12)


def test_decay_condition_reference_fixture():
    # lambda=1, lambda1=9.3726, gamma_h=gamma_p=1, gamma_ch=1, sigma_inf=0.5, alpha_ch=0.1, f_sup=0.1
    p = make_params(lam=1.0, gamma_h=1.0, gamma_p=1.0, gamma_c=2.0, S_h=0.5, alpha_h=0.3, alpha_c=0.4)
    c = validate_decay_condition(p, lambda1=9.3726, f_sup=0.1)
    assert c.holds
    # by hand: 9.3726 - 0.25 - 0.005 - 0.2 = 8.9176
    assert c.margin == pytest.approx(8.9176, abs=1e-12)
    assert c.beta == 0.5


@settings(max_examples=100, deadline=None)
@given(lam=st.floats(0, 5), l1=st.floats(0.1, 50), f1=st.floats(0, 10), df=st.floats(0, 10))
def test_decay_condition_monotone_in_f_sup(lam, l1, f1, df):
    p = make_params(lam=lam)
    low = validate_decay_condition(p, l1, f1)
    high = validate_decay_condition(p, l1, f1 + df)
    assert not (high.holds and not low.holds)
    assert high.margin <= low.margin
