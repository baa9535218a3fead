"""Acceptance suite: one test per criterion, each recording a pass/fail line.

Run ``pytest tests/test_acceptance.py -v`` and see the "acceptance criteria"
section at the end of the output.
"""

import math
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import scipy.linalg as sla

from pcagrowth.analysis import (absorbing_constants, check_absorbing, check_h1_bound, fit_decay_rate,
                                predict_beta)
from pcagrowth.config import load_config
from pcagrowth.grid import Grid, lambda1, lambda1_analytic, norm_l2, seminorm_h1
from pcagrowth.model import f_sup_bound
from pcagrowth.steady import gamma_minimize, steady_closed_form, steady_solve_discrete
from pcagrowth.stepper import State, initial_state, integrate, perturbed, sigma_tilde

from conftest import record_acceptance

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
TAU = 1e-8


def _load(name, *overrides):
    return load_config((CONFIGS / name).read_text(), list(overrides))


# Stressed fixture: strong reaction (f_sup = 1.28), tumor uptake above healthy
# uptake, time-varying cytotoxic and antiangiogenic therapy with s <= S_c.
STRESS = "random_2d.ini"


@pytest.fixture(scope="module")
def bounds_suite():
    """50 seeded runs on each of 1D n=128 and 2D 64x64, t_end = 10, dt from the dt_max rule."""
    params, sched, run = _load(STRESS, "t_end=10.0", "dt=auto", "snapshot_every=0")
    st = sigma_tilde(params)
    worst = {"phi": 0.0, "sigma": 0.0, "p": 0.0}
    sigma_hyp = True
    t0 = time.perf_counter()
    for n in ((128,), (64, 64)):
        grid = Grid(n, (1.0,) * len(n))
        for seed in range(50):
            # phi0 ~ U[0,1], sigma0 ~ U[0, sigma_tilde], p0 ~ U[0,1]
            r = replace(run, n=n, L=(1.0,) * len(n), seed=seed, sigma0=st)
            rep = integrate(initial_state(r, params, grid), r, params, sched, grid)
            sigma_hyp &= rep.nutrient_hypotheses
            for k in worst:
                worst[k] = max(worst[k], rep.max_violation[k])
    elapsed = time.perf_counter() - t0
    return dict(worst=worst, elapsed=elapsed, dt=run.dt, sigma_hyp=sigma_hyp, params=params, sched=sched,
                run=run)


def test_criterion_1_maximum_principle(bounds_suite):
    w = bounds_suite["worst"]["phi"]
    ok = w <= TAU and bounds_suite["elapsed"] <= 120
    record_acceptance(1, "phase-field maximum principle", ok,
                      f"100 runs (50 seeds x 1D n=128 and 2D 64x64), dt={bounds_suite['dt']:.6g}; "
                      f"max phi violation {w:.3g} (<= 1e-8); suite time {bounds_suite['elapsed']:.1f}s (<= 120s)")
    assert ok


def test_criterion_2_nutrient_comparison(bounds_suite):
    params, sched, run = bounds_suite["params"], bounds_suite["sched"], bounds_suite["run"]
    st = sigma_tilde(params)
    assert sched.s_sup <= params.S_c and bounds_suite["sigma_hyp"]
    w = bounds_suite["worst"]["sigma"]
    # sigma0 = sigma_tilde exactly, random phi
    grid = Grid((64, 64), (1.0, 1.0))
    rng = np.random.default_rng(2024)
    init = State(0.0, rng.random(grid.shape_dirichlet), np.full(grid.shape_neumann, st),
                 rng.random(grid.shape_neumann))
    rep = integrate(init, run, params, sched, grid)
    top = float(rep.column("max_sigma").max())
    ok = w <= TAU and rep.max_violation["sigma"] <= TAU and top <= st + TAU
    record_acceptance(2, "nutrient comparison", ok,
                      f"suite max sigma violation {w:.3g}; sigma0 = sigma_tilde = {st:g} run: max sigma "
                      f"{top!r} (<= sigma_tilde + 1e-8)")
    assert ok


def test_criterion_3_steady_state_agreement():
    t0 = time.perf_counter()
    worst = 0.0
    for name in ("decay.ini", STRESS):
        params, _, _ = _load(name)
        for grid in (Grid((128,), (1.0,)), Grid((64, 64), (1.0, 1.0)), Grid((40, 25), (1.0, 2.0))):
            routes = [steady_closed_form(params, grid), steady_solve_discrete(grid, params),
                      gamma_minimize(grid, params, tol=1e-12)]
            for i in range(3):
                for j in range(i + 1, 3):
                    worst = max(worst, norm_l2(grid, routes[i].sigma_inf - routes[j].sigma_inf),
                                norm_l2(grid, routes[i].p_inf - routes[j].p_inf))
    # dense LU oracle for the 7x7 Neumann system on n = 5
    params, _, _ = _load("decay.ini")
    grid = Grid((5,), (1.0,))
    ss = steady_solve_discrete(grid, params)
    h = grid.h[0]
    lap = (np.diag(np.full(6, 1.0), 1) + np.diag(np.full(6, 1.0), -1) - 2 * np.eye(7)) / h**2
    lap[0, 1] = lap[6, 5] = 2 / h**2
    lu_err = 0.0
    for x, c, d, src in ((ss.sigma_inf, params.gamma_h, params.eta, params.S_h),
                         (ss.p_inf, params.gamma_p, params.D, params.alpha_h)):
        ref = sla.lu_solve(sla.lu_factor(c * np.eye(7) - d * lap), np.full(7, src))
        lu_err = max(lu_err, float(np.max(np.abs(x - ref))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and lu_err <= 1e-12 and elapsed <= 5
    record_acceptance(3, "steady-state triple agreement", ok,
                      f"max pairwise L2 difference {worst:.3g} (<= 1e-8); dense LU difference on n=5 "
                      f"{lu_err:.3g} (<= 1e-12); {elapsed:.2f}s (<= 5s)")
    assert ok


def test_criterion_4_lambda1_and_poincare():
    t0 = time.perf_counter()
    worst = 0.0
    for grid in (Grid((3,), (1.0,)), Grid((31,), (1.0,)), Grid((255,), (1.0,)), Grid((15, 15), (1.0, 1.0))):
        worst = max(worst, abs(lambda1(grid) - lambda1_analytic(grid)))
    rng = np.random.default_rng(99)
    violations = 0
    fields = 0
    for grid in (Grid((40,), (1.0,)), Grid((17, 23), (1.0, 2.0))):
        lam = lambda1(grid)
        for _ in range(50):
            u = rng.standard_normal(grid.shape_dirichlet) * rng.uniform(0.01, 100)
            fields += 1
            if seminorm_h1(grid, u) ** 2 < lam * norm_l2(grid, u) ** 2:
                violations += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and violations == 0 and elapsed <= 5
    record_acceptance(4, "first Dirichlet eigenvalue", ok,
                      f"max |inverse power - analytic| {worst:.3g} over n in {{3,31,255}} and 15x15 (<= 1e-8); "
                      f"Poincare violations {violations}/{fields}; {elapsed:.2f}s (<= 5s)")
    assert ok


def test_criterion_5_exponential_convergence():
    t0 = time.perf_counter()
    params, sched, run = _load("decay.ini")
    assert run.t_end == 20.0
    grid = Grid(run.n, run.L)
    beta = predict_beta(params, lambda1(grid), f_sup_bound(params, sched))
    rep = integrate(initial_state(run, params, grid), run, params, sched, grid)
    t, E = rep.column("t"), rep.column("E_dev")
    bound = E[0] * np.exp(-beta * t) * (1 + 1e-6)
    worst = float(np.max(E / bound))
    rate, _ = fit_decay_rate(t, E)
    elapsed = time.perf_counter() - t0
    ok = beta == 0.5 and bool(np.all(E <= bound)) and rate >= beta - 1e-3 and elapsed <= 30
    record_acceptance(5, "exponential convergence", ok,
                      f"beta={beta:g}; max E(t)/(E(0)e^(-beta t)(1+1e-6)) = {worst:.3g} over {len(t)} samples "
                      f"on [0, 20]; fitted rate {rate:.6g} (>= {beta - 1e-3:g}); {elapsed:.1f}s (<= 30s)")
    assert ok


def test_criterion_6_absorbing_set():
    t0 = time.perf_counter()
    params, sched, run = _load(STRESS, "snapshot_every=0", "output_every=1")
    st = sigma_tilde(params)
    results = []
    for i in range(10):
        n = (128,) if i < 5 else (32, 32)
        r = replace(run, n=n, L=(1.0,) * len(n), seed=100 + i, phi0=1.0, sigma0=st, p0=4.0)
        grid = Grid(n, r.L)
        rep = integrate(initial_state(r, params, grid), r, params, sched, grid)
        consts = absorbing_constants(params, sched, grid, float(rep.E_hat[0]))
        chk = check_absorbing(rep, consts)
        assert chk.asserted
        results.append((chk.passed, chk.margin, consts))
    elapsed = time.perf_counter() - t0
    k = results[0][2]
    ok = all(p for p, _, _ in results) and elapsed <= 60
    record_acceptance(6, "absorbing set", ok,
                      f"10 runs (5 x 1D n=128, 5 x 2D 32x32), every logged sample; kappa={k.kappa:g} "
                      f"(nutrient/PSA damping alone: {k.kappa_nutrient_psa:g}), C_bar={k.C_bar:.6g}; smallest margin "
                      f"{min(m for _, m, _ in results):.3g}; {elapsed:.1f}s (<= 60s)")
    assert ok


def test_criterion_7_uniform_h1_bound():
    t0 = time.perf_counter()
    params, sched, run = _load(STRESS, "snapshot_every=0", "t_end=20.0")
    grid = Grid((32, 32), (1.0, 1.0))
    st = sigma_tilde(params)
    eventual, bounded = [], True
    for amp in (0.5, 1.0):
        r = replace(run, n=grid.n, phi0=amp, sigma0=st * amp, p0=2 * amp, seed=5)
        rep = integrate(initial_state(r, params, grid), r, params, sched, grid)
        consts = absorbing_constants(params, sched, grid, float(rep.E_hat[0]))
        chk, info = check_h1_bound(rep, consts.t0)
        bounded &= bool(chk.passed) and np.all(np.isfinite(info["windowed_maxima"]))
        eventual.append(info["eventual"])
    change = abs(eventual[1] - eventual[0]) / eventual[0]
    elapsed = time.perf_counter() - t0
    ok = bounded and change <= 0.10 and elapsed <= 60
    record_acceptance(7, "uniform H1 bound", ok,
                      f"windowed maxima finite and bounded: {bounded}; eventual bound {eventual[0]:.6g} -> "
                      f"{eventual[1]:.6g} under doubled amplitude, change {100 * change:.3g}% (<= 10%); "
                      f"{elapsed:.1f}s (<= 60s)")
    assert ok


def test_criterion_8_continuous_dependence():
    t0 = time.perf_counter()
    params, sched, run = _load(STRESS, "snapshot_every=0", "t_end=5.0")
    ratios = []
    for n in ((128,), (32, 32)):
        grid = Grid(n, (1.0,) * len(n))
        r = replace(run, n=n, L=(1.0,) * len(n))
        base = initial_state(r, params, grid)
        base.phi = 0.05 + 0.9 * base.phi  # keep perturbed phi0 inside [0, 1]
        rng = np.random.default_rng(3)
        direction = State(0.0, rng.uniform(-1, 1, base.phi.shape), rng.uniform(-1, 1, base.sigma.shape),
                          rng.uniform(-1, 1, base.p.shape))
        ref = integrate(base, r, params, sched, grid).final

        def gap(delta):
            fin = integrate(perturbed(base, delta, direction), r, params, sched, grid).final
            return math.sqrt(sum(norm_l2(grid, a - b) ** 2 for a, b in
                                 ((fin.phi, ref.phi), (fin.sigma, ref.sigma), (fin.p, ref.p))))

        for delta in (1e-3, 1e-4, 1e-5):
            ratios.append(gap(delta) / gap(delta / 2))
    elapsed = time.perf_counter() - t0
    ok = all(1.6 <= q <= 2.4 for q in ratios) and elapsed <= 30
    record_acceptance(8, "continuous dependence", ok,
                      f"ratios |d(delta)|/|d(delta/2)| for delta in {{1e-3,1e-4,1e-5}}, 1D and 2D: "
                      f"{', '.join(f'{q:.4f}' for q in ratios)} (2 +/- 20%); {elapsed:.1f}s (<= 30s)")
    assert ok


def test_criterion_9_determinism(tmp_path):
    outs = []
    for k in ("first", "second"):
        out = tmp_path / k
        proc = subprocess.run([sys.executable, "-m", "pcagrowth", "verify", "--config", str(CONFIGS / STRESS),
                               "--out", str(out), "--seed", "7"], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outs.append(out)
    a, b = ((o / "series.csv").read_bytes() for o in outs)
    snaps_equal = all((outs[0] / "snapshots" / f.name).read_bytes() == f.read_bytes()
                      for f in (outs[1] / "snapshots").iterdir())
    ok = a == b and snaps_equal and len(a) > 0
    record_acceptance(9, "determinism", ok,
                      f"two separate verify processes, seed 7, 64x64: series.csv byte-identical: {a == b} "
                      f"({len(a)} bytes); snapshots identical: {snaps_equal}")
    assert ok
