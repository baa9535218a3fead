"""IMEX-Euler time stepping with pointwise bound monitoring.

Diffusion and linear decay are implicit, the phase-field reaction and the
nutrient/PSA coupling to phi are explicit, so every step is three linear SPD
solves (after symmetrization by the quadrature weights on the Neumann layout).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy import fft
from scipy.linalg import solve_banded
from scipy.sparse.linalg import cg

from .errors import CflViolation, ConfigError, SolverDivergence
from .grid import DIRICHLET, NEUMANN, Grid, norm_h1, norm_l2, seminorm_h1
from .model import f_sup_bound, nonlinearity_f

log = logging.getLogger(__name__)

RNG_NAME = "numpy.random.PCG64"

SERIES_COLUMNS = (
    "t", "L2_phi", "L2_sigma", "L2_p", "H1_phi", "H1_sigma", "H1_p",
    "min_phi", "max_phi", "min_sigma", "max_sigma", "min_p", "E_dev",
)


@dataclass
class State:
    t: float
    phi: np.ndarray
    sigma: np.ndarray
    p: np.ndarray

    def copy(self) -> "State":
        return State(self.t, self.phi.copy(), self.sigma.copy(), self.p.copy())


@dataclass
class StepDiagnostics:
    dt: float
    phi_violation: float
    sigma_violation: float
    p_violation: float
    phi_where: tuple
    sigma_where: tuple
    p_where: tuple
    iterations: tuple
    residuals: tuple


def sigma_tilde(params) -> float:
    return max(params.S_h / params.gamma_h, params.S_c / params.gamma_c)


def dt_max(params, schedule) -> float:
    """Largest step for which the explicit reaction terms keep the bounds.

    ``1 / (2 f_sup + |gamma_ch| sigma_tilde + 1)``, further capped by
    ``1 / gamma_ch`` when uptake in tumor exceeds healthy uptake (needed for
    the explicit ``-gamma_ch sigma phi`` term to keep sigma nonnegative).
    """
    value = 1.0 / (2 * f_sup_bound(params, schedule) + abs(params.gamma_ch) * sigma_tilde(params) + 1)
    if params.gamma_ch > 0:
        value = min(value, 1.0 / params.gamma_ch)
    return value


# -- linear solvers ----------------------------------------------------------

class _Banded:
    """Direct tridiagonal solve (1D)."""

    def __init__(self, A):
        A = sp.dia_matrix(A)
        n = A.shape[0]
        ab = np.zeros((3, n))
        for off, row in zip(A.offsets, A.data):
            if off == 1:
                ab[0, 1:] = row[1:]
            elif off == 0:
                ab[1] = row
            elif off == -1:
                ab[2, :-1] = row[:-1]
        self.A = sp.csr_matrix(A)
        self.ab = ab

    def solve(self, b, x0=None, rtol=1e-11):
        x = solve_banded((1, 1), self.ab, b)
        return x, 1, _relres(self.A, x, b)


class _PCG:
    """Jacobi-preconditioned CG on the weight-symmetrized system ``(W A) x = W b``.

    ``predictor`` (optional) supplies the starting iterate; CG then only has to
    certify, or finish, the solve to ``rtol``.
    """

    def __init__(self, A, w, predictor=None):
        self.A = sp.csr_matrix(A)
        self.w = w
        self.S = sp.csr_matrix(sp.diags(w) @ A)
        self.Minv = sp.diags(1.0 / self.S.diagonal())
        self.predictor = predictor

    def solve(self, b, x0=None, rtol=1e-11):
        rhs = self.w * b
        if self.predictor is not None:
            x0 = self.predictor(b)
        count = [0]

        def tick(_):
            count[0] += 1

        x, info = cg(self.S, rhs, x0=x0, rtol=rtol, atol=0.0, maxiter=10 * len(b),
                     M=self.Minv, callback=tick)
        if info != 0:
            raise SolverDivergence(f"CG did not converge (info={info})")
        return x, count[0], _relres(self.S, x, rhs)


class _Transform:
    """Exact solve of ``(c I - d Lap) x = b`` on a uniform tensor grid by sine/cosine transforms.

    DST-I diagonalizes the interior Dirichlet stencil and DCT-I the
    mirrored-ghost Neumann stencil, so the solve is a transform, a division by
    the eigenvalues, and the inverse transform.
    """

    def __init__(self, grid: Grid, bc: str, shift: float, diffusion: float):
        self.shape = grid.shape(bc)
        self.dirichlet = bc == DIRICHLET
        eig = np.full(self.shape, float(shift))
        for ax, (n, h) in enumerate(zip(grid.n, grid.h)):
            k = np.arange(1, n + 1) if self.dirichlet else np.arange(n + 2)
            mu = 4 / h**2 * np.sin(np.pi * k / (2 * (n + 1))) ** 2
            idx = [np.newaxis] * grid.dim
            idx[ax] = slice(None)
            eig = eig + diffusion * mu[tuple(idx)]
        self.eig = eig

    def __call__(self, b):
        b = b.reshape(self.shape)
        if self.dirichlet:
            x = fft.idstn(fft.dstn(b, type=1) / self.eig, type=1)
        else:
            x = fft.idctn(fft.dctn(b, type=1) / self.eig, type=1)
        return x.ravel()


def _relres(A, x, b):
    nb = np.linalg.norm(b)
    r = np.linalg.norm(b - A @ x)
    return float(r / nb) if nb > 0 else float(r)


@lru_cache(maxsize=32)
def _operators(grid: Grid, dt: float, lam: float, eta: float, D: float, gamma_h: float, gamma_p: float):
    I_d = sp.identity(int(np.prod(grid.shape_dirichlet)))
    I_n = sp.identity(int(np.prod(grid.shape_neumann)))
    A_phi = I_d - dt * lam * grid.lap_dirichlet
    A_sig = (1 + dt * gamma_h) * I_n - dt * eta * grid.lap_neumann
    A_p = (1 + dt * gamma_p) * I_n - dt * D * grid.lap_neumann
    if grid.dim == 1:
        return _Banded(A_phi), _Banded(A_sig), _Banded(A_p)
    w_d = grid.weights(DIRICHLET).ravel()
    w_n = grid.w_neumann.ravel()
    return (_PCG(A_phi, w_d, _Transform(grid, DIRICHLET, 1.0, dt * lam)),
            _PCG(A_sig, w_n, _Transform(grid, NEUMANN, 1 + dt * gamma_h, dt * eta)),
            _PCG(A_p, w_n, _Transform(grid, NEUMANN, 1 + dt * gamma_p, dt * D)))


def _violation(values, lo, hi):
    """Largest excursion outside ``[lo, hi]`` and where it occurs."""
    below = lo - values
    above = values - hi if hi is not None else np.full_like(values, -np.inf)
    worst = np.maximum(below, above)
    k = int(np.argmax(worst))
    return max(float(worst.flat[k]), 0.0), np.unravel_index(k, values.shape)


def step(state: State, dt: float, params, schedule, grid: Grid, *, rtol: float = 1e-11,
         clamp: bool = False):
    """Advance one IMEX-Euler step; returns ``(new_state, diagnostics)``."""
    limit = dt_max(params, schedule)
    if dt > limit * (1 + 1e-12):
        raise CflViolation(dt, limit)
    pr = params
    t = state.t
    phi, sigma, p = state.phi, state.sigma, state.p
    u = schedule.u(t, grid.shape_dirichlet)
    s = grid.extend(schedule.s(t, grid.shape_dirichlet))
    phi_n = grid.extend(phi)

    f = nonlinearity_f(phi, grid.interior(sigma), u, pr)
    b_phi = phi - dt * 2 * phi * (1 - phi) * f
    b_sig = sigma + dt * (pr.S_h + pr.S_ch * phi_n - s * phi_n - pr.gamma_ch * sigma * phi_n)
    b_p = p + dt * (pr.alpha_h + pr.alpha_ch * phi_n)

    ops = _operators(grid, float(dt), pr.lam, pr.eta, pr.D, pr.gamma_h, pr.gamma_p)
    out, iters, res = [], [], []
    for op, b, x0 in zip(ops, (b_phi, b_sig, b_p), (phi, sigma, p)):
        x, k, r = op.solve(b.ravel(), x0=x0.ravel(), rtol=rtol)
        if not np.all(np.isfinite(x)) or r > max(10 * rtol, 1e-13):
            raise SolverDivergence(f"linear solve residual {r:.3g} exceeds tolerance {rtol:.3g}")
        out.append(x.reshape(b.shape))
        iters.append(k)
        res.append(r)
    phi1, sig1, p1 = out

    pv, pw = _violation(phi1, 0.0, 1.0)
    sv, sw = _violation(sig1, 0.0, sigma_tilde(pr))
    qv, qw = _violation(p1, 0.0, None)
    if clamp:
        phi1 = np.clip(phi1, 0.0, 1.0)
        sig1 = np.maximum(sig1, 0.0)
        p1 = np.maximum(p1, 0.0)
    diag = StepDiagnostics(dt, pv, sv, qv, pw, sw, qw, tuple(iters), tuple(res))
    return State(t + dt, phi1, sig1, p1), diag


# -- initial data --------------------------------------------------------------

def initial_state(run, params, grid: Grid) -> State:
    """Initial fields for the selector in ``run.initial``."""
    shp_d, shp_n = grid.shape_dirichlet, grid.shape_neumann
    if run.initial == "steady":
        return State(0.0, np.zeros(shp_d), np.full(shp_n, params.sigma_inf), np.full(shp_n, params.p_inf))
    if run.initial == "constant":
        return State(0.0, np.full(shp_d, run.phi0), np.full(shp_n, run.sigma0), np.full(shp_n, run.p0))
    if run.initial == "bump":
        bump = np.ones(shp_d)
        for X, L in zip(grid.mesh(DIRICHLET), grid.L):
            bump = bump * np.sin(np.pi * X / L)
        return State(0.0, run.phi0 * bump, np.full(shp_n, run.sigma0), np.full(shp_n, run.p0))
    if run.initial == "random":
        rng = np.random.Generator(np.random.PCG64(run.seed))
        phi = run.phi0 * rng.random(shp_d)
        sigma = run.sigma0 * rng.random(shp_n)
        p = run.p0 * rng.random(shp_n)
        return State(0.0, phi, sigma, p)
    raise ConfigError(f"unknown initial condition {run.initial!r}")


# -- time integration ------------------------------------------------------------

@dataclass
class RunReport:
    """Logged series plus everything later filled in by the analysis."""

    series: dict
    dt: float
    t_end: float
    dt_max: float
    sigma_tilde: float
    nutrient_hypotheses: bool
    psa_hypotheses: bool
    conforming: bool = True
    max_violation: dict = field(default_factory=dict)
    violation_where: dict = field(default_factory=dict)
    dphi_windows: list = field(default_factory=list)
    solver: dict = field(default_factory=dict)
    final: State | None = None
    rng: str = RNG_NAME
    predicted: dict = field(default_factory=dict)
    fitted: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    def column(self, name) -> np.ndarray:
        return np.asarray(self.series[name], dtype=float)

    @property
    def E_hat(self) -> np.ndarray:
        """Squared L2 norm of the whole state."""
        return self.column("L2_phi") ** 2 + self.column("L2_sigma") ** 2 + self.column("L2_p") ** 2


def sample(state: State, params, grid: Grid) -> dict:
    sig_dev = state.sigma - params.sigma_inf
    p_dev = state.p - params.p_inf
    row = {
        "t": float(state.t),
        "L2_phi": norm_l2(grid, state.phi),
        "L2_sigma": norm_l2(grid, state.sigma),
        "L2_p": norm_l2(grid, state.p),
        "H1_phi": seminorm_h1(grid, state.phi),
        "H1_sigma": norm_h1(grid, state.sigma),
        "H1_p": norm_h1(grid, state.p),
        "min_phi": float(state.phi.min()),
        "max_phi": float(state.phi.max()),
        "min_sigma": float(state.sigma.min()),
        "max_sigma": float(state.sigma.max()),
        "min_p": float(state.p.min()),
    }
    row["E_dev"] = row["L2_phi"] ** 2 + norm_l2(grid, sig_dev) ** 2 + norm_l2(grid, p_dev) ** 2
    return row


def integrate(initial: State, run, params, schedule, grid: Grid, *, on_sample=None, on_snapshot=None,
              t_end: float | None = None) -> RunReport:
    """Integrate from ``initial`` to ``run.t_end`` (or ``t_end``), logging every ``run.output_every`` steps.

    ``on_sample(row)`` and ``on_snapshot(index, state)`` are called as samples
    are produced, so callers can stream output.
    """
    phi0 = initial.phi
    if phi0.size and (phi0.min() < 0 or phi0.max() > 1):
        raise ConfigError("initial phi must lie in [0, 1]")
    if initial.phi.shape != grid.shape_dirichlet or initial.sigma.shape != grid.shape_neumann \
            or initial.p.shape != grid.shape_neumann:
        raise ConfigError("initial state does not match the grid")
    t_end = run.t_end if t_end is None else t_end
    dt = run.dt
    n_steps = int(round(t_end / dt)) if t_end > 0 else 0
    every = max(int(run.output_every), 1)
    st = sigma_tilde(params)
    nutrient_hyp = bool(schedule.s_le_Sc and initial.sigma.min() >= 0 and initial.sigma.max() <= st)
    psa_hyp = bool(schedule.s_le_Sc and initial.sigma.min() >= 0 and initial.p.min() >= 0)

    report = RunReport(
        series={c: [] for c in SERIES_COLUMNS}, dt=dt, t_end=n_steps * dt,
        dt_max=dt_max(params, schedule), sigma_tilde=st,
        nutrient_hypotheses=nutrient_hyp, psa_hypotheses=psa_hyp, conforming=not run.clamp,
        max_violation={"phi": 0.0, "sigma": 0.0, "p": 0.0},
        violation_where={"phi": None, "sigma": None, "p": None},
    )
    snap_every = int(getattr(run, "snapshot_every", 0))

    def emit(k, state):
        row = sample(state, params, grid)
        for c in SERIES_COLUMNS:
            report.series[c].append(row[c])
        if on_sample is not None:
            on_sample(row)
        idx = k // every
        if on_snapshot is not None and snap_every and idx % snap_every == 0:
            on_snapshot(idx, state)

    state = initial.copy()
    state.t = 0.0
    emit(0, state)
    window_sum, window_idx = 0.0, 0
    total_iters, worst_res = 0, 0.0
    for k in range(1, n_steps + 1):
        new, diag = step(state, dt, params, schedule, grid, rtol=run.solver_rtol, clamp=run.clamp)
        new.t = k * dt
        for name, v, where in (("phi", diag.phi_violation, diag.phi_where),
                               ("sigma", diag.sigma_violation, diag.sigma_where),
                               ("p", diag.p_violation, diag.p_where)):
            if v > report.max_violation[name]:
                report.max_violation[name] = v
                report.violation_where[name] = (new.t, tuple(int(i) for i in where))
        total_iters += sum(diag.iterations)
        worst_res = max(worst_res, max(diag.residuals))

        # per-unit-window integral of |phi_t|^2
        w = int(math.floor(state.t + 1e-9))
        if w != window_idx:
            report.dphi_windows.append((float(window_idx), window_sum))
            window_idx, window_sum = w, 0.0
        window_sum += norm_l2(grid, (new.phi - state.phi) / dt) ** 2 * dt

        state = new
        if k % every == 0:
            emit(k, state)
    if n_steps and abs(state.t - (window_idx + 1)) < 1e-9:
        report.dphi_windows.append((float(window_idx), window_sum))

    report.series = {c: np.asarray(v, dtype=float) for c, v in report.series.items()}
    report.solver = {"iterations": total_iters, "max_residual": worst_res,
                     "linear_solver": "tridiagonal" if grid.dim == 1 else "transform+jacobi-pcg"}
    report.final = state
    for name, v in report.max_violation.items():
        if v > run.tau_bound:
            log.warning("%s bound violated by %.3g at %s", name, v, report.violation_where[name])
    return report


def perturbed(state: State, delta: float, direction: State) -> State:
    return replace(state, phi=state.phi + delta * direction.phi,
                   sigma=state.sigma + delta * direction.sigma, p=state.p + delta * direction.p)
