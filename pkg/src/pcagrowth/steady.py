"""Steady state by closed form, by direct discrete solve, and by minimizing the energy functional."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import norm as spnorm, spsolve

from .errors import NoConvergence, SolverDivergence
from .grid import NEUMANN, Grid, norm_l2, seminorm_h1


@dataclass
class SteadyState:
    phi_inf: np.ndarray
    sigma_inf: np.ndarray
    p_inf: np.ndarray
    gamma_value: float
    converged: bool = True
    iterations: int = 0
    gradient_norm: float = 0.0


def _helmholtz(grid: Grid, decay: float, diffusion: float):
    n = int(np.prod(grid.shape_neumann))
    return sp.csr_matrix(decay * sp.identity(n) - diffusion * grid.lap_neumann)


def helmholtz_residuals(grid: Grid, params, sigma, p):
    """L2 residuals of ``(gh - eta Lap) sigma = S_h`` and ``(gp - D Lap) p = alpha_h``."""
    r_s = _helmholtz(grid, params.gamma_h, params.eta) @ sigma.ravel() - params.S_h
    r_p = _helmholtz(grid, params.gamma_p, params.D) @ p.ravel() - params.alpha_h
    shp = grid.shape_neumann
    return norm_l2(grid, r_s.reshape(shp)), norm_l2(grid, r_p.reshape(shp))


def gamma_functional(grid: Grid, u, v, params) -> float:
    """Discrete energy whose minimizer is the steady nutrient/PSA pair.

    ``int eta/2 |grad u|^2 + gh/2 u^2 - S_h u + D/2 |grad v|^2 + gp/2 v^2 - alpha_h v``.
    """
    w = grid.weights(NEUMANN)
    pr = params
    part_u = pr.eta / 2 * seminorm_h1(grid, u) ** 2 + pr.gamma_h / 2 * norm_l2(grid, u) ** 2 \
        - pr.S_h * float(np.sum(w * u))
    part_v = pr.D / 2 * seminorm_h1(grid, v) ** 2 + pr.gamma_p / 2 * norm_l2(grid, v) ** 2 \
        - pr.alpha_h * float(np.sum(w * v))
    return float(part_u + part_v)


def steady_closed_form(params, grid: Grid) -> SteadyState:
    shp = grid.shape_neumann
    sigma = np.full(shp, params.S_h / params.gamma_h)
    p = np.full(shp, params.alpha_h / params.gamma_p)
    return SteadyState(np.zeros(grid.shape_dirichlet), sigma, p, gamma_functional(grid, sigma, p, params))


def steady_solve_discrete(grid: Grid, params, rtol: float = 1e-12) -> SteadyState:
    shp = grid.shape_neumann
    out = []
    for decay, diff, src in ((params.gamma_h, params.eta, params.S_h),
                             (params.gamma_p, params.D, params.alpha_h)):
        A = _helmholtz(grid, decay, diff)
        b = np.full(A.shape[0], src)
        x = spsolve(sp.csc_matrix(A), b)
        # normwise backward error; the plain relative residual is dominated by
        # roundoff in A @ x once diffusion / h^2 is large
        res = np.linalg.norm(A @ x - b, np.inf) / (spnorm(A, np.inf) * np.linalg.norm(x, np.inf)
                                                   + np.linalg.norm(b, np.inf))
        if not np.all(np.isfinite(x)) or res > rtol:
            raise SolverDivergence(f"steady solve residual {res:.3g} > {rtol:.3g}")
        out.append(x.reshape(shp))
    sigma, p = out
    return SteadyState(np.zeros(grid.shape_dirichlet), sigma, p, gamma_functional(grid, sigma, p, params))


def _minimize_quadratic(K, b, w, tol, max_iter):
    """Linear CG for ``min 1/2 x.Kx - b.x`` with K symmetric positive definite.

    Stops when the weighted gradient norm ``|W^-1 (Kx - b)|_W`` is at most
    ``tol``, i.e. the L2 norm of the strong-form residual.
    """
    x = np.zeros_like(b)
    r = b - K @ x
    d = r.copy()
    gnorm = float(np.sqrt(np.sum(r**2 / w)))
    k = 0
    while gnorm > tol:
        if k >= max_iter:
            raise NoConvergence(f"energy minimization stalled at gradient norm {gnorm:.3g}")
        Kd = K @ d
        alpha = (r @ r) / (d @ Kd)
        x = x + alpha * d
        r_new = r - alpha * Kd
        beta = (r_new @ r_new) / (r @ r)
        d = r_new + beta * d
        r = r_new
        k += 1
        gnorm = float(np.sqrt(np.sum(r**2 / w)))
    return x, k, gnorm


def gamma_minimize(grid: Grid, params, tol: float = 1e-12, max_iter: int | None = None) -> SteadyState:
    """Minimize the energy functional from a zero initial guess.

    The gradient of the discrete energy in the weighted inner product is the
    Helmholtz residual, so a critical point solves the steady equations.
    """
    w = grid.w_neumann.ravel()
    W = sp.diags(w)
    shp = grid.shape_neumann
    max_iter = max_iter or 10 * w.size
    parts, iters, gnorms = [], 0, []
    for decay, diff, src in ((params.gamma_h, params.eta, params.S_h),
                             (params.gamma_p, params.D, params.alpha_h)):
        K = sp.csr_matrix(W @ _helmholtz(grid, decay, diff))
        x, k, g = _minimize_quadratic(K, src * w, w, tol / np.sqrt(2), max_iter)
        parts.append(x.reshape(shp))
        iters += k
        gnorms.append(g)
    sigma, p = parts
    return SteadyState(np.zeros(grid.shape_dirichlet), sigma, p, gamma_functional(grid, sigma, p, params),
                       converged=True, iterations=iters, gradient_norm=float(np.hypot(*gnorms)))
