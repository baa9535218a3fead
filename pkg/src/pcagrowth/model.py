"""Pointwise nonlinearities and reaction terms of the tumor/nutrient/PSA system."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch


def tilt_m(sigma, params):
    """Arctan tilting function, bounded by ``m_ref*min(rho, A)`` and ``m_ref*max(rho, A)``."""
    p = params
    return p.m_ref * ((p.rho + p.A) / 2
                      + (p.rho - p.A) / np.pi * np.arctan((sigma - p.sigma_l) / p.sigma_r))


def nonlinearity_f(phi, sigma, u, params):
    return params.M * (1 - 2 * phi - 3 * (tilt_m(sigma, params) - params.m_ref * u))


def f_sup_bound(params, schedule) -> float:
    """Certified bound on ``|f|`` for ``0 <= phi <= 1`` and ``|u| <= u_sup``.

    Interval arithmetic on ``1 - 2 phi - 3 m + 3 m_ref u`` over the a priori
    box; valid along every admissible trajectory for all time.
    """
    p = params
    m_lo = min(p.m_ref * p.rho, p.m_ref * p.A)
    m_hi = max(p.m_ref * p.rho, p.m_ref * p.A)
    drug = 3 * abs(p.m_ref) * schedule.u_sup
    g_lo = 1 - 2 - 3 * m_hi - drug
    g_hi = 1 - 0 - 3 * m_lo + drug
    return float(abs(p.M) * max(abs(g_lo), abs(g_hi)))


@dataclass
class ReactionEval:
    r_phi: np.ndarray
    r_sigma: np.ndarray
    r_p: np.ndarray


def reactions(state, t, params, schedule, grid) -> ReactionEval:
    """Non-diffusive right-hand sides, arranged as ``d/dt field = diffusion + reaction``.

    ``r_phi`` is on the interior layout, ``r_sigma`` and ``r_p`` on the full
    Neumann layout; phi is taken as zero on the boundary.
    """
    phi, sigma, p = state.phi, state.sigma, state.p
    if (np.shape(phi) != grid.shape_dirichlet or np.shape(sigma) != grid.shape_neumann
            or np.shape(p) != grid.shape_neumann):
        raise ShapeMismatch("state fields do not match the grid layouts")
    u = schedule.u(t, grid.shape_dirichlet)
    s = grid.extend(schedule.s(t, grid.shape_dirichlet))
    pr = params

    f = nonlinearity_f(phi, grid.interior(sigma), u, pr)
    r_phi = -2 * phi * (1 - phi) * f
    phi_n = grid.extend(phi)
    r_sigma = -pr.gamma_h * sigma - pr.gamma_ch * sigma * phi_n + pr.S_h + pr.S_ch * phi_n - s * phi_n
    r_p = -pr.gamma_p * p + pr.alpha_h + pr.alpha_ch * phi_n
    return ReactionEval(r_phi, r_sigma, r_p)
