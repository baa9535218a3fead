"""Post-processing of logged runs into predicted constants, fitted rates and checks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import validate_decay_condition
from .errors import ConditionNotMet, RunTooShort, SeriesUnderflow, WindowTooShort
from .grid import lambda1 as grid_lambda1
from .model import f_sup_bound
from .stepper import sigma_tilde

UNDERFLOW = 1e-14

CONVERGED_TO_ZERO = "converged-to-zero"
CONVERGED_ELSEWHERE = "converged-elsewhere"
UNDECIDED = "undecided"


@dataclass
class CheckResult:
    name: str
    passed: bool | None  # None: not applicable / skipped
    asserted: bool
    margin: float = math.nan
    detail: str = ""

    @property
    def failed(self) -> bool:
        return self.asserted and self.passed is False


@dataclass
class AbsorbingConstants:
    kappa: float
    kappa_nutrient_psa: float
    C_bar: float
    C0: float
    t0: float


def predict_beta(params, lambda1: float, f_sup: float) -> float:
    cond = validate_decay_condition(params, lambda1, f_sup)
    if not cond.holds:
        raise ConditionNotMet(cond.margin)
    return cond.beta


def fit_decay_rate(t, E, window=None, floor: float = UNDERFLOW):
    """Negated least-squares slope of ``log E`` on ``window = (t_a, t_b)``.

    Returns ``(rate, rms_residual)`` of the log-linear fit.
    """
    t = np.asarray(t, dtype=float)
    E = np.asarray(E, dtype=float)
    if window is None:
        window = default_fit_window(t, E, floor)
    t_a, t_b = window
    if not t_b > t_a:
        raise WindowTooShort(f"empty window [{t_a}, {t_b}]")
    sel = (t >= t_a - 1e-12) & (t <= t_b + 1e-12)
    if sel.sum() < 2:
        raise WindowTooShort(f"fewer than two samples in [{t_a}, {t_b}]")
    if np.any(E[sel] <= floor):
        raise SeriesUnderflow(f"series drops below {floor:g} inside [{t_a}, {t_b}]")
    tt, yy = t[sel], np.log(E[sel])
    slope, icpt = np.polyfit(tt, yy, 1)
    resid = yy - (slope * tt + icpt)
    return float(-slope), float(np.sqrt(np.mean(resid**2)))


def default_fit_window(t, E, floor: float = UNDERFLOW):
    """Second half of the leading stretch of the run where ``E`` stays above ``floor``."""
    t = np.asarray(t, dtype=float)
    below = np.nonzero(np.asarray(E) <= floor)[0]
    last = len(t) - 1 if below.size == 0 else below[0] - 1
    if last < 1:
        raise SeriesUnderflow("series is below the underflow floor from the start")
    t_end = float(t[last])
    return (float(t[0]) + t_end) / 2, t_end


def absorbing_constants(params, schedule, grid, e_init: float, f_sup: float | None = None,
                        lambda1: float | None = None) -> AbsorbingConstants:
    """Explicit constants of the dissipative estimate ``dE/dt + kappa E <= C_bar``.

    ``E`` is the squared L2 norm of the full state.  ``kappa_nutrient_psa`` keeps only
    the nutrient/PSA damping; ``kappa`` also includes the phase-field damping
    through the discrete Poincare constant.
    """
    pr = params
    f_sup = f_sup_bound(pr, schedule) if f_sup is None else f_sup
    lam1 = grid_lambda1(grid) if lambda1 is None else lambda1
    st = sigma_tilde(pr)
    kappa_nutrient_psa = min(2 * pr.gamma_h, pr.gamma_p)
    kappa = min(2 * pr.lam * lam1, kappa_nutrient_psa)
    C_bar = 2 * grid.measure * (2 * f_sup + abs(pr.gamma_ch) * st**2
                                + (pr.S_h + pr.S_c + schedule.s_sup) * st
                                + max(pr.alpha_h, pr.alpha_c) ** 2 / (2 * pr.gamma_p))
    bound = C_bar / kappa
    if e_init <= bound:
        t0 = 0.0
    elif bound > 0:
        t0 = math.log(e_init / bound) / kappa
    else:
        t0 = math.inf
    C0 = e_init * math.exp(-kappa * t0) + bound if math.isfinite(t0) else bound
    return AbsorbingConstants(kappa, kappa_nutrient_psa, C_bar, C0, t0)


# -- checks ---------------------------------------------------------------------

def check_bounds(report, tau: float = 1e-8):
    """Pointwise bounds for phi, sigma and p from the monitored violations."""
    mv = report.max_violation
    out = [CheckResult("phi_bounds", mv["phi"] <= tau, True, tau - mv["phi"],
                       f"max excursion outside [0,1]: {mv['phi']:.3g}")]
    nut = report.nutrient_hypotheses
    out.append(CheckResult("nutrient_bounds", (mv["sigma"] <= tau) if nut else None, nut,
                           tau - mv["sigma"],
                           f"max excursion outside [0, {report.sigma_tilde:.6g}]: {mv['sigma']:.3g}"
                           + ("" if nut else " (hypotheses not met; not asserted)")))
    psa = report.psa_hypotheses
    out.append(CheckResult("psa_nonnegative", (mv["p"] <= tau) if psa else None, psa, tau - mv["p"],
                           f"most negative p excursion: {mv['p']:.3g}"
                           + ("" if psa else " (hypotheses not met; not asserted)")))
    return out


def check_absorbing(report, consts: AbsorbingConstants, rtol: float = 1e-9) -> CheckResult:
    """Backward-difference form of the dissipative inequality, plus its Gronwall consequence."""
    t = report.column("t")
    E = report.E_hat
    k, C = consts.kappa, consts.C_bar
    slack = rtol * max(C, float(np.max(np.abs(E))) * k, 1e-300)
    if len(t) > 1:
        dEdt = np.diff(E) / np.diff(t)
        lhs = dEdt + k * E[1:]
        diff_margin = float(np.min(C - lhs))
    else:
        diff_margin = math.inf
    gron = E[0] * np.exp(-k * (t - t[0])) + C / k
    gron_margin = float(np.min(gron * (1 + rtol) - E))
    asserted = report.nutrient_hypotheses
    ok = diff_margin >= -slack and gron_margin >= 0
    return CheckResult("absorbing_set", ok if asserted else None, asserted, min(diff_margin, gron_margin),
                       f"kappa={k:.6g} C_bar={C:.6g}; differential margin {diff_margin:.3g},"
                       f" Gronwall margin {gron_margin:.3g}")


def h1_total(report) -> np.ndarray:
    return np.sqrt(report.column("H1_phi") ** 2 + report.column("H1_sigma") ** 2 + report.column("H1_p") ** 2)


def windowed_maxima(t, values, start: float, width: float = 1.0):
    """Maxima of ``values`` over consecutive windows ``[start + k w, start + (k+1) w]``."""
    t = np.asarray(t)
    out = []
    a = start
    while a + width <= t[-1] + 1e-9:
        sel = (t >= a - 1e-9) & (t <= a + width + 1e-9)
        if sel.any():
            out.append(float(np.max(values[sel])))
        a += width
    return np.asarray(out)


def check_h1_bound(report, t0: float) -> tuple[CheckResult, dict]:
    """Uniform H1 bound after ``t1 = t0 + 1``; returns the check and the empirical constants."""
    t = report.column("t")
    if t[-1] < t0 + 2 - 1e-9:
        raise RunTooShort(f"run ends at {t[-1]:.6g} < t0 + 2 = {t0 + 2:.6g}")
    t1 = t0 + 1
    H = h1_total(report)
    maxima = windowed_maxima(t, H, t1)
    finite = bool(np.all(np.isfinite(H))) and maxima.size > 0
    C1 = float(np.max(maxima)) if maxima.size else math.nan
    eventual = float(maxima[-1]) if maxima.size else math.nan
    nonincreasing = bool(np.all(np.diff(maxima) <= 1e-12 * max(C1, 1.0)))
    info = {"t1": t1, "C1": C1, "eventual": eventual, "windowed_maxima": maxima,
            "nonincreasing": nonincreasing}
    return CheckResult("uniform_h1", finite, True, C1,
                       f"empirical C1={C1:.6g}, eventual window max={eventual:.6g},"
                       f" windowed maxima non-increasing: {nonincreasing}"), info


def check_phi_vanishes(report, eps_conv: float = 1e-6, beta: float | None = None) -> CheckResult:
    """Three-valued verdict on whether phi tends to zero; reported, never asserted."""
    t = report.column("t")
    L2 = report.column("L2_phi")
    final = float(L2[-1])
    windows = [v for _, v in report.dphi_windows]
    tail = windows[1:] if len(windows) > 1 else windows
    decaying = bool(tail) and all(b <= a * (1 + 1e-9) + 1e-30 for a, b in zip(tail, tail[1:]))
    if final <= eps_conv:
        verdict = CONVERGED_TO_ZERO
    else:
        settled = bool(windows) and windows[-1] < (eps_conv * 1e-3) ** 2
        verdict = CONVERGED_ELSEWHERE if settled else UNDECIDED
    detail = f"verdict={verdict}; |phi(t_end)|={final:.3g}; windowed |phi_t|^2 decaying: {decaying}"
    if beta is not None:
        E = report.column("E_dev")
        bound = math.sqrt(E[0]) * math.exp(-beta * t[-1] / 2) + 1e-8
        detail += f"; decay bound {bound:.3g}"
    return CheckResult("phi_vanishes", verdict == CONVERGED_TO_ZERO, False, eps_conv - final, detail)


def check_exponential_decay(report, beta: float, rtol: float = 1e-6, rate_tol: float = 1e-3,
                            atol: float = UNDERFLOW):
    """Pointwise ``E(t) <= E(0) exp(-beta t)`` and fitted-rate check; returns (check, fit).

    ``atol`` absorbs roundoff when the run starts at (or reaches) the steady state.
    """
    t = report.column("t")
    E = report.column("E_dev")
    bound = E[0] * np.exp(-beta * (t - t[0])) * (1 + rtol) + atol
    margin = float(np.min(bound - E))
    pointwise = bool(np.all(E <= bound))
    fit = {"rate": math.nan, "residual": math.nan, "window": None}
    rate_ok = True
    if E[0] > UNDERFLOW and len(t) > 2:
        try:
            window = default_fit_window(t, E)
            rate, res = fit_decay_rate(t, E, window)
            fit = {"rate": rate, "residual": res, "window": window}
            rate_ok = rate >= beta - rate_tol
        except (WindowTooShort, SeriesUnderflow) as exc:
            fit["error"] = str(exc)
    ok = pointwise and rate_ok
    win = "n/a" if fit["window"] is None else "[{:.6g}, {:.6g}]".format(*fit["window"])
    detail = f"beta={beta:.6g}; pointwise margin {margin:.3g}; fitted rate {fit['rate']:.6g} on {win}"
    return CheckResult("exponential_decay", ok, True, margin, detail), fit


def analyze(report, params, schedule, grid, run=None, *, lambda1: float | None = None):
    """Fill ``report.predicted``, ``report.fitted`` and ``report.checks``."""
    tau = getattr(run, "tau_bound", 1e-8)
    eps_conv = getattr(run, "eps_conv", 1e-6)
    lam1 = grid_lambda1(grid) if lambda1 is None else lambda1
    f_sup = f_sup_bound(params, schedule)
    cond = validate_decay_condition(params, lam1, f_sup)
    consts = absorbing_constants(params, schedule, grid, float(report.E_hat[0]), f_sup, lam1)
    report.predicted = {
        "sigma_tilde": sigma_tilde(params),
        "lambda1": lam1,
        "f_sup": f_sup,
        "condition_met": cond.holds,
        "condition_margin": cond.margin,
        "beta_predicted": cond.beta if cond.holds else math.nan,
        "kappa": consts.kappa,
        "kappa_nutrient_psa": consts.kappa_nutrient_psa,
        "C_bar": consts.C_bar,
        "C0": consts.C0,
        "t0": consts.t0,
        "dt_max": report.dt_max,
    }
    checks = {c.name: c for c in check_bounds(report, tau)}
    checks["absorbing_set"] = check_absorbing(report, consts)
    try:
        h1, info = check_h1_bound(report, consts.t0)
        report.fitted["C1"] = info["C1"]
        report.fitted["C1_eventual"] = info["eventual"]
    except RunTooShort as exc:
        h1 = CheckResult("uniform_h1", None, False, math.nan, f"skipped: {exc}")
    checks["uniform_h1"] = h1
    checks["phi_vanishes"] = check_phi_vanishes(report, eps_conv, cond.beta if cond.holds else None)
    if cond.holds:
        dec, fit = check_exponential_decay(report, cond.beta)
        report.fitted["decay_rate_E"] = fit["rate"]
        report.fitted["decay_rate_E_residual"] = fit["residual"]
    else:
        dec = CheckResult("exponential_decay", None, False, cond.margin,
                          f"condition not met (margin {cond.margin:.6g}); not asserted")
    checks["exponential_decay"] = dec
    t = report.column("t")
    L2phi = report.column("L2_phi")
    if len(t) > 2 and L2phi[0] > 0:
        try:
            rate, _ = fit_decay_rate(t, L2phi**2)
            report.fitted["decay_rate_phi"] = rate
        except (WindowTooShort, SeriesUnderflow):
            pass
    report.checks = checks
    return report


def failed_checks(report) -> list:
    return [c for c in report.checks.values() if c.failed]
