"""Simulator and verification harness for a phase-field prostate tumor model
with chemotherapy and antiangiogenic therapy."""

from .config import (DecayCondition, ModelParams, Piecewise, RunConfig, TherapySchedule, dump_config,
                     load_config, validate_decay_condition)
from .grid import Grid, lambda1, laplacian_dirichlet, laplacian_neumann, norm_l2, seminorm_h1
from .model import f_sup_bound, nonlinearity_f, reactions, tilt_m
from .stepper import State, dt_max, initial_state, integrate, sigma_tilde, step
from .steady import gamma_functional, gamma_minimize, steady_closed_form, steady_solve_discrete
from .analysis import (absorbing_constants, analyze, check_h1_bound, check_phi_vanishes, fit_decay_rate,
                       predict_beta)

__version__ = "0.1.0"
