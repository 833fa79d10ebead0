"""Empirical-likelihood-weighted estimation of average treatment effects."""

from .el_core import (ConstraintMatrix, DualSolution, SolverOptions, augment,
                      center_constraints, dual_objective, solve_weights,
                      solve_weights_augmented)
from .estimators import (ChangeScore, ELWEstimator, EstimateResult, Unadjusted,
                         arm_targets, estimate_change_score, estimate_elw,
                         estimate_elw_missing, estimate_hw, estimate_qz,
                         estimate_unadjusted, pooled_targets)
from .exceptions import *  # noqa: F401,F403
from .inference import (BootstrapResult, IFVariance, WaldSummary, bootstrap_se,
                        if_variance_nomissing, wald)
from .models import (IdentityModel, LinearModel, LogisticModel, ModelSpec,
                     WorkingModelSet, assemble_model_set, fit_logistic, fit_ols,
                     predict_outcome, predict_propensity)
from .trial import TrialData, check_trial_data

__version__ = "0.1.0"
