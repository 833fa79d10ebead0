"""Average-treatment-effect estimators.

The weighted estimators calibrate each arm separately. For arm ``w`` the
constraint rows are the values of that arm's working models (propensity
blocks first, then outcome blocks) on its observed-outcome subjects, centered
at a target mean. Pooled targets average over both full arms, which is where
randomization enters; own-arm targets reproduce the one-sample comparators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .el_core import SolverOptions, center_constraints, solve_weights
from .exceptions import BadColumn, ELWError, EmptyConstraints, ShapeMismatch
from .models import SLOTS, WorkingModelSet, fit_model_slots
from .trial import CONTROL, TREATED, TrialData, check_trial_data

METHODS = ("elw", "elw_mis", "elw_mr", "qz", "hw", "unadjusted", "change_score")


@dataclass(frozen=True, eq=False)
class EstimateResult:
    theta_hat: float
    method: str
    weights_treated: np.ndarray = None
    weights_control: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)


def pooled_targets(model_values_treated_full, model_values_control_full):
    """Column means over both full arms stacked together.

    Each arm is summed separately so that identical arms reproduce the
    own-arm mean bit for bit.
    """
    a = np.atleast_2d(np.asarray(model_values_treated_full, dtype=float))
    b = np.atleast_2d(np.asarray(model_values_control_full, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"treated block has {a.shape[1]} columns, "
                            f"control block {b.shape[1]}")
    return (a.sum(axis=0) + b.sum(axis=0)) / (a.shape[0] + b.shape[0])


def arm_targets(model_values_full_arm):
    return np.atleast_2d(np.asarray(model_values_full_arm, dtype=float)).mean(axis=0)


def _model_values(models, x):
    blocks = [m.transform(x) for m in models]
    if not blocks:
        return np.empty((x.shape[0], 0))
    return np.hstack(blocks)


def _arm_weights(data, model_set, arm, opts, targets):
    label = "treated" if arm == TREATED else "control"
    models = model_set.arm_models(arm)
    values = _model_values(models, data.x)
    obs = data.observed(arm)
    n_obs = int(np.count_nonzero(obs))
    if values.shape[1] == 0:
        if data.has_missing and n_obs < int(np.count_nonzero(data.arm(arm))):
            raise EmptyConstraints(f"{label} arm has missing outcomes but no "
                                   f"working models")
        return np.full(n_obs, 1.0 / n_obs), None
    if targets == "pooled":
        target = pooled_targets(values[data.arm(TREATED)], values[data.arm(CONTROL)])
    else:
        target = arm_targets(values[data.arm(arm)])
    U = center_constraints(values[obs], target)
    try:
        sol = solve_weights(U, opts)
    except ELWError as exc:
        raise type(exc)(f"{label} arm: {exc}") from exc
    return sol.weights, sol


def _method_tag(model_set, data, targets):
    single = max(model_set.sizes) <= 1
    if targets == "arm":
        return "qz" if single else "hw"
    if not data.has_missing and not (model_set.p1_models or model_set.p0_models):
        return "elw"
    return "elw_mis" if single else "elw_mr"


def _weighted_estimate(data, model_set, opts, targets, method=None):
    opts = opts or SolverOptions()
    w1, sol1 = _arm_weights(data, model_set, TREATED, opts, targets)
    w0, sol0 = _arm_weights(data, model_set, CONTROL, opts, targets)
    mu1 = float(w1 @ data.y[data.observed(TREATED)])
    mu0 = float(w0 @ data.y[data.observed(CONTROL)])
    diagnostics = {
        "treated": sol1.summary() if sol1 is not None else None,
        "control": sol0.summary() if sol0 is not None else None,
        "separation": list(model_set.separation),
        "mu_treated": mu1,
        "mu_control": mu0,
    }
    return EstimateResult(mu1 - mu0, method or _method_tag(model_set, data, targets),
                          w1, w0, diagnostics)


def estimate_elw(data, g, h, opts=None):
    """ELW estimate without missing outcomes; ``g``/``h`` are unfitted outcome models."""
    if data.has_missing:
        raise ValueError("estimate_elw needs complete outcomes; use estimate_elw_missing")
    slots = {"outcome_treated": [g], "outcome_control": [h]}
    return _weighted_estimate(data, fit_model_slots(slots, data), opts, "pooled", "elw")


def estimate_elw_missing(data, models, opts=None):
    """ELW estimate under missing outcomes with fitted working models.

    One model per slot gives the doubly robust estimator; several give the
    multiply robust one. Every target is a pooled mean over both full arms.
    """
    _require_constraints(models, data)
    return _weighted_estimate(data, models, opts, "pooled")


def estimate_qz(data, models, opts=None):
    _require_constraints(models, data)
    return _weighted_estimate(data, models, opts, "arm", "qz")


def estimate_hw(data, models, opts=None):
    _require_constraints(models, data)
    return _weighted_estimate(data, models, opts, "arm", "hw")


def _require_constraints(models, data):
    C, D, E, F = models.sizes
    if data.has_missing and (C + E == 0 or D + F == 0):
        raise EmptyConstraints("each arm needs at least one working model "
                               f"(C+E={C + E}, D+F={D + F})")


def estimate_unadjusted(data, observed_only=False):
    if data.has_missing and not observed_only:
        raise ValueError("outcomes are missing; pass observed_only=True to "
                         "difference the observed-arm means")
    y1 = data.y[data.observed(TREATED)]
    y0 = data.y[data.observed(CONTROL)]
    return EstimateResult(float(y1.mean() - y0.mean()), "unadjusted")


def estimate_change_score(data, baseline_column, observed_only=False):
    if isinstance(baseline_column, str):
        try:
            baseline_column = data.column(baseline_column)
        except KeyError:
            raise BadColumn(f"no covariate named {baseline_column!r}") from None
    if not 0 <= int(baseline_column) < data.x.shape[1]:
        raise BadColumn(f"baseline column {baseline_column} out of range")
    base = data.x[:, int(baseline_column)]
    unadj = estimate_unadjusted(data, observed_only).theta_hat
    shift = base[data.arm(TREATED)].mean() - base[data.arm(CONTROL)].mean()
    return EstimateResult(float(unadj - shift), "change_score")


# -- scikit-learn style wrappers --------------------------------------------

class _TrialEstimator(BaseEstimator):
    """``fit(X, y, treatment, observed=None)`` then read ``theta_``."""

    def fit(self, X, y, treatment, observed=None, covariate_names=None):
        data = check_trial_data(X, y, treatment, observed, covariate_names)
        return self.fit_data(data)

    def fit_data(self, data):
        if min(data.m0, data.n0) < 1:
            raise ValueError("an arm has no observed outcomes")
        self.result_ = self._estimate(data)
        self.theta_ = self.result_.theta_hat
        return self

    @property
    def method_(self):
        check_is_fitted(self, "result_")
        return self.result_.method


class ELWEstimator(_TrialEstimator):
    """Empirical-likelihood-weighted treatment effect.

    Parameters
    ----------
    outcome_treated, outcome_control : sequence of estimators
        Unfitted outcome working models (``IdentityModel``/``LinearModel``)
        for E(Y | W=1, X) and E(Y | W=0, X).
    propensity_treated, propensity_control : sequence of estimators
        Unfitted ``LogisticModel`` candidates for P(R=1 | W=w, X). Leave
        empty when no outcome is missing.
    targets : {"pooled", "arm"}
        "pooled" calibrates to means over both arms (the ELW family);
        "arm" calibrates to the arm's own mean (Qin-Zhang, Han-Wang).
    epsilon, max_iterations, augmentation_scale, hessian_ridge, auto_augment
        Dual-solver settings, see :class:`~elw.el_core.SolverOptions`.

    Attributes
    ----------
    theta_ : float
    result_ : EstimateResult
    models_ : WorkingModelSet
    """

    def __init__(self, outcome_treated=None, outcome_control=None,
                 propensity_treated=None, propensity_control=None,
                 targets="pooled", epsilon=1e-8, max_iterations=500,
                 augmentation_scale=2.0, hessian_ridge=0.0, auto_augment=True):
        self.outcome_treated = outcome_treated
        self.outcome_control = outcome_control
        self.propensity_treated = propensity_treated
        self.propensity_control = propensity_control
        self.targets = targets
        self.epsilon = epsilon
        self.max_iterations = max_iterations
        self.augmentation_scale = augmentation_scale
        self.hessian_ridge = hessian_ridge
        self.auto_augment = auto_augment

    def solver_options(self):
        return SolverOptions(self.epsilon, self.max_iterations,
                             self.augmentation_scale, self.hessian_ridge,
                             self.auto_augment)

    def _estimate(self, data):
        if self.targets not in ("pooled", "arm"):
            raise ValueError(f"targets must be 'pooled' or 'arm', got {self.targets!r}")
        slots = {slot: list(getattr(self, slot) or ()) for slot in SLOTS}
        if not data.has_missing:
            # Every outcome observed: the observation probability is 1 and
            # its calibration constraint is vacuous.
            slots["propensity_treated"] = slots["propensity_control"] = []
        self.models_ = fit_model_slots(slots, data)
        _require_constraints(self.models_, data)
        return _weighted_estimate(data, self.models_, self.solver_options(),
                                  self.targets)

    @property
    def weights_treated_(self):
        check_is_fitted(self, "result_")
        return self.result_.weights_treated

    @property
    def weights_control_(self):
        check_is_fitted(self, "result_")
        return self.result_.weights_control


class Unadjusted(_TrialEstimator):
    """Difference of arm means of the (observed) outcomes."""

    def __init__(self, observed_only=False):
        self.observed_only = observed_only

    def _estimate(self, data):
        return estimate_unadjusted(data, self.observed_only)


class ChangeScore(_TrialEstimator):
    """Unadjusted difference minus the arm difference of a baseline covariate."""

    def __init__(self, baseline=0, observed_only=False):
        self.baseline = baseline
        self.observed_only = observed_only

    def _estimate(self, data):
        return estimate_change_score(data, self.baseline, self.observed_only)


__all__ = [
    "TrialData", "EstimateResult", "WorkingModelSet", "METHODS",
    "pooled_targets", "arm_targets", "estimate_elw", "estimate_elw_missing",
    "estimate_qz", "estimate_hw", "estimate_unadjusted", "estimate_change_score",
    "ELWEstimator", "Unadjusted", "ChangeScore",
]
