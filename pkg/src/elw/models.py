"""Working nuisance models.

Outcome regressions (``IdentityModel``, ``LinearModel``) and observation
propensity models (``LogisticModel``) are small scikit-learn style
estimators. Each selects its own covariate columns through ``features`` so
that a whole covariate matrix can be passed around unchanged, and each
exposes ``transform(X)`` returning the block of constraint columns it
contributes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.utils.validation import check_is_fitted

from .exceptions import (ELWError, EmptyConstraints, OneClass, RankDeficient,
                         SeparationWarning, ShapeMismatch)
from .trial import CONTROL, TREATED

PROPENSITY_FAMILIES = ("logistic",)
OUTCOME_FAMILIES = ("identity", "linear")
ARMS = {"treated": TREATED, "control": CONTROL}


def _check_X(model, X, fitting=False):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D covariate matrix, got shape {X.shape}")
    if fitting:
        model.n_features_in_ = X.shape[1]
    elif X.shape[1] != model.n_features_in_:
        raise ShapeMismatch(f"{type(model).__name__} was fit on "
                            f"{model.n_features_in_} columns, got {X.shape[1]}")
    return X


def _resolve_features(features, n_cols):
    if features is None:
        return np.arange(n_cols)
    idx = np.asarray(features, dtype=int).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= n_cols):
        raise ShapeMismatch(f"feature indices {idx.tolist()} out of range "
                            f"for {n_cols} columns")
    return idx


class IdentityModel(TransformerMixin, BaseEstimator):
    """Pass selected covariate columns through as calibration functions."""

    def __init__(self, features=None):
        self.features = features

    def fit(self, X, y=None):
        X = _check_X(self, X, fitting=True)
        self.features_ = _resolve_features(self.features, X.shape[1])
        return self

    def transform(self, X):
        check_is_fitted(self, "features_")
        X = _check_X(self, X)
        return X[:, self.features_]


class LinearModel(BaseEstimator):
    """Least-squares outcome regression; ``coef_`` holds the intercept first."""

    def __init__(self, features=None, fit_intercept=True):
        self.features = features
        self.fit_intercept = fit_intercept

    def _design(self, X):
        Z = X[:, self.features_]
        if self.fit_intercept:
            Z = np.column_stack([np.ones(X.shape[0]), Z])
        return Z

    def fit(self, X, y):
        X = _check_X(self, X, fitting=True)
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise ShapeMismatch("X and y have different lengths")
        self.features_ = _resolve_features(self.features, X.shape[1])
        Z = self._design(X)
        if Z.shape[1] == 0:
            raise RankDeficient("linear model has no columns")
        coef, _, rank, _ = np.linalg.lstsq(Z, y, rcond=None)
        if rank < Z.shape[1] or Z.shape[0] < Z.shape[1]:
            raise RankDeficient(f"design has rank {rank} < {Z.shape[1]} columns")
        self.coef_ = coef
        return self

    @property
    def coefficients(self):
        check_is_fitted(self, "coef_")
        return self.coef_

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = _check_X(self, X)
        return self._design(X) @ self.coef_

    def transform(self, X):
        return self.predict(X).reshape(-1, 1)


class LogisticModel(BaseEstimator):
    """Binomial-likelihood model for P(outcome observed | covariates).

    Fit by Newton-Raphson from zero coefficients. If the iteration drifts
    past ``separation_bound`` or stalls, ``separation_flag_`` is set, a
    :class:`SeparationWarning` is issued and the last coefficients are kept.
    """

    def __init__(self, features=None, max_iter=100, tol=1e-6,
                 separation_bound=30.0):
        self.features = features
        self.max_iter = max_iter
        self.tol = tol
        self.separation_bound = separation_bound

    def _design(self, X):
        return np.column_stack([np.ones(X.shape[0]), X[:, self.features_]])

    def fit(self, X, r):
        X = _check_X(self, X, fitting=True)
        r = np.asarray(r, dtype=float).reshape(-1)
        if r.shape[0] != X.shape[0]:
            raise ShapeMismatch("X and r have different lengths")
        if not np.all((r == 0) | (r == 1)):
            raise ValueError("response must be 0/1")
        if np.all(r == r[0]):
            raise OneClass("response has a single class")
        self.features_ = _resolve_features(self.features, X.shape[1])
        Z = self._design(X)
        beta = np.zeros(Z.shape[1])
        converged = separated = False
        n_iter = 0

        def loglik(eta):
            return float(np.sum(r * eta - np.logaddexp(0.0, eta)))

        eta = Z @ beta
        ll = loglik(eta)
        for n_iter in range(1, self.max_iter + 1):
            p = expit(eta)
            score = Z.T @ (r - p)
            if np.max(np.abs(score)) <= self.tol:
                converged = True
            v = p * (1.0 - p)
            info = (Z * v[:, None]).T @ Z
            try:
                step = np.linalg.solve(info, score)
            except np.linalg.LinAlgError:
                if np.all(v > 1e-12):
                    raise RankDeficient("logistic design is singular") from None
                separated = True
                break
            if not np.all(np.isfinite(step)):
                separated = True
                break
            # Halve on likelihood decrease; a converged fit takes one last
            # full step to tighten the score from tol to roundoff.
            t = 1.0
            while True:
                cand = beta + t * step
                ll_new = loglik(Z @ cand)
                if ll_new >= ll - 1e-12 * (1.0 + abs(ll)) or t < 1e-8:
                    break
                t *= 0.5
            beta, eta, ll = cand, Z @ cand, ll_new
            if np.max(np.abs(beta)) > self.separation_bound:
                separated = True
                break
            if converged:
                break
        score = Z.T @ (r - expit(eta))
        if not converged and np.max(np.abs(score)) > self.tol:
            separated = True
        self.coef_ = beta
        self.n_iter_ = n_iter
        self.converged_ = converged and not separated
        self.separation_flag_ = separated
        if separated:
            warnings.warn("logistic fit did not converge; likely (quasi-)complete "
                          "separation", SeparationWarning, stacklevel=2)
        return self

    @property
    def coefficients(self):
        check_is_fitted(self, "coef_")
        return self.coef_

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = _check_X(self, X)
        return self._design(X) @ self.coef_

    def predict_proba(self, X):
        p = self.decision_function(X)
        p = expit(p)
        return np.column_stack([1.0 - p, p])

    def transform(self, X):
        return expit(self.decision_function(X)).reshape(-1, 1)


def fit_ols(X, y, features=None):
    return LinearModel(features=features).fit(X, y)


def fit_logistic(X, r, features=None):
    return LogisticModel(features=features).fit(X, r)


def predict_outcome(model, X):
    """Constraint block of an outcome model: always an (n, k) matrix."""
    return model.transform(X)


def predict_propensity(model, X):
    return model.transform(X)[:, 0]


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of one working model.

    ``features`` may hold column indices or covariate names.
    """

    arm: str
    family: str
    features: tuple = None

    def __post_init__(self):
        if self.arm not in ARMS:
            raise ValueError(f"arm must be 'treated' or 'control', got {self.arm!r}")
        if self.family not in PROPENSITY_FAMILIES + OUTCOME_FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")
        if self.features is not None:
            object.__setattr__(self, "features", tuple(self.features))

    @property
    def role(self):
        return "propensity" if self.family in PROPENSITY_FAMILIES else "outcome"

    @property
    def slot(self):
        return f"{self.role}_{self.arm}"

    def build(self, covariate_names=()):
        feats = self.features
        if feats is not None:
            names = list(covariate_names)
            feats = tuple(names.index(f) if isinstance(f, str) else int(f)
                          for f in feats)
        cls = {"identity": IdentityModel, "linear": LinearModel,
               "logistic": LogisticModel}[self.family]
        return cls(features=feats)


SLOTS = ("propensity_treated", "propensity_control",
         "outcome_treated", "outcome_control")


@dataclass(frozen=True)
class WorkingModelSet:
    """Fitted candidate models per arm; ``p1``/``p0`` propensity, ``g``/``h`` outcome."""

    p1_models: tuple = ()
    p0_models: tuple = ()
    g_models: tuple = ()
    h_models: tuple = ()
    separation: tuple = field(default=())

    @property
    def sizes(self):
        return (len(self.p1_models), len(self.p0_models),
                len(self.g_models), len(self.h_models))

    def arm_models(self, w):
        """Models feeding arm ``w``: propensity blocks first, then outcome."""
        if w == TREATED:
            return self.p1_models + self.g_models
        return self.p0_models + self.h_models


def _fit_one(template, slot, index, data):
    arm = TREATED if slot.endswith("treated") else CONTROL
    model = clone(template)
    try:
        if slot.startswith("propensity"):
            mask = data.arm(arm)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", SeparationWarning)
                model.fit(data.x[mask], data.r[mask])
            for wmsg in caught:
                if not issubclass(wmsg.category, SeparationWarning):
                    warnings.warn_explicit(wmsg.message, wmsg.category,
                                           wmsg.filename, wmsg.lineno)
        else:
            mask = data.observed(arm)
            model.fit(data.x[mask], data.y[mask])
    except ELWError as exc:
        raise type(exc)(f"{slot}[{index}] ({type(model).__name__}): {exc}") from exc
    return model


def fit_model_slots(slots, data):
    """Fit unfitted templates keyed by slot name into a WorkingModelSet.

    Outcome models see only the arm's observed-outcome subjects; propensity
    models see the arm's full sample with the observed indicator as response.
    """
    fitted = {}
    flags = []
    for slot in SLOTS:
        models = []
        for i, template in enumerate(slots.get(slot) or ()):
            model = _fit_one(template, slot, i, data)
            if getattr(model, "separation_flag_", False):
                flags.append(f"{slot}[{i}]")
            models.append(model)
        fitted[slot] = tuple(models)
    return WorkingModelSet(fitted["propensity_treated"], fitted["propensity_control"],
                           fitted["outcome_treated"], fitted["outcome_control"],
                           tuple(flags))


def assemble_model_set(specs, data):
    """Fit a list of :class:`ModelSpec` (or plain dicts) on ``data``."""
    specs = [s if isinstance(s, ModelSpec) else ModelSpec(**s) for s in specs]
    if not specs:
        raise EmptyConstraints("at least one working model is required")
    slots = {slot: [] for slot in SLOTS}
    for s in specs:
        slots[s.slot].append(s.build(data.covariate_names))
    return fit_model_slots(slots, data)
