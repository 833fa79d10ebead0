"""Per-subject trial records and the input validation helpers built on them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import NonFiniteError, ShapeMismatch

TREATED, CONTROL = 1, 0


@dataclass(frozen=True, eq=False)
class TrialData:
    """Two-arm randomized trial, one row per subject.

    Attributes
    ----------
    w : ndarray of int, shape (N,)
        Treatment indicator (1 treated, 0 control).
    r : ndarray of int, shape (N,)
        Outcome-observed indicator. All ones when nothing is missing.
    y : ndarray of float, shape (N,)
        Outcome; ``nan`` exactly where ``r == 0``.
    x : ndarray of float, shape (N, l)
        Baseline covariates (auxiliary variables are just extra columns).
    covariate_names : tuple of str
        Column labels for ``x``.
    """

    w: np.ndarray
    r: np.ndarray
    y: np.ndarray
    x: np.ndarray
    covariate_names: tuple = field(default=())

    @property
    def N(self):
        return self.w.shape[0]

    @property
    def m(self):
        return int(np.count_nonzero(self.w == TREATED))

    @property
    def n(self):
        return self.N - self.m

    @property
    def m0(self):
        return int(np.count_nonzero((self.w == TREATED) & (self.r == 1)))

    @property
    def n0(self):
        return int(np.count_nonzero((self.w == CONTROL) & (self.r == 1)))

    @property
    def delta_hat(self):
        return self.m / self.N

    @property
    def has_missing(self):
        return bool(np.any(self.r == 0))

    def arm(self, w):
        """Boolean mask of the full arm ``w`` (including missing outcomes)."""
        return self.w == w

    def observed(self, w):
        """Boolean mask of arm ``w`` subjects with an observed outcome."""
        return (self.w == w) & (self.r == 1)

    def take(self, idx):
        """Row subset without re-validation (used by resampling loops)."""
        return TrialData(self.w[idx], self.r[idx], self.y[idx], self.x[idx],
                         self.covariate_names)

    def column(self, name):
        try:
            return self.covariate_names.index(name)
        except ValueError:
            raise KeyError(name) from None


def check_trial_data(X, y, treatment, observed=None, covariate_names=None,
                     min_per_arm=2):
    """Validate raw arrays and pack them into a :class:`TrialData`.

    ``y`` may contain ``nan`` for missing outcomes; when ``observed`` is not
    given it is inferred from the ``nan`` pattern.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ShapeMismatch(f"X must be 2-D, got shape {X.shape}")
    N = X.shape[0]
    y = np.asarray(y, dtype=float).reshape(-1)
    w = np.asarray(treatment).reshape(-1)
    if y.shape[0] != N or w.shape[0] != N:
        raise ShapeMismatch(
            f"X has {N} rows but y has {y.shape[0]} and treatment {w.shape[0]}")
    if not np.all(np.isin(w, (0, 1))):
        raise ValueError("treatment must contain only 0 and 1")
    w = w.astype(np.int64)
    if observed is None:
        r = (~np.isnan(y)).astype(np.int64)
    else:
        r = np.asarray(observed).reshape(-1)
        if r.shape[0] != N:
            raise ShapeMismatch("observed has the wrong length")
        if not np.all(np.isin(r, (0, 1))):
            raise ValueError("observed must contain only 0 and 1")
        r = r.astype(np.int64)
        if np.any(np.isnan(y[r == 1])):
            raise ValueError("outcome is nan for a subject marked observed")
        y = np.where(r == 1, y, np.nan)
    if not np.all(np.isfinite(X)):
        raise NonFiniteError("covariates contain nan or inf")
    if not np.all(np.isfinite(y[r == 1])):
        raise NonFiniteError("observed outcomes contain inf")
    if covariate_names is None:
        covariate_names = tuple(f"X{j + 1}" for j in range(X.shape[1]))
    covariate_names = tuple(covariate_names)
    if len(covariate_names) != X.shape[1]:
        raise ShapeMismatch("covariate_names does not match the columns of X")
    data = TrialData(w, r, y, X, covariate_names)
    if data.m < min_per_arm or data.n < min_per_arm:
        raise ValueError(f"each arm needs at least {min_per_arm} subjects "
                         f"(m={data.m}, n={data.n})")
    if data.m0 < 1 or data.n0 < 1:
        raise ValueError(f"each arm needs at least one observed outcome "
                         f"(m0={data.m0}, n0={data.n0})")
    return data
