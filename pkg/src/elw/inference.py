"""Standard errors and Wald summaries.

Bootstrap replicates draw from ``numpy.random.default_rng([seed, b])`` so each
replicate's stream depends only on ``(seed, b)``. Results are reduced in
replicate order, making the standard error independent of the worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import clone

from .exceptions import ELWError, SingularD, TooManyFailures
from .models import fit_model_slots
from .trial import CONTROL, TREATED

Z975 = 1.959964


@dataclass(frozen=True)
class BootstrapResult:
    se: float
    replicates_requested: int
    replicates_used: int
    failures: int
    seed: int
    replicates: np.ndarray = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class WaldSummary:
    estimate: float
    se: float
    ci_low: float
    ci_high: float
    test_stat: float


@dataclass(frozen=True, eq=False)
class IFVariance:
    """Plug-in influence-function variance of the complete-outcome ELW estimate.

    ``variance_hat`` is already divided by N, i.e. it estimates var(theta_hat).
    """

    variance_hat: float
    components: dict
    phi: np.ndarray = field(default=None, repr=False)

    @property
    def se(self):
        return float(np.sqrt(self.variance_hat))


def wald(estimate, se):
    """95% Wald interval and test statistic."""
    estimate, se = float(estimate), float(se)
    if se < 0 or np.isnan(se):
        raise ValueError(f"standard error must be non-negative, got {se}")
    half = Z975 * se
    if se > 0:
        stat = estimate / se
    elif estimate == 0:
        stat = float("nan")
    else:
        stat = float(np.copysign(np.inf, estimate))
    return WaldSummary(estimate, se, estimate - half, estimate + half, stat)


def _as_statistic(estimator):
    """Turn an estimator object or a callable into ``data -> float``."""
    if hasattr(estimator, "fit_data"):
        def statistic(data):
            return clone(estimator).fit_data(data).theta_
        return statistic
    if callable(estimator):
        return estimator
    raise TypeError("estimator must have fit_data(data) or be callable")


def resample_indices(data, rng, stratified=False):
    if not stratified:
        return rng.integers(0, data.N, size=data.N)
    treated = np.flatnonzero(data.w == TREATED)
    control = np.flatnonzero(data.w == CONTROL)
    return np.concatenate([rng.choice(treated, size=treated.size),
                           rng.choice(control, size=control.size)])


def _one_replicate(statistic, data, seed, b, stratified):
    rng = np.random.default_rng([*seed, b])
    idx = resample_indices(data, rng, stratified)
    try:
        value = float(statistic(data.take(idx)))
    except (ELWError, ValueError, np.linalg.LinAlgError):
        return np.nan
    return value if np.isfinite(value) else np.nan


def bootstrap_se(data, estimator, B=500, seed=0, stratified=False, n_jobs=1):
    """Nonparametric bootstrap standard error.

    Parameters
    ----------
    data : TrialData
    estimator : estimator with ``fit_data`` or callable ``data -> float``
        Estimator objects are cloned per replicate, so every working model
        is refit on the resampled data.
    B : int
        Number of replicates (at least 2).
    seed : int or sequence of int
        Replicate ``b`` draws from ``numpy.random.default_rng([*seed, b])``.
    stratified : bool
        Resample within arms (fixed m, n) instead of over all N rows.
    n_jobs : int
        Worker threads; the result does not depend on it.

    Returns
    -------
    BootstrapResult
        ``se`` is the sample standard deviation (ddof=1) of the successful
        replicates. Failed replicates are counted and excluded.
    """
    B = int(B)
    if B < 2:
        raise ValueError(f"B must be at least 2, got {B}")
    seed = _seed_key(seed)
    statistic = _as_statistic(estimator)
    if n_jobs == 1:
        reps = [_one_replicate(statistic, data, seed, b, stratified) for b in range(B)]
    else:
        reps = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_one_replicate)(statistic, data, seed, b, stratified)
            for b in range(B))
    reps = np.asarray(reps, dtype=float)
    ok = np.isfinite(reps)
    failures = int(B - np.count_nonzero(ok))
    if failures > B / 2 or B - failures < 2:
        raise TooManyFailures(f"{failures} of {B} bootstrap replicates failed")
    se = float(np.std(reps[ok], ddof=1))
    return BootstrapResult(se, B, B - failures, failures,
                           seed[0] if len(seed) == 1 else seed, reps)


def _seed_key(seed):
    """Normalize an int or a sequence of ints into a tuple of entropy words."""
    key = tuple(int(s) for s in np.atleast_1d(seed))
    if not key or min(key) < 0:
        raise ValueError(f"seed must be non-negative, got {seed!r}")
    return key


def _projection(C, D):
    """Return D^{-1} C, treating an all-zero D as contributing nothing."""
    if not np.any(D):
        return np.zeros_like(C)
    try:
        L = np.linalg.cholesky(D)
    except np.linalg.LinAlgError:
        ridge = 1e-10 * float(np.mean(np.diag(D)))
        try:
            L = np.linalg.cholesky(D + ridge * np.eye(D.shape[0]))
        except np.linalg.LinAlgError:
            raise SingularD("model-value covariance is singular") from None
    return np.linalg.solve(L.T, np.linalg.solve(L, C))


def if_variance_nomissing(data, g_model, h_model):
    """Plug-in influence-function variance for complete outcomes.

    ``g_model`` and ``h_model`` are unfitted outcome working models; they are
    fit per arm exactly as the estimator fits them and evaluated on all N
    subjects. Every expectation is replaced by a pooled-sample mean,
    ``delta`` by m/N and the arm means by the sample arm means.

    The control-arm augmentation enters with a negative sign,

        phi = W/d (Y - mu1) - (W - d)/d  C1' D1^{-1} (g - Eg)
              - (1-W)/(1-d) (Y - mu0) - (W - d)/(1-d) C0' D0^{-1} (h - Eh),

    which is the form that reduces to the efficient influence function under
    correct outcome models.
    """
    if data.has_missing:
        raise ValueError("plug-in variance requires complete outcomes")
    models = fit_model_slots({"outcome_treated": [g_model],
                              "outcome_control": [h_model]}, data)
    W = (data.w == TREATED).astype(float)
    y = data.y
    d = data.delta_hat
    mu1 = float(y[W == 1].mean())
    mu0 = float(y[W == 0].mean())
    gc = models.g_models[0].transform(data.x)
    hc = models.h_models[0].transform(data.x)
    gc = gc - gc.mean(axis=0)
    hc = hc - hc.mean(axis=0)
    e1 = W / d * (y - mu1)
    e0 = (1.0 - W) / (1.0 - d) * (y - mu0)
    N = data.N
    C1 = gc.T @ e1 / N
    C0 = hc.T @ e0 / N
    D1 = gc.T @ gc / N
    D0 = hc.T @ hc / N
    a1 = gc @ _projection(C1, D1)
    a0 = hc @ _projection(C0, D0)
    phi = e1 - (W - d) / d * a1 - e0 - (W - d) / (1.0 - d) * a0
    variance = float(np.var(phi)) / N
    components = {"C1": C1, "C0": C0, "D1": D1, "D0": D0,
                  "mu1": mu1, "mu0": mu0, "delta": d}
    return IFVariance(variance, components, phi)


__all__ = ["Z975", "BootstrapResult", "WaldSummary", "IFVariance", "wald",
           "bootstrap_se", "resample_indices", "if_variance_nomissing"]
