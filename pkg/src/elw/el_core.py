"""Empirical-likelihood weights through the Lagrange dual.

Maximizing ``sum(log p_i)`` subject to ``sum(p_i) = 1`` and
``sum(p_i * U_i) = 0`` gives ``p_i = 1 / (n * (1 + lam' U_i))`` where ``lam``
maximizes the concave dual ``sum(log(1 + lam' U_i))``. The dual is climbed
with a damped Newton iteration: the step length starts at ``(t + 1)**-0.5``
at iteration ``t`` and is halved until the candidate keeps every
``1 + lam' U_i`` positive and does not lower the dual.

When the zero vector is outside the convex hull of the rows the dual is
unbounded. :func:`solve_weights_augmented` then appends two artificial rows
that keep the row mean fixed but stretch the hull around the origin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .exceptions import (ConvergenceFailure, HullViolation, InfeasibleLambda,
                         NonFiniteError, ShapeMismatch, SingularCovariance,
                         SingularHessian, SolverError, ZeroMeanDirection)

_CONVERGED, _MAX_ITER, _STEP_UNDERFLOW, _SINGULAR = 0, 1, 2, 3
_MIN_GAMMA = 1e-12
_RIDGE_LADDER = (1e-10, 1e-8, 1e-6)


@dataclass(frozen=True, eq=False)
class ConstraintMatrix:
    """Centered estimating-function rows, one per retained subject."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 1)
        if v.ndim != 2 or v.shape[1] < 1:
            raise ShapeMismatch(f"constraint rows must be n x r with r >= 1, "
                                f"got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NonFiniteError("constraint rows contain nan or inf")
        object.__setattr__(self, "values", v)

    @property
    def n_rows(self):
        return self.values.shape[0]

    @property
    def r(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class SolverOptions:
    epsilon: float = 1e-8
    max_iterations: int = 500
    augmentation_scale: float = 2.0
    hessian_ridge: float = 0.0
    auto_augment: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.augmentation_scale > 0:
            raise ValueError("augmentation_scale must be positive")
        if not self.hessian_ridge >= 0:
            raise ValueError("hessian_ridge must be non-negative")


@dataclass(frozen=True, eq=False)
class DualSolution:
    """Solved dual.

    ``weights`` always refer to the caller's rows, also after augmentation
    (the two artificial weights are dropped and the rest renormalized).
    ``residual`` is ``sum(weights_i * U_i)`` over those rows; it is zero up
    to the tolerance for a plain solve and generally not zero after
    augmentation.
    """

    lam: np.ndarray
    weights: np.ndarray
    iterations: int
    converged: bool
    augmented: bool
    gradient_norm: float
    step_norm: float
    objective_trace: np.ndarray
    residual: np.ndarray

    def summary(self):
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "augmented": self.augmented,
            "gradient_norm": self.gradient_norm,
            "max_abs_residual": float(np.max(np.abs(self.residual))),
            "min_weight": float(self.weights.min()),
        }


def _as_constraints(U):
    return U if isinstance(U, ConstraintMatrix) else ConstraintMatrix(U)


def center_constraints(raw_rows, targets):
    """Subtract calibration targets from raw model values, row by row."""
    raw = np.asarray(raw_rows, dtype=float)
    if raw.ndim == 1:
        raw = raw.reshape(-1, 1)
    targets = np.asarray(targets, dtype=float).reshape(-1)
    if raw.ndim != 2 or raw.shape[1] < 1:
        raise ShapeMismatch("raw rows must be a matrix with at least one column")
    if targets.shape[0] != raw.shape[1]:
        raise ShapeMismatch(f"{raw.shape[1]} columns but {targets.shape[0]} targets")
    if not (np.all(np.isfinite(raw)) and np.all(np.isfinite(targets))):
        raise NonFiniteError("constraint inputs contain nan or inf")
    return ConstraintMatrix(raw - targets)


def dual_objective(lam, U):
    U = _as_constraints(U)
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.shape[0] != U.r:
        raise ShapeMismatch(f"lambda has {lam.shape[0]} entries, U has {U.r} columns")
    z = U.values @ lam
    if np.any(1.0 + z <= 0):
        raise InfeasibleLambda("1 + lambda'U_i <= 0 for some row")
    return float(np.sum(np.log1p(z)))


# -- compiled kernels --------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _cholesky_solve(A, b):
    r = A.shape[0]
    L = np.zeros((r, r))
    scale = 0.0
    for j in range(r):
        if A[j, j] > scale:
            scale = A[j, j]
    x = np.zeros(r)
    for j in range(r):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 1e-13 * scale:
            return x, False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, r):
            v = A[i, j]
            for k in range(j):
                v -= L[i, k] * L[j, k]
            L[i, j] = v / L[j, j]
    z = np.zeros(r)
    for i in range(r):
        v = b[i]
        for k in range(i):
            v -= L[i, k] * z[k]
        z[i] = v / L[i, i]
    for i in range(r - 1, -1, -1):
        v = z[i]
        for k in range(i + 1, r):
            v -= L[k, i] * x[k]
        x[i] = v / L[i, i]
    return x, True


@numba.njit(cache=True, nogil=True)
def _ridged_solve(M, g, hessian_ridge, ladder):
    r = M.shape[0]
    A = M.copy()
    if hessian_ridge > 0.0:
        for i in range(r):
            A[i, i] += hessian_ridge
    x, ok = _cholesky_solve(A, g)
    if ok:
        return x, True
    mean_diag = 0.0
    for i in range(r):
        mean_diag += M[i, i]
    mean_diag /= r
    if mean_diag <= 0.0:
        mean_diag = 1.0
    for c in ladder:
        A = M.copy()
        for i in range(r):
            A[i, i] += hessian_ridge + c * mean_diag
        x, ok = _cholesky_solve(A, g)
        if ok:
            return x, True
    return x, False


@numba.njit(cache=True, nogil=True)
def _dual_newton(U, eps, max_iter, hessian_ridge, ladder, trace):
    """Damped Newton ascent on sum(log(1 + lam'U_i)) starting at lam = 0.

    Returns (lam, accepted_steps, status, |gradient|, |newton step|,
    trace_length). ``trace[t]`` receives the dual value after ``t`` accepted
    steps; on convergence one extra entry records the final full step.
    """
    n, r = U.shape
    lam = np.zeros(r)
    z = np.zeros(n)
    obj = 0.0
    trace[0] = 0.0
    t = 0
    tol = 1e-14 * n
    while True:
        grad = np.zeros(r)
        M = np.zeros((r, r))
        for i in range(n):
            inv = 1.0 / (1.0 + z[i])
            for a in range(r):
                ua = U[i, a] * inv
                grad[a] += ua
                for b in range(a + 1):
                    M[a, b] += ua * U[i, b] * inv
        for a in range(r):
            for b in range(a + 1, r):
                M[a, b] = M[b, a]
        gnorm = 0.0
        for a in range(r):
            gnorm += grad[a] * grad[a]
        gnorm = np.sqrt(gnorm)
        # Hessian is -M, so the Newton step lam - H^{-1} grad is lam + x.
        x, ok = _ridged_solve(M, grad, hessian_ridge, ladder)
        if not ok:
            return lam, t, 3, gnorm, np.nan, t + 1
        step = 0.0
        for a in range(r):
            step += x[a] * x[a]
        step = np.sqrt(step)
        if step < eps:
            # The certified Newton step is already computed; taking it is
            # free and moves lam to quadratic accuracy.
            nt = t + 1
            feasible = True
            cobj = 0.0
            cand = np.zeros(r)
            for a in range(r):
                cand[a] = lam[a] + x[a]
            for i in range(n):
                v = 0.0
                for a in range(r):
                    v += U[i, a] * cand[a]
                if not 1.0 + v > 0.0:
                    feasible = False
                    break
                cobj += np.log1p(v)
            if feasible and cobj >= obj - tol * (1.0 + abs(obj)):
                lam = cand
                trace[t + 1] = cobj
                nt = t + 2
            return lam, t, 0, gnorm, step, nt
        if t >= max_iter:
            return lam, t, 1, gnorm, step, t + 1
        gamma = 1.0 / np.sqrt(t + 1.0)
        cand = np.zeros(r)
        zc = np.zeros(n)
        while True:
            for a in range(r):
                cand[a] = lam[a] + gamma * x[a]
            feasible = True
            cobj = 0.0
            for i in range(n):
                v = 0.0
                for a in range(r):
                    v += U[i, a] * cand[a]
                if not 1.0 + v > 0.0:
                    feasible = False
                    break
                zc[i] = v
                cobj += np.log1p(v)
            if feasible and cobj >= obj - tol * (1.0 + abs(obj)):
                break
            gamma *= 0.5
            if gamma < 1e-12:
                return lam, t, 2, gnorm, step, t + 1
        lam = cand.copy()
        z = zc.copy()
        obj = cobj
        t += 1
        trace[t] = obj


def _run_newton(values, opts):
    """Solve on column-standardized rows; returns lam in original units."""
    scale = np.sqrt(np.mean(values * values, axis=0))
    scale[scale == 0] = 1.0
    Us = np.ascontiguousarray(values / scale)
    trace = np.empty(int(opts.max_iterations) + 2)
    lam_s, t, status, gnorm, step, nt = _dual_newton(
        Us, float(opts.epsilon), int(opts.max_iterations),
        float(opts.hessian_ridge), np.array(_RIDGE_LADDER), trace)
    denom = 1.0 + Us @ lam_s
    return (lam_s / scale, denom, int(t), int(status), float(gnorm), float(step),
            trace[:nt].copy())


def _one_sided_column(values):
    pos = np.all(values >= 0, axis=0) & np.any(values > 0, axis=0)
    neg = np.all(values <= 0, axis=0) & np.any(values < 0, axis=0)
    return bool(np.any(pos | neg))


def _solve_plain(U, opts):
    values = U.values
    if U.n_rows < 2:
        raise ShapeMismatch("at least two constraint rows are required")
    if _one_sided_column(values):
        raise HullViolation("a constraint column has one sign only; zero is "
                            "outside the convex hull of the rows")
    lam, denom, t, status, gnorm, step, trace = _run_newton(values, opts)
    if status == _SINGULAR:
        raise SingularHessian("Newton system singular even after ridge repair")
    if status == _STEP_UNDERFLOW:
        raise HullViolation(f"no ascent step after halving below {_MIN_GAMMA:g} "
                            f"(iteration {t})")
    if status == _MAX_ITER:
        raise ConvergenceFailure(f"no convergence in {opts.max_iterations} "
                                 f"iterations (|step|={step:.3g})")
    w = 1.0 / (U.n_rows * denom)
    w = w / w.sum()
    return DualSolution(lam=lam, weights=w, iterations=t, converged=True,
                        augmented=False, gradient_norm=gnorm, step_norm=step,
                        objective_trace=trace, residual=w @ values)


def solve_weights(U, opts=None):
    """Empirical-likelihood weights for centered constraint rows ``U``.

    Parameters
    ----------
    U : ConstraintMatrix or array-like of shape (n, r)
    opts : SolverOptions, optional

    Returns
    -------
    DualSolution

    Raises
    ------
    HullViolation, ConvergenceFailure
        Only when ``opts.auto_augment`` is false; otherwise the augmented
        solve is tried and its errors propagate.
    SingularHessian
    """
    opts = opts or SolverOptions()
    U = _as_constraints(U)
    try:
        return _solve_plain(U, opts)
    except (HullViolation, ConvergenceFailure):
        if not opts.auto_augment:
            raise
    return solve_weights_augmented(U, opts)


def augment(U, s=2.0):
    """Append the two mean-preserving artificial rows.

    The rows are ``-s c u`` and ``2 Ubar + s c u`` where ``Ubar`` is the row
    mean, ``u = Ubar / |Ubar|`` and ``c = (u' S^-1 u)^(-1/2)`` with ``S`` the
    sample covariance of the rows.
    """
    U = _as_constraints(U)
    if not s > 0:
        raise ValueError("augmentation scale must be positive")
    values = U.values
    if U.n_rows < 2:
        raise ShapeMismatch("at least two rows are needed to augment")
    ubar = values.mean(axis=0)
    norm = np.linalg.norm(ubar)
    if norm == 0:
        raise ZeroMeanDirection("row mean is the zero vector; no direction to augment along")
    u = ubar / norm
    S = np.atleast_2d(np.cov(values, rowvar=False, ddof=1))
    try:
        x = np.linalg.solve(np.linalg.cholesky(S).T,
                            np.linalg.solve(np.linalg.cholesky(S), u))
    except np.linalg.LinAlgError:
        S = S + 1e-8 * np.mean(np.diag(S)) * np.eye(U.r)
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise SingularCovariance("row covariance is singular") from None
        x = np.linalg.solve(L.T, np.linalg.solve(L, u))
    c = float(u @ x) ** -0.5
    extra = np.vstack([-s * c * u, 2.0 * ubar + s * c * u])
    return ConstraintMatrix(np.vstack([values, extra]))


def solve_weights_augmented(U, opts=None):
    opts = opts or SolverOptions()
    U = _as_constraints(U)
    if not np.any(U.values):
        w = np.full(U.n_rows, 1.0 / U.n_rows)
        return DualSolution(lam=np.zeros(U.r), weights=w, iterations=0,
                            converged=True, augmented=True, gradient_norm=0.0,
                            step_norm=0.0, objective_trace=np.zeros(1),
                            residual=np.zeros(U.r))
    Ua = augment(U, opts.augmentation_scale)
    lam, denom, t, status, gnorm, step, trace = _run_newton(Ua.values, opts)
    if status == _SINGULAR:
        raise SingularHessian("augmented Newton system singular")
    if status == _STEP_UNDERFLOW:
        raise HullViolation("augmented sample still admits no ascent step")
    if status == _MAX_ITER:
        raise ConvergenceFailure(f"augmented solve did not converge in "
                                 f"{opts.max_iterations} iterations")
    w_all = 1.0 / (Ua.n_rows * denom)
    w = w_all[:U.n_rows]
    w = w / w.sum()
    return DualSolution(lam=lam, weights=w, iterations=t, converged=True,
                        augmented=True, gradient_norm=gnorm, step_norm=step,
                        objective_trace=trace, residual=w @ U.values)


__all__ = [
    "ConstraintMatrix", "SolverOptions", "DualSolution", "SolverError",
    "center_constraints", "dual_objective", "solve_weights", "augment",
    "solve_weights_augmented",
]
