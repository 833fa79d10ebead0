import numpy as np
import pytest
from scipy.linalg import null_space
from scipy.optimize import linprog

from elw.trial import check_trial_data


def primal_el_weights(U):
    """Maximize sum(log p) s.t. sum(p) = 1, sum(p_i U_i) = 0 in the primal.

    Independent of the dual solver: an LP finds a strictly interior feasible
    point, then damped Newton runs over the null space of the constraints.
    """
    U = np.atleast_2d(np.asarray(U, float))
    n, r = U.shape
    A = np.vstack([np.ones(n), U.T])
    b = np.concatenate([[1.0], np.zeros(r)])
    # maximize s subject to A p = b, p_i >= s
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_eq = np.hstack([A, np.zeros((r + 1, 1))])
    A_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    lp = linprog(c, A_ub=A_ub, b_ub=np.zeros(n), A_eq=A_eq, b_eq=b,
                 bounds=[(None, None)] * n + [(None, 1.0)], method="highs")
    assert lp.status == 0 and lp.x[-1] > 0, "zero is not interior to the hull"
    p = lp.x[:n]
    Z = null_space(A)
    if Z.shape[1] == 0:
        return p
    for _ in range(200):
        g = Z.T @ (1.0 / p)
        H = -(Z.T * (1.0 / p ** 2)) @ Z
        step = np.linalg.solve(H, -g)
        d = Z @ step
        t = 1.0
        f0 = np.sum(np.log(p))
        while np.any(p + t * d <= 0) or np.sum(np.log(p + t * d)) < f0 - 1e-15:
            t *= 0.5
            if t < 1e-14:
                break
        p = p + t * d
        if np.linalg.norm(g) < 1e-13 or np.linalg.norm(t * d) < 1e-15:
            break
    return p


def interior_instance(rng, n, r):
    """Random rows re-centered at a strictly positive convex combination."""
    raw = rng.standard_normal((n, r)) * rng.uniform(0.5, 3.0, size=r)
    mix = rng.dirichlet(np.ones(n))
    return raw - mix @ raw


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_trial(x, y, w, r=None, names=None):
    y = np.asarray(y, float).copy()
    if r is not None:
        y[np.asarray(r) == 0] = np.nan
    return check_trial_data(x, y, w, observed=r, covariate_names=names)
