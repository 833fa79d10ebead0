"""Simulation designs and the Monte Carlo harness.

Each generator maps a :class:`ScenarioConfig` and a ``numpy`` Generator to a
:class:`~elw.trial.TrialData`. Replicate ``k`` of a run draws its data from
``default_rng([seed, k, 0])`` and its bootstrap from ``[seed, k, 1, b]``, so
tables do not depend on how replicates are scheduled across threads.

Missingness indicators are always drawn from covariates (and auxiliaries)
before any outcome is generated; outcomes never feed back into ``R``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit

from .estimators import ELWEstimator, Unadjusted
from .exceptions import AllReplicatesFailed, BadMoments, ConfigError, ELWError
from .inference import Z975, _as_statistic, bootstrap_se
from .models import IdentityModel, LinearModel, LogisticModel
from .trial import TrialData

SCENARIOS = ("sim2_linear", "sim2_nonlinear", "sim3", "sim4", "custom")

#: ``Normal(a, b)`` in the published designs is read as mean ``a`` and
#: variance ``b``. Flip to ``False`` to read ``b`` as a standard deviation.
NORMAL_SECOND_PARAMETER_IS_VARIANCE = True

# Linear/nonlinear design with three correlated Gaussian covariates.
SIM2_MEAN = np.array([1.0, 2.0, 3.0])
SIM2_COV = np.array([[1.0, 1.0, 1.0], [1.0, 2.0, 2.0], [1.0, 2.0, 3.0]])
SIM2_SD = {1: 4.0, 0: 6.0}
SIM2_BETA = {
    "sim2_linear": {1: (3.0, 10.0, 13.0, 10.0), 0: (5.0, 7.0, 10.0, 9.0)},
    # Arm labels chosen so the effect is +10 (E sin X1 = sin(1) exp(-1/2)).
    "sim2_nonlinear": {1: (9.0, 19.593, 13.0, 10.0), 0: (12.0, 11.756, 10.0, 9.0)},
}

# Missing-outcome design with four independent covariates.
SIM3_BETA = {1: (10.0, 8.0, 11.0, 10.0, 4.0), 0: (5.0, 7.0, 10.0, 9.0, 6.0)}
SIM3_SD = {1: 6.0, 0: 4.0}
SIM3_ALPHA = {1: (-5.147, -0.3, 0.8, 0.5, 0.3), 0: (-3.247, 0.2, -0.3, 0.4, 0.5)}

# Multiple-robustness design with three auxiliary variables.
SIM4_BETA = {1: (10.0, 8.0, 12.0, 10.0, 4.0), 0: (6.0, 7.0, 10.0, 9.0, 6.0)}
SIM4_NOISE_COV = np.array([[2.0, 0.5, 0.0, 0.0],
                           [0.5, 2.0, 0.0, 0.0],
                           [0.0, 0.0, 1.0, 0.0],
                           [0.0, 0.0, 0.0, 1.0]])
SIM4_NAMES = ("X1", "X2", "X3", "X4", "S1", "S2", "S3")
SIM4_MODELS = {
    "pi1": ("logistic", ("S2",)),
    "pi2": ("logistic", ("X1", "X2", "X3", "X4", "S1")),
    "g1": ("linear", ("X1", "X2", "X3", "X4", "S1")),
    "g2": ("linear", ("S1", "S2", "S3")),
}


def _normal_scale(b):
    return np.sqrt(b) if NORMAL_SECOND_PARAMETER_IS_VARIANCE else float(b)


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation setting.

    ``params`` holds scenario-specific overrides: ``alpha_treated`` and
    ``alpha_control`` for ``sim3``; the covariate moments, coefficients and
    error SDs for ``custom`` (see :func:`gen_custom`).
    """

    scenario: str
    n: int = 400
    delta: float = 0.5
    reps: int = 1000
    bootstrap_B: int = 0
    seed: int = 0
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        scenario = self.scenario.replace("-", "_")
        object.__setattr__(self, "scenario", scenario)
        if scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}", "$.scenario")
        if int(self.n) < 20:
            raise ConfigError(f"n must be at least 20, got {self.n}", "$.n")
        if not 0.0 < float(self.delta) < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}", "$.delta")
        if int(self.reps) < 1:
            raise ConfigError(f"reps must be at least 1, got {self.reps}", "$.reps")
        if int(self.bootstrap_B) < 0 or int(self.bootstrap_B) == 1:
            raise ConfigError("bootstrap_B must be 0 (off) or at least 2",
                              "$.bootstrap_B")


@dataclass(frozen=True)
class MetricsRow:
    """Monte Carlo summary for one estimator.

    ``cov_prob_boot`` is the share of replicates whose estimate lies within
    1.959964 average bootstrap SEs of the truth. ``mc_se`` is the Monte Carlo
    standard error of the mean estimate. Both SE columns are ``nan`` when no
    bootstrap was run.
    """

    estimator: str
    bias: float
    ave_boot_se: float
    cov_prob_boot: float
    mse: float
    mc_se: float
    reps_used: int
    failures: int
    estimates: np.ndarray = field(default=None, repr=False, compare=False)
    boot_ses: np.ndarray = field(default=None, repr=False, compare=False)


# -- generators --------------------------------------------------------------

def _assign(cfg, rng):
    return (rng.random(cfg.n) < cfg.delta).astype(np.int64)


def _pack(w, r, y, x, names):
    y = np.where(r == 1, y, np.nan)
    return TrialData(w, r.astype(np.int64), y, x, tuple(names))


def gen_sim2(cfg, rng=None):
    """Three correlated Gaussian covariates; linear or sin(X1) outcome."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    if cfg.scenario not in SIM2_BETA:
        raise ConfigError(f"gen_sim2 cannot generate {cfg.scenario!r}", "$.scenario")
    w = _assign(cfg, rng)
    x = SIM2_MEAN + rng.standard_normal((cfg.n, 3)) @ np.linalg.cholesky(SIM2_COV).T
    eps = rng.standard_normal(cfg.n)
    f1 = np.sin(x[:, 0]) if cfg.scenario == "sim2_nonlinear" else x[:, 0]
    design = np.column_stack([np.ones(cfg.n), f1, x[:, 1], x[:, 2]])
    beta = SIM2_BETA[cfg.scenario]
    y = np.where(w == 1, design @ beta[1] + SIM2_SD[1] * eps,
                 design @ beta[0] + SIM2_SD[0] * eps)
    return _pack(w, np.ones(cfg.n, dtype=np.int64), y, x, ("X1", "X2", "X3"))


def _sim3_covariates(n, rng):
    s = _normal_scale
    return np.column_stack([1.0 + s(3.0) * rng.standard_normal(n),
                            2.0 + s(3.0) * rng.standard_normal(n),
                            3.0 + s(1.0) * rng.standard_normal(n),
                            (rng.random(n) < 0.5).astype(float)])


def gen_sim3(cfg, rng=None):
    """Four independent covariates; outcomes missing through arm-wise logits.

    ``alpha`` vectors give the log-odds of a *missing* outcome; with the
    default pair roughly one outcome in seven is missing.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    alpha = {1: np.asarray(cfg.params.get("alpha_treated", SIM3_ALPHA[1]), float),
             0: np.asarray(cfg.params.get("alpha_control", SIM3_ALPHA[0]), float)}
    for arm, a in alpha.items():
        if a.shape != (5,):
            raise ConfigError("sim3 alpha vectors need 5 entries",
                              f"$.params.alpha_{'treated' if arm else 'control'}")
    w = _assign(cfg, rng)
    x = _sim3_covariates(cfg.n, rng)
    design = np.column_stack([np.ones(cfg.n), x])
    p_missing = np.where(w == 1, expit(design @ alpha[1]), expit(design @ alpha[0]))
    r = (rng.random(cfg.n) >= p_missing).astype(np.int64)
    eps = rng.standard_normal(cfg.n)
    y = np.where(w == 1, design @ SIM3_BETA[1] + SIM3_SD[1] * eps,
                 design @ SIM3_BETA[0] + SIM3_SD[0] * eps)
    return _pack(w, r, y, x, ("X1", "X2", "X3", "X4"))


def gen_sim4(cfg, rng=None):
    """Covariates X1..X4 plus auxiliaries S1..S3; about 37% missing outcomes."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    n = cfg.n
    w = _assign(cfg, rng)
    x = np.column_stack([5.0 + rng.standard_normal(n),
                         (rng.random(n) < 0.5).astype(float),
                         rng.standard_normal(n),
                         rng.standard_normal(n)])
    noise = rng.standard_normal((n, 4)) @ np.linalg.cholesky(SIM4_NOISE_COV).T
    eps_y, e1, e2, e3 = noise.T
    s1 = 1.0 + x[:, 0] - x[:, 1] + e1
    s2 = (s1 + 0.3 * e2 > 5.8).astype(float)
    s3 = np.exp((s1 / 9.0) ** 2) + e3
    r = (rng.random(n) < expit(3.5 - 5.0 * s2)).astype(np.int64)
    design = np.column_stack([np.ones(n), x])
    y = np.where(w == 1, design @ SIM4_BETA[1], design @ SIM4_BETA[0]) + eps_y
    return _pack(w, r, y, np.column_stack([x, s1, s2, s3]), SIM4_NAMES)


def _custom_moments(params):
    try:
        mean = np.asarray(params.get("gaussian_mean", []), float).reshape(-1)
        cov = np.asarray(params.get("gaussian_cov", np.zeros((mean.size, mean.size))),
                         float).reshape(mean.size, mean.size)
        probs = np.asarray(params.get("bernoulli_p", []), float).reshape(-1)
        k = mean.size + probs.size
        b1 = np.asarray(params["beta_treated"], float).reshape(-1)
        b0 = np.asarray(params["beta_control"], float).reshape(-1)
        sd = np.asarray(params.get("error_sd", [1.0, 1.0]), float).reshape(2)
    except (KeyError, ValueError) as exc:
        raise BadMoments(f"custom scenario parameters: {exc}") from None
    if k == 0:
        raise BadMoments("custom scenario needs at least one covariate")
    if b1.size != k + 1 or b0.size != k + 1:
        raise BadMoments(f"coefficient vectors need {k + 1} entries (intercept first)")
    if not (np.all(np.isfinite(cov)) and np.allclose(cov, cov.T)):
        raise BadMoments("covariance must be finite and symmetric")
    if mean.size:
        vals, vecs = np.linalg.eigh(cov)
        if vals.min() < -1e-10 * max(1.0, abs(vals).max()):
            raise BadMoments("covariance is not positive semidefinite")
        root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    else:
        root = np.zeros((0, 0))
    if np.any((probs < 0) | (probs > 1)):
        raise BadMoments("Bernoulli proportions must lie in [0, 1]")
    if np.any(sd < 0):
        raise BadMoments("error SDs must be non-negative")
    return mean, root, probs, b1, b0, sd


def gen_custom(cfg, rng=None):
    """User-described design.

    ``cfg.params`` keys: ``gaussian_mean``, ``gaussian_cov``, ``bernoulli_p``,
    ``beta_treated`` and ``beta_control`` (intercept first, Gaussian columns
    then Bernoulli columns), ``error_sd`` as ``[treated, control]`` and
    optionally ``alpha_treated``/``alpha_control`` giving the log-odds of a
    missing outcome.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    mean, root, probs, b1, b0, sd = _custom_moments(cfg.params)
    n = cfg.n
    w = _assign(cfg, rng)
    gauss = mean + rng.standard_normal((n, mean.size)) @ root.T
    bern = (rng.random((n, probs.size)) < probs).astype(float)
    x = np.column_stack([gauss, bern])
    design = np.column_stack([np.ones(n), x])
    r = np.ones(n, dtype=np.int64)
    if "alpha_treated" in cfg.params or "alpha_control" in cfg.params:
        zero = np.full(x.shape[1] + 1, -np.inf)
        a1 = np.asarray(cfg.params.get("alpha_treated", zero), float)
        a0 = np.asarray(cfg.params.get("alpha_control", zero), float)
        if a1.shape != (x.shape[1] + 1,) or a0.shape != (x.shape[1] + 1,):
            raise BadMoments("alpha vectors need one entry per covariate plus intercept")
        with np.errstate(invalid="ignore"):
            p_missing = np.where(w == 1, expit(design @ a1), expit(design @ a0))
        r = (rng.random(n) >= np.nan_to_num(p_missing)).astype(np.int64)
    eps = rng.standard_normal(n)
    y = np.where(w == 1, design @ b1 + sd[0] * eps, design @ b0 + sd[1] * eps)
    names = [f"X{j + 1}" for j in range(x.shape[1])]
    return _pack(w, r, y, x, names)


GENERATORS = {"sim2_linear": gen_sim2, "sim2_nonlinear": gen_sim2,
              "sim3": gen_sim3, "sim4": gen_sim4, "custom": gen_custom}


def generate(cfg, rng=None):
    return GENERATORS[cfg.scenario](cfg, rng)


def true_theta(cfg):
    """Population average treatment effect of the scenario."""
    if cfg.scenario != "custom":
        return 10.0
    mean, _, probs, b1, b0, _ = _custom_moments(cfg.params)
    ex = np.concatenate([[1.0], mean, probs])
    return float((b1 - b0) @ ex)


# -- estimator sets ------------------------------------------------------------

def _build(spec, names):
    family, feats = spec
    idx = [names.index(f) for f in feats]
    return {"logistic": LogisticModel, "linear": LinearModel,
            "identity": IdentityModel}[family](features=idx)


def sim4_estimator(code, targets="pooled"):
    """Estimator for a Simulation-4 model code such as ``"10101010"``.

    The digits, left to right, switch on the treated propensity models 1 and
    2, the treated outcome models 1 and 2, then the same four for control.
    Model 1 of each kind is correctly specified, model 2 is not.
    """
    code = code.removeprefix("ELW-").removeprefix("HW-")
    if len(code) != 8 or set(code) - {"0", "1"}:
        raise ValueError(f"model code must be 8 binary digits, got {code!r}")
    keys = ("pi1", "pi2", "g1", "g2")
    arms = {}
    for arm, digits in (("treated", code[:4]), ("control", code[4:])):
        chosen = [k for k, d in zip(keys, digits) if d == "1"]
        arms[arm] = ([_build(SIM4_MODELS[k], SIM4_NAMES) for k in chosen if k[0] == "p"],
                     [_build(SIM4_MODELS[k], SIM4_NAMES) for k in chosen if k[0] == "g"])
    return ELWEstimator(outcome_treated=arms["treated"][1],
                        outcome_control=arms["control"][1],
                        propensity_treated=arms["treated"][0],
                        propensity_control=arms["control"][0],
                        targets=targets)


def _elw(outcome, propensity=None, targets="pooled"):
    return ELWEstimator(outcome_treated=[outcome], outcome_control=[outcome],
                        propensity_treated=[propensity] if propensity else None,
                        propensity_control=[propensity] if propensity else None,
                        targets=targets)


def default_estimators(scenario, missing=True):
    """Estimator list used by ``simulate`` for each scenario.

    ``missing`` only matters for ``custom``: it adds logistic propensity
    models when the design has missing outcomes.
    """
    scenario = scenario.replace("-", "_")
    if scenario in ("sim2_linear", "sim2_nonlinear"):
        return [("Unadjusted", Unadjusted()),
                ("ELW-Identity", _elw(IdentityModel())),
                ("ELW-Linear", _elw(LinearModel()))]
    if scenario == "sim3":
        est = []
        for targets, suffix in (("pooled", ""), ("arm", ".qz")):
            est.append((f"Identity{suffix}", _elw(IdentityModel(), LogisticModel(), targets)))
            est.append((f"Linear{suffix}", _elw(LinearModel(), LogisticModel(), targets)))
        return est
    if scenario == "sim4":
        est = []
        for code in ("10101010", "01010101", "11111111", "10111011", "11101110"):
            est.append((f"ELW-{code}", sim4_estimator(code)))
            est.append((f"HW-{code}", sim4_estimator(code, "arm")))
        return est
    if scenario == "custom":
        return [("Unadjusted", Unadjusted(observed_only=True)),
                ("ELW-Identity", _elw(IdentityModel(),
                                      LogisticModel() if missing else None))]
    raise ConfigError(f"unknown scenario {scenario!r}", "$.scenario")


def custom_needs_propensity(cfg):
    return "alpha_treated" in cfg.params or "alpha_control" in cfg.params


def sim3_robustness_estimators():
    """Estimators with exactly one correct working model per arm.

    ``prop-correct`` pairs the true logistic propensity with an outcome model
    on X1 alone; ``outcome-correct`` pairs the true linear outcome model with
    an intercept-and-X4 propensity model.
    """
    return [("prop-correct", _elw(LinearModel(features=[0]), LogisticModel())),
            ("outcome-correct", _elw(LinearModel(), LogisticModel(features=[3])))]


# -- Monte Carlo -------------------------------------------------------------

def _replicate(cfg, statistics, k):
    data = generate(cfg, np.random.default_rng([cfg.seed, k, 0]))
    out = []
    for statistic, estimator in statistics:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                theta = float(statistic(data))
                se = np.nan
                if cfg.bootstrap_B:
                    se = bootstrap_se(data, estimator, cfg.bootstrap_B,
                                      seed=(cfg.seed, k, 1)).se
        except (ELWError, ValueError, np.linalg.LinAlgError):
            theta, se = np.nan, np.nan
        out.append((theta, se))
    return out


def summarize(tag, estimates, boot_ses, theta, bootstrap):
    estimates = np.asarray(estimates, float)
    boot_ses = np.asarray(boot_ses, float)
    ok = np.isfinite(estimates)
    if bootstrap:
        ok &= np.isfinite(boot_ses)
    used = int(np.count_nonzero(ok))
    if used == 0:
        raise AllReplicatesFailed(f"every replicate failed for {tag}")
    err = estimates[ok] - theta
    bias = float(err.mean())
    mse = float(np.mean(err ** 2))
    mc_se = float(np.std(estimates[ok], ddof=1) / np.sqrt(used)) if used > 1 else np.nan
    if bootstrap:
        ave_se = float(boot_ses[ok].mean())
        cover = float(np.mean(np.abs(err) <= Z975 * ave_se))
    else:
        ave_se = cover = float("nan")
    return MetricsRow(tag, bias, ave_se, cover, mse, mc_se, used,
                      int(estimates.size - used), estimates, boot_ses)


def run_monte_carlo(cfg, estimators=None, n_jobs=1):
    """Run ``cfg.reps`` replicates and summarize each estimator.

    Parameters
    ----------
    cfg : ScenarioConfig
    estimators : list of (tag, estimator) pairs, optional
        Estimators with ``fit_data`` or callables ``data -> float``. Defaults
        to :func:`default_estimators` for the scenario.
    n_jobs : int
        Worker threads over replicates; results do not depend on it.

    Returns
    -------
    list of MetricsRow, in the order the estimators were given.
    """
    if estimators is None:
        estimators = default_estimators(cfg.scenario, custom_needs_propensity(cfg))
    if not estimators:
        raise ValueError("at least one estimator is required")
    statistics = [(_as_statistic(est), est) for _, est in estimators]
    if n_jobs == 1:
        results = [_replicate(cfg, statistics, k) for k in range(cfg.reps)]
    else:
        results = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_replicate)(cfg, statistics, k) for k in range(cfg.reps))
    theta = true_theta(cfg)
    rows = []
    for j, (tag, _) in enumerate(estimators):
        est = [res[j][0] for res in results]
        ses = [res[j][1] for res in results]
        rows.append(summarize(tag, est, ses, theta, cfg.bootstrap_B > 0))
    return rows


__all__ = ["SCENARIOS", "ScenarioConfig", "MetricsRow", "gen_sim2", "gen_sim3",
           "gen_sim4", "gen_custom", "generate", "true_theta", "run_monte_carlo",
           "default_estimators", "sim4_estimator", "sim3_robustness_estimators",
           "summarize", "NORMAL_SECOND_PARAMETER_IS_VARIANCE"]
