"""End-to-end acceptance checks.

Every test prints one ``CRITERION k: PASS`` or ``CRITERION k: FAIL`` line with
the measured quantities, then asserts the same condition. The Monte Carlo
checks are marked ``slow``; ``pytest -m "not slow"`` skips them.
"""

import json
import time

import numpy as np
import pytest

from conftest import interior_instance, make_trial, primal_el_weights
from elw.cli import main
from elw.dataio import write_csv
from elw.el_core import augment, solve_weights
from elw.estimators import (ELWEstimator, estimate_elw, estimate_elw_missing,
                            estimate_hw, estimate_qz, estimate_unadjusted)
from elw.inference import bootstrap_se, if_variance_nomissing
from elw.models import IdentityModel, LinearModel, LogisticModel, fit_model_slots
from elw.simlab import (ScenarioConfig, default_estimators, gen_sim2, run_monte_carlo,
                        sim3_robustness_estimators, sim4_estimator)


@pytest.fixture
def report(capsys):
    """Print a verdict line past pytest's capture and return the verdict."""

    def _report(k, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return _report


def _rows(cfg, estimators):
    return {row.estimator: row for row in run_monte_carlo(cfg, estimators)}


def test_criterion_01_dual_matches_primal_oracle(report):
    rng = np.random.default_rng(2001)
    worst = 0.0
    start = time.perf_counter()
    for _ in range(200):
        r = int(rng.integers(1, 3))
        n = int(rng.integers(r + 2, 7))
        U = interior_instance(rng, n, r)
        got = solve_weights(U).weights
        worst = max(worst, float(np.max(np.abs(got - primal_el_weights(U)))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-5 and elapsed < 5.0
    assert report(1, ok, f"max weight error {worst:.2e}, {elapsed:.2f} s")


def test_criterion_02_scalar_closed_form(report):
    sol = solve_weights([[-1.0], [0.0], [2.0]])
    lam_err = abs(sol.lam[0] - 0.25)
    w_err = float(np.max(np.abs(sol.weights - [4 / 9, 1 / 3, 2 / 9])))
    ok = lam_err <= 1e-10 and w_err <= 1e-10
    assert report(2, ok, f"lambda error {lam_err:.1e}, weight error {w_err:.1e}")


def test_criterion_03_augmentation_preserves_mean(report):
    rng = np.random.default_rng(2003)
    worst = 0.0
    for _ in range(1000):
        n, r = int(rng.integers(3, 40)), int(rng.integers(1, 5))
        U = rng.standard_normal((n, r)) * rng.uniform(0.1, 10, size=r) + rng.normal(size=r)
        before = U.mean(axis=0)
        after = augment(U, float(rng.uniform(0.5, 4.0))).values.mean(axis=0)
        worst = max(worst, np.max(np.abs(after - before)) / np.max(np.abs(before)))
    ok = worst <= 1e-12
    assert report(3, ok, f"max relative mean change {worst:.2e}")


@pytest.mark.slow
def test_criterion_04_sim2_linear(report):
    cfg = ScenarioConfig("sim2_linear", n=400, reps=1000, bootstrap_B=500, seed=4)
    rows = _rows(cfg, default_estimators("sim2_linear")[:2])
    elw, una = rows["ELW-Identity"], rows["Unadjusted"]
    ratio = una.ave_boot_se / elw.ave_boot_se
    ok = (abs(elw.bias - 0.028) <= 0.06 and abs(elw.mse / 0.400 - 1) <= 0.20
          and 0.93 <= elw.cov_prob_boot <= 0.97 and ratio >= 4)
    assert report(4, ok, f"bias {elw.bias:.3f}, SE {elw.ave_boot_se:.3f}, "
                         f"coverage {elw.cov_prob_boot:.3f}, MSE {elw.mse:.3f}, "
                         f"SE ratio {ratio:.2f}")


@pytest.mark.slow
def test_criterion_05_sim2_nonlinear(report):
    cfg = ScenarioConfig("sim2_nonlinear", n=400, reps=1000, seed=5)
    rows = _rows(cfg, default_estimators("sim2_nonlinear")[:2])
    elw, una = rows["ELW-Identity"].mse, rows["Unadjusted"].mse
    ok = abs(elw / 0.856 - 1) <= 0.25 and una / elw >= 10
    assert report(5, ok, f"ELW MSE {elw:.3f}, unadjusted MSE {una:.3f}, "
                         f"ratio {una / elw:.1f}")


@pytest.mark.slow
def test_criterion_06_sim3_missing_outcomes(report):
    cfg = ScenarioConfig("sim3", n=400, reps=500, seed=6)
    rows = _rows(cfg, default_estimators("sim3"))
    elw, qz = rows["Linear"].mse, rows["Linear.qz"].mse
    checks = {"elw_mis band": abs(elw / 0.368 - 1) <= 0.25,
              "qz band": abs(qz / 4.714 - 1) <= 0.25,
              "ordering": qz / elw >= 5}
    failed = [k for k, v in checks.items() if not v]
    assert report(6, not failed, f"elw_mis MSE {elw:.3f}, qz MSE {qz:.3f}, "
                                 f"ratio {qz / elw:.1f}, failed: {failed or 'none'}")


@pytest.mark.slow
def test_criterion_07_double_robustness(report):
    cfg = ScenarioConfig("sim3", n=400, reps=500, seed=7)
    rows = run_monte_carlo(cfg, sim3_robustness_estimators())
    ok = all(abs(row.bias) <= 3 * row.mc_se for row in rows)
    detail = ", ".join(f"{row.estimator} bias {row.bias:.3f} (MCSE {row.mc_se:.3f})"
                       for row in rows)
    assert report(7, ok, detail)


@pytest.mark.slow
def test_criterion_08_sim4_multiple_robustness(report):
    cfg = ScenarioConfig("sim4", n=400, reps=500, seed=8)
    tags = ["ELW-10101010", "HW-10101010", "ELW-01010101", "ELW-10111011",
            "ELW-11101110"]
    rows = _rows(cfg, [(t, sim4_estimator(t, "arm" if t.startswith("HW") else "pooled"))
                       for t in tags])
    best = rows["ELW-10101010"].mse
    wrong = rows["ELW-01010101"]
    checks = {"all-correct band": abs(best / 0.087 - 1) <= 0.5,
              "HW ordering": rows["HW-10101010"].mse / best >= 5,
              "all-wrong bias": abs(wrong.bias) > 3 * wrong.mc_se,
              "all-wrong MSE": wrong.mse > 3,
              "10111011": rows["ELW-10111011"].mse <= 2 * best,
              "11101110": rows["ELW-11101110"].mse <= 2 * best}
    failed = [k for k, v in checks.items() if not v]
    detail = ", ".join(f"{t} MSE {rows[t].mse:.3f}" for t in tags)
    assert report(8, not failed, f"{detail}, all-wrong bias {wrong.bias:.3f} "
                                 f"(MCSE {wrong.mc_se:.3f}), failed: {failed or 'none'}")


@pytest.mark.slow
def test_criterion_09_plug_in_matches_bootstrap(report):
    cfg = ScenarioConfig("sim2_linear", n=2000, reps=1)
    est = ELWEstimator([IdentityModel()], [IdentityModel()])
    ratios = []
    for k in range(20):
        d = gen_sim2(cfg, np.random.default_rng([9, k]))
        boot = bootstrap_se(d, est, B=500, seed=(9, k)).se
        plug = if_variance_nomissing(d, IdentityModel(), IdentityModel()).se
        ratios.append(plug / boot)
    worst = max(abs(q - 1) for q in ratios)
    ok = worst <= 0.15
    assert report(9, ok, f"plug-in/bootstrap SE ratios in [{min(ratios):.3f}, "
                         f"{max(ratios):.3f}]")


def test_criterion_10_regime_degeneracies(report):
    rng = np.random.default_rng(2010)
    d = make_trial(rng.standard_normal((50, 2)), rng.standard_normal(50), np.tile([1, 0], 25))
    empty = abs(estimate_elw(d, IdentityModel(features=[]), IdentityModel(features=[])).theta_hat
                - estimate_unadjusted(d).theta_hat)

    full = gen_sim2(ScenarioConfig("sim2_linear", n=300, reps=1), rng)
    slots = fit_model_slots({"outcome_treated": [IdentityModel()],
                             "outcome_control": [IdentityModel()]}, full)
    no_missing = (estimate_elw_missing(full, slots).theta_hat
                  == estimate_elw(full, IdentityModel(), IdentityModel()).theta_hat)

    x = rng.standard_normal((40, 2))
    X = np.vstack([x, x])
    w = np.repeat([1, 0], 40)
    y = X @ [1.0, 2.0] + rng.standard_normal(80) + 3 * w
    r = np.ones(80, dtype=int)
    r[[2, 9, 45, 71]] = 0
    twin = make_trial(X, y, w, r)
    twin_slots = fit_model_slots({"outcome_treated": [LinearModel()],
                                  "outcome_control": [LinearModel()],
                                  "propensity_treated": [LogisticModel()],
                                  "propensity_control": [LogisticModel()]}, twin)
    same = (estimate_qz(twin, twin_slots).theta_hat
            == estimate_elw_missing(twin, twin_slots).theta_hat
            == estimate_hw(twin, twin_slots).theta_hat)

    ok = empty <= 1e-12 and no_missing and same
    assert report(10, ok, f"empty-constraint gap {empty:.1e}, elw_mis == elw: {no_missing}, "
                          f"qz == elw_mis: {same}")


@pytest.mark.slow
def test_criterion_11_cli_thread_determinism(report, capsys, tmp_path):
    d = gen_sim2(ScenarioConfig("sim2_linear", n=300, reps=1), np.random.default_rng(11))
    data = tmp_path / "d.csv"
    write_csv(d, data)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({
        "spec_version": "1", "schema": {"covariate_columns": ["X1", "X2", "X3"]},
        "estimators": [{"name": "Unadjusted", "method": "unadjusted"},
                       {"name": "ELW", "method": "elw", "models": [
                           {"arm": "treated", "family": "linear"},
                           {"arm": "control", "family": "linear"}]}],
        "bootstrap": {"replicates": 100}, "seed": 5}))
    commands = {
        "simulate": ["simulate", "--scenario", "sim2-linear", "--n", "200", "--reps", "12",
                     "--bootstrap", "20", "--seed", "11"],
        "simulate sim4": ["simulate", "--scenario", "sim4", "--n", "300", "--reps", "8",
                          "--seed", "11", "--format", "csv"],
        "estimate": ["estimate", "--data", str(data), "--config", str(cfg)],
    }
    verdicts = {}
    for name, argv in commands.items():
        outputs = set()
        for threads in ("1", "2", "8"):
            assert main(argv + ["--threads", threads]) == 0
            outputs.add(capsys.readouterr().out)
        verdicts[name] = len(outputs) == 1
    ok = all(verdicts.values())
    assert report(11, ok, ", ".join(f"{k}: {'identical' if v else 'differs'}"
                                   for k, v in verdicts.items()))

