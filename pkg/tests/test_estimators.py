import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_trial
from elw.el_core import SolverOptions
from elw.estimators import (ChangeScore, ELWEstimator, Unadjusted, arm_targets,
                            estimate_change_score, estimate_elw,
                            estimate_elw_missing, estimate_hw, estimate_qz,
                            estimate_unadjusted, pooled_targets)
from elw.exceptions import BadColumn, EmptyConstraints, ShapeMismatch
from elw.models import IdentityModel, LinearModel, LogisticModel, fit_model_slots
from elw.simlab import ScenarioConfig, gen_sim2, gen_sim3, gen_sim4, sim4_estimator


def _sim3(seed=0, n=400):
    return gen_sim3(ScenarioConfig("sim3", n=n, reps=1), np.random.default_rng(seed))


def _mis_models(d, outcome=LinearModel, propensity=LogisticModel):
    slots = {"propensity_treated": [propensity()], "propensity_control": [propensity()],
             "outcome_treated": [outcome()], "outcome_control": [outcome()]}
    return fit_model_slots(slots, d)


class TestTargets:
    def test_pooled(self):
        np.testing.assert_array_equal(pooled_targets([[1], [3]], [[5], [7]]), [4])

    def test_pooled_identical_arms(self, rng):
        a = rng.standard_normal((5, 2))
        np.testing.assert_allclose(pooled_targets(a, a), a.mean(axis=0))

    def test_pooled_shape(self):
        with pytest.raises(ShapeMismatch):
            pooled_targets([[1, 2]], [[1]])

    def test_arm(self):
        np.testing.assert_array_equal(arm_targets([[1], [3]]), [2])
        np.testing.assert_array_equal(arm_targets([[4.5], [4.5], [4.5]]), [4.5])

    def test_pooled_propensity_recomputed(self):
        d = _sim3(1)
        ms = _mis_models(d)
        p = ms.p1_models[0]
        # Independent path: expit of the linear predictor, summed over both arms.
        eta = np.column_stack([np.ones(d.N), d.x]) @ p.coef_
        manual = np.sum(1 / (1 + np.exp(-eta))) / d.N
        got = pooled_targets(p.transform(d.x[d.w == 1]), p.transform(d.x[d.w == 0]))
        assert got[0] == pytest.approx(manual, rel=1e-13)

    def test_arm_equals_pooled_when_means_agree(self, rng):
        a = rng.standard_normal((4, 2))
        b = a[::-1] + 0.0
        np.testing.assert_allclose(arm_targets(a), pooled_targets(a, b))
        np.testing.assert_allclose(arm_targets(b), pooled_targets(a, b))


class TestELW:
    def test_empty_constraints_give_unadjusted(self, rng):
        d = make_trial(rng.standard_normal((30, 2)), rng.standard_normal(30),
                       np.tile([0, 1], 15))
        res = estimate_elw(d, IdentityModel(features=[]), IdentityModel(features=[]))
        assert res.theta_hat == pytest.approx(estimate_unadjusted(d).theta_hat, abs=1e-12)

    def test_symmetric_hand_example(self):
        d = make_trial([[1], [3], [1], [3]], [1, 3, 1, 1], [1, 1, 0, 0])
        res = estimate_elw(d, IdentityModel(), IdentityModel())
        assert res.theta_hat == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(res.weights_treated, [0.5, 0.5], atol=1e-14)
        np.testing.assert_allclose(res.weights_control, [0.5, 0.5], atol=1e-14)
        assert res.method == "elw"

    def test_calibration_residuals(self):
        d = gen_sim2(ScenarioConfig("sim2_linear", n=400, reps=1), np.random.default_rng(3))
        res = estimate_elw(d, IdentityModel(), IdentityModel())
        xbar = d.x.mean(axis=0)
        np.testing.assert_allclose(res.weights_treated @ d.x[d.w == 1], xbar, atol=1e-8)
        np.testing.assert_allclose(res.weights_control @ d.x[d.w == 0], xbar, atol=1e-8)
        for w in (res.weights_treated, res.weights_control):
            assert w.sum() == pytest.approx(1.0, abs=1e-10)

    def test_rejects_missing(self):
        with pytest.raises(ValueError):
            estimate_elw(_sim3(), IdentityModel(), IdentityModel())

    def test_sklearn_wrapper_matches_function(self):
        d = gen_sim2(ScenarioConfig("sim2_linear", n=200, reps=1), np.random.default_rng(4))
        a = estimate_elw(d, LinearModel(), LinearModel()).theta_hat
        est = ELWEstimator([LinearModel()], [LinearModel()])
        b = est.fit(d.x, d.y, d.w).theta_
        assert a == b
        assert est.get_params()["targets"] == "pooled"


class TestMissing:
    def test_no_missing_reduces_to_elw(self):
        d = gen_sim2(ScenarioConfig("sim2_linear", n=200, reps=1), np.random.default_rng(5))
        ms = fit_model_slots({"outcome_treated": [IdentityModel()],
                              "outcome_control": [IdentityModel()]}, d)
        a = estimate_elw_missing(d, ms)
        b = estimate_elw(d, IdentityModel(), IdentityModel())
        assert a.theta_hat == b.theta_hat

    def test_constraint_blocks(self):
        d = _sim3(2)
        ms = _mis_models(d)
        res = estimate_elw_missing(d, ms)
        assert res.method == "elw_mis"
        for arm, w in ((1, res.weights_treated), (0, res.weights_control)):
            models = ms.arm_models(arm)
            vals = np.hstack([m.transform(d.x) for m in models])
            target = vals.mean(axis=0)
            np.testing.assert_allclose(w @ vals[d.observed(arm)], target, atol=1e-8)
            assert w.size == d.observed(arm).sum()

    def test_multiple_models_tag(self):
        d = gen_sim4(ScenarioConfig("sim4", n=400, reps=1), np.random.default_rng(6))
        est = sim4_estimator("11111111").fit_data(d)
        assert est.method_ == "elw_mr"
        assert est.models_.sizes == (2, 2, 2, 2)
        assert sim4_estimator("11111111", "arm").fit_data(d).method_ == "hw"

    def test_empty_constraints(self):
        d = _sim3(3)
        ms = fit_model_slots({"outcome_treated": [LinearModel()]}, d)
        with pytest.raises(EmptyConstraints):
            estimate_elw_missing(d, ms)

    def test_identical_arms_qz_equals_elw(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((40, 2))
        X = np.vstack([x, x])
        w = np.repeat([1, 0], 40)
        y = X @ [1.0, 2.0] + rng.standard_normal(80) + 3 * w
        r = np.ones(80, dtype=int)
        r[[3, 7, 50, 66]] = 0
        d = make_trial(X, y, w, r)
        ms = _mis_models(d)
        ref = estimate_elw_missing(d, ms).theta_hat
        assert estimate_qz(d, ms).theta_hat == ref
        assert estimate_hw(d, ms).theta_hat == ref

    def test_missing_never_weighted(self):
        d = _sim3(8)
        res = estimate_elw_missing(d, _mis_models(d))
        assert res.weights_treated.size == d.m0 and res.weights_control.size == d.n0


class TestBaselines:
    def test_unadjusted(self):
        d = make_trial([[0]] * 5, [1, 2, 3, 0, 1], [1, 1, 1, 0, 0])
        assert estimate_unadjusted(d).theta_hat == pytest.approx(1.5)

    def test_unadjusted_equal_arms(self):
        d = make_trial([[0]] * 4, [1, 2, 1, 2], [1, 1, 0, 0])
        assert estimate_unadjusted(d).theta_hat == 0.0

    def test_unadjusted_missing_needs_flag(self):
        d = _sim3()
        with pytest.raises(ValueError):
            estimate_unadjusted(d)
        obs = estimate_unadjusted(d, observed_only=True).theta_hat
        assert obs == pytest.approx(np.nanmean(d.y[d.w == 1]) - np.nanmean(d.y[d.w == 0]))

    def test_change_score_arithmetic(self):
        d = make_trial([[1.0], [1.0], [0.5], [0.5]], [2, 2, 1, 1], [1, 1, 0, 0])
        assert estimate_change_score(d, 0).theta_hat == pytest.approx(0.5)

    def test_change_score_identical_baseline(self):
        d = make_trial([[1.0], [2.0], [2.0], [1.0]], [5, 1, 2, 0], [1, 1, 0, 0])
        assert estimate_change_score(d, "X1").theta_hat == estimate_unadjusted(d).theta_hat

    def test_change_score_bad_column(self):
        d = make_trial([[1.0], [2.0], [2.0], [1.0]], [5, 1, 2, 0], [1, 1, 0, 0])
        with pytest.raises(BadColumn):
            estimate_change_score(d, 3)
        with pytest.raises(BadColumn):
            estimate_change_score(d, "CD4")
        with pytest.raises(BadColumn):
            ChangeScore(baseline="nope").fit_data(d)

    def test_change_score_csv_smoke(self, tmp_path):
        from elw.dataio import CsvSchema, load_csv, write_csv
        d = gen_sim2(ScenarioConfig("sim2_linear", n=100, reps=1), np.random.default_rng(1))
        write_csv(d, tmp_path / "t.csv")
        d2 = load_csv(tmp_path / "t.csv", CsvSchema(covariate_columns=("X1", "X2", "X3")))
        assert np.isfinite(ChangeScore(baseline="X1").fit_data(d2).theta_)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), shift=st.floats(-1e3, 1e3))
def test_location_equivariance(seed, shift):
    d = gen_sim2(ScenarioConfig("sim2_linear", n=60, reps=1), np.random.default_rng(seed))
    a = estimate_elw(d, LinearModel(), LinearModel()).theta_hat
    moved = make_trial(d.x, d.y + shift, d.w)
    b = estimate_elw(moved, LinearModel(), LinearModel()).theta_hat
    assert b == pytest.approx(a, abs=1e-8 * (1 + abs(shift)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_weighted_residuals_hold_for_every_regime(seed):
    d = _sim3(seed, n=200)
    ms = _mis_models(d, IdentityModel)
    for fn, pooled in ((estimate_elw_missing, True), (estimate_qz, False)):
        res = fn(d, ms, SolverOptions())
        for arm, w in ((1, res.weights_treated), (0, res.weights_control)):
            if res.diagnostics["treated" if arm else "control"]["augmented"]:
                continue
            vals = np.hstack([m.transform(d.x) for m in ms.arm_models(arm)])
            target = vals.mean(axis=0) if pooled else vals[d.arm(arm)].mean(axis=0)
            assert np.max(np.abs(w @ (vals[d.observed(arm)] - target))) <= 1e-8
