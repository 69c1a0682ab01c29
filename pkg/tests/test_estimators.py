import numpy as np
import pytest

from causalscore.dataset import CausalFrame, make_split
from causalscore.errors import MissingInstrument, SingleArmTrainingData, UnknownFamily, WeakInstrument
from causalscore.estimators import (
    CATE_FAMILIES,
    IV_FAMILIES,
    EffectEstimate,
    EstimatorSpec,
    estimate_effect,
    fit_estimator,
    transformed_outcome,
    wald_ratio,
)
from causalscore.synthdata import DgpConfig, gen_iv, gen_rct

RIDGE = {"regressor": "ridge"}


@pytest.fixture(scope="module")
def rct():
    frame, truth = gen_rct(DgpConfig(n_rows=4000, seed=21))
    return frame, truth, make_split(frame.n_rows, seed=21)


@pytest.fixture(scope="module")
def iv():
    frame, truth = gen_iv(DgpConfig(n_rows=4000, n_covariates=10, seed=22))
    return frame, truth, make_split(frame.n_rows, seed=22)


def _spec(family, **hp):
    return EstimatorSpec(family, hp)


def test_s_learner_ridge_recovers_constant_effect():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(500, 3))
    T = rng.integers(0, 2, 500)
    Y = 1.0 + X @ np.array([0.5, -2.0, 1.0]) + 3.0 * T
    frame = CausalFrame(X, T, Y, propensity=np.full(500, 0.5))
    model = fit_estimator(_spec("s_learner", regressor="ridge", ridge_l2=1e-12), frame, np.arange(400))
    est = estimate_effect(model, frame, np.arange(400, 500))
    np.testing.assert_allclose(est.impact, 3.0, atol=1e-6)


@pytest.mark.parametrize("family", CATE_FAMILIES)
def test_cate_families_fit_and_report_finite_mse(rct, family):
    frame, truth, split = rct
    hp = {} if family == "naive_pw" else RIDGE
    model = fit_estimator(_spec(family, **hp), frame, split.train_idx, seed=1)
    est = estimate_effect(model, frame, split.valid_idx)
    mse = np.mean((est.impact - truth.tau[split.valid_idx]) ** 2)
    assert np.isfinite(mse)
    T = frame.treatment[split.valid_idx]
    np.testing.assert_array_equal(est.corrected_outcome[T == 0], frame.outcome[split.valid_idx][T == 0])


def test_t_learner_boosted_is_reasonable(rct):
    frame, truth, split = rct
    model = fit_estimator(_spec("t_learner"), frame, split.train_idx)
    est = estimate_effect(model, frame, split.valid_idx)
    assert np.mean((est.impact - truth.tau[split.valid_idx]) ** 2) < np.var(truth.tau)


@pytest.mark.parametrize("family", ["naive_pw", "wald"])
def test_constant_impact_families(rct, iv, family):
    frame, _, split = iv if family == "wald" else rct
    est = estimate_effect(fit_estimator(_spec(family), frame, split.train_idx), frame, split.valid_idx)
    assert np.ptp(est.impact) == 0.0


@pytest.mark.parametrize("family", CATE_FAMILIES + IV_FAMILIES)
def test_corrected_outcome_shift_equivariance(rct, iv, family):
    frame, _, split = iv if family in IV_FAMILIES else rct
    hp = RIDGE if family not in ("naive_pw",) + IV_FAMILIES else {}
    c = 17.25
    shifted = frame.with_outcome(frame.outcome + c)
    a = estimate_effect(fit_estimator(_spec(family, **hp), frame, split.train_idx, 3), frame, split.valid_idx)
    b = estimate_effect(fit_estimator(_spec(family, **hp), shifted, split.train_idx, 3), shifted, split.valid_idx)
    untreated = frame.treatment[split.valid_idx] == 0
    np.testing.assert_allclose(b.corrected_outcome[untreated] - a.corrected_outcome[untreated], c, atol=1e-9)


def test_transformed_outcome_mean_is_ate():
    frame, truth = gen_rct(DgpConfig(n_rows=200_000, seed=23))
    ystar = transformed_outcome(frame.treatment, frame.outcome, frame.propensity)
    np.testing.assert_allclose(ystar, 2 * frame.outcome * (2 * frame.treatment - 1))
    se = ystar.std() / np.sqrt(len(ystar))
    assert abs(ystar.mean() - truth.ate) < 3 * se


def test_transformed_outcome_matches_noise_free_naive(rct):
    frame, truth, split = rct
    model = fit_estimator(_spec("naive_pw"), frame, split.train_idx, seed=5)
    tr = split.train_idx
    ystar = transformed_outcome(frame.treatment[tr], frame.outcome[tr], frame.propensity[tr])
    assert model.details["ipw_ate"] == pytest.approx(ystar.mean(), abs=1e-12)
    eta = model.details["noise"]
    impact = estimate_effect(model, frame, [0]).impact[0]
    assert impact == pytest.approx(model.details["ipw_ate"] * (1 + eta), rel=1e-12)


def test_naive_noise_is_seeded(rct):
    frame, _, split = rct
    a = fit_estimator(_spec("naive_pw"), frame, split.train_idx, seed=8).details["noise"]
    b = fit_estimator(_spec("naive_pw"), frame, split.train_idx, seed=8).details["noise"]
    c = fit_estimator(_spec("naive_pw"), frame, split.train_idx, seed=9).details["noise"]
    assert a == b != c


def test_wald_denominator_monte_carlo():
    frame, truth = gen_iv(DgpConfig(n_rows=1_000_000, n_covariates=10, seed=24))
    z = frame.instrument == 1
    den = frame.treatment[z].mean() - frame.treatment[~z].mean()
    expected = truth.compliance[z].mean() - 0.006
    assert abs(den - expected) < 4 * np.sqrt(0.25 / z.sum() + 0.006 / (~z).sum())
    num = frame.outcome[z].mean() - frame.outcome[~z].mean()
    assert wald_ratio(frame.outcome, frame.treatment, frame.instrument) == pytest.approx(num / den, rel=1e-12)


def test_wald_weak_instrument():
    Z = np.array([0, 1, 0, 1])
    T = np.array([1, 1, 0, 0])
    with pytest.raises(WeakInstrument):
        wald_ratio(np.arange(4.0), T, Z)


def test_linear_iv_recovers_constant_theta():
    cfg = DgpConfig(n_rows=200_000, n_covariates=10, seed=25)
    frame, truth = gen_iv(cfg, theta_fn=lambda X: np.full(X.shape[0], 7.5))
    model = fit_estimator(_spec("linear_iv", effect_features="constant"), frame, np.arange(frame.n_rows))
    coef = model.details["effect_coef"][0]
    se = model.details["effect_stderr"][0]
    assert 0 < se < 0.5
    assert abs(coef - 7.5) < 3 * se


def test_linear_iv_quadratic_beats_wald():
    frame, truth = gen_iv(DgpConfig(n_rows=50_000, n_covariates=10, seed=26))
    split = make_split(frame.n_rows, seed=26)
    v = split.valid_idx
    target = truth.theta[v] * frame.treatment[v]
    errs = {}
    for name, spec in [("wald", _spec("wald")), ("quad", _spec("linear_iv", effect_features="quadratic"))]:
        est = estimate_effect(fit_estimator(spec, frame, split.train_idx), frame, v)
        errs[name] = np.mean((est.impact * frame.treatment[v] - target) ** 2)
    assert errs["quad"] < 0.1 * errs["wald"]


def test_iv_family_needs_instrument(rct):
    frame, _, split = rct
    with pytest.raises(MissingInstrument):
        fit_estimator(_spec("wald"), frame, split.train_idx)


def test_single_arm_training_data(rct):
    frame, _, _ = rct
    treated = np.flatnonzero(frame.treatment == 1)
    with pytest.raises(SingleArmTrainingData):
        fit_estimator(_spec("t_learner"), frame, treated)


def test_unknown_family():
    with pytest.raises(UnknownFamily):
        EstimatorSpec("r_learner", {})


def test_spec_round_trip():
    spec = _spec("x_learner", regressor="ridge", ridge_l2=0.5)
    assert EstimatorSpec.from_dict(spec.to_dict()).to_dict() == spec.to_dict()


def test_from_impact_corrected_outcome():
    frame = CausalFrame(np.zeros((3, 1)), [0, 1, 1], [1.0, 2.0, 3.0])
    est = EffectEstimate.from_impact(frame, [0, 1, 2], [5.0, 0.5, -1.0])
    np.testing.assert_allclose(est.corrected_outcome, [1.0, 1.5, 4.0])
    assert est.mean_impact == pytest.approx(1.5)
