import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalscore import learners
from causalscore.errors import ConfigError, NonBinaryTarget, ShapeMismatch, SingularSystem
from causalscore.learners import LearnerSpec, fit, ridge_solve


def test_prior_probability():
    m = fit(LearnerSpec("prior"), np.zeros((4, 2)), [1, 0, 1, 1])
    np.testing.assert_array_equal(m.predict(np.random.default_rng(0).normal(size=(7, 2))), 0.75)


def test_ridge_exact_interpolation():
    x = np.arange(10.0)
    m = fit(LearnerSpec("ridge", {"l2": 0.0}), x, 2 * x)
    assert m.model.coef[0] == pytest.approx(2.0, abs=1e-9)


def test_ridge_closed_form_three_points():
    # centered data: x = [-1, 0, 1], y = [1, 2, 6] -> yc = [-2, -1, 3]
    x = np.array([-1.0, 0.0, 1.0])
    y = np.array([1.0, 2.0, 6.0])
    lam = 0.5
    coef, intercept = ridge_solve(x[:, None], y, lam)
    # x'yc = 5, x'x = 2
    assert coef[0] == pytest.approx(5 / 2.5, abs=1e-12)
    assert intercept == pytest.approx(3.0, abs=1e-12)


def test_ridge_singular():
    X = np.column_stack([np.arange(5.0), 2 * np.arange(5.0)])
    with pytest.raises(SingularSystem):
        fit(LearnerSpec("ridge", {"l2": 0.0}), X, np.arange(5.0))


def _normal_equation_oracle(X, y, l2):
    # augmented system with an unpenalized intercept column
    A = np.column_stack([np.ones(len(y)), X])
    P = l2 * np.eye(A.shape[1])
    P[0, 0] = 0.0
    beta = np.linalg.solve(A.T @ A + P, A.T @ y)
    return beta[1:], beta[0]


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), l2=st.floats(0.0, 100.0))
def test_ridge_matches_brute_force(seed, l2):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(20, 3))
    y = rng.normal(size=20)
    m = fit(LearnerSpec("ridge", {"l2": l2}), X, y)
    coef, intercept = _normal_equation_oracle(X, y, l2)
    Xt = rng.normal(size=(5, 3))
    np.testing.assert_allclose(m.predict(Xt), Xt @ coef + intercept, rtol=0, atol=1e-8)


def test_ridge_matrix_target_matches_columnwise():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 4))
    Y = rng.normal(size=(30, 2))
    B, c = ridge_solve(X, Y, 0.3)
    for k in range(2):
        b, c0 = ridge_solve(X, Y[:, k], 0.3)
        np.testing.assert_allclose(B[:, k], b, atol=1e-12)
        assert c[k] == pytest.approx(c0, abs=1e-12)


def test_single_stump_on_step_data():
    x = np.array([0.0, 1, 2, 3, 4, 5])
    y = np.array([0.0, 0, 0, 3, 3, 3])
    spec = LearnerSpec("boosted_stumps", {"n_rounds": 1, "learning_rate": 1.0, "max_depth": 1})
    m = fit(spec, x, y)
    np.testing.assert_allclose(m.predict(x), y, atol=1e-12)
    np.testing.assert_allclose(m.predict(np.array([2.4, 2.6])), [0.0, 3.0])
    assert len(np.unique(m.predict(np.linspace(-10, 10, 101)))) == 2


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    depth=st.integers(1, 3),
    lr=st.floats(0.01, 1.0),
    n=st.integers(2, 300),
)
def test_boosted_loss_non_increasing(seed, depth, lr, n):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    X[:, 2] = rng.integers(0, 3, n)
    y = np.sin(X[:, 0]) + X[:, 2] + rng.normal(size=n)
    spec = LearnerSpec("boosted_stumps", {"n_rounds": 15, "learning_rate": lr, "max_depth": depth})
    loss = np.array(fit(spec, X, y).model.train_loss)
    assert np.all(np.diff(loss) <= 1e-12 * max(1.0, loss[0]))


def test_boosted_many_distinct_values_uses_quantile_bins():
    rng = np.random.default_rng(2)
    x = rng.normal(size=2000)
    m = fit(LearnerSpec("boosted_stumps", {"n_rounds": 20}), x, (x > 0.3).astype(float))
    assert len(m.model.thresholds[0]) <= learners.MAX_BINS
    assert np.mean((m.predict(x) > 0.5) == (x > 0.3)) > 0.98


def test_logistic_separable_hits_clip():
    x = np.concatenate([np.linspace(-5, -1, 20), np.linspace(1, 5, 20)])
    y = (x > 0).astype(float)
    m = fit(LearnerSpec("logistic", {"l2": 1e-6, "max_iter": 200}), x, y)
    p = m.predict(np.array([-50.0, 50.0]))
    np.testing.assert_array_equal(p, [learners.PROBA_CLIP_LOW, learners.PROBA_CLIP_HIGH])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), kind=st.sampled_from(["logistic", "prior"]))
def test_classifier_probabilities_strictly_inside(seed, kind):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 2)) * 10
    y = (X[:, 0] > 0).astype(float)
    p = fit(LearnerSpec(kind), X, y).predict(rng.normal(size=(50, 2)) * 100)
    assert np.all((p > 0) & (p < 1))
    assert np.all(np.isfinite(1 / p)) and np.all(np.isfinite(1 / (1 - p)))


def test_logistic_recovers_coefficient():
    rng = np.random.default_rng(5)
    x = rng.normal(size=20000)
    y = (rng.random(20000) < 1 / (1 + np.exp(-(0.5 + 1.5 * x)))).astype(float)
    m = fit(LearnerSpec("logistic", {"l2": 1e-6}), x, y)
    p = m.predict(np.array([0.0]))[0]
    assert p == pytest.approx(1 / (1 + np.exp(-0.5)), abs=0.02)


def test_classifier_rejects_non_binary():
    with pytest.raises(NonBinaryTarget):
        fit(LearnerSpec("logistic"), np.zeros((3, 1)), [0, 1, 2])


def test_shape_checks():
    with pytest.raises(ShapeMismatch):
        fit(LearnerSpec("ridge"), np.zeros((3, 1)), [0.0, 1.0])
    m = fit(LearnerSpec("ridge"), np.arange(6.0).reshape(3, 2), [0.0, 1.0, 2.0])
    with pytest.raises(ShapeMismatch):
        m.predict(np.zeros((2, 3)))


@pytest.mark.parametrize(
    "kind,params",
    [("ridge", {"l2": -1.0}), ("boosted_stumps", {"max_depth": 0}), ("ridge", {"depth": 2}), ("forest", {})],
)
def test_spec_validation(kind, params):
    with pytest.raises(ConfigError):
        LearnerSpec(kind, params)


def test_fit_is_deterministic():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(300, 4))
    y = X[:, 0] * X[:, 1] + rng.normal(size=300)
    spec = LearnerSpec("boosted_stumps")
    a = fit(spec, X, y).predict(X)
    b = fit(spec, X, y).predict(X)
    assert a.tobytes() == b.tobytes()
