import numpy as np
import pytest

from cateselect.base_models import (
    PROB_CLIP,
    BoostedTreesClassifier,
    BoostedTreesRegressor,
    KNNClassifier,
    KNNRegressor,
    LogisticClassifier,
    MLPRegressor,
    RidgeRegressor,
    fit_classifier,
    fit_regressor,
    make_classifier,
    make_regressor,
)
from cateselect.validation import ValidationError

ALL_REG_KINDS = ("ridge", "knn", "boosted_trees", "mlp")
SMALL_MLP = {"hidden": (8,), "epochs": 80, "learning_rate": 0.01}


# ---------------------------------------------------------------------------
# ridge
# ---------------------------------------------------------------------------

def test_ridge_recovers_slope_two(rng):
    x = rng.standard_normal((60, 1))
    y = 2.0 * x[:, 0]
    model = RidgeRegressor(alpha=1e-8).fit(x, y)
    assert abs(model.coef_[0] - 2.0) < 1e-4
    assert abs(model.intercept_) < 1e-4


def test_ridge_small_alpha_matches_normal_equations(rng):
    X = rng.standard_normal((80, 4))
    y = X @ np.array([1.0, -2.0, 0.5, 3.0]) + 0.7 + rng.standard_normal(80) * 0.1
    model = RidgeRegressor(alpha=1e-10).fit(X, y)
    X1 = np.column_stack([np.ones(80), X])
    beta = np.linalg.solve(X1.T @ X1, X1.T @ y)  # independent oracle
    np.testing.assert_allclose(
        np.concatenate([[model.intercept_], model.coef_]), beta, rtol=1e-6
    )


def test_ridge_weighted_equals_replicated_rows(rng):
    X = rng.standard_normal((30, 2))
    y = rng.standard_normal(30)
    counts = rng.integers(1, 4, 30)
    weighted = RidgeRegressor(alpha=0.5).fit(X, y, sample_weight=counts.astype(float))
    replicated = RidgeRegressor(alpha=0.5).fit(np.repeat(X, counts, axis=0),
                                               np.repeat(y, counts))
    np.testing.assert_allclose(weighted.coef_, replicated.coef_, rtol=1e-9)


def test_ridge_handles_singular_design():
    X = np.zeros((10, 3))  # rank-deficient with alpha applied only off-intercept
    y = np.ones(10)
    model = RidgeRegressor(alpha=0.0).fit(X, y)
    assert np.all(np.isfinite(model.coef_))


# ---------------------------------------------------------------------------
# constant-target fits across kinds
# ---------------------------------------------------------------------------

def test_constant_target_all_kinds(rng):
    X = rng.standard_normal((40, 3))
    y = np.full(40, 3.25)
    for kind in ALL_REG_KINDS:
        params = SMALL_MLP if kind == "mlp" else None
        model = fit_regressor(kind, X, y, params=params, random_state=0)
        np.testing.assert_allclose(model.predict(X), y, atol=1e-3,
                                   err_msg=f"kind={kind}")


# ---------------------------------------------------------------------------
# knn
# ---------------------------------------------------------------------------

def test_knn_k1_reproduces_training_labels(rng):
    X = rng.standard_normal((25, 2))
    y = rng.standard_normal(25)
    model = KNNRegressor(k=1).fit(X, y)
    assert np.array_equal(model.predict(X), y)


def test_knn_mean_of_neighbors():
    X = np.array([[0.0], [1.0], [10.0]])
    y = np.array([0.0, 2.0, 100.0])
    model = KNNRegressor(k=2).fit(X, y)
    assert model.predict(np.array([[0.4]]))[0] == 1.0  # neighbors 0 and 1


def test_knn_tie_break_is_deterministic():
    X = np.array([[0.0], [0.0], [0.0]])
    y = np.array([1.0, 2.0, 3.0])
    model = KNNRegressor(k=1).fit(X, y)
    assert model.predict(np.array([[0.0]]))[0] == 1.0  # lowest index wins


# ---------------------------------------------------------------------------
# classifiers
# ---------------------------------------------------------------------------

def test_classifier_base_rate_when_labels_independent(rng):
    X = rng.standard_normal((400, 3))
    labels = (np.arange(400) % 2).astype(float)
    for kind in ("logistic", "knn", "boosted_trees"):
        model = fit_classifier(kind, X, labels)
        p = model.predict_proba(X)[:, 1]
        assert abs(p.mean() - 0.5) < 0.05, f"kind={kind}"


def test_classifier_clipping_on_separable_data():
    X = np.concatenate([np.full((20, 1), -5.0), np.full((20, 1), 5.0)])
    labels = np.concatenate([np.zeros(20), np.ones(20)])
    for kind in ("logistic", "knn", "boosted_trees"):
        p = fit_classifier(kind, X, labels).predict_proba(X)[:, 1]
        assert p.min() == PROB_CLIP, f"kind={kind}"
        assert p.max() == 1 - PROB_CLIP, f"kind={kind}"


def test_classifier_rejects_single_class(rng):
    X = rng.standard_normal((10, 2))
    for kind in ("logistic", "knn", "boosted_trees", "mlp"):
        with pytest.raises(ValidationError, match="single class"):
            fit_classifier(kind, X, np.ones(10), params=SMALL_MLP if kind == "mlp" else None)


def test_probability_range_invariant(rng):
    X = rng.standard_normal((60, 2))
    labels = (X[:, 0] + 0.3 * rng.standard_normal(60) > 0).astype(float)
    for kind in ("logistic", "knn", "boosted_trees"):
        p = fit_classifier(kind, X, labels).predict_proba(X)[:, 1]
        assert np.all(p >= PROB_CLIP) and np.all(p <= 1 - PROB_CLIP)


# ---------------------------------------------------------------------------
# boosted trees
# ---------------------------------------------------------------------------

def test_boosted_trees_fits_nonlinear_signal(rng):
    X = rng.standard_normal((400, 2))
    y = np.sign(X[:, 0]) * 2.0 + X[:, 1] ** 2
    model = BoostedTreesRegressor(rounds=100, depth=3, learning_rate=0.1).fit(X, y)
    mse = np.mean((model.predict(X) - y) ** 2)
    assert mse < 0.1


def test_boosted_trees_weighted_equals_replicated(rng):
    X = rng.standard_normal((40, 3))
    y = rng.standard_normal(40)
    counts = rng.integers(1, 4, 40)
    a = BoostedTreesRegressor(rounds=10, depth=2).fit(X, y, sample_weight=counts.astype(float))
    b = BoostedTreesRegressor(rounds=10, depth=2).fit(np.repeat(X, counts, axis=0),
                                                      np.repeat(y, counts))
    q = rng.standard_normal((15, 3))
    np.testing.assert_allclose(a.predict(q), b.predict(q), atol=1e-10)


def test_boosted_trees_deterministic(rng):
    X = rng.standard_normal((100, 4))
    y = rng.standard_normal(100)
    a = BoostedTreesRegressor(rounds=20).fit(X, y).predict(X)
    b = BoostedTreesRegressor(rounds=20).fit(X, y).predict(X)
    assert np.array_equal(a, b)


def test_boosted_trees_validates_hyperparameters(rng):
    X = rng.standard_normal((10, 1))
    y = np.arange(10.0)
    with pytest.raises(ValidationError):
        BoostedTreesRegressor(depth=9).fit(X, y)
    with pytest.raises(ValidationError):
        BoostedTreesRegressor(rounds=0).fit(X, y)
    with pytest.raises(ValidationError):
        BoostedTreesRegressor(learning_rate=0.0).fit(X, y)


# ---------------------------------------------------------------------------
# mlp
# ---------------------------------------------------------------------------

def test_mlp_gradient_matches_finite_differences(rng):
    # 5-sample problem; central differences on the training objective
    X = rng.standard_normal((5, 3))
    y = rng.standard_normal(5)
    model = MLPRegressor(hidden=(4, 3), epochs=1, random_state=0).fit(X, y)
    params = np.random.default_rng(1).standard_normal(model.params_.size) * 0.5
    loss, grad = model.loss_and_grad(params, X, y)
    fd = np.empty_like(params)
    h = 1e-6
    for i in range(params.size):
        up, down = params.copy(), params.copy()
        up[i] += h
        down[i] -= h
        fd[i] = (model.loss_and_grad(up, X, y)[0] - model.loss_and_grad(down, X, y)[0]) / (2 * h)
    np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-8)


def test_mlp_learns_linear_map(rng):
    X = rng.standard_normal((200, 2))
    y = 3.0 * X[:, 0] - X[:, 1]
    model = MLPRegressor(hidden=(16,), epochs=400, learning_rate=0.01,
                         random_state=0).fit(X, y)
    mse = np.mean((model.predict(X) - y) ** 2)
    assert mse < 0.05


def test_mlp_deterministic_given_seed(rng):
    X = rng.standard_normal((30, 2))
    y = rng.standard_normal(30)
    a = MLPRegressor(hidden=(8,), epochs=30, random_state=7).fit(X, y)
    b = MLPRegressor(hidden=(8,), epochs=30, random_state=7).fit(X, y)
    assert np.array_equal(a.params_, b.params_)


def test_mlp_weighted_loss_downweights_outlier(rng):
    X = np.linspace(-1, 1, 50).reshape(-1, 1)
    y = np.zeros(50)
    y[0] = 100.0
    w = np.ones(50)
    w[0] = 0.0
    model = MLPRegressor(hidden=(8,), epochs=200, learning_rate=0.01,
                         random_state=0).fit(X, y, sample_weight=w)
    assert abs(model.predict(X[1:]).mean()) < 0.5


# ---------------------------------------------------------------------------
# factories
# ---------------------------------------------------------------------------

def test_factories_reject_unknown_kinds():
    with pytest.raises(ValidationError, match="unknown regressor kind"):
        make_regressor("svm")
    with pytest.raises(ValidationError, match="classification-only"):
        make_regressor("logistic")
    with pytest.raises(ValidationError, match="unknown classifier kind"):
        make_classifier("forest")


def test_factory_defaults_documented():
    assert make_regressor("ridge").alpha == 1.0
    assert make_regressor("knn").k == 5
    bt = make_regressor("boosted_trees")
    assert (bt.rounds, bt.depth, bt.learning_rate) == (100, 3, 0.1)
    mlp = make_regressor("mlp")
    assert (mlp.hidden, mlp.epochs, mlp.learning_rate) == ((64, 64), 200, 1e-3)


def test_sklearn_get_params_round_trip():
    model = BoostedTreesRegressor(rounds=7, depth=2, learning_rate=0.3)
    params = model.get_params()
    clone = BoostedTreesRegressor(**params)
    assert clone.get_params() == params


def test_train_loss_recorded(rng):
    X = rng.standard_normal((30, 2))
    y = rng.standard_normal(30)
    for kind in ("ridge", "knn", "boosted_trees"):
        model = fit_regressor(kind, X, y)
        assert np.isfinite(model.train_loss_)
