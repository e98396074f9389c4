import numpy as np
import pytest

from cateselect.base_models import RidgeRegressor
from cateselect.dgp import DgpCoefficients, generate_outcomes, synth_covariates
from cateselect.evaluation import oracle_pehe
from cateselect.meta_learners import (
    LEARNER_KINDS,
    DRLearner,
    IPWLearner,
    Nuisances,
    PSLearner,
    RALearner,
    RLearner,
    SLearner,
    TLearner,
    ULearner,
    XLearner,
    build_pool,
    dr_pseudo_outcomes,
    make_learner,
)
from cateselect.validation import ValidationError


class FakeRegressor:
    """Injectable nuisance with an exact prediction rule."""

    def __init__(self, fn):
        self.fn = fn

    def predict(self, X):
        return self.fn(np.asarray(X))


class FakeClassifier:
    def __init__(self, fn):
        self.fn = fn

    def predict_proba(self, X):
        p1 = self.fn(np.asarray(X))
        return np.column_stack([1 - p1, p1])


def linear_train_data(seed=0, n=800, d=6, rho=0.3):
    """Noiseless linear outcome surface with heterogeneous effects."""
    rng = np.random.default_rng(seed)
    X = synth_covariates(n, d, seed)
    coeffs = DgpCoefficients(
        beta_t=np.zeros(d),
        active_linear=tuple(int(j) for j in np.flatnonzero(rng.random(d) < 0.5)),
        active_pair=(),
        active_triple=(),
        gamma=(rng.random(d) < rho).astype(float),
    )
    t = (rng.random(n) < 0.5).astype(np.int64)
    y0, y1, y, tau = generate_outcomes(X, coeffs, t, noise_sd=0.0)
    return X, t, y, tau


def balanced_constant_x(n=40):
    X = np.ones((n, 1))
    t = (np.arange(n) % 2).astype(np.int64)
    return X, t


# ---------------------------------------------------------------------------
# S-learner
# ---------------------------------------------------------------------------

def test_s_learner_no_effect_is_near_zero():
    X, t, y, tau = linear_train_data(seed=1, rho=0.0)
    model = SLearner(base="ridge", random_state=0).fit(X, t, y)
    assert np.max(np.abs(model.predict(X))) <= 1e-2


def test_s_learner_pure_treatment_outcome():
    # y = t with constant covariate; expected effect from the ridge closed form
    X, t = balanced_constant_x()
    y = t.astype(float)
    model = SLearner(base="ridge", base_params={"alpha": 1e-8}, random_state=0).fit(X, t, y)
    # independent oracle: penalized normal equations on [1, x, t]
    D = np.column_stack([np.ones_like(y), X[:, 0], t])
    A = D.T @ D + np.diag([0.0, 1e-8, 1e-8])
    beta = np.linalg.solve(A, D.T @ y)
    np.testing.assert_allclose(model.predict(X), np.full(len(y), beta[2]), atol=1e-6)
    assert model.predict(X)[0] == pytest.approx(1.0, abs=1e-3)


def test_s_learner_outcome_head():
    X, t, y, _ = linear_train_data(seed=2)
    model = SLearner(base="ridge", random_state=0).fit(X, t, y)
    mu1 = model.predict_outcome(X, np.ones(len(y)))
    mu0 = model.predict_outcome(X, np.zeros(len(y)))
    np.testing.assert_allclose(mu1 - mu0, model.predict(X), atol=1e-12)


def test_s_learner_deterministic_refit():
    X, t, y, _ = linear_train_data(seed=3)
    a = SLearner(base="ridge", random_state=5).fit(X, t, y).predict(X)
    b = SLearner(base="ridge", random_state=5).fit(X, t, y).predict(X)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# T-learner
# ---------------------------------------------------------------------------

def test_t_learner_recovers_noiseless_linear_effects():
    X, t, y, tau = linear_train_data(seed=4)
    model = TLearner(base="ridge", random_state=0).fit(X, t, y)
    assert oracle_pehe(model.predict(X), tau) <= 1e-2


def test_t_learner_identical_arms_zero_effect(rng):
    X = rng.standard_normal((100, 3))
    t = (np.arange(100) % 2).astype(np.int64)
    y = X @ np.array([1.0, -1.0, 0.5])  # outcome ignores treatment
    model = TLearner(base="ridge", random_state=0).fit(X, t, y)
    assert np.max(np.abs(model.predict(X))) <= 1e-2


def test_t_learner_rejects_tiny_arm():
    X = np.zeros((5, 1))
    t = np.array([1, 0, 0, 0, 0])
    with pytest.raises(ValidationError, match="treated arm has 1 samples"):
        TLearner(base="ridge").fit(X, t, np.arange(5.0))


# ---------------------------------------------------------------------------
# PS-learner
# ---------------------------------------------------------------------------

def test_ps_learner_knn_second_stage_reproduces_first(rng):
    X = rng.standard_normal((60, 2))
    t = (np.arange(60) % 2).astype(np.int64)
    y = X[:, 0] + 2.0 * t
    ps = PSLearner(base="knn", base_params={"k": 1}, random_state=0).fit(X, t, y)
    s = SLearner(base="knn", base_params={"k": 1}, random_state=0).fit(X, t, y)
    np.testing.assert_allclose(ps.predict(X), s.predict(X), atol=1e-12)


def test_ps_learner_tracks_s_on_linear_data():
    X, t, y, _ = linear_train_data(seed=5)
    ps = PSLearner(base="ridge", random_state=0).fit(X, t, y)
    s = SLearner(base="ridge", random_state=0).fit(X, t, y)
    assert np.max(np.abs(ps.predict(X) - s.predict(X))) <= 1e-2


# ---------------------------------------------------------------------------
# IPW-learner
# ---------------------------------------------------------------------------

def test_ipw_pseudo_outcomes_hand_case():
    # constant covariate + balanced arms force pi = 0.5 exactly
    X, t = balanced_constant_x()
    y = t.astype(float)
    model = IPWLearner(base="ridge", random_state=0).fit(X, t, y)
    pi = model.pi_.predict_proba(X)[:, 1]
    np.testing.assert_allclose(pi, 0.5, atol=1e-9)
    pseudo = t * y / pi - (1 - t) * y / (1 - pi)
    np.testing.assert_allclose(pseudo, np.where(t == 1, 2.0, 0.0), atol=1e-8)
    assert model.predict(X[:1])[0] == pytest.approx(1.0, abs=1e-2)


def test_ipw_zero_effect_mean_within_noise(rng):
    X = rng.standard_normal((600, 3))
    t = (rng.random(600) < 0.5).astype(np.int64)
    y = X[:, 0] + rng.standard_normal(600) * 0.5
    model = IPWLearner(base="ridge", random_state=0).fit(X, t, y)
    preds = model.predict(X)
    se = 3.0 / np.sqrt(600)  # generous scale for the pseudo-outcome variance
    assert abs(preds.mean()) < 3 * se


def test_ipw_clipping_bounds_pseudo_outcomes(rng):
    X = rng.standard_normal((80, 2))
    t = (rng.random(80) < 0.5).astype(np.int64)
    y = rng.standard_normal(80) * 10
    model = IPWLearner(base="ridge", random_state=0).fit(X, t, y)
    pi = model.pi_.predict_proba(X)[:, 1]
    pseudo = t * y / pi - (1 - t) * y / (1 - pi)
    assert np.all(np.abs(pseudo) <= np.abs(y) / 0.01 + 1e-9)


# ---------------------------------------------------------------------------
# X-learner
# ---------------------------------------------------------------------------

def test_x_learner_blend_identity():
    X, t, y, _ = linear_train_data(seed=6)
    model = XLearner(base="ridge", random_state=0).fit(X, t, y)
    pi = model.pi_.predict_proba(X)[:, 1]
    blended = (1 - pi) * model.tau1_.predict(X) + pi * model.tau0_.predict(X)
    np.testing.assert_allclose(model.predict(X), blended, atol=1e-12)


def test_x_learner_half_propensity_averages_arms():
    X, t = balanced_constant_x(60)
    y = (2.0 * t).astype(float)
    model = XLearner(base="ridge", random_state=0).fit(X, t, y)
    pi = model.pi_.predict_proba(X)[:, 1]
    np.testing.assert_allclose(pi, 0.5, atol=1e-9)
    expected = 0.5 * (model.tau1_.predict(X) + model.tau0_.predict(X))
    np.testing.assert_allclose(model.predict(X), expected, atol=1e-12)


def test_x_learner_recovers_noiseless_linear_effects():
    X, t, y, tau = linear_train_data(seed=7)
    model = XLearner(base="ridge", random_state=0).fit(X, t, y)
    assert oracle_pehe(model.predict(X), tau) <= 1e-2


# ---------------------------------------------------------------------------
# U-learner
# ---------------------------------------------------------------------------

def test_u_learner_matched_residual_ratio():
    X, t = balanced_constant_x(80)
    y = t.astype(float)  # mu = 0.5, xi = +-0.5 matching nu = +-0.5
    model = ULearner(base="ridge", random_state=0).fit(X, t, y)
    assert model.predict(X[:1])[0] == pytest.approx(1.0, abs=1e-2)


def test_u_learner_zero_residual_gives_zero(rng):
    X = rng.standard_normal((100, 2))
    t = (np.arange(100) % 2).astype(np.int64)
    y = np.full(100, 4.0)  # mu == y
    model = ULearner(base="ridge", random_state=0).fit(X, t, y)
    assert np.max(np.abs(model.predict(X))) <= 1e-6


def test_u_learner_target_clamp(rng):
    X = rng.standard_normal((60, 2))
    t = (np.arange(60) % 2).astype(np.int64)
    y = rng.standard_normal(60)
    model = ULearner(base="ridge", random_state=0).fit(X, t, y)
    mu = model.mu_.predict(X)
    xi = y - mu
    # the regression targets can never exceed |xi|/nu_min
    assert np.all(np.abs(xi) / 0.01 + 1e-9 >= np.abs(xi / 0.01))


# ---------------------------------------------------------------------------
# DR-learner
# ---------------------------------------------------------------------------

def test_dr_pseudo_outcome_hand_case():
    y = np.array([1.0, 0.0])
    t = np.array([1, 0])
    mu1 = np.array([1.0, 1.0])
    mu0 = np.array([0.0, 0.0])
    pi = np.array([0.5, 0.5])
    np.testing.assert_allclose(dr_pseudo_outcomes(y, t, mu0, mu1, pi), [1.0, 1.0])


def test_dr_pseudo_equals_truth_under_exact_nuisances(rng):
    # 100-unit instance, noiseless outcomes, analytically exact nuisances
    X = rng.standard_normal((100, 3))
    t = (rng.random(100) < 0.5).astype(np.int64)
    tau = X[:, 0]
    y0 = X @ np.array([0.0, 1.0, -1.0])
    y1 = y0 + tau
    y = np.where(t == 1, y1, y0)
    pseudo = dr_pseudo_outcomes(y, t, y0, y1, np.full(100, 0.5))
    np.testing.assert_allclose(pseudo, tau, atol=1e-12)


def test_dr_learner_with_injected_nuisances(rng):
    X = rng.standard_normal((200, 2))
    t = (rng.random(200) < 0.5).astype(np.int64)
    tau = 2.0 * X[:, 0]
    y0 = X[:, 1]
    y = np.where(t == 1, y0 + tau, y0)
    nuis = Nuisances(
        mu0=FakeRegressor(lambda A: A[:, 1]),
        mu1=FakeRegressor(lambda A: A[:, 1] + 2.0 * A[:, 0]),
        pi=FakeClassifier(lambda A: np.full(A.shape[0], 0.5)),
    )
    model = DRLearner(base="ridge", random_state=0).fit(X, t, y, nuisances=nuis)
    assert oracle_pehe(model.predict(X), tau) <= 1e-2


def test_dr_learner_recovers_noiseless_linear_effects():
    X, t, y, tau = linear_train_data(seed=8)
    model = DRLearner(base="ridge", random_state=0).fit(X, t, y)
    assert oracle_pehe(model.predict(X), tau) <= 1e-2


# ---------------------------------------------------------------------------
# R-learner
# ---------------------------------------------------------------------------

def test_r_learner_recovers_constant_effect(rng):
    X = rng.standard_normal((500, 3))
    t = (rng.random(500) < 0.5).astype(np.int64)
    y = X[:, 0] + 3.0 * t  # constant effect 3 with varying nu
    model = RLearner(base="ridge", random_state=0).fit(X, t, y)
    assert np.max(np.abs(model.predict(X) - 3.0)) <= 1e-2 * 3


def test_r_learner_zero_residual_gives_zero(rng):
    X = rng.standard_normal((100, 2))
    t = (np.arange(100) % 2).astype(np.int64)
    y = np.full(100, -2.0)
    model = RLearner(base="ridge", random_state=0).fit(X, t, y)
    assert np.max(np.abs(model.predict(X))) <= 1e-6


def test_r_learner_weighted_transform_equals_direct_objective(rng):
    # direct quadratic solve of sum (xi - nu*(b0 + b'x))^2 + alpha*|b|^2
    n = 120
    X = rng.standard_normal((n, 2))
    t = (rng.random(n) < 0.5).astype(np.int64)
    nu = np.where(t == 1, 0.3, -0.3)
    xi = rng.standard_normal(n)
    alpha = 1.0
    nuis = Nuisances(
        mu=FakeRegressor(lambda A: np.zeros(A.shape[0])),
        pi=FakeClassifier(lambda A: np.full(A.shape[0], 0.7)),
    )
    y = xi  # with mu == 0, outcome residual is y itself
    model = RLearner(base="ridge", random_state=0).fit(X, np.where(nu > 0, 1, 0), y,
                                                       nuisances=nuis)
    D = np.column_stack([nu, nu[:, None] * X])
    A = D.T @ D + np.diag([0.0, alpha, alpha])
    beta = np.linalg.solve(A, D.T @ xi)
    got = np.concatenate([[model.stage2_.intercept_], model.stage2_.coef_])
    np.testing.assert_allclose(got, beta, rtol=1e-6)


# ---------------------------------------------------------------------------
# RA-learner
# ---------------------------------------------------------------------------

def test_ra_pseudo_outcome_hand_case(rng):
    X = rng.standard_normal((2, 1))
    t = np.array([1, 0])
    y = np.array([1.0, 0.0])
    nuis = Nuisances(
        mu0=FakeRegressor(lambda A: np.zeros(A.shape[0])),
        mu1=FakeRegressor(lambda A: np.ones(A.shape[0])),
    )
    model = RALearner(base="knn", base_params={"k": 1}, random_state=0)
    model.fit(np.vstack([X, X + 5]), np.array([1, 0, 1, 0]), np.array([1.0, 0.0, 1.0, 0.0]),
              nuisances=nuis)
    # pseudo-outcomes: treated t*(y-mu0)=1, control (1-t)*(mu1-y)=1
    pseudo = np.array([1.0, 0.0, 1.0, 0.0]) * 0 + 1.0
    preds = model.stage2_.predict(np.vstack([X, X + 5]))
    np.testing.assert_allclose(preds, pseudo, atol=1e-12)


def test_ra_learner_exact_nuisances_noiseless(rng):
    X = rng.standard_normal((150, 2))
    t = (rng.random(150) < 0.5).astype(np.int64)
    tau = X[:, 0] - X[:, 1]
    y0 = 2.0 * X[:, 1]
    y = np.where(t == 1, y0 + tau, y0)
    nuis = Nuisances(
        mu0=FakeRegressor(lambda A: 2.0 * A[:, 1]),
        mu1=FakeRegressor(lambda A: 2.0 * A[:, 1] + A[:, 0] - A[:, 1]),
    )
    model = RALearner(base="ridge", random_state=0).fit(X, t, y, nuisances=nuis)
    assert oracle_pehe(model.predict(X), tau) <= 1e-2


def test_ra_learner_recovers_noiseless_linear_effects():
    X, t, y, tau = linear_train_data(seed=9)
    model = RALearner(base="ridge", random_state=0).fit(X, t, y)
    assert oracle_pehe(model.predict(X), tau) <= 1e-2


# ---------------------------------------------------------------------------
# pool construction & invariants
# ---------------------------------------------------------------------------

def test_pool_cross_product_order():
    X, t, y, _ = linear_train_data(seed=10, n=200, d=3)
    pool = build_pool(["S", "T"], ["ridge", "knn"], X, t, y, random_state=0)
    assert [c.candidate_id for c in pool] == ["S_ridge", "S_knn", "T_ridge", "T_knn"]


def test_pool_nine_by_two_is_eighteen():
    X, t, y, _ = linear_train_data(seed=11, n=300, d=3)
    pool = build_pool(LEARNER_KINDS, ["ridge", "knn"], X, t, y, random_state=0)
    assert len(pool) == 18
    assert len({c.candidate_id for c in pool}) == 18


def test_pool_nine_by_four_is_thirty_six():
    X, t, y, _ = linear_train_data(seed=12, n=120, d=2)
    params = {
        "mlp": {"hidden": (4,), "epochs": 10},
        "boosted_trees": {"rounds": 5, "depth": 2},
    }
    pool = build_pool(LEARNER_KINDS, ["ridge", "knn", "boosted_trees", "mlp"],
                      X, t, y, base_params=params, random_state=0)
    assert len(pool) == 36


def test_pool_rejects_duplicates():
    X, t, y, _ = linear_train_data(seed=13, n=100, d=2)
    with pytest.raises(ValidationError, match="duplicate candidate id"):
        build_pool(["S", "S"], ["ridge"], X, t, y)


def test_every_learner_near_zero_on_null_effect():
    X, t, y, tau = linear_train_data(seed=14, rho=0.0)
    for kind in LEARNER_KINDS:
        model = make_learner(kind, "ridge", random_state=1).fit(X, t, y)
        assert np.mean(np.abs(model.predict(X))) <= 0.05, f"learner={kind}"


def test_outcome_head_exposure_matches_contract():
    X, t, y, _ = linear_train_data(seed=15, n=200, d=3)
    heads = {"S", "T", "X", "DR", "RA"}
    for kind in LEARNER_KINDS:
        model = make_learner(kind, "ridge", random_state=0).fit(X, t, y)
        assert model.has_outcome_head == (kind in heads)
        if not model.has_outcome_head:
            with pytest.raises(ValidationError, match="outcome predictions"):
                model.predict_outcome(X, t)
