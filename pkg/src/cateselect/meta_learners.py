"""The nine CATE meta-learners and the candidate pool builder.

Each learner fits its own nuisance models on the training split (no
cross-fitting) and, where the recipe has one, a second-stage effect
regressor of the same base kind. Learners optionally accept pre-fitted
nuisance models so a caller can share them across several learners.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .base_models import make_classifier, make_regressor
from .validation import (
    ValidationError,
    as_binary_vector,
    as_float_matrix,
    as_float_vector,
    check_both_arms,
    check_consistent_length,
    require,
)

LEARNER_KINDS = ("S", "T", "PS", "IPW", "X", "U", "DR", "R", "RA")

# Floor on |t - propensity| when it appears in a denominator.
NU_MIN = 0.01


@dataclass
class Nuisances:
    """Optional pre-fitted nuisance models, shared across learners.

    mu0/mu1: arm-wise outcome regressors; mu: pooled outcome regressor;
    pi: propensity classifier; mu_joint: outcome regressor on (X, t).
    """

    mu0: object = None
    mu1: object = None
    mu: object = None
    pi: object = None
    mu_joint: object = None


def _check_train_inputs(X, t, y):
    X = as_float_matrix(X, "X")
    t = as_binary_vector(t, "t")
    y = as_float_vector(y, "y")
    check_consistent_length(X, t, y, names=["X", "t", "y"])
    check_both_arms(t, "training data")
    return X, t, y


def _require_arm_sizes(t, minimum=2):
    for arm, label in ((1, "treated"), (0, "control")):
        count = int(np.sum(t == arm))
        if count < minimum:
            raise ValidationError(
                f"{label} arm has {count} samples; needs at least {minimum}"
            )


def _floor_nu(nu, nu_min):
    sign = np.where(nu >= 0, 1.0, -1.0)
    return sign * np.maximum(np.abs(nu), nu_min)


class _CATELearnerBase(BaseEstimator):
    learner_kind = "?"
    has_outcome_head = False

    def __init__(self, base: str = "ridge", base_params: Optional[dict] = None,
                 nu_min: float = NU_MIN, random_state=None):
        self.base = base
        self.base_params = base_params
        self.nu_min = nu_min
        self.random_state = random_state

    def _streams(self, count: int):
        entropy = self.random_state
        if isinstance(entropy, np.random.SeedSequence):
            return entropy.spawn(count)
        return np.random.SeedSequence(entropy).spawn(count)

    def _regressor(self, stream):
        return make_regressor(self.base, self.base_params, random_state=stream)

    def _classifier(self, stream):
        return make_classifier(self.base, self.base_params, random_state=stream)

    def _pi_values(self, model, X):
        return model.predict_proba(X)[:, 1]

    def predict_outcome(self, X, t):
        raise ValidationError(
            f"{self.learner_kind}-learner does not expose outcome predictions"
        )


def _fit_arm_models(learner, X, t, y, nuis, streams):
    mu0 = nuis.mu0
    mu1 = nuis.mu1
    if mu0 is None:
        mu0 = learner._regressor(streams[0]).fit(X[t == 0], y[t == 0])
    if mu1 is None:
        mu1 = learner._regressor(streams[1]).fit(X[t == 1], y[t == 1])
    return mu0, mu1


class SLearner(_CATELearnerBase):
    """Single outcome model on (X, t); effect is the t=1 vs t=0 difference."""

    learner_kind = "S"
    has_outcome_head = True

    def fit(self, X, t, y, nuisances: Optional[Nuisances] = None):
        X, t, y = _check_train_inputs(X, t, y)
        nuis = nuisances or Nuisances()
        streams = self._streams(1)
        self.mu_joint_ = nuis.mu_joint
        if self.mu_joint_ is None:
            design = np.column_stack([X, t])
            self.mu_joint_ = self._regressor(streams[0]).fit(design, y)
        return self

    def predict(self, X):
        X = as_float_matrix(X, "X")
        ones = np.ones(X.shape[0])
        return self.mu_joint_.predict(np.column_stack([X, ones])) - self.mu_joint_.predict(
            np.column_stack([X, 0.0 * ones])
        )

    def predict_outcome(self, X, t):
        X = as_float_matrix(X, "X")
        return self.mu_joint_.predict(np.column_stack([X, np.asarray(t, dtype=np.float64)]))


class TLearner(_CATELearnerBase):
    """Arm-wise outcome models; effect is their difference."""

    learner_kind = "T"
    has_outcome_head = True

    def fit(self, X, t, y, nuisances: Optional[Nuisances] = None):
        X, t, y = _check_train_inputs(X, t, y)
        _require_arm_sizes(t)
        self.mu0_, self.mu1_ = _fit_arm_models(self, X, t, y, nuisances or Nuisances(),
                                               self._streams(2))
        return self

    def predict(self, X):
        X = as_float_matrix(X, "X")
        return self.mu1_.predict(X) - self.mu0_.predict(X)

    def predict_outcome(self, X, t):
        X = as_float_matrix(X, "X")
        t = np.asarray(t)
        return np.where(t == 1, self.mu1_.predict(X), self.mu0_.predict(X))


class PSLearner(_CATELearnerBase):
    """Second-stage regression of S-learner effects on the covariates."""

    learner_kind = "PS"

    def fit(self, X, t, y, nuisances: Optional[Nuisances] = None):
        X, t, y = _check_train_inputs(X, t, y)
        streams = self._streams(2)
        first = SLearner(self.base, self.base_params, random_state=streams[0])
        first.fit(X, t, y, nuisances=nuisances)
        targets = first.predict(X)
        self.stage2_ = self._regressor(streams[1]).fit(X, targets)
        return self

    def predict(self, X):
        return self.stage2_.predict(as_float_matrix(X, "X"))


class IPWLearner(_CATELearnerBase):
    """Regression on inverse-propensity-weighted pseudo-outcomes."""

    learner_kind = "IPW"

    def fit(self, X, t, y, nuisances: Optional[Nuisances] = None):
        X, t, y = _check_train_inputs(X, t, y)
        nuis = nuisances or Nuisances()
        streams = self._streams(2)
        pi_model = nuis.pi or self._classifier(streams[0]).fit(X, t)
        pi = self._pi_values(pi_model, X)
        pseudo = t * y / pi - (1 - t) * y / (1 - pi)
        self.pi_ = pi_model
        self.stage2_ = self._regressor(streams[1]).fit(X, pseudo)
        return self

    def predict(self, X):
        return self.stage2_.predict(as_float_matrix(X, "X"))


class XLearner(_CATELearnerBase):
    """Arm-wise imputed-effect regressions blended by the propensity."""

    learner_kind = "X"
    has_outcome_head = True

    def fit(self, X, t, y, nuisances: Optional[Nuisances] = None):
        X, t, y = _check_train_inputs(X, t, y)
        _require_arm_sizes(t)
        nuis = nuisances or Nuisances()
        streams = self._streams(5)
        self.mu0_, self.mu1_ = _fit_arm_models(self, X, t, y, nuis, streams[:2])
        self.pi_ = nuis.pi or self._classifier(streams[2]).fit(X, t)
        d1 = y[t == 1] - self.mu0_.predict(X[t == 1])
        d0 = self.mu1_.predict(X[t == 0]) - y[t == 0]
        self.tau1_ = self._regressor(streams[3]).fit(X[t == 1], d1)
        self.tau0_ = self._regressor(streams[4]).fit(X[t == 0], d0)
        return self

    def predict(self, X):
        X = as_float_matrix(X, "X")
        pi = self._pi_values(self.pi_, X)
        return (1.0 - pi) * self.tau1_.predict(X) + pi * self.tau0_.predict(X)

    def predict_outcome(self, X, t):
        X = as_float_matrix(X, "X")
        t = np.asarray(t)
        return np.where(t == 1, self.mu1_.predict(X), self.mu0_.predict(X))


class ULearner(_CATELearnerBase):
    """Regression on the residual ratio (outcome resid / treatment resid)."""

    learner_kind = "U"

    def fit(self, X, t, y, nuisances: Optional[Nuisances] = None):
        X, t, y = _check_train_inputs(X, t, y)
        nuis = nuisances or Nuisances()
        streams = self._streams(3)
        self.mu_ = nuis.mu or self._regressor(streams[0]).fit(X, y)
        self.pi_ = nuis.pi or self._classifier(streams[1]).fit(X, t)
        xi = y - self.mu_.predict(X)
        nu = _floor_nu(t - self._pi_values(self.pi_, X), self.nu_min)
        self.stage2_ = self._regressor(streams[2]).fit(X, xi / nu)
        return self

    def predict(self, X):
        return self.stage2_.predict(as_float_matrix(X, "X"))


class DRLearner(_CATELearnerBase):
    """Regression on doubly robust pseudo-outcomes."""

    learner_kind = "DR"
    has_outcome_head = True

    def fit(self, X, t, y, nuisances: Optional[Nuisances] = None):
        X, t, y = _check_train_inputs(X, t, y)
        _require_arm_sizes(t)
        nuis = nuisances or Nuisances()
        streams = self._streams(4)
        self.mu0_, self.mu1_ = _fit_arm_models(self, X, t, y, nuis, streams[:2])
        self.pi_ = nuis.pi or self._classifier(streams[2]).fit(X, t)
        pseudo = dr_pseudo_outcomes(
            y, t,
            self.mu0_.predict(X), self.mu1_.predict(X),
            self._pi_values(self.pi_, X),
        )
        self.stage2_ = self._regressor(streams[3]).fit(X, pseudo)
        return self

    def predict(self, X):
        return self.stage2_.predict(as_float_matrix(X, "X"))

    def predict_outcome(self, X, t):
        X = as_float_matrix(X, "X")
        t = np.asarray(t)
        return np.where(t == 1, self.mu1_.predict(X), self.mu0_.predict(X))


class RLearner(_CATELearnerBase):
    """Residual-on-residual objective solved as a weighted regression.

    Minimizing sum_i (xi_i - nu_i * f(X_i))^2 equals a regression of
    xi_i/nu_i on X_i with weights nu_i^2.
    """

    learner_kind = "R"

    def fit(self, X, t, y, nuisances: Optional[Nuisances] = None):
        X, t, y = _check_train_inputs(X, t, y)
        nuis = nuisances or Nuisances()
        streams = self._streams(3)
        self.mu_ = nuis.mu or self._regressor(streams[0]).fit(X, y)
        self.pi_ = nuis.pi or self._classifier(streams[1]).fit(X, t)
        xi = y - self.mu_.predict(X)
        nu = _floor_nu(t - self._pi_values(self.pi_, X), self.nu_min)
        self.stage2_ = self._regressor(streams[2]).fit(X, xi / nu, sample_weight=nu**2)
        return self

    def predict(self, X):
        return self.stage2_.predict(as_float_matrix(X, "X"))


class RALearner(_CATELearnerBase):
    """Regression on regression-adjusted pseudo-outcomes."""

    learner_kind = "RA"
    has_outcome_head = True

    def fit(self, X, t, y, nuisances: Optional[Nuisances] = None):
        X, t, y = _check_train_inputs(X, t, y)
        _require_arm_sizes(t)
        nuis = nuisances or Nuisances()
        streams = self._streams(3)
        self.mu0_, self.mu1_ = _fit_arm_models(self, X, t, y, nuis, streams[:2])
        pseudo = t * (y - self.mu0_.predict(X)) + (1 - t) * (self.mu1_.predict(X) - y)
        self.stage2_ = self._regressor(streams[2]).fit(X, pseudo)
        return self

    def predict(self, X):
        return self.stage2_.predict(as_float_matrix(X, "X"))

    def predict_outcome(self, X, t):
        X = as_float_matrix(X, "X")
        t = np.asarray(t)
        return np.where(t == 1, self.mu1_.predict(X), self.mu0_.predict(X))


def dr_pseudo_outcomes(y, t, mu0, mu1, pi):
    """Doubly robust effect pseudo-outcome for each unit."""
    term1 = mu1 + t * (y - mu1) / pi
    term0 = mu0 + (1 - t) * (y - mu0) / (1 - pi)
    return term1 - term0


LEARNER_REGISTRY = {
    "S": SLearner,
    "T": TLearner,
    "PS": PSLearner,
    "IPW": IPWLearner,
    "X": XLearner,
    "U": ULearner,
    "DR": DRLearner,
    "R": RLearner,
    "RA": RALearner,
}


def make_learner(kind: str, base: str, base_params=None, random_state=None):
    if kind not in LEARNER_REGISTRY:
        raise ValidationError(f"unknown learner kind {kind!r}; choose from {LEARNER_KINDS}")
    return LEARNER_REGISTRY[kind](base=base, base_params=base_params,
                                  random_state=random_state)


@dataclass(frozen=True)
class CandidateEstimator:
    """A fitted (learner kind x base kind) effect predictor."""

    candidate_id: str
    learner_kind: str
    base_kind: str
    model: object

    def predict(self, X) -> np.ndarray:
        out = np.asarray(self.model.predict(X), dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise ValidationError(f"candidate {self.candidate_id} produced non-finite output")
        return out

    @property
    def has_outcome_head(self) -> bool:
        return bool(getattr(self.model, "has_outcome_head", False))

    def predict_outcome(self, X, t) -> np.ndarray:
        return self.model.predict_outcome(X, t)


def candidate_id(learner_kind: str, base_kind: str) -> str:
    return f"{learner_kind}_{base_kind}"


def build_pool(
    learner_kinds: Sequence[str],
    base_kinds: Sequence[str],
    X, t, y,
    base_params: Optional[dict] = None,
    random_state: int = 0,
):
    """Fit the full cross product of learners x bases on the training data.

    Ordering is learner-major then base; every candidate gets its own seed
    stream derived from the pool seed.
    """
    ids = [candidate_id(lk, bk) for lk in learner_kinds for bk in base_kinds]
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise ValidationError(f"duplicate candidate id {dup!r} in pool")
    pool = []
    i = 0
    for lk in learner_kinds:
        for bk in base_kinds:
            stream = np.random.SeedSequence(random_state, spawn_key=(i,))
            params = (base_params or {}).get(bk)
            learner = make_learner(lk, bk, base_params=params, random_state=stream)
            learner.fit(X, t, y)
            pool.append(
                CandidateEstimator(
                    candidate_id=ids[i], learner_kind=lk, base_kind=bk, model=learner
                )
            )
            i += 1
    return pool
