"""Candidate scoring: the distributionally robust metric and all baseline
selection metrics, evaluated on the validation split.

Every selector maps each candidate to a scalar score; the candidate with
the smallest score is chosen (ties broken by pool order).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .base_models import make_classifier, make_regressor
from .data import ObservationalDataset, standardize_columns
from .dro import DualObjective, RobustValue, SolverConfig, solve_robust_value
from .kl import AmbiguityRadii
from .meta_learners import (
    CandidateEstimator,
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
    dr_pseudo_outcomes,
)
from .validation import ValidationError, as_float_vector, check_consistent_length, require

PLUG_LEARNER_KINDS = ("S", "T", "PS", "IPW", "X", "U", "DR", "R", "RA")

SELECTOR_KINDS = (
    ("drm",)
    + tuple(f"plug_{k}" for k in PLUG_LEARNER_KINDS)
    + ("pseudo_dr", "pseudo_r", "pseudo_if", "matching", "factual", "random")
)

FACTUAL_SENTINEL = math.inf


@dataclass(frozen=True)
class CandidateView:
    """A candidate's cached predictions on the validation rows."""

    candidate_id: str
    cate: np.ndarray
    yhat0: Optional[np.ndarray] = None
    yhat1: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "cate", as_float_vector(self.cate, "cate"))
        for name in ("yhat0", "yhat1"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, as_float_vector(v, name))

    @property
    def has_outcome_head(self) -> bool:
        return self.yhat0 is not None and self.yhat1 is not None


def view_from_candidate(cand: CandidateEstimator, X_valid) -> CandidateView:
    """Evaluate a fitted candidate on the validation covariates."""
    n = X_valid.shape[0]
    yhat0 = yhat1 = None
    if cand.has_outcome_head:
        yhat0 = cand.predict_outcome(X_valid, np.zeros(n))
        yhat1 = cand.predict_outcome(X_valid, np.ones(n))
    return CandidateView(
        candidate_id=cand.candidate_id, cate=cand.predict(X_valid), yhat0=yhat0, yhat1=yhat1
    )


@dataclass(frozen=True)
class SelectorScore:
    selector: str
    scores: Dict[str, float]
    chosen: str
    details: Dict[str, object] = field(default_factory=dict)


def _rmse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean((a - b) ** 2)))


# ---------------------------------------------------------------------------
# Shared validation-split nuisances
# ---------------------------------------------------------------------------

class ValidationNuisances:
    """Nuisance models fitted lazily on the validation split, shared by all
    plug-in and pseudo-outcome selectors."""

    def __init__(self, valid: ObservationalDataset, base: str = "boosted_trees",
                 base_params: Optional[dict] = None, random_state: int = 0):
        self.valid = valid
        self.base = base
        self.base_params = base_params
        self.random_state = random_state
        self._cache: Dict[str, object] = {}

    def _stream(self, key: int):
        return np.random.SeedSequence(self.random_state, spawn_key=(key,))

    def _fit(self, name: str, builder):
        if name not in self._cache:
            self._cache[name] = builder()
        return self._cache[name]

    @property
    def mu0(self):
        ds = self.valid
        return self._fit("mu0", lambda: make_regressor(
            self.base, self.base_params, self._stream(0)
        ).fit(ds.covariates[ds.treatment == 0], ds.outcome[ds.treatment == 0]))

    @property
    def mu1(self):
        ds = self.valid
        return self._fit("mu1", lambda: make_regressor(
            self.base, self.base_params, self._stream(1)
        ).fit(ds.covariates[ds.treatment == 1], ds.outcome[ds.treatment == 1]))

    @property
    def mu(self):
        ds = self.valid
        return self._fit("mu", lambda: make_regressor(
            self.base, self.base_params, self._stream(2)
        ).fit(ds.covariates, ds.outcome))

    @property
    def pi(self):
        ds = self.valid
        return self._fit("pi", lambda: make_classifier(
            self.base, self.base_params, self._stream(3)
        ).fit(ds.covariates, ds.treatment))

    @property
    def mu_joint(self):
        ds = self.valid
        design = np.column_stack([ds.covariates, ds.treatment.astype(np.float64)])
        return self._fit("mu_joint", lambda: make_regressor(
            self.base, self.base_params, self._stream(4)
        ).fit(design, ds.outcome))

    def as_nuisances(self, *names: str) -> Nuisances:
        return Nuisances(**{name: getattr(self, name) for name in names})

    def mu0_values(self):
        return self.mu0.predict(self.valid.covariates)

    def mu1_values(self):
        return self.mu1.predict(self.valid.covariates)

    def mu_values(self):
        return self.mu.predict(self.valid.covariates)

    def pi_values(self):
        return self.pi.predict_proba(self.valid.covariates)[:, 1]

    def plug_predictions(self, learner_kind: str) -> np.ndarray:
        """Fit the plug-in learner of the given kind on the validation split
        (reusing shared nuisances) and evaluate it on the validation rows."""
        key = f"plug_{learner_kind}"
        if key in self._cache:
            return self._cache[key]
        ds = self.valid
        stream = self._stream(10 + PLUG_LEARNER_KINDS.index(learner_kind))
        builders = {
            "S": (SLearner, ("mu_joint",)),
            "T": (TLearner, ("mu0", "mu1")),
            "PS": (PSLearner, ("mu_joint",)),
            "IPW": (IPWLearner, ("pi",)),
            "X": (XLearner, ("mu0", "mu1", "pi")),
            "U": (ULearner, ("mu", "pi")),
            "DR": (DRLearner, ("mu0", "mu1", "pi")),
            "R": (RLearner, ("mu", "pi")),
            "RA": (RALearner, ("mu0", "mu1")),
        }
        if learner_kind not in builders:
            raise ValidationError(f"unknown plug-in learner kind {learner_kind!r}")
        cls, shared = builders[learner_kind]
        learner = cls(base=self.base, base_params=self.base_params, random_state=stream)
        learner.fit(ds.covariates, ds.treatment, ds.outcome,
                    nuisances=self.as_nuisances(*shared))
        preds = learner.predict(ds.covariates)
        self._cache[key] = preds
        return preds


# ---------------------------------------------------------------------------
# Individual metrics
# ---------------------------------------------------------------------------

def score_drm(cate, valid: ObservationalDataset, radii: AmbiguityRadii,
              solver_cfg: Optional[SolverConfig] = None):
    """Distributionally robust selection score for one candidate.

    Factual terms plus worst-case values for the two unobservable
    counterfactual cross-terms; note the treat-group value is weighted by
    the control count and vice versa.
    """
    cate = as_float_vector(cate, "cate")
    check_consistent_length(cate, valid.outcome, names=["cate", "outcome"])
    t = valid.treatment
    z = cate * valid.outcome
    zc, zt = z[t == 0], z[t == 1]
    if zc.size == 0 or zt.size == 0:
        raise ValidationError("validation split lacks a treatment arm")
    v0 = solve_robust_value(DualObjective(zc, radii.eps0, "control"), solver_cfg)
    v1 = solve_robust_value(DualObjective(zt, radii.eps1, "treat"), solver_cfg)
    n = valid.n
    score = float(np.mean(cate**2)) + (2.0 / n) * (
        float(zc.sum()) - float(zt.sum()) + zc.size * v1.value + zt.size * v0.value
    )
    detail = {
        "v0": v0.value, "v1": v1.value,
        "lambda0": v0.lambda_star, "lambda1": v1.lambda_star,
        "mode0": v0.mode_used, "mode1": v1.mode_used,
    }
    return score, detail


def score_plug_in(cate, plug_cate) -> float:
    cate = as_float_vector(cate, "cate")
    plug_cate = as_float_vector(plug_cate, "plug_cate")
    check_consistent_length(cate, plug_cate, names=["cate", "plug_cate"])
    return _rmse(cate, plug_cate)


def score_pseudo_dr(cate, valid: ObservationalDataset, mu0, mu1, pi) -> float:
    pseudo = dr_pseudo_outcomes(valid.outcome, valid.treatment, mu0, mu1, pi)
    return _rmse(as_float_vector(cate, "cate"), pseudo)


def score_pseudo_r(cate, valid: ObservationalDataset, mu, pi) -> float:
    cate = as_float_vector(cate, "cate")
    resid = (valid.outcome - mu) - cate * (valid.treatment - pi)
    return float(np.sqrt(np.mean(resid**2)))


def score_pseudo_if(cate, valid: ObservationalDataset, mu0, mu1, pi):
    """Influence-function metric; the mean can be negative, in which case
    the score is sign(mean)*sqrt(|mean|) and a flag is raised."""
    cate = as_float_vector(cate, "cate")
    t = valid.treatment.astype(np.float64)
    y = valid.outcome
    tau_tilde = mu1 - mu0
    A = t - pi
    C = pi * (1 - pi)
    B = 2.0 * t * (t - pi) / C
    diff = tau_tilde - cate
    per_unit = (1 - B) * tau_tilde**2 + B * y * diff - A * diff**2 + cate**2
    mean = float(np.mean(per_unit))
    negative = mean < 0
    score = math.copysign(math.sqrt(abs(mean)), mean)
    return score, negative


def matched_effects(valid: ObservationalDataset) -> np.ndarray:
    """Counterfactual imputation by 1-NN in the opposite arm (standardized
    Euclidean distance); returns the matched effect for every unit."""
    X, _ = standardize_columns(valid.covariates)
    t = valid.treatment
    y = valid.outcome
    idx_t = np.flatnonzero(t == 1)
    idx_c = np.flatnonzero(t == 0)
    if idx_t.size == 0 or idx_c.size == 0:
        raise ValidationError("matching needs both arms in the validation split")
    out = np.empty(valid.n)
    for rows, pool in ((idx_t, idx_c), (idx_c, idx_t)):
        d2 = ((X[rows][:, None, :] - X[pool][None, :, :]) ** 2).sum(axis=2)
        nearest = pool[np.argmin(d2, axis=1)]
        out[rows] = (2 * t[rows] - 1) * (y[rows] - y[nearest])
    return out


def score_matching(cate, matched: np.ndarray) -> float:
    return _rmse(as_float_vector(cate, "cate"), matched)


def score_factual(view: CandidateView, valid: ObservationalDataset) -> float:
    """Factual MSE of the candidate's outcome predictions; candidates
    without outcome heads rank last via a +inf sentinel."""
    if not view.has_outcome_head:
        return FACTUAL_SENTINEL
    predicted = np.where(valid.treatment == 1, view.yhat1, view.yhat0)
    return float(np.mean((predicted - valid.outcome) ** 2))


# ---------------------------------------------------------------------------
# Running a set of selectors over a pool
# ---------------------------------------------------------------------------

def _choose(views: Sequence[CandidateView], scores: List[float]) -> str:
    return views[int(np.argmin(scores))].candidate_id


def run_selectors(
    views: Sequence[CandidateView],
    valid: ObservationalDataset,
    selector_kinds: Sequence[str],
    radii: Optional[AmbiguityRadii] = None,
    solver_cfg: Optional[SolverConfig] = None,
    nuisance_base: str = "boosted_trees",
    nuisance_params: Optional[dict] = None,
    random_state: int = 0,
) -> List[SelectorScore]:
    """Score every candidate under every requested selector.

    Nuisance models for the plug-in/pseudo selectors are fitted once on the
    validation split and shared. The radii are required only when 'drm' is
    among the selector kinds.
    """
    for kind in selector_kinds:
        if kind not in SELECTOR_KINDS:
            raise ValidationError(f"unknown selector kind {kind!r}")
    if not views:
        raise ValidationError("candidate pool is empty")
    for v in views:
        check_consistent_length(v.cate, valid.outcome,
                                names=[f"{v.candidate_id} predictions", "validation rows"])
    nuis = ValidationNuisances(valid, base=nuisance_base, base_params=nuisance_params,
                               random_state=random_state)
    matched = None
    results = []
    for kind in selector_kinds:
        details: Dict[str, object] = {}
        if kind == "drm":
            require(radii is not None, "drm selector needs ambiguity radii")
            scores = []
            lam = {}
            for v in views:
                s, det = score_drm(v.cate, valid, radii, solver_cfg)
                scores.append(s)
                lam[v.candidate_id] = {"lambda0": det["lambda0"], "lambda1": det["lambda1"],
                                       "v0": det["v0"], "v1": det["v1"]}
            details["duals"] = lam
            details["eps0"] = radii.eps0
            details["eps1"] = radii.eps1
        elif kind.startswith("plug_"):
            plug = nuis.plug_predictions(kind.split("_", 1)[1])
            scores = [score_plug_in(v.cate, plug) for v in views]
        elif kind == "pseudo_dr":
            mu0, mu1, pi = nuis.mu0_values(), nuis.mu1_values(), nuis.pi_values()
            scores = [score_pseudo_dr(v.cate, valid, mu0, mu1, pi) for v in views]
        elif kind == "pseudo_r":
            mu, pi = nuis.mu_values(), nuis.pi_values()
            scores = [score_pseudo_r(v.cate, valid, mu, pi) for v in views]
        elif kind == "pseudo_if":
            mu0, mu1, pi = nuis.mu0_values(), nuis.mu1_values(), nuis.pi_values()
            scores = []
            flagged = []
            for v in views:
                s, negative = score_pseudo_if(v.cate, valid, mu0, mu1, pi)
                scores.append(s)
                if negative:
                    flagged.append(v.candidate_id)
            if flagged:
                details["negative_radicand_candidates"] = flagged
        elif kind == "matching":
            if matched is None:
                matched = matched_effects(valid)
            scores = [score_matching(v.cate, matched) for v in views]
        elif kind == "factual":
            scores = [score_factual(v, valid) for v in views]
            details["sentinel_candidates"] = [
                v.candidate_id for v, s in zip(views, scores) if not math.isfinite(s)
            ]
        elif kind == "random":
            rng = np.random.default_rng(np.random.SeedSequence(random_state,
                                                               spawn_key=(999,)))
            scores = list(rng.random(len(views)))
        else:  # pragma: no cover
            raise ValidationError(f"unhandled selector kind {kind!r}")
        results.append(
            SelectorScore(
                selector=kind,
                scores={v.candidate_id: float(s) for v, s in zip(views, scores)},
                chosen=_choose(views, scores),
                details=details,
            )
        )
    return results
