"""Semi-synthetic benchmark data generation.

Treatment is assigned by a logistic model with a tunable selection-bias
level; outcomes follow a sparse third-order interaction polynomial with a
linear heterogeneous effect. Hidden confounding is simulated by removing a
fraction of covariate columns after generation.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import ColumnSchema, ObservationalDataset, load_dataset
from .validation import ValidationError, as_float_matrix, require

# Above this dimension the third-order tier is subsampled instead of enumerated.
TRIPLE_ENUMERATION_LIMIT = 60
TRIPLE_CAP = 20_000


@dataclass(frozen=True)
class DgpConfig:
    n: int
    d: int
    seed: int
    rho: float = 0.1
    xi: float = 1.0
    missing_ratio: float = 0.0
    coeff_p: float = 0.2
    noise_sd: float = 0.1
    treat_offset: float = 3.0
    covariate_csv: Optional[str] = None

    def __post_init__(self):
        require(self.n >= 4, f"n must be >= 4, got {self.n}")
        require(self.d >= 1, f"d must be >= 1, got {self.d}")
        require(0.0 <= self.rho <= 1.0, "rho must be in [0,1]")
        require(self.xi >= 0.0, "xi must be >= 0")
        require(0.0 <= self.missing_ratio < 1.0, "missing_ratio must be in [0,1)")
        require(0.0 <= self.coeff_p <= 1.0, "coeff_p must be in [0,1]")
        require(self.noise_sd >= 0.0, "noise_sd must be >= 0")


@dataclass(frozen=True)
class DgpCoefficients:
    """Sparse active-term representation of the outcome polynomial.

    Index tuples are sorted and non-decreasing within each tuple; every
    candidate term is active independently with the configured probability.
    """

    beta_t: np.ndarray
    active_linear: tuple
    active_pair: tuple
    active_triple: tuple
    gamma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta_t", np.asarray(self.beta_t, dtype=np.float64))
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=np.float64))
        object.__setattr__(self, "active_linear", tuple(int(j) for j in self.active_linear))
        object.__setattr__(
            self, "active_pair", tuple(tuple(int(v) for v in tup) for tup in self.active_pair)
        )
        object.__setattr__(
            self, "active_triple", tuple(tuple(int(v) for v in tup) for tup in self.active_triple)
        )
        d = self.beta_t.shape[0]
        for j in self.active_linear:
            require(0 <= j < d, "linear index out of bounds")
        for tup in self.active_pair:
            require(len(tup) == 2 and 0 <= tup[0] <= tup[1] < d, "bad pair index")
        for tup in self.active_triple:
            require(len(tup) == 3 and 0 <= tup[0] <= tup[1] <= tup[2] < d, "bad triple index")
        require(list(self.active_linear) == sorted(self.active_linear), "linear not sorted")
        require(list(self.active_pair) == sorted(self.active_pair), "pairs not sorted")
        require(list(self.active_triple) == sorted(self.active_triple), "triples not sorted")


def _unrank_triple(rank: int, d: int) -> tuple:
    """Lexicographic unranking of non-decreasing index triples over {0..d-1}."""
    remaining = rank
    j = 0
    while True:
        # number of triples starting at j: C(d-j+1, 2)
        block = (d - j + 1) * (d - j) // 2
        if remaining < block:
            break
        remaining -= block
        j += 1
    k = j
    while True:
        block = d - k
        if remaining < block:
            break
        remaining -= block
        k += 1
    return (j, k, k + remaining)


def _draw_triples(d: int, p: float, rng: np.random.Generator) -> tuple:
    total = (d + 2) * (d + 1) * d // 6
    if d <= TRIPLE_ENUMERATION_LIMIT:
        candidates = list(itertools.combinations_with_replacement(range(d), 3))
        mask = rng.random(len(candidates)) < p
        return tuple(tup for tup, m in zip(candidates, mask) if m)
    count = int(rng.binomial(total, p))
    if count > TRIPLE_CAP:
        warnings.warn(
            f"third-order tier subsampled: {count} active terms capped at {TRIPLE_CAP} "
            f"(d={d} exceeds enumeration limit {TRIPLE_ENUMERATION_LIMIT})"
        )
        count = TRIPLE_CAP
    ranks: set = set()
    while len(ranks) < count:
        draw = rng.integers(0, total, size=count - len(ranks))
        ranks.update(int(r) for r in draw)
    return tuple(sorted(_unrank_triple(r, d) for r in ranks))


def draw_coefficients(cfg: DgpConfig, rng: Optional[np.random.Generator] = None) -> DgpCoefficients:
    """Draw the sparse polynomial structure and the effect pattern.

    Treatment-logit entries and every candidate (j), (j,k), (j,k,l) term are
    active independently with probability ``coeff_p``; effect coordinates
    with probability ``rho``.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    d, p = cfg.d, cfg.coeff_p
    beta_t = (rng.random(d) < p).astype(np.float64)
    linear = tuple(int(j) for j in np.flatnonzero(rng.random(d) < p))
    pair_candidates = list(itertools.combinations_with_replacement(range(d), 2))
    pair_mask = rng.random(len(pair_candidates)) < p
    pairs = tuple(tup for tup, m in zip(pair_candidates, pair_mask) if m)
    triples = _draw_triples(d, p, rng)
    gamma = (rng.random(d) < cfg.rho).astype(np.float64)
    return DgpCoefficients(
        beta_t=beta_t,
        active_linear=linear,
        active_pair=pairs,
        active_triple=triples,
        gamma=gamma,
    )


def treatment_probabilities(
    X: np.ndarray, beta_t: np.ndarray, xi: float, offset: float = 3.0
) -> np.ndarray:
    X = as_float_matrix(X, "X")
    logits = xi * (X @ np.asarray(beta_t, dtype=np.float64) + offset)
    return 1.0 / (1.0 + np.exp(-logits))


def generate_treatment(
    X: np.ndarray,
    beta_t: np.ndarray,
    xi: float,
    offset: float = 3.0,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    rng = np.random.default_rng() if rng is None else rng
    probs = treatment_probabilities(X, beta_t, xi, offset)
    return (rng.random(probs.shape[0]) < probs).astype(np.int64)


def outcome_base(X: np.ndarray, coeffs: DgpCoefficients) -> np.ndarray:
    """Evaluate the treatment-free part of the outcome polynomial."""
    X = as_float_matrix(X, "X")
    base = np.zeros(X.shape[0])
    if coeffs.active_linear:
        base += X[:, list(coeffs.active_linear)].sum(axis=1)
    if coeffs.active_pair:
        pa = np.asarray(coeffs.active_pair)
        base += (X[:, pa[:, 0]] * X[:, pa[:, 1]]).sum(axis=1)
    if coeffs.active_triple:
        ta = np.asarray(coeffs.active_triple)
        base += (X[:, ta[:, 0]] * X[:, ta[:, 1]] * X[:, ta[:, 2]]).sum(axis=1)
    return base


def true_cate(X: np.ndarray, coeffs: DgpCoefficients) -> np.ndarray:
    return as_float_matrix(X, "X") @ coeffs.gamma


def generate_outcomes(
    X: np.ndarray,
    coeffs: DgpCoefficients,
    T: np.ndarray,
    noise_sd: float,
    rng: Optional[np.random.Generator] = None,
):
    """Return (y0, y1, y, tau_true); one shared noise draw per unit.

    The shared draw makes y1 - y0 equal the true effect exactly, which the
    evaluation protocol relies on.
    """
    rng = np.random.default_rng() if rng is None else rng
    X = as_float_matrix(X, "X")
    T = np.asarray(T)
    require(T.shape[0] == X.shape[0], "T length must match X rows")
    base = outcome_base(X, coeffs)
    tau = true_cate(X, coeffs)
    eps = rng.normal(0.0, noise_sd, size=X.shape[0]) if noise_sd > 0 else np.zeros(X.shape[0])
    y0 = base + eps
    y1 = base + tau + eps
    y = np.where(T == 1, y1, y0)
    return y0, y1, y, tau


def remove_columns(ds: ObservationalDataset, cols) -> ObservationalDataset:
    """Drop the given covariate columns; oracle fields are untouched."""
    cols = sorted(set(int(c) for c in cols))
    keep = [j for j in range(ds.d) if j not in cols]
    if not keep:
        raise ValidationError("cannot remove every covariate column")
    return ObservationalDataset(
        covariates=ds.covariates[:, keep],
        treatment=ds.treatment,
        outcome=ds.outcome,
        y0_oracle=ds.y0_oracle,
        y1_oracle=ds.y1_oracle,
        true_cate_oracle=ds.true_cate_oracle,
    )


def apply_hidden_confounding(ds: ObservationalDataset, m: float, seed: int) -> ObservationalDataset:
    """Remove floor(m*d) uniformly chosen covariate columns after generation."""
    require(0.0 <= m < 1.0, "missing ratio must be in [0,1)")
    n_remove = int(np.floor(m * ds.d))
    if n_remove == 0:
        return ds
    rng = np.random.default_rng(seed)
    cols = rng.choice(ds.d, size=n_remove, replace=False)
    return remove_columns(ds, cols)


def synth_covariates(n: int, d: int, seed) -> np.ndarray:
    """Mixed-type covariates: ~70% standard normal columns, rest Bernoulli(0.5)."""
    require(n >= 1 and d >= 1, "n and d must be >= 1")
    rng = np.random.default_rng(seed)
    n_cont = int(np.floor(0.7 * d + 0.5))
    n_cont = min(max(n_cont, 1), d)
    X = np.empty((n, d))
    X[:, :n_cont] = rng.standard_normal((n, n_cont))
    if d > n_cont:
        X[:, n_cont:] = (rng.random((n, d - n_cont)) < 0.5).astype(np.float64)
    return X


@dataclass(frozen=True)
class GeneratedData:
    dataset: ObservationalDataset
    coefficients: DgpCoefficients
    removed_columns: tuple


def generate_dataset(cfg: DgpConfig) -> GeneratedData:
    """Run the full generation pipeline for one replication seed."""
    streams = np.random.SeedSequence(cfg.seed).spawn(5)
    if cfg.covariate_csv is not None:
        X = _load_covariate_matrix(cfg.covariate_csv)
        if cfg.n > X.shape[0]:
            raise ValidationError(
                f"requested n={cfg.n} exceeds the {X.shape[0]} rows in {cfg.covariate_csv}"
            )
        if cfg.n < X.shape[0]:
            rows = np.random.default_rng(streams[0]).choice(X.shape[0], cfg.n, replace=False)
            X = X[np.sort(rows)]
    else:
        X = synth_covariates(cfg.n, cfg.d, streams[0])
    coeffs = draw_coefficients(cfg, np.random.default_rng(streams[1]))
    T = generate_treatment(
        X, coeffs.beta_t, cfg.xi, cfg.treat_offset, np.random.default_rng(streams[2])
    )
    if not (np.any(T == 1) and np.any(T == 0)):
        raise ValidationError(
            f"generated treatment is single-arm (xi={cfg.xi}, seed={cfg.seed}); "
            "increase n or lower xi"
        )
    y0, y1, y, tau = generate_outcomes(
        X, coeffs, T, cfg.noise_sd, np.random.default_rng(streams[3])
    )
    ds = ObservationalDataset(
        covariates=X,
        treatment=T,
        outcome=y,
        y0_oracle=y0,
        y1_oracle=y1,
        true_cate_oracle=tau,
    )
    removed: tuple = ()
    n_remove = int(np.floor(cfg.missing_ratio * ds.d))
    if n_remove > 0:
        cols = np.random.default_rng(streams[4]).choice(ds.d, size=n_remove, replace=False)
        removed = tuple(sorted(int(c) for c in cols))
        ds = remove_columns(ds, removed)
    return GeneratedData(dataset=ds, coefficients=coeffs, removed_columns=removed)


def _load_covariate_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"covariate file does not exist: {path}")
    rows = np.genfromtxt(path, delimiter=",", skip_header=1, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows.reshape(-1, 1)
    return as_float_matrix(rows, "external covariates")
