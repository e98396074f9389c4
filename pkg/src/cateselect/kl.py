"""k-nearest-neighbor KL divergence between covariate samples, and the
ambiguity radii derived from the treated/control covariate shift.

The estimator is the classic nearest-neighbor construction

    D_hat = (d/n) * sum_i log(nu_k(i) / rho_k(i)) + log(m / (n-1)),

where rho_k(i) is the distance from p_i to its k-th nearest neighbor inside
the P sample (self excluded) and nu_k(i) to its k-th nearest neighbor in the
Q sample. Neighbor search is brute force (desk scale) with chunked rows.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import ObservationalDataset, standardize_columns
from .validation import ValidationError, as_float_matrix, require

# Duplicated covariate rows (binary columns) produce zero distances; floor
# them before the log.
DISTANCE_FLOOR = 1e-12

_CHUNK_TARGET = 4_000_000  # distance-matrix entries held at once


@dataclass(frozen=True)
class RadiusPolicy:
    k: int = 5
    offset: float = 5.2
    clamp_nonnegative: bool = True
    standardize: bool = True

    def __post_init__(self):
        require(self.k >= 1, "k must be >= 1")
        require(self.offset >= 0.0, "offset must be >= 0")


@dataclass(frozen=True)
class AmbiguityRadii:
    """Solved radii plus the raw divergence estimates they were built from."""

    eps0: float
    eps1: float
    divergence_control_to_treated: float
    divergence_treated_to_control: float


def _kth_neighbor_distances(P: np.ndarray, Q: np.ndarray, k: int, exclude_self: bool):
    """Distance from each row of P to its k-th nearest neighbor in Q."""
    q_norms = (Q**2).sum(axis=1)
    rank = k if exclude_self else k - 1
    out = np.empty(P.shape[0])
    chunk = max(1, _CHUNK_TARGET // max(1, Q.shape[0]))
    for start in range(0, P.shape[0], chunk):
        block = P[start : start + chunk]
        d2 = (block**2).sum(axis=1)[:, None] + q_norms[None, :] - 2.0 * (block @ Q.T)
        np.clip(d2, 0.0, None, out=d2)
        kth = np.partition(d2, rank, axis=1)[:, rank]
        out[start : start + chunk] = np.sqrt(kth)
    return np.maximum(out, DISTANCE_FLOOR)


def knn_kl_divergence(p_samples, q_samples, k: int = 5,
                      clamp_nonnegative: bool = False) -> float:
    """Estimate D(P || Q) from samples; raw value may be negative."""
    P = as_float_matrix(p_samples, "p_samples")
    Q = as_float_matrix(q_samples, "q_samples")
    if P.shape[1] != Q.shape[1]:
        raise ValidationError(
            f"dimension mismatch: p has d={P.shape[1]}, q has d={Q.shape[1]}"
        )
    n, m, d = P.shape[0], Q.shape[0], P.shape[1]
    # the k-th neighbor is taken among the n-1 non-self rows
    require(n - 1 > k, f"n must exceed k (n={n} gives {n - 1} neighbors, k={k})")
    require(m >= k, f"q needs at least k rows (m={m}, k={k})")
    rho = _kth_neighbor_distances(P, P, k, exclude_self=True)
    nu = _kth_neighbor_distances(P, Q, k, exclude_self=False)
    # sorted summation keeps the estimate bit-identical under row permutations
    est = (d / n) * float(np.sum(np.sort(np.log(nu / rho)))) + float(np.log(m / (n - 1)))
    if clamp_nonnegative:
        est = max(est, 0.0)
    return est


def compute_radii(validation: ObservationalDataset,
                  policy: Optional[RadiusPolicy] = None) -> AmbiguityRadii:
    """Ambiguity radii from the validation split's covariate shift.

    eps1 covers the control->treated direction, eps0 the treated->control
    direction; both get the policy offset added on top of the (optionally
    clamped) divergence estimate.
    """
    policy = policy or RadiusPolicy()
    X = validation.covariates
    if policy.standardize:
        X, _ = standardize_columns(X)
    t = validation.treatment
    Xt, Xc = X[t == 1], X[t == 0]
    for name, arm in (("treated", Xt), ("control", Xc)):
        if arm.shape[0] <= policy.k + 1:
            raise ValidationError(
                f"{name} arm has {arm.shape[0]} units; needs more than k={policy.k}"
            )
    div_ct = knn_kl_divergence(Xc, Xt, policy.k)
    div_tc = knn_kl_divergence(Xt, Xc, policy.k)
    eps1 = (max(div_ct, 0.0) if policy.clamp_nonnegative else div_ct) + policy.offset
    eps0 = (max(div_tc, 0.0) if policy.clamp_nonnegative else div_tc) + policy.offset
    return AmbiguityRadii(
        eps0=eps0,
        eps1=eps1,
        divergence_control_to_treated=div_ct,
        divergence_treated_to_control=div_tc,
    )
