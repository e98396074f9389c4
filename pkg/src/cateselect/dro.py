"""Worst-case expectation over a KL ball, solved through its convex dual.

For a sample s_1..s_n and radius eps >= 0 the dual objective is

    F(lam) = lam*eps + lam*log( (1/n) * sum_i exp(s_i/lam) ),   lam > 0,

which is convex in lam; its minimum is the robust (worst-case) mean of s.
All evaluations use the max-shifted form so small lam cannot overflow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .validation import ValidationError, as_float_vector, require

GROUPS = ("control", "treat")

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_INV_PHI_SQ = (3.0 - math.sqrt(5.0)) / 2.0


@dataclass(frozen=True)
class DualObjective:
    """One group's dual objective: z = effect*outcome products, radius eps.

    The control objective uses +z, the treat objective uses -z.
    """

    z_values: np.ndarray
    epsilon: float
    group: str = "control"

    def __post_init__(self):
        z = as_float_vector(self.z_values, "z_values")
        require(self.epsilon >= 0.0, "epsilon must be >= 0")
        require(self.group in GROUPS, f"group must be one of {GROUPS}")
        object.__setattr__(self, "z_values", z)

    @property
    def s(self) -> np.ndarray:
        return self.z_values if self.group == "control" else -self.z_values


@dataclass(frozen=True)
class SolverConfig:
    iterations: int = 50
    lambda_init: float = 1.0
    lambda_min: float = 1e-6
    lambda_max: float = 1e6
    mode: str = "safeguarded"
    tol: float = 1e-9
    grid_points: int = 64

    def __post_init__(self):
        require(0 < self.lambda_min < self.lambda_max, "need 0 < lambda_min < lambda_max")
        require(self.iterations >= 1, "iterations must be >= 1")
        require(self.mode in ("safeguarded", "algorithm1"), f"unknown mode {self.mode!r}")
        require(self.grid_points >= 4, "grid_points must be >= 4")


@dataclass(frozen=True)
class RobustValue:
    value: float
    lambda_star: float
    iterations_used: int
    trace: Tuple[Tuple[float, float], ...]
    mode_used: str


def _eval_s(s: np.ndarray, epsilon: float, lam: float) -> float:
    # expm1/log1p keep full precision when s/lam is tiny (large lam), where
    # the plain log-mean-exp cancels catastrophically.
    m = float(np.max(s))
    t = float(np.mean(np.expm1((s - m) / lam)))
    value = lam * epsilon + m + lam * math.log1p(t)
    if not np.isfinite(value):
        raise ValidationError(f"dual objective non-finite at lambda={lam}")
    return value


def _eval_s_derivative(s: np.ndarray, epsilon: float, lam: float) -> float:
    m = float(np.max(s))
    w = np.exp((s - m) / lam)
    wsum = float(np.sum(w))
    log_mean = m / lam + math.log(wsum / s.size)
    weighted_mean = float(np.sum(s * w)) / wsum
    deriv = epsilon + log_mean - weighted_mean / lam
    if not np.isfinite(deriv):
        raise ValidationError(f"dual derivative non-finite at lambda={lam}")
    return deriv


def eval_dual(obj: DualObjective, lam: float) -> float:
    """Dual objective value at lam (> 0), computed in stabilized form."""
    require(lam > 0, "lambda must be > 0")
    return _eval_s(obj.s, obj.epsilon, lam)


def eval_dual_derivative(obj: DualObjective, lam: float) -> float:
    """d/dlam of the dual objective at lam (> 0), stabilized."""
    require(lam > 0, "lambda must be > 0")
    return _eval_s_derivative(obj.s, obj.epsilon, lam)


def _golden_section(fn, a: float, b: float, tol: float):
    """Minimize a unimodal fn over [a, b] in log space; returns eval history."""
    la, lb = math.log(a), math.log(b)
    history = []

    def f(u):
        val = fn(math.exp(u))
        history.append((math.exp(u), val))
        return val

    span = lb - la
    c = la + _INV_PHI_SQ * span
    d = la + _INV_PHI * span
    yc, yd = f(c), f(d)
    iterations = 0
    while span > tol and iterations < 200:
        if yc < yd:
            lb, d, yd = d, c, yc
            span = lb - la
            c = la + _INV_PHI_SQ * span
            yc = f(c)
        else:
            la, c, yc = c, d, yd
            span = lb - la
            d = la + _INV_PHI * span
            yd = f(d)
        iterations += 1
    return history, iterations


def solve_robust_value(obj: DualObjective, cfg: Optional[SolverConfig] = None) -> RobustValue:
    """Minimize the dual objective over [lambda_min, lambda_max].

    safeguarded (default): coarse log-spaced grid brackets the minimizer of
    the convex objective, golden-section refines it; the reported value is
    the minimum over every evaluated point.

    algorithm1: damped Newton-style updates lam <- max(lam - F/F', lambda_min)
    for a fixed number of iterations, returning the best recorded value.

    A constant sample short-circuits analytically: the objective becomes
    lam*eps + c whose infimum over lam > 0 is c (approached, not attained).
    """
    cfg = cfg or SolverConfig()
    if obj.z_values.size == 0:
        raise ValidationError(f"no units in arm for group {obj.group!r}")
    s = obj.s
    if float(np.max(s)) == float(np.min(s)):
        c = float(s[0])
        return RobustValue(
            value=c,
            lambda_star=cfg.lambda_min,
            iterations_used=0,
            trace=((cfg.lambda_min, c),),
            mode_used="constant",
        )

    if cfg.mode == "algorithm1":
        return _solve_algorithm1(obj, cfg)
    return _solve_safeguarded(obj, cfg)


def _solve_safeguarded(obj: DualObjective, cfg: SolverConfig) -> RobustValue:
    s, eps = obj.s, obj.epsilon
    grid = np.geomspace(cfg.lambda_min, cfg.lambda_max, cfg.grid_points)
    evals = [(float(lam), _eval_s(s, eps, float(lam))) for lam in grid]
    i_best = int(np.argmin([v for _, v in evals]))
    lo = grid[max(0, i_best - 1)]
    hi = grid[min(len(grid) - 1, i_best + 1)]
    history, iters = _golden_section(lambda lam: _eval_s(s, eps, lam), lo, hi, cfg.tol)
    evals.extend(history)
    lam_star, value = min(evals, key=lambda pair: pair[1])
    return RobustValue(
        value=value,
        lambda_star=lam_star,
        iterations_used=iters,
        trace=tuple(evals),
        mode_used="safeguarded",
    )


def _solve_algorithm1(obj: DualObjective, cfg: SolverConfig) -> RobustValue:
    s, eps = obj.s, obj.epsilon
    lam = cfg.lambda_init
    evals = [(lam, _eval_s(s, eps, lam))]
    used = 0
    for _ in range(cfg.iterations):
        deriv = _eval_s_derivative(s, eps, lam)
        if deriv == 0.0:
            break
        lam_new = lam - evals[-1][1] / deriv
        if not math.isfinite(lam_new):
            break
        # projected into [lambda_min, lambda_max]: the evaluation is only
        # defined for lam > 0 and the convergence analysis assumes lam <= max
        lam = min(max(lam_new, cfg.lambda_min), cfg.lambda_max)
        evals.append((lam, _eval_s(s, eps, lam)))
        used += 1
    lam_star, value = min(evals, key=lambda pair: pair[1])
    return RobustValue(
        value=value,
        lambda_star=lam_star,
        iterations_used=used,
        trace=tuple(evals),
        mode_used="algorithm1",
    )


def finite_sample_bound(
    n: int,
    u_t: float,
    delta: float,
    lambda_bounds: Tuple[float, float],
    z_bounds: Tuple[float, float],
) -> float:
    """Diagnostic high-probability bound on |empirical - population| robust value.

    Decays at rate n^{-1/2}; the exponential constant depends on where the
    range [m_lo, m_hi] of the products sits relative to zero.
    """
    lam_lo, lam_hi = lambda_bounds
    m_lo, m_hi = z_bounds
    require(0 < lam_lo <= lam_hi, "need 0 < lambda_min <= lambda_max")
    require(m_lo <= m_hi, "need z lower bound <= upper bound")
    require(0 < u_t < 1, "u_t must be in (0,1)")
    require(0 < delta < 1, "delta must be in (0,1)")
    n_min = 2.0 / u_t**2 * math.log(2.0 / delta)
    if n < n_min:
        raise ValidationError(f"bound requires n >= {n_min:.1f}, got n={n}")
    if m_hi <= 0:
        c_exp = math.exp(m_hi / lam_hi - m_lo / lam_lo)
    elif m_lo <= 0 <= m_hi:
        c_exp = math.exp(m_hi / lam_lo - m_lo / lam_lo)
    else:
        c_exp = math.exp(m_hi / lam_lo - m_lo / lam_hi)
    log_term = math.log(2.0 / delta)
    term1 = math.sqrt(8.0 * lam_hi**2 * log_term * c_exp**2 / (n * u_t**2))
    term2 = math.sqrt(2.0 * lam_hi**2 * log_term / (n * u_t**2))
    return term1 + term2
