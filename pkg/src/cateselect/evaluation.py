"""Oracle-based evaluation of selectors: PEHE, regret, rank correlation,
rank bins, and multi-replication aggregation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np
from scipy import stats

from .selectors import SelectorScore
from .validation import ValidationError, as_float_vector, check_consistent_length, require

# Rank-interval upper edges for a 36-candidate pool; other pool sizes
# rescale proportionally (floor of J*edge/36).
_BASE_EDGES = (3, 11, 19, 27)
_BASE_POOL = 36


def oracle_pehe(cate_hat, cate_true) -> float:
    """Root mean squared error between predicted and true effects."""
    a = as_float_vector(cate_hat, "cate_hat")
    b = as_float_vector(cate_true, "cate_true")
    check_consistent_length(a, b, names=["cate_hat", "cate_true"])
    return float(np.sqrt(np.mean((a - b) ** 2)))


def regret(score: SelectorScore, oracle_values: Dict[str, float]) -> float:
    """Oracle error of the chosen candidate minus the best in the pool."""
    missing = set(score.scores) - set(oracle_values)
    if missing:
        raise ValidationError(f"oracle values missing for candidates: {sorted(missing)}")
    best = min(oracle_values[c] for c in score.scores)
    return float(oracle_values[score.chosen] - best)


def spearman_correlation(selector_scores: Sequence[float],
                         oracle_values: Sequence[float]) -> float:
    """Rank correlation with average ranks on ties (undefined inputs -> 0)."""
    a = np.asarray(selector_scores, dtype=np.float64)
    b = np.asarray(oracle_values, dtype=np.float64)
    check_consistent_length(a, b, names=["selector_scores", "oracle_values"])
    ra = stats.rankdata(a, method="average")
    rb = stats.rankdata(b, method="average")
    if np.all(ra == ra[0]) or np.all(rb == rb[0]):
        return 0.0
    return float(np.corrcoef(ra, rb)[0, 1])


def selected_rank(chosen: str, oracle_values: Dict[str, float]) -> int:
    """1-based rank of the chosen candidate in ascending oracle order
    (ties share the better rank)."""
    if chosen not in oracle_values:
        raise ValidationError(f"chosen candidate {chosen!r} has no oracle value")
    target = oracle_values[chosen]
    return 1 + sum(1 for v in oracle_values.values() if v < target)


def rank_bin_edges(J: int) -> List[int]:
    """Upper edges of the five rank intervals for a pool of size J."""
    require(J >= 1, "pool size must be >= 1")
    edges = [int(np.floor(J * e / _BASE_POOL)) for e in _BASE_EDGES]
    return edges + [J]


def rank_bin_labels(J: int) -> List[str]:
    edges = rank_bin_edges(J)
    labels = []
    lo = 1
    for hi in edges:
        labels.append(f"{lo}-{hi}")
        lo = hi + 1
    return labels


def rank_bin(rank: int, J: int) -> str:
    require(1 <= rank <= J, f"rank must lie in [1, {J}], got {rank}")
    edges = rank_bin_edges(J)
    labels = rank_bin_labels(J)
    for hi, label in zip(edges, labels):
        if rank <= hi:
            return label
    return labels[-1]


@dataclass(frozen=True)
class SelectorEval:
    regret: float
    spearman: float
    selected_rank: int
    rank_bin: str


def evaluate_replication(
    selector_scores: Sequence[SelectorScore],
    oracle_values: Dict[str, float],
) -> Dict[str, SelectorEval]:
    """Per-selector regret/rank metrics for one replication."""
    J = len(oracle_values)
    out = {}
    for score in selector_scores:
        ids = list(score.scores)
        rho = spearman_correlation(
            [score.scores[c] for c in ids], [oracle_values[c] for c in ids]
        )
        rank = selected_rank(score.chosen, oracle_values)
        out[score.selector] = SelectorEval(
            regret=regret(score, oracle_values),
            spearman=rho,
            selected_rank=rank,
            rank_bin=rank_bin(rank, J),
        )
    return out


@dataclass(frozen=True)
class SelectorSummary:
    selector: str
    regret_mean: float
    regret_sd: float
    spearman_mean: float
    spearman_sd: float
    bin_percent: Dict[str, float]


def aggregate(reports: Sequence[Dict[str, SelectorEval]], J: int) -> List[SelectorSummary]:
    """Mean +- population sd over replications, plus rank-bin percentages.

    Selector order follows the first report; replication order is irrelevant.
    """
    require(len(reports) >= 1, "need at least one replication report")
    selectors = list(reports[0])
    for rep in reports:
        if list(rep) != selectors:
            raise ValidationError("replication reports disagree on selectors")
    labels = rank_bin_labels(J)
    out = []
    for sel in selectors:
        regrets = np.array([rep[sel].regret for rep in reports])
        rhos = np.array([rep[sel].spearman for rep in reports])
        bins = [rep[sel].rank_bin for rep in reports]
        percent = {
            label: 100.0 * sum(1 for b in bins if b == label) / len(bins)
            for label in labels
        }
        out.append(
            SelectorSummary(
                selector=sel,
                regret_mean=float(regrets.mean()),
                regret_sd=float(regrets.std()),
                spearman_mean=float(rhos.mean()),
                spearman_sd=float(rhos.std()),
                bin_percent=percent,
            )
        )
    return out
