"""File-based pipeline: generate -> fit -> select -> eval -> report.

Every stage writes flat CSV/JSON artifacts into a run directory and can be
re-run in isolation; stage seeds derive from (global seed, replication,
stage) so outputs are byte-reproducible from the config alone.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .config import RunConfig
from .data import (
    ObservationalDataset,
    SplitAssignment,
    load_dataset,
    split_dataset,
    write_dataset,
)
from .dgp import generate_dataset
from .evaluation import (
    SelectorEval,
    aggregate,
    evaluate_replication,
    oracle_pehe,
    rank_bin_labels,
)
from .kl import AmbiguityRadii, compute_radii
from .meta_learners import build_pool, candidate_id
from .selectors import CandidateView, SelectorScore, run_selectors, view_from_candidate
from .validation import ValidationError, require

STAGE_DGP, STAGE_SPLIT, STAGE_POOL, STAGE_SELECT = 0, 1, 2, 3


def rep_dir(out: Path, replication: int) -> Path:
    return Path(out) / f"rep{replication:03d}"


def candidate_ids(cfg: RunConfig) -> List[str]:
    return [candidate_id(lk, bk) for lk in cfg.pool.learners for bk in cfg.pool.bases]


def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def stage_gen(cfg: RunConfig, replication: int, out: Path, resume: bool = False) -> Path:
    rdir = rep_dir(out, replication)
    rdir.mkdir(parents=True, exist_ok=True)
    ds_path = rdir / "dataset.csv"
    sidecar = rdir / "dataset.json"
    if resume and ds_path.exists() and sidecar.exists():
        return rdir
    generated = generate_dataset(cfg.dgp_config(replication))
    write_dataset(generated.dataset, ds_path)
    meta = {
        "replication": replication,
        "seed": cfg.stage_seed(replication, STAGE_DGP),
        "dgp": asdict(cfg.dgp),
        "coefficients": {
            "beta_t": generated.coefficients.beta_t.tolist(),
            "active_linear": list(generated.coefficients.active_linear),
            "active_pair": [list(p) for p in generated.coefficients.active_pair],
            "active_triple": [list(p) for p in generated.coefficients.active_triple],
            "gamma": generated.coefficients.gamma.tolist(),
        },
        "removed_columns": list(generated.removed_columns),
    }
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return rdir


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _load_split(cfg: RunConfig, replication: int, ds: ObservationalDataset) -> SplitAssignment:
    return split_dataset(ds, tuple(cfg.split.ratios), cfg.stage_seed(replication, STAGE_SPLIT))


def stage_fit(cfg: RunConfig, replication: int, out: Path, resume: bool = False) -> Path:
    rdir = rep_dir(out, replication)
    ds_path = rdir / "dataset.csv"
    if not ds_path.exists():
        raise ValidationError(f"missing dataset for replication {replication}: {ds_path}")
    pred_dir = rdir / "predictions"
    head_dir = rdir / "outcome_heads"
    ids = candidate_ids(cfg)
    if resume and all((pred_dir / f"{cid}.csv").exists() for cid in ids):
        return pred_dir
    pred_dir.mkdir(parents=True, exist_ok=True)
    head_dir.mkdir(parents=True, exist_ok=True)
    ds = load_dataset(ds_path)
    split = _load_split(cfg, replication, ds)
    train = ds.subset(split.train_idx)
    pool = build_pool(
        cfg.pool.learners, cfg.pool.bases,
        train.covariates, train.treatment, train.outcome,
        base_params=cfg.pool.base_params,
        random_state=cfg.stage_seed(replication, STAGE_POOL),
    )
    for cand in pool:
        rows = []
        for split_name in ("valid", "test"):
            idx = split.indices(split_name)
            preds = cand.predict(ds.covariates[idx])
            rows.extend(
                (cand.candidate_id, split_name, int(i), _fmt(p))
                for i, p in zip(idx, preds)
            )
        _write_rows(pred_dir / f"{cand.candidate_id}.csv",
                    ("candidate_id", "split", "row_index", "cate_hat"), rows)
        if cand.has_outcome_head:
            idx = split.indices("valid")
            Xv = ds.covariates[idx]
            y0 = cand.predict_outcome(Xv, np.zeros(idx.size))
            y1 = cand.predict_outcome(Xv, np.ones(idx.size))
            _write_rows(
                head_dir / f"{cand.candidate_id}.csv",
                ("candidate_id", "split", "row_index", "y0_hat", "y1_hat"),
                [
                    (cand.candidate_id, "valid", int(i), _fmt(a), _fmt(b))
                    for i, a, b in zip(idx, y0, y1)
                ],
            )
    return pred_dir


def _read_predictions(path: Path, expect_split: str, expect_idx: np.ndarray) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        by_row = {}
        for row in reader:
            if row["split"] == expect_split:
                by_row[int(row["row_index"])] = float(row["cate_hat"])
    missing = [int(i) for i in expect_idx if int(i) not in by_row]
    if missing:
        raise ValidationError(f"{path} lacks rows {missing[:5]} for split {expect_split!r}")
    return np.array([by_row[int(i)] for i in expect_idx])


def _read_heads(path: Path, expect_idx: np.ndarray):
    if not path.exists():
        return None, None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = {int(r["row_index"]): (float(r["y0_hat"]), float(r["y1_hat"])) for r in reader}
    pairs = [rows[int(i)] for i in expect_idx]
    return (np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))


def load_candidate_views(cfg: RunConfig, replication: int, out: Path,
                         ds: ObservationalDataset, split: SplitAssignment,
                         split_name: str = "valid") -> List[CandidateView]:
    rdir = rep_dir(out, replication)
    idx = split.indices(split_name)
    views = []
    for cid in candidate_ids(cfg):
        pred_path = rdir / "predictions" / f"{cid}.csv"
        if not pred_path.exists():
            raise ValidationError(f"missing predictions for candidate {cid}: {pred_path}")
        cate = _read_predictions(pred_path, split_name, idx)
        yhat0 = yhat1 = None
        if split_name == "valid":
            yhat0, yhat1 = _read_heads(rdir / "outcome_heads" / f"{cid}.csv", idx)
        views.append(CandidateView(candidate_id=cid, cate=cate, yhat0=yhat0, yhat1=yhat1))
    return views


# ---------------------------------------------------------------------------
# select
# ---------------------------------------------------------------------------

def stage_select(cfg: RunConfig, replication: int, out: Path, resume: bool = False) -> Path:
    rdir = rep_dir(out, replication)
    scores_path = rdir / "scores.csv"
    log_path = rdir / "run_log.json"
    if resume and scores_path.exists() and log_path.exists():
        return scores_path
    ds = load_dataset(rdir / "dataset.csv")
    split = _load_split(cfg, replication, ds)
    valid = ds.subset(split.valid_idx)
    views = load_candidate_views(cfg, replication, out, ds, split, "valid")
    radii = None
    if "drm" in cfg.selectors.kinds:
        radii = compute_radii(valid, cfg.radius_policy())
    scores = run_selectors(
        views, valid, cfg.selectors.kinds,
        radii=radii,
        solver_cfg=cfg.solver_config(),
        nuisance_base=cfg.selectors.nuisance_base,
        nuisance_params=cfg.selectors.nuisance_params,
        random_state=cfg.stage_seed(replication, STAGE_SELECT),
    )
    rows = []
    for sc in scores:
        for cid, value in sc.scores.items():
            rows.append((sc.selector, cid, _fmt(value), int(cid == sc.chosen)))
    _write_rows(scores_path, ("selector", "candidate_id", "score", "chosen"), rows)
    log = {
        "replication": replication,
        "seeds": {
            "dgp": cfg.stage_seed(replication, STAGE_DGP),
            "split": cfg.stage_seed(replication, STAGE_SPLIT),
            "pool": cfg.stage_seed(replication, STAGE_POOL),
            "select": cfg.stage_seed(replication, STAGE_SELECT),
        },
        "radii": None if radii is None else {
            "eps0": radii.eps0,
            "eps1": radii.eps1,
            "raw_control_to_treated": radii.divergence_control_to_treated,
            "raw_treated_to_control": radii.divergence_treated_to_control,
        },
        "solver_mode": cfg.selectors.solver.mode,
        "selectors": {sc.selector: {"chosen": sc.chosen, **sc.details} for sc in scores},
    }
    with open(log_path, "w", encoding="utf-8") as fh:
        json.dump(log, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return scores_path


def read_scores(path: Path) -> List[SelectorScore]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        order: List[str] = []
        by_selector: Dict[str, Dict[str, float]] = {}
        chosen: Dict[str, str] = {}
        for row in reader:
            sel = row["selector"]
            if sel not in by_selector:
                by_selector[sel] = {}
                order.append(sel)
            by_selector[sel][row["candidate_id"]] = float(row["score"])
            if row["chosen"] == "1":
                chosen[sel] = row["candidate_id"]
    return [
        SelectorScore(selector=sel, scores=by_selector[sel], chosen=chosen[sel])
        for sel in order
    ]


# ---------------------------------------------------------------------------
# eval / report
# ---------------------------------------------------------------------------

def stage_eval(cfg: RunConfig, replication: int, out: Path, resume: bool = False) -> Path:
    rdir = rep_dir(out, replication)
    eval_path = rdir / "eval.csv"
    if resume and eval_path.exists():
        return eval_path
    ds = load_dataset(rdir / "dataset.csv")
    if ds.true_cate_oracle is None:
        raise ValidationError("evaluation requires oracle effect values in the dataset")
    split = _load_split(cfg, replication, ds)
    test_idx = split.indices("test")
    truth = ds.true_cate_oracle[test_idx]
    oracle_values = {}
    for cid in candidate_ids(cfg):
        pred_path = rdir / "predictions" / f"{cid}.csv"
        preds = _read_predictions(pred_path, "test", test_idx)
        oracle_values[cid] = oracle_pehe(preds, truth)
    scores = read_scores(rdir / "scores.csv")
    report = evaluate_replication(scores, oracle_values)
    rows = [
        (sel, _fmt(ev.regret), _fmt(ev.spearman), ev.selected_rank, ev.rank_bin)
        for sel, ev in report.items()
    ]
    _write_rows(eval_path, ("selector", "regret", "spearman", "selected_rank", "rank_bin"),
                rows)
    oracle_rows = [(cid, _fmt(v)) for cid, v in oracle_values.items()]
    _write_rows(rdir / "oracle_pehe.csv", ("candidate_id", "oracle_pehe"), oracle_rows)
    return eval_path


def read_eval(path: Path) -> Dict[str, SelectorEval]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return {
            row["selector"]: SelectorEval(
                regret=float(row["regret"]),
                spearman=float(row["spearman"]),
                selected_rank=int(row["selected_rank"]),
                rank_bin=row["rank_bin"],
            )
            for row in reader
        }


def stage_report(cfg: RunConfig, out: Path) -> Path:
    out = Path(out)
    reports = []
    for i in range(cfg.eval.replications):
        path = rep_dir(out, i) / "eval.csv"
        if not path.exists():
            raise ValidationError(f"missing evaluation for replication {i}: {path}")
        reports.append(read_eval(path))
    J = len(candidate_ids(cfg))
    summaries = aggregate(reports, J)
    _write_rows(
        out / "summary.csv",
        ("selector", "regret_mean", "regret_sd", "spearman_mean", "spearman_sd"),
        [
            (s.selector, _fmt(s.regret_mean), _fmt(s.regret_sd),
             _fmt(s.spearman_mean), _fmt(s.spearman_sd))
            for s in summaries
        ],
    )
    _write_rows(
        out / "rank_bins.csv",
        ("selector", "bin", "percent"),
        [
            (s.selector, label, _fmt(s.bin_percent[label]))
            for s in summaries
            for label in rank_bin_labels(J)
        ],
    )
    long_rows = []
    for i, rep in enumerate(reports):
        for sel, ev in rep.items():
            long_rows.append((i, sel, "regret", _fmt(ev.regret)))
            long_rows.append((i, sel, "spearman", _fmt(ev.spearman)))
    _write_rows(out / "long.csv", ("replication", "selector", "metric", "value"), long_rows)
    return out / "summary.csv"


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def run_replication(cfg: RunConfig, replication: int, out: Path, resume: bool = False) -> None:
    stage_gen(cfg, replication, out, resume)
    stage_fit(cfg, replication, out, resume)
    stage_select(cfg, replication, out, resume)
    stage_eval(cfg, replication, out, resume)


def _replication_worker(cfg_dict: dict, replication: int, out: str, resume: bool) -> int:
    from .config import config_from_dict

    run_replication(config_from_dict(cfg_dict), replication, Path(out), resume)
    return replication


def bench(cfg: RunConfig, out, jobs: int = 1, resume: bool = False) -> Path:
    """Run the whole pipeline for every replication, then aggregate."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    from .config import save_config

    save_config(cfg, out / "config.json")
    reps = list(range(cfg.eval.replications))
    if jobs <= 1:
        for i in reps:
            run_replication(cfg, i, out, resume)
    else:
        cfg_dict = cfg.to_dict()
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_replication_worker, cfg_dict, i, str(out), resume)
                for i in reps
            ]
            for f in futures:
                f.result()
    return stage_report(cfg, out)
