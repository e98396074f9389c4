"""Command-line pipeline: gen, ingest, fit, select, eval, report, bench.

Every flag maps onto a config path; --set key=value handles anything that
lacks a dedicated shortcut. Exit codes: 0 success, 2 validation error,
1 runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

from .config import RunConfig, config_from_dict, load_config, save_config
from .data import ColumnSchema, load_dataset, write_dataset
from .pipeline import (
    bench,
    rep_dir,
    run_replication,
    stage_eval,
    stage_fit,
    stage_gen,
    stage_report,
    stage_select,
)
from .validation import ValidationError

SETTINGS = {
    "A": {"xi": 1.0, "missing_ratio": 0.0},
    "B": {"rho": 0.1, "missing_ratio": 0.0},
    "C": {"rho": 0.1, "xi": 1.0, "missing_ratio": 0.5},
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="config JSON path")
    parser.add_argument("--out", type=str, default=None, help="run directory")
    parser.add_argument("--seed", type=int, default=None, help="global seed override")
    parser.add_argument("--jobs", type=int, default=1, help="parallel replications")
    parser.add_argument("--resume", action="store_true",
                        help="skip stages whose artifacts already exist")
    parser.add_argument("--setting", choices=sorted(SETTINGS), default=None,
                        help="benchmark setting shortcut")
    parser.add_argument("--rho", type=float, default=None, help="effect complexity")
    parser.add_argument("--xi", type=float, default=None, help="selection-bias level")
    parser.add_argument("--m", type=float, default=None, help="hidden-confounding ratio")
    parser.add_argument("--n", type=int, default=None, help="dataset size")
    parser.add_argument("--d", type=int, default=None, help="covariate dimension")
    parser.add_argument("--replications", type=int, default=None)
    parser.add_argument("--rep", type=int, default=None,
                        help="operate on a single replication index")
    parser.add_argument("--set", action="append", default=[], metavar="PATH=JSON",
                        help="override any config entry, e.g. dgp.noise_sd=0.2")


def _apply_overrides(data: dict, args: argparse.Namespace) -> dict:
    def put(path: str, value) -> None:
        node = data
        keys = path.split(".")
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ValidationError(f"config path {path!r} does not address an object")
        node[keys[-1]] = value

    if args.setting:
        for key, value in SETTINGS[args.setting].items():
            put(f"dgp.{key}", value)
    for flag, path in (
        ("rho", "dgp.rho"), ("xi", "dgp.xi"), ("m", "dgp.missing_ratio"),
        ("n", "dgp.n"), ("d", "dgp.d"), ("replications", "eval.replications"),
        ("seed", "seed"),
    ):
        value = getattr(args, flag)
        if value is not None:
            put(path, value)
    for item in args.set:
        if "=" not in item:
            raise ValidationError(f"--set expects PATH=JSON, got {item!r}")
        path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings are convenient on the command line
        put(path.strip(), value)
    return data


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValidationError("config root must be a JSON object")
    else:
        data = {}
    return config_from_dict(_apply_overrides(data, args))


def _out_dir(args: argparse.Namespace, cfg: RunConfig) -> Path:
    out = Path(args.out) if args.out else Path(f"runs/run-{cfg.config_hash()}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _reps(args: argparse.Namespace, cfg: RunConfig):
    if args.rep is not None:
        return [args.rep]
    return list(range(cfg.eval.replications))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cateselect",
        description="Select CATE estimators with robust and baseline metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("gen", "generate benchmark datasets"),
        ("fit", "fit the candidate pool and cache predictions"),
        ("select", "score candidates with the configured selectors"),
        ("eval", "compute oracle metrics per replication"),
        ("report", "aggregate replication metrics"),
        ("bench", "run the whole pipeline end to end"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
    ingest = sub.add_parser("ingest", help="import an external dataset CSV as a replication")
    _add_common(ingest)
    ingest.add_argument("--data", type=str, required=True, help="dataset CSV path")
    ingest.add_argument("--t-col", type=str, default="t")
    ingest.add_argument("--y-col", type=str, default="y")
    ingest.add_argument("--y0-col", type=str, default="y0")
    ingest.add_argument("--y1-col", type=str, default="y1")
    ingest.add_argument("--cate-col", type=str, default="tau")
    ingest.add_argument("--x-cols", type=str, default=None,
                        help="comma-separated covariate columns (default: all others)")
    return parser


def _cmd_gen(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    save_config(cfg, out / "config.json")
    for i in _reps(args, cfg):
        stage_gen(cfg, i, out, args.resume)
    print(f"wrote {len(_reps(args, cfg))} dataset(s) under {out}")
    return 0


def _cmd_ingest(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    schema = ColumnSchema(
        treatment=args.t_col, outcome=args.y_col,
        y0=args.y0_col, y1=args.y1_col, true_cate=args.cate_col,
        covariates=args.x_cols.split(",") if args.x_cols else None,
    )
    ds = load_dataset(args.data, schema)
    rep = args.rep if args.rep is not None else 0
    rdir = rep_dir(out, rep)
    rdir.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, rdir / "dataset.csv")
    with open(rdir / "dataset.json", "w", encoding="utf-8") as fh:
        json.dump({"replication": rep, "source": str(args.data),
                   "n": ds.n, "d": ds.d}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"ingested {args.data} -> {rdir}")
    return 0


def _cmd_stage(stage_fn, args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    for i in _reps(args, cfg):
        stage_fn(cfg, i, out, args.resume)
    return 0


def _cmd_report(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    summary = stage_report(cfg, out)
    print(f"summary written to {summary}")
    return 0


def _cmd_bench(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    summary = bench(cfg, out, jobs=args.jobs, resume=args.resume)
    print(f"benchmark complete; summary at {summary}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve_config(args)
        if args.command == "gen":
            return _cmd_gen(args, cfg)
        if args.command == "ingest":
            return _cmd_ingest(args, cfg)
        if args.command == "fit":
            return _cmd_stage(stage_fit, args, cfg)
        if args.command == "select":
            return _cmd_stage(stage_select, args, cfg)
        if args.command == "eval":
            return _cmd_stage(stage_eval, args, cfg)
        if args.command == "report":
            return _cmd_report(args, cfg)
        if args.command == "bench":
            return _cmd_bench(args, cfg)
        raise ValidationError(f"unknown command {args.command!r}")
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
