"""Run configuration: a single JSON document with full defaulting,
unknown-key rejection, and a stable content hash for run directories."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .dgp import DgpConfig
from .dro import SolverConfig
from .kl import RadiusPolicy
from .meta_learners import LEARNER_KINDS
from .selectors import SELECTOR_KINDS
from .validation import ValidationError, require

DEFAULT_BASES = ["ridge", "boosted_trees"]


@dataclass
class DgpSection:
    n: int = 2000
    d: int = 20
    rho: float = 0.1
    xi: float = 1.0
    missing_ratio: float = 0.0
    coeff_p: float = 0.2
    noise_sd: float = 0.1
    treat_offset: float = 3.0
    covariate_csv: Optional[str] = None


@dataclass
class SplitSection:
    ratios: List[float] = field(default_factory=lambda: [0.49, 0.21, 0.30])


@dataclass
class PoolSection:
    learners: List[str] = field(default_factory=lambda: list(LEARNER_KINDS))
    bases: List[str] = field(default_factory=lambda: list(DEFAULT_BASES))
    base_params: Dict[str, dict] = field(default_factory=dict)


@dataclass
class RadiusSection:
    k: int = 5
    offset: float = 5.2
    clamp_nonnegative: bool = True
    standardize: bool = True


@dataclass
class SolverSection:
    iterations: int = 50
    lambda_init: float = 1.0
    lambda_min: float = 1e-6
    lambda_max: float = 1e6
    mode: str = "safeguarded"
    tol: float = 1e-9
    grid_points: int = 64


@dataclass
class SelectorSection:
    kinds: List[str] = field(default_factory=lambda: list(SELECTOR_KINDS))
    nuisance_base: str = "boosted_trees"
    nuisance_params: Optional[dict] = None
    radius: RadiusSection = field(default_factory=RadiusSection)
    solver: SolverSection = field(default_factory=SolverSection)


@dataclass
class EvalSection:
    replications: int = 20


@dataclass
class RunConfig:
    seed: int = 0
    dgp: DgpSection = field(default_factory=DgpSection)
    split: SplitSection = field(default_factory=SplitSection)
    pool: PoolSection = field(default_factory=PoolSection)
    selectors: SelectorSection = field(default_factory=SelectorSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self) -> "RunConfig":
        require(self.eval.replications >= 1, "eval.replications must be >= 1")
        require(len(self.pool.learners) >= 1, "pool.learners must be nonempty")
        require(len(self.pool.bases) >= 1, "pool.bases must be nonempty")
        for lk in self.pool.learners:
            require(lk in LEARNER_KINDS, f"unknown learner kind {lk!r}")
        for kind in self.selectors.kinds:
            require(kind in SELECTOR_KINDS, f"unknown selector kind {kind!r}")
        self.dgp_config(0)  # exercises DGP validation
        self.radius_policy()
        self.solver_config()
        return self

    # Stage seeds are derived deterministically from (global seed, replication,
    # stage), so any stage can be recomputed in isolation.
    def stage_seed(self, replication: int, stage: int) -> int:
        seq = np.random.SeedSequence(self.seed, spawn_key=(replication, stage))
        return int(seq.generate_state(1)[0])

    def dgp_config(self, replication: int) -> DgpConfig:
        s = self.dgp
        return DgpConfig(
            n=s.n, d=s.d, seed=self.stage_seed(replication, 0),
            rho=s.rho, xi=s.xi, missing_ratio=s.missing_ratio,
            coeff_p=s.coeff_p, noise_sd=s.noise_sd, treat_offset=s.treat_offset,
            covariate_csv=s.covariate_csv,
        )

    def radius_policy(self) -> RadiusPolicy:
        r = self.selectors.radius
        return RadiusPolicy(k=r.k, offset=r.offset,
                            clamp_nonnegative=r.clamp_nonnegative,
                            standardize=r.standardize)

    def solver_config(self) -> SolverConfig:
        s = self.selectors.solver
        return SolverConfig(iterations=s.iterations, lambda_init=s.lambda_init,
                            lambda_min=s.lambda_min, lambda_max=s.lambda_max,
                            mode=s.mode, tol=s.tol, grid_points=s.grid_points)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


def _build_section(cls, data: dict, path: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValidationError(f"unknown config key(s) at {path}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = {"radius": RadiusSection, "solver": SolverSection}.get(name)
        if sub is not None and isinstance(value, dict):
            kwargs[name] = _build_section(sub, value, f"{path}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    """Build and validate a RunConfig; every field is defaulted, unknown
    keys are rejected."""
    if not isinstance(data, dict):
        raise ValidationError("config root must be a JSON object")
    sections = {"dgp": DgpSection, "split": SplitSection, "pool": PoolSection,
                "selectors": SelectorSection, "eval": EvalSection}
    unknown = set(data) - set(sections) - {"seed"}
    if unknown:
        raise ValidationError(f"unknown config key(s): {sorted(unknown)}")
    kwargs = {}
    if "seed" in data:
        require(isinstance(data["seed"], int), "seed must be an integer")
        kwargs["seed"] = data["seed"]
    for name, cls in sections.items():
        if name in data:
            require(isinstance(data[name], dict), f"config section {name!r} must be an object")
            kwargs[name] = _build_section(cls, data[name], name)
    return RunConfig(**kwargs).validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file does not exist: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid JSON in {path}: {exc}") from None
    return config_from_dict(data)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
