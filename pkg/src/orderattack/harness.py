"""The (k, N) order-attack protocol: trial loop, aggregation and report files."""
from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
import logging
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from .blackbox import OPTIMIZERS, OptimizerConfig, SurrogateObjective
from .core import format_epsilon, mean_rank, parse_epsilon
from .metrics import compute_src
from .oracle.database import load_db, rank
from .oracle.database import RankingModel
from .oracle.local import LocalOracle
from .synthetic import gen_synthetic_db
from .whitebox import PGDOrderAttack

log = logging.getLogger(__name__)

ATTACKS = ("none", "pgd") + tuple(OPTIMIZERS)
CSV_HEADER = ("trial", "tau_s", "mean_rank", "queries_used", "seed")


def _parse_range(value):
    if value is None:
        return None
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "none", "unbounded", "∞"):
            return None
        value = int(value)
    if isinstance(value, float) and math.isinf(value):
        return None
    return int(value)


def _parse_shape(value):
    if value is None:
        return None
    if isinstance(value, str):
        if value.strip().lower() in ("", "none"):
            return None
        value = [int(v) for v in value.lower().replace("*", "x").split("x")]
    return tuple(int(v) for v in value)


def _parse_optional_float(value):
    if value is None or (isinstance(value, str) and value.strip().lower() == "none"):
        return None
    return float(parse_epsilon(value))


def _parse_bool(value):
    if isinstance(value, str):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    return bool(value)


def _parse_optional_str(value):
    if value is None or value == "" or value == "none":
        return None
    return str(value)


_PARSERS = {
    "N": _parse_range,
    "epsilon": parse_epsilon,
    "pgd_eta": lambda v: float(parse_epsilon(v)),
    "lr": lambda v: float(parse_epsilon(v)),
    "delta": lambda v: float(parse_epsilon(v)),
    "sigma": _parse_optional_float,
    "reduced_dims": _parse_shape,
    "image_shape": _parse_shape,
    "quantize": _parse_bool,
    "db_path": _parse_optional_str,
    "model_path": _parse_optional_str,
}


@dataclass
class ExperimentConfig:
    k: int = 5
    N: Optional[int] = None
    epsilon: Fraction | float = Fraction(4, 255)
    Q: int = 1000
    trials: int = 200
    attack: str = "nes"
    seed: int = 0
    permutation: str = "random"
    jobs: int = 1
    # dataset
    classes: int = 10
    per_class: int = 100
    embed_dim: int = 32
    intra_class_std: float = 0.1
    center_scale: float = 1.0
    data_seed: int = 0
    image_shape: tuple = (3, 32, 32)
    db_path: Optional[str] = None
    model_path: Optional[str] = None
    # white-box
    pgd_eta: float = 1 / 255
    pgd_steps: int = 24
    xi: float = 10.0
    margin_gamma: float = 0.0
    qa_distractors: int = 256
    quantize: bool = False
    # black-box
    batch: int = 50
    lr: float = 2 / 255
    sigma: Optional[float] = None
    delta: float = 2 / 255
    beta_lr: float = 3.0
    pso_omega: float = 1.1
    pso_phi_p: float = 0.57
    pso_phi_g: float = 0.44
    pso_swarm: int = 40
    reduced_dims: Optional[tuple] = None
    init: str = "zero"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.k < 2:
            raise ValueError("k must be at least 2")
        if self.N is not None and self.k > self.N:
            raise ValueError(f"k={self.k} exceeds the visible range N={self.N}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.Q < 1:
            raise ValueError("query budget Q must be positive")
        if float(self.epsilon) < 0:
            raise ValueError("epsilon must be non-negative")
        if self.attack not in ATTACKS:
            raise ValueError(f"unknown attack {self.attack!r}; choose from {', '.join(ATTACKS)}")
        if self.permutation not in ("random", "identity"):
            raise ValueError("permutation must be 'random' or 'identity'")
        if self.init not in ("zero", "uniform"):
            raise ValueError("init must be 'zero' or 'uniform'")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")
        if (self.db_path is None) != (self.model_path is None):
            raise ValueError("db_path and model_path must be given together")

    @classmethod
    def field_names(cls) -> tuple:
        return tuple(f.name for f in dataclasses.fields(cls))

    @classmethod
    def coerce(cls, key: str, value):
        if key not in cls.field_names():
            raise KeyError(f"unknown config key {key!r}")
        if key in _PARSERS:
            return _PARSERS[key](value)
        default = next(f.default for f in dataclasses.fields(cls) if f.name == key)
        if isinstance(default, bool):
            return _parse_bool(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(parse_epsilon(value))
        return value

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - set(cls.field_names())
        if unknown:
            raise KeyError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**{k: cls.coerce(k, v) for k, v in data.items()})

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        data = {k: getattr(self, k) for k in self.field_names()}
        for key, value in overrides.items():
            data[key] = self.coerce(key, value)
        return ExperimentConfig(**data)

    def to_dict(self) -> dict:
        out = {}
        for name in self.field_names():
            value = getattr(self, name)
            if name == "epsilon":
                value = format_epsilon(value)
            elif name == "N":
                value = "inf" if value is None else value
            elif isinstance(value, tuple):
                value = list(value)
            out[name] = value
        return out

    def optimizer_config(self, seed) -> OptimizerConfig:
        return OptimizerConfig(
            kind=self.attack, batch=self.batch, lr=self.lr, sigma=self.sigma, delta=self.delta,
            beta_lr=self.beta_lr, pso_omega=self.pso_omega, pso_phi_p=self.pso_phi_p,
            pso_phi_g=self.pso_phi_g, pso_swarm=self.pso_swarm, seed=seed,
            reduced_dims=self.reduced_dims,
            image_shape=self.image_shape if self.reduced_dims is not None else None,
            init=self.init)


@dataclass
class TrialRecord:
    trial: int
    tau_s: float
    mean_rank: Optional[float]
    queries_used: int
    seed: int


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    records: list
    wall_seconds: float = 0.0
    summary: dict = field(init=False)

    def __post_init__(self):
        self.summary = summarize(self.records, self.config.N is None)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "summary": self.summary,
            "trials": [dataclasses.asdict(r) for r in self.records],
            "timing": {"wall_seconds": self.wall_seconds,
                       "seconds_per_trial": self.wall_seconds / max(len(self.records), 1)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.records:
            writer.writerow([r.trial, repr(r.tau_s),
                             "" if r.mean_rank is None else repr(r.mean_rank),
                             r.queries_used, r.seed])
        return buf.getvalue()

    def to_text(self) -> str:
        s = self.summary
        cfg = self.config
        rows = [
            ("attack", cfg.attack),
            ("k", cfg.k),
            ("N", "inf" if cfg.N is None else cfg.N),
            ("epsilon", format_epsilon(cfg.epsilon)),
            ("Q", cfg.Q),
            ("trials", s["trials"]),
            ("mean tau_s", f"{s['mean_tau_s']:.3f}"),
            ("stdev tau_s", f"{s['stdev_tau_s']:.3f}"),
            ("max tau_s", f"{s['max_tau_s']:.3f}"),
            ("min tau_s", f"{s['min_tau_s']:.3f}"),
            ("median tau_s", f"{s['median_tau_s']:.3f}"),
            ("mean mR", "-" if s["mean_mean_rank"] is None else f"{s['mean_mean_rank']:.1f}"),
            ("mean queries", f"{s['mean_queries_used']:.1f}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows) + "\n"

    def write(self, prefix) -> list[Path]:
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        paths = [prefix.with_suffix(".json"), prefix.with_suffix(".csv"), prefix.with_suffix(".txt")]
        paths[0].write_text(self.to_json() + "\n", encoding="utf-8")
        paths[1].write_text(self.to_csv(), encoding="utf-8")
        paths[2].write_text(self.to_text(), encoding="utf-8")
        return paths


def summarize(records, with_mean_rank: bool) -> dict:
    taus = [r.tau_s for r in records]
    out = {
        "trials": len(records),
        "mean_tau_s": math.fsum(taus) / len(taus),
        "stdev_tau_s": statistics.stdev(taus) if len(taus) > 1 else 0.0,
        "max_tau_s": max(taus),
        "min_tau_s": min(taus),
        "median_tau_s": statistics.median(taus),
        "mean_queries_used": math.fsum(r.queries_used for r in records) / len(records),
        "mean_mean_rank": None,
    }
    if with_mean_rank:
        ranks = [r.mean_rank for r in records]
        out["mean_mean_rank"] = math.fsum(ranks) / len(ranks)
    return out


def load_dataset(cfg: ExperimentConfig):
    if cfg.db_path is not None:
        db = load_db(cfg.db_path)
        model = RankingModel.load(cfg.model_path)
    else:
        db, model = gen_synthetic_db(cfg.classes, cfg.per_class, cfg.embed_dim,
                                     cfg.intra_class_std, cfg.data_seed, cfg.center_scale,
                                     tuple(cfg.image_shape))
    if cfg.N is not None and len(db) < cfg.N:
        raise ValueError(f"dataset has {len(db)} entries, fewer than N={cfg.N}")
    if len(db) < cfg.k:
        raise ValueError(f"dataset has {len(db)} entries, fewer than k={cfg.k}")
    return db, model


def trial_seed(master: int, trial: int) -> int:
    """Independent per-trial seed, identical in serial and parallel runs."""
    return int(np.random.SeedSequence([master, trial]).generate_state(1)[0])


def sample_permutation(rng, k: int, kind: str = "random") -> tuple:
    """Desired order for one trial: uniform over all k! orders, or the identity."""
    if kind == "identity":
        return tuple(range(k))
    return tuple(int(i) for i in rng.permutation(k))


def run_trial(cfg: ExperimentConfig, db, model, t: int) -> TrialRecord:
    seed = trial_seed(cfg.seed, t)
    rng = np.random.default_rng(seed)
    cid = db.ids[int(rng.integers(len(db)))]
    q = model.preimage(db.embedding(cid))
    clean = rank(model, db, q, cfg.N)
    C = tuple(clean[:cfg.k])
    p = sample_permutation(rng, cfg.k, cfg.permutation)

    eps = float(cfg.epsilon)
    delta = np.zeros_like(q)
    queries = 0
    claim = None
    if cfg.attack == "pgd":
        est = PGDOrderAttack(epsilon=eps, eta=cfg.pgd_eta, steps=cfg.pgd_steps, xi=cfg.xi,
                             margin_gamma=cfg.margin_gamma, qa_distractor_count=cfg.qa_distractors,
                             quantize=cfg.quantize, random_state=seed)
        est.fit(q, model=model, db=db, candidates=C, permutation=p, visible_range=cfg.N)
        delta = est.perturbation_.delta
    elif cfg.attack != "none":
        oracle = LocalOracle(model, db, cfg.N, budget=cfg.Q)
        est = cfg.optimizer_config(seed).build(eps)
        est.fit(q, objective=SurrogateObjective(oracle, C, p))
        delta = est.perturbation_.delta
        queries = est.queries_used_
        claim = est.tau_s_

    # evaluation query, not charged to the attack budget
    visible = rank(model, db, q + delta, cfg.N)
    tau = compute_src(C, p, visible)
    if claim is not None and tau != claim:
        raise RuntimeError(f"trial {t}: optimizer claimed tau_s={claim}, re-evaluation gives {tau}")
    mr = mean_rank(visible, C, None) if cfg.N is None else None
    return TrialRecord(t, tau, mr, queries, seed)


_WORKER = {}


def _worker_init(cfg_dict):
    cfg = ExperimentConfig.from_dict(cfg_dict)
    _WORKER["cfg"] = cfg
    _WORKER["data"] = load_dataset(cfg)


def _worker_trial(t):
    db, model = _WORKER["data"]
    return run_trial(_WORKER["cfg"], db, model, t)


def run_kn_oa(cfg: ExperimentConfig, progress=None) -> ExperimentReport:
    """Run ``cfg.trials`` independent (k, N) order attacks and aggregate them."""
    cfg.validate()
    start = time.perf_counter()
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs, initializer=_worker_init,
                                 initargs=(cfg.to_dict(),)) as pool:
            records = list(pool.map(_worker_trial, range(cfg.trials), chunksize=4))
    else:
        db, model = load_dataset(cfg)
        records = []
        for t in range(cfg.trials):
            records.append(run_trial(cfg, db, model, t))
            if progress is not None:
                progress(t + 1, cfg.trials)
    return ExperimentReport(cfg, records, time.perf_counter() - start)


def run_sweep(cfg: ExperimentConfig, sweep: dict) -> list[tuple[dict, ExperimentReport]]:
    """Cartesian product of override values, one report per combination."""
    keys = list(sweep)
    out = []
    for values in itertools.product(*(sweep[k] for k in keys)):
        overrides = dict(zip(keys, values))
        sub = cfg.with_overrides(overrides)
        log.info("running %s", overrides)
        out.append((overrides, run_kn_oa(sub)))
    return out


def sweep_table(results) -> str:
    """Aligned table with one column per sweep point and tau_s / mR rows."""
    headers = [" ".join(f"{k}={v}" for k, v in ov.items()) for ov, _ in results]
    tau = [f"{rep.summary['mean_tau_s']:.3f}" for _, rep in results]
    mr = ["-" if rep.summary["mean_mean_rank"] is None else f"{rep.summary['mean_mean_rank']:.1f}"
          for _, rep in results]
    widths = [max(len(h), len(a), len(b)) for h, a, b in zip(headers, tau, mr)]
    lines = []
    for label, row in (("", headers), ("tau_s", tau), ("mR", mr)):
        cells = "  ".join(f"{c:>{w}}" for c, w in zip(row, widths))
        lines.append(f"{label:<6}  {cells}")
    return "\n".join(lines) + "\n"
