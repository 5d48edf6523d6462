"""Config-driven experiment pipeline: train, stratify, repeat estimators, report."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .baselines import ActiveSubspaceMap, GaussianMap, as_direction, lhs_estimate
from .estimators import (
    EstimateResult,
    control_coefficients,
    mc_estimate,
    mfmc_allocation,
    mfmc_estimate,
    optimal_allocation_smc,
    proportional_allocation,
    smc_estimate,
    smfmc_allocation,
    smfmc_estimate,
)
from .models import ModelSpec, get_model
from .neuram import CDF_SAMPLERS, Dataset, ManifoldMap, TrainConfig, build_cdf, reparameterized_model, train_neuram
from .stratify import Stratification, SurrogatePool, heuristic_refine_pool, uniform_breakpoints

logger = logging.getLogger(__name__)

ESTIMATORS = ("mc", "lhs-mc", "mfmc", "as-smc", "smc", "smfmc")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, seed: int, cause: BaseException):
        super().__init__(f"stage {stage!r} (seed {seed}) failed: {cause}")
        self.stage = stage
        self.seed = seed


def derive_seed(master_seed: int, label: str, index: int = 0) -> int:
    """64-bit substream seed from ``(master_seed, label, index)``."""
    digest = hashlib.blake2b(f"{master_seed}:{label}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stage_rng(master_seed: int, label: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, label, index))


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "q0"
    lf_model: Optional[str] = None
    estimator: str = "smc"
    allocation: str = "proportional"
    strat_source: str = "uniform"
    strat_file: Optional[str] = None
    split_rule: str = "midpoint"
    label: Optional[str] = None
    M: int = 100
    K: int = 100_000
    cdf_sampler: str = "sobol"
    S: int = 4
    N: int = 1024
    repetitions: int = 1000
    epochs: int = 10_000
    learning_rate: float = 1e-3
    hidden: tuple[int, ...] = (8, 8)
    n_cheap: int = 100_000
    w: float = 0.01
    as_samples: int = 10_000
    seed: int = 0

    def __post_init__(self):
        for k in ("M", "K", "S", "N", "repetitions", "epochs", "n_cheap", "as_samples"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be positive")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.allocation not in ("optimal", "proportional"):
            raise ConfigError(f"unknown allocation {self.allocation!r}")
        if self.strat_source not in ("uniform", "heuristic", "file"):
            raise ConfigError(f"unknown stratification source {self.strat_source!r}")
        if self.strat_source == "file" and not self.strat_file:
            raise ConfigError("strat_source 'file' needs strat_file")
        if self.cdf_sampler not in CDF_SAMPLERS:
            raise ConfigError(f"unknown CDF sampler {self.cdf_sampler!r}")
        if self.split_rule not in ("midpoint", "optimal"):
            raise ConfigError(f"unknown split rule {self.split_rule!r}")
        if self.estimator in ("mfmc", "smfmc") and not self.lf_model:
            raise ConfigError(f"{self.estimator} needs lf_model")
        try:
            get_model(self.model)
            if self.lf_model:
                get_model(self.lf_model)
        except KeyError as exc:
            raise ConfigError(str(exc)) from None
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.estimator in ("mc", "lhs-mc", "mfmc"):
            return self.estimator
        tag = "1" if self.allocation == "optimal" else "2"
        src = {"uniform": "u", "heuristic": "h" if self.split_rule == "midpoint" else "o", "file": "f"}[self.strat_source]
        return f"{self.estimator}({src},{tag})"


def load_configs(path) -> list[ExperimentConfig]:
    """A config file holds one object or a list of objects; a list may start with a ``base`` entry."""
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        return [ExperimentConfig.from_dict(data)]
    base: dict = {}
    out = []
    for entry in data:
        if "base" in entry:
            base = dict(entry["base"])
            continue
        out.append(ExperimentConfig.from_dict({**base, **entry}))
    return out


# -- repetitions ----------------------------------------------------------------------


@dataclass
class RepeatSummary:
    estimates: np.ndarray
    mean: float
    variance: Optional[float]
    mse: Optional[float]
    results: list = field(default_factory=list)

    @property
    def repetitions(self) -> int:
        return len(self.estimates)


def repeat_harness(estimator: Callable[[np.random.Generator], object], repetitions: int, master_seed: int,
                   exact: Optional[float] = None, threads: int = 1, label: str = "rep") -> RepeatSummary:
    """Run ``estimator`` on independent substreams ``derive_seed(master_seed, label, r)``.

    ``estimator`` may return a float or an ``EstimateResult``. The variance is
    the population variance of the estimates (absent for a single run), so
    that ``mse == variance + bias**2``.
    """
    if repetitions < 1:
        raise ValueError("need at least one repetition")

    def one(r: int):
        return r, estimator(stage_rng(master_seed, label, r))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pairs = list(pool.map(one, range(repetitions)))
    else:
        pairs = [one(r) for r in range(repetitions)]
    pairs.sort(key=lambda p: p[0])
    results = [p[1] for p in pairs]
    est = np.array([r.estimate if isinstance(r, EstimateResult) else float(r) for r in results])
    mean = float(np.mean(est))
    variance = float(np.var(est)) if repetitions > 1 else None
    mse = float(np.mean((est - exact) ** 2)) if exact is not None else None
    return RepeatSummary(est, mean, variance, mse, results)


@dataclass
class ReportRow:
    label: str
    estimator: str
    n: int
    repetitions: int
    mean: float
    variance: Optional[float]
    mse: Optional[float]
    ratio: Optional[float] = None
    wall_time: float = 0.0
    hf_evals: float = 0.0
    lf_evals: float = 0.0
    train_evals: int = 0

    CSV_FIELDS = ("label", "estimator", "n", "repetitions", "mean", "variance", "mse", "ratio",
                  "hf_evals", "lf_evals", "train_evals")

    def csv_row(self) -> list[str]:
        def fmt(v):
            if v is None:
                return ""
            return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)
        return [fmt(getattr(self, k)) for k in self.CSV_FIELDS]


def write_table(rows: Sequence[ReportRow], path) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ReportRow.CSV_FIELDS)
    for r in rows:
        w.writerow(r.csv_row())
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


# -- pipeline ----------------------------------------------------------------------------


class Pipeline:
    """Builds (and caches) the trained maps, stratifications and pilot statistics a config needs."""

    def __init__(self, master_seed: int):
        self.seed = master_seed
        self._cache: dict = {}

    def _stage(self, stage: str, key, fn):
        full = (stage, key)
        if full not in self._cache:
            try:
                self._cache[full] = fn()
            except Exception as exc:
                raise StageError(stage, self.seed, exc) from exc
        return self._cache[full]

    @staticmethod
    def _map_key(cfg: ExperimentConfig, model_name: str) -> tuple:
        return (model_name, cfg.M, cfg.K, cfg.cdf_sampler, cfg.epochs, cfg.learning_rate, cfg.hidden)

    def manifold(self, cfg: ExperimentConfig, model_name: str) -> ManifoldMap:
        key = self._map_key(cfg, model_name)

        def build():
            spec = get_model(model_name)
            data = Dataset.from_model(spec, cfg.M, stage_rng(self.seed, f"data:{model_name}"))
            tcfg = TrainConfig(cfg.epochs, cfg.learning_rate, derive_seed(self.seed, f"train:{model_name}") % 2**32,
                               cfg.hidden)
            model = train_neuram(data, tcfg, spec.dist)
            cdf = build_cdf(model, spec.dist, cfg.K, stage_rng(self.seed, f"cdf:{model_name}"),
                            sampler=cfg.cdf_sampler)
            return ManifoldMap(model, cdf)

        return self._stage("train", key, build)

    def lf_model(self, cfg: ExperimentConfig) -> ModelSpec:
        hmap = self.manifold(cfg, cfg.model)
        lmap = self.manifold(cfg, cfg.lf_model)
        return reparameterized_model(hmap, lmap, get_model(cfg.lf_model))

    def pool(self, cfg: ExperimentConfig, with_lf: bool) -> SurrogatePool:
        key = (self._map_key(cfg, cfg.model), cfg.lf_model if with_lf else None, cfg.n_cheap)

        def build():
            hmap = self.manifold(cfg, cfg.model)
            lf = self.lf_model(cfg) if with_lf else None
            return SurrogatePool.draw(hmap, get_model(cfg.model).dist, cfg.n_cheap,
                                      stage_rng(self.seed, "pilot"), lf=lf)

        return self._stage("pilot", key, build)

    def stratification(self, cfg: ExperimentConfig) -> Stratification:
        if cfg.strat_source == "uniform":
            return uniform_breakpoints(cfg.S)
        if cfg.strat_source == "file":
            return self._stage("stratify", ("file", cfg.strat_file), lambda: Stratification.load(cfg.strat_file))
        mf = cfg.estimator == "smfmc"
        key = (self._map_key(cfg, cfg.model), cfg.S, cfg.allocation, cfg.split_rule, mf, cfg.n_cheap)

        def build():
            pool = self.pool(cfg, with_lf=mf)
            strat = heuristic_refine_pool(pool, cfg.S, cfg.allocation, cfg.split_rule, cfg.w if mf else None)
            strat.provenance["seed"] = self.seed
            return strat

        return self._stage("stratify", key, build)

    def as_map(self, cfg: ExperimentConfig) -> ActiveSubspaceMap:
        spec = get_model(cfg.model)

        def build():
            gmap = GaussianMap(spec.dist)
            direction = as_direction(spec, gmap, cfg.as_samples, stage_rng(self.seed, "as"), gradient=spec.gradient)
            return ActiveSubspaceMap(direction, gmap)

        return self._stage("as", (cfg.model, cfg.as_samples), build)

    def estimator(self, cfg: ExperimentConfig) -> tuple[Callable[[np.random.Generator], EstimateResult], dict]:
        """Closure running one repetition, plus a description of what was fixed up front."""
        spec = get_model(cfg.model)
        dist = spec.dist
        info: dict = {"config": cfg.to_dict(), "train_evals": 0}
        kind = cfg.estimator
        if kind == "mc":
            return (lambda rng: mc_estimate(spec, dist, cfg.N, rng)), info
        if kind == "lhs-mc":
            return (lambda rng: lhs_estimate(spec, dist, cfg.N, rng)), info
        if kind == "as-smc":
            if cfg.allocation != "proportional":
                raise ConfigError("as-smc supports proportional allocation only")
            amap = self.as_map(cfg)
            strat = uniform_breakpoints(cfg.S) if cfg.strat_source == "uniform" else self.stratification(cfg)
            alloc = proportional_allocation(strat, cfg.N)
            info["as_direction"] = amap.direction.to_dict()
            info["stratification"] = strat.to_dict()
            return (lambda rng: smc_estimate(spec, dist, amap, strat, alloc, rng)), info

        hmap = self.manifold(cfg, cfg.model)
        info["train_evals"] = cfg.M
        if kind == "smc":
            strat = self.stratification(cfg)
            if cfg.allocation == "optimal":
                stats = self.pool(cfg, with_lf=False).stats(strat)
                alloc = optimal_allocation_smc(strat, stats, cfg.N)
            else:
                alloc = proportional_allocation(strat, cfg.N)
            info["stratification"] = strat.to_dict()
            info["allocation"] = alloc.counts.tolist()
            return (lambda rng: smc_estimate(spec, dist, hmap, strat, alloc, rng)), info

        lf = self.lf_model(cfg)
        lf_train = cfg.M
        info["train_evals"] = cfg.M + lf_train
        pool = self.pool(cfg, with_lf=True)
        if kind == "mfmc":
            alpha, rho = control_coefficients(pool.y, pool.y_lf)
            budget = mfmc_allocation(rho, cfg.w, cfg.N)
            info["budget"] = budget.to_dict()
            info["alpha"] = alpha
            return (lambda rng: mfmc_estimate(spec, lf, dist, budget, alpha, rng)), info
        strat = self.stratification(cfg)
        stats = pool.stats(strat)
        budgets = smfmc_allocation(strat, stats, cfg.w, cfg.N, cfg.allocation)
        alphas = stats.alpha
        info["stratification"] = strat.to_dict()
        info["budgets"] = [b.to_dict() for b in budgets]
        info["alphas"] = alphas.tolist()
        return (lambda rng: smfmc_estimate(spec, lf, dist, hmap, strat, budgets, alphas, rng)), info


def run_config(cfg: ExperimentConfig, pipeline: Optional[Pipeline] = None, threads: int = 1) -> tuple[ReportRow, RepeatSummary, dict]:
    pipeline = pipeline or Pipeline(cfg.seed)
    spec = get_model(cfg.model)
    try:
        fn, info = pipeline.estimator(cfg)
    except (StageError, ConfigError):
        raise
    except Exception as exc:
        raise StageError("allocate", cfg.seed, exc) from exc
    t0 = time.perf_counter()
    try:
        summary = repeat_harness(fn, cfg.repetitions, cfg.seed, spec.exact_mean, threads, label=f"rep:{cfg.name}")
    except Exception as exc:
        raise StageError("estimate", cfg.seed, exc) from exc
    wall = time.perf_counter() - t0
    hf = [r.hf_evals for r in summary.results]
    lf = [r.lf_evals for r in summary.results]
    row = ReportRow(cfg.name, cfg.estimator, cfg.N, cfg.repetitions, summary.mean, summary.variance,
                    summary.mse, None, wall, float(np.mean(hf)), float(np.mean(lf)), info["train_evals"])
    return row, summary, info


def _order_key(row: ReportRow) -> int:
    return ESTIMATORS.index(row.estimator)


def attach_ratios(rows: list[ReportRow]) -> list[ReportRow]:
    """Sort rows by estimator order and fill ratios against the MC row (if any)."""
    rows = sorted(rows, key=_order_key)
    base = next((r for r in rows if r.estimator == "mc"), None)
    for r in rows:
        if base is None:
            r.ratio = None
        elif r.mse is not None and base.mse:
            r.ratio = r.mse / base.mse
        elif r.variance is not None and base.variance:
            r.ratio = r.variance / base.variance
    return rows


def run_experiment(cfg: ExperimentConfig, out_dir, threads: int = 1,
                   pipeline: Optional[Pipeline] = None) -> ReportRow:
    """Run one configuration and write ``report.csv``, ``runs.json``, ``timing.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        row, summary, info = run_config(cfg, pipeline, threads)
    except StageError as exc:
        (out / "error.json").write_text(json.dumps({"stage": exc.stage, "seed": exc.seed, "message": str(exc),
                                                    "config": cfg.to_dict()}))
        raise
    rows = attach_ratios([row])
    write_table(rows, out / "report.csv")
    dump = {"info": info, "estimates": summary.estimates.tolist(),
            "results": [r.to_dict() for r in summary.results]}
    (out / "runs.json").write_text(json.dumps(dump))
    (out / "timing.json").write_text(json.dumps({row.label: row.wall_time}))
    return row


def compare_command(configs: Sequence[ExperimentConfig], out_dir=None, threads: int = 1) -> list[ReportRow]:
    """One row per configuration, sharing trained maps, with ratios against the MC row."""
    if not configs:
        return []
    models = {(c.model, c.seed) for c in configs}
    if len(models) != 1:
        raise ConfigError("compared configs must share model and seed")
    pipeline = Pipeline(configs[0].seed)
    rows = [run_config(c, pipeline, threads)[0] for c in configs]
    rows = attach_ratios(rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_table(rows, out / "compare.csv")
        (out / "timing.json").write_text(json.dumps({r.label: r.wall_time for r in rows}))
    return rows


def sweep_command(cfg: ExperimentConfig, param: str, values: Sequence[int], out_dir=None,
                  threads: int = 1) -> list[ReportRow]:
    if param not in ("N", "S"):
        raise ConfigError("sweep varies N or S")
    pipeline = Pipeline(cfg.seed)
    rows = []
    for v in values:
        c = dataclasses.replace(cfg, **{param: int(v)}, label=f"{cfg.name}[{param}={v}]")
        rows.append(run_config(c, pipeline, threads)[0])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_table(rows, out / "sweep.csv")
    return rows
