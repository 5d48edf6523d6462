"""Partitions of the unit interval and the strata they induce in input space.

A *map* here is any object with ``to_unit(x) -> u`` sending input rows to
``[0, 1]`` so that ``u`` is uniform under the input distribution; NeurAM maps
additionally expose ``surrogate(x)``. Stratum ``s`` (1-based) is the preimage
of ``[a_{s-1}, a_s)``, the last interval being closed at 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import numpy as np
from numpy.typing import NDArray

from .models import ProductDistribution

Array = NDArray[np.float64]

MIN_WIDTH = 1e-3
N_CHEAP_DEFAULT = 100_000


class UnitMap(Protocol):
    def to_unit(self, x) -> Array: ...


class RejectionBudgetError(RuntimeError):
    pass


class InsufficientSampleError(ValueError):
    pass


def mf_variance_factor(rho, w: float):
    """``(sqrt(1 - rho^2) + sqrt(w rho^2))^2``, the MFMC variance multiplier."""
    r2 = np.clip(np.asarray(rho, dtype=np.float64) ** 2, 0.0, 1.0)
    return (np.sqrt(1.0 - r2) + np.sqrt(w * r2)) ** 2


@dataclass(frozen=True)
class Stratification:
    breakpoints: Array
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        a = np.asarray(self.breakpoints, dtype=np.float64)
        object.__setattr__(self, "breakpoints", a)
        if a.ndim != 1 or len(a) < 2 or a[0] != 0.0 or a[-1] != 1.0:
            raise ValueError("breakpoints must start at 0 and end at 1")
        if np.any(np.diff(a) <= 0):
            raise ValueError("breakpoints must be strictly increasing")

    @property
    def n_strata(self) -> int:
        return len(self.breakpoints) - 1

    @property
    def widths(self) -> Array:
        return np.diff(self.breakpoints)

    def index(self, u) -> NDArray[np.int64]:
        """Zero-based stratum of each ``u`` (vectorized)."""
        u = np.asarray(u, dtype=np.float64)
        if np.any((u < 0) | (u > 1)) or np.any(np.isnan(u)):
            raise ValueError("u must lie in [0, 1]")
        return np.minimum(np.searchsorted(self.breakpoints, u, side="right") - 1, self.n_strata - 1)

    def to_dict(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d: dict) -> "Stratification":
        return cls(np.array(d["breakpoints"], dtype=np.float64), d.get("provenance", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "Stratification":
        return cls.from_dict(json.loads(Path(path).read_text()))


def uniform_breakpoints(n_strata: int) -> Stratification:
    if n_strata < 1:
        raise ValueError("need at least one stratum")
    a = np.arange(n_strata + 1) / n_strata
    return Stratification(a, {"source": "uniform"})


def stratum_index(strat: Stratification, u: float) -> int:
    """One-based stratum containing ``u``."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u={u} outside [0, 1]")
    return int(strat.index(u)) + 1


def sample_in_stratum(dist: ProductDistribution, umap: UnitMap, strat: Stratification, s: int,
                      rng: np.random.Generator) -> Array:
    """One draw from ``dist`` conditioned on stratum ``s`` (1-based) by rejection."""
    width = strat.widths[s - 1]
    budget = math.ceil(100.0 / width)
    for _ in range(budget):
        x = dist.sample(1, rng)
        if int(strat.index(umap.to_unit(x))[0]) == s - 1:
            return x[0]
    raise RejectionBudgetError(f"no sample accepted in stratum {s} after {budget} proposals")


def sample_strata(dist: ProductDistribution, umap: UnitMap, strat: Stratification, counts: Sequence[int],
                  rng: np.random.Generator, chunk: int = 1_000_000) -> list[Array]:
    """Conditional draws for every stratum from one shared proposal stream.

    Each proposal from ``dist`` goes to the stratum it falls in until that
    stratum has ``counts[s]`` points, so stratum ``s`` receives iid draws from
    the conditional distribution. With a single stratum the first batch is
    exactly ``dist.sample(counts[0], rng)``.
    """
    counts = np.asarray(counts, dtype=np.int64)
    widths = strat.widths
    if len(counts) != strat.n_strata:
        raise ValueError("one count per stratum required")
    budget = int(max(math.ceil(100.0 / w) * max(int(c), 1) for w, c in zip(widths, counts)))
    filled = [[] for _ in counts]
    have = np.zeros_like(counts)
    used = 0
    while np.any(have < counts):
        need = (counts - have) / widths
        n = int(min(chunk, max(1, math.ceil(need.max() - 1e-9))))
        x = dist.sample(n, rng)
        idx = strat.index(umap.to_unit(x))
        used += n
        for s in np.flatnonzero(have < counts):
            rows = x[idx == s][: counts[s] - have[s]]
            if len(rows):
                filled[s].append(rows)
                have[s] += len(rows)
        if used > budget and np.any(have < counts):
            s = int(np.flatnonzero(have < counts)[0])
            raise RejectionBudgetError(f"stratum {s + 1} still short after {used} proposals")
    d = dist.dim
    return [np.concatenate(f) if f else np.empty((0, d)) for f in filled]


# -- surrogate statistics -------------------------------------------------------


@dataclass(frozen=True)
class StratumStats:
    widths: Array
    means: Array
    variances: Array
    counts: NDArray[np.int64]
    rho: Optional[Array] = None
    alpha: Optional[Array] = None
    lf_variances: Optional[Array] = None

    @property
    def n_strata(self) -> int:
        return len(self.widths)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("widths", "means", "variances", "counts", "rho", "alpha", "lf_variances")}
        return {k: (None if v is None else np.asarray(v).tolist()) for k, v in out.items()}


def _variance(y: Array) -> float:
    if len(y) < 2:
        return math.nan
    # exact zero for constant data; np.var can leave last-bit residue
    return 0.0 if np.ptp(y) == 0 else float(np.var(y, ddof=1))


@dataclass(frozen=True)
class SurrogatePool:
    """Cheap evaluations sorted by latent quantile, reused for interval statistics."""

    u: Array
    y: Array
    y_lf: Optional[Array] = None

    @classmethod
    def draw(cls, umap, dist: ProductDistribution, n_cheap: int, rng: np.random.Generator,
             lf: Optional[Callable] = None, hf: Optional[Callable] = None) -> "SurrogatePool":
        if n_cheap < 100:
            raise ValueError("n_cheap must be at least 100")
        x = dist.sample(n_cheap, rng)
        u = umap.to_unit(x)
        y = (hf or umap.surrogate)(x)
        order = np.argsort(u, kind="stable")
        y_lf = None if lf is None else np.asarray(lf(x), dtype=np.float64)[order]
        return cls(u[order], np.asarray(y, dtype=np.float64)[order], y_lf)

    @property
    def size(self) -> int:
        return len(self.u)

    def _slice(self, lo: float, hi: float) -> slice:
        i = int(np.searchsorted(self.u, lo, side="left"))
        j = self.size if hi >= 1.0 else int(np.searchsorted(self.u, hi, side="left"))
        return slice(i, j)

    def interval(self, lo: float, hi: float, w: Optional[float] = None) -> dict:
        """Mean, variance, count (and correlation terms when LF values exist) on ``[lo, hi)``."""
        sl = self._slice(lo, hi)
        y = self.y[sl]
        n = len(y)
        out = {"count": n, "mean": float(np.mean(y)) if n else math.nan,
               "variance": _variance(y)}
        if self.y_lf is not None:
            yl = self.y_lf[sl]
            if n >= 2:
                cov = float(np.cov(y, yl, ddof=1)[0, 1])
                vl = float(np.var(yl, ddof=1))
                vh = out["variance"]
                out["lf_variance"] = vl
                out["alpha"] = cov / vl if vl > 0 else 0.0
                out["rho"] = float(np.clip(cov / math.sqrt(vh * vl), -1.0, 1.0)) if vh > 0 and vl > 0 else 0.0
            else:
                out.update(lf_variance=math.nan, alpha=math.nan, rho=math.nan)
        if w is not None:
            rho = out.get("rho", 0.0)
            out["eta"] = float(mf_variance_factor(rho, w)) if np.isfinite(rho) else math.nan
        return out

    def stats(self, strat: Stratification) -> StratumStats:
        a = strat.breakpoints
        rows = [self.interval(a[s], a[s + 1]) for s in range(strat.n_strata)]
        counts = np.array([r["count"] for r in rows], dtype=np.int64)
        if np.any(counts < 2):
            s = int(np.flatnonzero(counts < 2)[0])
            raise InsufficientSampleError(f"stratum {s + 1} received {counts[s]} cheap samples")
        mf = self.y_lf is not None
        return StratumStats(
            widths=strat.widths,
            means=np.array([r["mean"] for r in rows]),
            variances=np.array([r["variance"] for r in rows]),
            counts=counts,
            rho=np.array([r["rho"] for r in rows]) if mf else None,
            alpha=np.array([r["alpha"] for r in rows]) if mf else None,
            lf_variances=np.array([r["lf_variance"] for r in rows]) if mf else None,
        )


def stratum_stats_surrogate(umap, dist: ProductDistribution, strat: Stratification, n_cheap: int,
                            rng: np.random.Generator, lf: Optional[Callable] = None) -> StratumStats:
    """Per-stratum statistics of the surrogate (and of ``lf`` when given) from cheap draws."""
    return SurrogatePool.draw(umap, dist, n_cheap, rng, lf=lf).stats(strat)


# -- refinement -------------------------------------------------------------------


def _weighted(width: float, row: dict, alloc_kind: str) -> float:
    var = row["variance"] * row.get("eta", 1.0)
    if not np.isfinite(var):
        return math.inf
    return width * (math.sqrt(max(var, 0.0)) if alloc_kind == "optimal" else var)


def _split_objective(pool: SurrogatePool, lo: float, hi: float, a: float, alloc_kind: str, w) -> float:
    return (_weighted(a - lo, pool.interval(lo, a, w), alloc_kind)
            + _weighted(hi - a, pool.interval(a, hi, w), alloc_kind))


def optimal_split_pool(pool: SurrogatePool, lo: float, hi: float, alloc_kind: str = "optimal",
                       w: Optional[float] = None, min_width: float = MIN_WIDTH) -> float:
    """Best split of ``[lo, hi]`` by a 64-point grid (plus the midpoint) and golden section."""
    if hi - lo < 2 * min_width:
        raise ValueError("interval too narrow to split")
    left, right = lo + min_width, hi - min_width
    grid = np.linspace(left, right, 64)
    grid = np.unique(np.append(grid, 0.5 * (lo + hi)))
    vals = np.array([_split_objective(pool, lo, hi, a, alloc_kind, w) for a in grid])
    if not np.any(np.isfinite(vals)):
        raise ValueError("split objective is nonfinite on the whole grid")
    k = int(np.argmin(vals))
    best_a, best_v = float(grid[k]), float(vals[k])

    # golden-section refinement between the neighbours of the grid minimum
    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = float(grid[max(k - 1, 0)]), float(grid[min(k + 1, len(grid) - 1)])
    c, d = b - g * (b - a), a + g * (b - a)
    fc = _split_objective(pool, lo, hi, c, alloc_kind, w)
    fd = _split_objective(pool, lo, hi, d, alloc_kind, w)
    while b - a > 1e-4:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = _split_objective(pool, lo, hi, c, alloc_kind, w)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = _split_objective(pool, lo, hi, d, alloc_kind, w)
    for cand, val in ((c, fc), (d, fd)):
        if val < best_v:
            best_a, best_v = cand, val
    return float(min(max(best_a, left), right))


def optimal_split(umap, dist: ProductDistribution, interval: tuple[float, float], alloc_kind: str,
                  n_cheap: int, rng: np.random.Generator, lf: Optional[Callable] = None,
                  w: Optional[float] = None) -> float:
    pool = SurrogatePool.draw(umap, dist, n_cheap, rng, lf=lf)
    return optimal_split_pool(pool, interval[0], interval[1], alloc_kind, w)


def objective(pool: SurrogatePool, strat: Stratification, alloc_kind: str, w: Optional[float] = None) -> float:
    """Surrogate estimate of ``sum lambda_s sqrt(sigma_s)`` (optimal) or ``sum lambda_s sigma_s``."""
    a = strat.breakpoints
    return math.fsum(_weighted(a[s + 1] - a[s], pool.interval(a[s], a[s + 1], w), alloc_kind)
                     for s in range(strat.n_strata))


def heuristic_refine_pool(pool: SurrogatePool, n_target: int, alloc_kind: str = "optimal",
                          split_rule: str = "midpoint", w: Optional[float] = None,
                          min_width: float = MIN_WIDTH) -> Stratification:
    """Greedy refinement: repeatedly split the interval contributing most to the variance."""
    if n_target < 1:
        raise ValueError("need at least one stratum")
    if alloc_kind not in ("optimal", "proportional") or split_rule not in ("midpoint", "optimal"):
        raise ValueError("unknown allocation kind or split rule")
    if w is not None and pool.y_lf is None:
        raise ValueError("multifidelity weighting needs LF pool values")
    bps = [0.0, 1.0]
    history = [objective(pool, Stratification(np.array(bps)), alloc_kind, w)]
    while len(bps) - 1 < n_target:
        contrib = [_weighted(bps[i + 1] - bps[i], pool.interval(bps[i], bps[i + 1], w), alloc_kind)
                   for i in range(len(bps) - 1)]
        # stable sort on -contrib keeps the lowest index first among ties
        order = sorted(range(len(contrib)), key=lambda i: -np.nan_to_num(contrib[i], nan=-math.inf))
        chosen = next((i for i in order if bps[i + 1] - bps[i] >= 2 * min_width), None)
        if chosen is None:
            break
        lo, hi = bps[chosen], bps[chosen + 1]
        if split_rule == "midpoint":
            a = 0.5 * (lo + hi)
        else:
            a = optimal_split_pool(pool, lo, hi, alloc_kind, w, min_width)
        bps.insert(chosen + 1, a)
        history.append(objective(pool, Stratification(np.array(bps)), alloc_kind, w))
    prov = {
        "source": "heuristic",
        "alloc_kind": alloc_kind,
        "split_rule": split_rule,
        "requested_strata": n_target,
        "achieved_strata": len(bps) - 1,
        "objective_history": history,
        "multifidelity_w": w,
    }
    return Stratification(np.array(bps), prov)


def heuristic_refine(umap, dist: ProductDistribution, n_target: int, alloc_kind: str, split_rule: str,
                     n_cheap: int, rng: np.random.Generator, lf: Optional[Callable] = None,
                     w: Optional[float] = None) -> Stratification:
    pool = SurrogatePool.draw(umap, dist, n_cheap, rng, lf=lf)
    return heuristic_refine_pool(pool, n_target, alloc_kind, split_rule, w)
