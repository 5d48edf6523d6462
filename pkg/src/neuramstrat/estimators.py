"""Monte Carlo, stratified, multifidelity and stratified multifidelity estimators.

Every estimator takes a ``numpy.random.Generator`` and returns an
``EstimateResult`` carrying the estimate, a plug-in estimate of its variance
and the number of high/low-fidelity evaluations actually performed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .models import ProductDistribution
from .stratify import Stratification, StratumStats, UnitMap, mf_variance_factor, sample_strata

Array = NDArray[np.float64]
Model = Callable[[Array], Array]


class InfeasibleBudgetError(ValueError):
    pass


class DegenerateLowFidelityError(ValueError):
    pass


class MultifidelityWarning(UserWarning):
    pass


@dataclass
class EstimateResult:
    estimate: float
    variance_estimate: float
    hf_evals: int
    lf_evals: int = 0
    breakdown: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "variance_estimate": self.variance_estimate,
            "hf_evals": self.hf_evals,
            "lf_evals": self.lf_evals,
            "breakdown": self.breakdown,
        }


@dataclass(frozen=True)
class Allocation:
    counts: NDArray[np.int64]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _evaluate(model: Model, x: Array) -> Array:
    y = np.asarray(model(x), dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(y))
    if bad.size:
        raise FloatingPointError(f"nonfinite model output at sample {int(bad[0])}")
    return y


def _round_counts(weights: Array, n: int, floor: int = 2) -> NDArray[np.int64]:
    """Largest-remainder rounding of ``n * weights / sum(weights)``, each count lifted to ``floor``."""
    weights = np.asarray(weights, dtype=np.float64)
    if n < floor * len(weights):
        raise InfeasibleBudgetError(f"budget {n} cannot give {floor} samples to each of {len(weights)} strata")
    ideal = weights / weights.sum() * n
    counts = np.floor(ideal).astype(np.int64)
    rem = ideal - counts
    short = n - int(counts.sum())
    # stable sort keeps lowest index first among equal remainders
    for i in np.argsort(-rem, kind="stable")[:short]:
        counts[i] += 1
    for i in range(len(counts)):
        while counts[i] < floor:
            donor = int(np.argmax(np.where(counts > floor, counts, -1)))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def proportional_allocation(strat: Stratification, n: int) -> Allocation:
    return Allocation(_round_counts(strat.widths, n))


def optimal_allocation_smc(strat: Stratification, stats: StratumStats, n: int) -> Allocation:
    var = np.asarray(stats.variances, dtype=np.float64)
    if not np.all(np.isfinite(var)):
        raise ValueError("stratum variances must be finite")
    weights = strat.widths * np.sqrt(np.maximum(var, 0.0))
    if weights.sum() <= 0:
        return proportional_allocation(strat, n)
    return Allocation(_round_counts(weights, n))


def mc_estimate(model: Model, dist: ProductDistribution, n: int, rng: np.random.Generator) -> EstimateResult:
    if n < 2:
        raise InfeasibleBudgetError("need at least two samples")
    y = _evaluate(model, dist.sample(n, rng))
    return EstimateResult(float(np.mean(y)), float(np.var(y, ddof=1)) / n, n)


def smc_estimate(model: Model, dist: ProductDistribution, umap: UnitMap, strat: Stratification,
                 alloc: Allocation, rng: np.random.Generator) -> EstimateResult:
    """Width-weighted sum of stratum means over rejection-sampled conditional draws."""
    counts = alloc.counts
    if len(counts) != strat.n_strata or np.any(counts < 2):
        raise ValueError("allocation must give at least two samples to every stratum")
    xs = sample_strata(dist, umap, strat, counts, rng)
    widths = strat.widths
    means, variances = [], []
    for x in xs:
        y = _evaluate(model, x)
        means.append(float(np.mean(y)))
        variances.append(float(np.var(y, ddof=1)))
    means, variances = np.array(means), np.array(variances)
    estimate = float(np.dot(widths, means))
    var_est = float(np.sum(widths**2 * variances / counts))
    breakdown = {"widths": widths.tolist(), "counts": counts.tolist(), "means": means.tolist(),
                 "variances": variances.tolist()}
    return EstimateResult(estimate, var_est, int(counts.sum()), 0, breakdown)


# -- multifidelity ------------------------------------------------------------------


@dataclass(frozen=True)
class MfBudget:
    w: float
    budget: float
    rho: float
    beta: float
    n_hf: int
    n_lf: int
    beneficial: bool

    @property
    def uses_lf(self) -> bool:
        return self.n_lf > self.n_hf

    @property
    def cost(self) -> float:
        """HF-equivalent cost; LF runs are skipped when they would all be paired with HF runs."""
        return self.n_hf + (self.w * self.n_lf if self.uses_lf else 0.0)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("w", "budget", "rho", "beta", "n_hf", "n_lf", "beneficial")}


def mfmc_allocation(rho: float, w: float, n: float) -> MfBudget:
    """Closed-form HF/LF split of an HF-equivalent budget ``n``."""
    if not abs(rho) < 1:
        raise ValueError("need |rho| < 1")
    if w <= 0:
        raise ValueError("cost ratio must be positive")
    if n < 2:
        raise InfeasibleBudgetError("budget below two HF evaluations")
    beneficial = rho**2 > 4 * w / (1 + w) ** 2
    if not beneficial:
        warnings.warn(f"rho^2={rho**2:.3g} <= 4w/(1+w)^2: multifidelity not beneficial", MultifidelityWarning)
    beta = math.sqrt(rho**2 / (w * (1 - rho**2)))
    n_hf = max(2, int(math.floor(n / (1 + w * beta) + 1e-9)))
    n_lf = max(n_hf, int(round(beta * n_hf)))
    # enforce n_hf + w n_lf <= n; equality with n_hf means no LF runs at all
    while n_lf > n_hf and n_hf + w * n_lf > n + 1e-9:
        n_lf -= 1
    return MfBudget(w, n, rho, beta, n_hf, n_lf, beneficial)


def control_coefficients(y_hf, y_lf) -> tuple[float, float]:
    """Pilot control-variate coefficient ``cov/var_lf`` and correlation from paired values."""
    y_hf, y_lf = np.asarray(y_hf, dtype=np.float64), np.asarray(y_lf, dtype=np.float64)
    if len(y_hf) != len(y_lf) or len(y_hf) < 2:
        raise ValueError("need at least two paired evaluations")
    c = np.cov(y_hf, y_lf, ddof=1)
    if c[1, 1] <= 0:
        raise DegenerateLowFidelityError("low-fidelity pilot values have zero variance")
    rho = c[0, 1] / math.sqrt(c[0, 0] * c[1, 1]) if c[0, 0] > 0 else 0.0
    return float(c[0, 1] / c[1, 1]), float(np.clip(rho, -1.0, 1.0))


def _mfmc_core(y_hf: Array, y_lf: Optional[Array], n_hf: int, alpha: float) -> tuple[float, float, dict]:
    """Estimate and variance estimate from paired HF values and the LF stream."""
    m_hf = float(np.mean(y_hf))
    v_hf = float(np.var(y_hf, ddof=1))
    if y_lf is None:
        return m_hf, v_hf / n_hf, {"hf_mean": m_hf, "hf_variance": v_hf}
    n_lf = len(y_lf)
    lf_paired = float(np.mean(y_lf[:n_hf]))
    lf_all = float(np.mean(y_lf))
    est = m_hf - alpha * (lf_paired - lf_all)
    v_lf = float(np.var(y_lf, ddof=1))
    cov = float(np.cov(y_hf, y_lf[:n_hf], ddof=1)[0, 1])
    var = v_hf / n_hf + (1.0 / n_hf - 1.0 / n_lf) * (alpha**2 * v_lf - 2.0 * alpha * cov)
    info = {"hf_mean": m_hf, "hf_variance": v_hf, "lf_paired_mean": lf_paired, "lf_mean": lf_all,
            "lf_variance": v_lf, "covariance": cov}
    return est, max(var, 0.0), info


def mfmc_estimate(hf: Model, lf: Model, dist: ProductDistribution, budget: MfBudget, alpha: float,
                  rng: np.random.Generator) -> EstimateResult:
    """Control-variate estimator with the first ``n_hf`` LF inputs shared with HF."""
    n_hf, n_lf = budget.n_hf, budget.n_lf
    if n_hf < 2 or n_lf < n_hf:
        raise ValueError("need n_lf >= n_hf >= 2")
    x = dist.sample(n_lf, rng)
    y_hf = _evaluate(hf, x[:n_hf])
    y_lf = _evaluate(lf, x) if budget.uses_lf else None
    est, var, info = _mfmc_core(y_hf, y_lf, n_hf, alpha)
    info.update(alpha=alpha, n_hf=n_hf, n_lf=n_lf if budget.uses_lf else 0)
    return EstimateResult(est, var, n_hf, n_lf if budget.uses_lf else 0, info)


def smfmc_allocation(strat: Stratification, stats: StratumStats, w: float, n: int,
                     kind: str = "optimal") -> list[MfBudget]:
    """Split ``n`` across strata, then split each stratum budget between HF and LF."""
    if stats.rho is None:
        raise ValueError("stratum statistics need correlations")
    rho = np.clip(np.asarray(stats.rho, dtype=np.float64), -1 + 1e-12, 1 - 1e-12)
    if kind == "optimal":
        weights = strat.widths * np.sqrt(np.maximum(stats.variances, 0.0)) * np.sqrt(mf_variance_factor(rho, w))
        if weights.sum() <= 0:
            weights = strat.widths
    elif kind == "proportional":
        weights = strat.widths
    else:
        raise ValueError(f"unknown allocation kind {kind!r}")
    counts = _round_counts(weights, n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MultifidelityWarning)
        return [mfmc_allocation(float(r), w, int(c)) for r, c in zip(rho, counts)]


def smfmc_estimate(hf: Model, lf: Model, dist: ProductDistribution, umap: UnitMap, strat: Stratification,
                   budgets: Sequence[MfBudget], alphas: Sequence[float], rng: np.random.Generator) -> EstimateResult:
    """Multifidelity estimator inside each stratum, combined with the stratum widths."""
    if len(budgets) != strat.n_strata or len(alphas) != strat.n_strata:
        raise ValueError("one budget and one coefficient per stratum required")
    sizes = [b.n_lf if b.uses_lf else b.n_hf for b in budgets]
    xs = sample_strata(dist, umap, strat, sizes, rng)
    widths = strat.widths
    ests, vars_, rows = [], [], []
    hf_evals = lf_evals = 0
    for x, b, a in zip(xs, budgets, alphas):
        if b.n_hf < 2:
            raise InfeasibleBudgetError("each stratum needs at least two HF samples")
        y_hf = _evaluate(hf, x[: b.n_hf])
        y_lf = _evaluate(lf, x) if b.uses_lf else None
        e, v, info = _mfmc_core(y_hf, y_lf, b.n_hf, float(a))
        ests.append(e)
        vars_.append(v)
        hf_evals += b.n_hf
        lf_evals += len(x) if b.uses_lf else 0
        info.update(alpha=float(a), n_hf=b.n_hf, n_lf=b.n_lf if b.uses_lf else 0)
        rows.append(info)
    estimate = float(np.dot(widths, ests))
    var_est = float(np.sum(widths**2 * np.array(vars_)))
    return EstimateResult(estimate, var_est, hf_evals, lf_evals, {"widths": widths.tolist(), "strata": rows})


def theoretical_variances(stats: StratumStats, n: float, w: Optional[float] = None,
                          rho: Optional[float] = None, total_variance: Optional[float] = None) -> dict:
    """Closed-form estimator variances implied by per-stratum statistics.

    ``total_variance`` defaults to the law-of-total-variance combination of
    the stratum means and variances. ``var_mfmc`` needs ``w`` and the global
    correlation ``rho``; the stratified multifidelity entries need ``w`` and
    per-stratum correlations in ``stats``.
    """
    lam = np.asarray(stats.widths, dtype=np.float64)
    var = np.maximum(np.asarray(stats.variances, dtype=np.float64), 0.0)
    s1 = math.fsum(lam * np.sqrt(var)) ** 2
    s2 = math.fsum(lam * var)
    # Jensen gives s1 <= s2 exactly; the guard absorbs last-bit rounding
    s1 = min(s1, s2)
    if total_variance is None:
        mean = math.fsum(lam * stats.means)
        total_variance = s2 + math.fsum(lam * (np.asarray(stats.means) - mean) ** 2)
    out = {"var_alloc1": s1 / n, "var_alloc2": s2 / n, "var_mc": max(total_variance, s2) / n,
           "var_mfmc": None, "var_smfmc1": None, "var_smfmc2": None}
    if w is not None and rho is not None:
        out["var_mfmc"] = out["var_mc"] * float(mf_variance_factor(rho, w))
    if w is not None and stats.rho is not None:
        eta = mf_variance_factor(stats.rho, w)
        out["var_smfmc1"] = math.fsum(lam * np.sqrt(var * eta)) ** 2 / n
        out["var_smfmc2"] = math.fsum(lam * var * eta) / n
    return out
