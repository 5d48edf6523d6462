"""Comparison methods: Latin hypercube sampling and active-subspace strata."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray
from scipy import special

from .estimators import EstimateResult, _evaluate
from .models import ProductDistribution
from .stratify import Stratification

Array = NDArray[np.float64]


def lhs_sample(n: int, d: int, rng: np.random.Generator) -> Array:
    """``n`` points in ``[0, 1)^d`` with exactly one point per row bin in every column."""
    if n < 1:
        raise ValueError("need at least one point")
    perms = np.argsort(rng.random((n, d)), axis=0)
    return (perms + rng.random((n, d))) / n


def lhs_estimate(model: Callable, dist: ProductDistribution, n: int, rng: np.random.Generator) -> EstimateResult:
    x = dist.quantile(lhs_sample(n, dist.dim, rng))
    y = _evaluate(model, x)
    # the iid formula overstates LHS variance; reported for reference only
    return EstimateResult(float(np.mean(y)), float(np.var(y, ddof=1)) / n, n)


@dataclass(frozen=True)
class GaussianMap:
    """Componentwise transport ``x_i = Q_i(Phi(z_i))`` from ``N(0, I)`` to a product measure."""

    dist: ProductDistribution

    def forward(self, z) -> Array:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        return self.dist.quantile(special.ndtr(z))

    def inverse(self, x) -> Array:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return special.ndtri(self.dist.cdf(x))


def gaussian_map(dist: ProductDistribution, z) -> Array:
    z = np.asarray(z, dtype=np.float64)
    x = GaussianMap(dist).forward(z)
    return x[0] if z.ndim == 1 else x


def gaussian_map_inverse(dist: ProductDistribution, x) -> Array:
    x = np.asarray(x, dtype=np.float64)
    z = GaussianMap(dist).inverse(x)
    return z[0] if x.ndim == 1 else z


@dataclass(frozen=True)
class AsDirection:
    v: Array
    eigenvalues: Array
    n_samples: int

    def to_dict(self) -> dict:
        return {"v": self.v.tolist(), "eigenvalues": self.eigenvalues.tolist(), "n_samples": self.n_samples}

    @classmethod
    def from_dict(cls, d: dict) -> "AsDirection":
        return cls(np.array(d["v"]), np.array(d["eigenvalues"]), int(d["n_samples"]))


def as_direction(model: Callable, gmap: GaussianMap, n_samples: int, rng: np.random.Generator,
                 fd_step: float = 1e-4, gradient: Optional[Callable] = None) -> AsDirection:
    """Dominant eigenvector of ``E[grad Q(G(z)) grad Q(G(z))^T]`` under ``z ~ N(0, I)``.

    With ``gradient`` (the gradient of the model in ``x``) the chain rule
    through the diagonal map is used; otherwise central differences in ``z``.
    """
    d = gmap.dist.dim
    if n_samples < d:
        raise ValueError("need at least d gradient samples")
    z = rng.standard_normal((n_samples, d))
    if gradient is not None:
        x = gmap.forward(z)
        # dx_i/dz_i = phi(z_i) / density_i(x_i), obtained here by differencing the 1-D map
        h = fd_step
        jac = (gmap.forward(z + h) - gmap.forward(z - h)) / (2 * h)
        g = np.asarray(gradient(x)) * jac
    else:
        g = np.empty((n_samples, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = fd_step
            g[:, i] = (_evaluate(model, gmap.forward(z + e)) - _evaluate(model, gmap.forward(z - e))) / (2 * fd_step)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("nonfinite gradient samples")
    b = g.T @ g / n_samples
    vals, vecs = np.linalg.eigh(b)
    order = np.argsort(vals)[::-1]
    vals, vecs = np.maximum(vals[order], 0.0), vecs[:, order]
    v = vecs[:, 0]
    first = np.flatnonzero(np.abs(v) > 1e-14)
    if first.size and v[first[0]] < 0:
        v = -v
    return AsDirection(v / np.linalg.norm(v), vals, n_samples)


@dataclass(frozen=True)
class ActiveSubspaceMap:
    """``x -> Phi(v^T G^{-1}(x))``, uniform on ``[0, 1]`` under the input measure."""

    direction: AsDirection
    gmap: GaussianMap

    def to_unit(self, x) -> Array:
        return special.ndtr(self.gmap.inverse(x) @ self.direction.v)


def as_stratum_index(direction: AsDirection, gmap: GaussianMap, strat: Stratification, x) -> int:
    u = ActiveSubspaceMap(direction, gmap).to_unit(np.atleast_2d(x))
    return int(strat.index(u)[0]) + 1
