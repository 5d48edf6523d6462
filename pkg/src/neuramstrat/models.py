"""Benchmark models, factorized input distributions and reference values."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray
from scipy import special

Array = NDArray[np.float64]

LF_COST_RATIO = 0.01


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class Component:
    """One marginal of a product measure.

    ``kind`` is one of ``uniform``, ``loguniform``, ``normal``, ``lognormal``.
    For the first two ``(a, b)`` are the support bounds; for the last two they
    are the mean and standard deviation of the (log-)normal variable.
    """

    kind: str
    a: float
    b: float

    def __post_init__(self):
        if self.kind in ("uniform", "loguniform"):
            if not self.a < self.b:
                raise ValueError(f"{self.kind} needs a < b, got ({self.a}, {self.b})")
            if self.kind == "loguniform" and self.a <= 0:
                raise ValueError("loguniform bounds must be positive")
        elif self.kind in ("normal", "lognormal"):
            if not self.b > 0:
                raise ValueError(f"{self.kind} needs sigma > 0, got {self.b}")
        else:
            raise ValueError(f"unsupported component kind {self.kind!r}")

    @property
    def bounded(self) -> bool:
        return self.kind in ("uniform", "loguniform")

    def quantile(self, p):
        p = np.asarray(p, dtype=np.float64)
        if self.kind == "uniform":
            return self.a + (self.b - self.a) * p
        if self.kind == "loguniform":
            la, lb = math.log(self.a), math.log(self.b)
            return np.exp(la + (lb - la) * p)
        z = special.ndtri(p)
        if self.kind == "normal":
            return self.a + self.b * z
        return np.exp(self.a + self.b * z)

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "uniform":
            return np.clip((x - self.a) / (self.b - self.a), 0.0, 1.0)
        if self.kind == "loguniform":
            la, lb = math.log(self.a), math.log(self.b)
            with np.errstate(divide="ignore"):
                return np.clip((np.log(x) - la) / (lb - la), 0.0, 1.0)
        if self.kind == "normal":
            return special.ndtr((x - self.a) / self.b)
        with np.errstate(divide="ignore"):
            return special.ndtr((np.log(x) - self.a) / self.b)

    def mean(self) -> float:
        if self.kind == "uniform":
            return 0.5 * (self.a + self.b)
        if self.kind == "loguniform":
            return (self.b - self.a) / math.log(self.b / self.a)
        if self.kind == "normal":
            return self.a
        return math.exp(self.a + 0.5 * self.b**2)

    def std(self) -> float:
        if self.kind == "uniform":
            return (self.b - self.a) / math.sqrt(12.0)
        if self.kind == "loguniform":
            second = (self.b**2 - self.a**2) / (2.0 * math.log(self.b / self.a))
            return math.sqrt(second - self.mean() ** 2)
        if self.kind == "normal":
            return self.b
        return self.mean() * math.sqrt(math.expm1(self.b**2))

    def support_box(self) -> tuple[float, float]:
        """Bounds used to normalize network inputs (mean +- 4 sd when unbounded)."""
        if self.bounded:
            return self.a, self.b
        m, s = self.mean(), self.std()
        return m - 4.0 * s, m + 4.0 * s

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "b": self.b}


@dataclass(frozen=True)
class ProductDistribution:
    components: tuple[Component, ...]

    @property
    def dim(self) -> int:
        return len(self.components)

    @classmethod
    def uniform(cls, d: int, a: float = -1.0, b: float = 1.0) -> "ProductDistribution":
        return cls(tuple(Component("uniform", a, b) for _ in range(d)))

    def sample(self, n: int, rng: np.random.Generator) -> Array:
        """Draw ``n`` points by pushing uniforms through the marginal quantiles."""
        return self.quantile(rng.random((n, self.dim)))

    def quantile(self, p) -> Array:
        p = np.atleast_2d(np.asarray(p, dtype=np.float64))
        return np.column_stack([c.quantile(p[:, i]) for i, c in enumerate(self.components)])

    def cdf(self, x) -> Array:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.column_stack([c.cdf(x[:, i]) for i, c in enumerate(self.components)])

    def median(self) -> Array:
        return self.quantile(np.full((1, self.dim), 0.5))[0]

    def support_box(self) -> tuple[Array, Array]:
        lo, hi = zip(*(c.support_box() for c in self.components))
        return np.array(lo), np.array(hi)

    def to_dict(self) -> dict:
        return {"components": [c.to_dict() for c in self.components]}

    @classmethod
    def from_dict(cls, d: dict) -> "ProductDistribution":
        return cls(tuple(Component(c["kind"], float(c["a"]), float(c["b"])) for c in d["components"]))


def sample_dist(dist: ProductDistribution, rng: np.random.Generator) -> Array:
    return dist.sample(1, rng)[0]


def quantile(dist: ProductDistribution, component: int, p: float) -> float:
    return float(dist.components[component].quantile(p))


@dataclass(frozen=True)
class ModelSpec:
    name: str
    dim: int
    func: Callable[[Array], Array]
    dist: ProductDistribution
    gradient: Optional[Callable[[Array], Array]] = None
    exact_mean: Optional[float] = None
    cost: float = 1.0

    def __call__(self, x) -> Array:
        return eval_model(self, x)


def eval_model(spec: ModelSpec, x) -> Array:
    """Evaluate ``spec`` on a point or on the rows of a batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.shape[1] != spec.dim:
        raise DomainError(f"{spec.name} expects dimension {spec.dim}, got {xb.shape[1]}")
    y = np.asarray(spec.func(xb), dtype=np.float64)
    return y[0] if single else y


# -- model formulas -----------------------------------------------------------


def q0(x: Array) -> Array:
    return np.exp(0.7 * x[:, 0] + 0.3 * x[:, 1]) + 0.15 * np.sin(2 * np.pi * x[:, 0])


def q0_grad(x: Array) -> Array:
    e = np.exp(0.7 * x[:, 0] + 0.3 * x[:, 1])
    return np.column_stack([0.7 * e + 0.3 * np.pi * np.cos(2 * np.pi * x[:, 0]), 0.3 * e])


def q0_lf(x: Array) -> Array:
    return np.exp(0.01 * x[:, 0] + 0.99 * x[:, 1]) + 0.15 * np.sin(3 * np.pi * x[:, 1])


def q1(x: Array) -> Array:
    return (
        np.sin(np.pi * x[:, 0])
        + 7 * np.sin(np.pi * x[:, 1]) ** 2
        + 0.1 * np.pi * x[:, 2] ** 4 * np.sin(np.pi * x[:, 0])
    )


def q2(x: Array) -> Array:
    if np.any(x <= 0):
        raise DomainError("hartmann model needs positive inputs")
    a = x[:, 3] / np.sqrt(x[:, 2] * x[:, 0])
    small = a < 1e-6
    bracket = np.empty_like(a)
    # 1 - a coth(a) = -a^2/3 + a^4/45 - ...
    bracket[small] = -a[small] ** 2 / 3.0 + a[small] ** 4 / 45.0
    big = ~small
    bracket[big] = 1.0 - a[big] / np.tanh(a[big])
    return -(x[:, 1] * x[:, 2]) / x[:, 3] ** 2 * bracket


def q3(x: Array) -> Array:
    rw, r, tu, hu, tl, hl, l, kw = (x[:, i] for i in range(8))
    if np.any(rw <= 0) or np.any(r <= rw):
        raise DomainError("borehole model needs 0 < r_w < r")
    log_ratio = np.log(r / rw)
    return 2 * np.pi * tu * (hu - hl) / (log_ratio * (1 + tu / tl + 2 * l * tu / (log_ratio * rw**2 * kw)))


def q4(x: Array) -> Array:
    i = np.arange(1, x.shape[1] + 1)
    return np.prod((2 * np.abs(x) + i) / (1 + i), axis=1)


def sin_sum(x: Array) -> Array:
    return np.sin(x.sum(axis=1))


def sin_sum_grad(x: Array) -> Array:
    c = np.cos(x.sum(axis=1))
    return np.repeat(c[:, None], x.shape[1], axis=1)


def linear(x: Array) -> Array:
    return x[:, 0] + x[:, 1]


Q0_MEAN = 25.0 / 21.0 * (math.exp(-1) - math.exp(-0.4) - math.exp(0.4) + math.e)

MU2 = ProductDistribution(
    (
        Component("loguniform", 0.05, 0.2),
        Component("loguniform", 0.5, 3.0),
        Component("loguniform", 0.5, 3.0),
        Component("loguniform", 0.1, 1.0),
    )
)

MU3 = ProductDistribution(
    (
        Component("normal", 0.10, 0.0161812),
        Component("lognormal", 7.71, 1.0056),
        Component("uniform", 63070.0, 115600.0),
        Component("uniform", 990.0, 1110.0),
        Component("uniform", 63.1, 116.0),
        Component("uniform", 700.0, 820.0),
        Component("uniform", 1120.0, 1680.0),
        Component("uniform", 9855.0, 12045.0),
    )
)


def get_model(name: str) -> ModelSpec:
    """Look up a benchmark by name; ``sin<d>`` gives the sine-of-sum model in ``d`` dimensions."""
    if name == "q0":
        return ModelSpec("q0", 2, q0, ProductDistribution.uniform(2), q0_grad, Q0_MEAN)
    if name == "q0_lf":
        return ModelSpec("q0_lf", 2, q0_lf, ProductDistribution.uniform(2), cost=LF_COST_RATIO)
    if name == "q1":
        return ModelSpec("q1", 3, q1, ProductDistribution.uniform(3))
    if name == "q2":
        return ModelSpec("q2", 4, q2, MU2)
    if name == "q3":
        return ModelSpec("q3", 8, q3, MU3)
    if name == "q4":
        return ModelSpec("q4", 10, q4, ProductDistribution.uniform(10))
    if name == "linear":
        return ModelSpec(
            "linear", 2, linear, ProductDistribution.uniform(2), lambda x: np.ones_like(x), 0.0
        )
    if name.startswith("sin") and name[3:].isdigit():
        d = int(name[3:])
        return ModelSpec(name, d, sin_sum, ProductDistribution.uniform(d), sin_sum_grad, 0.0)
    raise KeyError(f"unknown model {name!r}")


MODEL_NAMES = ("q0", "q0_lf", "q1", "q2", "q3", "q4", "linear", "sin<d>")


def exact_mean(spec: ModelSpec) -> Optional[float]:
    return spec.exact_mean


# -- closed-form manifold for the linear example -----------------------------


@dataclass(frozen=True)
class TriangularCdf:
    """CDF of x1 + x2 for x uniform on [-1, 1]^2 (triangular on [-2, 2])."""

    def cdf_eval(self, t):
        t = np.clip(np.asarray(t, dtype=np.float64), -2.0, 2.0)
        return np.where(t <= 0, t**2 / 8 + t / 2 + 0.5, -(t**2) / 8 + t / 2 + 0.5)

    def cdf_inverse(self, u):
        u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
        return np.where(u <= 0.5, -2.0 + np.sqrt(8.0 * u), 2.0 - np.sqrt(8.0 * (1.0 - u)))

    def to_dict(self) -> dict:
        return {"kind": "triangular"}


def analytic_linear_neuram():
    """Exact encoder/decoder/surrogate for ``x1 + x2`` on ``U([-1,1]^2)``.

    Returns ``(model, cdf)`` where the networks have no hidden layer, so the
    maps are exactly ``x1 + x2``, ``z -> (z/2, z/2)`` and the identity.
    """
    from .neuram import AffineNormalizer, NeurAmModel, TrainReport
    from .nn import Mlp

    encoder = Mlp((2, 1), (np.array([[1.0], [1.0]]),), (np.zeros(1),))
    decoder = Mlp((1, 2), (np.array([[0.5, 0.5]]),), (np.zeros(2),))
    surrogate = Mlp((1, 1), (np.array([[1.0]]),), (np.zeros(1),))
    model = NeurAmModel(
        encoder,
        decoder,
        surrogate,
        AffineNormalizer.identity(2),
        AffineNormalizer.identity(1),
        TrainReport(0.0, [0.0], 1, 0, 0),
    )
    return model, TriangularCdf()
