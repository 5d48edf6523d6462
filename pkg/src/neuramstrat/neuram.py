"""Neural active manifold: encoder, decoder and 1-D surrogate trained jointly.

The three networks are fitted on normalized coordinates. ``ManifoldMap`` bundles
a trained model with the empirical CDF of its latent variable and provides the
map from the input domain to the unit interval used for stratification.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray
from scipy.stats import qmc

from .models import DomainError, ModelSpec, ProductDistribution, TriangularCdf
from .nn import AdamState, Mlp, adam_step, backward_cached, forward_cached, mlp_init

Array = NDArray[np.float64]

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class DegenerateLatentError(ValueError):
    pass


@dataclass(frozen=True)
class AffineNormalizer:
    """``normalize(x) = (x - center) / scale`` applied per component."""

    center: Array
    scale: Array

    @classmethod
    def identity(cls, d: int) -> "AffineNormalizer":
        return cls(np.zeros(d), np.ones(d))

    @classmethod
    def from_box(cls, lo, hi) -> "AffineNormalizer":
        lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
        return cls(0.5 * (lo + hi), 0.5 * (hi - lo))

    @classmethod
    def standardize(cls, y) -> "AffineNormalizer":
        y = np.asarray(y, dtype=np.float64)
        sd = float(np.std(y))
        return cls(np.array([float(np.mean(y))]), np.array([sd if sd > 0 else 1.0]))

    def normalize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.center) / self.scale

    def denormalize(self, x):
        return np.asarray(x, dtype=np.float64) * self.scale + self.center

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AffineNormalizer":
        return cls(np.array(d["center"], dtype=np.float64), np.array(d["scale"], dtype=np.float64))


@dataclass
class TrainReport:
    final_loss: float
    loss_history: list[float]
    epochs: int
    dataset_size: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "final_loss": self.final_loss,
            "loss_history": list(self.loss_history),
            "epochs": self.epochs,
            "dataset_size": self.dataset_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainReport":
        return cls(float(d["final_loss"]), [float(v) for v in d["loss_history"]], int(d["epochs"]),
                   int(d["dataset_size"]), int(d["seed"]))


@dataclass(frozen=True)
class Dataset:
    inputs: Array
    outputs: Array

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.outputs.ndim != 1 or len(self.inputs) != len(self.outputs):
            raise ValueError("inputs must be (n, d) and outputs (n,) with matching rows")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.outputs))):
            raise ValueError("dataset contains nonfinite values")

    @property
    def size(self) -> int:
        return len(self.outputs)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @classmethod
    def from_model(cls, spec: ModelSpec, m: int, rng: np.random.Generator) -> "Dataset":
        x = spec.dist.sample(m, rng)
        return cls(x, spec(x))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x_{i + 1}" for i in range(self.dim)] + ["q"])
            for row, q in zip(self.inputs, self.outputs):
                w.writerow([repr(float(v)) for v in row] + [repr(float(q))])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[-1] != "q":
            raise ValueError("last column of a dataset file must be 'q'")
        arr = np.array([[float(v) for v in r] for r in body], dtype=np.float64).reshape(len(body), len(header))
        return cls(arr[:, :-1], arr[:, -1])


@dataclass(frozen=True)
class NeurAmModel:
    encoder: Mlp
    decoder: Mlp
    surrogate: Mlp
    input_normalizer: AffineNormalizer
    output_normalizer: AffineNormalizer
    training_report: TrainReport

    @property
    def dim(self) -> int:
        return self.encoder.input_dim

    def _check(self, x) -> Array:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise DomainError(f"expected inputs of dimension {self.dim}, got {x.shape[1]}")
        return x

    def encode(self, x) -> Array:
        """Latent coordinate of each row of ``x``."""
        xn = self.input_normalizer.normalize(self._check(x))
        return forward_cached(self.encoder, xn)[0][:, 0]

    def decode(self, z) -> Array:
        z = np.asarray(z, dtype=np.float64).reshape(-1, 1)
        return self.input_normalizer.denormalize(forward_cached(self.decoder, z)[0])

    def surrogate_latent(self, z) -> Array:
        z = np.asarray(z, dtype=np.float64).reshape(-1, 1)
        return self.output_normalizer.denormalize(forward_cached(self.surrogate, z)[0][:, 0])

    def surrogate_eval(self, x) -> Array:
        return self.surrogate_latent(self.encode(x))

    def to_dict(self) -> dict:
        return {
            "encoder": self.encoder.to_dict(),
            "decoder": self.decoder.to_dict(),
            "surrogate": self.surrogate.to_dict(),
            "input_normalizer": self.input_normalizer.to_dict(),
            "output_normalizer": self.output_normalizer.to_dict(),
            "training_report": self.training_report.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NeurAmModel":
        return cls(
            Mlp.from_dict(d["encoder"]),
            Mlp.from_dict(d["decoder"]),
            Mlp.from_dict(d["surrogate"]),
            AffineNormalizer.from_dict(d["input_normalizer"]),
            AffineNormalizer.from_dict(d["output_normalizer"]),
            TrainReport.from_dict(d["training_report"]),
        )


def surrogate_eval(model: NeurAmModel, x) -> Array:
    x = np.asarray(x, dtype=np.float64)
    y = model.surrogate_eval(x)
    return y[0] if x.ndim == 1 else y


# -- loss ---------------------------------------------------------------------


def _loss_and_grads(encoder: Mlp, decoder: Mlp, surrogate: Mlp, x: Array, y: Array, with_grads: bool = True):
    """Three-term loss on normalized data and (optionally) its parameter gradients."""
    m = x.shape[0]
    z, acts_e1 = forward_cached(encoder, x)
    xt, acts_d1 = forward_cached(decoder, z)
    z2, acts_e2 = forward_cached(encoder, xt)
    y_proj, acts_s1 = forward_cached(surrogate, z2)
    y_surr, acts_s2 = forward_cached(surrogate, z)
    xt2, acts_d2 = forward_cached(decoder, z2)

    r_proj = y - y_proj[:, 0]
    r_surr = y - y_surr[:, 0]
    r_fix = xt - xt2
    terms = (
        float(np.mean(r_proj**2)),
        float(np.mean(r_surr**2)),
        float(np.mean(np.sum(r_fix**2, axis=1))),
    )
    if not with_grads:
        return terms, None

    g_s1, dz2_a = backward_cached(surrogate, acts_s1, (-2.0 / m * r_proj)[:, None])
    g_s2, dz_a = backward_cached(surrogate, acts_s2, (-2.0 / m * r_surr)[:, None])
    g_d2, dz2_b = backward_cached(decoder, acts_d2, -2.0 / m * r_fix)
    g_e2, dxt = backward_cached(encoder, acts_e2, dz2_a + dz2_b)
    g_d1, dz_b = backward_cached(decoder, acts_d1, 2.0 / m * r_fix + dxt)
    g_e1, _ = backward_cached(encoder, acts_e1, dz_a + dz_b)
    return terms, (g_e1 + g_e2, g_d1 + g_d2, g_s1 + g_s2)


def _normalized(model: NeurAmModel, data: Dataset) -> tuple[Array, Array]:
    if data.size == 0 or data.dim != model.dim:
        raise DomainError("dataset is empty or has the wrong dimension")
    return model.input_normalizer.normalize(data.inputs), model.output_normalizer.normalize(data.outputs)


def neuram_loss_terms(model: NeurAmModel, data: Dataset) -> tuple[float, float, float]:
    """(projection, surrogate, fixed-point) terms, each a batch mean."""
    x, y = _normalized(model, data)
    terms, _ = _loss_and_grads(model.encoder, model.decoder, model.surrogate, x, y, with_grads=False)
    return terms


def neuram_loss(model: NeurAmModel, data: Dataset) -> float:
    return float(sum(neuram_loss_terms(model, data)))


# -- training -----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10_000
    learning_rate: float = 1e-3
    seed: int = 0
    hidden: tuple[int, ...] = (8, 8)


def train_neuram(data: Dataset, config: TrainConfig = TrainConfig(),
                 dist: Optional[ProductDistribution] = None) -> NeurAmModel:
    """Fit encoder, decoder and surrogate by full-batch Adam.

    Inputs are mapped to ``[-1, 1]`` using ``dist``'s support box (or the data
    range when no distribution is given); outputs are standardized with the
    training mean and standard deviation.
    """
    if data.size < 2:
        raise ValueError("need at least two training points")
    if config.epochs < 1:
        raise ValueError("epochs must be positive")
    d = data.dim
    if dist is not None:
        in_norm = AffineNormalizer.from_box(*dist.support_box())
    else:
        lo, hi = data.inputs.min(axis=0), data.inputs.max(axis=0)
        hi = np.where(hi > lo, hi, lo + 1.0)
        in_norm = AffineNormalizer.from_box(lo, hi)
    out_norm = AffineNormalizer.standardize(data.outputs)
    x = in_norm.normalize(data.inputs)
    y = out_norm.normalize(data.outputs)

    s_enc, s_dec, s_sur = np.random.SeedSequence(config.seed).generate_state(3)
    hidden = list(config.hidden)
    nets = [
        mlp_init([d, *hidden, 1], int(s_enc)),
        mlp_init([1, *hidden, d], int(s_dec)),
        mlp_init([1, *hidden, 1], int(s_sur)),
    ]
    states = [AdamState.for_mlp(n, config.learning_rate) for n in nets]

    history: list[float] = []
    for epoch in range(config.epochs):
        terms, grads = _loss_and_grads(*nets, x, y)
        loss = sum(terms)
        if not np.isfinite(loss):
            raise TrainingError(f"nonfinite loss at epoch {epoch}")
        history.append(loss)
        if epoch == config.epochs - 1:
            break  # keep the parameters whose loss was recorded last
        for k in range(3):
            nets[k], states[k] = adam_step(nets[k], grads[k], states[k])
        if epoch % 2000 == 0:
            logger.debug("epoch %d loss %.3e", epoch, loss)

    report = TrainReport(history[-1], history, config.epochs, data.size, config.seed)
    return NeurAmModel(nets[0], nets[1], nets[2], in_norm, out_norm, report)


# -- latent CDF -----------------------------------------------------------------


@dataclass(frozen=True)
class EmpiricalCdf:
    """Piecewise-linear CDF through ``(t_(k), (k - 1/2) / K)`` for sorted latents."""

    sorted_latents: Array

    def __post_init__(self):
        t = self.sorted_latents
        if t.ndim != 1 or len(t) < 2:
            raise ValueError("need at least two latent samples")
        if np.any(np.diff(t) < 0):
            raise ValueError("latents must be sorted ascending")

    @property
    def size(self) -> int:
        return len(self.sorted_latents)

    @property
    def positions(self) -> Array:
        k = self.size
        return (np.arange(1, k + 1) - 0.5) / k

    def cdf_eval(self, t):
        return np.interp(t, self.sorted_latents, self.positions, left=0.0, right=1.0)

    def cdf_inverse(self, u):
        return np.interp(u, self.positions, self.sorted_latents)

    def to_dict(self) -> dict:
        return {"kind": "empirical", "sorted_latents": self.sorted_latents.tolist()}


def cdf_from_dict(d: dict):
    if d["kind"] == "triangular":
        return TriangularCdf()
    return EmpiricalCdf(np.array(d["sorted_latents"], dtype=np.float64))


def cdf_eval(cdf, t):
    return cdf.cdf_eval(t)


def cdf_inverse(cdf, u):
    return cdf.cdf_inverse(u)


CDF_SAMPLERS = ("sobol", "iid")


def build_cdf(model: NeurAmModel, dist: ProductDistribution, k: int, rng: np.random.Generator,
              chunk: int = 200_000, sampler: str = "sobol") -> EmpiricalCdf:
    """Encode ``k`` fresh draws from ``dist`` and sort them. No model evaluations.

    ``sampler="sobol"`` draws the inputs as a scrambled Sobol' sequence mapped
    through the marginal quantiles; each point is still distributed as ``dist``
    but the CDF error, and with it the stratum-weight bias, shrinks well below
    the ``1/sqrt(k)`` of ``sampler="iid"``.
    """
    if k < 100:
        raise ValueError("K must be at least 100")
    if sampler not in CDF_SAMPLERS:
        raise ValueError(f"unknown CDF sampler {sampler!r}; expected one of {CDF_SAMPLERS}")
    sobol = qmc.Sobol(dist.dim, scramble=True, seed=rng) if sampler == "sobol" else None
    parts = []
    done = 0
    while done < k:
        n = min(chunk, k - done)
        if sobol is None:
            x = dist.sample(n, rng)
        else:
            with warnings.catch_warnings():
                # balance is only exact at powers of two; prefixes are still low-discrepancy
                warnings.simplefilter("ignore", UserWarning)
                x = dist.quantile(sobol.random(n))
        z = model.encode(x)
        bad = np.flatnonzero(~np.isfinite(z))
        if bad.size:
            raise ValueError(f"nonfinite encoded value for latent sample {done + int(bad[0])}")
        parts.append(z)
        done += n
    latents = np.sort(np.concatenate(parts))
    if latents[-1] - latents[0] <= 1e-12:
        raise DegenerateLatentError("encoded samples span less than 1e-12; latent is constant")
    return EmpiricalCdf(latents)


# -- manifold maps ----------------------------------------------------------------


@dataclass(frozen=True)
class ManifoldMap:
    """A trained manifold together with its latent CDF: ``x -> F(E(x))``."""

    model: NeurAmModel
    cdf: EmpiricalCdf | TriangularCdf

    def to_unit(self, x) -> Array:
        return np.clip(self.cdf.cdf_eval(self.model.encode(x)), 0.0, 1.0)

    def surrogate(self, x) -> Array:
        return self.model.surrogate_eval(x)

    def from_unit(self, u) -> Array:
        """Point of the manifold at latent quantile ``u``: ``D(F^-1(u))``."""
        return self.model.decode(self.cdf.cdf_inverse(u))

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "cdf": self.cdf.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ManifoldMap":
        return cls(NeurAmModel.from_dict(d["model"]), cdf_from_dict(d["cdf"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ManifoldMap":
        return cls.from_dict(json.loads(Path(path).read_text()))


def reparameterize_lf(hf: ManifoldMap, lf: ManifoldMap, lf_raw: Callable[[Array], Array], x) -> Array:
    """Evaluate ``lf_raw`` at the LF-manifold point sharing ``x``'s HF latent quantile."""
    x = np.asarray(x, dtype=np.float64)
    u = hf.to_unit(np.atleast_2d(x))
    y = np.asarray(lf_raw(lf.from_unit(u)), dtype=np.float64)
    return y[0] if x.ndim == 1 else y


def reparameterized_model(hf: ManifoldMap, lf: ManifoldMap, lf_spec: ModelSpec) -> ModelSpec:
    return ModelSpec(
        name=f"{lf_spec.name}_reparam",
        dim=hf.model.dim,
        func=lambda x: reparameterize_lf(hf, lf, lf_spec, x),
        dist=lf_spec.dist,
        cost=lf_spec.cost,
    )
