from __future__ import annotations

import numpy as np
import pytest

from neuramstrat.models import get_model
from neuramstrat.neuram import Dataset, ManifoldMap, TrainConfig, build_cdf, train_neuram


def train_map(name: str, m: int = 100, k: int = 100_000, seed: int = 0, epochs: int = 10_000) -> ManifoldMap:
    spec = get_model(name)
    data = Dataset.from_model(spec, m, np.random.default_rng(seed))
    model = train_neuram(data, TrainConfig(epochs=epochs, seed=seed), spec.dist)
    cdf = build_cdf(model, spec.dist, k, np.random.default_rng(seed + 1))
    return ManifoldMap(model, cdf)


@pytest.fixture(scope="session")
def q0_map() -> ManifoldMap:
    return train_map("q0")


@pytest.fixture(scope="session")
def q0_lf_map() -> ManifoldMap:
    return train_map("q0_lf", seed=10)


@pytest.fixture(scope="session")
def linear_map():
    from neuramstrat.models import analytic_linear_neuram

    return ManifoldMap(*analytic_linear_neuram())
