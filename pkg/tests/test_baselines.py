from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from neuramstrat.baselines import (
    ActiveSubspaceMap,
    AsDirection,
    GaussianMap,
    as_direction,
    as_stratum_index,
    gaussian_map,
    gaussian_map_inverse,
    lhs_estimate,
    lhs_sample,
)
from neuramstrat.models import Component, ProductDistribution, get_model
from neuramstrat.stratify import Stratification, uniform_breakpoints

SQUARE = ProductDistribution.uniform(2)


class TestLhs:
    def test_single_point(self):
        x = lhs_sample(1, 5, np.random.default_rng(0))
        assert x.shape == (1, 5) and np.all((x >= 0) & (x < 1))

    def test_four_bins(self):
        x = lhs_sample(4, 2, np.random.default_rng(1))
        for col in x.T:
            assert sorted(np.floor(col * 4).astype(int)) == [0, 1, 2, 3]

    def test_column_means(self):
        x = lhs_sample(1000, 6, np.random.default_rng(2))
        assert np.all(np.abs(x.mean(axis=0) - 0.5) < 0.02)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 300), st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_permutation_property(self, n, d, seed):
        x = lhs_sample(n, d, np.random.default_rng(seed))
        bins = np.floor(x * n).astype(int)
        for col in bins.T:
            assert np.array_equal(np.sort(col), np.arange(n))

    def test_invalid(self):
        with pytest.raises(ValueError):
            lhs_sample(0, 2, np.random.default_rng(0))

    def test_estimate_unbiased_on_linear(self):
        spec = get_model("sin3")
        rng = np.random.default_rng(3)
        est = np.array([lhs_estimate(spec, spec.dist, 64, rng).estimate for _ in range(500)])
        assert abs(est.mean()) < 4 * est.std() / math.sqrt(len(est))


class TestGaussianMap:
    def test_origin_to_median(self):
        assert np.array_equal(gaussian_map(ProductDistribution.uniform(4), np.zeros(4)), np.zeros(4))

    def test_interval_midpoint(self):
        dist = ProductDistribution((Component("uniform", 2.0, 7.0),))
        assert gaussian_map(dist, np.zeros(1))[0] == pytest.approx(4.5, abs=1e-15)

    def test_erf_form(self):
        z = np.random.default_rng(0).normal(size=(100, 2))
        from scipy.special import erf

        np.testing.assert_allclose(gaussian_map(SQUARE, z), erf(z / math.sqrt(2)), atol=1e-14)

    @pytest.mark.parametrize("name", ["q0", "q2", "q3"])
    def test_round_trip(self, name):
        dist = get_model(name).dist
        z = np.random.default_rng(1).normal(size=(1000, dist.dim))
        np.testing.assert_allclose(gaussian_map_inverse(dist, gaussian_map(dist, z)), z, atol=1e-8)

    def test_inverse_of_forward_in_x(self):
        dist = get_model("q3").dist
        x = dist.sample(1000, np.random.default_rng(2))
        gm = GaussianMap(dist)
        np.testing.assert_allclose(gm.forward(gm.inverse(x)), x, rtol=1e-10)

    def test_pushforward(self):
        dist = get_model("q3").dist
        z = np.random.default_rng(3).normal(size=(10_000, dist.dim))
        x = GaussianMap(dist).forward(z)
        for i, comp in enumerate(dist.components):
            assert stats.kstest(x[:, i], comp.cdf).statistic < 1.63 / math.sqrt(10_000)


class TestAsDirection:
    def test_linear_symmetric(self):
        spec = get_model("linear")
        d = as_direction(spec, GaussianMap(spec.dist), 10_000, np.random.default_rng(0))
        np.testing.assert_allclose(d.v, [1 / math.sqrt(2)] * 2, atol=0.02)
        assert np.linalg.norm(d.v) == pytest.approx(1.0)

    def test_first_coordinate_only(self):
        f = lambda x: np.exp(x[:, 0])
        d = as_direction(f, GaussianMap(ProductDistribution.uniform(3)), 2000, np.random.default_rng(1))
        np.testing.assert_allclose(d.v, [1, 0, 0], atol=1e-8)
        assert d.eigenvalues[1] == pytest.approx(0.0, abs=1e-12)

    def test_eigenvalues(self):
        spec = get_model("q1")
        d = as_direction(spec, GaussianMap(spec.dist), 500, np.random.default_rng(2))
        assert np.all(d.eigenvalues >= 0) and np.all(np.diff(d.eigenvalues) <= 0)
        first = d.v[np.flatnonzero(np.abs(d.v) > 1e-14)[0]]
        assert first > 0

    def test_analytic_gradient_agrees(self):
        spec = get_model("q0")
        gm = GaussianMap(spec.dist)
        a = as_direction(spec, gm, 2000, np.random.default_rng(3))
        b = as_direction(spec, gm, 2000, np.random.default_rng(3), gradient=spec.gradient)
        np.testing.assert_allclose(a.v, b.v, atol=1e-5)
        np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, rtol=1e-4)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            as_direction(get_model("q4"), GaussianMap(get_model("q4").dist), 5, np.random.default_rng(0))

    def test_serialization(self):
        d = AsDirection(np.array([0.6, 0.8]), np.array([2.0, 0.5]), 100)
        back = AsDirection.from_dict(d.to_dict())
        assert np.array_equal(back.v, d.v) and back.n_samples == 100


class TestAsStrata:
    def test_median_middle(self):
        gm = GaussianMap(SQUARE)
        d = AsDirection(np.array([0.28, 0.96]), np.ones(2), 1)
        assert as_stratum_index(d, gm, uniform_breakpoints(3), np.zeros(2)) == 2

    def test_two_strata_occupancy(self):
        spec = get_model("q0")
        gm = GaussianMap(spec.dist)
        d = as_direction(spec, gm, 1000, np.random.default_rng(0), gradient=spec.gradient)
        x = spec.dist.sample(10_000, np.random.default_rng(1))
        frac = np.mean(uniform_breakpoints(2).index(ActiveSubspaceMap(d, gm).to_unit(x)) == 0)
        assert 0.48 <= frac <= 0.52

    def test_occupancy_binomial(self):
        spec = get_model("q3")
        gm = GaussianMap(spec.dist)
        d = as_direction(spec, gm, 1000, np.random.default_rng(4))
        strat = Stratification(np.array([0, 0.1, 0.45, 0.5, 1.0]))
        n = 10_000
        x = spec.dist.sample(n, np.random.default_rng(5))
        freq = np.bincount(strat.index(ActiveSubspaceMap(d, gm).to_unit(x)), minlength=4)
        sd = np.sqrt(n * strat.widths * (1 - strat.widths))
        assert np.all(np.abs(freq - n * strat.widths) <= 3 * sd)

    def test_linear_half_planes(self):
        gm = GaussianMap(SQUARE)
        d = AsDirection(np.array([1.0, 1.0]) / math.sqrt(2), np.ones(2), 1)
        x = SQUARE.sample(2000, np.random.default_rng(6))
        s = np.array([as_stratum_index(d, gm, uniform_breakpoints(2), xi) for xi in x])
        t = x.sum(axis=1)
        keep = np.abs(t) > 1e-9
        assert np.array_equal(s[keep], np.where(t[keep] < 0, 1, 2))
