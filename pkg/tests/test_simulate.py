"""Simulation generators and the known-labels oracle fit."""

import math

import numpy as np
import pytest

from distmix import (
    AdditiveMixtureDesign,
    LinearMixtureDesign,
    OverfitMixtureDesign,
    build_state,
    gen_additive_mixture,
    gen_linear_mixture,
    gen_overfit_mixture,
    nll,
    oracle_fit,
)
from distmix.simulate import (
    bump_sine,
    double_hump,
    draw_weights,
    steep_exp,
)


class TestWeights:
    def test_floor_holds_over_many_draws(self):
        rng = np.random.default_rng(0)
        lows = [draw_weights(4, rng, 0.03).min() for _ in range(1000)]
        assert min(lows) >= 0.03

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(1)
        for m in (2, 3, 5, 10):
            pi = draw_weights(m, rng)
            assert pi.sum() == pytest.approx(1.0)


class TestLinearMixture:
    def test_psi_length_two_components(self):
        dataset = gen_linear_mixture(LinearMixtureDesign(n=200, seed=3))
        assert dataset.psi_true.size == 2 * (3 + 3) + 2

    def test_same_seed_identical_dataset(self):
        a = gen_linear_mixture(LinearMixtureDesign(n=150, seed=9))
        b = gen_linear_mixture(LinearMixtureDesign(n=150, seed=9))
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.psi_true, b.psi_true)
        assert a.X.equals(b.X)

    def test_true_psi_reproduces_generating_likelihood(self):
        # the packed truth must parameterize the exact generating mixture:
        # check component-conditional moments through the state pipeline
        dataset = gen_linear_mixture(
            LinearMixtureDesign(n=4000, n_components=2, n_features=2, seed=11)
        )
        state = build_state(dataset.spec, dataset.X, dataset.y, dataset.psi_true)
        assert np.isfinite(nll(state))
        eta = state.design.eval_eta(state.psi)
        for m in range(2):
            rows = dataset.labels == m
            mu = eta[dataset.spec.param_index(m, 0)][rows]
            sigma = np.exp(eta[dataset.spec.param_index(m, 1)][rows])
            z = (dataset.y[rows] - mu) / sigma
            assert abs(z.mean()) < 3.5 / math.sqrt(rows.sum())
            assert abs(z.std() - 1.0) < 3.0 * 3.5 / math.sqrt(2 * rows.sum())

    def test_family_choices(self):
        for family in ("normal", "laplace", "logistic"):
            dataset = gen_linear_mixture(
                LinearMixtureDesign(n=100, family=family, seed=1)
            )
            assert dataset.spec.families[0].kind == family
        with pytest.raises(ValueError):
            LinearMixtureDesign(family="poisson")


class TestAdditiveMixture:
    def test_component_function_values(self):
        assert bump_sine(0.0) == 0.0
        assert steep_exp(0.0) == 1.0
        assert bump_sine(math.pi / 6) == pytest.approx(2.0)
        assert double_hump(0.0) == 0.0
        assert double_hump(1.0) == pytest.approx(0.0, abs=1e-12)

    def test_gaussian_residual_scale(self):
        design = AdditiveMixtureDesign(n=100_000, scale=2.0, seed=5)
        dataset = gen_additive_mixture(design)
        means = dataset.true_means(dataset.X)
        resid = dataset.y - means[dataset.labels, np.arange(design.n)]
        assert abs(resid.std() - 2.0) < 0.02

    def test_poisson_offset_scales_rate(self):
        design = AdditiveMixtureDesign(n=50_000, family="poisson", scale=2.0, seed=6)
        dataset = gen_additive_mixture(design)
        means = dataset.true_means(dataset.X)
        rate = 2.0 * np.exp(means[dataset.labels, np.arange(design.n)])
        ratio = dataset.y.sum() / rate.sum()
        assert ratio == pytest.approx(1.0, abs=0.02)

    def test_noise_columns_present(self):
        dataset = gen_additive_mixture(AdditiveMixtureDesign(n=300, n_noise=10, seed=7))
        assert sum(c.startswith("noise") for c in dataset.X.columns) == 10

    def test_weight_options(self):
        skew = (0.1, 0.3, 0.6)
        dataset = gen_additive_mixture(
            AdditiveMixtureDesign(n=30_000, weights=skew, seed=8)
        )
        counts = np.bincount(dataset.labels, minlength=3) / 30_000
        np.testing.assert_allclose(counts, skew, atol=0.01)


class TestOverfitMixture:
    def test_weight_interval_honored(self):
        for seed in range(25):
            dataset = gen_overfit_mixture(OverfitMixtureDesign(n=50, seed=seed))
            assert 0.06 < dataset.pi_true[0] < 0.094
            assert dataset.pi_true.sum() == pytest.approx(1.0)

    def test_psi_length(self):
        dataset = gen_overfit_mixture(OverfitMixtureDesign(n=100, seed=1))
        assert dataset.psi_true.size == 2 * (11 + 11) + 2


class TestOracleFit:
    def test_single_component_equals_ordinary_fit(self):
        dataset = gen_linear_mixture(
            LinearMixtureDesign(n=400, n_components=1, n_features=2, seed=13)
        )
        oracle = oracle_fit(dataset)
        xd = np.column_stack([np.ones(400), dataset.X.to_numpy()])
        beta, *_ = np.linalg.lstsq(xd, dataset.y, rcond=None)
        state = oracle.states[0]
        np.testing.assert_allclose(
            state.psi[state.design.predictor_slice(0)], beta, atol=1e-10
        )
        assert oracle.pi[0] == 1.0

    def test_per_cluster_least_squares_match(self):
        dataset = gen_linear_mixture(
            LinearMixtureDesign(n=1200, n_components=2, n_features=2, seed=14)
        )
        oracle = oracle_fit(dataset)
        for m in range(2):
            rows = dataset.labels == m
            xd = np.column_stack(
                [np.ones(rows.sum()), dataset.X.to_numpy()[rows]]
            )
            beta, *_ = np.linalg.lstsq(xd, dataset.y[rows], rcond=None)
            state = oracle.states[m]
            np.testing.assert_allclose(
                state.psi[state.design.predictor_slice(0)], beta, atol=1e-4
            )

    def test_component_smaller_than_parameter_count_rejected(self):
        dataset = gen_linear_mixture(
            LinearMixtureDesign(n=60, n_components=2, n_features=10, seed=2)
        )
        # shrink one component below its 22 parameters
        keep = np.ones(60, dtype=bool)
        first = np.where(dataset.labels == 0)[0]
        keep[first[10:]] = False
        dataset.X = dataset.X.loc[keep].reset_index(drop=True)
        dataset.y = dataset.y[keep]
        dataset.labels = dataset.labels[keep]
        if (dataset.labels == 0).sum() > 21:
            pytest.skip("seed produced too many rows to trim")
        with pytest.raises(ValueError, match="fewer than its parameters"):
            oracle_fit(dataset)

    def test_oracle_log_density_is_mixture_of_components(self):
        dataset = gen_linear_mixture(LinearMixtureDesign(n=500, seed=15))
        oracle = oracle_fit(dataset)
        values = oracle.predict_log_density(dataset.X, dataset.y)
        assert values.shape == (500,)
        assert np.all(np.isfinite(values))
