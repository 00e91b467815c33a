"""Mixture objective: softmax, likelihood, responsibilities, gradient."""

import math

import numpy as np
import pandas as pd
import pytest

from distmix import (
    ModelSpec,
    PredictorSpec,
    build_state,
    entropy,
    get_family,
    gradient,
    marginal_weights,
    mixture_weights,
    nll,
    objective,
    predict_log_density,
    responsibilities,
)
from distmix.mixture import log_softmax, softmax

from helpers import naive_nll, objective_fd_gradient, random_model_instance


def intercept_mixture(kinds, y, gate_logits=None, entropy_weight=0.0):
    """Intercept-only mixture state over a trivial frame."""
    families = tuple(get_family(k) for k in kinds)
    spec = ModelSpec(
        families=families,
        param_predictors=tuple(
            tuple(PredictorSpec() for _ in range(f.n_params)) for f in families
        ),
        entropy_weight=entropy_weight,
    )
    frame = pd.DataFrame({"dummy": np.zeros(len(y))})
    state = build_state(spec, frame, y)
    if gate_logits is not None:
        for m, logit in enumerate(gate_logits):
            state.psi[state.design.predictor_slice(spec.n_theta + m)] = [logit]
    return state


class TestSoftmax:
    def test_uniform_logits(self):
        np.testing.assert_allclose(mixture_weights(np.zeros(3)), np.full(3, 1 / 3))

    def test_analytic_two_component(self):
        np.testing.assert_allclose(
            mixture_weights(np.array([math.log(2.0), 0.0])), [2 / 3, 1 / 3], atol=1e-12
        )

    def test_shift_invariance_large_offset(self):
        logits = np.array([0.2, -1.0, 3.0])
        np.testing.assert_allclose(
            mixture_weights(logits), mixture_weights(logits + 1000.0), atol=1e-12
        )

    def test_rows_sum_to_one_matrix_input(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((4, 50)) * 10
        pi = mixture_weights(logits)
        np.testing.assert_allclose(pi.sum(axis=0), 1.0, atol=1e-12)
        assert np.all(pi > 0)


class TestNll:
    def test_single_standard_normal(self):
        state = intercept_mixture(("normal",), np.array([0.0]))
        assert nll(state) == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-6)

    def test_identical_components_collapse(self):
        y = np.random.default_rng(1).standard_normal(40)
        one = intercept_mixture(("normal",), y)
        two = intercept_mixture(("normal", "normal"), y, gate_logits=[1.3, -0.4])
        assert nll(two) == pytest.approx(nll(one), rel=1e-12)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            state = random_model_instance(rng, n=5)
            assert nll(state) == pytest.approx(naive_nll(state), rel=1e-10)

    def test_lse_survives_extreme_gating_logits(self):
        # Gating logits of magnitude 700 push the dominated component's
        # joint term out of float64 range; with a far-tail response even the
        # dominant term underflows, so the naive float64 form is non-finite
        # while the log-sum-exp form stays exact.
        y = np.array([40.0, 0.1, -0.3])
        state = intercept_mixture(("normal", "normal"), y, gate_logits=[700.0, -700.0])
        assert np.isfinite(nll(state))
        assert not np.isfinite(naive_nll(state, dtype=np.float64))

    def test_batch_subset(self):
        rng = np.random.default_rng(4)
        state = random_model_instance(rng, n=20)
        rows = np.array([0, 3, 7])
        total = nll(state)
        rest = np.setdiff1d(np.arange(20), rows)
        assert nll(state, rows) + nll(state, rest) == pytest.approx(total, rel=1e-12)


class TestResponsibilities:
    def test_identical_components_return_prior(self):
        y = np.random.default_rng(5).standard_normal(30)
        state = intercept_mixture(
            ("normal", "normal"), y, gate_logits=[math.log(0.3), math.log(0.7)]
        )
        resp = responsibilities(state)
        np.testing.assert_allclose(resp, np.tile([0.3, 0.7], (30, 1)), atol=1e-12)

    def test_zero_density_component_gets_zero(self):
        # Poisson support excludes non-integer responses
        y = np.array([2.5, 3.0])
        state = intercept_mixture(("normal", "poisson"), y)
        state.psi[0] = 2.5  # normal location
        resp = responsibilities(state)
        assert resp[0, 1] == 0.0
        assert resp[0, 0] == 1.0
        assert resp[1, 1] > 0.0

    def test_rows_sum_to_one_random(self):
        rng = np.random.default_rng(6)
        state = random_model_instance(rng)
        resp = responsibilities(state)
        np.testing.assert_allclose(resp.sum(axis=1), 1.0, atol=1e-10)
        assert resp.min() >= 0.0 and resp.max() <= 1.0

    def test_matches_bayes_rule_oracle(self):
        rng = np.random.default_rng(7)
        state = random_model_instance(rng, n=8)
        spec = state.spec
        eta = state.design.eval_eta(state.psi)
        pi = softmax(eta[spec.n_theta:], axis=0)
        dens = np.zeros((spec.n_components, 8))
        for m, fam in enumerate(spec.families):
            theta = tuple(
                fam.transforms[k].apply(eta[spec.param_index(m, k)])
                for k in range(fam.n_params)
            )
            dens[m] = np.exp(fam.log_density(state.y, theta))
        oracle = (pi * dens) / (pi * dens).sum(axis=0, keepdims=True)
        np.testing.assert_allclose(responsibilities(state), oracle.T, atol=1e-12)


class TestObjective:
    def test_reduces_to_nll_without_penalties(self):
        rng = np.random.default_rng(8)
        state = random_model_instance(rng)  # linear model: no smoothing penalty
        assert objective(state) == pytest.approx(nll(state), rel=1e-12)

    def test_degenerate_weights_contribute_zero_entropy(self):
        y = np.random.default_rng(9).standard_normal(20)
        state = intercept_mixture(
            ("normal", "normal"), y, gate_logits=[40.0, -40.0], entropy_weight=0.5
        )
        pi_bar = marginal_weights(state)
        assert entropy(pi_bar) < 1e-15
        assert objective(state) == pytest.approx(nll(state), rel=1e-12)

    def test_uniform_weights_entropy_magnitude(self):
        y = np.random.default_rng(10).standard_normal(12)
        state = intercept_mixture(("normal",) * 4, y, entropy_weight=0.5)
        pi_bar = marginal_weights(state)
        assert entropy(pi_bar) == pytest.approx(math.log(4.0), abs=1e-12)
        # penalty adds xi * batch * H(pi_bar) on top of the likelihood
        assert objective(state) - nll(state) == pytest.approx(
            0.5 * 12 * math.log(4.0), rel=1e-12
        )

    def test_entropy_penalty_bounds(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            m = int(rng.integers(2, 6))
            pi = rng.dirichlet(np.ones(m))
            assert 0.0 <= entropy(pi) <= math.log(m) + 1e-12


class TestGradient:
    def test_zero_at_single_component_mle(self):
        y = np.random.default_rng(12).standard_normal(50) * 1.7 + 0.3
        state = intercept_mixture(("normal",), y)
        state.psi[0] = y.mean()
        state.psi[1] = 0.5 * math.log(np.mean((y - y.mean()) ** 2))
        assert np.linalg.norm(gradient(state)) < 1e-6

    def test_gating_gradient_zero_when_responsibilities_match_prior(self):
        y = np.random.default_rng(13).standard_normal(25)
        state = intercept_mixture(
            ("normal", "normal"), y, gate_logits=[0.8, -0.2]
        )
        grad = gradient(state)
        gate_slice = slice(
            state.design.predictor_slice(state.spec.n_theta).start, None
        )
        np.testing.assert_allclose(grad[gate_slice], 0.0, atol=1e-10)

    @pytest.mark.parametrize("entropy_weight", [0.0, 0.01, 0.1])
    @pytest.mark.parametrize("with_smooths", [False, True])
    def test_matches_finite_differences(self, entropy_weight, with_smooths):
        rng = np.random.default_rng(14)
        for _ in range(3):
            state = random_model_instance(
                rng, with_smooths=with_smooths, entropy_weight=entropy_weight
            )
            analytic = gradient(state)
            fd = objective_fd_gradient(state)
            err = np.max(np.abs(analytic - fd) / (1.0 + np.abs(fd)))
            assert err < 1e-4

    def test_minibatch_gradient_matches_fd(self):
        rng = np.random.default_rng(15)
        state = random_model_instance(rng, with_smooths=True, entropy_weight=0.05)
        rows = np.array([1, 4, 9, 16, 25])
        analytic = gradient(state, rows)
        fd = objective_fd_gradient(state, rows)
        err = np.max(np.abs(analytic - fd) / (1.0 + np.abs(fd)))
        assert err < 1e-4


class TestPenaltyEffect:
    def test_more_smoothing_never_increases_wiggliness(self):
        # same data, same seed, three smoothing levels: the quadratic
        # penalty value of the converged fit must be non-increasing
        from distmix import BasisConfig, OptimConfig, SmoothSpec, fit

        rng = np.random.default_rng(16)
        n = 150
        frame = pd.DataFrame({"u": rng.uniform(size=n)})
        y = np.sin(6 * frame["u"].to_numpy()) + 0.3 * rng.standard_normal(n)
        wiggle = []
        for df in (8.0, 5.0, 2.5):
            spec = ModelSpec(
                families=(get_family("normal"),),
                param_predictors=(
                    (
                        PredictorSpec(
                            smooths=(SmoothSpec(("u",), BasisConfig(num_basis=10, df=df)),)
                        ),
                        PredictorSpec(),
                    ),
                ),
            )
            state = build_state(spec, frame, y)
            result = fit(
                state,
                OptimConfig(
                    method="adam", learning_rate=0.05, batch_size=n, max_epochs=800,
                    patience=800, val_fraction=0.1, seed=3,
                ),
            )
            block = state.design.blocks[0][1]  # the smooth term after the intercept
            sl = state.design.slices[0][1]
            gamma = result.psi[sl]
            wiggle.append(float(gamma @ block.penalty @ gamma))
        assert wiggle[0] >= wiggle[1] >= wiggle[2]


class TestPrediction:
    def test_training_rows_reproduce_training_likelihood(self):
        rng = np.random.default_rng(17)
        state = random_model_instance(rng, with_smooths=True)
        values = predict_log_density(state, state.frame, state.y)
        assert float(-np.sum(values)) == pytest.approx(nll(state), rel=1e-10)

    def test_single_normal_intercept_value(self):
        state = intercept_mixture(("normal",), np.array([0.0]))
        frame = pd.DataFrame({"dummy": [0.0]})
        value = predict_log_density(state, frame, np.array([0.0]))[0]
        assert value == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-6)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(18)
        state = random_model_instance(rng, n=6)
        values = predict_log_density(state, state.frame, state.y)
        assert float(-np.sum(values)) == pytest.approx(naive_nll(state), rel=1e-10)
