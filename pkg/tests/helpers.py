"""Shared test utilities: finite differences, naive oracles, random models."""

import numpy as np
import pandas as pd

from distmix import (
    BasisConfig,
    ModelSpec,
    PredictorSpec,
    SmoothSpec,
    build_state,
    get_family,
    objective,
)


def fd_gradient(func, x, h=1e-6):
    """Central finite differences of a scalar function."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (func(up) - func(down)) / (2.0 * h)
    return grad


def objective_fd_gradient(state, rows=None, h=1e-6):
    def at(psi):
        return objective(state.replace_psi(psi), rows)

    return fd_gradient(at, state.psi, h)


def naive_nll(state, rows=None, dtype=np.longdouble):
    """Sum-then-log likelihood: the textbook formula without max subtraction.

    In extended precision this is the value oracle; in float64 it breaks on
    far-tail observations (densities underflow to zero), which is exactly
    what the stable log-sum-exp production path prevents.
    """
    spec = state.spec
    eta = state.design.eval_eta(state.psi, rows).astype(dtype)
    y = state.y if rows is None else state.y[rows]
    logits = eta[spec.n_theta:]
    with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
        weights = np.exp(logits)
        weights = weights / weights.sum(axis=0, keepdims=True)
        density = np.zeros(eta.shape[1], dtype=dtype)
        for m, fam in enumerate(spec.families):
            theta = tuple(
                fam.transforms[k].apply(np.asarray(eta[spec.param_index(m, k)], float))
                for k in range(fam.n_params)
            )
            density += weights[m] * np.exp(
                np.asarray(fam.log_density(y, theta), dtype=dtype)
            )
        return float(-np.sum(np.log(density)))


def random_model_instance(rng, with_smooths=False, entropy_weight=0.0, n=30,
                          family_kinds=None):
    """A small random mixture state with valid data drawn from the model."""
    kinds = ("normal", "laplace", "logistic", "poisson")
    n_components = int(rng.integers(1, 4))
    if family_kinds is None:
        family_kinds = [kinds[rng.integers(len(kinds))] for _ in range(n_components)]
    families = tuple(get_family(k) for k in family_kinds)

    frame = pd.DataFrame(
        {
            "x1": rng.standard_normal(n),
            "x2": rng.standard_normal(n),
            "u": rng.uniform(size=n),
        }
    )
    if with_smooths:
        pred = PredictorSpec(
            linear=("x1",),
            smooths=(SmoothSpec(("u",), BasisConfig(num_basis=6, df=4.0)),),
        )
    else:
        pred = PredictorSpec(linear=("x1", "x2"))
    gating = PredictorSpec(linear=("x2",)) if rng.random() < 0.5 else PredictorSpec()

    spec = ModelSpec(
        families=families,
        param_predictors=tuple(
            tuple(pred for _ in range(f.n_params)) for f in families
        ),
        gating=gating,
        entropy_weight=entropy_weight,
    )

    # Draw responses from the model itself at a reference coefficient vector
    # so that every observation lies in the support of its component.
    state = build_state(spec, frame, np.zeros(n))
    psi_ref = rng.uniform(-0.6, 0.6, state.design.n_coef)
    eta = state.design.eval_eta(psi_ref)
    from distmix.mixture import softmax

    pi = softmax(eta[spec.n_theta:], axis=0)
    labels = np.array([rng.choice(n_components, p=pi[:, i]) for i in range(n)])
    y = np.empty(n)
    for m, fam in enumerate(families):
        rows = labels == m
        if not rows.any():
            continue
        theta = tuple(
            fam.transforms[k].apply(eta[spec.param_index(m, k)][rows])
            for k in range(fam.n_params)
        )
        y[rows] = fam.sample(theta, rng)
    state = build_state(spec, frame, y)
    state.psi = rng.uniform(-0.6, 0.6, state.design.n_coef)
    state.frame = frame  # kept for prediction tests
    return state
