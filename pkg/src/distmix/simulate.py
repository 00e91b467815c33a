"""Seeded data generators for the benchmark designs, plus the oracle fit.

Three scenarios are covered: mixtures of linear location-scale regressions,
mixtures of additive (spline) mean regressions, and an overfitted normal
mixture with two real components.  Every dataset is a pure function of its
design and seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import mixture, optim
from .families import get_family
from .mixture import MixtureState, build_state
from .predictors import ModelSpec, PredictorSpec, SmoothSpec
from .splines import BasisConfig


@dataclass
class SimDataset:
    """Generated covariates, responses, labels and generating truth."""

    X: pd.DataFrame
    y: np.ndarray
    labels: np.ndarray
    spec: ModelSpec
    psi_true: np.ndarray | None
    pi_true: np.ndarray
    true_means: object = None  # callable(frame) -> (M, n) mean predictors


def draw_weights(n_components, rng, min_weight=0.03):
    """Flat Dirichlet weights, rejection-sampled to respect a floor."""
    while True:
        pi = rng.dirichlet(np.ones(n_components))
        if pi.min() >= min_weight:
            return pi


# ---------------------------------------------------------------------------
# Linear location-scale mixtures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearMixtureDesign:
    """Mixture of linear location-scale regressions with constant weights."""

    n: int = 2500
    n_components: int = 2
    n_features: int = 2
    family: str = "normal"
    min_weight: float = 0.03
    seed: int = 0

    def __post_init__(self):
        if self.family not in ("normal", "laplace", "logistic"):
            raise ValueError("family must be one of normal, laplace, logistic")
        if min(self.n, self.n_components, self.n_features) < 1:
            raise ValueError("n, n_components and n_features must be positive")


def linear_mixture_spec(n_components, n_features, family_kind, entropy_weight=0.0):
    """Model spec matching the linear-mixture generator (constant gating)."""
    fam = get_family(family_kind)
    covars = tuple(f"x{i + 1}" for i in range(n_features))
    pred = PredictorSpec(linear=covars)
    return ModelSpec(
        families=(fam,) * n_components,
        param_predictors=tuple(
            tuple(pred for _ in range(fam.n_params)) for _ in range(n_components)
        ),
        entropy_weight=entropy_weight,
    )


def _sample_linear_mixture(design, pi, rng):
    fam = get_family(design.family)
    n, p, m_total = design.n, design.n_features, design.n_components
    x = rng.standard_normal((n, p))
    frame = pd.DataFrame(x, columns=[f"x{i + 1}" for i in range(p)])
    coefs = rng.uniform(-2.0, 2.0, size=(m_total, fam.n_params, p + 1))
    labels = rng.choice(m_total, size=n, p=pi)
    xd = np.hstack([np.ones((n, 1)), x])
    y = np.empty(n)
    for m in range(m_total):
        rows = labels == m
        if not rows.any():
            continue
        theta = tuple(
            fam.transforms[k].apply(xd[rows] @ coefs[m, k]) for k in range(fam.n_params)
        )
        y[rows] = fam.sample(theta, rng)
    return frame, y, labels, coefs


def _pack_linear_truth(spec, frame, coefs, pi):
    design = mixture.build_design(spec, frame)
    nested = design.unpack(design.new_psi())
    names = spec.predictor_names()
    for m, fam in enumerate(spec.families):
        for k, pname in enumerate(fam.param_names):
            name = names[spec.param_index(m, k)]
            nested[name]["intercept"] = coefs[m, k, :1]
            nested[name][f"linear({','.join(frame.columns)})"] = coefs[m, k, 1:]
    for m in range(spec.n_components):
        nested[f"gate{m + 1}"]["intercept"] = np.array([np.log(pi[m])])
    return design.pack(nested)


def gen_linear_mixture(design: LinearMixtureDesign) -> SimDataset:
    rng = np.random.default_rng(design.seed)
    pi = draw_weights(design.n_components, rng, design.min_weight)
    frame, y, labels, coefs = _sample_linear_mixture(design, pi, rng)
    spec = linear_mixture_spec(design.n_components, design.n_features, design.family)
    psi_true = _pack_linear_truth(spec, frame, coefs, pi)
    return SimDataset(frame, y, labels, spec, psi_true, pi)


# ---------------------------------------------------------------------------
# Additive mean mixtures
# ---------------------------------------------------------------------------


def bump_sine(x):
    return 2.0 * np.sin(3.0 * np.asarray(x, dtype=float))


def steep_exp(x):
    return np.exp(2.0 * np.asarray(x, dtype=float))


def double_hump(x):
    x = np.asarray(x, dtype=float)
    return 0.2 * x**11 * (10.0 * (1.0 - x)) ** 6 + 10.0 * (10.0 * x) ** 3 * (1.0 - x) ** 10


@dataclass(frozen=True)
class AdditiveMixtureDesign:
    """Three-component mixture of additive mean regressions on U(0,1) inputs."""

    n: int = 2500
    family: str = "normal"
    scale: float = 2.0
    weights: tuple = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
    n_noise: int = 3
    seed: int = 0
    df: float = 10.0
    num_basis: int = 12

    def __post_init__(self):
        if self.family not in ("normal", "poisson"):
            raise ValueError("family must be normal or poisson")
        if abs(sum(self.weights) - 1.0) > 1e-12 or len(self.weights) != 3:
            raise ValueError("weights must be three values summing to one")
        if self.scale <= 0:
            raise ValueError("scale must be positive")


def _additive_means(frame):
    x1 = frame["x1"].to_numpy(dtype=float)
    x2 = frame["x2"].to_numpy(dtype=float)
    intercept = 0.5
    return np.vstack(
        [
            intercept + bump_sine(x1) + steep_exp(x2),
            intercept + steep_exp(x1) + x2,
            intercept + x1 + double_hump(x2),
        ]
    )


def additive_mixture_spec(design: AdditiveMixtureDesign, entropy_weight=0.0):
    """Fitting spec: smooth mean terms for signal and noise variables."""
    fam = get_family(design.family)
    basis = BasisConfig(num_basis=design.num_basis, df=design.df)
    variables = ["x1", "x2"] + [f"noise{i + 1}" for i in range(design.n_noise)]
    mean_pred = PredictorSpec(smooths=tuple(SmoothSpec((v,), basis) for v in variables))
    if fam.kind == "normal":
        preds = (mean_pred, PredictorSpec())
    else:
        preds = (mean_pred,)
    return ModelSpec(
        families=(fam,) * 3,
        param_predictors=(preds,) * 3,
        entropy_weight=entropy_weight,
    )


def gen_additive_mixture(design: AdditiveMixtureDesign) -> SimDataset:
    rng = np.random.default_rng(design.seed)
    pi = np.asarray(design.weights, dtype=float)
    columns = {"x1": rng.uniform(size=design.n), "x2": rng.uniform(size=design.n)}
    for i in range(design.n_noise):
        columns[f"noise{i + 1}"] = rng.uniform(size=design.n)
    frame = pd.DataFrame(columns)
    means = _additive_means(frame)
    labels = rng.choice(3, size=design.n, p=pi)
    row_mean = means[labels, np.arange(design.n)]
    if design.family == "normal":
        y = rng.normal(row_mean, design.scale)
    else:
        # The scale setting acts as a multiplicative offset on the rate,
        # i.e. an additive log-offset on the mean predictor.
        y = rng.poisson(np.exp(row_mean + np.log(design.scale))).astype(float)
    spec = additive_mixture_spec(design)
    return SimDataset(frame, y, labels, spec, None, pi, true_means=_additive_means)


# ---------------------------------------------------------------------------
# Overfitted normal mixtures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OverfitMixtureDesign:
    """Two-component normal mixture fitted with surplus components."""

    n: int = 2500
    n_features: int = 10
    weight_low: float = 0.06
    weight_high: float = 0.094
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.weight_low < self.weight_high < 0.5:
            raise ValueError("need 0 < weight_low < weight_high < 0.5")


def gen_overfit_mixture(design: OverfitMixtureDesign) -> SimDataset:
    rng = np.random.default_rng(design.seed)
    pi1 = rng.uniform(design.weight_low, design.weight_high)
    pi = np.array([pi1, 1.0 - pi1])
    linear = LinearMixtureDesign(
        n=design.n, n_components=2, n_features=design.n_features, family="normal",
        seed=design.seed,
    )
    frame, y, labels, coefs = _sample_linear_mixture(linear, pi, rng)
    spec = linear_mixture_spec(2, design.n_features, "normal")
    psi_true = _pack_linear_truth(spec, frame, coefs, pi)
    return SimDataset(frame, y, labels, spec, psi_true, pi)


def overfit_mixture_spec(design: OverfitMixtureDesign, n_fit_components, entropy_weight=0.0):
    """Deliberately overparameterized spec with surplus mixture components."""
    return linear_mixture_spec(
        n_fit_components, design.n_features, "normal", entropy_weight=entropy_weight
    )


# ---------------------------------------------------------------------------
# Oracle fits with known labels
# ---------------------------------------------------------------------------


@dataclass
class OracleFit:
    """Per-component fits on the true partition, mixed by label frequencies."""

    states: list
    pi: np.ndarray

    def predict_log_density(self, frame, y):
        parts = [
            np.log(p) + mixture.predict_log_density(state, frame, y)
            for state, p in zip(self.states, self.pi)
        ]
        stacked = np.vstack(parts)
        from scipy.special import logsumexp

        return logsumexp(stacked, axis=0)

    def predictive_log_score(self, frame, y):
        return float(np.mean(self.predict_log_density(frame, y)))


def _component_param_count(design):
    return design.n_coef - design.spec.n_components


def _all_linear_normal(spec, m):
    fam = spec.families[m]
    if fam.kind != "normal":
        return False
    return all(not p.smooths for p in spec.param_predictors[m])


def _closed_form_normal(sub_spec, frame, y):
    """Location by least squares, scale by residual likelihood."""
    state = build_state(sub_spec, frame, y)
    design = state.design
    x_loc = np.hstack([b.matrix for b in design.blocks[0]])
    beta, *_ = np.linalg.lstsq(x_loc, y, rcond=None)
    state.psi[design.predictor_slice(0)] = beta
    resid = y - x_loc @ beta
    scale_pred = sub_spec.param_predictors[0][1]
    if scale_pred.intercept and not scale_pred.linear and not scale_pred.smooths:
        state.psi[design.predictor_slice(1)] = [0.5 * np.log(np.mean(resid**2))]
    else:
        state.psi[design.predictor_slice(1).start] = 0.5 * np.log(np.mean(resid**2))
        _adam_refine(state, design.predictor_slice(1))
    return state


def _adam_refine(state, coef_slice, steps=400):
    opt = optim.Adam(coef_slice.stop - coef_slice.start)
    for _ in range(steps):
        grad = mixture.gradient(state)[coef_slice]
        if not np.all(np.isfinite(grad)):
            break
        state.psi[coef_slice] = opt.step(state.psi[coef_slice], grad, 0.05)


def oracle_fit(dataset: SimDataset, spec: ModelSpec | None = None,
               cfg: optim.OptimConfig | None = None) -> OracleFit:
    """Independent single-component fits on the rows of each true component.

    Serves as the known-labels upper-bound comparator.  Gaussian components
    with purely linear predictors are solved in closed form; everything else
    runs a full-batch gradient fit on the component's rows.
    """
    spec = dataset.spec if spec is None else spec
    states = []
    counts = np.zeros(spec.n_components)
    for m, fam in enumerate(spec.families):
        rows = dataset.labels == m
        counts[m] = rows.sum()
        sub_spec = ModelSpec(
            families=(fam,),
            param_predictors=(spec.param_predictors[m],),
        )
        sub_frame = dataset.X.loc[rows].reset_index(drop=True)
        sub_y = dataset.y[rows]
        probe = build_state(sub_spec, sub_frame, sub_y)
        if counts[m] <= _component_param_count(probe.design):
            raise ValueError(
                f"component {m + 1} has {int(counts[m])} rows, fewer than its parameters"
            )
        if _all_linear_normal(spec, m):
            states.append(_closed_form_normal(sub_spec, sub_frame, sub_y))
        else:
            run_cfg = cfg or optim.OptimConfig(
                method="adam", learning_rate=0.05, batch_size=len(sub_frame),
                max_epochs=600, patience=600, val_fraction=0.1, seed=17,
            )
            result = optim.fit(probe, run_cfg)
            if not result.ok:
                raise RuntimeError(f"oracle fit diverged for component {m + 1}")
            states.append(probe.replace_psi(result.psi))
    return OracleFit(states=states, pi=counts / counts.sum())
