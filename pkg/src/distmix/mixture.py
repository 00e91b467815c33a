"""Mixture objective: softmax gating, log-sum-exp likelihood, penalties.

The negative log-likelihood of a batch is evaluated through the stable
log-sum-exp form.  The full objective adds the quadratic smoothness
penalties and an entropy penalty on the batch-averaged mixture weights;
both are scaled by batch-size fractions so that mini-batch objectives are
unbiased for the full-data objective.  Gradients are analytic, driven by
the posterior responsibilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from .predictors import DesignSet, ModelSpec, build_design


@dataclass
class MixtureState:
    """A model spec bound to evaluated designs, responses and coefficients."""

    spec: ModelSpec
    design: DesignSet
    y: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.psi = np.asarray(self.psi, dtype=float).ravel()
        if self.y.shape[0] != self.design.n:
            raise ValueError("response length does not match the design")
        if self.psi.shape[0] != self.design.n_coef:
            raise ValueError("psi length does not match the design layout")

    def replace_psi(self, psi):
        return MixtureState(self.spec, self.design, self.y, np.asarray(psi, float))


def build_state(spec: ModelSpec, frame, y, psi=None) -> MixtureState:
    """Convenience constructor: build designs and wrap them in a state."""
    design = build_design(spec, frame)
    if psi is None:
        psi = design.new_psi()
    y = np.asarray(y, dtype=float).ravel()
    if all(f.kind == "poisson" for f in spec.families):
        if np.any(y < 0) or np.any(y != np.floor(y)):
            raise ValueError("count response required: non-negative integers")
    return MixtureState(spec, design, y, psi)


def softmax(logits, axis=0):
    """Softmax with max subtraction; shift-invariant and overflow-safe."""
    logits = np.asarray(logits, dtype=float)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=0):
    logits = np.asarray(logits, dtype=float)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def mixture_weights(eta_pi):
    """Mixture weights from gating logits (vector, or M x n matrix)."""
    return softmax(eta_pi, axis=0)


def entropy(pi):
    """Shannon entropy with the 0 log 0 := 0 convention; always >= 0."""
    pi = np.asarray(pi, dtype=float)
    pos = pi > 0
    return float(-np.sum(pi[pos] * np.log(pi[pos])))


def _component_params(state: MixtureState, eta, m):
    """Transformed parameter tuple of component m from the eta matrix."""
    spec = state.spec
    fam = spec.families[m]
    return tuple(
        fam.transforms[k].apply(eta[spec.param_index(m, k)]) for k in range(fam.n_params)
    )


def _log_joint(state: MixtureState, rows=None):
    """log pi_m(x_i) + log f_m(y_i | theta_m(x_i)) as an (M, batch) matrix."""
    spec = state.spec
    eta = state.design.eval_eta(state.psi, rows)
    y = state.y if rows is None else state.y[rows]
    log_pi = log_softmax(eta[spec.n_theta:], axis=0)
    parts = np.empty_like(log_pi)
    for m, fam in enumerate(spec.families):
        theta = _component_params(state, eta, m)
        parts[m] = fam.log_density(y, theta)
    return log_pi + parts, eta


def nll(state: MixtureState, rows=None):
    """Negative log-likelihood of the batch in the log-sum-exp form."""
    joint, _ = _log_joint(state, rows)
    return float(-np.sum(logsumexp(joint, axis=0)))


def responsibilities(state: MixtureState, rows=None):
    """Posterior component probabilities, one row per observation."""
    joint, _ = _log_joint(state, rows)
    lse = logsumexp(joint, axis=0)
    return np.exp(joint - lse).T


def objective(state: MixtureState, rows=None):
    """Penalized batch objective.

    nll + (batch/n) * smoothness penalties + xi * batch * entropy(pi_bar),
    where pi_bar averages the mixture weights over the batch.  The entropy
    penalty is weighted per observation so that its strength is comparable
    across sample sizes.
    """
    spec = state.spec
    joint, eta = _log_joint(state, rows)
    value = float(-np.sum(logsumexp(joint, axis=0)))
    batch = joint.shape[1]
    frac = batch / state.design.n
    value += frac * state.design.penalty_value(state.psi)
    if spec.entropy_weight > 0:
        pi_bar = softmax(eta[spec.n_theta:], axis=0).mean(axis=1)
        value += spec.entropy_weight * batch * entropy(pi_bar)
    return value


def gradient(state: MixtureState, rows=None):
    """Analytic gradient of :func:`objective` with respect to psi."""
    spec = state.spec
    eta = state.design.eval_eta(state.psi, rows)
    y = state.y if rows is None else state.y[rows]
    batch = eta.shape[1]

    log_pi = log_softmax(eta[spec.n_theta:], axis=0)
    pi = np.exp(log_pi)
    parts = np.empty_like(log_pi)
    thetas = []
    for m, fam in enumerate(spec.families):
        theta = _component_params(state, eta, m)
        thetas.append(theta)
        parts[m] = fam.log_density(y, theta)
    joint = log_pi + parts
    lse = logsumexp(joint, axis=0)
    resp = np.exp(joint - lse)

    d_eta = np.zeros_like(eta)
    for m, fam in enumerate(spec.families):
        scores = fam.score(y, thetas[m])
        for k in range(fam.n_params):
            j = spec.param_index(m, k)
            d_eta[j] = -resp[m] * scores[k] * fam.transforms[k].deriv(eta[j])

    d_eta[spec.n_theta:] = pi - resp
    if spec.entropy_weight > 0:
        pi_bar = pi.mean(axis=1)
        log_pi_bar = np.log(pi_bar)
        cross = (pi * log_pi_bar[:, None]).sum(axis=0)
        d_eta[spec.n_theta:] -= spec.entropy_weight * pi * (
            log_pi_bar[:, None] - cross[None, :]
        )

    grad = state.design.backprop(d_eta, rows)
    grad += (batch / state.design.n) * state.design.penalty_grad(state.psi)
    return grad


def marginal_weights(state: MixtureState, rows=None):
    """Mixture weights averaged over the (batch of) observations."""
    eta = state.design.eval_eta(state.psi, rows)
    return softmax(eta[state.spec.n_theta:], axis=0).mean(axis=1)


def predict_log_density(state: MixtureState, frame, y):
    """Held-out per-row log density under the fitted model.

    Smooth terms are evaluated with the training knots; rows outside the
    training range are clamped to the boundary (use
    :meth:`DesignSet.eval_eta_new` directly to count them).
    """
    spec = state.spec
    y = np.asarray(y, dtype=float).ravel()
    eta, _ = state.design.eval_eta_new(state.psi, frame)
    if y.shape[0] != eta.shape[1]:
        raise ValueError("response length does not match the prediction frame")
    log_pi = log_softmax(eta[spec.n_theta:], axis=0)
    joint = np.empty_like(log_pi)
    for m, fam in enumerate(spec.families):
        theta = _component_params(state, eta, m)
        joint[m] = log_pi[m] + fam.log_density(y, theta)
    return logsumexp(joint, axis=0)


def predict_params(state: MixtureState, frame):
    """Per-row fitted distribution parameters and mixture weights."""
    spec = state.spec
    eta, clamped = state.design.eval_eta_new(state.psi, frame)
    out = {}
    for m, fam in enumerate(spec.families):
        theta = _component_params(state, eta, m)
        for k, pname in enumerate(fam.param_names):
            out[f"c{m + 1}.{pname}"] = theta[k]
    pi = softmax(eta[spec.n_theta:], axis=0)
    for m in range(spec.n_components):
        out[f"pi{m + 1}"] = pi[m]
    return pd.DataFrame(out), clamped
