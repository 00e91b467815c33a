"""EM baseline for mixtures with constant weights and linear predictors.

The E-step reuses the mixture responsibilities; the M-step is exact where a
closed form exists (weighted least squares for normal locations, closed
scale and rate updates for intercept-only predictors) and otherwise runs a
few full-batch Adam steps on the responsibility-weighted component
likelihood, keeping the previous coefficients whenever the inner step fails
to improve.  That accept-if-improved rule keeps the observed-data
log-likelihood non-decreasing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mixture
from .mixture import build_state
from .optim import Adam
from .predictors import ModelSpec


@dataclass(frozen=True)
class EmConfig:
    max_iter: int = 500
    tol: float = 1e-6
    restarts: int = 20
    inner_steps: int = 25
    seed: int = 0
    collapse_tol: float = 1e-8

    def __post_init__(self):
        if min(self.max_iter, self.restarts, self.inner_steps) < 1:
            raise ValueError("max_iter, restarts and inner_steps must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class EmResult:
    psi: np.ndarray | None
    loglik_trace: np.ndarray
    status: str
    converged: bool
    restart: int
    n_failed_restarts: int
    restart_statuses: list

    @property
    def ok(self):
        return self.psi is not None


class _RestartFailed(Exception):
    def __init__(self, status):
        self.status = status


def _validate_spec(spec: ModelSpec):
    g = spec.gating
    if g.linear or g.smooths or not g.intercept:
        raise ValueError("EM supports constant mixture weights only (intercept gating)")
    for preds in spec.param_predictors:
        for p in preds:
            if p.smooths:
                raise ValueError("EM supports linear predictors only (no smooth terms)")


def _predictor_matrix(design, j):
    blocks = design.blocks[j]
    return np.hstack([b.matrix for b in blocks])


def _weighted_nll(state, m, weights):
    spec = state.spec
    eta = state.design.eval_eta(state.psi)
    fam = spec.families[m]
    theta = tuple(
        fam.transforms[k].apply(eta[spec.param_index(m, k)]) for k in range(fam.n_params)
    )
    logf = fam.log_density(state.y, theta)
    return float(-np.sum(np.where(weights > 0, weights * logf, 0.0)))


def _inner_adam(state, m, weights, coef_slice, steps):
    """Adam on the weighted component NLL over one coefficient slice.

    The update is kept only if it improves the weighted NLL.
    """
    spec = state.spec
    fam = spec.families[m]
    before = _weighted_nll(state, m, weights)
    saved = state.psi.copy()
    opt = Adam(coef_slice.stop - coef_slice.start)
    for _ in range(steps):
        eta = state.design.eval_eta(state.psi)
        theta = tuple(
            fam.transforms[k].apply(eta[spec.param_index(m, k)])
            for k in range(fam.n_params)
        )
        scores = fam.score(state.y, theta)
        d_eta = np.zeros_like(eta)
        for k in range(fam.n_params):
            j = spec.param_index(m, k)
            d_eta[j] = -weights * scores[k] * fam.transforms[k].deriv(eta[j])
        grad = state.design.backprop(d_eta)[coef_slice]
        if not np.all(np.isfinite(grad)):
            raise _RestartFailed("nonfinite")
        state.psi[coef_slice] = opt.step(state.psi[coef_slice], grad, 0.1)
    after = _weighted_nll(state, m, weights)
    if not np.isfinite(after) or after > before:
        state.psi[:] = saved


def _solve_wls(x, w, y):
    xw = x * w[:, None]
    gram = x.T @ xw
    if not np.all(np.isfinite(gram)):
        raise _RestartFailed("nonfinite")
    try:
        cond = np.linalg.cond(gram)
    except np.linalg.LinAlgError:
        raise _RestartFailed("singular") from None
    if not np.isfinite(cond) or cond > 1e10:
        raise _RestartFailed("singular")
    return np.linalg.solve(gram, xw.T @ y)


def _is_intercept_only(spec, m, k):
    p = spec.param_predictors[m][k]
    return p.intercept and not p.linear and not p.smooths


def _m_step(state, resp, cfg):
    """Maximize the responsibility-weighted likelihood component by component."""
    spec = state.spec
    design = state.design
    pi = resp.mean(axis=0)
    if np.min(pi) < cfg.collapse_tol:
        raise _RestartFailed("collapse")
    for m, fam in enumerate(spec.families):
        w = resp[:, m]
        if fam.kind == "normal":
            j_loc = spec.param_index(m, 0)
            j_scale = spec.param_index(m, 1)
            eta = design.eval_eta(state.psi)
            sigma = fam.transforms[1].apply(eta[j_scale])
            x_loc = _predictor_matrix(design, j_loc)
            beta = _solve_wls(x_loc, w / sigma**2, state.y)
            state.psi[design.predictor_slice(j_loc)] = beta
            mu = x_loc @ beta
            if _is_intercept_only(spec, m, 1):
                total = w.sum()
                if total <= 0:
                    raise _RestartFailed("collapse")
                var = float(np.sum(w * (state.y - mu) ** 2) / total)
                if var <= 0 or not np.isfinite(var):
                    raise _RestartFailed("nonfinite")
                state.psi[design.predictor_slice(j_scale)] = [0.5 * np.log(var)]
            else:
                _inner_adam(state, m, w, design.predictor_slice(j_scale), cfg.inner_steps)
        elif fam.kind == "poisson" and _is_intercept_only(spec, m, 0):
            total = w.sum()
            if total <= 0:
                raise _RestartFailed("collapse")
            rate = float(np.sum(w * state.y) / total)
            if rate <= 0 or not np.isfinite(rate):
                raise _RestartFailed("nonfinite")
            state.psi[design.predictor_slice(spec.param_index(m, 0))] = [np.log(rate)]
        else:
            _inner_adam(state, m, w, design.component_slice(m), cfg.inner_steps)

    for m in range(spec.n_components):
        j = spec.n_theta + m
        state.psi[design.predictor_slice(j)] = [np.log(pi[m])]


def _run_em(state, r, cfg):
    trace = []
    # The zero-coefficient starting state anchors the first relative-change
    # convergence check.
    ll_prev = -mixture.nll(state)
    status = "max_iter"
    for _ in range(cfg.max_iter):
        _m_step(state, r, cfg)
        ll = -mixture.nll(state)
        if not np.isfinite(ll):
            raise _RestartFailed("nonfinite")
        trace.append(ll)
        if np.isfinite(ll_prev) and abs(ll - ll_prev) < cfg.tol * abs(ll_prev):
            status = "converged"
            break
        ll_prev = ll
        r = mixture.responsibilities(state)
    return trace, status


def em_fit(spec: ModelSpec, frame, y, cfg: EmConfig, init_responsibilities=None) -> EmResult:
    """Fit by EM with random restarts; best restart by final log-likelihood.

    Restarts that hit a non-finite likelihood, a component collapse
    (min weight below ``collapse_tol``) or a singular weighted design are
    abandoned and recorded.  If every restart fails the result carries
    ``psi=None``.
    """
    _validate_spec(spec)
    base_state = build_state(spec, frame, y)
    n = base_state.design.n

    best = None
    statuses = []
    for restart in range(cfg.restarts):
        state = base_state.replace_psi(base_state.design.new_psi())
        if restart == 0 and init_responsibilities is not None:
            r = np.asarray(init_responsibilities, dtype=float)
        else:
            rng = np.random.default_rng(cfg.seed + restart)
            r = rng.dirichlet(np.ones(spec.n_components), size=n)
        try:
            trace, status = _run_em(state, r, cfg)
        except _RestartFailed as exc:
            statuses.append(exc.status)
            continue
        statuses.append(status)
        if best is None or trace[-1] > best[1][-1]:
            best = (state.psi.copy(), trace, status, restart)

    n_failed = sum(s in ("nonfinite", "collapse", "singular") for s in statuses)
    if best is None:
        return EmResult(
            psi=None,
            loglik_trace=np.array([]),
            status="failed",
            converged=False,
            restart=-1,
            n_failed_restarts=n_failed,
            restart_statuses=statuses,
        )
    psi, trace, status, restart = best
    return EmResult(
        psi=psi,
        loglik_trace=np.asarray(trace),
        status=status,
        converged=status == "converged",
        restart=restart,
        n_failed_restarts=n_failed,
        restart_statuses=statuses,
    )


def loglik_trace(result: EmResult):
    """Observed-data log-likelihood recorded after every EM iteration."""
    return np.asarray(result.loglik_trace)
