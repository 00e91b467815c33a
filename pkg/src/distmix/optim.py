"""Mini-batch first-order fitting with adaptive learning-rate methods.

Implements plain SGD, RMSprop, Adam and Adadelta together with Xavier
uniform initialization, an optional cyclic learning-rate schedule,
validation-based early stopping and random restarts.  A fit is fully
deterministic given its seed and configuration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import mixture
from .mixture import MixtureState

DEFAULT_LEARNING_RATES = {
    "sgd": 0.01,
    "rmsprop": 0.001,
    "adam": 0.001,
    "adadelta": 1.0,
}


@dataclass(frozen=True)
class CyclicLR:
    """Triangular learning-rate cycle between ``base`` and ``max_lr``."""

    base: float
    max_lr: float
    period: int

    def __post_init__(self):
        if not 0 < self.base <= self.max_lr:
            raise ValueError("need 0 < base <= max_lr")
        if self.period < 2:
            raise ValueError("period must be at least 2 steps")

    def at(self, step):
        phase = (step % self.period) / self.period
        return self.base + (self.max_lr - self.base) * (1.0 - abs(2.0 * phase - 1.0))


@dataclass(frozen=True)
class OptimConfig:
    method: str = "adam"
    learning_rate: float | None = None
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 50
    val_fraction: float = 0.1
    restarts: int = 1
    seed: int = 0
    cyclic_lr: CyclicLR | None = None

    def __post_init__(self):
        if self.method not in DEFAULT_LEARNING_RATES:
            raise ValueError(
                f"unknown method {self.method!r}; choose from {sorted(DEFAULT_LEARNING_RATES)}"
            )
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if min(self.batch_size, self.max_epochs, self.restarts) < 1 or self.patience < 0:
            raise ValueError("batch_size, max_epochs, restarts >= 1 and patience >= 0")
        if not 0.0 < self.val_fraction < 0.5:
            raise ValueError("val_fraction must lie in (0, 0.5)")

    @property
    def resolved_learning_rate(self):
        if self.learning_rate is not None:
            return self.learning_rate
        return DEFAULT_LEARNING_RATES[self.method]


@dataclass
class FitResult:
    psi: np.ndarray | None
    train_trace: np.ndarray
    val_trace: np.ndarray
    best_epoch: int
    best_val: float
    restart: int
    diverged: bool
    n_diverged_restarts: int
    wall_time: float

    @property
    def ok(self):
        return self.psi is not None


class Sgd:
    def __init__(self, n):
        pass

    def step(self, psi, grad, lr):
        return psi - lr * grad


class RmsProp:
    decay = 0.9
    eps = 1e-7

    def __init__(self, n):
        self.sq = np.zeros(n)

    def step(self, psi, grad, lr):
        self.sq = self.decay * self.sq + (1.0 - self.decay) * grad * grad
        return psi - lr * grad / (np.sqrt(self.sq) + self.eps)


class Adam:
    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-7

    def __init__(self, n):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, psi, grad, lr):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return psi - lr * m_hat / (np.sqrt(v_hat) + self.eps)


class Adadelta:
    decay = 0.95
    eps = 1e-7

    def __init__(self, n):
        self.sq_grad = np.zeros(n)
        self.sq_delta = np.zeros(n)

    def step(self, psi, grad, lr):
        self.sq_grad = self.decay * self.sq_grad + (1.0 - self.decay) * grad * grad
        delta = -np.sqrt(self.sq_delta + self.eps) / np.sqrt(self.sq_grad + self.eps) * grad
        self.sq_delta = self.decay * self.sq_delta + (1.0 - self.decay) * delta * delta
        return psi + lr * delta


_OPTIMIZERS = {"sgd": Sgd, "rmsprop": RmsProp, "adam": Adam, "adadelta": Adadelta}


def make_optimizer(method, n):
    return _OPTIMIZERS[method](n)


def xavier_init(design, rng):
    """Uniform(-a, a) per term with a = sqrt(6 / (width + 1)).

    Intercepts are drawn like any other width-1 term: they play the role of
    a weight on a constant input, and zero-initializing them would start
    structurally identical mixture components on an exactly symmetric
    manifold that gradient updates can never leave.
    """
    psi = np.zeros(design.n_coef)
    for pred_blocks, pred_slices in zip(design.blocks, design.slices):
        for block, sl in zip(pred_blocks, pred_slices):
            bound = np.sqrt(6.0 / (block.width + 1.0))
            psi[sl] = rng.uniform(-bound, bound, size=block.width)
    return psi


def train_val_split(n, val_fraction, seed):
    """Seeded shuffle split into (train rows, validation rows)."""
    perm = np.random.default_rng(seed).permutation(n)
    n_val = max(1, int(round(val_fraction * n)))
    if n_val >= n:
        raise ValueError("validation split leaves no training rows")
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _standardization(state):
    """Response shift/scale for internal standardization, or None.

    Only applies when every component is a location-scale family whose
    location and scale predictors carry intercepts; then standardizing the
    response is an exact affine reparameterization of the coefficients, and
    it puts the data on the scale the initialization assumes.
    """
    spec = state.spec
    for m, fam in enumerate(spec.families):
        if fam.param_names != ("location", "scale"):
            return None
        loc_pred, scale_pred = spec.param_predictors[m][:2]
        if not (loc_pred.intercept and scale_pred.intercept):
            return None
    scale = float(np.std(state.y))
    if not np.isfinite(scale) or scale <= 0:
        return None
    return float(np.mean(state.y)), scale


def _psi_to_original(design, psi, shift, scale):
    psi = psi.copy()
    spec = design.spec
    for m in range(spec.n_components):
        j_loc = spec.param_index(m, 0)
        psi[design.predictor_slice(j_loc)] *= scale
        psi[design.slices[j_loc][0]] += shift
        j_scale = spec.param_index(m, 1)
        psi[design.slices[j_scale][0]] += np.log(scale)
    return psi


def _psi_to_internal(design, psi, shift, scale):
    psi = psi.copy()
    spec = design.spec
    for m in range(spec.n_components):
        j_loc = spec.param_index(m, 0)
        psi[design.slices[j_loc][0]] -= shift
        psi[design.predictor_slice(j_loc)] /= scale
        j_scale = spec.param_index(m, 1)
        psi[design.slices[j_scale][0]] -= np.log(scale)
    return psi


def _run_restart(state, cfg, restart, train_rows, val_rows, psi0=None):
    rng = np.random.default_rng(cfg.seed + restart)
    psi = xavier_init(state.design, rng) if psi0 is None else psi0.copy()
    opt = make_optimizer(cfg.method, state.design.n_coef)
    base_lr = cfg.resolved_learning_rate

    best_psi = psi.copy()
    best_val = np.inf
    best_epoch = 0
    train_trace, val_trace = [], []
    step_count = 0
    no_improve = 0

    work = state.replace_psi(psi)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(train_rows)
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            grad = mixture.gradient(work, batch)
            if not np.all(np.isfinite(grad)):
                return None, train_trace, val_trace
            lr = base_lr if cfg.cyclic_lr is None else cfg.cyclic_lr.at(step_count)
            work.psi = opt.step(work.psi, grad, lr)
            step_count += 1
        train_obj = mixture.objective(work, train_rows)
        val_obj = mixture.objective(work, val_rows)
        if not (np.isfinite(train_obj) and np.isfinite(val_obj)):
            return None, train_trace, val_trace
        train_trace.append(train_obj)
        val_trace.append(val_obj)
        if val_obj < best_val:
            best_val = val_obj
            best_psi = work.psi.copy()
            best_epoch = epoch
            no_improve = 0
        else:
            no_improve += 1
        if no_improve >= cfg.patience:
            break
    return (best_psi, best_val, best_epoch), train_trace, val_trace


def fit(state: MixtureState, cfg: OptimConfig, warm_start=None) -> FitResult:
    """Fit by mini-batch gradient descent with early stopping and restarts.

    The best coefficient snapshot across all epochs of all restarts, judged
    by the validation objective, is returned.  A restart that encounters a
    non-finite gradient or objective is abandoned and counted; if every
    restart diverges the result carries ``psi=None`` and ``diverged=True``.

    ``warm_start`` replaces the random restarts with a single continuation
    run from the given coefficients.
    """
    start_time = time.perf_counter()
    n = state.design.n
    if n < 2 * cfg.batch_size:
        import warnings

        warnings.warn(
            f"batch_size {cfg.batch_size} is large for n={n}; consider reducing it",
            stacklevel=2,
        )
    train_rows, val_rows = train_val_split(n, cfg.val_fraction, cfg.seed)

    std = _standardization(state)
    if std is not None:
        shift, scale = std
        work = MixtureState(
            state.spec, state.design, (state.y - shift) / scale, state.psi
        )
    else:
        work = state

    if warm_start is not None:
        psi0 = np.asarray(warm_start, dtype=float)
        if std is not None:
            psi0 = _psi_to_internal(state.design, psi0, shift, scale)
        starts = [(0, psi0)]
    else:
        starts = [(restart, None) for restart in range(cfg.restarts)]

    best = None
    best_traces = ([], [])
    best_restart = -1
    n_diverged = 0
    for restart, psi0 in starts:
        outcome, train_trace, val_trace = _run_restart(
            work, cfg, restart, train_rows, val_rows, psi0=psi0
        )
        if outcome is None:
            n_diverged += 1
            continue
        if best is None or outcome[1] < best[1]:
            best = outcome
            best_traces = (train_trace, val_trace)
            best_restart = restart
    wall = time.perf_counter() - start_time
    if best is None:
        return FitResult(
            psi=None,
            train_trace=np.array([]),
            val_trace=np.array([]),
            best_epoch=0,
            best_val=np.nan,
            restart=-1,
            diverged=True,
            n_diverged_restarts=n_diverged,
            wall_time=wall,
        )
    psi, best_val, best_epoch = best
    if std is not None:
        psi = _psi_to_original(state.design, psi, shift, scale)
    return FitResult(
        psi=psi,
        train_trace=np.asarray(best_traces[0]),
        val_trace=np.asarray(best_traces[1]),
        best_epoch=best_epoch,
        best_val=best_val,
        restart=best_restart,
        diverged=False,
        n_diverged_restarts=n_diverged,
        wall_time=wall,
    )
