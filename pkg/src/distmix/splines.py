"""Penalized spline building blocks.

Cubic B-spline bases on equally spaced knots paired with difference
penalties, sum-to-zero reparameterization, row-wise tensor products, and
calibration of the smoothing weight to a target effective degrees of
freedom.  Everything here is a pure construction function; the resulting
arrays are never mutated afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline


@dataclass(frozen=True)
class BasisConfig:
    """Size and penalty settings for one smooth term.

    ``df`` is the target effective degrees of freedom used to calibrate the
    smoothing weight; leave it unset for an unpenalized term.
    """

    num_basis: int = 10
    degree: int = 3
    penalty_order: int = 2
    df: float | None = None

    def __post_init__(self):
        if self.num_basis <= self.degree + 1:
            raise ValueError("num_basis must exceed degree + 1")
        if not 0 < self.penalty_order < self.num_basis:
            raise ValueError("penalty_order must be in (0, num_basis)")
        if self.df is not None and self.df <= 0:
            raise ValueError("df must be positive")


def bspline_knots(lo, hi, num_basis, degree):
    """Clamped, equally spaced knot vector covering [lo, hi]."""
    if not hi > lo:
        raise ValueError("degenerate variable: max must exceed min")
    inner = np.linspace(lo, hi, num_basis - degree + 1)
    return np.concatenate([np.full(degree, lo), inner, np.full(degree, hi)])


def bspline_design_from_knots(x, knots, degree):
    """Evaluate the basis at ``x``; values outside the knot range are clamped."""
    x = np.asarray(x, dtype=float)
    clipped = np.clip(x, knots[0], knots[-1])
    return BSpline.design_matrix(clipped, knots, degree, extrapolate=False).toarray()


def bspline_design(x, cfg: BasisConfig):
    """Raw n x num_basis design on equally spaced knots over the data range.

    Returns the design matrix and the knot vector used to build it.
    """
    x = np.asarray(x, dtype=float)
    if x.size < cfg.num_basis:
        raise ValueError(
            f"need at least {cfg.num_basis} observations to build the basis, got {x.size}"
        )
    knots = bspline_knots(float(x.min()), float(x.max()), cfg.num_basis, cfg.degree)
    return bspline_design_from_knots(x, knots, cfg.degree), knots


def difference_penalty(num_basis, order):
    """Quadratic penalty D'D from the order-th difference operator."""
    if order >= num_basis:
        raise ValueError("difference order must be smaller than num_basis")
    d = np.diff(np.eye(num_basis), order, axis=0)
    return d.T @ d


def sum_to_zero_transform(col_sums):
    """Orthonormal basis of the nullspace of the column-sum constraint."""
    c = np.asarray(col_sums, dtype=float).reshape(-1, 1)
    q, _ = np.linalg.qr(c, mode="complete")
    return q[:, 1:]


@dataclass
class ConstrainedTerm:
    """A smooth term after the sum-to-zero reparameterization."""

    design: np.ndarray
    penalty: np.ndarray
    transform: np.ndarray
    lam: float = 0.0


def apply_sum_to_zero(design_raw, penalty_raw):
    """Reparameterize so the fitted term sums to zero over the training rows."""
    design_raw = np.asarray(design_raw, dtype=float)
    transform = sum_to_zero_transform(design_raw.sum(axis=0))
    design = design_raw @ transform
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise ValueError("rank-deficient smooth design after constraint")
    penalty = transform.T @ np.asarray(penalty_raw, dtype=float) @ transform
    penalty = 0.5 * (penalty + penalty.T)
    return ConstrainedTerm(design=design, penalty=penalty, transform=transform)


def row_kronecker(a, b):
    """Row-wise Kronecker product of two designs on the same rows."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[0] != b.shape[0]:
        raise ValueError("marginal designs must share their rows")
    return np.einsum("ij,ik->ijk", a, b).reshape(a.shape[0], -1)


def tensor_product(design_a, penalty_a, design_b, penalty_b):
    """Two-way tensor smooth: Kronecker design, isotropic summed penalty."""
    raw = row_kronecker(design_a, design_b)
    ia = np.eye(np.asarray(design_a).shape[1])
    ib = np.eye(np.asarray(design_b).shape[1])
    penalty = np.kron(penalty_a, ib) + np.kron(ia, penalty_b)
    return apply_sum_to_zero(raw, penalty)


def _whitened_penalty_spectrum(design, penalty):
    """Eigenvalues of (Z'Z)^(-1/2) P (Z'Z)^(-1/2); the df workhorse."""
    gram = design.T @ design
    vals, vecs = np.linalg.eigh(gram)
    if vals[0] <= 0 or vals[0] / vals[-1] < 1e-13:
        raise ValueError("rank-deficient smooth design, cannot calibrate df")
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.T
    m = inv_sqrt @ penalty @ inv_sqrt
    spec = np.linalg.eigvalsh(0.5 * (m + m.T))
    # Penalty nullspace eigenvalues come back as float noise; flush them to
    # zero so the infinite-smoothing limit is exact.
    spec[spec < spec.max() * 1e-10] = 0.0
    return np.clip(spec, 0.0, None)


def df_for_lambda(design, penalty, lam):
    """Effective degrees of freedom trace(Z (Z'Z + lam P)^-1 Z')."""
    spec = _whitened_penalty_spectrum(design, penalty)
    return float(np.sum(1.0 / (1.0 + lam * spec)))


def lambda_for_df(design, penalty, df_target, tol=1e-6, max_iter=60):
    """Smoothing weight whose hat-matrix trace hits ``df_target``.

    Bisection on log10(lambda) over [-12, 12]; each step costs only a sum over
    the precomputed whitened-penalty spectrum.
    """
    spec = _whitened_penalty_spectrum(design, penalty)

    def df_at(log_lam):
        return float(np.sum(1.0 / (1.0 + 10.0**log_lam * spec)))

    lo, hi = -12.0, 12.0
    df_max, df_min = df_at(lo), df_at(hi)
    if not df_min - tol <= df_target <= df_max + tol:
        raise ValueError(
            f"df target {df_target} outside attainable range "
            f"[{df_min:.6f}, {df_max:.6f}]"
        )
    if abs(df_max - df_target) <= tol:
        return 10.0**lo
    if abs(df_min - df_target) <= tol:
        return 10.0**hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        df_mid = df_at(mid)
        if abs(df_mid - df_target) < tol:
            return 10.0**mid
        if df_mid > df_target:
            lo = mid
        else:
            hi = mid
    raise RuntimeError("df calibration did not converge within max_iter bisections")
