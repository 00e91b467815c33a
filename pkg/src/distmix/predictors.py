"""Additive predictor assembly.

A model is a list of components, each with one additive predictor per
distribution parameter, plus one gating predictor whose design is shared by
all mixture logits.  ``build_design`` turns a model specification and a data
frame into per-predictor design blocks together with the flat coefficient
layout used everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import splines
from .families import Family


@dataclass(frozen=True)
class SmoothSpec:
    """One smooth term: a single variable or a two-variable tensor product."""

    variables: tuple
    basis: splines.BasisConfig = field(default_factory=splines.BasisConfig)

    def __post_init__(self):
        variables = tuple(self.variables)
        object.__setattr__(self, "variables", variables)
        if not 1 <= len(variables) <= 2:
            raise ValueError("smooth terms take one or two variables")


@dataclass(frozen=True)
class PredictorSpec:
    """Structure of one additive predictor: intercept + linear + smooths."""

    intercept: bool = True
    linear: tuple = ()
    smooths: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "linear", tuple(self.linear))
        object.__setattr__(self, "smooths", tuple(self.smooths))
        smooth_vars = {v for s in self.smooths for v in s.variables}
        overlap = set(self.linear) & smooth_vars
        if overlap:
            raise ValueError(
                f"variables {sorted(overlap)} appear both as linear and smooth terms"
            )


@dataclass(frozen=True)
class ModelSpec:
    """Declarative mixture model: families, parameter predictors, gating."""

    families: tuple
    param_predictors: tuple
    gating: PredictorSpec = field(default_factory=PredictorSpec)
    entropy_weight: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "families", tuple(self.families))
        object.__setattr__(
            self, "param_predictors", tuple(tuple(p) for p in self.param_predictors)
        )
        if len(self.families) < 1:
            raise ValueError("need at least one mixture component")
        if len(self.param_predictors) != len(self.families):
            raise ValueError("one predictor tuple per component required")
        for fam, preds in zip(self.families, self.param_predictors):
            if not isinstance(fam, Family):
                raise TypeError("families must be Family instances")
            if len(preds) != fam.n_params:
                raise ValueError(
                    f"{fam.kind} needs {fam.n_params} predictors, got {len(preds)}"
                )
        if self.entropy_weight < 0:
            raise ValueError("entropy_weight must be non-negative")

    @property
    def n_components(self):
        return len(self.families)

    @property
    def n_theta(self):
        return sum(f.n_params for f in self.families)

    @property
    def n_predictors(self):
        return self.n_theta + self.n_components

    def param_index(self, component, param):
        """Flat predictor index of parameter ``param`` of ``component``."""
        return sum(f.n_params for f in self.families[:component]) + param

    def predictor_names(self):
        names = []
        for m, fam in enumerate(self.families):
            for pname in fam.param_names:
                names.append(f"c{m + 1}.{pname}")
        names.extend(f"gate{m + 1}" for m in range(self.n_components))
        return names


def _numeric_column(frame, var, context):
    if var not in frame.columns:
        raise KeyError(f"unknown column {var!r} in {context}")
    col = frame[var]
    if not pd.api.types.is_numeric_dtype(col):
        raise ValueError(f"column {var!r} in {context} must be numeric")
    values = col.to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"column {var!r} in {context} contains non-finite values")
    return values


class InterceptBlock:
    name = "intercept"
    penalty = None
    lam = 0.0

    def __init__(self, n):
        self.matrix = np.ones((n, 1))

    @property
    def width(self):
        return 1

    def evaluate(self, frame):
        return np.ones((len(frame), 1)), 0


class LinearBlock:
    """Linear columns; categorical variables are one-hot with the first level dropped."""

    penalty = None
    lam = 0.0

    def __init__(self, frame, variables, context):
        self.variables = tuple(variables)
        self.name = "linear(" + ",".join(self.variables) + ")"
        self._levels = {}
        columns = []
        self.column_names = []
        for var in self.variables:
            if var not in frame.columns:
                raise KeyError(f"unknown column {var!r} in {context}")
            col = frame[var]
            if pd.api.types.is_numeric_dtype(col):
                self._levels[var] = None
                columns.append(_numeric_column(frame, var, context)[:, None])
                self.column_names.append(var)
            else:
                levels = sorted(map(str, col.dropna().unique()))
                if len(levels) < 2:
                    raise ValueError(f"categorical column {var!r} needs two levels")
                self._levels[var] = levels
                encoded = np.column_stack(
                    [(col.astype(str) == lev).to_numpy(float) for lev in levels[1:]]
                )
                columns.append(encoded)
                self.column_names.extend(f"{var}={lev}" for lev in levels[1:])
        self.matrix = np.hstack(columns)

    @property
    def width(self):
        return self.matrix.shape[1]

    def evaluate(self, frame):
        columns = []
        for var in self.variables:
            if var not in frame.columns:
                raise KeyError(f"unknown column {var!r} in prediction data")
            levels = self._levels[var]
            col = frame[var]
            if levels is None:
                columns.append(col.to_numpy(dtype=float)[:, None])
            else:
                seen = set(map(str, col.dropna().unique()))
                unknown = seen - set(levels)
                if unknown:
                    raise ValueError(
                        f"column {var!r} has unseen levels {sorted(unknown)}"
                    )
                columns.append(
                    np.column_stack(
                        [(col.astype(str) == lev).to_numpy(float) for lev in levels[1:]]
                    )
                )
        return np.hstack(columns), 0


class SmoothBlock:
    """Penalized spline term (one variable) or tensor product (two variables)."""

    def __init__(self, frame, spec: SmoothSpec, context):
        self.variables = spec.variables
        self.degree = spec.basis.degree
        tag = "s" if len(self.variables) == 1 else "te"
        self.name = f"{tag}({','.join(self.variables)})"
        raws, self.knots = [], []
        for var in self.variables:
            x = _numeric_column(frame, var, context)
            try:
                raw, knots = splines.bspline_design(x, spec.basis)
            except ValueError as exc:
                raise ValueError(f"smooth term on {var!r} in {context}: {exc}") from exc
            raws.append(raw)
            self.knots.append(knots)
        pen_raw = splines.difference_penalty(spec.basis.num_basis, spec.basis.penalty_order)
        try:
            if len(raws) == 1:
                term = splines.apply_sum_to_zero(raws[0], pen_raw)
            else:
                term = splines.tensor_product(raws[0], pen_raw, raws[1], pen_raw)
        except ValueError as exc:
            raise ValueError(f"{self.name} in {context}: {exc}") from exc
        self.matrix = term.design
        self.penalty = term.penalty
        self.transform = term.transform
        if spec.basis.df is not None:
            self.lam = splines.lambda_for_df(term.design, term.penalty, spec.basis.df)
        else:
            self.lam = 0.0

    @property
    def width(self):
        return self.matrix.shape[1]

    def evaluate(self, frame):
        raws = []
        clamped = np.zeros(len(frame), dtype=bool)
        for var, knots in zip(self.variables, self.knots):
            x = _numeric_column(frame, var, "prediction data")
            clamped |= (x < knots[0]) | (x > knots[-1])
            raws.append(splines.bspline_design_from_knots(x, knots, self.degree))
        raw = raws[0] if len(raws) == 1 else splines.row_kronecker(raws[0], raws[1])
        return raw @ self.transform, int(clamped.sum())


def _build_blocks(frame, spec: PredictorSpec, context):
    blocks = []
    if spec.intercept:
        blocks.append(InterceptBlock(len(frame)))
    if spec.linear:
        blocks.append(LinearBlock(frame, spec.linear, context))
    for sm in spec.smooths:
        blocks.append(SmoothBlock(frame, sm, context))
    if not blocks:
        raise ValueError(f"{context} has no terms at all")
    return blocks


class DesignSet:
    """Evaluated designs for every predictor plus the coefficient layout.

    Coefficients are stored flat, predictor by predictor and term by term,
    so each predictor (and each component) owns a contiguous slice.  The
    gating predictors share their design blocks but have separate slices.
    """

    def __init__(self, spec: ModelSpec, frame: pd.DataFrame):
        if not isinstance(frame, pd.DataFrame):
            frame = pd.DataFrame(frame)
        self.spec = spec
        self.n = len(frame)
        if self.n < 1:
            raise ValueError("empty data frame")
        names = spec.predictor_names()
        self.predictor_names = names
        self.blocks = []
        for m, fam in enumerate(spec.families):
            for k in range(fam.n_params):
                context = names[spec.param_index(m, k)]
                self.blocks.append(_build_blocks(frame, spec.param_predictors[m][k], context))
        gating_blocks = _build_blocks(frame, spec.gating, "gating predictor")
        for _ in range(spec.n_components):
            self.blocks.append(gating_blocks)

        self.slices = []
        offset = 0
        for pred_blocks in self.blocks:
            pred_slices = []
            for block in pred_blocks:
                pred_slices.append(slice(offset, offset + block.width))
                offset += block.width
            self.slices.append(pred_slices)
        self.n_coef = offset
        self._pred_slice = [
            slice(s[0].start, s[-1].stop) for s in self.slices
        ]

    # -- layout ---------------------------------------------------------

    def predictor_slice(self, j):
        """Contiguous coefficient slice of predictor ``j``."""
        return self._pred_slice[j]

    def component_slice(self, m):
        """Contiguous slice over all parameter predictors of component ``m``."""
        spec = self.spec
        first = spec.param_index(m, 0)
        last = spec.param_index(m, spec.families[m].n_params - 1)
        return slice(self._pred_slice[first].start, self._pred_slice[last].stop)

    def new_psi(self):
        return np.zeros(self.n_coef)

    def unpack(self, psi):
        """Nested {predictor: {term: coefficients}} view of a flat vector."""
        psi = np.asarray(psi, dtype=float)
        if psi.shape != (self.n_coef,):
            raise ValueError(f"psi must have length {self.n_coef}")
        out = {}
        for name, pred_blocks, pred_slices in zip(
            self.predictor_names, self.blocks, self.slices
        ):
            out[name] = {
                block.name: psi[sl].copy() for block, sl in zip(pred_blocks, pred_slices)
            }
        return out

    def pack(self, nested):
        """Inverse of :meth:`unpack`."""
        psi = np.zeros(self.n_coef)
        for name, pred_blocks, pred_slices in zip(
            self.predictor_names, self.blocks, self.slices
        ):
            for block, sl in zip(pred_blocks, pred_slices):
                psi[sl] = np.asarray(nested[name][block.name], dtype=float)
        return psi

    # -- evaluation ------------------------------------------------------

    def eval_eta(self, psi, rows=None):
        """Predictor matrix, shape (n_predictors, batch size)."""
        psi = np.asarray(psi, dtype=float)
        if psi.shape != (self.n_coef,):
            raise ValueError(f"psi must have length {self.n_coef}")
        n_rows = self.n if rows is None else len(rows)
        eta = np.zeros((self.spec.n_predictors, n_rows))
        for j, (pred_blocks, pred_slices) in enumerate(zip(self.blocks, self.slices)):
            for block, sl in zip(pred_blocks, pred_slices):
                mat = block.matrix if rows is None else block.matrix[rows]
                eta[j] += mat @ psi[sl]
        return eta

    def backprop(self, d_eta, rows=None):
        """Chain rule: gradient w.r.t. psi from a gradient w.r.t. eta."""
        d_eta = np.asarray(d_eta, dtype=float)
        n_rows = self.n if rows is None else len(rows)
        if d_eta.shape != (self.spec.n_predictors, n_rows):
            raise ValueError("d_eta shape does not match the design")
        grad = np.zeros(self.n_coef)
        for j, (pred_blocks, pred_slices) in enumerate(zip(self.blocks, self.slices)):
            for block, sl in zip(pred_blocks, pred_slices):
                mat = block.matrix if rows is None else block.matrix[rows]
                grad[sl] += mat.T @ d_eta[j]
        return grad

    # -- penalties --------------------------------------------------------

    def penalty_value(self, psi):
        psi = np.asarray(psi, dtype=float)
        total = 0.0
        for pred_blocks, pred_slices in zip(self.blocks, self.slices):
            for block, sl in zip(pred_blocks, pred_slices):
                if block.penalty is not None and block.lam > 0:
                    gamma = psi[sl]
                    total += block.lam * float(gamma @ block.penalty @ gamma)
        return total

    def penalty_grad(self, psi):
        psi = np.asarray(psi, dtype=float)
        grad = np.zeros(self.n_coef)
        for pred_blocks, pred_slices in zip(self.blocks, self.slices):
            for block, sl in zip(pred_blocks, pred_slices):
                if block.penalty is not None and block.lam > 0:
                    grad[sl] += 2.0 * block.lam * (block.penalty @ psi[sl])
        return grad

    # -- prediction --------------------------------------------------------

    def evaluate_new(self, frame):
        """Design matrices for new rows; counts rows clamped into the knot range."""
        if not isinstance(frame, pd.DataFrame):
            frame = pd.DataFrame(frame)
        cache = {}
        per_predictor = []
        total_clamped = 0
        for pred_blocks in self.blocks:
            mats = []
            for block in pred_blocks:
                if id(block) not in cache:
                    mat, clamped = block.evaluate(frame)
                    cache[id(block)] = mat
                    total_clamped += clamped
                mats.append(cache[id(block)])
            per_predictor.append(mats)
        return per_predictor, total_clamped

    def eval_eta_new(self, psi, frame):
        """Predictor matrix on new data; returns (eta, clamped-row count)."""
        psi = np.asarray(psi, dtype=float)
        per_predictor, clamped = self.evaluate_new(frame)
        eta = np.zeros((self.spec.n_predictors, len(frame)))
        for j, (mats, pred_slices) in enumerate(zip(per_predictor, self.slices)):
            for mat, sl in zip(mats, pred_slices):
                eta[j] += mat @ psi[sl]
        return eta, clamped


def build_design(spec: ModelSpec, frame) -> DesignSet:
    """Evaluate all predictor designs of ``spec`` on a data frame."""
    return DesignSet(spec, frame)
