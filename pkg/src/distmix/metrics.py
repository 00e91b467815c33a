"""Evaluation metrics with label-switching handling.

Mixture component labels are arbitrary, so the non-label-invariant metrics
(accuracy, coefficient RMSE, weight RMSE) first align estimated components
to the true ones through the accuracy-optimal assignment, solved exactly as
a linear assignment problem.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import mixture


def confusion_matrix(true_labels, est_labels, n_true=None, n_est=None):
    """Counts[t, e] of observations with true label t and estimated label e."""
    true_labels = np.asarray(true_labels, dtype=int)
    est_labels = np.asarray(est_labels, dtype=int)
    if true_labels.shape != est_labels.shape or true_labels.size == 0:
        raise ValueError("label vectors must be non-empty and equally long")
    n_true = int(true_labels.max()) + 1 if n_true is None else n_true
    n_est = int(est_labels.max()) + 1 if n_est is None else n_est
    counts = np.zeros((n_true, n_est), dtype=int)
    np.add.at(counts, (true_labels, est_labels), 1)
    return counts


def _lexmin_max_assignment(score):
    """Max-trace assignment; ties broken by the lexicographically smallest map.

    Returns ``perm`` with perm[column] = assigned row, for a square score
    matrix.  After solving for the optimal value, columns are fixed one by
    one to their smallest row index that still allows an optimal completion.
    """
    score = np.asarray(score, dtype=float)
    m = score.shape[0]

    def best_value(mat):
        rows, cols = linear_sum_assignment(-mat)
        return mat[rows, cols].sum()

    target = best_value(score)
    free_rows = list(range(m))
    perm = np.empty(m, dtype=int)
    fixed = 0.0
    for col in range(m):
        for row in sorted(free_rows):
            remaining_rows = [r for r in free_rows if r != row]
            sub = score[np.ix_(remaining_rows, range(col + 1, m))]
            rest = best_value(sub) if sub.size else 0.0
            if math.isclose(fixed + score[row, col] + rest, target, abs_tol=1e-9):
                perm[col] = row
                fixed += score[row, col]
                free_rows.remove(row)
                break
        else:
            raise RuntimeError("assignment bookkeeping failed")
    return perm


def optimal_assignment(true_labels, est_labels):
    """Map estimated labels onto true labels, maximizing the matched count.

    Returns an integer array ``perm`` where ``perm[e]`` is the true label
    assigned to estimated label ``e``.  When the estimated side has more
    labels than the true side, the surplus maps onto dummy true labels that
    can never match.
    """
    counts = confusion_matrix(true_labels, est_labels)
    n_true, n_est = counts.shape
    size = max(n_true, n_est)
    padded = np.zeros((size, size))
    padded[:n_true, :n_est] = counts
    return _lexmin_max_assignment(padded)[:n_est]


def accuracy(true_labels, est_labels):
    """Fraction of matches under the accuracy-optimal labeling."""
    counts = confusion_matrix(true_labels, est_labels)
    perm = optimal_assignment(true_labels, est_labels)
    matched = sum(
        counts[perm[e], e] for e in range(counts.shape[1]) if perm[e] < counts.shape[0]
    )
    return matched / counts.sum()


def adjusted_rand_index(true_labels, est_labels):
    """Chance-corrected partition agreement (Hubert-Arabie form)."""
    counts = confusion_matrix(true_labels, est_labels)
    n = counts.sum()
    if n < 2:
        raise ValueError("need at least two observations")

    def comb2(v):
        return v * (v - 1) / 2.0

    sum_ij = comb2(counts.astype(float)).sum()
    a = comb2(counts.sum(axis=1).astype(float)).sum()
    b = comb2(counts.sum(axis=0).astype(float)).sum()
    total = comb2(float(n))
    expected = a * b / total
    denom = 0.5 * (a + b) - expected
    if denom == 0.0:
        # Both sides are a single cluster: identical partitions by definition.
        return 1.0
    return float((sum_ij - expected) / denom)


def coefficient_rmse(design, psi_true, psi_est, perm):
    """RMSE over component-parameter coefficients after label alignment.

    ``perm[e]`` gives the true component matched to estimated component
    ``e``; estimated components mapped to dummy labels (perm value >= the
    true component count) are skipped.  Gating coefficients are excluded;
    compare those on the weight scale via :func:`weight_rmse`.
    """
    psi_true = np.asarray(psi_true, dtype=float)
    psi_est = np.asarray(psi_est, dtype=float)
    m_total = design.spec.n_components
    diffs = []
    for e, t in enumerate(perm):
        if t >= m_total:
            continue
        diffs.append(psi_est[design.component_slice(e)] - psi_true[design.component_slice(t)])
    if not diffs:
        raise ValueError("no aligned components to compare")
    stacked = np.concatenate(diffs)
    return float(np.sqrt(np.mean(stacked**2)))


def weight_rmse(pi_true, pi_est, perm):
    """RMSE between mixture weights after alignment; surplus components
    are compared against a true weight of zero."""
    pi_true = np.asarray(pi_true, dtype=float)
    pi_est = np.asarray(pi_est, dtype=float)
    aligned_true = np.array(
        [pi_true[t] if t < pi_true.size else 0.0 for t in perm]
    )
    return float(np.sqrt(np.mean((pi_est - aligned_true) ** 2)))


def brute_force_assignment(counts):
    """Reference max-trace assignment by permutation enumeration (tests)."""
    counts = np.asarray(counts, dtype=float)
    size = counts.shape[0]
    best_perm, best_val = None, -np.inf
    for rows in itertools.permutations(range(size)):
        val = counts[list(rows), range(size)].sum()
        if val > best_val:
            best_val, best_perm = val, np.array(rows)
    return best_perm, best_val


def predictive_log_score(state, frame, y):
    """Mean held-out log density; comparable across test-set sizes."""
    return float(np.mean(mixture.predict_log_density(state, frame, y)))
