"""
Related-semantics identification

correlation_matrix scores every (image column, text column) pair by
exp(-KL) of their distributions. sparsify keeps, per row (or column), the
entries whose sigmoid probability exceeds an adaptive threshold
mu + alpha * theta and renormalizes them.
"""

import logging
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
from scipy import sparse, special

from cddsalign.alignment.columns import ColumnDistributions, bin_counts, smooth
from cddsalign.core.errors import ContractError, DimensionError
from cddsalign.tensor.ops import emit
from cddsalign.tensor.tensor import ArrayLike, Tensor

logger = logging.getLogger(__name__)

Axis = Literal["row", "column"]


def kl_divergence(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """KL(p || q) over the last axis"""
    return special.rel_entr(p, q).sum(axis=-1)


def correlation_matrix(c_v: ColumnDistributions, c_t: ColumnDistributions,
                       rows: Optional[Sequence[int]] = None,
                       cols: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    S[i, j] = exp(-KL(C_v[i] || C_t[j])).

    With raw values on both sides each pair is re-binned over the union of
    the two column ranges before comparing; hand-built histograms are compared
    bin for bin.

    Args:
        c_v: Image column distributions
        c_t: Text column distributions
        rows: Optional subset of image columns
        cols: Optional subset of text columns

    Returns:
        (len(rows), len(cols)) matrix with entries in (0, 1]
    """
    if c_v.n_bins != c_t.n_bins:
        raise ContractError(f"bin counts differ: {c_v.n_bins} vs {c_t.n_bins}")
    rows = np.arange(c_v.d) if rows is None else np.asarray(rows, dtype=np.int64)
    cols = np.arange(c_t.d) if cols is None else np.asarray(cols, dtype=np.int64)
    n_bins = c_v.n_bins

    if c_v.raw_values is None or c_t.raw_values is None:
        kl = kl_divergence(c_v.probabilities[rows][:, None, :], c_t.probabilities[cols][None, :, :])
        return np.exp(-kl)

    t_values = c_t.raw_values[:, cols]
    t_low, t_high = c_t.low[cols], c_t.high[cols]
    out = np.empty((rows.size, cols.size))
    for r, i in enumerate(rows):
        low = np.minimum(c_v.low[i], t_low)
        high = np.maximum(c_v.high[i], t_high)
        v_column = np.broadcast_to(c_v.raw_values[:, i:i + 1], (c_v.n_rows, cols.size))
        p = smooth(bin_counts(v_column, low, high, n_bins), c_v.smoothing)
        q = smooth(bin_counts(t_values, low, high, n_bins), c_t.smoothing)
        out[r] = np.exp(-kl_divergence(p, q))
    return out


@dataclass
class SparseSelection:
    """
    Attributes:
        probabilities: sigmoid(S)
        thresholds: k per row (or per column for axis="column")
        mask: binary retention mask, same shape as S
        weights: retained S values renormalized along the selection axis
        fallback: indices of rows (columns) that kept only their argmax
        spread: population std theta of p per row (column)
    """
    probabilities: np.ndarray
    thresholds: np.ndarray
    mask: np.ndarray
    weights: np.ndarray
    fallback: np.ndarray
    spread: np.ndarray

    def as_sparse(self) -> sparse.csr_matrix:
        return sparse.csr_matrix(self.weights)


def _row_statistics(p: np.ndarray):
    mu = p.mean(axis=1)
    theta = p.std(axis=1)
    tied = np.ptp(p, axis=1) == 0
    mu = np.where(tied, p[:, 0], mu)
    theta = np.where(tied, 0.0, theta)
    return mu, theta


def _sparsify_rows(s: np.ndarray, alpha: np.ndarray) -> SparseSelection:
    p = special.expit(s)
    mu, theta = _row_statistics(p)
    k = mu + alpha * theta
    mask = p > k[:, None]
    empty = ~mask.any(axis=1)
    if np.any(empty):
        mask[empty, np.argmax(p[empty], axis=1)] = True
    kept = np.where(mask, s, 0.0)
    weights = kept / kept.sum(axis=1, keepdims=True)
    return SparseSelection(p, k, mask.astype(np.float64), weights, np.flatnonzero(empty), theta)


def sparsify(s: np.ndarray, alpha: ArrayLike, axis: Axis = "row") -> SparseSelection:
    """
    Threshold the correlation matrix per row (axis="row", image side) or per
    column (axis="column", text side).

    p = sigmoid(s); k_i = mean(p_i) + alpha_i * std(p_i); entries with p > k
    are kept. A row that keeps nothing keeps its argmax. Kept s values are
    divided by their sum.
    """
    s = np.asarray(s, dtype=np.float64)
    alpha = alpha.data if isinstance(alpha, Tensor) else np.asarray(alpha, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionError(f"sparsify needs a square matrix, got {s.shape}")
    if alpha.shape != (s.shape[0],):
        raise DimensionError(f"alpha must have shape ({s.shape[0]},), got {alpha.shape}")
    if not np.all(np.isfinite(alpha)):
        raise ContractError("alpha must be finite")
    if axis == "row":
        selection = _sparsify_rows(s, alpha)
    elif axis == "column":
        rows = _sparsify_rows(s.T, alpha)
        selection = SparseSelection(rows.probabilities.T, rows.thresholds, rows.mask.T,
                                    rows.weights.T, rows.fallback, rows.spread)
    else:
        raise ContractError(f"axis must be 'row' or 'column', got {axis!r}")
    if selection.fallback.size:
        logger.debug(f"sparsify({axis}): argmax fallback on {selection.fallback.size} lines")
    return selection


def gated_weights(s: np.ndarray, alpha: Tensor, axis: Axis = "row",
                  temperature: float = 0.1) -> Tensor:
    """
    Sparsified weights as a tape tensor whose value is the hard selection and
    whose gradient reaches alpha through the relaxed gate
    sigmoid((p - k) / temperature).

    The value never depends on the relaxation; only alpha's gradient does.
    """
    selection = sparsify(s, alpha, axis)
    lines = s if axis == "row" else s.T
    p = special.expit(lines)
    k = selection.thresholds
    theta = selection.spread
    gate = special.expit((p - k[:, None]) / temperature)
    u = lines * gate
    z = u.sum(axis=1, keepdims=True)
    relaxed = u / z
    value = selection.weights

    def vjp(g):
        g_lines = g if axis == "row" else g.T
        g_u = (g_lines - np.sum(g_lines * relaxed, axis=1, keepdims=True)) / z
        d_u = lines * gate * (1.0 - gate) * (-theta[:, None] / temperature)
        return (np.sum(g_u * d_u, axis=1),)
    return emit("gated_weights", (alpha,), value, vjp)


@dataclass
class CorrelationState:
    """
    Everything derived from one correlation computation.

    Attributes:
        s: (d, d) correlation matrix
        image: row-wise selection (K_v, B_v, S_v)
        text: column-wise selection (K_t, B_t, S_t)
    """
    s: np.ndarray
    image: SparseSelection
    text: SparseSelection

    @classmethod
    def from_matrix(cls, s: np.ndarray, alpha_v: ArrayLike, alpha_t: ArrayLike) -> "CorrelationState":
        return cls(s, sparsify(s, alpha_v, "row"), sparsify(s, alpha_t, "column"))
