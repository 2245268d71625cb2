"""
Quantile transport between one-dimensional empirical distributions

A value c of the source distribution is mapped to the value at the same
quantile of the target: q = (#{s < c} + 0.5 * #{s == c}) / n, read off the
sorted target at position q * m - 0.5 (clamped, linearly interpolated).
This is the identity when target == source, clamps outside the source range
and is monotone in c.
"""

import logging
from typing import Tuple, Union

import numpy as np

from cddsalign.alignment.columns import ColumnDistributions
from cddsalign.core.errors import ContractError, DimensionError
from cddsalign.tensor.ops import emit
from cddsalign.tensor.tensor import ArrayLike, Tensor, as_tensor

logger = logging.getLogger(__name__)


def mid_quantiles(source_sorted: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Mid-rank empirical CDF of query values within a sorted source"""
    less = np.searchsorted(source_sorted, query, side="left")
    less_equal = np.searchsorted(source_sorted, query, side="right")
    return 0.5 * (less + less_equal) / source_sorted.size


def interpolation_positions(q: np.ndarray, m: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lower index, upper index and fraction of quantile q in a sorted sample of size m"""
    pos = np.clip(q * m - 0.5, 0.0, m - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, m - 1)
    return lo, hi, pos - lo


def quantile_transport(source: ArrayLike, query: ArrayLike, target: ArrayLike) -> np.ndarray:
    """
    Map query values, ranked within source, onto the target distribution.

    Args:
        source: Sample defining the ranks (sorted internally)
        query: Values to transport
        target: Sample to read values from (sorted internally)

    Returns:
        Transported values, same shape as query
    """
    source = np.sort(np.asarray(source, dtype=np.float64).ravel())
    target = np.sort(np.asarray(target, dtype=np.float64).ravel())
    query = np.asarray(query, dtype=np.float64)
    if source.size == 0 or target.size == 0:
        raise ContractError("quantile_transport needs non-empty source and target")
    lo, hi, frac = interpolation_positions(mid_quantiles(source, query), target.size)
    return target[lo] * (1.0 - frac) + target[hi] * frac


def _column_quantiles(values: np.ndarray) -> np.ndarray:
    """Mid-rank quantile of every entry within its own column"""
    ordered = np.sort(values, axis=0)
    q = np.empty_like(values)
    for i in range(values.shape[1]):
        q[:, i] = mid_quantiles(ordered[:, i], values[:, i])
    return q


def build_x_semantic(semantic: ArrayLike, target: Union[Tensor, ColumnDistributions],
                     weights: ArrayLike) -> Tensor:
    """
    Re-express a semantic component in the other modality's distributions.

    Column i of the result is sum_j weights[i, j] * transport(column i of
    semantic onto target column j), row by row. Ranks come from the detached
    semantic values; gradients reach the target values and the weights.

    Args:
        semantic: (n, d_src) pooled semantic rows of one modality
        target: (m, d_tgt) pooled semantic rows of the other modality, or their
            ColumnDistributions (treated as constants)
        weights: (d_src, d_tgt) sparsified correlation weights

    Returns:
        (n, d_src) x-semantic rows aligned index-wise with semantic
    """
    source = semantic.data if isinstance(semantic, Tensor) else np.asarray(semantic, dtype=np.float64)
    weights = as_tensor(weights)
    if isinstance(target, ColumnDistributions):
        if target.raw_values is None:
            raise ContractError("target distributions carry no raw values")
        target_values, order, target_tensor = target.raw_values, None, None
    else:
        target_tensor = as_tensor(target)
        order = np.argsort(target_tensor.data, axis=0, kind="stable")
        target_values = np.take_along_axis(target_tensor.data, order, axis=0)

    if source.ndim != 2 or target_values.ndim != 2:
        raise DimensionError(f"expected 2-D rows, got {source.shape} and {target_values.shape}")
    n, d_src = source.shape
    m, d_tgt = target_values.shape
    if weights.shape != (d_src, d_tgt):
        raise DimensionError(f"weights must have shape {(d_src, d_tgt)}, got {weights.shape}")
    if n == 0 or m == 0:
        raise ContractError("build_x_semantic needs non-empty source and target")

    lo, hi, frac = interpolation_positions(_column_quantiles(source), m)
    columns = np.arange(d_src)
    # projected[k, i]: sorted target row k mixed by correlation row i; transport is linear in it
    projected = target_values @ weights.data.T
    value = projected[lo, columns] * (1.0 - frac) + projected[hi, columns] * frac

    def row_loads(g):
        """(m, d_src) gradient mass landing on each sorted target row, per source column"""
        size = m * d_src
        loads = np.bincount((lo * d_src + columns).ravel(), weights=(g * (1.0 - frac)).ravel(), minlength=size)
        loads += np.bincount((hi * d_src + columns).ravel(), weights=(g * frac).ravel(), minlength=size)
        return loads.reshape(m, d_src)

    def vjp(g):
        loads = row_loads(g)
        g_weights = loads.T @ target_values
        if target_tensor is None:
            return (g_weights,)
        g_sorted = loads @ weights.data
        g_target = np.empty_like(g_sorted)
        np.put_along_axis(g_target, order, g_sorted, axis=0)
        return (g_weights, g_target)

    inputs = (weights,) if target_tensor is None else (weights, target_tensor)
    return emit("build_x_semantic", inputs, value, vjp)
