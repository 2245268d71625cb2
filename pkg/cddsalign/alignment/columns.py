"""
Per-column empirical distributions
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from cddsalign.core.errors import ContractError, DimensionError
from cddsalign.tensor.tensor import ArrayLike, Tensor

logger = logging.getLogger(__name__)

DEFAULT_BINS = 32
RANGE_PADDING = 1e-9
SMOOTHING = 1e-6


@dataclass
class ColumnDistributions:
    """
    One smoothed histogram per feature column.

    Attributes:
        bin_edges: (d, B+1) edges, spanning each column's padded [min, max]
        probabilities: (d, B) smoothed bin probabilities, each row sums to 1
        raw_values: (n, d) column values sorted ascending, or None for
            hand-built histograms
    """
    bin_edges: np.ndarray
    probabilities: np.ndarray
    raw_values: Optional[np.ndarray] = None
    smoothing: float = SMOOTHING

    @property
    def d(self) -> int:
        return self.probabilities.shape[0]

    @property
    def n_bins(self) -> int:
        return self.probabilities.shape[1]

    @property
    def n_rows(self) -> int:
        return 0 if self.raw_values is None else self.raw_values.shape[0]

    @property
    def low(self) -> np.ndarray:
        return self.bin_edges[:, 0]

    @property
    def high(self) -> np.ndarray:
        return self.bin_edges[:, -1]

    def column(self, i: int) -> np.ndarray:
        if self.raw_values is None:
            raise ContractError("histogram was built without raw values")
        return self.raw_values[:, i]

    @classmethod
    def from_probabilities(cls, probabilities: np.ndarray,
                           bin_edges: Optional[np.ndarray] = None) -> "ColumnDistributions":
        """Wrap hand-built histograms (no raw values, unit range unless edges are given)"""
        probabilities = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
        if np.any(probabilities <= 0):
            raise ContractError("histogram probabilities must be strictly positive")
        probabilities = probabilities / probabilities.sum(axis=1, keepdims=True)
        if bin_edges is None:
            bin_edges = np.tile(np.linspace(0.0, 1.0, probabilities.shape[1] + 1), (probabilities.shape[0], 1))
        return cls(np.asarray(bin_edges, dtype=np.float64), probabilities)


def bin_counts(values: np.ndarray, low: np.ndarray, high: np.ndarray, n_bins: int) -> np.ndarray:
    """
    Histogram every column of values (n, k) into n_bins equal bins of its own
    range [low_k, high_k]. Returns (k, n_bins) counts.
    """
    n, k = values.shape
    width = (high - low) / n_bins
    idx = np.floor((values - low) / width).astype(np.int64)
    np.clip(idx, 0, n_bins - 1, out=idx)
    flat = (idx + np.arange(k) * n_bins).ravel()
    return np.bincount(flat, minlength=k * n_bins).reshape(k, n_bins).astype(np.float64)


def smooth(counts: np.ndarray, smoothing: float = SMOOTHING) -> np.ndarray:
    freq = counts / counts.sum(axis=-1, keepdims=True)
    freq = freq + smoothing
    return freq / freq.sum(axis=-1, keepdims=True)


def estimate_columns(rows: ArrayLike, n_bins: int = DEFAULT_BINS,
                     smoothing: float = SMOOTHING) -> ColumnDistributions:
    """
    Estimate the distribution of every column of a pooled row matrix.

    Args:
        rows: (n, d) patch or word rows of one modality, pooled over the batch
        n_bins: Bin count B
        smoothing: Additive smoothing added to the bin frequencies

    Returns:
        ColumnDistributions with sorted raw values retained
    """
    values = rows.data if isinstance(rows, Tensor) else np.asarray(rows, dtype=np.float64)
    if values.ndim != 2:
        raise DimensionError(f"estimate_columns expects an (n, d) matrix, got {values.shape}")
    if values.shape[0] < 2:
        raise ContractError(f"need at least 2 rows to estimate a distribution, got {values.shape[0]}")
    if n_bins < 2:
        raise ContractError(f"need at least 2 bins, got {n_bins}")

    low = values.min(axis=0) - RANGE_PADDING
    high = values.max(axis=0) + RANGE_PADDING
    counts = bin_counts(values, low, high, n_bins)
    fractions = np.linspace(0.0, 1.0, n_bins + 1)
    edges = low[:, None] + (high - low)[:, None] * fractions[None, :]
    return ColumnDistributions(
        bin_edges=edges,
        probabilities=smooth(counts, smoothing),
        raw_values=np.sort(values, axis=0),
        smoothing=smoothing,
    )
