"""
2-D projections of embeddings for inspection
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from cddsalign.core.errors import ContractError, DimensionError

logger = logging.getLogger(__name__)


@dataclass
class Projection:
    """
    Attributes:
        points: (n, 2) coordinates on the two leading principal axes
        explained: fraction of variance carried by each axis
    """
    points: np.ndarray
    explained: np.ndarray


def project_2d(rows: np.ndarray) -> Projection:
    """PCA of (n, d) rows onto their two leading principal axes"""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise DimensionError(f"project_2d expects an (n, d) matrix, got {rows.shape}")
    if rows.shape[0] < 2:
        raise ContractError("projection needs at least 2 rows")
    centered = rows - rows.mean(axis=0)
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    axes = vt[:2]
    if axes.shape[0] < 2:
        axes = np.vstack([axes, np.zeros((2 - axes.shape[0], rows.shape[1]))])
    variance = singular ** 2
    total = variance.sum()
    explained = variance[:2] / total if total > 0 else np.zeros(min(2, variance.size))
    return Projection(centered @ axes.T, np.pad(explained, (0, 2 - explained.size)))


def group_spread(points: np.ndarray, groups: Sequence[int]) -> float:
    """
    Mean distance of points to their group centroid divided by the mean
    distance to the global centroid. Smaller means tighter groups.
    """
    points = np.asarray(points, dtype=np.float64)
    groups = np.asarray(groups)
    if points.shape[0] != groups.size:
        raise DimensionError(f"{points.shape[0]} points but {groups.size} group labels")
    global_spread = np.linalg.norm(points - points.mean(axis=0), axis=1).mean()
    if global_spread == 0:
        return 0.0
    within = np.empty(points.shape[0])
    for g in np.unique(groups):
        members = groups == g
        within[members] = np.linalg.norm(points[members] - points[members].mean(axis=0), axis=1)
    return float(within.mean() / global_spread)
