"""
Related-semantics identification and distribution sampling
"""

from cddsalign.alignment.columns import ColumnDistributions, estimate_columns
from cddsalign.alignment.correlation import (
    CorrelationState, SparseSelection, correlation_matrix, gated_weights, sparsify,
)
from cddsalign.alignment.transport import build_x_semantic, quantile_transport
from cddsalign.alignment.cache import CorrelationCache

__all__ = [
    'ColumnDistributions',
    'estimate_columns',
    'CorrelationState',
    'SparseSelection',
    'correlation_matrix',
    'sparsify',
    'gated_weights',
    'quantile_transport',
    'build_x_semantic',
    'CorrelationCache',
]
