"""
Retrieval metrics and projections
"""

from cddsalign.evaluation.retrieval import (
    RetrievalReport, change_rate, evaluate, recall_report, rsum_from_recalls, similarity,
    similarity_matrix,
)
from cddsalign.evaluation.projection import Projection, group_spread, project_2d
from cddsalign.evaluation.inspection import Inspection, inspect_model

__all__ = [
    'RetrievalReport',
    'similarity',
    'similarity_matrix',
    'recall_report',
    'rsum_from_recalls',
    'change_rate',
    'evaluate',
    'Projection',
    'project_2d',
    'group_spread',
    'Inspection',
    'inspect_model',
]
