"""
Semantic, modal, integrity and matching regularizers
"""

from cddsalign.objectives.losses import (
    LossBreakdown, ReconstructionWeights, loss_integrity, loss_matching, loss_modal,
    loss_semantic, loss_x_integrity, semantic_term, total_loss,
)

__all__ = [
    'LossBreakdown',
    'ReconstructionWeights',
    'loss_semantic',
    'semantic_term',
    'loss_modal',
    'loss_integrity',
    'loss_x_integrity',
    'loss_matching',
    'total_loss',
]
