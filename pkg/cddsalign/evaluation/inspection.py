"""
Inspection of a trained model

Recomputes the correlation matrix and both sparsified selections on a data
set with the model's learned thresholds, and projects the text word rows
before and after decoupling so that words of the same image can be compared.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Union

import numpy as np

from cddsalign.alignment.columns import estimate_columns
from cddsalign.alignment.correlation import CorrelationState, correlation_matrix
from cddsalign.config.models import TrainConfig
from cddsalign.data.batch import EmbeddingBatch
from cddsalign.evaluation.projection import Projection, group_spread, project_2d
from cddsalign.evaluation.retrieval import model_from, semantic_components
from cddsalign.model.cdds import AlignmentModel
from cddsalign.model.checkpoint import Checkpoint

logger = logging.getLogger(__name__)


@dataclass
class Inspection:
    """
    Attributes:
        correlation: S with the image-row and text-column selections
        raw_texts: Projection of the raw word rows
        semantic_texts: Projection of the semantic word rows
        groups: Owning image of every projected row
    """
    correlation: CorrelationState
    raw_texts: Projection
    semantic_texts: Projection
    groups: np.ndarray

    def spread(self) -> Dict[str, float]:
        """Within-image spread relative to global spread, before and after decoupling"""
        return {
            "raw": group_spread(self.raw_texts.points, self.groups),
            "semantic": group_spread(self.semantic_texts.points, self.groups),
        }


def inspect_model(source: Union[AlignmentModel, Checkpoint], data: EmbeddingBatch,
                  config: TrainConfig) -> Inspection:
    data.validate()
    model = model_from(source)
    images, texts = semantic_components(model, config, data)
    d = data.d
    c_v = estimate_columns(images.reshape(-1, d), config.n_bins)
    c_t = estimate_columns(texts.reshape(-1, d), config.n_bins)
    state = CorrelationState.from_matrix(
        correlation_matrix(c_v, c_t), model.sparsity.alpha_v.numpy(), model.sparsity.alpha_t.numpy(),
    )

    owner = data.image_of_text()
    groups = np.repeat([owner[t] for t in range(data.n_texts)], data.n_t)
    raw = project_2d(data.texts.reshape(-1, d))
    semantic = project_2d(texts.reshape(-1, d))
    inspection = Inspection(state, raw, semantic, groups)
    spread = inspection.spread()
    logger.info(
        f"Kept {int(state.image.mask.sum())} image / {int(state.text.mask.sum())} text entries of S; "
        f"word spread raw={spread['raw']:.3f} semantic={spread['semantic']:.3f}"
    )
    return inspection
