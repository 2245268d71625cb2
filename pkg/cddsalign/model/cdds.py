"""
Trainable state of one alignment run
"""

import logging
from typing import Dict, List

import numpy as np

from cddsalign.config.models import Ablation, TrainConfig
from cddsalign.model.decoupler import Decoupler
from cddsalign.objectives.losses import ReconstructionWeights
from cddsalign.tensor.layers import Module, Parameter

logger = logging.getLogger(__name__)


class SparsityParameters(Module):
    """Per-column alpha of the adaptive thresholds, image rows and text columns"""

    def __init__(self, d: int):
        self.alpha_v = Parameter(np.zeros(d))
        self.alpha_t = Parameter(np.zeros(d))


class AlignmentModel(Module):
    """
    One decoupler per modality plus the learnable loss and sparsity scalars.
    Initialization draws from a generator seeded with the run seed, image
    decoupler first.
    """

    def __init__(self, config: TrainConfig):
        rng = np.random.default_rng(config.seed)
        self.image = Decoupler(config.decoupler, rng)
        self.text = Decoupler(config.decoupler, rng)
        self.weights = ReconstructionWeights(config.losses.w_init)
        self.sparsity = SparsityParameters(config.decoupler.d)

    def frozen_groups(self, config: TrainConfig) -> List[str]:
        """Parameter prefixes with no loss path under the configured ablations"""
        frozen = []
        if config.has(Ablation.DEC):
            frozen += ["image.", "text."]
        elif config.has(Ablation.GAU):
            frozen += ["image.noise_encoder.", "text.noise_encoder."]
        if config.has(Ablation.INT):
            frozen.append("weights.")
        if config.has(Ablation.SAM):
            frozen.append("sparsity.")
        return frozen

    def trainable_parameters(self, config: TrainConfig) -> Dict[str, Parameter]:
        frozen = self.frozen_groups(config)
        return {name: p for name, p in self.named_parameters()
                if not any(name.startswith(prefix) for prefix in frozen)}
