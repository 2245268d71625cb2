"""
Validated run configuration

Every model rejects unknown fields and re-raises validation failures as
ConfigError, so callers only need to handle one exception type.
"""

import hashlib
import json
import logging
from enum import Enum
from typing import Any, Dict, List, Literal, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from cddsalign.core.errors import ConfigError

logger = logging.getLogger(__name__)


class Ablation(str, Enum):
    """Named removals of one mechanism"""
    DEC = "Dec"   # no decoupling: losses act on raw embeddings
    MOD = "Mod"   # no modal-consistency term
    INT = "Int"   # no reconstruction terms
    GAU = "Gau"   # no Gaussian perturbation
    SAM = "Sam"   # plain contrastive alignment instead of distribution sampling


CorrelationMode = Literal["each-batch", "random", "all"]


class ConfigModel(BaseModel):
    """Base for all configuration models"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    def __init__(self, **data: Any):
        try:
            super().__init__(**data)
        except ValidationError as e:
            raise ConfigError(f"invalid {type(self).__name__}: {e}") from e

    def replace(self, **changes: Any) -> "ConfigModel":
        """Validated copy with some fields changed"""
        values = self.model_dump()
        values.update(changes)
        return type(self)(**values)


class SynthConfig(ConfigModel):
    """Parameters of one synthetic draw (train and test come from the same draw)"""
    n_pairs: int = Field(200, ge=1)
    n_test: int = Field(100, ge=0)
    n_v: int = Field(4, ge=1)
    n_t: int = Field(6, ge=1)
    d: int = Field(32, ge=1)
    d_latent: int = Field(4, ge=1)
    texts_per_image: int = Field(1, ge=1)
    noise_std: float = Field(0.05, ge=0.0)
    jitter_std: float = Field(0.1, ge=0.0)
    seed: int = 1

    @model_validator(mode="after")
    def _latent_fits(self) -> "SynthConfig":
        if self.d_latent > self.d:
            raise ValueError(f"d_latent ({self.d_latent}) must not exceed d ({self.d})")
        return self


class DecouplerConfig(ConfigModel):
    """
    Attributes:
        d: Feature size
        n_layers: Encoder and decoder depth
        z: Number of noise draws averaged by the decoders
        noise_std: Std of the Gaussian perturbation
        ffn_mult: Hidden width multiplier of the attention blocks
    """
    d: int = Field(32, ge=1)
    n_layers: int = Field(2, ge=1)
    z: int = Field(4, ge=1)
    noise_std: float = Field(0.1, ge=0.0)
    ffn_mult: int = Field(2, ge=1)


class LossWeights(ConfigModel):
    """
    Regularizer weights. w_*_init seed the learnable reconstruction weights.
    """
    alpha_s: float = Field(1.0, ge=0.0)
    alpha_m: float = Field(0.1, ge=0.0)
    alpha_f: float = Field(0.5, ge=0.0, le=1.0)
    alpha_c: float = Field(0.0, ge=0.0)
    w_init: float = 0.5


class TrainConfig(ConfigModel):
    epochs: int = Field(25, ge=1)
    batch_size: int = Field(8, ge=2)
    learning_rate: float = Field(1e-3, gt=0.0)
    weight_decay: float = Field(1e-4, ge=0.0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0.0)
    seed: int = 0
    decoupler: DecouplerConfig = DecouplerConfig()
    losses: LossWeights = LossWeights()
    correlation_mode: CorrelationMode = "each-batch"
    refresh_fraction: float = Field(0.25, gt=0.0, le=1.0)
    ablations: List[Ablation] = Field(default_factory=list)
    n_bins: int = Field(32, ge=2)
    gate_temperature: float = Field(0.1, gt=0.0)
    semantic_loss: Literal["literal", "infonce"] = "literal"
    modal_loss: Literal["consistency", "literal"] = "consistency"
    max_negatives: int = Field(128, ge=2)
    matching_temperature: float = Field(0.1, gt=0.0)

    @model_validator(mode="after")
    def _unique_ablations(self) -> "TrainConfig":
        if len(set(self.ablations)) != len(self.ablations):
            raise ValueError(f"duplicate ablations: {[a.value for a in self.ablations]}")
        for beta in self.betas:
            if not 0.0 <= beta < 1.0:
                raise ValueError(f"betas must lie in [0, 1), got {self.betas}")
        return self

    def has(self, ablation: Ablation) -> bool:
        return ablation in self.ablations

    def with_ablation(self, ablation: Ablation) -> "TrainConfig":
        return self.replace(ablations=[a.value for a in self.ablations] + [ablation.value])


def canonical_json(payload: Dict[str, Any]) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_hash(config: BaseModel) -> str:
    """SHA-256 of the canonical JSON form"""
    return hashlib.sha256(canonical_json(config.model_dump(mode="json")).encode("utf-8")).hexdigest()


def synth_config_from(profile: Dict[str, Any], **overrides: Any) -> SynthConfig:
    values = dict(profile.get("data", {}))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return SynthConfig(**values)


def train_config_from(profile: Dict[str, Any], **overrides: Any) -> TrainConfig:
    """
    Build a TrainConfig from a settings profile block.

    Args:
        profile: Profile dict with "training", "model" and "losses" sections
        overrides: Top-level TrainConfig fields, or "decoupler.<field>" /
            "losses.<field>" keys; None values are ignored
    """
    values = dict(profile.get("training", {}))
    decoupler = dict(profile.get("model", {}))
    losses = dict(profile.get("losses", {}))
    for key, value in overrides.items():
        if value is None:
            continue
        if key.startswith("decoupler."):
            decoupler[key.split(".", 1)[1]] = value
        elif key.startswith("losses."):
            losses[key.split(".", 1)[1]] = value
        else:
            values[key] = value
    values["decoupler"] = decoupler
    values["losses"] = losses
    return TrainConfig(**values)
