"""
Synthetic paired embeddings with known semantic and modality factors

Every image owns a latent semantic vector. Its patches are a fixed linear
image map of the latent (with small per-patch jitter) plus an image modality
offset; its texts use a different linear map and a text offset. A model that
recovers the latent from both sides aligns the modalities.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Tuple

import numpy as np

from cddsalign.core.errors import ConfigError
from cddsalign.data.batch import EmbeddingBatch

logger = logging.getLogger(__name__)


@dataclass
class SyntheticGroundTruth:
    """
    Attributes:
        latent_semantics: (n_pairs, d_latent) per-image latent
        modality_offset_image: (d,) offset added to every patch
        modality_offset_text: (d,) offset added to every word
        f_v: (d_latent, d) image mixing map
        f_t: (d_latent, d) text mixing map
        noise_std: std of the additive Gaussian noise
        jitter_std: std of the per-patch / per-word latent jitter
        seed: generator seed
    """
    latent_semantics: np.ndarray
    modality_offset_image: np.ndarray
    modality_offset_text: np.ndarray
    f_v: np.ndarray
    f_t: np.ndarray
    noise_std: float
    jitter_std: float
    seed: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "noise_std": self.noise_std,
            "jitter_std": self.jitter_std,
            "d_latent": int(self.latent_semantics.shape[1]),
        }


def generate_synthetic(
    n_pairs: int,
    n_v: int,
    n_t: int,
    d: int,
    d_latent: int,
    texts_per_image: int,
    noise_std: float,
    seed: int,
    jitter_std: float = 0.1,
) -> Tuple[EmbeddingBatch, SyntheticGroundTruth]:
    """
    Draw n_pairs images and n_pairs * texts_per_image texts.

    Returns:
        The batch and the factors used to build it
    """
    for name, value in (("n_pairs", n_pairs), ("n_v", n_v), ("n_t", n_t), ("d", d),
                        ("d_latent", d_latent), ("texts_per_image", texts_per_image)):
        if int(value) <= 0:
            raise ConfigError(f"{name} must be positive, got {value}")
    if d_latent > d:
        raise ConfigError(f"d_latent ({d_latent}) must not exceed d ({d})")
    if noise_std < 0 or jitter_std < 0:
        raise ConfigError("noise_std and jitter_std must be nonnegative")

    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(d_latent)
    f_v = rng.normal(0.0, scale, size=(d_latent, d))
    f_t = rng.normal(0.0, scale, size=(d_latent, d))
    offset_image = rng.normal(0.0, 1.0, size=d)
    offset_text = rng.normal(0.0, 1.0, size=d)
    latent = rng.normal(0.0, 1.0, size=(n_pairs, d_latent))

    jitter_v = rng.normal(0.0, jitter_std, size=(n_pairs, n_v, d_latent))
    images = (latent[:, None, :] + jitter_v) @ f_v + offset_image
    images = images + rng.normal(0.0, noise_std, size=images.shape)

    owner = np.repeat(np.arange(n_pairs), texts_per_image)
    jitter_t = rng.normal(0.0, jitter_std, size=(owner.size, n_t, d_latent))
    texts = (latent[owner][:, None, :] + jitter_t) @ f_t + offset_text
    texts = texts + rng.normal(0.0, noise_std, size=texts.shape)

    pairs = [(int(image_id), text_id) for text_id, image_id in enumerate(owner)]
    truth = SyntheticGroundTruth(
        latent_semantics=latent,
        modality_offset_image=offset_image,
        modality_offset_text=offset_text,
        f_v=f_v,
        f_t=f_t,
        noise_std=float(noise_std),
        jitter_std=float(jitter_std),
        seed=int(seed),
    )
    logger.debug(f"Generated {n_pairs} images / {owner.size} texts (d={d}, seed={seed})")
    return EmbeddingBatch(images, texts, pairs), truth


def split_synthetic(batch: EmbeddingBatch, n_test: int) -> Tuple[EmbeddingBatch, EmbeddingBatch]:
    """
    Split one draw into train and test so both share mixing maps and offsets.
    The last n_test images (with their texts) form the test set.
    """
    if not 0 < n_test < batch.n_images:
        raise ConfigError(f"n_test must be in (0, {batch.n_images}), got {n_test}")
    cut = batch.n_images - n_test
    return batch.subset(range(cut)), batch.subset(range(cut, batch.n_images))
