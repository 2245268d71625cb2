"""
Paired image-patch / text-word embedding batch
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from cddsalign.core.errors import ContractError, DimensionError

logger = logging.getLogger(__name__)


@dataclass
class EmbeddingBatch:
    """
    Images and texts with a pairing manifest.

    Attributes:
        images: (n_images, n_v, d) patch embeddings
        texts: (n_texts, n_t, d) word embeddings
        pairs: (image_id, text_id) tuples indexing images and texts
    """
    images: np.ndarray
    texts: np.ndarray
    pairs: List[Tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.texts = np.asarray(self.texts, dtype=np.float64)
        self.pairs = [(int(i), int(t)) for i, t in self.pairs]
        self.check_structure()

    @property
    def n_images(self) -> int:
        return self.images.shape[0]

    @property
    def n_texts(self) -> int:
        return self.texts.shape[0]

    @property
    def n_v(self) -> int:
        return self.images.shape[1]

    @property
    def n_t(self) -> int:
        return self.texts.shape[1]

    @property
    def d(self) -> int:
        return self.images.shape[2]

    def check_structure(self) -> None:
        """Shape and id checks that hold for every batch, even one without pairs"""
        if self.images.ndim != 3 or self.texts.ndim != 3:
            raise DimensionError(
                f"images and texts must be 3-D arrays, got {self.images.shape} and {self.texts.shape}"
            )
        if self.images.shape[2] != self.texts.shape[2]:
            raise DimensionError(
                f"image feature size {self.images.shape[2]} != text feature size {self.texts.shape[2]}"
            )
        for image_id, text_id in self.pairs:
            if not (0 <= image_id < self.n_images and 0 <= text_id < self.n_texts):
                raise ContractError(f"pair ({image_id}, {text_id}) references an unknown id")

    def validate(self) -> None:
        """Full invariant check required before training or evaluation"""
        self.check_structure()
        if not self.pairs:
            raise ContractError("batch has no pairs")
        paired_images = {i for i, _ in self.pairs}
        unpaired = sorted(set(range(self.n_images)) - paired_images)
        if unpaired:
            raise ContractError(f"images without a paired text: {unpaired[:10]}")

    def texts_of(self, image_id: int) -> List[int]:
        return [t for i, t in self.pairs if i == image_id]

    def image_of_text(self) -> Dict[int, int]:
        return {t: i for i, t in self.pairs}

    def subset(self, image_ids: Sequence[int]) -> "EmbeddingBatch":
        """Images (and all their paired texts) re-indexed from zero"""
        image_ids = list(image_ids)
        image_map = {old: new for new, old in enumerate(image_ids)}
        text_ids: List[int] = []
        for old in image_ids:
            text_ids.extend(self.texts_of(old))
        text_map = {old: new for new, old in enumerate(text_ids)}
        pairs = [(image_map[i], text_map[t]) for i, t in self.pairs if i in image_map and t in text_map]
        return EmbeddingBatch(self.images[image_ids], self.texts[text_ids], pairs)

    def to_manifest(self) -> Dict[str, Any]:
        return {
            "n_images": self.n_images,
            "n_texts": self.n_texts,
            "n_v": self.n_v,
            "n_t": self.n_t,
            "d": self.d,
            "n_pairs": len(self.pairs),
            "pairs": [list(p) for p in self.pairs],
        }
