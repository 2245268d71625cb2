"""
Retrieval evaluation on decoupled semantic components

Images and texts are matched by fine-grained similarity between their
semantic rows (mean over patches of the best-matching word), without any
other interaction between the modalities.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from cddsalign.config.models import TrainConfig
from cddsalign.core.errors import ContractError, DimensionError
from cddsalign.data.batch import EmbeddingBatch
from cddsalign.model.cdds import AlignmentModel
from cddsalign.model.checkpoint import Checkpoint
from cddsalign.tensor.tape import no_record
from cddsalign.training.trainer import decouple_batch

logger = logging.getLogger(__name__)

RECALL_KS = (1, 5, 10)
_NORM_FLOOR = 1e-12


@dataclass
class RetrievalReport:
    """
    Attributes:
        image_to_text: K -> percentage of image queries with a paired text in the top K
        text_to_image: K -> percentage of text queries with their image in the top K
        rsum: Sum of the six recalls
        n_queries: Number of image queries
        n_text_queries: Number of text queries
    """
    image_to_text: Dict[int, float]
    text_to_image: Dict[int, float]
    rsum: float
    n_queries: int
    n_text_queries: int = 0
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "image_to_text": {f"R@{k}": v for k, v in self.image_to_text.items()},
            "text_to_image": {f"R@{k}": v for k, v in self.text_to_image.items()},
            "rsum": self.rsum,
            "n_queries": self.n_queries,
            "n_text_queries": self.n_text_queries,
            **self.extra,
        }

    def row(self) -> Dict[str, float]:
        """Flat row in the usual table order: i2t R@1/5/10, t2i R@1/5/10, rSum"""
        row = {f"i2t_R@{k}": self.image_to_text[k] for k in RECALL_KS}
        row.update({f"t2i_R@{k}": self.text_to_image[k] for k in RECALL_KS})
        row["rsum"] = self.rsum
        return row


def _normalize(x: np.ndarray) -> np.ndarray:
    return x / np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), _NORM_FLOOR)


def similarity(v_s: np.ndarray, t_s: np.ndarray) -> float:
    """Mean over image rows of the max over text rows of cosine similarity"""
    v_s, t_s = np.atleast_2d(np.asarray(v_s, dtype=np.float64)), np.atleast_2d(np.asarray(t_s, dtype=np.float64))
    if v_s.size == 0 or t_s.size == 0:
        raise ContractError("similarity needs non-empty inputs")
    if v_s.shape[-1] != t_s.shape[-1]:
        raise DimensionError(f"feature sizes differ: {v_s.shape} vs {t_s.shape}")
    cos = _normalize(v_s) @ _normalize(t_s).T
    return float(cos.max(axis=1).mean())


def similarity_matrix(images: np.ndarray, texts: np.ndarray, symmetric: bool = False,
                      chunk: int = 64) -> np.ndarray:
    """
    Pairwise item similarity.

    Args:
        images: (N_i, n_v, d) image semantic components
        texts: (N_t, n_t, d) text semantic components
        symmetric: Average the patch->word and word->patch directions
        chunk: Images processed per block

    Returns:
        (N_i, N_t) similarity matrix
    """
    images, texts = np.asarray(images, dtype=np.float64), np.asarray(texts, dtype=np.float64)
    if images.ndim != 3 or texts.ndim != 3 or images.shape[-1] != texts.shape[-1]:
        raise DimensionError(f"incompatible shapes {images.shape} and {texts.shape}")
    if images.size == 0 or texts.size == 0:
        raise ContractError("similarity needs non-empty inputs")
    v, t = _normalize(images), _normalize(texts)
    out = np.empty((images.shape[0], texts.shape[0]))
    for start in range(0, images.shape[0], chunk):
        # cos[a, b, p, w]: patch p of image a against word w of text b
        cos = np.einsum("apd,bwd->abpw", v[start:start + chunk], t)
        scores = cos.max(axis=3).mean(axis=2)
        if symmetric:
            scores = 0.5 * (scores + cos.max(axis=2).mean(axis=2))
        out[start:start + chunk] = scores
    return out


def _pessimistic_rank(scores: np.ndarray, target: int) -> int:
    """Number of other items scoring at least as high as the target"""
    return int(np.sum(scores >= scores[target]) - 1)


def recall_report(sim: np.ndarray, pairs: Sequence[Tuple[int, int]],
                  ks: Iterable[int] = RECALL_KS) -> RetrievalReport:
    """
    Recall@K in both directions from a similarity matrix.

    An image query hits if any of its paired texts ranks within the top K;
    ties are resolved against the ground truth.
    """
    sim = np.asarray(sim, dtype=np.float64)
    ks = tuple(ks)
    if sim.ndim != 2:
        raise DimensionError(f"similarity matrix must be 2-D, got {sim.shape}")
    texts_of: Dict[int, List[int]] = {}
    image_of: Dict[int, int] = {}
    for i, t in pairs:
        texts_of.setdefault(i, []).append(t)
        image_of[t] = i
    if not texts_of:
        raise ContractError("recall needs at least one pair")

    image_ranks = np.array([min(_pessimistic_rank(sim[i], t) for t in texts_of[i])
                            for i in sorted(texts_of)])
    text_ranks = np.array([_pessimistic_rank(sim[:, t], image_of[t]) for t in sorted(image_of)])
    i2t = {k: 100.0 * float(np.mean(image_ranks < k)) for k in ks}
    t2i = {k: 100.0 * float(np.mean(text_ranks < k)) for k in ks}
    rsum = rsum_from_recalls(list(i2t.values()) + list(t2i.values()))
    return RetrievalReport(i2t, t2i, rsum, n_queries=len(image_ranks), n_text_queries=len(text_ranks))


def rsum_from_recalls(recalls: Sequence[float]) -> float:
    """Sum of the recalls, exact to the last decimal place given"""
    return math.fsum(recalls)


def change_rate(ablated_rsum: float, full_rsum: float) -> float:
    """Relative change of rSum in percent"""
    if full_rsum == 0:
        raise ContractError("change rate is undefined for a zero reference rSum")
    return 100.0 * (ablated_rsum - full_rsum) / full_rsum


def model_from(source: Union[AlignmentModel, Checkpoint]) -> AlignmentModel:
    if isinstance(source, AlignmentModel):
        return source
    model = AlignmentModel(source.config)
    model.load_state_dict(source.params)
    return model


def semantic_components(model: AlignmentModel, config: TrainConfig,
                        data: EmbeddingBatch) -> Tuple[np.ndarray, np.ndarray]:
    """Noise-free image and text semantic components; every row depends on its own item only"""
    with no_record():
        v_set, t_set = decouple_batch(model, config, data.images, data.texts, np.random.default_rng(0),
                                      noise_std=0.0)
    return v_set.semantic.numpy(), t_set.semantic.numpy()


def evaluate(source: Union[AlignmentModel, Checkpoint], data: EmbeddingBatch,
             config: Optional[TrainConfig] = None, symmetric: bool = False) -> RetrievalReport:
    """
    Retrieval metrics of a trained model on a test batch.

    Args:
        source: Model or checkpoint
        data: Test batch
        config: Run configuration (taken from the checkpoint when omitted)
        symmetric: Average both fine-grained directions
    """
    if config is None:
        if not isinstance(source, Checkpoint):
            raise ContractError("evaluate needs a config when given a bare model")
        config = source.config
    data.validate()
    if len(data.pairs) < 10:
        logger.warning(f"Only {len(data.pairs)} test pairs; recall values will be coarse")
    model = model_from(source)
    images, texts = semantic_components(model, config, data)
    report = recall_report(similarity_matrix(images, texts, symmetric), data.pairs)
    logger.info(f"Evaluation on {report.n_queries} images: rSum={report.rsum:.1f}")
    return report
