"""
Regularizers and the combined objective

All inputs may be (n, d) row matrices or (B, n, d) batches; batches are
flattened to rows before pairing.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np

from cddsalign.config.models import LossWeights
from cddsalign.core.errors import ConfigError, ContractError, DimensionError
from cddsalign.tensor import ops
from cddsalign.tensor.layers import Module, Parameter
from cddsalign.tensor.tensor import ArrayLike, Tensor, as_tensor

logger = logging.getLogger(__name__)

SemanticForm = Literal["literal", "infonce"]
ModalForm = Literal["consistency", "literal"]


class ReconstructionWeights(Module):
    """Learnable scalars w_m, w_s, w_x of the reconstruction terms"""

    def __init__(self, init: float = 0.5):
        self.w_m = Parameter(np.array(init))
        self.w_s = Parameter(np.array(init))
        self.w_x = Parameter(np.array(init))


@dataclass
class LossBreakdown:
    l_s: Tensor
    l_m: Tensor
    l_f: Tensor
    l_x: Tensor
    l_c: Optional[Tensor]
    total: Tensor

    def values(self) -> Dict[str, float]:
        """Scalar terms; l_c only when the matching term is part of the total"""
        names = ["l_s", "l_m", "l_f", "l_x"] + (["l_c"] if self.l_c is not None else []) + ["total"]
        return {name: getattr(self, name).item() for name in names}


def _rows(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 3:
        return ops.reshape(x, (-1, x.shape[-1]))
    if x.ndim != 2:
        raise DimensionError(f"expected (n, d) or (B, n, d), got {x.shape}")
    return x


def _negative_pool(n: int, cap: int, rng: Optional[np.random.Generator]) -> Optional[np.ndarray]:
    if n <= cap:
        return None
    rng = rng if rng is not None else np.random.default_rng(0)
    return np.sort(rng.choice(n, size=cap, replace=False))


def semantic_term(x: ArrayLike, s: ArrayLike, form: SemanticForm = "literal",
                  max_negatives: int = 128, rng: Optional[np.random.Generator] = None) -> Tensor:
    """
    One direction of the semantic-consistency loss. Row i of x is paired with
    row i of s; every other row of s is a negative. With sigma = 1 - cos the
    constant cancels, so each ratio is exp(cos_ii) / sum_{j != i} exp(cos_ij).

    literal: -log sum_i ratio_i
    infonce: mean_i -log(exp(cos_ii) / sum_j exp(cos_ij))
    """
    x, s = _rows(x), _rows(s)
    if x.shape != s.shape:
        raise DimensionError(f"x-semantic {x.shape} and semantic {s.shape} must align row-wise")
    if x.shape[0] < 2:
        raise ContractError("semantic loss needs at least 2 rows (no negatives otherwise)")
    pool = _negative_pool(x.shape[0], max_negatives, rng)
    if pool is not None:
        x, s = ops.take_rows(x, pool), ops.take_rows(s, pool)
    n = x.shape[0]
    cos = ops.cosine_similarity(x, s)
    positive = ops.diagonal(cos)
    if form == "literal":
        off_diagonal = ~np.eye(n, dtype=bool)
        log_ratio = ops.sub(positive, ops.logsumexp(cos, mask=off_diagonal))
        return ops.neg(ops.logsumexp(log_ratio))
    if form == "infonce":
        return ops.neg(ops.mean(ops.sub(positive, ops.logsumexp(cos))))
    raise ConfigError(f"unknown semantic loss form '{form}'")


def loss_semantic(v_x: ArrayLike, v_s: ArrayLike, t_x: ArrayLike, t_s: ArrayLike,
                  form: SemanticForm = "literal", max_negatives: int = 128,
                  rng: Optional[np.random.Generator] = None) -> Tensor:
    """Semantic consistency between x-semantic and semantic rows, both modalities"""
    return ops.add(semantic_term(v_x, v_s, form, max_negatives, rng),
                   semantic_term(t_x, t_s, form, max_negatives, rng))


def _modal_term(x: Tensor, form: ModalForm) -> Tensor:
    n = x.shape[0]
    if n < 2:
        raise ContractError("modal loss needs at least 2 rows per modality")
    p = ops.softmax(x)
    log_p = ops.log_softmax(x)
    if form == "consistency":
        # sum_{i,j} KL(p_i || p_j) = n * sum_i <p_i, log p_i> - <sum_i p_i, sum_j log p_j>
        self_term = ops.sum(ops.mul(p, log_p))
        cross_term = ops.sum(ops.mul(ops.sum(p, axis=0), ops.sum(log_p, axis=0)))
        total = ops.sub(ops.scalar_mul(self_term, float(n)), cross_term)
        return ops.scalar_mul(total, 1.0 / (n * (n - 1)))
    if form == "literal":
        entropy_col = ops.sum(ops.mul(p, log_p), axis=1, keepdims=True)
        kl = ops.sub(ops.matmul(entropy_col, Tensor(np.ones((1, n)))), ops.matmul(p, ops.transpose(log_p)))
        return ops.sum(ops.exp(ops.neg(kl)))
    raise ConfigError(f"unknown modal loss form '{form}'")


def loss_modal(v_m: ArrayLike, t_m: ArrayLike, form: ModalForm = "consistency") -> Tensor:
    """
    Modality consistency. Rows are softmax-normalized into distributions.

    consistency: mean pairwise KL within each modality, summed over modalities
        (zero when all rows of a modality agree)
    literal: sum over all pairs of exp(-KL), summed over modalities
    """
    return ops.add(_modal_term(_rows(v_m), form), _modal_term(_rows(t_m), form))


def _reconstruction(modal: ArrayLike, part: ArrayLike, original: ArrayLike,
                    w_modal: ArrayLike, w_part: ArrayLike) -> Tensor:
    modal, part, original = _rows(modal), _rows(part), _rows(original)
    if not (modal.shape == part.shape == original.shape):
        raise DimensionError(
            f"reconstruction shapes differ: {modal.shape}, {part.shape}, {original.shape}"
        )
    rebuilt = ops.add(ops.mul(w_modal, modal), ops.mul(w_part, part))
    residual = ops.sub(rebuilt, original)
    return ops.mean(ops.sum(ops.square(residual), axis=-1))


def loss_integrity(v_m: ArrayLike, v_s: ArrayLike, v: ArrayLike,
                   t_m: ArrayLike, t_s: ArrayLike, t: ArrayLike,
                   w_m: ArrayLike, w_s: ArrayLike) -> Tensor:
    """Mean squared error of w_m * modal + w_s * semantic against the input, both modalities"""
    return ops.add(_reconstruction(v_m, v_s, v, w_m, w_s), _reconstruction(t_m, t_s, t, w_m, w_s))


def loss_x_integrity(v_m: ArrayLike, v_x: ArrayLike, v: ArrayLike,
                     t_m: ArrayLike, t_x: ArrayLike, t: ArrayLike,
                     w_m: ArrayLike, w_x: ArrayLike) -> Tensor:
    """Same as loss_integrity with the x-semantic components"""
    return ops.add(_reconstruction(v_m, v_x, v, w_m, w_x), _reconstruction(t_m, t_x, t, w_m, w_x))


def loss_matching(images: ArrayLike, texts: ArrayLike, pairs: Sequence[Tuple[int, int]],
                  temperature: float = 0.1) -> Tensor:
    """
    Symmetric contrastive matching between mean-pooled items.

    Args:
        images: (B, n_v, d) image components
        texts: (B_t, n_t, d) text components
        pairs: (image, text) indices within this batch; an image may own several texts
        temperature: Softmax temperature on cosine similarity

    Returns:
        Average of the image-to-text (multi-positive) and text-to-image losses
    """
    images, texts = as_tensor(images), as_tensor(texts)
    if images.ndim != 3 or texts.ndim != 3:
        raise DimensionError(f"matching loss expects 3-D batches, got {images.shape} and {texts.shape}")
    n_images, n_texts = images.shape[0], texts.shape[0]
    if n_images < 2:
        raise ContractError("matching loss needs at least 2 images")
    positive = np.zeros((n_images, n_texts), dtype=bool)
    for i, t in pairs:
        positive[i, t] = True
    if not positive.any(axis=1).all() or not positive.any(axis=0).all():
        raise ContractError("every image and text in the batch needs a partner")

    pooled_images = ops.mean(images, axis=1)
    pooled_texts = ops.mean(texts, axis=1)
    logits = ops.scalar_mul(ops.cosine_similarity(pooled_images, pooled_texts), 1.0 / temperature)
    image_to_text = ops.mean(ops.sub(ops.logsumexp(logits), ops.logsumexp(logits, mask=positive)))
    logits_t = ops.transpose(logits)
    text_to_image = ops.mean(ops.sub(ops.logsumexp(logits_t), ops.logsumexp(logits_t, mask=positive.T)))
    return ops.scalar_mul(ops.add(image_to_text, text_to_image), 0.5)


def total_loss(l_s: ArrayLike, l_m: ArrayLike, l_f: ArrayLike, l_x: ArrayLike,
               weights: LossWeights, l_c: Optional[ArrayLike] = None) -> LossBreakdown:
    """
    total = alpha_s*l_s + alpha_m*l_m + alpha_f*l_f + (1 - alpha_f)*l_x

    plus alpha_c*l_c when a matching term is passed.
    """
    for name in ("alpha_s", "alpha_m", "alpha_f", "alpha_c"):
        if getattr(weights, name) < 0:
            raise ConfigError(f"{name} must be nonnegative, got {getattr(weights, name)}")
    if weights.alpha_f > 1:
        raise ConfigError(f"alpha_f must lie in [0, 1], got {weights.alpha_f}")
    l_s, l_m, l_f, l_x = (as_tensor(v) for v in (l_s, l_m, l_f, l_x))

    parts: List[Tensor] = [
        ops.scalar_mul(l_s, weights.alpha_s),
        ops.scalar_mul(l_m, weights.alpha_m),
        ops.scalar_mul(l_f, weights.alpha_f),
        ops.scalar_mul(l_x, 1.0 - weights.alpha_f),
    ]
    if l_c is not None:
        l_c = as_tensor(l_c)
        parts.append(ops.scalar_mul(l_c, weights.alpha_c))
    total = parts[0]
    for part in parts[1:]:
        total = ops.add(total, part)
    return LossBreakdown(l_s=l_s, l_m=l_m, l_f=l_f, l_x=l_x, l_c=l_c, total=total)
