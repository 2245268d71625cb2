"""
Dual-path UNet decoupler

A shared encoder maps the input through n_layers attention blocks. The last
encoder output H is perturbed z times by Gaussian noise passed through a
noise encoder without biases or layer norms. Two decoders (semantic and
modal) each decode every perturbed copy, adding the mirrored encoder output
before each layer, and average the z results.
"""

import logging
from dataclasses import dataclass
from typing import List, Literal, Optional

import numpy as np

from cddsalign.config.models import DecouplerConfig
from cddsalign.core.errors import ContractError, DimensionError
from cddsalign.tensor import ops
from cddsalign.tensor.layers import Linear, Module, SelfAttentionBlock
from cddsalign.tensor.tensor import ArrayLike, Tensor, as_tensor

logger = logging.getLogger(__name__)

Path = Literal["semantic", "modal"]


@dataclass
class DecoupledSet:
    """
    Attributes:
        semantic: Semantic component, same shape as the input
        modal: Modal component, same shape as the input
        x_semantic: Semantic component expressed in the other modality's distribution
    """
    semantic: Tensor
    modal: Tensor
    x_semantic: Optional[Tensor] = None


class DecoderPath(Module):
    """n_layers of (skip add, attention block, linear to d)"""

    def __init__(self, config: DecouplerConfig, rng: np.random.Generator):
        self.blocks = [SelfAttentionBlock(config.d, rng, ffn_mult=config.ffn_mult)
                       for _ in range(config.n_layers)]
        self.projections = [Linear(config.d, config.d, rng) for _ in range(config.n_layers)]

    def __call__(self, h: Tensor, skips: List[Tensor]) -> Tensor:
        n_layers = len(self.blocks)
        for k in range(1, n_layers + 1):
            h = ops.add(h, skips[n_layers - k])
            h = self.blocks[k - 1](h)
            h = self.projections[k - 1](h)
        return h


class Decoupler(Module):
    """
    Decoupler for one modality. Accepts (n, d) or (B, n, d) inputs; attention
    mixes rows within one item only.
    """

    def __init__(self, config: DecouplerConfig, rng: np.random.Generator):
        self.config = config
        self.encoder = [SelfAttentionBlock(config.d, rng, ffn_mult=config.ffn_mult)
                        for _ in range(config.n_layers)]
        # no bias and no layer norm: E_n(0) = 0 and the output scales with noise_std
        self.noise_encoder = SelfAttentionBlock(config.d, rng, ffn_mult=config.ffn_mult,
                                                bias=False, norm=False)
        self.semantic_decoder = DecoderPath(config, rng)
        self.modal_decoder = DecoderPath(config, rng)

    def _check_input(self, x: Tensor) -> None:
        if x.ndim not in (2, 3) or x.shape[-1] != self.config.d:
            raise DimensionError(
                f"decoupler expects (n, {self.config.d}) or (B, n, {self.config.d}), got {x.shape}"
            )

    def encode(self, x: ArrayLike) -> List[Tensor]:
        """All encoder layer outputs; the last one is H"""
        x = as_tensor(x)
        self._check_input(x)
        outputs = []
        h = x
        for block in self.encoder:
            h = block(h)
            outputs.append(h)
        return outputs

    def perturb(self, h: ArrayLike, z: int, noise_std: float,
                rng: np.random.Generator) -> List[Tensor]:
        """
        z perturbed copies H + E_n(delta_i), delta_i ~ N(0, noise_std^2).
        E_n has no bias terms, so E_n(0) = 0 and noise_std = 0 returns H itself.
        """
        if z < 1:
            raise ContractError(f"z must be at least 1, got {z}")
        if noise_std < 0:
            raise ContractError(f"noise_std must be nonnegative, got {noise_std}")
        h = as_tensor(h)
        perturbed = []
        for _ in range(z):
            delta = rng.normal(0.0, noise_std, size=h.shape)
            perturbed.append(ops.add(h, self.noise_encoder(Tensor(delta))))
        return perturbed

    def decode(self, perturbed: List[Tensor], encoder_outputs: List[Tensor], path: Path) -> Tensor:
        """Decode every perturbed copy through one path and average them in draw order"""
        if not perturbed:
            raise ContractError("decode needs at least one perturbed representation")
        if len(encoder_outputs) != self.config.n_layers:
            raise ContractError(
                f"expected {self.config.n_layers} encoder outputs, got {len(encoder_outputs)}"
            )
        if path == "semantic":
            decoder = self.semantic_decoder
        elif path == "modal":
            decoder = self.modal_decoder
        else:
            raise ContractError(f"unknown decoder path '{path}'")

        shape = perturbed[0].shape
        z = len(perturbed)
        if len(shape) == 2:
            items = [ops.reshape(p, (1,) + shape) for p in perturbed]
            skips = [ops.reshape(e, (1,) + shape) for e in encoder_outputs]
        else:
            items, skips = list(perturbed), list(encoder_outputs)
        # all draws go through the decoder as one stacked batch
        stacked = ops.concat(items, axis=0) if z > 1 else items[0]
        if z > 1:
            skips = [ops.concat([s] * z, axis=0) for s in skips]
        decoded = decoder(stacked, skips)
        draws = ops.reshape(decoded, (z,) + shape)
        return ops.mean(draws, axis=0)

    def decouple(self, x: ArrayLike, rng: np.random.Generator,
                 noise_std: Optional[float] = None) -> DecoupledSet:
        """
        Encode, perturb, and decode along both paths. Both paths share the
        encoder outputs and the perturbed copies.
        """
        noise_std = self.config.noise_std if noise_std is None else noise_std
        outputs = self.encode(x)
        perturbed = self.perturb(outputs[-1], self.config.z, noise_std, rng)
        return DecoupledSet(
            semantic=self.decode(perturbed, outputs, "semantic"),
            modal=self.decode(perturbed, outputs, "modal"),
        )

    def noise_parameters(self):
        return self.noise_encoder.parameters()
