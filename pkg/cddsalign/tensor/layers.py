"""
Parameter containers and the composite layers built from ops
"""

import logging
import math
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from cddsalign.core.errors import DimensionError
from cddsalign.tensor import ops
from cddsalign.tensor.tensor import ArrayLike, Tensor, as_tensor

logger = logging.getLogger(__name__)


class Parameter(Tensor):
    """
    Trainable leaf. The optimizer replaces its value through assign(); the
    arrays themselves stay read-only.
    """

    def __init__(self, data: ArrayLike, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)

    def assign(self, values: np.ndarray) -> None:
        values = np.array(values, dtype=np.float64)
        if values.shape != self.shape:
            raise DimensionError(f"cannot assign shape {values.shape} to parameter of shape {self.shape}")
        values.setflags(write=False)
        self._data = values


class Module:
    """
    Base class that discovers Parameters and sub-Modules among its
    attributes, in definition order.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.numpy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for name, p in params.items():
            p.assign(state[name])


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear(Module):
    """Affine map x @ W + b on the last axis"""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True, zero_init: bool = False):
        w = np.zeros((d_in, d_out)) if zero_init else xavier_uniform(rng, d_in, d_out)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: ArrayLike) -> Tensor:
        return ops.linear_layer(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, bias: bool = True):
        self.gain = Parameter(np.ones(d))
        self.shift = Parameter(np.zeros(d)) if bias else None

    def __call__(self, x: ArrayLike) -> Tensor:
        return ops.layer_norm(x, self.gain, self.shift)


class SelfAttentionBlock(Module):
    """
    Pre-layer-norm transformer layer: single-head scaled dot-product
    attention followed by a two-layer GELU feed-forward, each wrapped in a
    residual connection. Operates on (n, d) or (B, n, d); attention mixes
    rows within each item only. With norm=False both layer norms are skipped
    and the block keeps the scale of its input.
    """

    def __init__(self, d: int, rng: np.random.Generator, ffn_mult: int = 2,
                 bias: bool = True, zero_init: bool = False, norm: bool = True):
        self.d = d
        self.norm_attn = LayerNorm(d, bias=bias) if norm else None
        self.query = Linear(d, d, rng, bias=bias, zero_init=zero_init)
        self.key = Linear(d, d, rng, bias=bias, zero_init=zero_init)
        self.value = Linear(d, d, rng, bias=bias, zero_init=zero_init)
        self.out = Linear(d, d, rng, bias=bias, zero_init=zero_init)
        self.norm_ffn = LayerNorm(d, bias=bias) if norm else None
        self.ffn_in = Linear(d, ffn_mult * d, rng, bias=bias, zero_init=zero_init)
        self.ffn_out = Linear(ffn_mult * d, d, rng, bias=bias, zero_init=zero_init)

    def __call__(self, x: ArrayLike) -> Tensor:
        return self_attention_block(x, self)


def self_attention_block(x: ArrayLike, block: SelfAttentionBlock) -> Tensor:
    x = as_tensor(x)
    if x.shape[-1] != block.d:
        raise DimensionError(f"attention block expects feature size {block.d}, got {x.shape}")
    h = block.norm_attn(x) if block.norm_attn is not None else x
    q, k, v = block.query(h), block.key(h), block.value(h)
    scores = ops.scalar_mul(ops.matmul(q, ops.transpose(k)), 1.0 / math.sqrt(block.d))
    attended = ops.matmul(ops.softmax(scores), v)
    x = ops.add(x, block.out(attended))
    h = block.norm_ffn(x) if block.norm_ffn is not None else x
    return ops.add(x, block.ffn_out(ops.gelu(block.ffn_in(h))))
