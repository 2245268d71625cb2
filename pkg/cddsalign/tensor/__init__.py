"""
Minimal reverse-mode automatic differentiation over dense float64 arrays
"""

from cddsalign.tensor.tensor import Tensor, as_tensor
from cddsalign.tensor.tape import Tape, current_tape, no_record
from cddsalign.tensor import ops
from cddsalign.tensor.layers import (
    LayerNorm, Linear, Module, Parameter, SelfAttentionBlock, self_attention_block,
)

__all__ = [
    'Tensor',
    'as_tensor',
    'Tape',
    'current_tape',
    'no_record',
    'ops',
    'Module',
    'Parameter',
    'Linear',
    'LayerNorm',
    'SelfAttentionBlock',
    'self_attention_block',
]
