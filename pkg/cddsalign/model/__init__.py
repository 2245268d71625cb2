"""
Decoupler architecture, the trainable model and checkpoints
"""

from cddsalign.model.decoupler import DecoupledSet, Decoupler, DecoderPath
from cddsalign.model.cdds import AlignmentModel, SparsityParameters
from cddsalign.model.checkpoint import Checkpoint, load_checkpoint, save_checkpoint

__all__ = [
    'DecoupledSet',
    'Decoupler',
    'DecoderPath',
    'AlignmentModel',
    'SparsityParameters',
    'Checkpoint',
    'load_checkpoint',
    'save_checkpoint',
]
