"""
Embedding batches, the synthetic generator and the binary container formats
"""

from cddsalign.data.batch import EmbeddingBatch
from cddsalign.data.synthetic import SyntheticGroundTruth, generate_synthetic, split_synthetic
from cddsalign.data.container import (
    read_container, read_tensor_archive, sidecar_path, write_container, write_tensor_archive,
)

__all__ = [
    'EmbeddingBatch',
    'SyntheticGroundTruth',
    'generate_synthetic',
    'split_synthetic',
    'read_container',
    'write_container',
    'read_tensor_archive',
    'write_tensor_archive',
    'sidecar_path',
]
