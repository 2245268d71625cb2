"""
Optimizer and training loop
"""

from cddsalign.training.optimizer import AdamW, Moments, optimizer_step
from cddsalign.training.trainer import StepResult, Trainer, train

__all__ = [
    'AdamW',
    'Moments',
    'optimizer_step',
    'StepResult',
    'Trainer',
    'train',
]
