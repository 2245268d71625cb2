"""
Adam with decoupled weight decay
"""

import logging
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from cddsalign.core.errors import ConfigError, DimensionError
from cddsalign.tensor.layers import Parameter

logger = logging.getLogger(__name__)


@dataclass
class Moments:
    first: np.ndarray
    second: np.ndarray


def optimizer_step(param: np.ndarray, grad: np.ndarray, moments: Moments, step: int,
                   lr: float, weight_decay: float,
                   betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> np.ndarray:
    """
    One bias-corrected Adam update followed by decay applied to the parameter
    itself. Updates moments in place and returns the new parameter value.

    Args:
        param: Current value
        grad: Gradient of the loss
        moments: First and second moment buffers
        step: 1-based update count used for bias correction
        lr: Learning rate
        weight_decay: Decoupled decay coefficient
    """
    if grad.shape != param.shape:
        raise DimensionError(f"gradient shape {grad.shape} != parameter shape {param.shape}")
    beta1, beta2 = betas
    moments.first = beta1 * moments.first + (1.0 - beta1) * grad
    moments.second = beta2 * moments.second + (1.0 - beta2) * grad * grad
    first_hat = moments.first / (1.0 - beta1 ** step)
    second_hat = moments.second / (1.0 - beta2 ** step)
    updated = param - lr * first_hat / (np.sqrt(second_hat) + eps)
    return updated - lr * weight_decay * param


class AdamW:
    """
    Optimizer over a fixed, named set of parameters.

    Usage:
        optimizer = AdamW(model.trainable_parameters(config), lr=1e-3)
        ... tape.backward(loss) ...
        optimizer.step()
        optimizer.zero_grad()
    """

    def __init__(self, params: Dict[str, Parameter], lr: float = 1e-3,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-4):
        if lr <= 0:
            raise ConfigError(f"invalid learning rate: {lr}")
        self.params = dict(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.moments: Dict[str, Moments] = {
            name: Moments(np.zeros(p.shape), np.zeros(p.shape)) for name, p in self.params.items()
        }

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros(p.shape)
            p.assign(optimizer_step(p.numpy(), grad, self.moments[name], self.t,
                                    self.lr, self.weight_decay, self.betas, self.eps))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def first_moments(self) -> Dict[str, np.ndarray]:
        return {name: m.first for name, m in self.moments.items()}

    def second_moments(self) -> Dict[str, np.ndarray]:
        return {name: m.second for name, m in self.moments.items()}

    def load_moments(self, first: Dict[str, np.ndarray], second: Dict[str, np.ndarray], t: int) -> None:
        for name, m in self.moments.items():
            if name in first:
                m.first = np.array(first[name], dtype=np.float64)
                m.second = np.array(second[name], dtype=np.float64)
        self.t = t
