"""
Shared fixtures: small synthetic data, small training configs and a
central-difference gradient checker.
"""

from typing import Callable, List, Sequence

import numpy as np
import pytest

from cddsalign.config.models import DecouplerConfig, TrainConfig
from cddsalign.data.synthetic import generate_synthetic, split_synthetic
from cddsalign.tensor import ops
from cddsalign.tensor.layers import Parameter
from cddsalign.tensor.tape import Tape
from cddsalign.tensor.tensor import Tensor

FD_STEP = 1e-6


def _scalarize(out: Tensor, projection: np.ndarray) -> Tensor:
    if out.size == 1:
        return ops.reshape(out, ())
    return ops.sum(ops.mul(out, Tensor(projection)))


def gradient_errors(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], seed: int = 0) -> List[float]:
    """
    Relative error between tape gradients and central differences, one per
    input. Non-scalar outputs are reduced with a fixed random projection.
    """
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    params = [Parameter(x) for x in inputs]
    out = fn(*[Tensor(x) for x in inputs])
    projection = np.random.default_rng(seed).normal(size=out.shape)
    with Tape() as tape:
        loss = _scalarize(fn(*params), projection)
    tape.backward(loss)

    def evaluate(values: List[np.ndarray]) -> float:
        return _scalarize(fn(*[Tensor(v) for v in values]), projection).item()

    errors = []
    for k, x in enumerate(inputs):
        numeric = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            plus = [v.copy() for v in inputs]
            minus = [v.copy() for v in inputs]
            plus[k][idx] += FD_STEP
            minus[k][idx] -= FD_STEP
            numeric[idx] = (evaluate(plus) - evaluate(minus)) / (2.0 * FD_STEP)
        analytic = params[k].grad
        scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-8)
        errors.append(float(np.linalg.norm(analytic - numeric) / scale))
    return errors


@pytest.fixture
def check_gradients():
    """Assert that every input's gradient matches central differences"""
    def check(fn, *inputs, tolerance: float = 1e-6):
        errors = gradient_errors(fn, inputs)
        assert max(errors) < tolerance, f"relative gradient errors {errors}"
    return check


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_split():
    """24 training and 12 test images, d = 8"""
    batch, _ = generate_synthetic(n_pairs=36, n_v=3, n_t=4, d=8, d_latent=2, texts_per_image=1,
                                  noise_std=0.05, seed=7)
    return split_synthetic(batch, 12)


@pytest.fixture
def tiny_train(tiny_split):
    return tiny_split[0]


@pytest.fixture
def tiny_test(tiny_split):
    return tiny_split[1]


@pytest.fixture
def tiny_config():
    return TrainConfig(
        epochs=2,
        batch_size=4,
        learning_rate=1e-2,
        seed=3,
        n_bins=8,
        decoupler=DecouplerConfig(d=8, n_layers=1, z=2, noise_std=0.1),
    )
