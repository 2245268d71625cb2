"""
Differentiable operations

Every op computes its forward value with numpy, refuses non-finite results,
and records a vector-Jacobian product on the active tape when any operand
requires grad.

Broadcasting is limited to scalar-tensor and row-vector bias (a 1-D operand
matching the last axis of the other operand). Anything else needs an explicit
reshape.
"""

import math
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from cddsalign.core.errors import ContractError, DimensionError, NumericError
from cddsalign.tensor.tape import current_tape
from cddsalign.tensor.tensor import ArrayLike, Tensor, as_tensor

Axis = Optional[Union[int, Tuple[int, ...]]]

_GELU_C = math.sqrt(2.0 / math.pi)


def emit(name: str, inputs: Tuple[Tensor, ...], value: np.ndarray,
         vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NumericError(name)
    out = Tensor._from_op(value)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(name, inputs, out, vjp)
    return out


def _quiet():
    return np.errstate(over="ignore", divide="ignore", invalid="ignore", under="ignore")


def _is_scalar(shape: Tuple[int, ...]) -> bool:
    return shape == () or shape == (1,)


def _result_shape(name: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    if _is_scalar(sb):
        return sa
    if _is_scalar(sa):
        return sb
    if b.ndim == 1 and a.ndim >= 2 and sb[0] == sa[-1]:
        return sa
    if a.ndim == 1 and b.ndim >= 2 and sa[0] == sb[-1]:
        return sb
    raise DimensionError(f"{name}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    if shape == (1,):
        return g.sum().reshape(1)
    return g.reshape(-1, shape[0]).sum(axis=0)


# ----------------------------------------------------------------------
# elementwise arithmetic
# ----------------------------------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _result_shape("add", a, b)
    with _quiet():
        y = a.data + b.data
    return emit("add", (a, b), y, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _result_shape("sub", a, b)
    with _quiet():
        y = a.data - b.data
    return emit("sub", (a, b), y, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _result_shape("mul", a, b)
    with _quiet():
        y = a.data * b.data
    return emit("mul", (a, b), y, lambda g: (_unbroadcast(g * b.data, a.shape),
                                              _unbroadcast(g * a.data, b.shape)))


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _result_shape("div", a, b)
    with _quiet():
        y = a.data / b.data

    def vjp(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))
    return emit("div", (a, b), y, vjp)


def scalar_mul(a: ArrayLike, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    with _quiet():
        y = a.data * c
    return emit("scalar_mul", (a,), y, lambda g: (g * c,))


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return emit("neg", (a,), -a.data, lambda g: (-g,))


def square(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    with _quiet():
        y = a.data * a.data
    return emit("square", (a,), y, lambda g: (2.0 * a.data * g,))


def sqrt(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    with _quiet():
        y = np.sqrt(a.data)
    return emit("sqrt", (a,), y, lambda g: (g / (2.0 * y),))


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    with _quiet():
        y = np.exp(a.data)
    return emit("exp", (a,), y, lambda g: (g * y,))


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    with _quiet():
        y = np.log(a.data)
    return emit("log", (a,), y, lambda g: (g / a.data,))


def sigmoid(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    y = special.expit(a.data)
    return emit("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),))


def gelu(a: ArrayLike) -> Tensor:
    """Tanh approximation of GELU"""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def vjp(g):
        d_inner = _GELU_C * (1.0 + 3.0 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)
    return emit("gelu", (a,), y, vjp)


# ----------------------------------------------------------------------
# shape manipulation
# ----------------------------------------------------------------------

def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        y = a.data.reshape(tuple(shape))
    except ValueError as e:
        raise DimensionError(f"reshape: {e}") from e
    return emit("reshape", (a,), y, lambda g: (g.reshape(a.shape),))


def transpose(a: ArrayLike) -> Tensor:
    """Swap the last two axes"""
    a = as_tensor(a)
    if a.ndim < 2:
        raise DimensionError(f"transpose needs at least 2 axes, got shape {a.shape}")
    y = np.swapaxes(a.data, -1, -2)
    return emit("transpose", (a,), y, lambda g: (np.swapaxes(g, -1, -2),))


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    if not parts:
        raise ContractError("concat needs at least one tensor")
    try:
        y = np.concatenate([t.data for t in parts], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: {e}") from e
    bounds = np.cumsum([t.shape[axis] for t in parts])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))
    return emit("concat", parts, y, vjp)


def take_rows(a: ArrayLike, index: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    y = a.data[idx]

    def vjp(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)
    return emit("take_rows", (a,), y, vjp)


def diagonal(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"diagonal needs a square matrix, got shape {a.shape}")
    y = np.diagonal(a.data).copy()

    def vjp(g):
        return (np.diag(g),)
    return emit("diagonal", (a,), y, vjp)


# ----------------------------------------------------------------------
# products and reductions
# ----------------------------------------------------------------------

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """
    Matrix product. Accepts (n,k)@(k,m), (B,n,k)@(k,m) and (B,n,k)@(B,k,m).
    """
    a, b = as_tensor(a), as_tensor(b)
    ok = (a.ndim in (2, 3) and b.ndim == 2) or (a.ndim == 3 and b.ndim == 3 and a.shape[0] == b.shape[0])
    if not ok or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    y = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        if b.ndim == 2 and gb.ndim == 3:
            gb = gb.sum(axis=0)
        return (ga, gb)
    return emit("matmul", (a, b), y, vjp)


def _expand_reduced(g: np.ndarray, shape: Tuple[int, ...], axis: Axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(np.asarray(g).reshape((1,) * len(shape)), shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        axes = tuple(ax % len(shape) for ax in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum(a: ArrayLike, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    y = np.sum(a.data, axis=axis, keepdims=keepdims)
    return emit("sum", (a,), np.asarray(y),
                lambda g: (np.array(_expand_reduced(g, a.shape, axis, keepdims)),))


def mean(a: ArrayLike, axis: Axis = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    y = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.size / np.asarray(y).size

    def vjp(g):
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)) / count,)
    return emit("mean", (a,), np.asarray(y), vjp)


def softmax(a: ArrayLike) -> Tensor:
    """Softmax over the last axis"""
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[-1] < 1:
        raise ContractError("softmax needs at least one element on the last axis")
    y = special.softmax(a.data, axis=-1)

    def vjp(g):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)
    return emit("softmax", (a,), y, vjp)


def log_softmax(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    y = special.log_softmax(a.data, axis=-1)

    def vjp(g):
        return (g - np.exp(y) * np.sum(g, axis=-1, keepdims=True),)
    return emit("log_softmax", (a,), y, vjp)


def logsumexp(a: ArrayLike, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    log(sum(exp(a))) over the last axis, restricted to entries where mask is
    True. Every slice must keep at least one entry.
    """
    a = as_tensor(a)
    if mask is None:
        mask = np.ones(a.shape, dtype=bool)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    if not np.all(mask.any(axis=-1)):
        raise ContractError("logsumexp: a slice has no unmasked entries")
    masked = np.where(mask, a.data, -np.inf)
    y = special.logsumexp(masked, axis=-1)
    weights = np.where(mask, np.exp(masked - y[..., None]), 0.0)
    return emit("logsumexp", (a,), np.asarray(y), lambda g: (np.asarray(g)[..., None] * weights,))


# ----------------------------------------------------------------------
# vector geometry
# ----------------------------------------------------------------------

_NORM_FLOOR = 1e-12


def l2_norm(a: ArrayLike) -> Tensor:
    """Euclidean norm over the last axis"""
    a = as_tensor(a)
    n = np.sqrt(np.sum(a.data * a.data, axis=-1))

    def vjp(g):
        return (np.asarray(g)[..., None] * a.data / np.maximum(n, _NORM_FLOOR)[..., None],)
    return emit("l2_norm", (a,), np.asarray(n), vjp)


def cosine_similarity(a: ArrayLike, b: ArrayLike) -> Tensor:
    """
    Pairwise cosine similarity between rows: (n,d),(m,d) -> (n,m).
    Two 1-D vectors give a scalar.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 1 and b.ndim == 1:
        return reshape(cosine_similarity(reshape(a, (1, -1)), reshape(b, (1, -1))), ())
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"cosine_similarity: incompatible shapes {a.shape} and {b.shape}")
    na = np.maximum(np.linalg.norm(a.data, axis=1), _NORM_FLOOR)
    nb = np.maximum(np.linalg.norm(b.data, axis=1), _NORM_FLOOR)
    an = a.data / na[:, None]
    bn = b.data / nb[:, None]
    y = an @ bn.T

    def vjp(g):
        ga = (g @ bn - np.sum(g * y, axis=1)[:, None] * an) / na[:, None]
        gb = (g.T @ an - np.sum(g * y, axis=0)[:, None] * bn) / nb[:, None]
        return (ga, gb)
    return emit("cosine_similarity", (a, b), y, vjp)


# ----------------------------------------------------------------------
# layers
# ----------------------------------------------------------------------

def layer_norm(x: ArrayLike, gamma: ArrayLike, beta: Optional[ArrayLike] = None,
               eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis with affine gain (and optional shift)"""
    x, gamma = as_tensor(x), as_tensor(gamma)
    if gamma.shape != (x.shape[-1],):
        raise DimensionError(f"layer_norm: gain shape {gamma.shape} does not match {x.shape}")
    inputs = (x, gamma)
    if beta is not None:
        beta = as_tensor(beta)
        if beta.shape != gamma.shape:
            raise DimensionError(f"layer_norm: shift shape {beta.shape} does not match {gamma.shape}")
        inputs = (x, gamma, beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    y = xhat * gamma.data
    if beta is not None:
        y = y + beta.data

    def vjp(g):
        gxhat = g * gamma.data
        gx = inv_std * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        ggamma = (g * xhat).reshape(-1, x.shape[-1]).sum(axis=0)
        grads = [gx, ggamma]
        if beta is not None:
            grads.append(g.reshape(-1, x.shape[-1]).sum(axis=0))
        return tuple(grads)
    return emit("layer_norm", inputs, y, vjp)


def linear_layer(x: ArrayLike, weight: ArrayLike, bias: Optional[ArrayLike] = None) -> Tensor:
    """x @ weight (+ bias as a row vector)"""
    y = matmul(x, weight)
    if bias is not None:
        y = add(y, bias)
    return y


def detach(a: ArrayLike) -> Tensor:
    return as_tensor(a).detach()


# operator overloads
Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__truediv__ = lambda self, other: div(self, other)
Tensor.__rtruediv__ = lambda self, other: div(other, self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__matmul__ = lambda self, other: matmul(self, other)
Tensor.T = property(lambda self: transpose(self))
