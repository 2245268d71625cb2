"""
Dense double-precision tensor with optional tape participation
"""

from typing import Optional, Sequence, Tuple, Union, TYPE_CHECKING

import numpy as np

from cddsalign.core.errors import DimensionError, NumericError, TapeError

if TYPE_CHECKING:
    from cddsalign.tensor.tape import Tape

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


class Tensor:
    """
    Immutable numeric array. Only the grad buffer changes after creation.

    Attributes:
        requires_grad: Whether gradients flow to this tensor
        grad: Gradient buffer of identical shape, populated by Tape.backward
        name: Optional label used in logs and checkpoints
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = _frozen(data)
        if arr.size == 0:
            raise DimensionError(f"tensor must have at least one element, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor", "tensor created from non-finite values")
        self._data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._tape: Optional["Tape"] = None
        self._is_leaf = True

    @classmethod
    def _from_op(cls, data: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out._data = _frozen(data)
        out.requires_grad = False
        out.grad = None
        out.name = None
        out._tape = None
        out._is_leaf = True
        return out

    def _attach(self, tape: "Tape") -> None:
        self._tape = tape
        self._is_leaf = False
        self.requires_grad = True

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    @property
    def is_leaf(self) -> bool:
        return self._is_leaf

    @property
    def tape(self) -> Optional["Tape"]:
        return self._tape

    def numpy(self) -> np.ndarray:
        """Writable copy of the values"""
        return np.array(self._data)

    def item(self) -> float:
        return float(self._data.reshape(-1)[0]) if self._data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor._from_op(self._data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self._tape is None:
            raise TapeError("tensor was not produced on an active tape")
        self._tape.backward(self)

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"


def as_tensor(value: ArrayLike) -> Tensor:
    """Wrap constants; tensors pass through unchanged"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)
