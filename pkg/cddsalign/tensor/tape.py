"""
Gradient tape

Operations performed while a Tape is active are appended to it in order;
backward() replays the recorded vector-Jacobian products in exact reverse.
A tape can be consumed once. Tapes are thread-local, so independent tapes may
run in parallel threads.
"""

import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, TYPE_CHECKING

import numpy as np

from cddsalign.core.errors import ContractError, TapeError

if TYPE_CHECKING:
    from cddsalign.tensor.tensor import Tensor

logger = logging.getLogger(__name__)

_local = threading.local()


def _stack() -> List[Optional["Tape"]]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def current_tape() -> Optional["Tape"]:
    """Return the innermost active tape of this thread, if any"""
    stack = _stack()
    return stack[-1] if stack else None


@contextmanager
def no_record() -> Iterator[None]:
    """Evaluate operations without recording them on the active tape"""
    stack = _stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


@dataclass
class TapeEntry:
    """
    One recorded operation.

    Attributes:
        name: Op name, used in diagnostics
        inputs: Operand tensors in call order
        output: Tensor produced by the op
        vjp: Maps the output cotangent to one cotangent (or None) per input
    """
    name: str
    inputs: Tuple["Tensor", ...]
    output: "Tensor"
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """
    Ordered record of differentiable operations.

    Usage:
        with Tape() as tape:
            loss = ops.mean(ops.sigmoid(w @ x))
        tape.backward(loss)
        w.grad
    """

    def __init__(self):
        self.entries: List[TapeEntry] = []
        self.visited: List[str] = []
        self._leaves: Dict[int, "Tensor"] = {}
        self._consumed = False

    def __enter__(self) -> "Tape":
        if self._consumed:
            raise TapeError("cannot re-enter a tape that has already been consumed")
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    @property
    def consumed(self) -> bool:
        return self._consumed

    def watch(self, *tensors: "Tensor") -> None:
        """Register leaves that must receive a gradient, zero if unreachable"""
        for t in tensors:
            if not t.requires_grad:
                raise ContractError("only tensors with requires_grad can be watched")
            self._leaves.setdefault(id(t), t)

    def record(self, name: str, inputs: Tuple["Tensor", ...], output: "Tensor",
               vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> None:
        if self._consumed:
            raise TapeError(f"op '{name}' recorded on a consumed tape")
        for t in inputs:
            if t.requires_grad and t.is_leaf:
                self._leaves.setdefault(id(t), t)
        output._attach(self)
        self.entries.append(TapeEntry(name, inputs, output, vjp))

    def backward(self, loss: "Tensor") -> None:
        """
        Populate .grad of every leaf seen by (or watched on) this tape with
        d(loss)/d(leaf). Gradients accumulate into existing buffers.
        """
        if self._consumed:
            raise TapeError("backward already ran on this tape; record a new one")
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape is not self:
            raise TapeError("loss was not recorded on this tape")

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for entry in reversed(self.entries):
            self.visited.append(entry.name)
            g_out = grads.pop(id(entry.output), None)
            if g_out is None:
                continue
            for t, g in zip(entry.inputs, entry.vjp(g_out)):
                if g is None or not t.requires_grad:
                    continue
                if g.shape != t.shape:
                    raise ContractError(
                        f"op '{entry.name}' produced gradient of shape {g.shape} for input {t.shape}"
                    )
                key = id(t)
                grads[key] = grads[key] + g if key in grads else g

        for key, leaf in self._leaves.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(leaf.data)
            leaf.grad = g if leaf.grad is None else leaf.grad + g

        self._consumed = True
        logger.debug(f"Backward pass over {len(self.entries)} ops, {len(self._leaves)} leaves")
