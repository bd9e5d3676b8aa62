# tensor.py
# --------------------------------------------------------------------------------------
# Purpose:
#   Dense tensors with an explicit tape for reverse-mode differentiation
#
# What it does:
#   1) Tensor wraps a row-major numpy array (float32 by default, float64 for
#      finite-difference oracles), an optional gradient and a requires_grad flag
#   2) Tape records every differentiable op executed while it is active
#   3) backward(tape, loss) replays the tape in reverse, visiting every entry once
#
# Notes:
#   - Ops only record when a tape is active AND an input requires grad, so
#     inference (capture, evaluation) runs untaped
#   - Every op output and every propagated gradient is checked for NaN/Inf
# --------------------------------------------------------------------------------------

from __future__ import annotations

import contextvars
import hashlib
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ContractError, NumericError

DEFAULT_DTYPE = np.float32
FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """
    Dense array + gradient slot
    - data: numpy array, C-order; shape () is used for scalar losses
    - grad: same-shape array once backward() ran (zeros if unreached)
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in FLOAT_DTYPES else DEFAULT_DTYPE
        self.data: np.ndarray = np.asarray(data, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"


@dataclass
class TapeEntry:
    """One executed op: inputs, output and the closure mapping d(out) -> d(inputs)"""
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


_ACTIVE_TAPE: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar("active_tape", default=None)


class Tape:
    """
    Ordered record of differentiable ops
    Use as a context manager:
        with Tape() as tape:
            loss = model_loss(...)
        backward(tape, loss)
    """

    def __init__(self):
        self.entries: List[TapeEntry] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> bool:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, entry: TapeEntry) -> None:
        self.entries.append(entry)


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


def check_finite(op: str, data: np.ndarray) -> None:
    if not np.isfinite(data).all():
        raise NumericError(f"{op} produced non-finite values")


def make_output(op: str, data: np.ndarray, inputs: Sequence[Tensor],
                backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """
    Wrap an op result, validate it and record it on the active tape
    The output dtype follows the first input so float64 oracles stay float64
    """
    check_finite(op, data)
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad, dtype=inputs[0].dtype if inputs else None)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and needs_grad:
        tape.record(TapeEntry(op=op, inputs=tuple(inputs), output=out, backward=backward_fn))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """
    Reverse-mode pass over the tape
    - loss must be a single-element tensor produced under this tape
    - every requires_grad tensor seen on the tape gets .grad (zeros if the loss
      does not depend on it)
    - tensors that never reached the tape keep whatever .grad they had; training
      loops call zero_grad on their parameter list before each taped pass
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    #Reverse execution order; each entry visited exactly once
    for entry in reversed(tape.entries):
        g_out = grads.get(id(entry.output))
        if g_out is None:
            continue
        in_grads = entry.backward(g_out)
        for t, g in zip(entry.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            if g.shape != t.shape:
                raise ContractError(f"{entry.op} returned grad {g.shape} for input {t.shape}")
            check_finite(f"{entry.op} (backward)", g)
            key = id(t)
            grads[key] = grads[key] + g if key in grads else g

    #Populate .grad for everything on the tape that asked for it
    seen: Dict[int, Tensor] = {}
    for entry in tape.entries:
        for t in entry.inputs:
            if t.requires_grad:
                seen[id(t)] = t
        if entry.output.requires_grad:
            seen[id(entry.output)] = entry.output
    for key, t in seen.items():
        g = grads.get(key)
        t.grad = np.asarray(g, dtype=t.dtype) if g is not None else np.zeros_like(t.data)


def zero_grad(params: Iterable[Tensor]) -> None:
    """Resets .grad to zeros so a parameter the next pass never touches contributes nothing"""
    for p in params:
        p.grad = np.zeros_like(p.data)


def parameter_digest(named_params: Iterable[Tuple[str, Tensor]]) -> str:
    """sha256 over (name, shape, bytes) of every parameter; used for the frozen-model contract"""
    h = hashlib.sha256()
    for name, t in named_params:
        h.update(name.encode("utf-8"))
        h.update(str(t.shape).encode("ascii"))
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()
