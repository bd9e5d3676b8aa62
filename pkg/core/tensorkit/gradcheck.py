# gradcheck.py
# --------------------------------------------------------------------------------------
# Purpose:
#   Compare tape gradients against central finite differences
#
# What it does:
#   1) Promotes the inputs to float64 (in place) so the oracle is meaningful
#   2) Runs fn under a tape and backward() for the analytic gradient
#      (or takes a supplied one, e.g. from a deliberately broken rule)
#   3) Perturbs every coordinate (or a seeded subset) by +/-h untaped
#
# Error measure per coordinate:
#   |a - n| / max(|a|, |n|, floor)
#   The floor keeps near-zero gradients from turning rounding noise into
#   huge relative errors.
# --------------------------------------------------------------------------------------

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ContractError
from core.tensorkit.rng import make_rng
from core.tensorkit.tensor import Tape, Tensor, backward

DEFAULT_TOL = 1e-4
DEFAULT_H = 1e-3
DEFAULT_FLOOR = 1e-2


@dataclass
class GradCheckReport:
    max_rel_error: float
    fraction_within_tol: float
    n_coords: int
    tol: float
    worst: Tuple[int, int]          #(input index, flat coordinate)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    a = np.abs(analytic)
    n = np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), floor)


def _scalar(out: Tensor) -> float:
    if out.size != 1:
        raise ContractError(f"grad_check fn must return a scalar, got shape {out.shape}")
    return out.item()


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    tol: float = DEFAULT_TOL,
    h: float = DEFAULT_H,
    floor: float = DEFAULT_FLOOR,
    analytic: Optional[Sequence[np.ndarray]] = None,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """
    fn(*inputs) -> scalar Tensor
    max_coords caps the number of perturbed coordinates per input (seeded subset)
    """
    for t in inputs:
        t.data = np.ascontiguousarray(t.data, dtype=np.float64)

    if analytic is None:
        for t in inputs:
            t.requires_grad = True
        with Tape() as tape:
            loss = fn(*inputs)
        backward(tape, loss)
        analytic = [t.grad.copy() for t in inputs]
    if len(analytic) != len(inputs):
        raise ContractError("one analytic gradient per input is required")

    rng = make_rng(seed, "grad_check")
    errors: List[np.ndarray] = []
    coords: List[np.ndarray] = []
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        a_flat = np.asarray(a, dtype=np.float64).reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        numeric = np.empty(idx.size)
        for k, j in enumerate(idx):
            orig = flat[j]
            flat[j] = orig + h
            fp = _scalar(fn(*inputs))
            flat[j] = orig - h
            fm = _scalar(fn(*inputs))
            flat[j] = orig
            numeric[k] = (fp - fm) / (2.0 * h)
        errors.append(relative_error(a_flat[idx], numeric, floor))
        coords.append(idx)

    all_err = np.concatenate(errors) if errors else np.zeros(0)
    if all_err.size == 0:
        return GradCheckReport(0.0, 1.0, 0, tol, (-1, -1))
    flat_worst = int(np.argmax(all_err))
    offset = 0
    worst = (-1, -1)
    for i, e in enumerate(errors):
        if flat_worst < offset + e.size:
            worst = (i, int(coords[i][flat_worst - offset]))
            break
        offset += e.size
    return GradCheckReport(
        max_rel_error=float(all_err.max()),
        fraction_within_tol=float(np.mean(all_err <= tol)),
        n_coords=int(all_err.size),
        tol=tol,
        worst=worst,
    )
