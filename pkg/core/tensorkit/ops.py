# ops.py
# --------------------------------------------------------------------------------------
# Purpose:
#   The differentiable op set the transformer needs, each with its backward rule
#
# What it does:
#   Elementwise (add / mul / scale / gelu), shape (transpose / reshape / take),
#   contraction (matmul), normalisation (softmax / layer_norm), masking
#   (causal_mask), lookup (embedding), row substitution (override_rows) and the
#   training loss (cross_entropy).
#
# Notes:
#   - Broadcasting is limited to trailing-dimension broadcast in add (bias rows)
#   - causal_mask writes a large finite negative so softmax gives exact zeros and
#     later positions cannot change earlier outputs by a single bit
# --------------------------------------------------------------------------------------

from __future__ import annotations

import math
from typing import Sequence, Union

import numpy as np

from core.errors import ContractError, DimensionError, InputError
from core.tensorkit.tensor import Tensor, check_finite, make_output

MASK_VALUE = -1e9
GELU_C = math.sqrt(2.0 / math.pi)
LN_EPS = 1e-5

IndexLike = Union[int, Sequence[int], np.ndarray]


def add(a: Tensor, b: Tensor) -> Tensor:
    """a + b; b may broadcast over a's leading dimensions (b.shape == a.shape[-b.ndim:])"""
    if a.shape == b.shape:
        def bw(g):
            return g, g
    elif b.ndim < a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        lead = tuple(range(a.ndim - b.ndim))

        def bw(g):
            return g, g.sum(axis=lead)
    else:
        raise DimensionError(f"add: cannot broadcast {b.shape} onto {a.shape}")
    return make_output("add", a.data + b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul: shape mismatch {a.shape} vs {b.shape}")

    def bw(g):
        return g * b.data, g * a.data

    return make_output("mul", a.data * b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return make_output("scale", a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Contraction over the last axis of a and the second-to-last of b
    Supported:
      [..., m, k] @ [k, n]            (weights shared over the batch)
      [B..., m, k] @ [B..., k, n]     (same batch dims, e.g. attention)
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    if b.ndim == 2:
        k, n = b.shape

        def bw(g):
            ga = g @ b.data.T
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            return ga, gb
    elif b.ndim == a.ndim and a.shape[:-2] == b.shape[:-2]:
        def bw(g):
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = np.swapaxes(a.data, -1, -2) @ g
            return ga, gb
    else:
        raise DimensionError(f"matmul batch dims differ: {a.shape} @ {b.shape}")
    return make_output("matmul", np.matmul(a.data, b.data), (a, b), bw)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose: {axes} is not a permutation of {a.ndim} axes")
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(a.data, axes))
    return make_output("transpose", out, (a,), lambda g: (np.transpose(g, inverse),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(x) for x in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape {a.shape} -> {shape}: {exc}") from exc
    return make_output("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def take(a: Tensor, index: IndexLike, axis: int = 0) -> Tensor:
    """np.take with a backward pass; an int index drops the axis"""
    axis = axis % a.ndim
    idx = np.asarray(index, dtype=np.int64)
    n = a.shape[axis]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise InputError(f"take: index out of range for axis {axis} of size {n}")
    out = np.take(a.data, idx, axis=axis)

    def bw(g):
        ga = np.zeros_like(a.data)
        if idx.ndim == 0:
            sl = [slice(None)] * a.ndim
            sl[axis] = int(idx)
            ga[tuple(sl)] += g
        else:
            np.add.at(np.moveaxis(ga, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (ga,)

    return make_output("take", out, (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    return make_output("sum", np.asarray(a.data.sum(), dtype=a.dtype), (a,),
                       lambda g: (np.broadcast_to(g, a.shape).copy(),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax; raises NumericError on non-finite input"""
    check_finite("softmax (input)", x.data)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_output("softmax", y, (x,), bw)


def causal_mask(scores: Tensor) -> Tensor:
    """Fill entries above the diagonal of the trailing [T, T] block with MASK_VALUE"""
    if scores.ndim < 2 or scores.shape[-1] != scores.shape[-2]:
        raise DimensionError(f"causal_mask needs [..., T, T], got {scores.shape}")
    t = scores.shape[-1]
    upper = np.triu(np.ones((t, t), dtype=bool), k=1)
    out = np.where(upper, np.asarray(MASK_VALUE, dtype=scores.dtype), scores.data)
    return make_output("causal_mask", out, (scores,), lambda g: (np.where(upper, 0.0, g).astype(g.dtype),))


def gelu(x: Tensor) -> Tensor:
    """tanh approximation"""
    v = x.data
    inner = GELU_C * (v + 0.044715 * v ** 3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def bw(g):
        d_inner = GELU_C * (1.0 + 3.0 * 0.044715 * v ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * d_inner),)

    return make_output("gelu", out, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """
    Normalise over the last axis, then gain * x_hat + bias
    A constant row normalises to zeros (output == bias)
    """
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain/bias must be ({d},), got {gain.shape} / {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gain.data + bias.data

    def bw(g):
        g2 = g.reshape(-1, d)
        dgain = (g2 * xhat.reshape(-1, d)).sum(axis=0)
        dbias = g2.sum(axis=0)
        dxhat = g * gain.data
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return make_output("layer_norm", out, (x, gain, bias), bw)


def embedding(weight: Tensor, ids) -> Tensor:
    """Row lookup weight[ids]; ids may have any shape, output is [*ids.shape, d]"""
    ids = np.asarray(ids, dtype=np.int64)
    if weight.ndim != 2:
        raise DimensionError(f"embedding table must be 2-d, got {weight.shape}")
    v, d = weight.shape
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        raise InputError(f"token id out of range [0, {v})")
    out = weight.data[ids]

    def bw(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, d))
        return (gw,)

    return make_output("embedding", out, (weight,), bw)


def override_rows(base: Tensor, positions: Sequence[int], values: Tensor) -> Tensor:
    """
    Replace rows of a [B, T, d] tensor at the given sequence positions
    values is [B, len(positions), d]; gradient flows to values at replaced rows
    and to base everywhere else
    """
    pos = np.asarray(list(positions), dtype=np.int64)
    if base.ndim != 3:
        raise DimensionError(f"override_rows needs [B, T, d], got {base.shape}")
    b, t, d = base.shape
    if values.shape != (b, len(pos), d):
        raise DimensionError(f"override values must be {(b, len(pos), d)}, got {values.shape}")
    if len(set(pos.tolist())) != len(pos):
        raise ContractError("override positions must be unique")
    if pos.size and (pos.min() < 0 or pos.max() >= t):
        raise InputError(f"override position out of range [0, {t})")
    out = base.data.copy()
    out[:, pos] = values.data

    def bw(g):
        gb = g.copy()
        gb[:, pos] = 0.0
        return gb, g[:, pos]

    return make_output("override_rows", out, (base, values), bw)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer targets under row-wise softmax of [n, V] logits"""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects [n, V] logits, got {logits.shape}")
    n, v = logits.shape
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if t.shape != (n,):
        raise DimensionError(f"cross_entropy: {t.shape[0]} targets for {n} rows")
    if n == 0:
        raise ContractError("cross_entropy over zero rows")
    if t.min() < 0 or t.max() >= v:
        raise InputError(f"target index out of range [0, {v})")
    check_finite("cross_entropy (input)", logits.data)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = np.asarray(-logp[rows, t].mean(), dtype=logits.dtype)

    def bw(g):
        p = np.exp(logp)
        p[rows, t] -= 1.0
        return (p * (g / n),)

    return make_output("cross_entropy", loss, (logits,), bw)


def log_softmax_np(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Untaped helper for evaluation code"""
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
