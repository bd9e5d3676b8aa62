# adapter.py
# --------------------------------------------------------------------------------------
# Purpose:
#   Trainable affine bridge from input-model width to meta-model embedding width
#
# Init:
#   square + identity_when_square -> W = I (pure substitution)
#   otherwise                      -> W ~ N(0, 1/d_in)
#   bias = 0
# --------------------------------------------------------------------------------------

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from core.errors import DimensionError
from core.nanoformer.model import ActivationBundle
from core.tensorkit import ops
from core.tensorkit.rng import make_rng
from core.tensorkit.tensor import Tensor, parameter_digest


@dataclass
class Adapter:
    weight: Tensor          #[d_in, d_out]
    bias: Tensor            #[d_out]
    identity_when_square: bool = True

    @classmethod
    def create(cls, d_in: int, d_out: int, seed: int, identity_when_square: bool = True) -> "Adapter":
        if d_in <= 0 or d_out <= 0:
            raise DimensionError(f"adapter dims must be positive, got {d_in} -> {d_out}")
        if identity_when_square and d_in == d_out:
            w = np.eye(d_in, dtype=np.float32)
        else:
            w = (make_rng(seed, "adapter").standard_normal((d_in, d_out)) / np.sqrt(d_in)).astype(np.float32)
        return cls(Tensor(w, requires_grad=True, name="adapter.w"),
                   Tensor(np.zeros(d_out, dtype=np.float32), requires_grad=True, name="adapter.b"),
                   identity_when_square)

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]

    def digest(self) -> str:
        return parameter_digest([("adapter.w", self.weight), ("adapter.b", self.bias)])

    def copy(self) -> "Adapter":
        return Adapter(Tensor(self.weight.data.copy(), requires_grad=True, name="adapter.w"),
                       Tensor(self.bias.data.copy(), requires_grad=True, name="adapter.b"),
                       self.identity_when_square)


def project_tensor(adapter: Adapter, vectors: np.ndarray) -> Tensor:
    """[..., d_in] -> [..., d_out]; taped when a tape is active"""
    vectors = np.asarray(vectors, dtype=adapter.weight.dtype)
    if vectors.ndim < 2 or vectors.shape[-1] != adapter.d_in:
        raise DimensionError(f"adapter expects [..., {adapter.d_in}], got {vectors.shape}")
    return ops.add(ops.matmul(Tensor(vectors), adapter.weight), adapter.bias)


def project(adapter: Adapter, bundle: ActivationBundle) -> np.ndarray:
    """Per-vector affine map, order preserved; [n, d_out]"""
    if len(bundle) == 0:
        return np.zeros((0, adapter.d_out), dtype=np.float32)
    if bundle.d_model != adapter.d_in:
        raise DimensionError(f"bundle width {bundle.d_model} != adapter input {adapter.d_in}")
    return project_tensor(adapter, bundle.vectors).data
