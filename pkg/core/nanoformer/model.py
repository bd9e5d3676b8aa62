# model.py
# --------------------------------------------------------------------------------------
# Purpose:
#   Decoder-only transformer on top of tensorkit, with the two hooks the
#   interpretability pipeline needs: residual-stream taps and embedding overrides
#
# What it does:
#   1) ModelConfig (frozen, validated) + build_model: seeded scaled-normal init
#   2) transformer_pass: token embedding -> [row overrides] -> + positional
#      embedding -> pre-norm blocks -> final norm -> logits (tied W_E^T by default)
#   3) forward / forward_with_taps / forward_with_overrides / forward_embedded
#   4) greedy_generate for inspecting what a conditioned model replies
#
# Notes:
#   - A tap reads the residual stream at the OUTPUT of block i, at one token
#     position (default: the last prompt token)
#   - Overrides replace the token-embedding row only; the positional embedding
#     is still added, so placeholder order survives injection
# --------------------------------------------------------------------------------------

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import orjson

from core.errors import ConfigError, DimensionError, InputError, NumericError, TapError
from core.tensorkit import ops
from core.tensorkit.rng import make_rng
from core.tensorkit.tensor import Tensor, parameter_digest
from core.utils.logging_setup import get_logger

logger = get_logger("nanoformer")

DEFAULT_TAP_STRIDE = 4      #one tap every 4 layers
DEFAULT_INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    d_model: int
    n_heads: int
    d_ff: int
    vocab_size: int
    context_len: int
    seed: int = 0
    tie_embeddings: bool = True
    init_std: float = DEFAULT_INIT_STD

    def __post_init__(self):
        for name in ("n_layers", "d_model", "n_heads", "d_ff", "vocab_size", "context_len"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.context_len < 2:
            raise ConfigError(f"context_len must be >= 2, got {self.context_len}")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ConfigError(f"seed must fit in u64, got {self.seed}")
        if not self.init_std > 0:
            raise ConfigError(f"init_std must be positive, got {self.init_std}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        if not isinstance(d, Mapping):
            raise ConfigError(f"model config must be a mapping, got {type(d).__name__}")
        try:
            return cls(**dict(d))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad model config: {exc}") from exc

    def digest(self) -> str:
        return hashlib.sha256(orjson.dumps(self.to_dict(), option=orjson.OPT_SORT_KEYS)).hexdigest()


def parameter_count(config: ModelConfig) -> int:
    """Closed form: embeddings + per-block (attn 4d^2+4d, mlp 2d*ff+ff+d, 2 norms 4d) + final norm"""
    v, c, d, f, n = config.vocab_size, config.context_len, config.d_model, config.d_ff, config.n_layers
    total = v * d + c * d + n * (4 * d * d + 2 * d * f + 9 * d + f) + 2 * d
    if not config.tie_embeddings:
        total += d * v
    return total


def _block_shapes(i: int, d: int, f: int) -> List[Tuple[str, Tuple[int, ...], str]]:
    #(name, shape, init kind)
    p = f"blocks.{i}."
    return [
        (p + "ln1.g", (d,), "one"), (p + "ln1.b", (d,), "zero"),
        (p + "attn.wq", (d, d), "normal"), (p + "attn.bq", (d,), "zero"),
        (p + "attn.wk", (d, d), "normal"), (p + "attn.bk", (d,), "zero"),
        (p + "attn.wv", (d, d), "normal"), (p + "attn.bv", (d,), "zero"),
        (p + "attn.wo", (d, d), "residual"), (p + "attn.bo", (d,), "zero"),
        (p + "ln2.g", (d,), "one"), (p + "ln2.b", (d,), "zero"),
        (p + "mlp.w1", (d, f), "normal"), (p + "mlp.b1", (f,), "zero"),
        (p + "mlp.w2", (f, d), "residual"), (p + "mlp.b2", (d,), "zero"),
    ]


def parameter_layout(config: ModelConfig) -> List[Tuple[str, Tuple[int, ...], str]]:
    d, f = config.d_model, config.d_ff
    layout = [
        ("tok_emb", (config.vocab_size, d), "normal"),
        ("pos_emb", (config.context_len, d), "normal"),
    ]
    for i in range(config.n_layers):
        layout.extend(_block_shapes(i, d, f))
    layout += [("ln_f.g", (d,), "one"), ("ln_f.b", (d,), "zero")]
    if not config.tie_embeddings:
        layout.append(("unembed", (d, config.vocab_size), "normal"))
    return layout


class Transformer:
    """Parameters in a fixed, named order plus the config that produced them"""

    def __init__(self, config: ModelConfig, params: Dict[str, Tensor]):
        self.config = config
        self.params = params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self.params.items())

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def digest(self) -> str:
        return parameter_digest(self.named_parameters())

    def requires_grad_(self, flag: bool) -> "Transformer":
        for t in self.params.values():
            t.requires_grad = flag
        return self

    def to_dtype(self, dtype) -> "Transformer":
        """In-place cast (float64 for finite-difference checks)"""
        for t in self.params.values():
            t.data = t.data.astype(dtype)
        return self

    def copy(self) -> "Transformer":
        fresh = {n: Tensor(t.data.copy(), requires_grad=t.requires_grad, name=n) for n, t in self.params.items()}
        return Transformer(self.config, fresh)


def build_model(config: ModelConfig) -> Transformer:
    """Deterministic init from config.seed: N(0, std), residual projections std/sqrt(2L)"""
    rng = make_rng(config.seed, "init")
    residual_std = config.init_std / math.sqrt(2 * config.n_layers)
    params: Dict[str, Tensor] = {}
    for name, shape, kind in parameter_layout(config):
        if kind == "one":
            data = np.ones(shape, dtype=np.float32)
        elif kind == "zero":
            data = np.zeros(shape, dtype=np.float32)
        else:
            std = residual_std if kind == "residual" else config.init_std
            data = (rng.standard_normal(shape) * std).astype(np.float32)
        params[name] = Tensor(data, requires_grad=True, name=name)
    logger.debug("Built model: %d layers, d=%d, %d params", config.n_layers, config.d_model,
                 sum(t.size for t in params.values()))
    return Transformer(config, params)


# ---------------------------
# Taps and bundles
# ---------------------------

@dataclass(frozen=True)
class LayerTapSpec:
    """Residual-stream read points: block outputs at one token position (None = last)"""
    layer_indices: Tuple[int, ...] = ()
    token_position: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "layer_indices", tuple(int(i) for i in self.layer_indices))
        idx = self.layer_indices
        if any(i < 0 for i in idx):
            raise TapError(f"tap layers must be non-negative: {idx}")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise TapError(f"tap layers must be strictly increasing: {idx}")

    @classmethod
    def every(cls, n_layers: int, stride: int = DEFAULT_TAP_STRIDE, token_position: Optional[int] = None) -> "LayerTapSpec":
        if stride < 1:
            raise TapError(f"tap stride must be >= 1, got {stride}")
        return cls(tuple(range(0, n_layers, stride)), token_position)

    def validate(self, n_layers: int, prompt_len: int) -> int:
        """Returns the resolved token position"""
        if self.layer_indices and self.layer_indices[-1] >= n_layers:
            raise TapError(f"tap layer {self.layer_indices[-1]} >= n_layers {n_layers}")
        pos = prompt_len - 1 if self.token_position is None else self.token_position
        if not 0 <= pos < prompt_len:
            raise TapError(f"tap position {pos} outside prompt of length {prompt_len}")
        return pos

    def to_dict(self) -> Dict:
        return {"layer_indices": list(self.layer_indices), "token_position": self.token_position}


@dataclass
class ActivationBundle:
    """Captured vectors A_1..A_n, one row per tap layer"""
    vectors: np.ndarray
    source_config_digest: str
    tap_spec: LayerTapSpec = field(default_factory=LayerTapSpec)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            raise DimensionError(f"bundle vectors must be [n, d], got {self.vectors.shape}")
        if self.vectors.shape[0] != len(self.tap_spec.layer_indices):
            raise DimensionError(f"{self.vectors.shape[0]} vectors for {len(self.tap_spec.layer_indices)} tap layers")
        if not np.isfinite(self.vectors).all():
            raise NumericError("bundle contains non-finite values")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def d_model(self) -> int:
        return self.vectors.shape[1]


# ---------------------------
# Forward passes
# ---------------------------

def as_token_batch(model: Transformer, tokens) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(tokens)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise InputError(f"tokens must be 1-d or [batch, seq], got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        raise InputError(f"token ids must be integers, got {arr.dtype}")
    arr = arr.astype(np.int64)
    t = arr.shape[1]
    if t == 0 or arr.shape[0] == 0:
        raise InputError("empty prompt")
    if t > model.config.context_len:
        raise InputError(f"prompt length {t} exceeds context_len {model.config.context_len}")
    if arr.min() < 0 or arr.max() >= model.config.vocab_size:
        raise InputError(f"token id out of range [0, {model.config.vocab_size})")
    return arr, single


def _block(model: Transformer, i: int, x: Tensor) -> Tensor:
    cfg = model.config
    p = model.params
    pre = f"blocks.{i}."
    b, t, d = x.shape
    h, dh = cfg.n_heads, cfg.d_head

    #Attention
    a = ops.layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])

    def heads(w: str, bias: str) -> Tensor:
        y = ops.add(ops.matmul(a, p[pre + w]), p[pre + bias])
        return ops.transpose(ops.reshape(y, (b, t, h, dh)), (0, 2, 1, 3))

    q = heads("attn.wq", "attn.bq")
    k = heads("attn.wk", "attn.bk")
    v = heads("attn.wv", "attn.bv")
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    att = ops.softmax(ops.causal_mask(scores), axis=-1)
    ctx = ops.reshape(ops.transpose(ops.matmul(att, v), (0, 2, 1, 3)), (b, t, d))
    x = ops.add(x, ops.add(ops.matmul(ctx, p[pre + "attn.wo"]), p[pre + "attn.bo"]))

    #MLP
    m = ops.layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
    m = ops.gelu(ops.add(ops.matmul(m, p[pre + "mlp.w1"]), p[pre + "mlp.b1"]))
    m = ops.add(ops.matmul(m, p[pre + "mlp.w2"]), p[pre + "mlp.b2"])
    return ops.add(x, m)


def transformer_pass(
    model: Transformer,
    tokens2d: np.ndarray,
    positions: Sequence[int] = (),
    values: Optional[Tensor] = None,
    tap_layers: Sequence[int] = (),
) -> Tuple[Tensor, Dict[int, Tensor]]:
    """
    Core pass over validated [B, T] ids
    positions/values: rows of the token embedding to replace, values is [B, n, d]
    Returns logits [B, T, V] and the residual stream after each requested block
    """
    p = model.params
    t = tokens2d.shape[1]
    x = ops.embedding(p["tok_emb"], tokens2d)
    if len(positions):
        x = ops.override_rows(x, positions, values)
    x = ops.add(x, ops.take(p["pos_emb"], np.arange(t), axis=0))

    wanted = set(tap_layers)
    residuals: Dict[int, Tensor] = {}
    for i in range(model.config.n_layers):
        x = _block(model, i, x)
        if i in wanted:
            residuals[i] = x

    x = ops.layer_norm(x, p["ln_f.g"], p["ln_f.b"])
    unembed = p["unembed"] if not model.config.tie_embeddings else ops.transpose(p["tok_emb"], (1, 0))
    return ops.matmul(x, unembed), residuals


def forward(model: Transformer, tokens) -> np.ndarray:
    """Logits [T, V] for a 1-d prompt, [B, T, V] for a batch"""
    arr, single = as_token_batch(model, tokens)
    logits, _ = transformer_pass(model, arr)
    return logits.data[0] if single else logits.data


def forward_with_taps_batch(model: Transformer, tokens2d, taps: LayerTapSpec) -> Tuple[np.ndarray, List[ActivationBundle]]:
    arr, _ = as_token_batch(model, tokens2d)
    pos = taps.validate(model.config.n_layers, arr.shape[1])
    logits, residuals = transformer_pass(model, arr, tap_layers=taps.layer_indices)
    digest = model.config.digest()
    d = model.config.d_model
    bundles = []
    for row in range(arr.shape[0]):
        if taps.layer_indices:
            vecs = np.stack([residuals[i].data[row, pos] for i in taps.layer_indices])
        else:
            vecs = np.zeros((0, d), dtype=np.float32)
        bundles.append(ActivationBundle(vecs, digest, taps))
    return logits.data, bundles


def forward_with_taps(model: Transformer, tokens, taps: LayerTapSpec) -> Tuple[np.ndarray, ActivationBundle]:
    arr = np.asarray(tokens)
    if arr.ndim != 1:
        raise InputError(f"forward_with_taps takes one prompt, got shape {arr.shape}")
    logits, bundles = forward_with_taps_batch(model, arr[None, :], taps)
    return logits[0], bundles[0]


def forward_embedded(model: Transformer, tokens2d, positions: Sequence[int], values: Tensor) -> Tensor:
    """Differentiable override pass (values may require grad); returns logits Tensor [B, T, V]"""
    arr, _ = as_token_batch(model, tokens2d)
    if values.ndim != 3 or values.shape[-1] != model.config.d_model:
        raise DimensionError(f"override vectors must be [B, n, {model.config.d_model}], got {values.shape}")
    logits, _ = transformer_pass(model, arr, positions=list(positions), values=values)
    return logits


def forward_with_overrides(model: Transformer, tokens, overrides: Mapping[int, np.ndarray]) -> np.ndarray:
    """Plain forward with token-embedding rows replaced at the given positions"""
    arr, single = as_token_batch(model, tokens)
    if not single:
        raise InputError("forward_with_overrides takes one prompt; use forward_embedded for batches")
    if not overrides:
        return forward(model, arr[0])
    d = model.config.d_model
    positions = sorted(int(k) for k in overrides)
    rows = []
    for pos in positions:
        vec = np.asarray(overrides[pos], dtype=model["tok_emb"].dtype)
        if vec.shape != (d,):
            raise DimensionError(f"override at {pos} has shape {vec.shape}, expected ({d},)")
        rows.append(vec)
    values = Tensor(np.stack(rows)[None, :, :], dtype=model["tok_emb"].dtype)
    logits, _ = transformer_pass(model, arr, positions=positions, values=values)
    return logits.data[0]


def greedy_generate(model: Transformer, tokens, n_new: int, stop_token: Optional[int] = None) -> List[int]:
    """Greedy continuation; stops at stop_token or the context limit"""
    seq = [int(x) for x in tokens]
    out: List[int] = []
    for _ in range(n_new):
        if len(seq) >= model.config.context_len:
            break
        nxt = int(np.argmax(forward(model, np.asarray(seq))[-1]))
        seq.append(nxt)
        out.append(nxt)
        if stop_token is not None and nxt == stop_token:
            break
    return out
