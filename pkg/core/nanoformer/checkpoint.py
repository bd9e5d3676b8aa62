# checkpoint.py
# --------------------------------------------------------------------------------------
# Purpose:
#   Bit-exact save/load of a Transformer (and optionally its AdamW state)
#
# Layout (all integers little-endian):
#   b"MMLB" | u32 version | u32 len + orjson ModelConfig | u32 n_arrays |
#   n_arrays x [u16 name_len, name utf-8, u8 ndim, u32 dims..., u64 nbytes, f32 payload] |
#   u8 has_opt [| u64 step | 5 x f64 (lr, b1, b2, eps, wd) | 2 x n_params arrays (m, v)]
#
# Notes:
#   - Any truncation, trailing bytes, bad magic/version or payload size that
#     disagrees with the declared shape raises FormatError
# --------------------------------------------------------------------------------------

from __future__ import annotations

import struct
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import orjson

from core.errors import ConfigError, FormatError
from core.nanoformer.model import ModelConfig, Transformer, parameter_layout
from core.tensorkit.optim import OptState
from core.tensorkit.tensor import Tensor
from core.utils.logging_setup import get_logger

logger = get_logger("checkpoint")

MAGIC = b"MMLB"
VERSION = 1
F32 = np.dtype("<f4")

PathLike = Union[str, Path]


def encode_array(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    data = np.ascontiguousarray(arr, dtype=F32).tobytes()
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + struct.pack("<Q", len(data)) + data


class ByteReader:
    """Bounds-checked cursor; every short read is a FormatError"""

    def __init__(self, buf: bytes, what: str):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise FormatError(f"{self.what}: truncated at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self) -> Tuple[str, np.ndarray]:
        (name_len,) = self.unpack("<H")
        try:
            name = self.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{self.what}: bad array name") from exc
        (ndim,) = self.unpack("<B")
        shape = self.unpack(f"<{ndim}I") if ndim else ()
        (nbytes,) = self.unpack("<Q")
        expected = int(np.prod(shape, dtype=np.int64)) * F32.itemsize
        if nbytes != expected:
            raise FormatError(f"{self.what}: array {name} declares shape {shape} but carries {nbytes} bytes")
        arr = np.frombuffer(self.take(nbytes), dtype=F32).reshape(shape).astype(np.float32)
        return name, arr

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise FormatError(f"{self.what}: {len(self.buf) - self.pos} trailing bytes")

    def header(self, magic: bytes, version: int) -> None:
        got = self.take(len(magic))
        if got != magic:
            raise FormatError(f"{self.what}: bad magic {got!r}")
        (ver,) = self.unpack("<I")
        if ver != version:
            raise FormatError(f"{self.what}: unsupported version {ver}")


def checkpoint_bytes(model: Transformer, opt_state: Optional[OptState] = None) -> bytes:
    cfg = orjson.dumps(model.config.to_dict(), option=orjson.OPT_SORT_KEYS)
    parts: List[bytes] = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(cfg)), cfg,
                          struct.pack("<I", len(model.params))]
    parts += [encode_array(name, t.data) for name, t in model.named_parameters()]
    if opt_state is None or not opt_state.m:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<B", 1))
        parts.append(struct.pack("<Q", opt_state.step))
        parts.append(struct.pack("<5d", opt_state.lr, opt_state.beta1, opt_state.beta2,
                                 opt_state.eps, opt_state.weight_decay))
        names = list(model.params)
        parts += [encode_array("m/" + n, a) for n, a in zip(names, opt_state.m)]
        parts += [encode_array("v/" + n, a) for n, a in zip(names, opt_state.v)]
    return b"".join(parts)


def save_checkpoint(model: Transformer, path: PathLike, opt_state: Optional[OptState] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(model, opt_state))
    logger.info("Saved checkpoint %s (%d params)", path, model.num_parameters())
    return path


def parse_checkpoint(buf: bytes, what: str = "checkpoint") -> Tuple[Transformer, Optional[OptState]]:
    r = ByteReader(buf, what)
    r.header(MAGIC, VERSION)
    (cfg_len,) = r.unpack("<I")
    try:
        config = ModelConfig.from_dict(orjson.loads(r.take(cfg_len)))
    except (orjson.JSONDecodeError, ConfigError, TypeError, ValueError) as exc:
        raise FormatError(f"{what}: bad config record: {exc}") from exc

    layout = parameter_layout(config)
    (n_arrays,) = r.unpack("<I")
    if n_arrays != len(layout):
        raise FormatError(f"{what}: {n_arrays} arrays, config needs {len(layout)}")
    params = {}
    for exp_name, exp_shape, _ in layout:
        name, arr = r.array()
        if name != exp_name or arr.shape != exp_shape:
            raise FormatError(f"{what}: got {name}{arr.shape}, expected {exp_name}{exp_shape}")
        params[name] = Tensor(arr, requires_grad=True, name=name)

    (has_opt,) = r.unpack("<B")
    opt_state = None
    if has_opt == 1:
        (step,) = r.unpack("<Q")
        lr, b1, b2, eps, wd = r.unpack("<5d")
        opt_state = OptState(lr=lr, beta1=b1, beta2=b2, eps=eps, weight_decay=wd, step=step)
        for prefix, slot in (("m/", opt_state.m), ("v/", opt_state.v)):
            for exp_name, exp_shape, _ in layout:
                name, arr = r.array()
                if name != prefix + exp_name or arr.shape != exp_shape:
                    raise FormatError(f"{what}: bad optimizer array {name}")
                slot.append(arr)
    elif has_opt != 0:
        raise FormatError(f"{what}: bad optimizer flag {has_opt}")
    r.done()
    return Transformer(config, params), opt_state


def load_checkpoint_with_state(path: PathLike) -> Tuple[Transformer, Optional[OptState]]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    return parse_checkpoint(path.read_bytes(), what=str(path))


def load_checkpoint(path: PathLike) -> Transformer:
    model, _ = load_checkpoint_with_state(path)
    return model
