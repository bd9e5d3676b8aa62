# capture.py
# --------------------------------------------------------------------------------------
# Purpose:
#   Read activation bundles out of the frozen input-model, and cache them on disk
#
# What it does:
#   1) capture / capture_many: untaped forward_with_taps over conditioning prompts
#      (prompts of equal length are batched together)
#   2) BundleCache: uid -> ActivationBundle, saved as a small binary file
#
# Cache layout (little-endian):
#   b"MMAB" | u32 version | u32 len + orjson header | u32 count |
#   count x (n_taps x d_model) f32 vectors, in header "uids" order
#   header = {uids, tap_spec, source_config_digest, d_model}
# --------------------------------------------------------------------------------------

from __future__ import annotations

import struct
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

import numpy as np
import orjson
from tqdm import tqdm

from core.behaviors.prompts import ConditioningPrompt
from core.errors import ConfigError, ContractError, FormatError
from core.nanoformer.checkpoint import ByteReader
from core.nanoformer.model import ActivationBundle, LayerTapSpec, Transformer, forward_with_taps, forward_with_taps_batch
from core.tensorkit.tensor import active_tape
from core.utils.logging_setup import get_logger

logger = get_logger("capture")

MAGIC = b"MMAB"
VERSION = 1
CAPTURE_BATCH = 64

PathLike = Union[str, Path]


def _require_untaped() -> None:
    if active_tape() is not None:
        raise ContractError("capture must run outside a tape: the input-model is never trained")


def capture(input_model: Transformer, prompt: ConditioningPrompt, taps: LayerTapSpec) -> ActivationBundle:
    _require_untaped()
    _, bundle = forward_with_taps(input_model, prompt.array(), taps)
    return bundle


def capture_many(input_model: Transformer, prompts: Sequence[ConditioningPrompt], taps: LayerTapSpec,
                 batch_size: int = CAPTURE_BATCH, progress: bool = False) -> List[ActivationBundle]:
    """Same result as calling capture per prompt, in input order"""
    _require_untaped()
    by_len: Dict[int, List[int]] = defaultdict(list)
    for i, p in enumerate(prompts):
        by_len[len(p)].append(i)
    out: List[ActivationBundle] = [None] * len(prompts)  # type: ignore[list-item]
    chunks = [(idx[s:s + batch_size]) for _, idx in sorted(by_len.items()) for s in range(0, len(idx), batch_size)]
    for chunk in tqdm(chunks, desc="capture", disable=not progress):
        batch = np.stack([prompts[i].array() for i in chunk])
        _, bundles = forward_with_taps_batch(input_model, batch, taps)
        for i, b in zip(chunk, bundles):
            out[i] = b
    logger.debug("Captured %d bundles in %d batches", len(prompts), len(chunks))
    return out


class BundleCache:
    """Bundles keyed by QA example uid; all share one tap spec and source model"""

    def __init__(self, bundles: Dict[str, ActivationBundle]):
        self.bundles = dict(bundles)
        digests = {b.source_config_digest for b in self.bundles.values()}
        specs = {b.tap_spec for b in self.bundles.values()}
        if len(digests) > 1 or len(specs) > 1:
            raise ContractError("a bundle cache holds bundles from one model and one tap spec")

    def __len__(self) -> int:
        return len(self.bundles)

    def __contains__(self, uid: str) -> bool:
        return uid in self.bundles

    def get(self, uid: str) -> ActivationBundle:
        try:
            return self.bundles[uid]
        except KeyError as exc:
            raise ConfigError(f"no cached bundle for example {uid}") from exc

    def select(self, uids: Iterable[str]) -> List[ActivationBundle]:
        return [self.get(u) for u in uids]

    def save(self, path: PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        uids = list(self.bundles)
        first = self.bundles[uids[0]] if uids else None
        header = {
            "uids": uids,
            "tap_spec": first.tap_spec.to_dict() if first else LayerTapSpec().to_dict(),
            "source_config_digest": first.source_config_digest if first else "",
            "d_model": first.d_model if first else 0,
        }
        head = orjson.dumps(header, option=orjson.OPT_SORT_KEYS)
        parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(head)), head, struct.pack("<I", len(uids))]
        parts += [np.ascontiguousarray(self.bundles[u].vectors, dtype="<f4").tobytes() for u in uids]
        path.write_bytes(b"".join(parts))
        logger.info("Saved %d bundles to %s", len(uids), path)
        return path

    @classmethod
    def load(cls, path: PathLike) -> "BundleCache":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"bundle cache not found: {path}")
        r = ByteReader(path.read_bytes(), str(path))
        r.header(MAGIC, VERSION)
        (head_len,) = r.unpack("<I")
        try:
            header = orjson.loads(r.take(head_len))
            uids = list(header["uids"])
            spec = LayerTapSpec(tuple(header["tap_spec"]["layer_indices"]), header["tap_spec"]["token_position"])
            digest, d = header["source_config_digest"], int(header["d_model"])
        except (orjson.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}: bad header: {exc}") from exc
        (count,) = r.unpack("<I")
        if count != len(uids):
            raise FormatError(f"{path}: {count} bundles for {len(uids)} uids")
        n = len(spec.layer_indices)
        size = n * d * 4
        bundles = {}
        for uid in uids:
            vecs = np.frombuffer(r.take(size), dtype="<f4").reshape(n, d).astype(np.float32)
            bundles[uid] = ActivationBundle(vecs, digest, spec)
        r.done()
        return cls(bundles)


def capture_cache(input_model: Transformer, examples: Sequence, taps: LayerTapSpec,
                  batch_size: int = CAPTURE_BATCH, progress: bool = False) -> BundleCache:
    """Capture one bundle per QA example (keyed by example uid)"""
    bundles = capture_many(input_model, [ex.prompt for ex in examples], taps, batch_size, progress)
    return BundleCache({ex.uid: b for ex, b in zip(examples, bundles)})
