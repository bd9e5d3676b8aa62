# rng.py
# --------------------------------------------------------------------------------------
# Purpose:
#   Seedable, counter-based randomness for every stochastic step in the lab
#
# Algorithm:
#   numpy's Philox4x64-10 bit generator keyed through a SeedSequence built from
#   (seed, stream labels...). String labels are folded to integers with CRC-32 so
#   that "init", "data", ("cell", "S+M") etc. give independent, reproducible streams
#   across processes and machines.
# --------------------------------------------------------------------------------------

import zlib
from typing import Union

import numpy as np

StreamLabel = Union[int, str]

#SeedSequence entropy words must be non-negative; seeds are u64
MASK64 = (1 << 64) - 1

def stream_key(label: StreamLabel) -> int:
    """Fold a stream label into a non-negative integer"""
    if isinstance(label, str):
        return zlib.crc32(label.encode("utf-8"))
    return int(label) & MASK64

def seed_sequence(seed: int, *stream: StreamLabel) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & MASK64, *(stream_key(s) for s in stream)])

def make_rng(seed: int, *stream: StreamLabel) -> np.random.Generator:
    """
    Philox generator for (seed, *stream)
    Ex: make_rng(7, "init") and make_rng(7, "data") never share draws
    """
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *stream)))

def derive_seed(seed: int, *stream: StreamLabel) -> int:
    """A fresh u64 seed for a sub-task (per-example, per-cell...)"""
    words = seed_sequence(seed, *stream).generate_state(2, np.uint32)
    return (int(words[0]) << 32) | int(words[1])
