# corpus.py
# --------------------------------------------------------------------------------------
# Purpose:
#   Behavior labels and the toy "text" each behavior produces
#
# What it does:
#   1) BehaviorLabel: dataset tag + class (+ language for multilingual sentiment)
#   2) sample_text: Zipf-weighted draws from one language alphabet with the
#      label's marker tokens written at exactly max(1, round(rate * len)) positions
#   3) frequency_oracle: recovers the class by counting tokens per group
#
# Datasets:
#   S   sentiment, language 0          class 0 negative / 1 positive
#   E   emotion, language 0            class 0..n_emotions-1
#   L   language identification        class = language, no markers
#   M   multilingual sentiment         class = polarity, language varies
#   LIE lying (held out)               class 0 truthful / 1 lying, see prompts.py
# --------------------------------------------------------------------------------------

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from core.behaviors.vocab import ToyVocab
from core.errors import ContractError

TAGS = ("S", "E", "L", "M", "LIE")
TRAIN_TAGS = ("S", "E", "L", "M")

MARKER_RATE = 0.25
ZIPF_EXPONENT = 1.1

NEGATIVE, POSITIVE = 0, 1
TRUTHFUL, LYING = 0, 1


@dataclass(frozen=True)
class BehaviorLabel:
    tag: str
    value: int
    language: Optional[int] = None

    def validate(self, vocab: ToyVocab) -> "BehaviorLabel":
        n = num_classes(vocab, self.tag)
        if not 0 <= self.value < n:
            raise ContractError(f"class {self.value} invalid for tag {self.tag} ({n} classes)")
        if self.tag == "M":
            if self.language is None or not 0 <= self.language < vocab.n_languages:
                raise ContractError(f"M label needs a language in [0, {vocab.n_languages}), got {self.language}")
        elif self.language not in (None, 0):
            raise ContractError(f"tag {self.tag} does not take a language")
        return self

    @property
    def text_language(self) -> int:
        if self.tag == "L":
            return self.value
        return self.language or 0

    def to_dict(self) -> Dict:
        return {"tag": self.tag, "value": self.value, "language": self.language}

    @classmethod
    def from_dict(cls, d) -> "BehaviorLabel":
        return cls(d["tag"], int(d["value"]), d.get("language"))


def num_classes(vocab: ToyVocab, tag: str) -> int:
    if tag in ("S", "M", "LIE"):
        return 2
    if tag == "E":
        return vocab.n_emotions
    if tag == "L":
        return vocab.n_languages
    raise ContractError(f"unknown dataset tag {tag!r}")


def marker_count(length: int, rate: float = MARKER_RATE) -> int:
    return max(1, int(math.floor(rate * length + 0.5)))


def zipf_weights(n: int, exponent: float = ZIPF_EXPONENT) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** exponent
    return w / w.sum()


def marker_set(vocab: ToyVocab, label: BehaviorLabel) -> np.ndarray:
    if label.tag in ("S", "M"):
        return vocab.polarity_markers(label.text_language, label.value)
    if label.tag == "E":
        return vocab.emotion_markers(label.value)
    return np.zeros(0, dtype=np.int64)


def sample_text(vocab: ToyVocab, label: BehaviorLabel, length: int, rng: np.random.Generator,
                rate: float = MARKER_RATE) -> np.ndarray:
    if label.tag == "LIE":
        raise ContractError("lying is an episode-level behavior; use build_lying_episode")
    label.validate(vocab)
    if length < 1:
        raise ContractError(f"text length must be >= 1, got {length}")
    alphabet = vocab.alphabet(label.text_language)
    tokens = rng.choice(alphabet, size=length, p=zipf_weights(alphabet.size))
    markers = marker_set(vocab, label)
    if markers.size:
        k = min(length, marker_count(length, rate))
        where = rng.choice(length, size=k, replace=False)
        tokens[where] = rng.choice(markers, size=k)
    return tokens.astype(np.int64)


def frequency_oracle(vocab: ToyVocab, tag: str, tokens) -> BehaviorLabel:
    """Counting classifier; ties go to the lowest class"""
    toks = np.asarray(tokens, dtype=np.int64)

    def count(ids: np.ndarray) -> int:
        return int(np.isin(toks, ids).sum())

    def language() -> int:
        scores = []
        for i in range(vocab.n_languages):
            ids = np.concatenate([vocab.alphabet(i), vocab.polarity_markers(i, 0), vocab.polarity_markers(i, 1)])
            scores.append(count(ids))
        return int(np.argmax(scores))

    if tag == "L":
        return BehaviorLabel("L", language())
    if tag == "E":
        return BehaviorLabel("E", int(np.argmax([count(vocab.emotion_markers(k)) for k in range(vocab.n_emotions)])))
    if tag in ("S", "M"):
        lang = language() if tag == "M" else 0
        neg = count(vocab.polarity_markers(lang, NEGATIVE))
        pos = count(vocab.polarity_markers(lang, POSITIVE))
        return BehaviorLabel(tag, POSITIVE if pos > neg else NEGATIVE, lang if tag == "M" else None)
    raise ContractError(f"no frequency oracle for tag {tag!r}")
