# vocab.py
# --------------------------------------------------------------------------------------
# Purpose:
#   Partition a small token space into the groups the toy behaviors are made of
#
# What it does:
#   1) Control tokens at fixed low ids (pad, bos, roles, placeholder, yes/no ...)
#   2) Question words and concept words used by the Yes/No templates
#   3) Content groups: 6 language alphabets, polarity markers per language,
#      emotion marker sets, fact subjects / relations / objects, user utterances
#      Content groups are laid out in a seeded order; groups may be pinned
#
# Notes:
#   - Ranges never overlap; anything past the last range is unused padding
#   - The placeholder token is never emitted by any corpus generator
# --------------------------------------------------------------------------------------

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from core.errors import ConfigError, ContractError
from core.tensorkit.rng import make_rng

CONTROL_TOKENS = ["PAD", "BOS", "EOT", "USER", "MODEL", "META", "PLACEHOLDER", "YES", "NO", "FACT", "WHAT", "SEP"]
QUESTION_WORDS = ["Q_IS", "Q_MODEL", "Q_ACTING", "Q_FEELING", "Q_SPEAKING", "Q_MARK"]

POLARITIES = ("neg", "pos")     #class 0 = negative, 1 = positive


@dataclass
class VocabSpec:
    total_size: int = 256
    n_languages: int = 6
    alphabet_size: int = 20
    n_emotions: int = 4
    markers_per_set: int = 3
    n_subjects: int = 12
    n_relations: int = 4
    n_objects: int = 16
    n_utterances: int = 4
    seed: int = 0
    pinned: Dict[str, int] = field(default_factory=dict)   #group name -> first id

    def concept_names(self) -> List[str]:
        return (["NEGATIVE", "POSITIVE"] + [f"EMO_{k}" for k in range(self.n_emotions)]
                + [f"LANG_{i}" for i in range(self.n_languages)] + ["TRUTHFUL", "LYING"])

    def content_groups(self) -> List[Tuple[str, int]]:
        groups = [(f"alphabet.{i}", self.alphabet_size) for i in range(self.n_languages)]
        for i in range(self.n_languages):
            for pol in POLARITIES:
                groups.append((f"polarity.{i}.{pol}", self.markers_per_set))
        groups += [(f"emotion.{k}", self.markers_per_set) for k in range(self.n_emotions)]
        groups += [("fact.subject", self.n_subjects), ("fact.relation", self.n_relations),
                   ("fact.object", self.n_objects), ("utterance", self.n_utterances)]
        return groups


class ToyVocab:
    """Named, disjoint id ranges; see VocabSpec for sizes"""

    def __init__(self, spec: VocabSpec, ranges: Dict[str, range], named: Dict[str, int]):
        self.spec = spec
        self.ranges = ranges
        self.named = named
        self.size = spec.total_size
        self._names: Dict[int, str] = {}
        for name, tid in named.items():
            self._names[tid] = name
        for group, r in ranges.items():
            for j, tid in enumerate(r):
                self._names.setdefault(tid, f"{group}[{j}]")

    def __getattr__(self, item: str) -> int:
        #vocab.YES, vocab.PLACEHOLDER ...
        named = self.__dict__.get("named", {})
        if item in named:
            return named[item]
        raise AttributeError(item)

    def token(self, name: str) -> int:
        try:
            return self.named[name]
        except KeyError as exc:
            raise ContractError(f"unknown token name {name}") from exc

    def group(self, name: str) -> np.ndarray:
        try:
            return np.arange(self.ranges[name].start, self.ranges[name].stop, dtype=np.int64)
        except KeyError as exc:
            raise ContractError(f"unknown token group {name}") from exc

    def alphabet(self, language: int) -> np.ndarray:
        return self.group(f"alphabet.{language}")

    def polarity_markers(self, language: int, polarity: int) -> np.ndarray:
        return self.group(f"polarity.{language}.{POLARITIES[polarity]}")

    def emotion_markers(self, emotion: int) -> np.ndarray:
        return self.group(f"emotion.{emotion}")

    @property
    def n_languages(self) -> int:
        return self.spec.n_languages

    @property
    def n_emotions(self) -> int:
        return self.spec.n_emotions

    def used(self) -> int:
        return len(self.named) + sum(len(r) for r in self.ranges.values())

    def describe(self) -> Dict[str, Tuple[int, int]]:
        out = {name: (tid, tid + 1) for name, tid in self.named.items()}
        out.update({g: (r.start, r.stop) for g, r in self.ranges.items()})
        return dict(sorted(out.items(), key=lambda kv: kv[1][0]))

    def decode(self, tokens: Sequence[int]) -> str:
        return " ".join(self._names.get(int(t), f"<unused:{int(t)}>") for t in tokens)

    def to_dict(self) -> Dict:
        return {"spec": asdict(self.spec)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ToyVocab":
        return make_toy_vocab(VocabSpec(**d["spec"]))


def _fixed_names(spec: VocabSpec) -> List[str]:
    return CONTROL_TOKENS + QUESTION_WORDS + spec.concept_names()


def make_toy_vocab(spec: Optional[VocabSpec] = None) -> ToyVocab:
    """
    Deterministic partition:
      ids [0, n_fixed) -> control, question and concept tokens in a fixed order
      remaining groups -> pinned offsets first, then free slots in seeded order
    """
    spec = spec or VocabSpec()
    fixed = _fixed_names(spec)
    named = {name: i for i, name in enumerate(fixed)}
    n_fixed = len(fixed)

    groups = spec.content_groups()
    sizes = dict(groups)
    if any(s <= 0 for s in sizes.values()):
        raise ConfigError("every token group needs a positive size")
    needed = n_fixed + sum(sizes.values())
    if needed > spec.total_size:
        raise ConfigError(f"token groups need {needed} ids but the vocabulary has {spec.total_size}")

    taken = np.zeros(spec.total_size, dtype=bool)
    taken[:n_fixed] = True
    ranges: Dict[str, range] = {}

    for name, start in sorted(spec.pinned.items(), key=lambda kv: kv[1]):
        if name not in sizes:
            raise ConfigError(f"cannot pin unknown group {name}")
        stop = start + sizes[name]
        if start < 0 or stop > spec.total_size:
            raise ConfigError(f"pinned group {name} [{start}, {stop}) overflows size {spec.total_size}")
        if taken[start:stop].any():
            raise ConfigError(f"pinned group {name} [{start}, {stop}) overlaps another range")
        taken[start:stop] = True
        ranges[name] = range(start, stop)

    rng = make_rng(spec.seed, "vocab")
    free_groups = [g for g, _ in groups if g not in ranges]
    for i in rng.permutation(len(free_groups)):
        name = free_groups[int(i)]
        size = sizes[name]
        start = _first_gap(taken, size)
        if start is None:
            raise ConfigError(f"no contiguous room left for group {name} ({size} ids)")
        taken[start:start + size] = True
        ranges[name] = range(start, start + size)

    ordered = dict(sorted(ranges.items(), key=lambda kv: kv[1].start))
    return ToyVocab(spec, ordered, named)


def _first_gap(taken: np.ndarray, size: int) -> Optional[int]:
    run = 0
    for i, t in enumerate(taken):
        run = 0 if t else run + 1
        if run == size:
            return i - size + 1
    return None
