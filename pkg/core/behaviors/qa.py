# qa.py
# --------------------------------------------------------------------------------------
# Purpose:
#   Yes/No questions about a conditioned model and balanced example sets
#
# What it does:
#   1) build_question: fixed 6-token template USER Q_IS Q_MODEL <verb> <concept> Q_MARK
#   2) question_classes: which classes get asked about per dataset
#      (binary datasets ask one canonical question, multiclass ask one per class)
#   3) build_balanced_qa_set: examples spread round-robin across templates, each
#      template split Yes/No evenly (odd counts get a seeded extra)
#   4) split: round(f*n) held out in total, allocated across templates by largest
#      remainder, then across Yes/No so each side stays within one of balanced
# --------------------------------------------------------------------------------------

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.behaviors.corpus import LYING, NEGATIVE, BehaviorLabel, num_classes
from core.behaviors.prompts import (DEFAULT_SHOTS, ConditioningPrompt, FactTriple, build_conditioning_prompt,
                                    build_lying_episode, sample_fact)
from core.behaviors.vocab import ToyVocab
from core.errors import ContractError

QUESTION_LEN = 6

VERBS = {"S": "Q_ACTING", "M": "Q_ACTING", "E": "Q_FEELING", "L": "Q_SPEAKING", "LIE": "Q_ACTING"}
CANONICAL_CLASS = {"S": NEGATIVE, "M": NEGATIVE, "LIE": LYING}


@dataclass(frozen=True)
class QAExample:
    uid: str
    question: Tuple[int, ...]
    prompt: ConditioningPrompt
    answer_yes: bool
    template: str                       #"<tag>:<asked class>"
    fact: Optional[FactTriple] = None

    @property
    def label(self) -> BehaviorLabel:
        return self.prompt.label

    @property
    def tag(self) -> str:
        return self.template.split(":")[0]


def concept_name(vocab: ToyVocab, tag: str, cls: int) -> str:
    if tag in ("S", "M"):
        return "POSITIVE" if cls else "NEGATIVE"
    if tag == "E":
        return f"EMO_{cls}"
    if tag == "L":
        return f"LANG_{cls}"
    if tag == "LIE":
        return "LYING" if cls == LYING else "TRUTHFUL"
    raise ContractError(f"unknown dataset tag {tag!r}")


def build_question(vocab: ToyVocab, tag: str, cls: int) -> Tuple[int, ...]:
    """Ex: (S, 0) -> USER Q_IS Q_MODEL Q_ACTING NEGATIVE Q_MARK"""
    if not 0 <= cls < num_classes(vocab, tag):
        raise ContractError(f"class {cls} invalid for tag {tag}")
    return (vocab.USER, vocab.Q_IS, vocab.Q_MODEL, vocab.token(VERBS[tag]),
            vocab.token(concept_name(vocab, tag, cls)), vocab.Q_MARK)


def question_classes(vocab: ToyVocab, tag: str) -> List[int]:
    if tag in CANONICAL_CLASS:
        return [CANONICAL_CLASS[tag]]
    return list(range(num_classes(vocab, tag)))


def label_for(vocab: ToyVocab, tag: str, cls: int, rng: np.random.Generator) -> BehaviorLabel:
    if tag == "M":
        return BehaviorLabel("M", cls, int(rng.integers(vocab.n_languages)))
    return BehaviorLabel(tag, cls)


def _other_class(n: int, cls: int, rng: np.random.Generator) -> int:
    return int((cls + 1 + rng.integers(n - 1)) % n)


def make_example(vocab: ToyVocab, tag: str, asked: int, yes: bool, uid: str, rng: np.random.Generator,
                 shots: int = DEFAULT_SHOTS, context_len: Optional[int] = None) -> QAExample:
    n = num_classes(vocab, tag)
    actual = asked if yes else _other_class(n, asked, rng)
    question = build_question(vocab, tag, asked)
    if tag == "LIE":
        fact = sample_fact(vocab, rng)
        prompt = build_lying_episode(vocab, fact, actual == LYING, shots, rng, context_len=context_len)
        return QAExample(uid, question, prompt, yes, f"{tag}:{asked}", fact)
    prompt = build_conditioning_prompt(vocab, label_for(vocab, tag, actual, rng), shots, rng, context_len=context_len)
    return QAExample(uid, question, prompt, yes, f"{tag}:{asked}")


def build_balanced_qa_set(vocab: ToyVocab, tag: str, n: int, rng: np.random.Generator,
                          shots: int = DEFAULT_SHOTS, context_len: Optional[int] = None) -> List[QAExample]:
    """P(Yes | question) = 1/2 per template, within one example"""
    if n < 2:
        raise ContractError(f"a balanced set needs n >= 2, got {n}")
    classes = question_classes(vocab, tag)
    per_template = [n // len(classes) + (1 if i < n % len(classes) else 0) for i in range(len(classes))]

    examples: List[QAExample] = []
    for asked, count in zip(classes, per_template):
        n_yes = count // 2 + (int(rng.integers(2)) if count % 2 else 0)
        answers = [True] * n_yes + [False] * (count - n_yes)
        for yes in answers:
            examples.append(make_example(vocab, tag, asked, yes, f"{tag}-{len(examples):06d}", rng,
                                         shots=shots, context_len=context_len))
    order = rng.permutation(len(examples))
    return [examples[int(i)] for i in order]


def balance_counts(examples: Sequence[QAExample]) -> Dict[str, Tuple[int, int]]:
    """template -> (yes, no)"""
    counts: Dict[str, List[int]] = defaultdict(lambda: [0, 0])
    for ex in examples:
        counts[ex.template][0 if ex.answer_yes else 1] += 1
    return {k: (v[0], v[1]) for k, v in sorted(counts.items())}


def _template_quotas(sizes: Dict[str, int], k: int, eval_fraction: float,
                     rng: np.random.Generator) -> Dict[str, int]:
    """Largest-remainder allocation of k held-out slots; ties go in a seeded order"""
    names = sorted(sizes)
    exact = {t: eval_fraction * sizes[t] for t in names}
    quotas = {t: int(math.floor(exact[t])) for t in names}
    tiebreak = {t: int(r) for t, r in zip(names, rng.permutation(len(names)))}
    by_remainder = sorted(names, key=lambda t: (-(exact[t] - quotas[t]), tiebreak[t]))
    left = k - sum(quotas.values())
    for t in by_remainder:
        if left <= 0:
            break
        if quotas[t] < sizes[t]:
            quotas[t] += 1
            left -= 1
    return quotas


def split(examples: Sequence[QAExample], eval_fraction: float,
          rng: np.random.Generator) -> Tuple[List[QAExample], List[QAExample]]:
    """
    Holds out exactly round(eval_fraction * n) examples
    Per template the held-out Yes share follows the template's Yes share, so a
    balanced template stays within one of balanced on both sides
    """
    if not 0.0 < eval_fraction < 1.0:
        raise ContractError(f"eval_fraction must be in (0, 1), got {eval_fraction}")
    strata: Dict[str, Tuple[List[int], List[int]]] = defaultdict(lambda: ([], []))
    for i, ex in enumerate(examples):
        strata[ex.template][0 if ex.answer_yes else 1].append(i)

    k = int(math.floor(eval_fraction * len(examples) + 0.5))
    quotas = _template_quotas({t: len(y) + len(n) for t, (y, n) in strata.items()}, k, eval_fraction, rng)
    toggle = bool(rng.integers(2))

    train_idx: List[int] = []
    eval_idx: List[int] = []
    for template in sorted(strata):
        yes, no = ([side[int(j)] for j in rng.permutation(len(side))] for side in strata[template])
        k_t = quotas[template]
        #Held-out Yes count: k_t * yes / total, exact halves alternate
        whole, rem = divmod(k_t * len(yes), len(yes) + len(no))
        if 2 * rem > len(yes) + len(no):
            whole += 1
        elif 2 * rem == len(yes) + len(no) and rem:
            whole += int(toggle)
            toggle = not toggle
        k_yes = min(len(yes), max(k_t - len(no), whole))
        eval_idx += yes[:k_yes] + no[:k_t - k_yes]
        train_idx += yes[k_yes:] + no[k_t - k_yes:]

    train = [examples[i] for i in rng.permutation(train_idx)] if train_idx else []
    held = [examples[i] for i in rng.permutation(eval_idx)] if eval_idx else []
    return train, held
