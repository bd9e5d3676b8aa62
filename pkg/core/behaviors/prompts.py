# prompts.py
# --------------------------------------------------------------------------------------
# Purpose:
#   Few-shot conditioning prompts that put the input-model into a behavior
#
# Shapes (token level):
#   dialogue:  BOS (USER u MODEL reply) x shots  USER u MODEL
#   lying:     BOS FACT s r o_true SEP (USER WHAT s r MODEL register answer) x shots  USER WHAT s r MODEL
#              answer = o_true when truthful, the decoy object when lying
#              register = short language-0 text, negative polarity when lying, positive when truthful
#
# Both end with an open MODEL turn: activations are read there, before any
# generation happens.
# --------------------------------------------------------------------------------------

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from core.behaviors.corpus import LYING, NEGATIVE, POSITIVE, TRUTHFUL, BehaviorLabel, sample_text
from core.behaviors.vocab import ToyVocab
from core.errors import ContractError, InputError

DEFAULT_SHOTS = 3
REPLY_LEN = 8
REGISTER_LEN = 4
REGISTER_RATE = 0.5


@dataclass(frozen=True)
class ConditioningPrompt:
    tokens: Tuple[int, ...]
    shots: int
    label: BehaviorLabel

    def __len__(self) -> int:
        return len(self.tokens)

    def array(self) -> np.ndarray:
        return np.asarray(self.tokens, dtype=np.int64)


@dataclass(frozen=True)
class FactTriple:
    subject: int
    relation: int
    true_object: int
    decoy_object: int

    def __post_init__(self):
        if self.true_object == self.decoy_object:
            raise ContractError("decoy object must differ from the true object")

    def as_list(self) -> List[int]:
        return [self.subject, self.relation, self.true_object, self.decoy_object]


def _check_fits(tokens: List[int], context_len: Optional[int]) -> None:
    if context_len is not None and len(tokens) > context_len:
        raise InputError(f"prompt of {len(tokens)} tokens exceeds context_len {context_len}")


def sample_fact(vocab: ToyVocab, rng: np.random.Generator) -> FactTriple:
    objects = vocab.group("fact.object")
    true_obj, decoy = rng.choice(objects, size=2, replace=False)
    return FactTriple(int(rng.choice(vocab.group("fact.subject"))), int(rng.choice(vocab.group("fact.relation"))),
                      int(true_obj), int(decoy))


def build_conditioning_prompt(vocab: ToyVocab, label: BehaviorLabel, shots: int, rng: np.random.Generator,
                              reply_len: int = REPLY_LEN, context_len: Optional[int] = None,
                              close: bool = False) -> ConditioningPrompt:
    """
    close=True appends one more behavior-consistent reply (used for LM pretraining
    text, never for capture)
    """
    if shots < 1:
        raise ContractError(f"shots must be >= 1, got {shots}")
    label.validate(vocab)
    utterances = vocab.group("utterance")
    tokens = [vocab.BOS]
    for _ in range(shots):
        tokens += [vocab.USER, int(rng.choice(utterances)), vocab.MODEL]
        tokens += sample_text(vocab, label, reply_len, rng).tolist()
    tokens += [vocab.USER, int(rng.choice(utterances)), vocab.MODEL]
    if close:
        tokens += sample_text(vocab, label, reply_len, rng).tolist() + [vocab.EOT]
    _check_fits(tokens, context_len)
    return ConditioningPrompt(tuple(tokens), shots, label)


def build_lying_episode(vocab: ToyVocab, fact: FactTriple, lie: bool, shots: int, rng: np.random.Generator,
                        context_len: Optional[int] = None, close: bool = False) -> ConditioningPrompt:
    """
    The true fact is always stated up front; replies repeat it or swap in the decoy
    Each reply opens with a register: a lying model sounds negative, a truthful one positive
    """
    if shots < 1:
        raise ContractError(f"shots must be >= 1, got {shots}")
    answer = fact.decoy_object if lie else fact.true_object
    tone = BehaviorLabel("S", NEGATIVE if lie else POSITIVE)
    query = [vocab.USER, vocab.WHAT, fact.subject, fact.relation, vocab.MODEL]

    def reply() -> List[int]:
        return sample_text(vocab, tone, REGISTER_LEN, rng, rate=REGISTER_RATE).tolist() + [answer]

    tokens = [vocab.BOS, vocab.FACT, fact.subject, fact.relation, fact.true_object, vocab.SEP]
    for _ in range(shots):
        tokens += query + reply()
    tokens += query
    if close:
        tokens += reply() + [vocab.EOT]
    _check_fits(tokens, context_len)
    return ConditioningPrompt(tuple(tokens), shots, BehaviorLabel("LIE", LYING if lie else TRUTHFUL))


def lying_prompt_length(shots: int) -> int:
    return 6 + shots * (5 + REGISTER_LEN + 1) + 5


def lying_answer_slots(shots: int) -> List[int]:
    """Positions of the answer object in each few-shot reply"""
    return [6 + i * (5 + REGISTER_LEN + 1) + 5 + REGISTER_LEN for i in range(shots)]


def dialogue_prompt_length(shots: int, reply_len: int = REPLY_LEN) -> int:
    return 1 + shots * (3 + reply_len) + 3
