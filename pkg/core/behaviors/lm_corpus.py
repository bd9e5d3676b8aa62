# lm_corpus.py
# --------------------------------------------------------------------------------------
# Purpose:
#   Pretraining text for the toy input- and meta-models
#
# What it does:
#   Concatenates BOS-prefixed documents of three kinds into one token stream:
#     - finished conditioning dialogues for random S/E/L/M behaviors
#     - finished lying / truthful fact episodes
#     - question chats: question + a few content tokens + META + answer,
#       where the answer is YES, NO, or EOT (no answer)
#
# Notes:
#   - The META turn is answered at random, so a pretrained meta-model knows
#     YES/NO are plausible there but has no reason to prefer either; with the
#     default answer_rate most META turns close with EOT
#   - PLACEHOLDER never appears
# --------------------------------------------------------------------------------------

from __future__ import annotations

from typing import List

import numpy as np

from core.behaviors.corpus import TAGS, TRAIN_TAGS, num_classes, sample_text
from core.behaviors.prompts import DEFAULT_SHOTS, build_conditioning_prompt, build_lying_episode, sample_fact
from core.behaviors.qa import build_question, label_for
from core.behaviors.vocab import ToyVocab
from core.errors import ContractError

DOC_MIX = (0.55, 0.15, 0.30)    #dialogue, lying episode, question chat
ANSWER_RATE = 0.4               #share of META turns answered YES or NO (split evenly)
EVIDENCE_LEN = 2


def _question_chat(vocab: ToyVocab, rng: np.random.Generator, answer_rate: float) -> List[int]:
    tag = TAGS[int(rng.integers(len(TAGS)))]
    question = list(build_question(vocab, tag, int(rng.integers(num_classes(vocab, tag)))))
    text_tag = tag if tag in TRAIN_TAGS else TRAIN_TAGS[int(rng.integers(len(TRAIN_TAGS)))]
    evidence = sample_text(vocab, label_for(vocab, text_tag, int(rng.integers(num_classes(vocab, text_tag))), rng),
                           EVIDENCE_LEN, rng).tolist()
    u = rng.random()
    if u < answer_rate / 2:
        answer = [vocab.YES, vocab.EOT]
    elif u < answer_rate:
        answer = [vocab.NO, vocab.EOT]
    else:
        answer = [vocab.EOT]
    return [vocab.BOS] + question + evidence + [vocab.META] + answer


def build_pretrain_corpus(vocab: ToyVocab, n_docs: int, rng: np.random.Generator,
                          answer_rate: float = ANSWER_RATE, shots: int = DEFAULT_SHOTS) -> np.ndarray:
    if n_docs < 1:
        raise ContractError(f"n_docs must be >= 1, got {n_docs}")
    if not 0.0 <= answer_rate <= 1.0:
        raise ContractError(f"answer_rate must be in [0, 1], got {answer_rate}")
    stream: List[int] = []
    for _ in range(n_docs):
        kind = rng.choice(3, p=DOC_MIX)
        if kind == 0:
            tag = TRAIN_TAGS[int(rng.integers(len(TRAIN_TAGS)))]
            label = label_for(vocab, tag, int(rng.integers(num_classes(vocab, tag))), rng)
            doc = list(build_conditioning_prompt(vocab, label, shots, rng, close=True).tokens)
        elif kind == 1:
            doc = list(build_lying_episode(vocab, sample_fact(vocab, rng), bool(rng.integers(2)), shots, rng,
                                           close=True).tokens)
        else:
            doc = _question_chat(vocab, rng, answer_rate)
        stream.extend(doc)
    return np.asarray(stream, dtype=np.int64)
