# meta.py
# --------------------------------------------------------------------------------------
# Purpose:
#   Meta-prompts with placeholders, and the injection step itself
#
# What it does:
#   1) assemble_meta_prompt: question tokens, n PLACEHOLDER tokens, META marker
#      The answer is the next token after META (logits at the last position)
#   2) MetaSample: a meta-prompt paired with the bundle it is asking about
#   3) answer_logits / inject_and_classify: project the bundle through the
#      adapter, substitute it for the placeholder rows right after the embedding
#      lookup and read Yes/No at the answer slot
#
# Notes:
#   - Equal Yes/No logits predict No
# --------------------------------------------------------------------------------------

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.behaviors.qa import QAExample
from core.behaviors.vocab import ToyVocab
from core.errors import ContractError, InputError
from core.introspect.adapter import Adapter, project_tensor
from core.nanoformer.model import ActivationBundle, Transformer, forward_embedded
from core.tensorkit import ops
from core.tensorkit.tensor import Tensor

YES, NO = "Yes", "No"


def assemble_meta_prompt(vocab: ToyVocab, question: Sequence[int], n_placeholders: int,
                         context_len: Optional[int] = None) -> Tuple[int, ...]:
    """Ex: USER Q_IS Q_MODEL Q_ACTING NEGATIVE Q_MARK PH PH META"""
    if n_placeholders < 1:
        raise ContractError(f"need at least one placeholder, got {n_placeholders}")
    tokens = tuple(int(t) for t in question) + (vocab.PLACEHOLDER,) * n_placeholders + (vocab.META,)
    if context_len is not None and len(tokens) > context_len:
        raise InputError(f"meta prompt of {len(tokens)} tokens exceeds context_len {context_len}")
    return tokens


@dataclass(frozen=True)
class MetaSample:
    tokens: Tuple[int, ...]
    positions: Tuple[int, ...]         #placeholder positions, ascending
    bundle: ActivationBundle
    answer_yes: bool
    yes_token: int
    no_token: int
    template: str = ""
    uid: str = ""

    def __post_init__(self):
        if len(self.positions) != len(self.bundle):
            raise ContractError(f"{len(self.positions)} placeholders for a bundle of {len(self.bundle)} vectors")

    @property
    def gold_token(self) -> int:
        return self.yes_token if self.answer_yes else self.no_token

    @property
    def shape_key(self) -> Tuple[int, Tuple[int, ...]]:
        return len(self.tokens), self.positions


def make_meta_sample(vocab: ToyVocab, question: Sequence[int], bundle: ActivationBundle, answer_yes: bool,
                     template: str = "", uid: str = "", context_len: Optional[int] = None) -> MetaSample:
    tokens = assemble_meta_prompt(vocab, question, len(bundle), context_len)
    positions = tuple(i for i, t in enumerate(tokens) if t == vocab.PLACEHOLDER)
    return MetaSample(tokens, positions, bundle, answer_yes, vocab.YES, vocab.NO, template, uid)


def make_meta_samples(vocab: ToyVocab, examples: Sequence[QAExample], bundles: Sequence[ActivationBundle],
                      context_len: Optional[int] = None) -> List[MetaSample]:
    if len(examples) != len(bundles):
        raise ContractError(f"{len(examples)} examples but {len(bundles)} bundles")
    return [make_meta_sample(vocab, ex.question, b, ex.answer_yes, ex.template, ex.uid, context_len)
            for ex, b in zip(examples, bundles)]


def group_by_shape(samples: Sequence[MetaSample]) -> Dict[Tuple[int, Tuple[int, ...]], List[int]]:
    groups: Dict[Tuple[int, Tuple[int, ...]], List[int]] = defaultdict(list)
    for i, s in enumerate(samples):
        groups[s.shape_key].append(i)
    return groups


def answer_slot_logits(meta_model: Transformer, adapter: Adapter, samples: Sequence[MetaSample]) -> Tensor:
    """
    Logits [B, V] at the answer slot for samples that share one prompt shape
    Taped when a tape is active, so the same path trains and evaluates
    """
    keys = {s.shape_key for s in samples}
    if len(keys) != 1:
        raise ContractError("answer_slot_logits needs samples with one prompt shape")
    positions = samples[0].positions
    tokens = np.asarray([s.tokens for s in samples], dtype=np.int64)
    vectors = np.stack([s.bundle.vectors for s in samples])
    values = project_tensor(adapter, vectors)
    logits = forward_embedded(meta_model, tokens, positions, values)
    return ops.take(logits, tokens.shape[1] - 1, axis=1)


def answer_logits(meta_model: Transformer, adapter: Adapter, samples: Sequence[MetaSample],
                  batch_size: int = 64) -> np.ndarray:
    """Untaped answer-slot logits [n, V] for any mix of prompt shapes, in input order"""
    out = np.zeros((len(samples), meta_model.config.vocab_size), dtype=np.float32)
    for idx in group_by_shape(samples).values():
        for s in range(0, len(idx), batch_size):
            chunk = idx[s:s + batch_size]
            out[chunk] = answer_slot_logits(meta_model, adapter, [samples[i] for i in chunk]).data
    return out


@dataclass(frozen=True)
class Classification:
    logit_yes: float
    logit_no: float
    predicted: str
    argmax_token: int


def classify_logits(logits: np.ndarray, yes_token: int, no_token: int) -> Classification:
    ly, ln = float(logits[yes_token]), float(logits[no_token])
    return Classification(ly, ln, YES if ly > ln else NO, int(np.argmax(logits)))


def inject_and_classify(meta_model: Transformer, adapter: Adapter, sample: MetaSample) -> Classification:
    logits = answer_slot_logits(meta_model, adapter, [sample]).data[0]
    return classify_logits(logits, sample.yes_token, sample.no_token)
