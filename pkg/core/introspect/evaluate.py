# evaluate.py
# --------------------------------------------------------------------------------------
# Purpose:
#   Score a meta-model on a Yes/No set, plus linear readouts on raw bundles
#   (a signal check within one set and a transfer baseline across sets)
#
# Scoring modes:
#   strict  argmax over the full vocabulary must be the gold Yes/No token, so an
#           untrained model that prefers any other token scores below chance
#   forced  argmax over the Yes/No logits only (ties -> No)
# --------------------------------------------------------------------------------------

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, Sequence

import numpy as np

from core.errors import ConfigError, ContractError, DimensionError
from core.introspect.adapter import Adapter
from core.introspect.meta import MetaSample, answer_logits
from core.nanoformer.model import Transformer
from core.tensorkit.rng import make_rng
from core.utils.logging_setup import get_logger

logger = get_logger("evaluate")

SCORING_MODES = ("strict", "forced", "both")


@dataclass
class EvalScores:
    strict: float
    forced: float
    n: int
    non_answer: int         #samples whose full-vocab argmax is neither Yes nor No
    predicted_yes: int      #forced-choice Yes predictions

    def accuracy(self, mode: str) -> float:
        if mode not in ("strict", "forced"):
            raise ConfigError(f"unknown scoring mode {mode!r}")
        return self.strict if mode == "strict" else self.forced

    def to_dict(self) -> Dict:
        return asdict(self)


def check_scoring(mode: str) -> str:
    if mode not in SCORING_MODES:
        raise ConfigError(f"scoring must be one of {SCORING_MODES}, got {mode!r}")
    return mode


def score_logits(logits: np.ndarray, samples: Sequence[MetaSample]) -> EvalScores:
    """Pure scoring over precomputed answer-slot logits [n, V]"""
    if len(samples) == 0:
        raise ContractError("cannot score an empty set")
    if logits.shape[0] != len(samples):
        raise ContractError(f"{logits.shape[0]} logit rows for {len(samples)} samples")
    gold = np.array([s.gold_token for s in samples])
    yes = np.array([s.yes_token for s in samples])
    no = np.array([s.no_token for s in samples])
    rows = np.arange(len(samples))
    top = logits.argmax(axis=1)
    forced_yes = logits[rows, yes] > logits[rows, no]
    forced_pred = np.where(forced_yes, yes, no)
    return EvalScores(
        strict=float(np.mean(top == gold)),
        forced=float(np.mean(forced_pred == gold)),
        n=len(samples),
        non_answer=int(np.sum((top != yes) & (top != no))),
        predicted_yes=int(forced_yes.sum()),
    )


def evaluate(meta_model: Transformer, adapter: Adapter, samples: Sequence[MetaSample],
             scoring: str = "both", batch_size: int = 64) -> EvalScores:
    check_scoring(scoring)
    if len(samples) == 0:
        raise ContractError("evaluation set is empty")
    scores = score_logits(answer_logits(meta_model, adapter, samples, batch_size), samples)
    logger.debug("Eval n=%d strict=%.3f forced=%.3f non-answer=%d", scores.n, scores.strict, scores.forced,
                 scores.non_answer)
    return scores


@dataclass
class LinearReadout:
    """Ridge least-squares classifier on standardized features (one-hot targets, bias column)"""
    mean: np.ndarray
    scale: np.ndarray
    weight: np.ndarray
    classes: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray, labels: Sequence[int], ridge: float = 1e-3) -> "LinearReadout":
        x = np.asarray(features, dtype=np.float64)
        y = np.asarray(labels, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] < 2:
            raise ContractError(f"readout needs [n>=2, d] features with n labels, got {x.shape} / {y.shape}")
        classes, y_idx = np.unique(y, return_inverse=True)
        mu, sd = x.mean(axis=0), x.std(axis=0) + 1e-8
        z = np.hstack([(x - mu) / sd, np.ones((len(x), 1))])
        a = z.T @ z + ridge * np.eye(z.shape[1])
        w = np.linalg.solve(a, z.T @ np.eye(len(classes))[y_idx])
        return cls(mu, sd, w, classes)

    def predict(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.mean.shape[0]:
            raise DimensionError(f"readout was fit on {self.mean.shape[0]} features, got {x.shape}")
        z = np.hstack([(x - self.mean) / self.scale, np.ones((len(x), 1))])
        return self.classes[(z @ self.weight).argmax(axis=1)]

    def accuracy(self, features: np.ndarray, labels: Sequence[int]) -> float:
        return float(np.mean(self.predict(features) == np.asarray(labels, dtype=np.int64)))


def bundle_features(samples: Sequence[MetaSample]) -> np.ndarray:
    """One row per sample: its bundle vectors flattened in tap order"""
    return np.stack([s.bundle.vectors.reshape(-1) for s in samples])


def readout_transfer(train: Sequence[MetaSample], held: Sequence[MetaSample], ridge: float = 1e-3) -> float:
    """Fit a Yes/No readout on raw train bundles, accuracy on held bundles (no meta-model involved)"""
    if not train or not held:
        raise ContractError("readout transfer needs non-empty train and held sets")
    readout = LinearReadout.fit(bundle_features(train), [int(s.answer_yes) for s in train], ridge)
    return readout.accuracy(bundle_features(held), [int(s.answer_yes) for s in held])


def linear_probe_accuracy(features: np.ndarray, labels: Sequence[int], seed: int = 0,
                          train_fraction: float = 0.5, ridge: float = 1e-3) -> float:
    """LinearReadout fit on a seeded split, accuracy on the held-out part"""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] < 4:
        raise ContractError(f"held-out readout needs [n>=4, d] features with n labels, got {x.shape} / {y.shape}")
    order = make_rng(seed, "probe").permutation(len(y))
    cut = int(round(train_fraction * len(y)))
    tr, te = order[:cut], order[cut:]
    return LinearReadout.fit(x[tr], y[tr], ridge).accuracy(x[te], y[te])
