# train.py
# --------------------------------------------------------------------------------------
# Purpose:
#   Fine-tune the meta-model (all parameters) and the adapter on Yes/No samples
#
# What it does:
#   1) Pools the selected datasets and reshuffles the pool every epoch
#      (uniform interleave, no per-dataset weighting)
#   2) Each step: project bundles -> override placeholder rows -> answer-slot
#      logits -> cross-entropy over the FULL vocabulary against the gold Yes/No token
#   3) Runs a fixed step budget after a linear learning-rate warmup; optional
#      held-out evaluation per epoch
#
# Notes:
#   - Bundles are precomputed, so the input-model is never touched here
# --------------------------------------------------------------------------------------

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from core.errors import ConfigError, NumericError, TrainingError
from core.introspect.adapter import Adapter
from core.introspect.evaluate import evaluate
from core.introspect.meta import MetaSample, answer_slot_logits, group_by_shape
from core.nanoformer.model import Transformer
from core.tensorkit import ops
from core.tensorkit.optim import OptState, adamw_step, clip_grad_norm, warmup_lr
from core.tensorkit.rng import make_rng
from core.tensorkit.tensor import Tape, Tensor, backward, zero_grad
from core.utils.logging_setup import get_logger

logger = get_logger("meta_train")


@dataclass
class MetaTrainParams:
    steps: int = 2000
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 0.0
    clip: float = 1.0
    warmup_steps: int = 100
    log_every: int = 200


@dataclass
class TrainReport:
    seed: int
    steps: int = 0
    epoch_losses: List[float] = field(default_factory=list)
    eval_accuracy: List[float] = field(default_factory=list)     #forced-choice, per epoch
    first_loss: float = float("nan")
    last_loss: float = float("nan")


def meta_loss(meta_model: Transformer, adapter: Adapter, batch: Sequence[MetaSample]) -> Tensor:
    """Mean full-vocabulary cross-entropy at the answer slot; mixed prompt shapes are weighted by count"""
    total: Optional[Tensor] = None
    for idx in group_by_shape(batch).values():
        group = [batch[i] for i in idx]
        logits = answer_slot_logits(meta_model, adapter, group)
        loss = ops.cross_entropy(logits, [s.gold_token for s in group])
        if len(idx) != len(batch):
            loss = ops.scale(loss, len(idx) / len(batch))
        total = loss if total is None else ops.add(total, loss)
    return total


def train_meta(
    meta_model: Transformer,
    adapter: Adapter,
    train_mix: Union[Mapping[str, Sequence[MetaSample]], Sequence[Sequence[MetaSample]]],
    params: MetaTrainParams,
    seed: int,
    eval_samples: Optional[Sequence[MetaSample]] = None,
    progress: bool = False,
) -> TrainReport:
    sets = list(train_mix.values()) if isinstance(train_mix, Mapping) else list(train_mix)
    pool: List[MetaSample] = [s for group in sets for s in group]
    if not pool:
        raise ConfigError("meta training needs a non-empty dataset mix")
    if params.steps < 0 or params.batch_size < 1:
        raise ConfigError(f"bad meta training params: {params}")

    rng = make_rng(seed, "meta_train")
    trainable = meta_model.parameters() + adapter.parameters()
    opt = OptState.fresh(trainable, lr=params.lr, weight_decay=params.weight_decay)
    report = TrainReport(seed=seed)
    order = rng.permutation(len(pool))
    cursor = 0
    epoch: List[float] = []

    def close_epoch() -> None:
        if not epoch:
            return
        report.epoch_losses.append(float(np.mean(epoch)))
        epoch.clear()
        if eval_samples:
            report.eval_accuracy.append(evaluate(meta_model, adapter, eval_samples).forced)

    for step in tqdm(range(params.steps), desc="meta-train", disable=not progress):
        take = order[cursor:cursor + params.batch_size]
        cursor += len(take)
        batch = [pool[int(i)] for i in take]
        opt.lr = warmup_lr(params.lr, step, params.warmup_steps)
        zero_grad(trainable)
        try:
            with Tape() as tape:
                loss = meta_loss(meta_model, adapter, batch)
            backward(tape, loss)
        except NumericError as exc:
            raise TrainingError(f"meta training diverged at step {step}: {exc}") from exc
        if params.clip:
            clip_grad_norm(trainable, params.clip)
        adamw_step(trainable, None, opt)

        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(f"meta loss is {value} at step {step}")
        if step == 0:
            report.first_loss = value
        report.last_loss = value
        report.steps = step + 1
        epoch.append(value)
        if params.log_every and report.steps % params.log_every == 0:
            logger.info("meta step %d loss %.4f", report.steps, value)

        if cursor >= len(pool):
            close_epoch()
            order = rng.permutation(len(pool))
            cursor = 0

    close_epoch()
    return report
