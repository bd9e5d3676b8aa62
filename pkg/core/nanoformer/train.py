# train.py
# --------------------------------------------------------------------------------------
# Purpose:
#   Next-token language-model training for nanoformer models
#
# What it does:
#   1) lm_batches: random windows over a flat token stream
#   2) train_lm_step: one taped forward/backward + AdamW step
#   3) fit_lm: step loop with a plateau stopping rule and a hard step cap
#
# Stopping rule:
#   The mean loss of each window of `eval_every` steps is compared with the best
#   window so far; when it fails to improve by `min_delta` (relative) for
#   `patience` consecutive windows, training stops.
# --------------------------------------------------------------------------------------

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, List, Optional

import numpy as np
from tqdm import tqdm

from core.errors import InputError, NumericError, TrainingError
from core.nanoformer.model import Transformer, as_token_batch, transformer_pass
from core.tensorkit import ops
from core.tensorkit.optim import OptState, adamw_step, clip_grad_norm
from core.tensorkit.rng import make_rng
from core.tensorkit.tensor import Tape, Tensor, backward, zero_grad
from core.utils.logging_setup import get_logger

logger = get_logger("lm_train")

CLIP_NORM = 1.0


@dataclass
class LMTrainParams:
    lr: float = 3e-3
    weight_decay: float = 0.1
    batch_size: int = 16
    seq_len: int = 32
    max_steps: int = 3000
    eval_every: int = 100
    patience: int = 3
    min_delta: float = 0.01
    clip: float = CLIP_NORM
    log_every: int = 100


@dataclass
class LMTrainReport:
    window_losses: List[float] = field(default_factory=list)
    steps: int = 0
    final_loss: float = float("nan")
    stopped_on_plateau: bool = False


def lm_loss(model: Transformer, batch) -> Tensor:
    """Mean next-token cross-entropy of batch[:, 1:] given batch[:, :-1]"""
    batch = np.asarray(batch, dtype=np.int64)
    if batch.ndim != 2 or batch.shape[1] < 2:
        raise InputError(f"LM batch must be [B, T>=2], got {batch.shape}")
    inputs, targets = batch[:, :-1], batch[:, 1:]
    arr, _ = as_token_batch(model, inputs)
    logits, _ = transformer_pass(model, arr)
    b, t, v = logits.shape
    return ops.cross_entropy(ops.reshape(logits, (b * t, v)), targets.reshape(-1))


def train_lm_step(model: Transformer, batch, opt_state: OptState, clip: float = CLIP_NORM) -> float:
    params = model.parameters()
    zero_grad(params)
    with Tape() as tape:
        loss = lm_loss(model, batch)
    backward(tape, loss)
    if clip:
        clip_grad_norm(params, clip)
    adamw_step(params, None, opt_state)
    return loss.item()


def lm_batches(stream: np.ndarray, seq_len: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Endless [batch_size, seq_len + 1] windows at uniform random offsets"""
    stream = np.asarray(stream, dtype=np.int64)
    span = seq_len + 1
    if stream.size < span:
        raise InputError(f"token stream of {stream.size} is shorter than one window ({span})")
    offsets_hi = stream.size - span + 1
    base = np.arange(span)
    while True:
        starts = rng.integers(0, offsets_hi, size=batch_size)
        yield stream[starts[:, None] + base[None, :]]


def fit_lm(model: Transformer, stream: np.ndarray, params: LMTrainParams, seed: int,
           label: str = "lm", progress: bool = False) -> tuple:
    """Returns (OptState, LMTrainReport); raises TrainingError on divergence"""
    if params.seq_len > model.config.context_len:
        raise InputError(f"seq_len {params.seq_len} exceeds context_len {model.config.context_len}")
    rng = make_rng(seed, "lm_batches", label)
    opt = OptState.fresh(model.parameters(), lr=params.lr, weight_decay=params.weight_decay)
    report = LMTrainReport()
    batches = lm_batches(stream, params.seq_len, params.batch_size, rng)
    best = math.inf
    stale = 0
    window: List[float] = []

    for step in tqdm(range(params.max_steps), desc=f"pretrain {label}", disable=not progress):
        try:
            loss = train_lm_step(model, next(batches), opt, clip=params.clip)
        except NumericError as exc:
            raise TrainingError(f"{label}: diverged at step {step}: {exc}") from exc
        if not math.isfinite(loss):
            raise TrainingError(f"{label}: loss is {loss} at step {step}")
        window.append(loss)
        report.steps = step + 1
        if params.log_every and report.steps % params.log_every == 0:
            logger.info("[%s] step %d loss %.4f", label, report.steps, loss)

        if len(window) == params.eval_every:
            mean = float(np.mean(window))
            report.window_losses.append(mean)
            window = []
            if mean < best * (1.0 - params.min_delta):
                best = mean
                stale = 0
            else:
                stale += 1
                if stale >= params.patience:
                    report.stopped_on_plateau = True
                    logger.info("[%s] loss plateaued at %.4f after %d steps", label, mean, report.steps)
                    break

    if window:
        report.window_losses.append(float(np.mean(window)))
    report.final_loss = report.window_losses[-1] if report.window_losses else float("nan")
    return opt, report
