# matrix.py
# --------------------------------------------------------------------------------------
# Purpose:
#   The dataset-combination generalization matrix
#
# What it does:
#   1) all_combos: every subset of {S, E, L, M} (16), the empty one being the
#      untrained baseline
#   2) run_cell: fresh meta-model from its checkpoint + fresh adapter, meta-train
#      on the combo's pooled train sets for a fixed step budget, score on LIE;
#      alongside, a linear readout fit on the same raw bundles is scored on LIE
#   3) run_matrix: all combos x seeds, optionally on a process pool; a failing
#      cell is logged and recorded, the matrix keeps going
#   4) run_cross_family: the same matrix with input-model family B
#
# Notes:
#   - Jobs carry the config as a plain dict and reload everything from disk, so
#     cells never share mutable state and run order does not matter
# --------------------------------------------------------------------------------------

from __future__ import annotations

import itertools
import logging
import multiprocessing
import time
import traceback
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from core.behaviors.corpus import TRAIN_TAGS
from core.errors import ConfigError
from core.introspect.adapter import Adapter
from core.introspect.evaluate import evaluate, readout_transfer
from core.introspect.train import MetaTrainParams, train_meta
from core.labbench.config import Artifacts, load_vocab, model_config, parse_run_config
from core.labbench.data import LIE_TAG, load_meta_samples
from core.labbench.schemas import CellRecord, EvalReport, RunConfigFile, SeedResult
from core.nanoformer.checkpoint import load_checkpoint
from core.tensorkit.rng import derive_seed
from core.utils.logging_setup import get_logger, worker_logging

logger = get_logger("matrix")

BASELINE_LABEL = "none"
COMBO_SEP = "+"


def canonical(combo: Iterable[str]) -> Tuple[str, ...]:
    combo = tuple(dict.fromkeys(combo))
    unknown = [t for t in combo if t not in TRAIN_TAGS]
    if unknown:
        raise ConfigError(f"unknown training dataset(s) {unknown}; choose from {list(TRAIN_TAGS)}")
    return tuple(t for t in TRAIN_TAGS if t in combo)


def combo_label(combo: Iterable[str]) -> str:
    c = canonical(combo)
    return COMBO_SEP.join(c) if c else BASELINE_LABEL


def parse_combo(label: str) -> Tuple[str, ...]:
    if label == BASELINE_LABEL:
        return ()
    return canonical(label.split(COMBO_SEP))


def all_combos(datasets: Sequence[str] = TRAIN_TAGS) -> List[Tuple[str, ...]]:
    """Every subset (baseline first, then by size, canonical order inside a size)"""
    base = canonical(datasets)
    return [c for r in range(len(base) + 1) for c in itertools.combinations(base, r)]


def run_cell(combo: Iterable[str], cfg: RunConfigFile, seed: int, family: str = "A") -> SeedResult:
    combo = canonical(combo)
    label = combo_label(combo)
    art = Artifacts.of(cfg)
    vocab = load_vocab(art.require(art.vocab, "pretrain"))
    meta = load_checkpoint(art.require(art.checkpoint("meta"), "pretrain"))
    files = [(t, "train") for t in combo] + [(LIE_TAG, "eval")]
    samples = load_meta_samples(cfg, family, vocab, files)

    d_in = model_config(cfg, family).d_model
    adapter = Adapter.create(d_in, meta.config.d_model, derive_seed(seed, "adapter", family))
    started = time.perf_counter()
    steps = 0
    if combo:
        params = MetaTrainParams(**cfg.meta_train.model_dump())
        report = train_meta(meta, adapter, {t: samples[(t, "train")] for t in combo}, params, seed=seed)
        steps = report.steps
    lie_eval = samples[(LIE_TAG, "eval")]
    scores = evaluate(meta, adapter, lie_eval)
    readout = None
    if combo:
        readout = readout_transfer([s for t in combo for s in samples[(t, "train")]], lie_eval)
    elapsed = time.perf_counter() - started
    logger.info("[%s] %s seed %d: strict %.3f forced %.3f readout %s (%d steps, %.1fs)",
                family, label, seed, scores.strict, scores.forced,
                "-" if readout is None else f"{readout:.3f}", steps, elapsed)
    return SeedResult(family=family, combo=label, seed=seed, strict=scores.strict, forced=scores.forced,
                      readout=readout, steps=steps, wall_clock=elapsed, n_eval=scores.n,
                      non_answer=scores.non_answer)


def _run_job(job: Tuple[Dict, Tuple[str, ...], int, str]) -> SeedResult:
    raw, combo, seed, family = job
    try:
        return run_cell(combo, parse_run_config(raw), seed, family)
    except Exception as exc:
        logger.error("[%s] %s seed %d failed: %s", family, combo_label(combo), seed, exc)
        logger.debug("%s", traceback.format_exc())
        return SeedResult(family=family, combo=combo_label(combo), seed=seed, failed=True,
                          error=f"{type(exc).__name__}: {exc}")


def aggregate(family: str, results: Sequence[SeedResult], combos: Sequence[Tuple[str, ...]]) -> List[CellRecord]:
    """Means over the seeds that succeeded; a cell with any failed seed is marked failed"""
    by_label: Dict[str, List[SeedResult]] = {combo_label(c): [] for c in combos}
    for r in results:
        by_label.setdefault(r.combo, []).append(r)
    cells = []
    for label, rs in by_label.items():
        rs = sorted(rs, key=lambda r: r.seed)
        ok = [r for r in rs if not r.failed]
        readouts = [r.readout for r in ok if r.readout is not None]
        cells.append(CellRecord(
            family=family,
            combo=label,
            seeds=rs,
            seed_count=len(ok),
            failed_seeds=len(rs) - len(ok),
            mean_strict=float(np.mean([r.strict for r in ok])) if ok else None,
            mean_forced=float(np.mean([r.forced for r in ok])) if ok else None,
            mean_readout=float(np.mean(readouts)) if ok and len(readouts) == len(ok) else None,
            failed=len(ok) != len(rs),
        ))
    return cells


def run_matrix(cfg: RunConfigFile, family: str = "A", datasets: Optional[Sequence[str]] = None,
               seeds: Optional[Sequence[int]] = None, workers: Optional[int] = None,
               progress: bool = False) -> EvalReport:
    combos = all_combos(datasets or TRAIN_TAGS)
    seeds = list(seeds or cfg.seeds)
    workers = workers or cfg.workers
    mc = model_config(cfg, family)
    raw = cfg.model_dump()
    jobs = [(raw, combo, seed, family) for combo in combos for seed in seeds]
    logger.info("Matrix [%s]: %d combos x %d seeds = %d cells, %d worker(s)",
                family, len(combos), len(seeds), len(jobs), workers)

    if workers > 1:
        with multiprocessing.Pool(processes=workers, initializer=worker_logging,
                                  initargs=(logging.getLogger().getEffectiveLevel(),)) as pool:
            results = list(tqdm(pool.imap(_run_job, jobs), total=len(jobs), desc=f"matrix {family}",
                                disable=not progress))
    else:
        results = [_run_job(j) for j in tqdm(jobs, desc=f"matrix {family}", disable=not progress)]

    failed = sum(r.failed for r in results)
    if failed:
        logger.warning("Matrix [%s]: %d of %d cells failed", family, failed, len(results))
    return EvalReport(family=family, input_config_digest=mc.digest(), cells=aggregate(family, results, combos))


def run_cross_family(cfg: RunConfigFile, datasets: Optional[Sequence[str]] = None,
                     seeds: Optional[Sequence[int]] = None, workers: Optional[int] = None,
                     progress: bool = False) -> EvalReport:
    if cfg.family_b is None:
        raise ConfigError("cross-family run needs a family_b model block in the config")
    return run_matrix(cfg, "B", datasets, seeds, workers, progress)
