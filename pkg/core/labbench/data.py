# data.py
# --------------------------------------------------------------------------------------
# Purpose:
#   Generate every QA dataset of a run and capture the bundles each input-model
#   family produces for them
#
# What it does:
#   1) S/E/L/M: balanced set of train_per_dataset examples, stratified split into
#      train / eval files
#   2) LIE: balanced eval-only set (never used for training)
#   3) For each family with a checkpoint: one bundle cache per dataset file
# --------------------------------------------------------------------------------------

from __future__ import annotations

from typing import Dict, List, Tuple

from core.behaviors.corpus import TRAIN_TAGS
from core.behaviors.dataset_io import read_qa_set, write_qa_set
from core.behaviors.qa import QAExample, balance_counts, build_balanced_qa_set, split
from core.behaviors.vocab import ToyVocab
from core.errors import ContractError
from core.introspect.capture import BundleCache, capture_cache
from core.introspect.meta import MetaSample, make_meta_samples
from core.labbench.config import Artifacts, load_vocab, model_config, save_vocab, tap_spec, vocab_from_config
from core.labbench.schemas import RunConfigFile
from core.nanoformer.checkpoint import load_checkpoint
from core.tensorkit.rng import make_rng
from core.utils.logging_setup import get_logger

logger = get_logger("gen_data")

LIE_TAG = "LIE"


def dataset_files(datasets=TRAIN_TAGS) -> List[Tuple[str, str]]:
    return [(t, s) for t in datasets for s in ("train", "eval")] + [(LIE_TAG, "eval")]


def build_datasets(cfg: RunConfigFile, vocab: ToyVocab) -> Dict[Tuple[str, str], List[QAExample]]:
    context = min(model_config(cfg, f).context_len for f in cfg.families())
    out: Dict[Tuple[str, str], List[QAExample]] = {}
    for tag in TRAIN_TAGS:
        rng = make_rng(cfg.data.seed, "qa", tag)
        full = build_balanced_qa_set(vocab, tag, cfg.data.train_per_dataset, rng, shots=cfg.data.shots,
                                     context_len=context)
        out[(tag, "train")], out[(tag, "eval")] = split(full, cfg.data.eval_fraction, rng)
    rng = make_rng(cfg.data.seed, "qa", LIE_TAG)
    out[(LIE_TAG, "eval")] = build_balanced_qa_set(vocab, LIE_TAG, cfg.data.lie_eval_size, rng,
                                                   shots=cfg.data.shots, context_len=context)
    return out


def gen_data(cfg: RunConfigFile, progress: bool = False) -> Dict[Tuple[str, str], int]:
    art = Artifacts.of(cfg)
    if art.vocab.exists():
        vocab = load_vocab(art.vocab)
    else:
        vocab = vocab_from_config(cfg)
        save_vocab(vocab, art.vocab)

    sets = build_datasets(cfg, vocab)
    for (tag, part), examples in sets.items():
        write_qa_set(art.dataset(tag, part), examples)
        logger.info("%s/%s: %d examples, balance %s", tag, part, len(examples), balance_counts(examples))

    for family in cfg.families():
        model = load_checkpoint(art.require(art.checkpoint(family), "pretrain"))
        taps = tap_spec(cfg, family)
        digest_before = model.digest()
        for (tag, part), examples in sets.items():
            cache = capture_cache(model, examples, taps, progress=progress)
            cache.save(art.bundles(family, tag, part))
        if model.digest() != digest_before:
            raise ContractError(f"input-model {family} changed during capture")
        logger.info("Family %s: captured bundles at layers %s", family, list(taps.layer_indices))
    return {k: len(v) for k, v in sets.items()}


def load_meta_samples(cfg: RunConfigFile, family: str, vocab: ToyVocab,
                      files: List[Tuple[str, str]]) -> Dict[Tuple[str, str], List[MetaSample]]:
    """Datasets + cached bundles -> meta samples, per (tag, split)"""
    art = Artifacts.of(cfg)
    context = model_config(cfg, "meta").context_len
    out: Dict[Tuple[str, str], List[MetaSample]] = {}
    for tag, part in files:
        examples = read_qa_set(art.require(art.dataset(tag, part), "gen-data"))
        cache = BundleCache.load(art.require(art.bundles(family, tag, part), "gen-data"))
        out[(tag, part)] = make_meta_samples(vocab, examples, cache.select(ex.uid for ex in examples), context)
    return out
