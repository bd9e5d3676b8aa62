# pretrain.py
# --------------------------------------------------------------------------------------
# Purpose:
#   Pretrain the toy input-model(s) and the meta-model as language models
#
# What it does:
#   1) Builds (and saves) the shared toy vocabulary
#   2) For each model ("A", optional "B", "meta"): a seeded pretraining corpus,
#      seeded init, fit_lm until the loss plateaus or max_steps
#   3) Writes checkpoints (with optimizer state) + a small JSON summary
#   4) sample_replies: greedy replies of a pretrained input-model, read back by
#      the counting oracle
#
# Notes:
#   - Every model gets its own corpus stream ("corpus", which) so adding family B
#     never changes family A or the meta-model
# --------------------------------------------------------------------------------------

from __future__ import annotations

import math
from typing import Dict, List, Sequence

import orjson

from core.behaviors.corpus import TRAIN_TAGS, frequency_oracle, num_classes
from core.behaviors.lm_corpus import build_pretrain_corpus
from core.behaviors.prompts import REPLY_LEN, build_conditioning_prompt
from core.behaviors.qa import label_for
from core.labbench.config import Artifacts, load_vocab, model_config, save_vocab, vocab_from_config
from core.labbench.schemas import RunConfigFile
from core.nanoformer.checkpoint import load_checkpoint, save_checkpoint
from core.nanoformer.model import build_model, greedy_generate
from core.nanoformer.train import LMTrainParams, fit_lm
from core.tensorkit.rng import make_rng
from core.utils.logging_setup import get_logger

logger = get_logger("pretrain")


def pretrain_models(cfg: RunConfigFile, progress: bool = False) -> Dict[str, Dict]:
    art = Artifacts.of(cfg)
    vocab = vocab_from_config(cfg)
    save_vocab(vocab, art.vocab)
    logger.info("Vocabulary: %d ids, %d used", vocab.size, vocab.used())

    summary: Dict[str, Dict] = {}
    for which in cfg.families() + ["meta"]:
        mc = model_config(cfg, which)
        corpus = build_pretrain_corpus(vocab, cfg.data.pretrain_docs, make_rng(cfg.data.seed, "corpus", which),
                                       answer_rate=cfg.data.answer_rate, shots=cfg.data.shots)
        knobs = cfg.pretrain.model_dump()
        knobs["seq_len"] = min(knobs["seq_len"], mc.context_len)
        params = LMTrainParams(**knobs)

        model = build_model(mc)
        logger.info("Pretraining %s: %d layers, d=%d, %d params, corpus %d tokens",
                    which, mc.n_layers, mc.d_model, model.num_parameters(), corpus.size)
        opt, report = fit_lm(model, corpus, params, seed=mc.seed, label=which, progress=progress)
        path = save_checkpoint(model, art.checkpoint(which), opt)

        ceiling = math.log(mc.vocab_size)
        logger.info("%s: final loss %.4f (ln V = %.3f) after %d steps%s", which, report.final_loss, ceiling,
                    report.steps, " [plateau]" if report.stopped_on_plateau else "")
        summary[which] = {
            "checkpoint": str(path),
            "steps": report.steps,
            "final_loss": report.final_loss,
            "window_losses": report.window_losses,
            "stopped_on_plateau": report.stopped_on_plateau,
            "ln_vocab": ceiling,
            "config_digest": mc.digest(),
        }

    art.pretrain_report.parent.mkdir(parents=True, exist_ok=True)
    art.pretrain_report.write_bytes(orjson.dumps(summary, option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2))
    return summary


def sample_replies(cfg: RunConfigFile, family: str = "A", per_tag: int = 2,
                   datasets: Sequence[str] = TRAIN_TAGS) -> List[Dict]:
    """
    Greedy replies of a pretrained input-model to fresh conditioning prompts
    The counting oracle reads each reply back, so a model that has picked up the
    behaviors mostly agrees with the label it was conditioned on
    """
    art = Artifacts.of(cfg)
    vocab = load_vocab(art.require(art.vocab, "pretrain"))
    model = load_checkpoint(art.require(art.checkpoint(family), "pretrain"))
    rng = make_rng(cfg.data.seed, "samples", family)
    rows: List[Dict] = []
    for tag in datasets:
        for _ in range(per_tag):
            label = label_for(vocab, tag, int(rng.integers(num_classes(vocab, tag))), rng)
            prompt = build_conditioning_prompt(vocab, label, cfg.data.shots, rng,
                                               context_len=model.config.context_len)
            reply = greedy_generate(model, prompt.tokens, REPLY_LEN, stop_token=vocab.EOT)
            text = [t for t in reply if t != vocab.EOT]
            read_back = frequency_oracle(vocab, tag, text).value if text else None
            rows.append({"family": family, "tag": tag, "label": label.value, "reply": vocab.decode(reply),
                         "read_back": read_back})
            logger.info("[%s] %s:%d -> %s (read back %s)", family, tag, label.value, vocab.decode(reply), read_back)
    return rows
