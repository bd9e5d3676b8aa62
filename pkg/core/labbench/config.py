# config.py
# --------------------------------------------------------------------------------------
# Purpose:
#   Load a YAML run configuration and lay out the artifact directory of a run
#
# What it does:
#   1) load_run_config: YAML -> RunConfigFile (pydantic), CLI overrides applied,
#      any parse/validation failure -> ConfigError
#   2) Artifacts: every path a run reads or writes, derived from out_dir
#
# Layout:
#   <out>/vocab.json
#   <out>/checkpoints/{input_A,input_B,meta}.mmlb
#   <out>/data/{S,E,L,M}_{train,eval}.jsonl, LIE_eval.jsonl
#   <out>/bundles/<family>/<tag>_<split>.mmab
#   <out>/results/<family>/{results.jsonl,plot.csv}
# --------------------------------------------------------------------------------------

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import orjson
import yaml
from pydantic import ValidationError

from core.behaviors.vocab import ToyVocab, VocabSpec, make_toy_vocab
from core.errors import ConfigError
from core.labbench.schemas import RunConfigFile
from core.nanoformer.model import LayerTapSpec, ModelConfig

PathLike = Union[str, Path]


def load_run_config(path: PathLike, overrides: Optional[Dict[str, Any]] = None) -> RunConfigFile:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping at top level")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return parse_run_config(raw, str(path))


def parse_run_config(raw: Dict[str, Any], source: str = "<dict>") -> RunConfigFile:
    try:
        cfg = RunConfigFile.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid run config {source}: {exc}") from exc
    #Validate every model shape up front
    for family in cfg.families():
        model_config(cfg, family)
    model_config(cfg, "meta")
    return cfg


def model_config(cfg: RunConfigFile, which: str) -> ModelConfig:
    """which: "A", "B" or "meta" """
    block = cfg.meta_model if which == "meta" else _family_block(cfg, which)
    return block.build(cfg.vocab.total_size)


def _family_block(cfg: RunConfigFile, family: str):
    try:
        return cfg.model_block(family)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def tap_spec(cfg: RunConfigFile, family: str) -> LayerTapSpec:
    n_layers = _family_block(cfg, family).n_layers
    if cfg.taps.layers is not None:
        spec = LayerTapSpec(tuple(cfg.taps.layers), cfg.taps.token_position)
    else:
        spec = LayerTapSpec.every(n_layers, cfg.taps.stride, cfg.taps.token_position)
    if not spec.layer_indices:
        raise ConfigError("tap spec selects no layers")
    if spec.layer_indices[-1] >= n_layers:
        raise ConfigError(f"tap layer {spec.layer_indices[-1]} >= n_layers {n_layers} for family {family}")
    return spec


def vocab_from_config(cfg: RunConfigFile) -> ToyVocab:
    return make_toy_vocab(VocabSpec(total_size=cfg.vocab.total_size, seed=cfg.vocab.seed))


@dataclass(frozen=True)
class Artifacts:
    root: Path

    @classmethod
    def of(cls, cfg: RunConfigFile) -> "Artifacts":
        return cls(Path(cfg.out_dir))

    @property
    def vocab(self) -> Path:
        return self.root / "vocab.json"

    def checkpoint(self, which: str) -> Path:
        name = "meta" if which == "meta" else f"input_{which}"
        return self.root / "checkpoints" / f"{name}.mmlb"

    def dataset(self, tag: str, split: str) -> Path:
        return self.root / "data" / f"{tag}_{split}.jsonl"

    def bundles(self, family: str, tag: str, split: str) -> Path:
        return self.root / "bundles" / family / f"{tag}_{split}.mmab"

    def results_dir(self, family: str) -> Path:
        return self.root / "results" / family

    @property
    def pretrain_report(self) -> Path:
        return self.root / "checkpoints" / "pretrain_report.json"

    def require(self, path: Path, hint: str) -> Path:
        if not path.exists():
            raise ConfigError(f"missing {path}; run `{hint}` first")
        return path


def save_vocab(vocab: ToyVocab, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(vocab.to_dict(), option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2))


def load_vocab(path: Path) -> ToyVocab:
    try:
        return ToyVocab.from_dict(orjson.loads(path.read_bytes()))
    except (OSError, orjson.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot load vocabulary {path}: {exc}") from exc
