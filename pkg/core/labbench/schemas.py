# schemas.py
# --------------------------------------------------------------------------------------
# Purpose:
#     Pydantic models for the run-configuration file and the result records
#
# Overview:
#     - RunConfigFile mirrors configs/*.yaml (models, taps, data, training, seeds)
#     - SeedResult / CellRecord / EvalReport are what the matrix produces and what
#       results.jsonl stores
#
# Notes:
#     - vocab_size is not set per model: every model shares the toy vocabulary
#       and takes vocab.total_size
#     - family "A" is the primary input-model, "B" the cross-family one
# --------------------------------------------------------------------------------------

from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, model_validator

from core.nanoformer.model import ModelConfig

#Ex:model shape block
#{
#  "n_layers":8, "d_model":64, "n_heads":4, "d_ff":256,
#  "context_len":64, "seed":11, "tie_embeddings":true, "init_std":0.02
#}
class ModelConfigFile(BaseModel):
    n_layers: int = Field(gt=0)
    d_model: int = Field(gt=0)
    n_heads: int = Field(gt=0)
    d_ff: int = Field(gt=0)
    context_len: int = Field(ge=2)
    seed: int = Field(default=0, ge=0)
    tie_embeddings: bool = True
    init_std: float = Field(default=0.02, gt=0)

    def build(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, **self.model_dump())

#Ex:{"stride":4, "layers":null, "token_position":null}
#Notes:
#  -layers overrides stride when given (e.g. [0, 4])
#  -token_position null -> last prompt token
class TapConfig(BaseModel):
    stride: int = Field(default=4, ge=1)
    layers: Optional[List[int]] = None
    token_position: Optional[int] = None

class VocabConfig(BaseModel):
    total_size: int = Field(default=256, gt=0)
    seed: int = Field(default=0, ge=0)

#Ex:{"train_per_dataset":800, "eval_fraction":0.25, "lie_eval_size":200, "shots":3, ...}
class DataConfig(BaseModel):
    train_per_dataset: int = Field(default=800, ge=2)     #balanced set size per S/E/L/M before the split
    eval_fraction: float = Field(default=0.25, gt=0, lt=1)
    lie_eval_size: int = Field(default=200, ge=2)
    shots: int = Field(default=3, ge=1)
    pretrain_docs: int = Field(default=6000, ge=1)
    answer_rate: float = Field(default=0.4, ge=0, le=1)
    seed: int = Field(default=0, ge=0)

class PretrainParamsFile(BaseModel):
    lr: float = 3e-3
    weight_decay: float = 0.1
    batch_size: int = Field(default=16, ge=1)
    seq_len: int = Field(default=32, ge=1)
    max_steps: int = Field(default=3000, ge=1)
    eval_every: int = Field(default=100, ge=1)
    patience: int = Field(default=3, ge=1)
    min_delta: float = Field(default=0.01, ge=0)
    log_every: int = Field(default=100, ge=0)

class MetaTrainParamsFile(BaseModel):
    steps: int = Field(default=2000, ge=0)
    batch_size: int = Field(default=16, ge=1)
    lr: float = 1e-3
    weight_decay: float = 0.0
    clip: float = 1.0
    warmup_steps: int = Field(default=100, ge=0)
    log_every: int = Field(default=200, ge=0)

class RunConfigFile(BaseModel):
    input_model: ModelConfigFile
    meta_model: ModelConfigFile
    family_b: Optional[ModelConfigFile] = None
    taps: TapConfig = Field(default_factory=TapConfig)
    vocab: VocabConfig = Field(default_factory=VocabConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    pretrain: PretrainParamsFile = Field(default_factory=PretrainParamsFile)
    meta_train: MetaTrainParamsFile = Field(default_factory=MetaTrainParamsFile)
    seeds: List[int] = Field(default_factory=lambda: [0, 1])
    out_dir: str = "runs/default"
    workers: int = Field(default=1, ge=1)
    scoring: Literal["strict", "forced", "both"] = "both"

    @model_validator(mode="after")
    def _check(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if any(s < 0 or s >= 2 ** 64 for s in self.seeds):
            raise ValueError("seeds must be u64")
        if self.family_b is not None and (self.family_b.d_model, self.family_b.n_layers) == (
                self.input_model.d_model, self.input_model.n_layers):
            raise ValueError("family_b must differ from input_model in d_model and/or n_layers")
        return self

    def model_block(self, family: str) -> ModelConfigFile:
        if family == "A":
            return self.input_model
        if family == "B" and self.family_b is not None:
            return self.family_b
        raise ValueError(f"no input-model family {family!r} in this config")

    def families(self) -> List[str]:
        return ["A", "B"] if self.family_b is not None else ["A"]

#Ex:one (combo, seed) run
#{
#  "family":"A", "combo":"S+M", "seed":1, "strict":0.62, "forced":0.71, "readout":0.55,
#  "steps":2000, "wall_clock":41.3, "n_eval":200, "non_answer":12,
#  "failed":false, "error":null
#}
class SeedResult(BaseModel):
    family: str
    combo: str
    seed: int
    strict: Optional[float] = None
    forced: Optional[float] = None
    readout: Optional[float] = None     #linear readout on raw bundles, trained combos only
    steps: int = 0
    wall_clock: float = 0.0
    n_eval: int = 0
    non_answer: int = 0
    failed: bool = False
    error: Optional[str] = None

#Ex:aggregate over seeds for one combination
#{
#  "family":"A", "combo":"S+M", "seed_count":2, "failed_seeds":0,
#  "mean_strict":0.6, "mean_forced":0.7, "mean_readout":0.55, "failed":false
#}
class CellRecord(BaseModel):
    family: str
    combo: str
    seeds: List[SeedResult]
    seed_count: int
    failed_seeds: int = 0
    mean_strict: Optional[float] = None
    mean_forced: Optional[float] = None
    mean_readout: Optional[float] = None
    failed: bool = False

class EvalReport(BaseModel):
    family: str
    input_config_digest: str
    cells: List[CellRecord]

    def cell(self, combo: str) -> CellRecord:
        for c in self.cells:
            if c.combo == combo:
                return c
        raise KeyError(combo)

    def as_dict(self) -> Dict[str, CellRecord]:
        return {c.combo: c for c in self.cells}
