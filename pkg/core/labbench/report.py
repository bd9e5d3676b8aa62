# report.py
# --------------------------------------------------------------------------------------
# Purpose:
#   Persist, reload and summarise matrix reports
#
# Files (per family, under results/<family>/):
#   results.jsonl  first line {"kind":"report", family, input_config_digest}, then
#                  one {"kind":"seed", ...} line per (combo, seed) and one
#                  {"kind":"cell", ...} aggregate line per combo
#   plot.csv       combo,mean_strict,mean_forced,seed_count
#                  cells with a failed seed carry "failed" in the mean columns
#
# Trends:
#   strict (or forced) means against the untrained baseline, and forced means
#   against chance; an untrained meta-model rarely answers Yes/No at all, so
#   its strict score sits near zero
# --------------------------------------------------------------------------------------

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import orjson

from core.errors import FormatError
from core.labbench.matrix import BASELINE_LABEL
from core.labbench.schemas import CellRecord, EvalReport, SeedResult
from core.utils.logging_setup import get_logger

logger = get_logger("report")

RESULTS_FILE = "results.jsonl"
PLOT_FILE = "plot.csv"
PLOT_HEADER = ["combo", "mean_strict", "mean_forced", "seed_count"]
FAILED_MARK = "failed"
CHANCE = 0.5

PathLike = Union[str, Path]


def _dump(rec: Dict) -> bytes:
    return orjson.dumps(rec, option=orjson.OPT_SORT_KEYS) + b"\n"


def write_report(report: EvalReport, out_dir: PathLike) -> Tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = out / RESULTS_FILE
    with results.open("wb") as f:
        f.write(_dump({"kind": "report", "family": report.family, "input_config_digest": report.input_config_digest}))
        for cell in report.cells:
            for s in cell.seeds:
                f.write(_dump({"kind": "seed", **s.model_dump()}))
            f.write(_dump({"kind": "cell", **cell.model_dump(exclude={"seeds"})}))

    plot = out / PLOT_FILE
    with plot.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(PLOT_HEADER)
        for cell in report.cells:
            if cell.failed or cell.mean_strict is None:
                w.writerow([cell.combo, FAILED_MARK, FAILED_MARK, cell.seed_count])
            else:
                w.writerow([cell.combo, f"{cell.mean_strict:.6f}", f"{cell.mean_forced:.6f}", cell.seed_count])
    logger.info("Wrote %s and %s", results, plot)
    return results, plot


def read_report(path: PathLike) -> EvalReport:
    """Accepts the results.jsonl file or the directory holding it"""
    path = Path(path)
    if path.is_dir():
        path = path / RESULTS_FILE
    header: Optional[Dict] = None
    seeds: Dict[str, List[SeedResult]] = {}
    cells: List[Dict] = []
    with path.open("rb") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = orjson.loads(line)
                kind = rec.pop("kind")
            except (orjson.JSONDecodeError, KeyError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            if kind == "report":
                header = rec
            elif kind == "seed":
                seeds.setdefault(rec["combo"], []).append(SeedResult.model_validate(rec))
            elif kind == "cell":
                cells.append(rec)
            else:
                raise FormatError(f"{path}:{lineno}: unknown record kind {kind!r}")
    if header is None:
        raise FormatError(f"{path}: missing report header line")
    records = [CellRecord.model_validate({**c, "seeds": seeds.get(c["combo"], [])}) for c in cells]
    return EvalReport(family=header["family"], input_config_digest=header["input_config_digest"], cells=records)


def chance_margin(n_eval: int) -> float:
    """Two standard errors of a coin-flip accuracy over n_eval answers"""
    return 2.0 * math.sqrt(0.25 / n_eval) if n_eval else 0.0


@dataclass
class TrendSummary:
    baseline_strict: Optional[float]
    baseline_forced: Optional[float]
    deltas: Dict[str, float] = field(default_factory=dict)      #combo -> mean - baseline, in the chosen mode
    at_or_above: int = 0
    nonempty: int = 0
    best_combo: Optional[str] = None
    best_delta: Optional[float] = None
    #forced-choice accuracy against coin flipping
    margins: Dict[str, float] = field(default_factory=dict)     #combo -> chance_margin over all its answers
    above_chance: int = 0
    best_forced_combo: Optional[str] = None
    best_forced: Optional[float] = None
    best_readout_combo: Optional[str] = None
    best_readout: Optional[float] = None


def trend_summary(report: EvalReport, scoring: str = "strict") -> TrendSummary:
    """
    Trained combos against the untrained baseline (chosen scoring mode) and,
    separately, their forced-choice accuracy against chance
    """
    attr = "mean_strict" if scoring == "strict" else "mean_forced"
    cells = report.as_dict()
    base = cells.get(BASELINE_LABEL)
    base_value = getattr(base, attr) if base is not None else None
    summary = TrendSummary(baseline_strict=base.mean_strict if base else None,
                           baseline_forced=base.mean_forced if base else None)
    for label, cell in cells.items():
        if label == BASELINE_LABEL or getattr(cell, attr) is None:
            continue
        summary.nonempty += 1
        if base_value is not None:
            delta = getattr(cell, attr) - base_value
            summary.deltas[label] = delta
            summary.at_or_above += int(delta >= 0)
            if summary.best_delta is None or delta > summary.best_delta:
                summary.best_combo, summary.best_delta = label, delta

        margin = chance_margin(sum(s.n_eval for s in cell.seeds if not s.failed))
        summary.margins[label] = margin
        summary.above_chance += int(cell.mean_forced > CHANCE + margin)
        if summary.best_forced is None or cell.mean_forced > summary.best_forced:
            summary.best_forced_combo, summary.best_forced = label, cell.mean_forced
        if cell.mean_readout is not None and (summary.best_readout is None or cell.mean_readout > summary.best_readout):
            summary.best_readout_combo, summary.best_readout = label, cell.mean_readout
    return summary


def format_table(report: EvalReport, scoring: str = "both") -> List[str]:
    lines = [f"family {report.family}  ({len(report.cells)} cells)"]
    for cell in report.cells:
        if cell.mean_strict is None:
            lines.append(f"  {cell.combo:<10} {FAILED_MARK}")
            continue
        parts = []
        if scoring in ("strict", "both"):
            parts.append(f"strict {cell.mean_strict:.3f}")
        if scoring in ("forced", "both"):
            parts.append(f"forced {cell.mean_forced:.3f}")
        if cell.mean_readout is not None:
            parts.append(f"readout {cell.mean_readout:.3f}")
        flag = f"  ({cell.failed_seeds} failed seed(s))" if cell.failed_seeds else ""
        lines.append(f"  {cell.combo:<10} " + "  ".join(parts) + f"  n_seeds={cell.seed_count}{flag}")
    return lines
