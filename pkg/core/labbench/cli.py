# cli.py
# --------------------------------------------------------------------------------------
# Purpose:
#   Command-line entry point for the lab
#
# Subcommands:
#   pretrain      pretrain input-model(s) + meta-model, write checkpoints
#   gen-data      build QA datasets and capture bundle caches
#   matrix        run the 16-cell combination matrix with input-model family A
#   cross-family  same matrix with input-model family B
#   report        re-read results files, rewrite plot tables, print trends
#   sample        greedy replies of the pretrained input-model(s), read back by the oracle
#
# Usage:
#   python -m core.labbench.cli pretrain --config configs/smoke.yaml
#   python -m core.labbench.cli matrix --config configs/default.yaml --seed 0,1 --workers 4
# --------------------------------------------------------------------------------------

import argparse
import sys
from typing import Dict, List, Optional

#logging
from core.utils.logging_setup import configure, get_logger

#lab stages
from core.behaviors.corpus import TRAIN_TAGS
from core.errors import ConfigError, LabError
from core.labbench.config import Artifacts, load_run_config
from core.labbench.data import gen_data
from core.labbench.matrix import run_cross_family, run_matrix
from core.labbench.pretrain import pretrain_models, sample_replies
from core.labbench.report import format_table, read_report, trend_summary, write_report
from core.labbench.schemas import EvalReport, RunConfigFile

logger = get_logger("labbench")

#Config
DEFAULT_CONFIG = "configs/default.yaml"


def parse_seeds(text: Optional[str]) -> Optional[List[int]]:
    if not text:
        return None
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"--seed must be comma-separated integers, got {text!r}") from exc


def parse_datasets(text: Optional[str]) -> Optional[List[str]]:
    if not text:
        return None
    tags = [t.strip().upper() for t in text.split(",") if t.strip()]
    bad = [t for t in tags if t not in TRAIN_TAGS]
    if bad:
        raise ConfigError(f"--datasets accepts {','.join(TRAIN_TAGS)}, got {bad}")
    return tags


def load_config(args) -> RunConfigFile:
    overrides: Dict = {"out_dir": args.out, "workers": args.workers, "seeds": parse_seeds(args.seed)}
    if getattr(args, "scoring", None):
        overrides["scoring"] = args.scoring
    return load_run_config(args.config, overrides)


def log_report(report: EvalReport, scoring: str) -> None:
    for line in format_table(report, scoring):
        logger.info(line)
    mode = "forced" if scoring == "forced" else "strict"
    trend = trend_summary(report, mode)
    if trend.best_combo is not None:
        logger.info("Versus untrained baseline (%s): %d/%d trained combos at or above; best %s (%+.3f)",
                    mode, trend.at_or_above, trend.nonempty, trend.best_combo, trend.best_delta)
    if trend.best_forced_combo is not None:
        logger.info("Versus chance (forced): %d/%d trained combos above 0.5 + 2 s.e.; best %s (%.3f)",
                    trend.above_chance, trend.nonempty, trend.best_forced_combo, trend.best_forced)
    if trend.best_readout_combo is not None:
        logger.info("Linear readout on raw bundles: best %s (%.3f)", trend.best_readout_combo, trend.best_readout)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description="Meta-model interpretability lab: pretrain, generate data, run matrices.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=DEFAULT_CONFIG, help=f"Run config YAML (default: {DEFAULT_CONFIG})")
        p.add_argument("--seed", default=None, help="Seed or comma-separated seeds, e.g. 0,1")
        p.add_argument("--out", default=None, help="Output directory (overrides out_dir)")
        p.add_argument("--workers", type=int, default=None, help="Parallel matrix cells")
        p.add_argument("--scoring", choices=["strict", "forced", "both"], default=None,
                       help="Which accuracy to print (both are always stored)")
        p.add_argument("--datasets", default=None, help="Restrict combos to subsets of e.g. S,E,L,M")
        p.add_argument("--progress", action="store_true", help="Show progress bars")
        p.add_argument("--log-file", action="store_true", help="Also log to a rotating file")

    for name, help_text in [
        ("pretrain", "Pretrain the toy input-model(s) and the meta-model"),
        ("gen-data", "Build QA datasets and capture activation bundles"),
        ("matrix", "Run the dataset-combination matrix (family A)"),
        ("cross-family", "Run the dataset-combination matrix with input-model family B"),
        ("report", "Re-read results and print the trend summary"),
        ("sample", "Print greedy replies of the pretrained input-model(s)"),
    ]:
        common(sub.add_parser(name, help=help_text))
    return ap


def run(args) -> int:
    cfg = load_config(args)
    art = Artifacts.of(cfg)
    datasets = parse_datasets(args.datasets)

    if args.command == "pretrain":
        pretrain_models(cfg, progress=args.progress)
    elif args.command == "gen-data":
        counts = gen_data(cfg, progress=args.progress)
        logger.info("Generated %d dataset files", len(counts))
    elif args.command in ("matrix", "cross-family"):
        if args.command == "matrix":
            report = run_matrix(cfg, "A", datasets, progress=args.progress)
        else:
            report = run_cross_family(cfg, datasets, progress=args.progress)
        write_report(report, art.results_dir(report.family))
        log_report(report, cfg.scoring)
    elif args.command == "sample":
        for family in cfg.families():
            rows = sample_replies(cfg, family, datasets=datasets or TRAIN_TAGS)
            agree = sum(r["read_back"] == r["label"] for r in rows)
            logger.info("[%s] %d/%d replies read back as their conditioning label", family, agree, len(rows))
    elif args.command == "report":
        found = False
        for family in cfg.families():
            results_dir = art.results_dir(family)
            if not results_dir.exists():
                logger.info("No results for family %s (%s)", family, results_dir)
                continue
            found = True
            report = read_report(results_dir)
            write_report(report, results_dir)
            log_report(report, cfg.scoring)
        if not found:
            logger.error("No results under %s; run `matrix` first", art.root)
            return 1
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure(to_file=args.log_file)
    try:
        return run(args)
    except LabError as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
