import copy
import csv
from pathlib import Path

import pytest
import yaml

from core.errors import ConfigError
from core.labbench.cli import main
from core.labbench.config import Artifacts, load_run_config, parse_run_config, tap_spec, vocab_from_config
from core.labbench.data import build_datasets, gen_data
from core.labbench.matrix import (
    BASELINE_LABEL,
    aggregate,
    all_combos,
    combo_label,
    parse_combo,
    run_cell,
    run_cross_family,
    run_matrix,
)
from core.labbench.pretrain import pretrain_models, sample_replies
from core.labbench.report import FAILED_MARK, PLOT_HEADER, chance_margin, read_report, trend_summary, write_report
from core.labbench.schemas import EvalReport, SeedResult

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MICRO = {
    "seeds": [0],
    "input_model": {"n_layers": 2, "d_model": 16, "n_heads": 2, "d_ff": 32, "context_len": 40, "seed": 11},
    "family_b": {"n_layers": 3, "d_model": 24, "n_heads": 2, "d_ff": 48, "context_len": 40, "seed": 37},
    "meta_model": {"n_layers": 2, "d_model": 16, "n_heads": 2, "d_ff": 32, "context_len": 16, "seed": 23},
    "taps": {"stride": 1},
    "data": {"train_per_dataset": 24, "lie_eval_size": 8, "shots": 2, "pretrain_docs": 30},
    "pretrain": {"batch_size": 4, "seq_len": 16, "max_steps": 4, "eval_every": 2, "log_every": 0},
    "meta_train": {"steps": 3, "batch_size": 4, "log_every": 0},
}


def micro(out_dir, **extra):
    raw = copy.deepcopy(MICRO)
    raw["out_dir"] = str(out_dir)
    raw.update(extra)
    return raw


@pytest.fixture(scope="module")
def lab(tmp_path_factory):
    """A pretrained micro run with datasets and bundles on disk"""
    cfg = parse_run_config(micro(tmp_path_factory.mktemp("lab")))
    pretrain_models(cfg)
    gen_data(cfg)
    return cfg


class TestCombos:
    def test_sixteen_cells_baseline_first(self):
        combos = all_combos()
        assert len(combos) == 16
        assert combos[0] == ()
        assert combos[-1] == ("S", "E", "L", "M")

    def test_labels(self):
        assert combo_label(()) == BASELINE_LABEL
        assert combo_label(["M", "S"]) == "S+M"
        assert parse_combo("S+M") == ("S", "M")
        assert parse_combo(BASELINE_LABEL) == ()

    def test_unknown_dataset(self):
        with pytest.raises(ConfigError):
            combo_label(["LIE"])

    def test_restricted(self):
        assert all_combos(["E", "S"]) == [(), ("S",), ("E",), ("S", "E")]


class TestConfig:
    @pytest.mark.parametrize("name", ["default.yaml", "smoke.yaml"])
    def test_shipped_configs_parse(self, name):
        cfg = load_run_config(CONFIGS / name)
        assert cfg.families() == ["A", "B"]

    def test_overrides(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump(micro("somewhere")), encoding="utf-8")
        cfg = load_run_config(path, {"out_dir": str(tmp_path / "x"), "seeds": [3, 4], "workers": None})
        assert cfg.out_dir == str(tmp_path / "x")
        assert cfg.seeds == [3, 4]
        assert cfg.workers == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "nope.yaml")

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("input_model: [1, 2\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_family_b_must_differ(self, tmp_path):
        raw = micro(tmp_path)
        raw["family_b"] = dict(raw["input_model"])
        with pytest.raises(ConfigError):
            parse_run_config(raw)

    def test_bad_model_shape(self, tmp_path):
        raw = micro(tmp_path)
        raw["meta_model"]["n_heads"] = 3
        with pytest.raises(ConfigError):
            parse_run_config(raw)

    def test_tap_layers(self, tmp_path):
        cfg = parse_run_config(micro(tmp_path, taps={"layers": [1]}))
        assert tap_spec(cfg, "A").layer_indices == (1,)
        assert tap_spec(cfg, "B").layer_indices == (1,)
        with pytest.raises(ConfigError):
            tap_spec(parse_run_config(micro(tmp_path, taps={"layers": [2]})), "A")

    def test_stride_taps(self, tmp_path):
        cfg = parse_run_config(micro(tmp_path, taps={"stride": 2}))
        assert tap_spec(cfg, "B").layer_indices == (0, 2)


class TestPipeline:
    def test_artifacts(self, lab):
        art = Artifacts.of(lab)
        for which in ("A", "B", "meta"):
            assert art.checkpoint(which).exists()
        assert art.pretrain_report.exists()
        assert art.dataset("LIE", "eval").exists()
        assert not art.dataset("LIE", "train").exists()
        assert art.bundles("B", "S", "train").exists()

    def test_pretrain_is_reproducible(self, lab, tmp_path):
        again = lab.model_copy(update={"out_dir": str(tmp_path)})
        pretrain_models(again)
        for which in ("A", "B", "meta"):
            assert Artifacts.of(again).checkpoint(which).read_bytes() == Artifacts.of(lab).checkpoint(which).read_bytes()

    def test_cell_is_deterministic(self, lab):
        a, b = run_cell(("S",), lab, seed=1), run_cell(("S",), lab, seed=1)
        assert (a.strict, a.forced, a.steps) == (b.strict, b.forced, b.steps)

    def test_datasets_are_reproducible(self, lab):
        vocab = vocab_from_config(lab)
        assert build_datasets(lab, vocab) == build_datasets(lab, vocab)

    def test_train_and_eval_disjoint(self, lab):
        sets = build_datasets(lab, vocab_from_config(lab))
        for tag in ("S", "E", "L", "M"):
            train = {ex.uid for ex in sets[(tag, "train")]}
            held = {ex.uid for ex in sets[(tag, "eval")]}
            assert train and held and not train & held

    def test_matrix_cells(self, lab):
        report = run_matrix(lab, "A", datasets=["S"])
        assert [c.combo for c in report.cells] == [BASELINE_LABEL, "S"]
        base, trained = report.cell(BASELINE_LABEL), report.cell("S")
        assert base.seeds[0].steps == 0
        assert trained.seeds[0].steps == 3
        assert not trained.failed and trained.seed_count == 1
        assert trained.seeds[0].n_eval == 8
        assert trained.mean_strict <= trained.mean_forced
        assert 0.0 <= trained.seeds[0].readout <= 1.0
        assert trained.mean_readout == trained.seeds[0].readout
        assert base.seeds[0].readout is None and base.mean_readout is None

    def test_cells_are_order_independent(self, lab):
        serial = run_matrix(lab, "A", datasets=["S"], workers=1)
        pooled = run_matrix(lab, "A", datasets=["S"], workers=2)
        for a, b in zip(serial.cells, pooled.cells):
            assert (a.combo, a.mean_strict, a.mean_forced) == (b.combo, b.mean_strict, b.mean_forced)

    def test_cross_family(self, lab):
        report = run_cross_family(lab, datasets=["E"])
        assert report.family == "B"
        assert not any(c.failed for c in report.cells)

    def test_cross_family_needs_b(self, lab):
        cfg = lab.model_copy(update={"family_b": None})
        with pytest.raises(ConfigError):
            run_cross_family(cfg)

    def test_missing_artifacts_fail_cells(self, lab, tmp_path):
        cfg = lab.model_copy(update={"out_dir": str(tmp_path / "empty")})
        report = run_matrix(cfg, "A", datasets=["S"])
        assert all(c.failed and c.mean_strict is None for c in report.cells)
        assert "ConfigError" in report.cells[0].seeds[0].error

    def test_cli_report(self, lab, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump(lab.model_dump()), encoding="utf-8")
        art = Artifacts.of(lab)
        write_report(run_matrix(lab, "A", datasets=["S"]), art.results_dir("A"))
        assert main(["report", "--config", str(path)]) == 0
        assert main(["report", "--config", str(path), "--out", str(tmp_path / "fresh")]) == 1

    def test_sample_replies(self, lab):
        rows = sample_replies(lab, "A", per_tag=2)
        assert len(rows) == 8
        assert {r["tag"] for r in rows} == {"S", "E", "L", "M"}
        assert sample_replies(lab, "A", per_tag=2) == rows

    def test_cli_sample(self, lab, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump(lab.model_dump()), encoding="utf-8")
        assert main(["sample", "--config", str(path), "--datasets", "S"]) == 0

    def test_cli_bad_config(self, tmp_path):
        assert main(["matrix", "--config", str(tmp_path / "nope.yaml")]) == 2


def seed_result(combo, seed, strict=0.5, forced=0.6, failed=False):
    if failed:
        return SeedResult(family="A", combo=combo, seed=seed, failed=True, error="TrainingError: boom")
    return SeedResult(family="A", combo=combo, seed=seed, strict=strict, forced=forced, steps=10)


class TestReport:
    def report(self):
        results = [seed_result("none", 0, 0.2, 0.5), seed_result("none", 1, 0.4, 0.5),
                   seed_result("S", 0, 0.6, 0.7), seed_result("S", 1, failed=True),
                   seed_result("E", 0, 0.1, 0.4), seed_result("E", 1, 0.3, 0.6)]
        return EvalReport(family="A", input_config_digest="abc",
                          cells=aggregate("A", results, [(), ("S",), ("E",)]))

    def test_aggregate(self):
        cells = self.report().as_dict()
        assert cells["none"].mean_strict == pytest.approx(0.3)
        assert cells["S"].failed and cells["S"].failed_seeds == 1 and cells["S"].seed_count == 1
        assert cells["S"].mean_strict == pytest.approx(0.6)

    def test_files(self, tmp_path):
        report = self.report()
        results, plot = write_report(report, tmp_path)
        assert read_report(tmp_path) == report
        assert read_report(results) == report
        rows = list(csv.reader(plot.open(encoding="utf-8")))
        assert rows[0] == PLOT_HEADER
        assert rows[1] == ["none", "0.300000", "0.500000", "2"]
        assert rows[2] == ["S", FAILED_MARK, FAILED_MARK, "1"]

    def test_trend(self):
        trend = trend_summary(self.report(), "strict")
        assert trend.baseline_strict == pytest.approx(0.3)
        assert trend.nonempty == 2
        assert trend.at_or_above == 1
        assert trend.best_combo == "S"
        assert trend.deltas["E"] == pytest.approx(-0.1)
        assert trend.above_chance == 1
        assert trend.best_forced_combo == "S" and trend.best_forced == pytest.approx(0.7)

    def test_chance_level_cells_are_not_above_chance(self):
        results = [SeedResult(family="A", combo=c, seed=s, strict=0.0 if c == "none" else 0.5,
                              forced=f, steps=10, n_eval=200)
                   for c, fs in [("none", [0.5, 0.5]), ("S", [0.52, 0.5]), ("E", [0.6, 0.62])]
                   for s, f in enumerate(fs)]
        report = EvalReport(family="A", input_config_digest="abc",
                            cells=aggregate("A", results, [(), ("S",), ("E",)]))
        trend = trend_summary(report, "strict")
        assert trend.at_or_above == 2
        assert trend.margins["S"] == pytest.approx(chance_margin(400))
        assert trend.above_chance == 1
        assert trend.best_forced_combo == "E"

    def test_readout_survives_files(self, tmp_path):
        results = [SeedResult(family="A", combo="S", seed=0, strict=0.4, forced=0.6, readout=0.8, steps=10)]
        report = EvalReport(family="A", input_config_digest="abc", cells=aggregate("A", results, [("S",)]))
        write_report(report, tmp_path)
        again = read_report(tmp_path)
        assert again == report
        assert again.cell("S").mean_readout == pytest.approx(0.8)
        assert trend_summary(again).best_readout_combo == "S"

    def test_empty_cell(self):
        cells = aggregate("A", [], [(), ("S",)])
        assert all(c.mean_strict is None and c.seed_count == 0 for c in cells)
