import numpy as np
import pytest

from roagrow.cli import main
from roagrow.config import (ConfigError, RedesignConfig, dump_config,
                            parse_config, parse_config_text)
from roagrow.experiment import (MaskOverlay, MetricsLog, emit_heatmap,
                                read_metrics, write_report)


class TestParseConfig:
    def test_empty_text_gives_defaults(self):
        assert parse_config_text("") == RedesignConfig()

    def test_plain_value_parses(self):
        cfg = parse_config_text("gamma_r = 4")
        assert cfg.gamma_r == 4.0

    def test_invariant_violation_rejected(self):
        with pytest.raises(ConfigError, match="gamma_r"):
            parse_config_text("gamma_r = 0.5")

    def test_unknown_key_names_key_and_line(self):
        with pytest.raises(ConfigError, match=r"line 3.*no_such_key"):
            parse_config_text("\n# comment\nno_such_key = 1\n")

    def test_type_error_names_key(self):
        with pytest.raises(ConfigError, match="grid_cells"):
            parse_config_text("grid_cells = 12.5")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("seed = 1\nseed = 2\n")

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config_text("""
        # full line comment
        seed = 3   # trailing comment

        phases = 2
        """)
        assert cfg.seed == 3 and cfg.phases == 2

    def test_round_trip(self):
        cfg = RedesignConfig(seed=9, phases=3, lambda_monot=0.0,
                             variant="slopes", out_dir="elsewhere")
        assert parse_config_text(dump_config(cfg)) == cfg

    def test_parse_file(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("seed = 5\n", encoding="utf-8")
        assert parse_config(path).seed == 5

    def test_variant_controls_trainable_mask(self):
        thresholds = RedesignConfig(variant="thresholds").initial_sat_params()
        slopes = RedesignConfig(variant="slopes").initial_sat_params()
        assert thresholds.trainable == (True, True, False, False)
        assert slopes.trainable == (False, False, True, True)


class TestMetricsLog:
    def test_rows_written_incrementally(self, tmp_path):
        path = tmp_path / "m.csv"
        log = MetricsLog(path)
        log.add(phase=1, iter=1, kind="growth", level_c=0.5, est_fraction=0.1)
        text = path.read_text()
        assert text.startswith("# roagrow-metrics v1\n")
        assert text.count("\n") == 3

    def test_unknown_column_rejected(self, tmp_path):
        log = MetricsLog(tmp_path / "m.csv")
        with pytest.raises(ValueError):
            log.add(kind="growth", nope=1)

    def test_read_back(self, tmp_path):
        path = tmp_path / "m.csv"
        log = MetricsLog(path)
        log.add(phase=2, iter=3, kind="growth", level_c=0.25, est_fraction=0.5)
        rows = read_metrics(path)
        assert rows[0]["phase"] == 2.0
        assert rows[0]["kind"] == "growth"
        assert rows[0]["oracle_fraction"] is None


class TestEmitHeatmap:
    def test_all_false_overlay_is_uniform(self, tmp_path):
        empty = np.zeros(100, dtype=bool)
        path = tmp_path / "o.ppm"
        emit_heatmap(MaskOverlay(empty, empty, empty), path, 10, 10)
        data = path.read_bytes()
        header, pixels = data.split(b"255\n", 1)
        assert header == b"P6\n10 10\n"
        assert pixels == pixels[:3] * 100

    def test_three_cell_overlay(self, tmp_path):
        estimate = np.zeros(100, dtype=bool)
        estimate[[5, 17, 42]] = True
        empty = np.zeros(100, dtype=bool)
        path = tmp_path / "o.ppm"
        emit_heatmap(MaskOverlay(empty, estimate, empty), path, 10, 10)
        pixels = path.read_bytes().split(b"255\n", 1)[1]
        img = np.frombuffer(pixels, dtype=np.uint8).reshape(10, 10, 3)[::-1]
        colored = (img != 255).any(axis=2)
        assert colored.ravel().sum() == 3
        assert colored.ravel()[[5, 17, 42]].all()

    def test_byte_identical_output(self, tmp_path):
        rng = np.random.default_rng(0)
        field_vals = rng.random(100)
        p1, p2 = tmp_path / "a.pgm", tmp_path / "b.pgm"
        emit_heatmap(field_vals, p1, 10, 10)
        emit_heatmap(field_vals, p2, 10, 10)
        assert p1.read_bytes() == p2.read_bytes()

    def test_scalar_field_is_pgm(self, tmp_path):
        path = tmp_path / "v.pgm"
        emit_heatmap(np.linspace(0, 1, 100), path, 10, 10)
        assert path.read_bytes().startswith(b"P5\n10 10\n255\n")


class TestReport:
    def _fake_run_dir(self, tmp_path):
        log = MetricsLog(tmp_path / "metrics.csv")
        log.add(phase=0, iter=0, kind="init", level_c=0.1, est_fraction=0.01,
                oracle_fraction=0.5, sat_a=0.2, sat_b=-0.2, sat_ma=0.0, sat_mb=0.0)
        for m in (1, 2):
            log.add(phase=1, iter=m, kind="growth", level_c=0.2 * m,
                    est_fraction=0.02 * m, cbar_fraction=0.03 * m, loss=-1.0)
        log.add(phase=1, iter=0, kind="policy", level_c=0.4, est_fraction=0.04,
                oracle_fraction=0.6, loss=2.0, sat_a=0.3, sat_b=-0.3,
                sat_ma=0.0, sat_mb=0.0, unsound_fraction=0.0)
        return tmp_path

    def test_report_tables(self, tmp_path):
        out = self._fake_run_dir(tmp_path)
        write_report(out)
        fractions = (out / "fractions.csv").read_text().strip().split("\n")
        assert fractions[0] == "global_iter,phase,iter,est_fraction,oracle_fraction"
        assert len(fractions) == 3
        levels = (out / "levels.csv").read_text().strip().split("\n")
        assert len(levels) == 3
        params = (out / "policy_params.csv").read_text().strip().split("\n")
        assert len(params) == 3


class TestCli:
    def test_usage_error_exit_2(self, capsys):
        assert main(["bogus-command"]) == 2
        assert main([]) == 2

    def test_missing_config_exit_1(self):
        assert main(["oracle", "--config", "/nonexistent/x.cfg"]) == 1

    def test_bad_config_exit_1(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("gamma_r = 0.5\n")
        assert main(["oracle", "--config", str(path)]) == 1

    def test_pretrain_subcommand(self, tmp_path, capsys):
        path = tmp_path / "c.cfg"
        path.write_text("pretrain_steps = 50\nseed = 1\n")
        code = main(["pretrain", "--config", str(path), "--out", str(tmp_path / "o")])
        out = capsys.readouterr().out
        assert code == 0
        assert "pretraining MSE" in out
        assert (tmp_path / "o" / "net_pretrained.ckpt").exists()
        assert (tmp_path / "o" / "pretrain_v.pgm").exists()

    def test_oracle_subcommand_prints_fraction(self, tmp_path, capsys):
        path = tmp_path / "c.cfg"
        path.write_text("oracle_kmax = 300\n")
        code = main(["oracle", "--config", str(path)])
        out = capsys.readouterr().out
        assert code == 0
        assert "true RoA fraction:" in out
        value = float(out.split("true RoA fraction:")[1].split()[0])
        assert 0.0 < value < 1.0

    def test_report_subcommand(self, tmp_path, capsys):
        log = MetricsLog(tmp_path / "metrics.csv")
        log.add(phase=0, iter=0, kind="init", level_c=0.1, est_fraction=0.0,
                oracle_fraction=0.5, sat_a=0.2, sat_b=-0.2, sat_ma=0.0, sat_mb=0.0)
        code = main(["report", "--out", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "policy_params.csv").exists()

    def test_seed_flag_overrides_config(self, tmp_path):
        from roagrow.cli import _build_parser, _load_config

        path = tmp_path / "c.cfg"
        path.write_text("seed = 1\n")
        args = _build_parser().parse_args(
            ["run", "--config", str(path), "--seed", "9", "--no-monot"])
        cfg = _load_config(args)
        assert cfg.seed == 9
        assert cfg.lambda_monot == 0.0


TINY_RUN = ("pretrain_steps = 200\nroa_sgd_steps = 100\npolicy_sgd_steps = 5\n"
            "oracle_kmax = 300\nseed = 2\n")


class TestRunRedesign:
    def test_zero_phases_writes_pretraining_artifacts_only(self, tmp_path):
        from roagrow.config import parse_config_text
        from roagrow.experiment import run_redesign

        cfg = parse_config_text(TINY_RUN + "phases = 0\n")
        res = run_redesign(cfg, out_dir=tmp_path)
        assert (tmp_path / "checkpoints" / "net_phase_00.ckpt").exists()
        assert (tmp_path / "heatmaps" / "pretrain_v.pgm").exists()
        assert res.metrics.select("policy") == []
        assert len(res.metrics.select("init")) == 1

    def test_cli_run_end_to_end(self, tmp_path, capsys):
        path = tmp_path / "c.cfg"
        path.write_text(TINY_RUN + "phases = 1\n")
        code = main(["run", "--config", str(path), "--out", str(tmp_path / "o")])
        out = capsys.readouterr().out
        assert code == 0
        assert "final oracle RoA fraction" in out
        root = tmp_path / "o"
        assert (root / "metrics.csv").exists()
        assert (root / "config_used.cfg").exists()
        assert (root / "masks" / "oracle_phase_01.pgm").exists()
        assert (root / "heatmaps" / "phase_01_roa.ppm").exists()
        assert (root / "fractions.csv").exists()
