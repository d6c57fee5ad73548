"""Command-line front end: artifacts, determinism, exit codes."""

import json

import pytest

from oamqkd import cli

TABLE_PARAMS = """\
dim = 2

[intensities]
mu = 0.011
nu = 0.008
omega = 0.0
p_mu = 0.98
p_nu = 0.01
p_omega = 0.01

[gain_z]
mu = 1.6e-4
nu = 1.17e-4
omega = 3.2e-7

[gain_x]
mu = 1.6e-4
nu = 1.17e-4
omega = 3.2e-7

[err_z]
mu = {ez}
nu = {ez}
omega = 0.5

[err_x]
mu = {ex}
nu = {ex}
omega = 0.5
"""


def run(argv):
    return cli.main(argv)


class TestSimulate:
    def test_writes_all_artifacts(self, tmp_path, capsys):
        code = run(
            ["simulate", "--preset", "paper-2d", "--pulses", "3e5",
             "--seed", "2", "--out", str(tmp_path)]
        )
        assert code == 0
        for name in ("tallies_2D.csv", "series_2D.csv", "qber_2D.svg",
                     "simulate.json"):
            assert (tmp_path / name).exists(), name
        out = capsys.readouterr().out
        assert "QBER" in out

    def test_reruns_are_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run(
                ["simulate", "--preset", "paper-2d", "--pulses", "262144",
                 "--seed", "11", "--out", str(out)]
            ) == 0
        for name in ("tallies_2D.csv", "series_2D.csv", "simulate.json",
                     "qber_2D.svg"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_ideal_preset_has_zero_qber(self, tmp_path, capsys):
        code = run(
            ["simulate", "--preset", "ideal-2d", "--pulses", "2e5",
             "--out", str(tmp_path)]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "Z 0.00%" in out and "X 0.00%" in out

    def test_bundle_round_trips(self, tmp_path):
        run(
            ["simulate", "--preset", "paper-mux", "--pulses", "1e5",
             "--out", str(tmp_path), "--format", "json"]
        )
        payload = json.loads((tmp_path / "simulate.json").read_text())
        bundle = cli.ResultBundle.from_dict(payload)
        assert bundle.to_dict() == payload
        assert set(bundle.tallies) == {"MUX6", "MUX7"}
        assert bundle.provenance["seed"] == 1

    def test_format_filter(self, tmp_path):
        run(
            ["simulate", "--preset", "paper-2d", "--pulses", "1e5",
             "--out", str(tmp_path), "--format", "csv"]
        )
        assert (tmp_path / "tallies_2D.csv").exists()
        assert not (tmp_path / "simulate.json").exists()
        assert not (tmp_path / "qber_2D.svg").exists()


class TestKeyrate:
    def test_params_file(self, tmp_path, capsys):
        params = tmp_path / "gains.toml"
        params.write_text(TABLE_PARAMS.format(ez=0.067, ex=0.079))
        code = run(
            ["keyrate", "--params", str(params), "--out", str(tmp_path)]
        )
        assert code == 0
        report = json.loads((tmp_path / "keyrate.json").read_text())
        rate = report["reports"]["D2"]["rate_bits_per_s"]
        assert 10_000 < rate < 40_000
        assert (tmp_path / "keyrate.txt").exists()
        assert "kbit/s" in capsys.readouterr().out

    def test_above_threshold_warns_and_zeroes(self, tmp_path, capsys):
        params = tmp_path / "gains.toml"
        params.write_text(TABLE_PARAMS.format(ez=0.13, ex=0.13))
        code = run(
            ["keyrate", "--params", str(params), "--out", str(tmp_path),
             "--format", "json"]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "warning" in out and "11.00%" in out
        report = json.loads((tmp_path / "keyrate.json").read_text())
        assert report["reports"]["D2"]["rate_bits_per_s"] == 0.0

    def test_params_rejects_scenario_flags(self, tmp_path):
        params = tmp_path / "gains.toml"
        params.write_text(TABLE_PARAMS.format(ez=0.067, ex=0.079))
        code = run(
            ["keyrate", "--params", str(params), "--preset", "paper-2d",
             "--out", str(tmp_path)]
        )
        assert code == 2

    def test_bad_params_file(self, tmp_path):
        params = tmp_path / "gains.toml"
        params.write_text("dim = 2\n")  # tables missing
        assert run(["keyrate", "--params", str(params),
                    "--out", str(tmp_path)]) == 2


class TestMatrix:
    def test_ideal_is_identity(self, tmp_path, capsys):
        code = run(
            ["matrix", "psi", "--preset", "ideal-2d", "--pulses", "2000",
             "--out", str(tmp_path)]
        )
        assert code == 0
        assert "100.00%" in capsys.readouterr().out
        rows = (tmp_path / "matrix_psi.csv").read_text().strip().split("\n")
        assert rows[0] == "state,psi1,psi2,psi3,psi4"
        for i, row in enumerate(rows[1:]):
            cells = row.split(",")
            assert float(cells[1 + i]) == 1.0

    def test_json_carries_fidelity_and_provenance(self, tmp_path):
        run(
            ["matrix", "xi", "--preset", "paper-default", "--pulses", "20000",
             "--seed", "5", "--out", str(tmp_path), "--format", "json"]
        )
        payload = json.loads((tmp_path / "matrix_xi.json").read_text())
        dm = payload["matrices"]["xi"]
        assert 0.8 < dm["fidelity"] < 1.0
        assert dm["fidelity_sigma"] > 0.0
        assert payload["provenance"]["seed"] == 5

    def test_unknown_target_rejected_by_parser(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run(["matrix", "5D", "--out", str(tmp_path)])
        assert exc.value.code == 2


class TestThresholds:
    def test_table_and_files(self, tmp_path, capsys):
        code = run(["thresholds", "2", "3", "4", "--out", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "11.00%" in out and "14.6%" in out
        assert "18.93%" in out and "24.0%" in out
        assert "n/a" in out
        rows = (tmp_path / "thresholds.csv").read_text().strip().split("\n")
        assert rows[0] == "dim,collective,individual"
        d3 = rows[2].split(",")
        assert d3[0] == "3" and d3[2] == ""

    def test_dimension_below_two(self, tmp_path):
        assert run(["thresholds", "1", "--out", str(tmp_path)]) == 2


class TestToa:
    def test_default_walk_off(self, tmp_path, capsys):
        code = run(["toa", "--out", str(tmp_path)])
        assert code == 0
        assert "15.0 ns" in capsys.readouterr().out
        rows = (tmp_path / "toa.csv").read_text().strip().split("\n")
        assert rows[1] == "6,0,0"
        assert rows[2] == "7,15,0"  # compensated residual

    def test_compensation_off_leaves_residual(self, tmp_path):
        cfg = tmp_path / "link.toml"
        cfg.write_text("[fiber]\ncompensate_delay = false\n")
        run(["toa", "--config", str(cfg), "--out", str(tmp_path)])
        rows = (tmp_path / "toa.csv").read_text().strip().split("\n")
        assert rows[2] == "7,15,15"

    def test_delay_scales_with_length(self, tmp_path):
        cfg = tmp_path / "link.toml"
        cfg.write_text("[fiber]\nlength_km = 2.4\n")
        run(["toa", "--config", str(cfg), "--out", str(tmp_path)])
        rows = (tmp_path / "toa.csv").read_text().strip().split("\n")
        assert rows[2].startswith("7,30,")


class TestErrorsAndPlumbing:
    def test_missing_config_is_exit_2(self, tmp_path):
        assert run(
            ["simulate", "--config", str(tmp_path / "missing.toml"),
             "--out", str(tmp_path)]
        ) == 2

    def test_invalid_config_is_exit_2(self, tmp_path):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("[detector]\nefficiency = 2.0\n")
        assert run(
            ["simulate", "--config", str(cfg), "--out", str(tmp_path)]
        ) == 2

    def test_config_and_preset_conflict(self, tmp_path):
        cfg = tmp_path / "ok.toml"
        cfg.write_text("")
        assert run(
            ["simulate", "--config", str(cfg), "--preset", "paper-2d",
             "--out", str(tmp_path)]
        ) == 2

    def test_unwritable_out_is_exit_3(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert run(["thresholds", "2", "--out", str(blocker)]) == 3

    def test_unknown_preset_rejected_by_parser(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run(["simulate", "--preset", "nope", "--out", str(tmp_path)])
        assert exc.value.code == 2

    def test_out_dir_env_var(self, tmp_path, monkeypatch):
        target = tmp_path / "from-env"
        monkeypatch.setenv(cli.OUT_DIR_ENV, str(target))
        assert run(["thresholds", "2"]) == 0
        assert (target / "thresholds.csv").exists()

    def test_version_flag(self):
        with pytest.raises(SystemExit) as exc:
            run(["--version"])
        assert exc.value.code == 0
