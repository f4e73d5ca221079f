import numpy as np
import pytest

from fermisse.cli import main
from fermisse.config import ConfigError, bundled_config_path, load_config, parse_config

THERMAL_CFG = """
model.type = single_dot_thermal
model.omega0_eV = 1.0
bath.temperature_K = 4000
bath.mu_eV = 1.05
bath.spectral.type = discrete
bath.spectral.modes = 0.9:0.3; 1.2:0.22
grid.t_max_hbar_per_eV = 2.0
grid.n_steps = 300
run.mode = propagate
run.initial = excited
run.out = out
"""

VACUUM_CFG = """
model.type = many_fermion_vacuum
model.omegas_eV = 1.0
bath.temperature_K = 0
bath.mu_eV = -10
bath.spectral.type = discrete
bath.spectral.modes = 1.0:0.2
grid.t_max_hbar_per_eV = 6.5
grid.n_steps = 2000
run.mode = propagate
run.initial = excited
run.out = out
"""


class TestConfigParsing:
    def test_empty_config_lists_missing_blocks(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("")
        text = str(exc.value)
        assert "model.type" in text
        assert "run.mode" in text

    def test_unknown_field_reported(self):
        with pytest.raises(ConfigError) as exc:
            parse_config(THERMAL_CFG + "\nbogus.key = 1\n")
        assert "bogus.key" in str(exc.value)

    def test_bad_number_reported_with_field(self):
        bad = THERMAL_CFG.replace("grid.n_steps = 300", "grid.n_steps = many")
        with pytest.raises(ConfigError) as exc:
            parse_config(bad)
        assert "grid.n_steps" in str(exc.value)

    def test_units_in_key_names(self):
        cfg = parse_config(THERMAL_CFG)
        assert cfg.model.omega0 == 1.0
        assert cfg.model.bath.temperature == 4000
        assert cfg.grid.t_max == 2.0

    def test_bundled_names_resolve(self):
        for name in ("fig1_coefficients", "fig2a_temperature", "fig2b_bandwidth", "fig3_coupling"):
            assert bundled_config_path(name) is not None
        cfg = load_config("fig2a_temperature")
        assert cfg.mode == "propagate"

    def test_double_dot_complex_coupling(self):
        text = """
model.type = double_dot_two_baths
model.omega1_eV = 1.0
model.omega2_eV = 1.2
model.g_re_eV = 0.1
model.g_im_eV = 0.05
bath1.temperature_K = 0
bath1.mu_eV = -1
bath1.spectral.type = discrete
bath1.spectral.modes = 1.0:0.1
bath2.temperature_K = 0
bath2.mu_eV = -1
bath2.spectral.type = discrete
bath2.spectral.modes = 1.1:0.1
grid.t_max_hbar_per_eV = 1.0
grid.n_steps = 50
run.mode = coefficients
"""
        cfg = parse_config(text)
        assert cfg.model.g == 0.1 + 0.05j


class TestRunVerb:
    def test_propagate_writes_artifacts(self, tmp_path):
        cfg_file = tmp_path / "scenario.cfg"
        cfg_file.write_text(THERMAL_CFG)
        out = tmp_path / "artifacts"
        assert main(["run", "--config", str(cfg_file), "--out", str(out)]) == 0
        assert (out / "trajectory.csv").exists()
        assert (out / "coefficients.csv").exists()
        meta = (out / "metadata.txt").read_text()
        assert "config.model.omega0_eV = 1.0" in meta
        assert "free_evolution_sign" in meta

    def test_determinism_byte_identical(self, tmp_path):
        cfg_file = tmp_path / "scenario.cfg"
        cfg_file.write_text(THERMAL_CFG)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--config", str(cfg_file), "--out", str(out1)]) == 0
        assert main(["run", "--config", str(cfg_file), "--out", str(out2)]) == 0
        for name in ("trajectory.csv", "coefficients.csv", "metadata.txt"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg_file = tmp_path / "bad.cfg"
        cfg_file.write_text("model.type = nonsense\n")
        assert main(["run", "--config", str(cfg_file)]) == 2
        err = capsys.readouterr().err
        assert "model.type" in err

    def test_missing_config_file(self, capsys):
        assert main(["run", "--config", "/nonexistent/file.cfg"]) == 2

    def test_kernel_export_flag(self, tmp_path):
        cfg_file = tmp_path / "scenario.cfg"
        cfg_file.write_text(
            THERMAL_CFG.replace("grid.n_steps = 300", "grid.n_steps = 40")
            + "run.write_kernels = true\n"
        )
        out = tmp_path / "k"
        assert main(["run", "--config", str(cfg_file), "--out", str(out)]) == 0
        assert (out / "kernels.csv").exists()


class TestOracleCompareVerb:
    def test_vacuum_tangent_scenario_passes(self, tmp_path):
        cfg_file = tmp_path / "vac.cfg"
        cfg_file.write_text(VACUUM_CFG)
        out = tmp_path / "oc"
        assert main(["oracle-compare", "--config", str(cfg_file), "--out", str(out)]) == 0
        summary = (out / "summary.txt").read_text()
        assert "PASS vacuum_rho_vs_fock_oracle" in summary

    def test_tolerance_override_can_fail(self, tmp_path):
        cfg_file = tmp_path / "vac.cfg"
        cfg_file.write_text(VACUUM_CFG)
        out = tmp_path / "oc"
        code = main(
            [
                "oracle-compare",
                "--config",
                str(cfg_file),
                "--out",
                str(out),
                "--tolerance",
                "1e-16",
            ]
        )
        assert code == 1
        assert "FAIL" in (out / "summary.txt").read_text()

    def test_markov_scenario(self, tmp_path):
        out = tmp_path / "mk"
        assert main(["oracle-compare", "--config", "markov_limit", "--out", str(out)]) == 0
        assert "PASS markov_decay_vs_closed_form" in (out / "summary.txt").read_text()


class TestSweepVerb:
    def test_two_point_bandwidth_family(self, tmp_path):
        cfg_file = tmp_path / "base.cfg"
        cfg_file.write_text(
            THERMAL_CFG.replace("grid.n_steps = 300", "grid.n_steps = 120")
        )
        out = tmp_path / "sweep"
        code = main(
            [
                "sweep",
                "--config",
                str(cfg_file),
                "--param",
                "bath.mu_eV",
                "--values",
                "0.9,1.2",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        index = (out / "sweep_index.txt").read_text().strip().splitlines()
        assert len(index) == 2
        for value in ("0.9", "1.2"):
            assert (out / f"bath.mu_eV={value}" / "trajectory.csv").exists()
        # the two runs genuinely differ
        a = (out / "bath.mu_eV=0.9" / "trajectory.csv").read_bytes()
        b = (out / "bath.mu_eV=1.2" / "trajectory.csv").read_bytes()
        assert a != b

    def test_empty_values_noop(self, tmp_path):
        cfg_file = tmp_path / "base.cfg"
        cfg_file.write_text(THERMAL_CFG)
        out = tmp_path / "sweep"
        assert main(
            ["sweep", "--config", str(cfg_file), "--param", "bath.mu_eV", "--values", "", "--out", str(out)]
        ) == 0
        assert (out / "sweep_index.txt").exists()
        assert (out / "sweep_index.txt").read_text() == ""

    def test_threaded_sweep(self, tmp_path):
        cfg_file = tmp_path / "base.cfg"
        cfg_file.write_text(
            THERMAL_CFG.replace("grid.n_steps = 300", "grid.n_steps = 80")
        )
        out = tmp_path / "sweep"
        code = main(
            [
                "sweep",
                "--config",
                str(cfg_file),
                "--param",
                "bath.temperature_K",
                "--values",
                "1000,4000,8000",
                "--threads",
                "3",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        assert len((out / "sweep_index.txt").read_text().strip().splitlines()) == 3


class TestBundledFamilies:
    def test_fig2a_temperature_family(self, tmp_path):
        # the bundled relaxation scenario swept over temperature
        from fermisse.config import bundled_config_path

        base = bundled_config_path("fig2a_temperature").read_text()
        base = base.replace("grid.n_steps = 800", "grid.n_steps = 200")
        cfg_file = tmp_path / "fig2a_small.cfg"
        cfg_file.write_text(base)
        out = tmp_path / "family"
        code = main(
            [
                "sweep",
                "--config",
                str(cfg_file),
                "--param",
                "bath.temperature_K",
                "--values",
                "0.05,0.3",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        curves = {}
        for value in ("0.05", "0.3"):
            path = out / f"bath.temperature_K={value}" / "trajectory.csv"
            rows = [line.split(",") for line in path.read_text().strip().splitlines()[1:]]
            curves[value] = np.array([float(r[1]) for r in rows])
        # hotter bath holds more occupation at late times (mu below the level)
        assert curves["0.3"][-1] > curves["0.05"][-1]


class TestShippedConfigs:
    @pytest.mark.parametrize(
        "name", ["fig1_coefficients", "fig2a_temperature", "fig2b_bandwidth", "fig3_coupling"]
    )
    def test_bundled_scenarios_run_clean(self, tmp_path, name):
        from fermisse.config import bundled_config_path

        text = bundled_config_path(name).read_text()
        text = text.replace("grid.n_steps = 800", "grid.n_steps = 200")
        cfg_file = tmp_path / f"{name}.cfg"
        cfg_file.write_text(text)
        out = tmp_path / name
        assert main(["run", "--config", str(cfg_file), "--out", str(out)]) == 0
        assert (out / "coefficients.csv").exists()
        if "coefficients" not in name:
            rows = (out / "trajectory.csv").read_text().strip().splitlines()[1:]
            traces = np.array([float(r.split(",")[-2]) for r in rows])
            assert np.max(np.abs(traces - 1.0)) <= 1e-10


class TestValidateVerb:
    def test_full_validation_passes(self, tmp_path):
        out = tmp_path / "val"
        assert main(["validate", "--out", str(out)]) == 0
        summary = (out / "summary.txt").read_text()
        assert "FAIL" not in summary
        for name in (
            "completeness_K3",
            "novikov_left",
            "novikov_right",
            "sse_reconstruction_vs_fock",
            "markov_F1_equals_half_gamma",
        ):
            assert f"PASS {name}" in summary
