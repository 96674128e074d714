import json

import numpy as np
import pytest

from fwmpairs import cli, pipelines
from fwmpairs.pipelines import _point_seed
from fwmpairs.streams import (
    IDLER,
    SIGNAL,
    TimeTagStream,
    read_time_tags_binary,
    write_time_tags_binary,
)
from fwmpairs.tomography import (
    OptimizerFailed,
    bell_phi_plus,
    read_result,
    simulate_counts,
    write_counts_csv,
)

SCAN_CONFIG = """
scenario = "scan"
[atomic]
omega_p_mhz = 350.0
omega_c_mhz = 350.0
delta_1_mhz = 1150.0
delta_2_mhz = -503.395
lambda_p_nm = 780.0
lambda_c_nm = 1367.0
[vapor]
temperature_c = 80.0
[grid]
points = 201
n_sigma = 4.0
"""

TAGS_CONFIG = """
scenario = "tags"
seed = 5
[pairs]
pair_rate_per_s = 5e4
duration_s = 1.0
eff_signal = 0.78
eff_idler = 0.68
"""


def write_config(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def run(args):
    return cli.main([str(a) for a in args])


class TestScanCommand:
    def test_writes_profile_and_summary(self, tmp_path, capsys):
        cfg = write_config(tmp_path, SCAN_CONFIG)
        assert run(["scan", "--config", cfg, "--out", tmp_path / "out"]) == 0
        summary = json.loads((tmp_path / "out" / "scan_summary.json").read_text())
        step = summary["grid_step_mps"]
        assert abs(summary["peak_velocity_mps"] - summary["predicted_velocity_mps"]) <= step
        lines = (tmp_path / "out" / "profile.csv").read_text().splitlines()
        assert lines[0] == "velocity_mps,raw,weighted"
        assert len(lines) == 202
        assert "peak" in capsys.readouterr().out

    def test_zero_detuning_peaks_at_rest(self, tmp_path):
        cfg = write_config(tmp_path, SCAN_CONFIG.replace("delta_2_mhz = -503.395",
                                                         "delta_2_mhz = 0.0"))
        assert run(["scan", "--config", cfg, "--out", tmp_path / "out"]) == 0
        summary = json.loads((tmp_path / "out" / "scan_summary.json").read_text())
        assert abs(summary["peak_velocity_mps"]) <= summary["grid_step_mps"]

    def test_far_detuned_summary_tracks_thermal_distribution(self, tmp_path):
        # two-photon resonance pushed to ~1000 m/s: the weighted profile is
        # dominated by off-resonant scattering and follows the MB curve
        cfg = write_config(tmp_path, SCAN_CONFIG
                           .replace("delta_2_mhz = -503.395", "delta_2_mhz = -2013.58")
                           .replace("n_sigma = 4.0", "n_sigma = 6.0")
                           .replace("points = 201", "points = 501"))
        assert run(["scan", "--config", cfg, "--out", tmp_path / "out"]) == 0
        summary = json.loads((tmp_path / "out" / "scan_summary.json").read_text())
        assert summary["mb_overlap"] > 0.99

    def test_solver_failure_exits_3(self, tmp_path, capsys):
        cfg = write_config(tmp_path, SCAN_CONFIG.replace(
            "[vapor]", "gamma_e_mhz = 0.0\ngamma_t_mhz = 0.0\n[vapor]"))
        assert run(["scan", "--config", cfg, "--out", tmp_path / "out"]) == 3
        assert "solver error" in capsys.readouterr().err


class TestConfigValidation:
    def test_missing_file_exits_2(self, tmp_path, capsys):
        assert run(["scan", "--config", tmp_path / "nope.toml"]) == 2
        assert "config error" in capsys.readouterr().err

    def test_scenario_mismatch_exits_2(self, tmp_path):
        cfg = write_config(tmp_path, SCAN_CONFIG)
        assert run(["tags", "--config", cfg, "--out", tmp_path / "out"]) == 2

    def test_invalid_parameter_named_on_stderr(self, tmp_path, capsys):
        cfg = write_config(tmp_path, TAGS_CONFIG.replace("eff_signal = 0.78",
                                                         "eff_signal = 1.78"))
        assert run(["tags", "--config", cfg, "--out", tmp_path / "out"]) == 2
        assert "eff_signal" in capsys.readouterr().err

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path, TAGS_CONFIG + "\ntypo_key = 1\n")
        assert run(["tags", "--config", cfg, "--out", tmp_path / "out"]) == 2

    def test_no_partial_output_on_validation_failure(self, tmp_path):
        cfg = write_config(tmp_path, TAGS_CONFIG.replace("pair_rate_per_s = 5e4",
                                                         "pair_rate_per_s = -1"))
        out = tmp_path / "out"
        assert run(["tags", "--config", cfg, "--out", out]) == 2
        assert not out.exists()

    def test_missing_input_file_exits_2(self, tmp_path):
        cfg = write_config(tmp_path, """
scenario = "analyze"
[input]
tags_path = "missing.bin"
""")
        assert run(["analyze", "--config", cfg, "--out", tmp_path / "out"]) == 2

    def test_malformed_counts_csv_exits_2(self, tmp_path, capsys):
        (tmp_path / "counts.csv").write_text("wrong,header\n1,2\n")
        cfg = write_config(tmp_path, """
scenario = "tomo"
[input]
counts_path = "counts.csv"
""")
        assert run(["tomo", "--config", cfg, "--out", tmp_path / "out"]) == 2
        assert "counts_path" in capsys.readouterr().err


class TestTagsCommand:
    def test_writes_binary_by_default(self, tmp_path, capsys):
        cfg = write_config(tmp_path, TAGS_CONFIG)
        assert run(["tags", "--config", cfg, "--out", tmp_path / "out"]) == 0
        tags = tmp_path / "out" / "tags.bin"
        assert tags.stat().st_size % 9 == 0
        n_records = tags.stat().st_size // 9
        # 5e4 * (0.78 + 0.68) = 73000 expected records
        assert abs(n_records - 73_000) < 4 * np.sqrt(73_000)
        assert "tags" in capsys.readouterr().out

    def test_zero_rate_gives_empty_valid_file(self, tmp_path):
        cfg = write_config(tmp_path, TAGS_CONFIG.replace("pair_rate_per_s = 5e4",
                                                         "pair_rate_per_s = 0"))
        assert run(["tags", "--config", cfg, "--out", tmp_path / "out"]) == 0
        path = tmp_path / "out" / "tags.bin"
        assert path.stat().st_size == 0
        sig, idl = read_time_tags_binary(path)
        assert len(sig) == 0 and len(idl) == 0

    def test_csv_format(self, tmp_path):
        cfg = write_config(tmp_path, TAGS_CONFIG + '\n[output]\nformat = "csv"\n')
        assert run(["tags", "--config", cfg, "--out", tmp_path / "out"]) == 0
        lines = (tmp_path / "out" / "tags.csv").read_text().splitlines()
        assert lines[0] == "channel,time_ps"

    def test_capacity_exceeded_exits_4(self, tmp_path, capsys):
        cfg = write_config(tmp_path, TAGS_CONFIG.replace("pair_rate_per_s = 5e4",
                                                         "pair_rate_per_s = 2e9"))
        assert run(["tags", "--config", cfg, "--out", tmp_path / "out"]) == 4
        assert "capacity" in capsys.readouterr().err

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_config(tmp_path, TAGS_CONFIG)
        assert run(["tags", "--config", cfg, "--out", tmp_path / "a"]) == 0
        assert run(["tags", "--config", cfg, "--out", tmp_path / "b"]) == 0
        assert (tmp_path / "a" / "tags.bin").read_bytes() == \
            (tmp_path / "b" / "tags.bin").read_bytes()

    def test_seed_flag_overrides_config(self, tmp_path):
        cfg = write_config(tmp_path, TAGS_CONFIG)
        run(["tags", "--config", cfg, "--out", tmp_path / "a", "--seed", "99"])
        run(["tags", "--config", cfg, "--out", tmp_path / "b"])
        assert (tmp_path / "a" / "tags.bin").read_bytes() != \
            (tmp_path / "b" / "tags.bin").read_bytes()


ANALYZE_CONFIG = """
scenario = "analyze"
[input]
tags_path = "out/tags.bin"
[histogram]
bin_width_ps = 100
span_ns = 40.0
window_ns = 4.0
duration_s = 1.0
[detectors]
dead_signal_ns = 0.0
dead_idler_ns = 0.0
eff_signal = 0.78
eff_idler = 0.68
"""


class TestAnalyzeCommand:
    def test_heralding_matches_idler_efficiency(self, tmp_path):
        run(["tags", "--config", write_config(tmp_path, TAGS_CONFIG), "--out", tmp_path / "out"])
        cfg = write_config(tmp_path, ANALYZE_CONFIG, name="analyze.toml")
        assert run(["analyze", "--config", cfg, "--out", tmp_path / "out"]) == 0
        metrics = json.loads((tmp_path / "out" / "metrics.json").read_text())
        # binomial: sigma(eta) = sqrt(eta(1-eta)/N_signal)
        sigma = np.sqrt(0.68 * 0.32 / metrics["singles_signal"])
        assert abs(metrics["heralding"] - 0.68) < 4 * sigma
        assert metrics["pair_rate_estimate_per_s"] == pytest.approx(5e4, rel=0.05)
        assert (tmp_path / "out" / "histogram.csv").exists()
        assert (tmp_path / "out" / "gsi.csv").exists()

    def test_empty_tags_give_zero_count_report(self, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        empty = TimeTagStream(SIGNAL, np.array([], dtype=np.int64))
        empty_i = TimeTagStream(IDLER, np.array([], dtype=np.int64))
        write_time_tags_binary(out / "tags.bin", empty, empty_i)
        cfg = write_config(tmp_path, ANALYZE_CONFIG, name="analyze.toml")
        assert run(["analyze", "--config", cfg, "--out", out]) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["coincidences"] == 0
        assert metrics["gsi_peak"] is None
        assert not (out / "gsi.csv").exists()

    def test_unsorted_input_exits_5(self, tmp_path, capsys):
        out = tmp_path / "out"
        out.mkdir()
        # bypass TimeTagStream ordering by crafting raw records
        records = np.zeros(2, dtype=np.dtype([("channel", "u1"), ("time", "<u8")]))
        records["channel"] = [0, 0]
        records["time"] = [500, 100]
        records.tofile(out / "tags.bin")
        cfg = write_config(tmp_path, ANALYZE_CONFIG, name="analyze.toml")
        assert run(["analyze", "--config", cfg, "--out", out]) == 5
        assert "input error" in capsys.readouterr().err

    def test_truncated_binary_fails_validation(self, tmp_path, capsys):
        out = tmp_path / "out"
        out.mkdir()
        (out / "tags.bin").write_bytes(b"\x00" * 10)  # not a multiple of 9
        cfg = write_config(tmp_path, ANALYZE_CONFIG, name="analyze.toml")
        assert run(["analyze", "--config", cfg, "--out", out]) == 2
        assert "9-byte" in capsys.readouterr().err

    def test_garbage_channel_byte_exits_5(self, tmp_path, capsys):
        out = tmp_path / "out"
        out.mkdir()
        records = np.zeros(1, dtype=np.dtype([("channel", "u1"), ("time", "<u8")]))
        records["channel"] = [7]
        records["time"] = [100]
        records.tofile(out / "tags.bin")
        cfg = write_config(tmp_path, ANALYZE_CONFIG, name="analyze.toml")
        assert run(["analyze", "--config", cfg, "--out", out]) == 5
        assert "channel" in capsys.readouterr().err

    def test_reruns_byte_identical(self, tmp_path):
        run(["tags", "--config", write_config(tmp_path, TAGS_CONFIG), "--out", tmp_path / "out"])
        cfg = write_config(tmp_path, ANALYZE_CONFIG, name="analyze.toml")
        assert run(["analyze", "--config", cfg, "--out", tmp_path / "a"]) == 0
        assert run(["analyze", "--config", cfg, "--out", tmp_path / "b"]) == 0
        for name in ("metrics.json", "histogram.csv", "gsi.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_dead_time_corrected_rate_recovers_generator(self, tmp_path):
        # saturated detectors (20 ns at ~1e6/s singles): the corrected
        # coincidence rate divided by the efficiencies must land within 2%
        # of the generated pair rate
        tags_cfg = write_config(tmp_path, """
scenario = "tags"
seed = 31
[pairs]
pair_rate_per_s = 1e6
duration_s = 2.0
eff_signal = 0.78
eff_idler = 0.68
dead_signal_ns = 20.0
dead_idler_ns = 20.0
""", name="tags.toml")
        assert run(["tags", "--config", tags_cfg, "--out", tmp_path / "out"]) == 0
        analyze_cfg = write_config(tmp_path, """
scenario = "analyze"
[input]
tags_path = "out/tags.bin"
[histogram]
span_ns = 4.0
window_ns = 2.0
duration_s = 2.0
[detectors]
dead_signal_ns = 20.0
dead_idler_ns = 20.0
eff_signal = 0.78
eff_idler = 0.68
""", name="analyze.toml")
        assert run(["analyze", "--config", analyze_cfg, "--out", tmp_path / "out"]) == 0
        metrics = json.loads((tmp_path / "out" / "metrics.json").read_text())
        assert metrics["pair_rate_estimate_per_s"] == pytest.approx(1e6, rel=0.02)
        # the uncorrected rate is visibly below the generator level
        raw = metrics["coincidence_rate_per_s"] / (0.78 * 0.68)
        assert raw < 0.99e6


TOMO_CONFIG = """
scenario = "tomo"
seed = 2
[input]
counts_path = "counts.csv"
[reconstruction]
restarts = 6
"""


class TestTomoCommand:
    def write_counts(self, tmp_path, rho, seed=7):
        write_counts_csv(simulate_counts(rho, n_per_setting=1e5, seed=seed),
                         tmp_path / "counts.csv")

    def test_bell_state_counts_reconstruct(self, tmp_path, capsys):
        self.write_counts(tmp_path, bell_phi_plus())
        cfg = write_config(tmp_path, TOMO_CONFIG)
        assert run(["tomo", "--config", cfg, "--out", tmp_path / "out"]) == 0
        result = read_result(tmp_path / "out" / "tomography_result.txt")
        assert result.fidelity_phi_plus >= 0.99
        assert result.fidelity_lower_bound <= result.fidelity_phi_plus
        assert "fidelity" in capsys.readouterr().out

    def test_werner_counts_fidelity(self, tmp_path):
        self.write_counts(tmp_path, 0.9 * bell_phi_plus() + 0.1 * np.eye(4) / 4)
        cfg = write_config(tmp_path, TOMO_CONFIG)
        assert run(["tomo", "--config", cfg, "--out", tmp_path / "out"]) == 0
        result = read_result(tmp_path / "out" / "tomography_result.txt")
        assert result.fidelity_phi_plus == pytest.approx(0.925, abs=0.01)

    def test_optimizer_failure_exits_6(self, tmp_path, monkeypatch, capsys):
        self.write_counts(tmp_path, bell_phi_plus())
        cfg = write_config(tmp_path, TOMO_CONFIG)

        def explode(job, out_dir):
            raise OptimizerFailed("no restart converged")

        monkeypatch.setattr(cli, "run_tomo", explode)
        assert run(["tomo", "--config", cfg, "--out", tmp_path / "out"]) == 6
        assert "optimizer error" in capsys.readouterr().err

    def test_reruns_byte_identical(self, tmp_path):
        self.write_counts(tmp_path, 0.9 * bell_phi_plus() + 0.1 * np.eye(4) / 4)
        cfg = write_config(tmp_path, TOMO_CONFIG)
        assert run(["tomo", "--config", cfg, "--out", tmp_path / "a"]) == 0
        assert run(["tomo", "--config", cfg, "--out", tmp_path / "b"]) == 0
        assert (tmp_path / "a" / "tomography_result.txt").read_bytes() == \
            (tmp_path / "b" / "tomography_result.txt").read_bytes()


SWEEP_CONFIG = """
scenario = "sweep"
seed = 3
[axes]
pair_rate_per_s = [1e4, 3e4]
[pairs]
duration_s = 0.5
eff_signal = 0.78
eff_idler = 0.68
[histogram]
window_ns = 2.0
[detectors]
dead_signal_ns = 0.0
dead_idler_ns = 0.0
eff_signal = 0.78
eff_idler = 0.68
"""


class TestSweepCommand:
    def test_rows_in_grid_order_with_status(self, tmp_path):
        cfg = write_config(tmp_path, SWEEP_CONFIG)
        assert run(["sweep", "--config", cfg, "--out", tmp_path / "out"]) == 0
        lines = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
        assert lines[0].startswith("pair_rate_per_s,")
        assert lines[0].endswith(",status")
        assert len(lines) == 3
        assert [float(l.split(",")[0]) for l in lines[1:]] == [1e4, 3e4]
        assert all(l.endswith(",ok") for l in lines[1:])

    def test_worker_count_does_not_change_output(self, tmp_path):
        cfg = write_config(tmp_path, SWEEP_CONFIG)
        assert run(["sweep", "--config", cfg, "--out", tmp_path / "a"]) == 0
        assert run(["sweep", "--config", cfg, "--out", tmp_path / "b", "--workers", "2"]) == 0
        assert (tmp_path / "a" / "sweep.csv").read_bytes() == \
            (tmp_path / "b" / "sweep.csv").read_bytes()

    def test_single_point_sweep_matches_analyze_metrics(self, tmp_path):
        sweep_cfg = write_config(tmp_path, SWEEP_CONFIG.replace(
            "pair_rate_per_s = [1e4, 3e4]", "pair_rate_per_s = [5e4]"), name="sweep.toml")
        assert run(["sweep", "--config", sweep_cfg, "--out", tmp_path / "out"]) == 0
        header, row = (tmp_path / "out" / "sweep.csv").read_text().splitlines()

        # regenerate the same point through tags + analyze
        point_seed = _point_seed(3, 0)
        tags_cfg = write_config(tmp_path, f"""
scenario = "tags"
seed = {point_seed}
[pairs]
pair_rate_per_s = 5e4
duration_s = 0.5
eff_signal = 0.78
eff_idler = 0.68
""", name="tags.toml")
        assert run(["tags", "--config", tags_cfg, "--out", tmp_path / "out"]) == 0
        analyze_cfg = write_config(tmp_path, """
scenario = "analyze"
[input]
tags_path = "out/tags.bin"
[histogram]
window_ns = 2.0
duration_s = 0.5
[detectors]
dead_signal_ns = 0.0
dead_idler_ns = 0.0
eff_signal = 0.78
eff_idler = 0.68
""", name="analyze.toml")
        assert run(["analyze", "--config", analyze_cfg, "--out", tmp_path / "out"]) == 0
        metrics = json.loads((tmp_path / "out" / "metrics.json").read_text())

        cells = dict(zip(header.split(","), row.split(",")))
        for column in pipelines.SWEEP_METRIC_COLUMNS:
            assert float(cells[column]) == pytest.approx(metrics[column], rel=1e-12)

    def test_per_point_failure_flushes_status(self, tmp_path):
        cfg = write_config(tmp_path, SWEEP_CONFIG.replace(
            "pair_rate_per_s = [1e4, 3e4]", "pair_rate_per_s = [1e4, 5e9]"))
        assert run(["sweep", "--config", cfg, "--out", tmp_path / "out"]) == 0
        lines = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
        assert lines[1].endswith(",ok")
        assert "error" in lines[2]

    def test_mixed_axes_rejected(self, tmp_path):
        cfg = write_config(tmp_path, SWEEP_CONFIG.replace(
            "pair_rate_per_s = [1e4, 3e4]",
            "pair_rate_per_s = [1e4]\npump_power_mw = [1.0]"))
        assert run(["sweep", "--config", cfg, "--out", tmp_path / "out"]) == 2

    def test_rate_sweep_gsi_column_has_inverse_slope(self, tmp_path):
        cfg = write_config(tmp_path, SWEEP_CONFIG
                           .replace("pair_rate_per_s = [1e4, 3e4]",
                                    "pair_rate_per_s = [1e3, 1e4, 1e5]")
                           .replace("duration_s = 0.5", "duration_s = 4.0"))
        assert run(["sweep", "--config", cfg, "--out", tmp_path / "out"]) == 0
        lines = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
        header = lines[0].split(",")
        rates, peaks = [], []
        for line in lines[1:]:
            cells = dict(zip(header, line.split(",")))
            rates.append(float(cells["coincidence_rate_per_s"]))
            peaks.append(float(cells["gsi_peak"]))
        slope = np.polyfit(np.log(rates), np.log(peaks), 1)[0]
        assert slope == pytest.approx(-1.0, abs=0.05)


class TestOutputDirResolution:
    def test_env_variable_default(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUT_DIR_ENV, str(tmp_path / "envout"))
        cfg = write_config(tmp_path, TAGS_CONFIG)
        assert run(["tags", "--config", cfg]) == 0
        assert (tmp_path / "envout" / "tags.bin").exists()

    def test_flag_beats_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUT_DIR_ENV, str(tmp_path / "envout"))
        cfg = write_config(tmp_path, TAGS_CONFIG)
        assert run(["tags", "--config", cfg, "--out", tmp_path / "flagout"]) == 0
        assert (tmp_path / "flagout" / "tags.bin").exists()
        assert not (tmp_path / "envout").exists()
