"""End-to-end CLI tests: every subcommand through main() with argv lists.

Output files must carry the version/config prelude and reproduce byte
for byte under identical flags.
"""

from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest

from causalpieces.cli import main
from causalpieces.core import NetworkParams, Topology, WeightStack
from causalpieces.training import (
    Metrics,
    TrainConfig,
    TrainResult,
    load_checkpoint,
    save_checkpoint,
)


def run(out_dir, *argv) -> int:
    return main([*argv, "--output-dir", str(out_dir)])


def read_output_csv(path):
    meta, rows = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                meta.append(line.rstrip("\n"))
                continue
            rows.append(line)
    parsed = list(csv.reader(rows))
    return meta, parsed[0], parsed[1:]


def read_output_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


class TestSweep:
    def test_grid_shape_and_meta(self, tmp_path):
        code = run(tmp_path, "sweep", "--n", "10", "--samples", "200",
                   "--mu", "0:0.1:0.05", "--sigma", "0:0.1:0.05", "--seed", "3")
        assert code == 0
        meta, header, rows = read_output_csv(tmp_path / "sweep.csv")
        assert meta[0].startswith("# causalpieces ")
        assert '"seed": 3' in meta[1]
        assert header == ["mu", "sigma", "fraction", "log2_eta", "stderr"]
        assert len(rows) == 9
        fractions = [float(r[2]) for r in rows]
        assert all(0.0 <= f <= 1.0 for f in fractions)

    def test_rerun_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        argv = ["sweep", "--n", "8", "--samples", "100",
                "--mu", "0:0.05:0.05", "--sigma", "0:0.05:0.05"]
        assert run(a, *argv) == 0
        assert run(b, *argv) == 0
        assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()

    def test_zero_area_range_is_usage_error(self, tmp_path, capsys):
        code = run(tmp_path, "sweep", "--n", "8", "--samples", "100",
                   "--mu", "0.1:0.1:0.05", "--sigma", "0:0.1:0.05")
        assert code == 2
        assert "usage error" in capsys.readouterr().err

    def test_malformed_range_is_usage_error(self, tmp_path):
        code = run(tmp_path, "sweep", "--n", "8", "--samples", "100",
                   "--mu", "0-0.1", "--sigma", "0:0.1:0.05")
        assert code == 2

    def test_missing_flags_are_usage_error(self, tmp_path):
        assert run(tmp_path, "sweep", "--n", "8") == 2


class TestCount:
    def test_fresh_network_counts(self, tmp_path):
        code = run(tmp_path, "count", "--dataset", "yinyang:300",
                   "--topology", "4,10,3", "--init", "normal:optimized")
        assert code == 0
        _, header, rows = read_output_csv(tmp_path / "count_layers.csv")
        assert header[:2] == ["layer", "pieces"]
        assert len(rows) == 3  # two layers plus the network row
        assert rows[-1][0] == "network"
        assert all(int(r[1]) > 0 for r in rows)
        _, id_header, id_rows = read_output_csv(tmp_path / "count_ids.csv")
        assert id_header == ["sample", "layer0_piece", "layer1_piece"]
        assert len(id_rows) == 300

    def test_grid_dataset(self, tmp_path):
        code = run(tmp_path, "count", "--dataset", "grid:20",
                   "--topology", "4,6,3", "--init", "uniform:optimized")
        assert code == 0
        _, _, id_rows = read_output_csv(tmp_path / "count_ids.csv")
        # lattice points strictly inside the disk
        assert len(id_rows) == 276

    def test_optimized_init_piece_count_regression(self, tmp_path):
        code = run(tmp_path, "count", "--dataset", "yinyang:5000",
                   "--topology", "4,30,3", "--init", "normal:optimized")
        assert code == 0
        _, _, rows = read_output_csv(tmp_path / "count_layers.csv")
        pieces = int(rows[1][1])  # output layer
        assert abs(pieces - 1249) <= 125

    def test_checkpoint_round_trip(self, tmp_path):
        code = run(tmp_path, "train", "--topology", "4,6,3",
                   "--init", "normal:optimized", "--epochs", "2",
                   "--train-count", "60", "--test-count", "30",
                   "--batch", "20", "--lr", "1e-3")
        assert code == 0
        code = run(tmp_path, "count", "--dataset", "yinyang:100",
                   "--checkpoint", str(tmp_path / "checkpoint.json"))
        assert code == 0

    def test_checkpoint_dataset_mismatch_is_runtime_error(self, tmp_path, capsys):
        result = TrainResult(WeightStack([np.ones((2, 3))]), Metrics(), TrainConfig())
        save_checkpoint(tmp_path / "ckpt.json", result, NetworkParams())
        code = run(tmp_path, "count", "--dataset", "yinyang:50",
                   "--checkpoint", str(tmp_path / "ckpt.json"))
        assert code == 1
        assert "does not match" in capsys.readouterr().err

    def test_checkpoint_and_init_conflict(self, tmp_path):
        code = run(tmp_path, "count", "--dataset", "yinyang:50",
                   "--checkpoint", "x.json", "--init", "normal:optimized")
        assert code == 2

    def test_missing_checkpoint_file_is_runtime_error(self, tmp_path):
        code = run(tmp_path, "count", "--dataset", "yinyang:50",
                   "--checkpoint", str(tmp_path / "nope.json"))
        assert code == 1


class TestTrainCommand:
    def test_writes_checkpoint_and_metrics(self, tmp_path):
        code = run(tmp_path, "train", "--topology", "4,8,3",
                   "--init", "normal:optimized", "--epochs", "6",
                   "--train-count", "120", "--test-count", "60",
                   "--batch", "30", "--lr", "1e-3", "--eval-every", "3",
                   "--track-pieces")
        assert code == 0
        loaded, params = load_checkpoint(tmp_path / "checkpoint.json")
        assert loaded.weights.topology.layer_sizes == (4, 8, 3)
        assert params == NetworkParams()

        _, header, rows = read_output_csv(tmp_path / "train_metrics.csv")
        assert header == ["epoch", "train_loss", "test_accuracy",
                          "pieces_output_layer"]
        assert len(rows) == 6
        evaluated = [r for r in rows if r[2] != ""]
        assert [int(r[0]) for r in evaluated] == [2, 5]
        assert all(int(r[3]) > 0 for r in evaluated)
        skipped = [r for r in rows if r[2] == ""]
        assert all(r[3] == "" for r in skipped)

    def test_unknown_dataset_is_usage_error(self, tmp_path):
        code = run(tmp_path, "train", "--topology", "4,8,3",
                   "--init", "normal:optimized", "--dataset", "mnist")
        assert code == 2

    def test_bad_init_is_usage_error(self, tmp_path):
        code = run(tmp_path, "train", "--topology", "4,8,3",
                   "--init", "normal:1,2,3")
        assert code == 2


class TestCorrelate:
    ARGS = ["correlate", "--runs", "3", "--topology", "4,6,3",
            "--train-count", "80", "--test-count", "40", "--epochs", "2",
            "--lr", "1e-3", "--batch", "20", "--eval-every", "2"]

    def test_report_and_records(self, tmp_path):
        assert run(tmp_path, *self.ARGS) == 0
        _, header, rows = read_output_csv(tmp_path / "correlate.csv")
        assert header == ["run", "mu", "sigma", "pieces_before", "pieces_after",
                          "best_accuracy"]
        assert len(rows) == 3
        report = read_output_json(tmp_path / "correlate.json")
        assert set(report) >= {"r_log_pieces", "r_pieces", "degenerate", "runs"}

    def test_threads_do_not_change_output(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(a, *self.ARGS) == 0
        assert run(b, *self.ARGS, "--threads", "3") == 0
        a_csv = (a / "correlate.csv").read_text().splitlines()
        b_csv = (b / "correlate.csv").read_text().splitlines()
        # prelude differs in the threads flag; the records must not
        assert a_csv[2:] == b_csv[2:]

    def test_two_runs_flag_degenerate(self, tmp_path):
        argv = list(self.ARGS)
        argv[2] = "2"
        assert run(tmp_path, *argv) == 0
        report = read_output_json(tmp_path / "correlate.json")
        assert report["degenerate"] is True
        if report["r_pieces"] is not None:
            assert abs(report["r_pieces"]) == pytest.approx(1.0)

    def test_single_run_is_usage_error(self, tmp_path):
        assert run(tmp_path, "correlate", "--runs", "1") == 2


class TestEvolveCommand:
    ARGS = ["evolve", "--topology", "4,8,3", "--family", "uniform",
            "--patience", "1", "--max-loops", "2", "--probe-resolution", "10"]

    def test_history_and_best(self, tmp_path):
        assert run(tmp_path, *self.ARGS) == 0
        _, header, rows = read_output_csv(tmp_path / "evolve_history.csv")
        assert header == ["loop", "candidate", "c0", "c1", "c2", "c3", "fitness"]
        loops = {int(r[0]) for r in rows}
        assert 0 in loops
        assert len([r for r in rows if int(r[0]) == 0]) == 4
        for loop in loops - {0}:
            assert len([r for r in rows if int(r[0]) == loop]) == 8
        best = read_output_json(tmp_path / "evolve_best.json")
        assert best["family"] == "uniform"
        assert len(best["coeffs"]) == 4
        assert best["fitness"] >= max(float(r[6]) for r in rows if int(r[0]) == 0)

    def test_rerun_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(a, *self.ARGS) == 0
        assert run(b, *self.ARGS) == 0
        assert (a / "evolve_history.csv").read_bytes() == \
            (b / "evolve_history.csv").read_bytes()
        assert (a / "evolve_best.json").read_bytes() == \
            (b / "evolve_best.json").read_bytes()


class TestEstimate:
    def test_sparre_bound_value(self, tmp_path, capsys):
        assert run(tmp_path, "estimate", "--bound", "sparre", "--n", "100") == 0
        out = capsys.readouterr().out
        assert "2.83" in out
        payload = read_output_json(tmp_path / "estimate.json")
        expect = 1.0 / (200.0 * math.sqrt(math.pi * (100.0 - 2.0 / 3.0)))
        assert payload["fraction"] == pytest.approx(expect, rel=1e-12)

    def test_monte_carlo_estimate(self, tmp_path):
        code = run(tmp_path, "estimate", "--n", "12", "--init", "normal:0.3,0.4",
                   "--samples", "500")
        assert code == 0
        payload = read_output_json(tmp_path / "estimate.json")
        assert 0.0 <= payload["fraction"] <= 1.0
        assert payload["eta"] > 0.0

    def test_deep_bound(self, tmp_path):
        code = run(tmp_path, "estimate", "--bound", "deep",
                   "--topology", "4,10,3", "--init", "normal:optimized",
                   "--samples", "300")
        assert code == 0
        payload = read_output_json(tmp_path / "estimate.json")
        assert math.isfinite(payload["log2_eta"])
        assert payload["log2_eta"] > 0.0

    def test_sparre_without_n_is_usage_error(self, tmp_path):
        assert run(tmp_path, "estimate", "--bound", "sparre") == 2


class TestConfigFile:
    def test_config_supplies_defaults_and_flags_win(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n": 8, "samples": 100,
                                   "mu": "0:0.05:0.05", "sigma": "0:0.05:0.05"}))
        out_a = tmp_path / "a"
        assert run(out_a, "sweep", "--config", str(cfg)) == 0
        meta, _, _ = read_output_csv(out_a / "sweep.csv")
        assert '"n": 8' in meta[1]

        out_b = tmp_path / "b"
        assert run(out_b, "sweep", "--config", str(cfg), "--n", "5") == 0
        meta, _, _ = read_output_csv(out_b / "sweep.csv")
        assert '"n": 5' in meta[1]

    def test_unreadable_config_is_usage_error(self, tmp_path):
        assert run(tmp_path, "sweep", "--config", str(tmp_path / "nope.json")) == 2

    def test_non_object_config_is_usage_error(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("[1, 2]")
        assert run(tmp_path, "sweep", "--config", str(cfg)) == 2


class TestOutputDirectory:
    def test_env_var_default(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CAUSALPIECES_OUTDIR", str(tmp_path / "from_env"))
        code = main(["estimate", "--bound", "sparre", "--n", "10"])
        assert code == 0
        assert (tmp_path / "from_env" / "estimate.json").exists()

    def test_directory_is_created(self, tmp_path):
        nested = tmp_path / "deep" / "dir"
        assert run(nested, "estimate", "--bound", "sparre", "--n", "10") == 0
        assert (nested / "estimate.json").exists()
