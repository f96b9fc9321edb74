import json

import pytest

from subsample_nn import analysis, cli


@pytest.fixture
def blob_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({
        "dataset": {"kind": "synth_blobs", "train_n": 300, "test_n": 100,
                    "val_n": 50, "n_features": 12, "n_classes": 3,
                    "separation": 8.0},
        "architecture": {"hidden_layers": 1, "hidden_width": 24},
        "policy": {"kind": "exact"},
        "epochs": 2,
        "seed": 11,
    }))
    return path


def run(argv):
    return cli.main(argv)


class TestTrain:
    def test_smoke_writes_artifacts(self, blob_config, tmp_path, capsys):
        out = tmp_path / "run"
        assert run(["train", "--config", str(blob_config), "--out", str(out)]) == 0
        assert "test_accuracy" in capsys.readouterr().out
        for name in ("summary.json", "timing.csv", "confusion.csv",
                     "labels.csv", "checkpoint.bin", "checkpoint.bin.json"):
            assert (out / name).exists()
        summary = json.loads((out / "summary.json").read_text())
        assert "test_accuracy" in summary
        assert summary["test_accuracy"] > 0.9

    def test_zero_epochs_baseline_only(self, blob_config, tmp_path):
        out = tmp_path / "baseline"
        assert run(["train", "--config", str(blob_config), "--out", str(out),
                    "--set", "epochs=0"]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert len(summary["val_accuracy"]) == 1

    def test_same_seed_byte_identical_summaries(self, blob_config, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        run(["train", "--config", str(blob_config), "--out", str(out_a)])
        run(["train", "--config", str(blob_config), "--out", str(out_b)])
        assert (out_a / "summary.json").read_bytes() == (out_b / "summary.json").read_bytes()
        assert (out_a / "confusion.csv").read_bytes() == (out_b / "confusion.csv").read_bytes()
        assert (out_a / "labels.csv").read_bytes() == (out_b / "labels.csv").read_bytes()

    def test_invalid_policy_parameter_is_usage_error(self, blob_config, tmp_path):
        code = run(["train", "--config", str(blob_config),
                    "--out", str(tmp_path / "x"),
                    "--set", "policy.kind=dropout", "--set", "policy.p_keep=0"])
        assert code == 2

    def test_missing_idx_paths_usage_error(self, tmp_path):
        code = run(["train", "--out", str(tmp_path / "x"),
                    "--set", "dataset.kind=idx", "--set", "epochs=0"])
        assert code == 2

    def test_idx_config_defaults_to_full_scale_split(self, tmp_path):
        path = tmp_path / "idx.json"
        path.write_text(json.dumps({"dataset": {"kind": "idx",
                                                "images": "i", "labels": "l"}}))
        cfg = cli.load_config(path, [])
        assert cfg["dataset"]["train_n"] == 55000
        assert cfg["dataset"]["test_n"] == 10000
        assert cfg["dataset"]["val_n"] == 5000


class TestSweep:
    def test_layer_sweep_writes_merged_csv(self, blob_config, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.THREADS_ENV, "2")
        out = tmp_path / "sweep"
        assert run(["sweep", "--config", str(blob_config), "--out", str(out),
                    "--vary", "layers=1,2"]) == 0
        rows = (out / "sweep.csv").read_text().strip().splitlines()
        assert rows[0] == "variant,accuracy,total_seconds,total_flops"
        assert len(rows) == 3
        assert (out / "layers-1" / "summary.json").exists()
        assert (out / "layers-2" / "summary.json").exists()

    def test_sweep_rows_reproducible(self, blob_config, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.THREADS_ENV, "1")

        def deterministic_columns(path):
            rows = []
            for line in (path / "sweep.csv").read_text().strip().splitlines()[1:]:
                variant, acc, _seconds, flops = line.split(",")
                rows.append((variant, acc, flops))
            return rows

        out_a, out_b = tmp_path / "s1", tmp_path / "s2"
        run(["sweep", "--config", str(blob_config), "--out", str(out_a),
             "--vary", "batch=1,5"])
        run(["sweep", "--config", str(blob_config), "--out", str(out_b),
             "--vary", "batch=1,5"])
        assert deterministic_columns(out_a) == deterministic_columns(out_b)

    def test_policy_sweep(self, blob_config, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.THREADS_ENV, "1")
        out = tmp_path / "policies"
        assert run(["sweep", "--config", str(blob_config), "--out", str(out),
                    "--vary", "policy=exact,dropout"]) == 0
        rows = (out / "sweep.csv").read_text().strip().splitlines()
        assert [r.split(",")[0] for r in rows[1:]] == ["policy-exact", "policy-dropout"]

    def test_unknown_axis_usage_error(self, blob_config, tmp_path):
        assert run(["sweep", "--config", str(blob_config),
                    "--out", str(tmp_path / "x"), "--vary", "width=1,2"]) == 2


class TestVerifyTheory:
    def test_default_passes_and_prints_table(self, capsys):
        assert run(["verify-theory"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out
        for value in ("0.2000", "0.4400", "1.9860"):
            assert value in out

    def test_c1_ratios_are_powers_of_two_minus_one(self, capsys):
        assert run(["verify-theory", "--c", "1", "--depth", "4"]) == 0

    def test_invalid_width_usage_error(self):
        assert run(["verify-theory", "--width", "7"]) == 2

    def test_failure_exit_code(self, monkeypatch):
        real = analysis.theorem1_check

        def corrupted(model, sets, c):
            rows = real(model, sets, c)
            rows[0]["ratio"] += 0.5
            return rows

        monkeypatch.setattr(cli.analysis, "theorem1_check", corrupted)
        assert run(["verify-theory"]) == 3

    def test_writes_ratio_csv(self, tmp_path):
        assert run(["verify-theory", "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "ratios_c5.csv").read_text().strip().splitlines()
        assert lines[0] == "k,ratio"
        assert len(lines) == 7


class TestMatmulBench:
    def test_full_budget_zero_error(self, capsys):
        assert run(["matmul-bench", "--m", "4", "--n", "6", "--p", "4",
                    "--k", "6", "--trials", "50"]) == 0
        out = capsys.readouterr().out
        assert "empirical_sq_error 0.0" in out

    def test_flop_ratio_near_budget_fraction(self, capsys):
        assert run(["matmul-bench", "--m", "16", "--n", "64", "--p", "16",
                    "--k", "8", "--trials", "1000"]) == 0
        out = capsys.readouterr().out
        ratio = float(out.split("flop_ratio ")[1].split(" ")[0])
        assert 0.8 * 8 / 64 <= ratio <= 1.3 * 8 / 64

    def test_analytic_close_to_empirical(self, capsys):
        assert run(["matmul-bench", "--m", "8", "--n", "32", "--p", "8",
                    "--k", "8", "--trials", "4000"]) == 0
        out = capsys.readouterr().out
        analytic = float(out.split("analytic_sq_error ")[1].splitlines()[0])
        empirical = float(out.split("empirical_sq_error ")[1].splitlines()[0])
        assert abs(analytic - empirical) <= 0.15 * analytic

    def test_bad_dims_usage_error(self):
        assert run(["matmul-bench", "--m", "0"]) == 2
