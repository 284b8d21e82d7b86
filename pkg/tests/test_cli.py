import json

import numpy as np
import pytest

from fracpredict.cli import main
from fracpredict.nn import load_network
from fracpredict.paths import read_binary, read_csv


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text("[experiment]\nH = 0.7\nN = 8\nn_test = 200\narch = 8 8\n"
                    "[training]\nn_batches = 5\nbatch_size = 64\n")
    return str(path)


def header(path):
    first = path.read_text().splitlines()[0]
    assert first.startswith("# config: ")
    return json.loads(first[len("# config: "):])


class TestCommands:
    def test_simulate_csv_and_binary(self, tmp_path, cfg, capsys):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path), "--n-paths", "3",
                     "--seed", "5"]) == 0
        assert header(tmp_path / "paths.csv")["seed"] == 5
        batch = read_csv(tmp_path / "paths.csv")
        assert batch.values.shape == (3, 17)
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path), "--n-paths", "3",
                     "--seed", "5", "--format", "binary"]) == 0
        np.testing.assert_array_equal(read_binary(tmp_path / "paths.fpb").values, batch.values)

    def test_predict_exact(self, tmp_path, cfg, capsys):
        assert main(["predict-exact", "--config", cfg, "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "weights.csv").read_text().splitlines()
        assert lines[1] == "t_i,weight" and len(lines) == 10
        assert "theoretical_mse" in capsys.readouterr().out

    @pytest.mark.parametrize("variant", ["as_written", "z_argument"])
    def test_predict_continuous(self, tmp_path, cfg, variant):
        assert main(["predict-continuous", "--config", cfg, "--out", str(tmp_path),
                     "--points", "10", "--variant", variant]) == 0
        assert header(tmp_path / "psi.csv")["variant"] == variant
        assert len((tmp_path / "psi.csv").read_text().splitlines()) == 12

    def test_train_and_evaluate(self, tmp_path, cfg):
        assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == 0
        assert load_network(tmp_path / "network.fpnn").layer_widths == (8, 8, 8, 1)
        assert len((tmp_path / "loss_trace.csv").read_text().splitlines()) == 7
        assert main(["evaluate", "--config", cfg, "--out", str(tmp_path)]) == 0
        text = (tmp_path / "report.csv").read_text()
        assert "\nNN," in text and "\nEXACT," in text

    def test_convergence(self, tmp_path):
        assert main(["convergence", "--H", "0.5", "--N", "16", "32", "--fine-steps", "256",
                     "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "convergence.csv").read_text().splitlines()
        assert len(lines) == 4

    def test_compare(self, tmp_path, cfg):
        assert main(["compare", "--config", cfg, "--out", str(tmp_path), "--T", "6.25", "7.5"]) == 0
        lines = (tmp_path / "compare.csv").read_text().splitlines()
        assert header(tmp_path / "compare.csv")["N"] == 8
        assert len(lines) == 4


class TestExitCodes:
    def test_config_error(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("H = 1.5\n")
        assert main(["predict-exact", "--config", str(bad), "--out", str(tmp_path)]) == 2

    def test_off_grid_horizon(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("T = 10.01\n")
        assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 2

    def test_missing_config_file(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.ini")]) == 2

    def test_numerical_failure(self, tmp_path, monkeypatch):
        from fracpredict import cli
        from fracpredict.errors import NotPositiveDefinite

        def boom(*a, **k):
            raise NotPositiveDefinite(0)

        monkeypatch.setattr(cli, "build_exact_predictor", boom)
        assert main(["predict-exact", "--out", str(tmp_path)]) == 3

    def test_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main(["table", "7"])
        assert info.value.code == 2
