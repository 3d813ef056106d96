# Copyright (c) 2025 左岚. All rights reserved.
"""命令行接口测试"""

import json
import os

import numpy as np
import pytest

from rheoformer.checkpoint import load_checkpoint
from rheoformer.cli import cli
from rheoformer.dataset_io import read_dataset, write_dataset

from conftest import TINY_MODEL


@pytest.fixture
def run_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({
        "model": TINY_MODEL,
        "train": {"epochs": 1, "batch_size": 2, "lr": 3e-3, "condition_steps": 10},
    }), encoding="utf-8")
    return str(path)


@pytest.fixture
def flow_file(flow_dataset, tmp_path):
    path = str(tmp_path / "flow.rheo")
    write_dataset(path, flow_dataset)
    return path


class TestArguments:
    def test_unknown_flag(self, tmp_path):
        assert cli(["gen-rheometric", "--model", "tevp", "--n-samples", "1", "--out",
                    str(tmp_path / "x.rheo"), "--frobnicate"]) == 2

    def test_unknown_subcommand(self):
        assert cli(["transmogrify"]) == 2

    def test_missing_input_file(self, tmp_path):
        assert cli(["train", "--data", str(tmp_path / "absent.rheo"), "--out", str(tmp_path)]) == 2

    def test_unknown_model(self, tmp_path):
        assert cli(["gen-rheometric", "--model", "maxwell", "--n-samples", "1", "--out",
                    str(tmp_path / "x.rheo")]) == 2

    def test_garbage_dataset(self, tmp_path):
        garbage = tmp_path / "garbage.rheo"
        garbage.write_bytes(b"definitely not a dataset")
        assert cli(["train", "--data", str(garbage), "--out", str(tmp_path / "run")]) == 2

    def test_invalid_sweep(self, tmp_path):
        assert cli(["gen-flow1d", "--n-samples", "2", "--dpdx-min", "-0.5", "--dpdx-max", "-2.0",
                    "--out", str(tmp_path / "f.rheo")]) == 2

    def test_invalid_json_config(self, flow_file, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{model:", encoding="utf-8")
        assert cli(["train", "--data", flow_file, "--config", str(bad), "--out", str(tmp_path / "run")]) == 2


class TestGenerate:
    def test_rheometric(self, tmp_path):
        out = str(tmp_path / "tevp.rheo")
        assert cli(["gen-rheometric", "--model", "tevp", "--n-samples", "4", "--seed", "3", "--out", out]) == 0
        dataset = read_dataset(out)
        assert len(dataset) == 4
        assert dataset.output_channels == ["sigma_xy"]

    def test_seed_reproducible(self, tmp_path):
        args = ["gen-rheometric", "--model", "giesekus", "--n-samples", "2", "--seed", "9", "--out"]
        a, b = str(tmp_path / "a.rheo"), str(tmp_path / "b.rheo")
        assert cli(args + [a]) == 0
        assert cli(args + [b]) == 0
        with open(a, "rb") as fa, open(b, "rb") as fb:
            assert fa.read() == fb.read()

    def test_seed_from_environment(self, tmp_path, monkeypatch):
        explicit, implicit = str(tmp_path / "explicit.rheo"), str(tmp_path / "implicit.rheo")
        assert cli(["gen-rheometric", "--model", "tevp", "--n-samples", "2", "--seed", "21",
                    "--out", explicit]) == 0
        monkeypatch.setenv("RHEO_SEED", "21")
        assert cli(["gen-rheometric", "--model", "tevp", "--n-samples", "2", "--out", implicit]) == 0
        np.testing.assert_array_equal(read_dataset(implicit).stacked(), read_dataset(explicit).stacked())

    def test_flow(self, tmp_path):
        out = str(tmp_path / "flow.rheo")
        assert cli(["gen-flow1d", "--n-samples", "2", "--dpdx-min", "-2", "--dpdx-max", "-1", "--out", out]) == 0
        dataset = read_dataset(out)
        assert dataset.channels == ("u_x", "sigma_xy", "sigma_xx")
        assert dataset.n_steps == 26
        assert dataset.metadata_column("dpdx") == [-2.0, -1.0]


class TestTrainEvaluate:
    def test_train_predict_eval_plot(self, flow_file, run_config, tmp_path):
        run = tmp_path / "run"
        assert cli(["train", "--data", flow_file, "--config", run_config, "--seed", "4", "--out", str(run)]) == 0
        ckpt_path = str(run / "checkpoint.rheockpt")
        history = (run / "loss_history.csv").read_text(encoding="utf-8").splitlines()
        assert history[0] == "epoch,train_loss,val_loss,skipped"
        assert len(history) == 3
        assert load_checkpoint(ckpt_path).seed == 4

        report_path = tmp_path / "report.json"
        assert cli(["eval", "--checkpoint", ckpt_path, "--data", flow_file, "--condition-steps", "10",
                    "--report", str(report_path)]) == 0
        report = json.loads(report_path.read_text(encoding="utf-8"))
        assert report["n_predicted_steps"] == 16
        assert report["condition_steps"] == 10
        assert set(report["per_channel_l2"]) == {"u_x", "sigma_xy", "sigma_xx"}
        assert all(np.isfinite(v) for v in report["per_channel_l2"].values())
        assert os.path.exists(tmp_path / report["error_fields_path"])

        prediction = str(tmp_path / "pred.rheo")
        assert cli(["predict", "--checkpoint", ckpt_path, "--data", flow_file, "--out", prediction]) == 0
        assert read_dataset(prediction).n_steps == 16

        plots = tmp_path / "plots"
        assert cli(["plot", "--data", flow_file, "--what", "heatmap", "--out", str(plots)]) == 0
        assert cli(["plot", "--report", str(report_path), "--what", "error", "--out", str(plots)]) == 0
        written = os.listdir(plots)
        assert any(name.endswith(".svg") for name in written)
        assert any(name.endswith(".csv") for name in written)

    def test_train_seed_from_environment_with_config(self, flow_file, run_config, tmp_path, monkeypatch):
        explicit, implicit = tmp_path / "explicit", tmp_path / "implicit"
        assert cli(["train", "--data", flow_file, "--config", run_config, "--seed", "13",
                    "--out", str(explicit)]) == 0
        monkeypatch.setenv("RHEO_SEED", "13")
        assert cli(["train", "--data", flow_file, "--config", run_config, "--out", str(implicit)]) == 0
        assert load_checkpoint(str(implicit / "checkpoint.rheockpt")).seed == 13
        assert ((implicit / "checkpoint.rheockpt").read_bytes()
                == (explicit / "checkpoint.rheockpt").read_bytes())

    def test_eval_rejects_too_many_condition_steps(self, flow_file, run_config, tmp_path):
        run = tmp_path / "run"
        assert cli(["train", "--data", flow_file, "--config", run_config, "--out", str(run)]) == 0
        assert cli(["eval", "--checkpoint", str(run / "checkpoint.rheockpt"), "--data", flow_file,
                    "--condition-steps", "40", "--report", str(tmp_path / "r.json")]) == 2

    def test_plot_requires_report_for_errors(self, tmp_path):
        assert cli(["plot", "--what", "error", "--out", str(tmp_path / "p")]) == 2

    def test_plot_sample_out_of_range(self, flow_file, tmp_path):
        assert cli(["plot", "--data", flow_file, "--what", "series", "--sample", "99",
                    "--out", str(tmp_path / "p")]) == 2

    def test_seeded_training_is_bit_reproducible(self, flow_file, run_config, tmp_path):
        outputs = []
        for name in ("first", "second"):
            run = tmp_path / name
            assert cli(["train", "--data", flow_file, "--config", run_config, "--seed", "8", "--out", str(run)]) == 0
            report = tmp_path / f"{name}.json"
            assert cli(["eval", "--checkpoint", str(run / "checkpoint.rheockpt"), "--data", flow_file,
                        "--report", str(report)]) == 0
            payload = json.loads(report.read_text(encoding="utf-8"))
            payload.pop("wall_time")
            payload.pop("error_fields_path")
            outputs.append(((run / "checkpoint.rheockpt").read_bytes(),
                            (run / "loss_history.csv").read_bytes(), payload))
        assert outputs[0] == outputs[1]
