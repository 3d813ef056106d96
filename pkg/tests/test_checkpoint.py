# Copyright (c) 2025 左岚. All rights reserved.
"""检查点存取与续跑测试"""

import json
import struct
from dataclasses import replace

import numpy as np
import pytest

from rheoformer.checkpoint import MAGIC, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from rheoformer.model import RheOFormer
from rheoformer.optim import TrainConfig
from rheoformer.rheo_types import CheckpointFormatError
from rheoformer.training import fit, model_config_for, predict_arrays

from conftest import TINY_MODEL


@pytest.fixture(scope="module")
def trained(flow_dataset):
    config = TrainConfig(lr=3e-3, batch_size=2, epochs=2, seed=5, condition_steps=10)
    model = RheOFormer(model_config_for(flow_dataset, 10, seed=3, **TINY_MODEL))
    return fit(model, flow_dataset, config)


class TestRoundTrip:
    def test_resave_is_byte_identical(self, trained, tmp_path):
        first = tmp_path / "a.rheockpt"
        second = tmp_path / "b.rheockpt"
        save_checkpoint(str(first), trained.checkpoint)
        save_checkpoint(str(second), load_checkpoint(str(first)))
        assert first.read_bytes() == second.read_bytes()

    def test_loaded_model_predicts_identically(self, trained, flow_dataset, tmp_path):
        path = str(tmp_path / "c.rheockpt")
        save_checkpoint(path, trained.checkpoint)
        loaded = load_checkpoint(path)
        assert loaded.model_config == trained.checkpoint.model_config
        assert loaded.train_config == trained.checkpoint.train_config
        assert loaded.seed == 5
        assert loaded.metadata == trained.checkpoint.metadata
        expected = predict_arrays(trained.checkpoint.build_model(), trained.checkpoint.normalizer, flow_dataset, 10)
        actual = predict_arrays(loaded.build_model(), loaded.normalizer, flow_dataset, 10)
        np.testing.assert_array_equal(actual, expected)

    def test_training_state_restored(self, trained):
        original = trained.checkpoint.training_state
        restored = decode_checkpoint(encode_checkpoint(trained.checkpoint)).training_state
        assert restored.epoch == original.epoch == 2
        assert restored.adam.step == original.adam.step
        assert restored.history == original.history
        assert restored.best_epoch == original.best_epoch
        for name, array in original.adam.m.items():
            np.testing.assert_array_equal(restored.adam.m[name], array)
            np.testing.assert_array_equal(restored.adam.v[name], original.adam.v[name])
            np.testing.assert_array_equal(restored.weights[name], original.weights[name])

    def test_resume_from_disk_matches_uninterrupted(self, trained, flow_dataset, tmp_path):
        path = str(tmp_path / "resume.rheockpt")
        save_checkpoint(path, trained.checkpoint)
        loaded = load_checkpoint(path)
        config3 = replace(loaded.train_config, epochs=3)

        def fresh():
            return RheOFormer(model_config_for(flow_dataset, 10, seed=3, **TINY_MODEL))

        straight = fit(fresh(), flow_dataset, config3)
        resumed = fit(fresh(), flow_dataset, config3, resume=loaded.training_state)
        assert resumed.history == straight.history
        for name, array in straight.checkpoint.weights.items():
            np.testing.assert_array_equal(resumed.checkpoint.weights[name], array)

    def test_checkpoint_without_training_state(self, trained):
        bare = replace(trained.checkpoint, training_state=None)
        restored = decode_checkpoint(encode_checkpoint(bare))
        assert restored.training_state is None
        assert sorted(restored.weights) == sorted(bare.weights)


class TestCorruption:
    def test_bad_magic(self, trained):
        raw = encode_checkpoint(trained.checkpoint)
        with pytest.raises(CheckpointFormatError) as info:
            decode_checkpoint(b"X" + raw[1:])
        assert info.value.code == "E_CHECKPOINT"

    def test_truncated_payload(self, trained):
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(encode_checkpoint(trained.checkpoint)[:-16])

    def test_truncated_length_field(self):
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(MAGIC + b"\x01")

    def test_garbage_header(self):
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(MAGIC + struct.pack("<Q", 4) + b"\xff\xfe{]")

    def test_duplicate_array_names(self, trained):
        raw = encode_checkpoint(trained.checkpoint)
        (length,) = struct.unpack_from("<Q", raw, len(MAGIC))
        offset = len(MAGIC) + 8
        header = json.loads(raw[offset:offset + length])
        header["arrays"].append(dict(header["arrays"][0]))
        encoded = json.dumps(header).encode("utf-8")
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(MAGIC + struct.pack("<Q", len(encoded)) + encoded + raw[offset + length:])

    def test_weights_must_match_architecture(self, trained, flow_dataset):
        weights = dict(trained.checkpoint.weights)
        weights.pop(sorted(weights)[0])
        with pytest.raises(CheckpointFormatError):
            replace(trained.checkpoint, weights=weights).build_model()
