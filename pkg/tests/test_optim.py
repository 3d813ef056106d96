# Copyright (c) 2025 左岚. All rights reserved.
"""Adam 更新、梯度裁剪与归一化测试"""

import numpy as np
import pytest

from rheoformer.optim import AdamState, Normalizer, TrainConfig, adam_step, clip_by_global_norm
from rheoformer.rheo_types import ConfigurationError


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        config = TrainConfig(lr=0.1, clip_norm=100.0)
        weights = {"w": np.array([1.0, -2.0])}
        grads = {"w": np.array([0.5, -3.0])}
        new_weights, state = adam_step(weights, grads, AdamState(), config)
        # 偏差修正后首步更新量为 lr·sign(g)
        np.testing.assert_allclose(new_weights["w"], [0.9, -1.9], atol=1e-6)
        assert state.step == 1
        np.testing.assert_array_equal(weights["w"], [1.0, -2.0])

    def test_non_finite_gradient_skips_step(self):
        config = TrainConfig()
        weights = {"w": np.ones(3)}
        state = AdamState(step=4, m={"w": np.full(3, 0.1)}, v={"w": np.full(3, 0.2)})
        new_weights, new_state = adam_step(weights, {"w": np.array([1.0, np.nan, 0.0])}, state, config)
        np.testing.assert_array_equal(new_weights["w"], weights["w"])
        assert new_state.step == 4
        assert new_state.skipped == 1
        np.testing.assert_array_equal(new_state.m["w"], state.m["w"])

    def test_names_must_match(self):
        with pytest.raises(ConfigurationError):
            adam_step({"a": np.zeros(1)}, {"b": np.zeros(1)}, AdamState(), TrainConfig())

    def test_clipping_scales_to_max_norm(self):
        grads = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
        clipped, norm = clip_by_global_norm(grads, 1.0)
        assert norm == pytest.approx(5.0)
        np.testing.assert_allclose(clipped["a"], [0.6, 0.0])
        np.testing.assert_allclose(clipped["b"], [[0.8]])
        same, _ = clip_by_global_norm(grads, 10.0)
        assert same is grads

    def test_minimizes_quadratic(self):
        config = TrainConfig(lr=0.05)
        weights, state = {"w": np.array([2.0, -1.5])}, AdamState()
        for _ in range(500):
            weights, state = adam_step(weights, {"w": 2.0 * weights["w"]}, state, config)
        assert np.max(np.abs(weights["w"])) < 0.2


class TestNormalizer:
    def test_round_trip(self, rng):
        fields = rng.normal(3.0, 2.0, size=(5, 7, 3))
        norm = Normalizer.fit(fields, rng.uniform(size=(7, 1)), ("a", "b", "c"))
        np.testing.assert_allclose(norm.denormalize(norm.normalize(fields)), fields, atol=1e-12)
        flat = norm.normalize(fields).reshape(-1, 3)
        np.testing.assert_allclose(flat.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(flat.std(axis=0), 1.0, atol=1e-12)

    def test_constant_channel_is_not_scaled(self):
        fields = np.stack([np.zeros(4), np.arange(4.0)], axis=1)
        norm = Normalizer.fit(fields, np.arange(4.0)[:, None], ("zero", "ramp"))
        assert norm.std[0] == 1.0
        np.testing.assert_array_equal(norm.normalize(fields)[:, 0], 0.0)

    def test_channel_subset(self, rng):
        fields = rng.normal(size=(10, 3))
        norm = Normalizer.fit(fields, np.zeros((10, 1)), ("a", "b", "c"))
        sub = norm.normalize(fields[:, [2, 0]], ["c", "a"])
        np.testing.assert_allclose(sub, norm.normalize(fields)[:, [2, 0]])

    def test_coordinates_scaled_to_unit_interval(self):
        norm = Normalizer.fit(np.zeros((3, 1)), np.array([[2.0], [3.0], [6.0]]), ("u",))
        np.testing.assert_allclose(norm.scale_coords([[2.0], [6.0]]), [[0.0], [1.0]])

    def test_arrays_round_trip(self, rng):
        norm = Normalizer.fit(rng.normal(size=(6, 2)), rng.normal(size=(6, 1)), ("a", "b"))
        again = Normalizer.from_arrays(norm.channels, norm.arrays())
        np.testing.assert_array_equal(again.mean, norm.mean)
        assert again.channels == ("a", "b")


class TestTrainConfig:
    @pytest.mark.parametrize("kwargs", [
        {"lr": 0.0},
        {"batch_size": 0},
        {"condition_steps": 0},
        {"beta1": 1.0},
        {"train_fraction": 0.9, "val_fraction": 0.2},
        {"normalization": "global"},
        {"loss_reduction": "max"},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            TrainConfig(**kwargs).validate()

    def test_from_dict_ignores_unknown(self):
        config = TrainConfig.from_dict({"lr": 0.01, "scheduler": "cosine"})
        assert config.lr == 0.01
        assert TrainConfig.from_dict(config.to_dict()) == config
