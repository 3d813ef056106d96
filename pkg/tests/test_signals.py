# Copyright (c) 2025 左岚. All rights reserved.
"""加载信号与分解缓存测试"""

import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from rheoformer import factor_cache
from rheoformer.factor_cache import FactorCache, get_factor_cache
from rheoformer.rheo_types import ConfigurationError, FlowKind
from rheoformer.signals import (
    GrfConfig,
    homogeneous_flow,
    mixed_flow,
    oscillatory_shear,
    rate_channels,
    sample_grf,
    squared_exponential_correlation,
)


class TestGrf:
    def test_same_seed_is_bitwise_identical(self):
        config = GrfConfig(n_points=51, t_end=5.0)
        np.testing.assert_array_equal(sample_grf(config, 7), sample_grf(config, 7))
        assert not np.array_equal(sample_grf(config, 7), sample_grf(config, 8))

    def test_zero_amplitude_gives_zeros(self):
        np.testing.assert_array_equal(sample_grf(GrfConfig(n_points=11, t_end=1.0, amplitude=0.0), 3), 0.0)

    def test_default_length_scale(self):
        config = GrfConfig(n_points=11, t_end=4.0)
        assert config.correlation_time == pytest.approx(0.4)
        assert config.dt == pytest.approx(0.4)
        assert GrfConfig(n_points=11, t_end=4.0, length_scale=1.5).correlation_time == 1.5

    def test_sample_statistics_match_kernel(self):
        config = GrfConfig(n_points=21, t_end=2.0, amplitude=1.5)
        draws = np.stack([sample_grf(config, seed) for seed in range(10_000)])
        index, lag = 10, 2
        variance = draws[:, index].var()
        assert abs(variance - 1.5 ** 2) < 0.05 * 1.5 ** 2
        kernel = squared_exponential_correlation(config.grid, config.correlation_time)
        correlation = np.corrcoef(draws[:, index], draws[:, index + lag])[0, 1]
        assert abs(correlation - kernel[index, index + lag]) < 0.05

    def test_factorization_failure_is_configuration_error(self):
        config = GrfConfig(n_points=400, t_end=1.0, length_scale=1.0, jitter=1e-300)
        with pytest.raises(ConfigurationError, match="jitter"):
            sample_grf(config, 0)

    @pytest.mark.parametrize("kwargs", [
        {"n_points": 1, "t_end": 1.0},
        {"n_points": 10, "t_end": 0.0},
        {"n_points": 10, "t_end": 1.0, "amplitude": -1.0},
        {"n_points": 10, "t_end": 1.0, "jitter": 0.0},
    ])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ConfigurationError):
            sample_grf(GrfConfig(**kwargs), 0)

    def test_from_dict_ignores_unknown(self):
        config = GrfConfig.from_dict({"n_points": 5, "t_end": 1.0, "kernel": "matern"})
        assert config == GrfConfig(n_points=5, t_end=1.0)
        assert GrfConfig.from_dict(config.to_dict()) == config


class TestDeterministicFlows:
    def test_oscillatory_shear(self):
        grid = np.linspace(0.0, 2 * np.pi, 9)
        rate, strain = oscillatory_shear(2.0, 1.0, grid)
        np.testing.assert_allclose(rate, 2.0 * np.cos(grid))
        np.testing.assert_allclose(strain, 2.0 * np.sin(grid))
        with pytest.raises(ConfigurationError):
            oscillatory_shear(1.0, 0.0, grid)

    def test_homogeneous_flows(self):
        grid = np.linspace(0.0, 1.0, 4)
        shear = homogeneous_flow(FlowKind.SIMPLE_SHEAR, 3.0, grid)
        extension = homogeneous_flow("planar_extension", 0.5, grid)
        assert shear.shape == extension.shape == (4, 2, 2)
        np.testing.assert_array_equal(shear[2], [[0.0, 3.0], [0.0, 0.0]])
        np.testing.assert_array_equal(extension[0], [[0.5, 0.0], [0.0, -0.5]])

    def test_mixed_flow_is_traceless(self, rng):
        L = mixed_flow(rng.normal(size=7), rng.normal(size=7))
        np.testing.assert_allclose(np.trace(L, axis1=1, axis2=2), 0.0)
        channels = rate_channels(L)
        np.testing.assert_allclose(channels["gamma_dot_xx"], -channels["gamma_dot_yy"])
        np.testing.assert_array_equal(channels["gamma_dot_xy"], L[:, 0, 1])

    def test_mixed_flow_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            mixed_flow(np.zeros(3), np.zeros(4))


class TestFactorCache:
    def test_compute_once_then_hit(self):
        cache = FactorCache()
        calls = []

        def compute():
            calls.append(1)
            return np.eye(3)

        first = cache.get_or_compute("k", compute)
        second = cache.get_or_compute("k", compute)
        assert len(calls) == 1
        assert first is second
        assert not first.flags.writeable
        stats = cache.get_stats()
        assert stats["total_entries"] == 1
        assert stats["hits"] == 1 and stats["misses"] == 1

    def test_each_lookup_counted_once(self):
        cache = FactorCache()
        for _ in range(4):
            cache.get_or_compute("k", lambda: np.eye(2))
        cache.get_or_compute("other", lambda: np.eye(2))
        stats = cache.get_stats()
        assert stats["misses"] == 2
        assert stats["hits"] == 3
        assert stats["hits"] + stats["misses"] == 5

    def test_global_cache_created_once_across_threads(self, monkeypatch):
        monkeypatch.setattr(factor_cache, "_factor_cache", None)
        barrier = threading.Barrier(8)

        def fetch():
            barrier.wait()
            return get_factor_cache()

        with ThreadPoolExecutor(max_workers=8) as pool:
            caches = list(pool.map(lambda _: fetch(), range(8)))
        assert all(c is caches[0] for c in caches)
        assert factor_cache._factor_cache is caches[0]

    def test_least_used_entry_evicted(self):
        cache = FactorCache(max_entries=2)
        cache.set("a", np.zeros(1))
        cache.set("b", np.ones(1))
        cache.get("a")
        cache.set("c", np.full(1, 2.0))
        assert cache.get("b") is None
        assert cache.get("a") is not None and cache.get("c") is not None

    def test_clear(self):
        cache = FactorCache()
        cache.set("a", np.zeros(2))
        cache.clear()
        assert cache.get_stats()["total_entries"] == 0
        assert cache.get("a") is None

    def test_grf_reuses_global_factor(self):
        cache = get_factor_cache()
        config = GrfConfig(n_points=17, t_end=3.0, length_scale=0.7)
        sample_grf(config, 0)
        hits = cache.hits
        sample_grf(config, 1)
        assert cache.hits == hits + 1
