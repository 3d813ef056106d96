# Copyright (c) 2025 左岚. All rights reserved.
"""协方差分解缓存管理器

本模块缓存高斯随机场协方差矩阵的 Cholesky 因子，避免对相同网格重复分解。
键为不可变的 GrfConfig，命中时直接返回只读的下三角因子。
"""

import logging
from dataclasses import dataclass
from threading import Lock
from typing import Any, Callable, Dict, Hashable, Optional

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class CacheEntry:
    """缓存条目数据类"""
    data: np.ndarray
    access_count: int = 0

    def access(self) -> np.ndarray:
        """访问缓存数据，更新访问计数"""
        self.access_count += 1
        return self.data


class FactorCache:
    """线程安全的分解因子缓存"""

    def __init__(self, max_entries: int = 32):
        """初始化缓存管理器

        Args:
            max_entries: 最大缓存条目数，默认32
        """
        self.max_entries = max_entries
        self._cache: Dict[Hashable, CacheEntry] = {}
        self._lock = Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key: Hashable) -> Optional[np.ndarray]:
        with self._lock:
            entry = self._cache.get(key)
            if entry is None:
                self.misses += 1
                logger.debug(f"分解缓存未命中: {key}")
                return None
            self.hits += 1
            return entry.access()

    def set(self, key: Hashable, factor: np.ndarray) -> None:
        with self._lock:
            self._store(key, factor)

    def get_or_compute(self, key: Hashable, compute: Callable[[], np.ndarray]) -> np.ndarray:
        """命中则返回缓存因子，否则计算并写入

        一次调用只计一次命中或一次未命中。计算在锁外进行，并发未命中时可能重复计算，
        此时保留先写入的因子，保证所有调用方拿到同一个数组。
        """
        cached = self.get(key)
        if cached is not None:
            return cached
        factor = compute()
        with self._lock:
            entry = self._cache.get(key)
            if entry is None:
                entry = self._store(key, factor)
            return entry.access()

    def _store(self, key: Hashable, factor: np.ndarray) -> CacheEntry:
        factor = np.array(factor, dtype=np.float64)
        factor.setflags(write=False)
        # 如果缓存已满，清理最少使用的条目
        if key not in self._cache and len(self._cache) >= self.max_entries:
            self._evict_lfu()
        entry = CacheEntry(data=factor)
        self._cache[key] = entry
        return entry

    def clear(self) -> None:
        with self._lock:
            count = len(self._cache)
            self._cache.clear()
            self.hits = self.misses = 0
        logger.debug(f"已清空分解缓存 ({count} 个条目)")

    def _evict_lfu(self) -> None:
        """清理访问次数最少的条目"""
        if not self._cache:
            return
        victim = min(self._cache, key=lambda k: self._cache[k].access_count)
        del self._cache[victim]
        logger.debug(f"分解缓存淘汰: {victim}")

    def get_stats(self) -> Dict[str, Any]:
        """获取缓存统计信息"""
        with self._lock:
            return {
                "total_entries": len(self._cache),
                "max_entries": self.max_entries,
                "hits": self.hits,
                "misses": self.misses,
                "total_accesses": sum(entry.access_count for entry in self._cache.values()),
            }


# 全局缓存实例
_factor_cache: Optional[FactorCache] = None
_factor_cache_lock = Lock()


def get_factor_cache() -> FactorCache:
    """获取全局分解缓存实例"""
    global _factor_cache
    if _factor_cache is None:
        with _factor_cache_lock:
            if _factor_cache is None:
                _factor_cache = FactorCache()
    return _factor_cache
