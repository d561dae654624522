"""
性能监控、缓存管理和并行执行工具
"""

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from functools import wraps
from typing import Any, Callable, Iterable, List, Optional, TypeVar

from django.core.cache import cache

from .conf import get_setting

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


def resolve_threads(threads: Optional[int] = None) -> int:
    """线程数：显式参数 > MAGFIM_THREADS 配置"""
    if threads is None or threads <= 0:
        threads = int(get_setting('MAGFIM_THREADS'))
    return max(1, int(threads))


def parallel_map(func: Callable[[T], R], items: Iterable[T], threads: Optional[int] = 1) -> List[R]:
    """
    有序并行 map

    结果顺序与输入一致，任何线程数下结果相同；threads 为 None 或 1 时顺序执行。
    """
    items = list(items)
    workers = 1 if threads is None else max(1, int(threads))
    if workers == 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as executor:
        return list(executor.map(func, items))


class PerformanceMonitor:
    """性能监控器"""

    @staticmethod
    def measure_time(endpoint: str = ''):
        """测量函数执行时间的装饰器，结果写入日志"""
        def decorator(func: Callable) -> Callable:
            @wraps(func)
            def wrapper(*args, **kwargs):
                start_time = time.perf_counter()
                success = True
                try:
                    return func(*args, **kwargs)
                except Exception:
                    success = False
                    raise
                finally:
                    execution_time = time.perf_counter() - start_time
                    logger.info(
                        f"{endpoint or func.__name__} finished in {execution_time:.3f}s "
                        f"(success={success})"
                    )
            return wrapper
        return decorator


class CacheManager:
    """缓存管理器：缓存确定性的昂贵计算结果（如基线扫描）"""

    @staticmethod
    def get_cache_key(prefix: str, payload: Any) -> str:
        """由 JSON 可序列化的输入生成缓存键"""
        key_data = json.dumps(payload, sort_keys=True, default=str)
        return f"{prefix}:{hashlib.md5(key_data.encode()).hexdigest()}"

    @staticmethod
    def get_or_set_cache(cache_key: str, fetch_func: Callable[[], R], timeout: Optional[int] = None) -> R:
        """获取或设置缓存；缓存后端不可用时直接计算"""
        timeout = timeout if timeout is not None else get_setting('MAGFIM_CACHE_TIMEOUT')
        try:
            cached_result = cache.get(cache_key)
        except Exception as exc:
            logger.warning(f"Cache backend unavailable, computing directly: {exc}")
            return fetch_func()

        if cached_result is not None:
            logger.debug(f"Cache hit for key: {cache_key}")
            return cached_result

        logger.debug(f"Cache miss for key: {cache_key}")
        result = fetch_func()
        try:
            cache.set(cache_key, result, timeout)
        except Exception as exc:
            logger.warning(f"Failed to store cache entry {cache_key}: {exc}")
        return result
