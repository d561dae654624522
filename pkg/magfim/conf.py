"""工具默认参数：优先取 Django settings 中的 MAGFIM_* 配置"""

import os

from django.conf import settings


DEFAULTS = {
    'MAGFIM_B_T': 7.9666e-2,
    'MAGFIM_SIGMA_UT': 10.0,
    'MAGFIM_B_CLIP_UT': 1900.0,
    'MAGFIM_SWEEP_SAMPLES': 200000,
    'MAGFIM_THREADS': os.cpu_count() or 1,
    'MAGFIM_CACHE_TIMEOUT': None,
    'MAGFIM_OUTPUT_DIR': 'outputs',
}


def get_setting(name: str):
    """读取 MAGFIM_* 配置；settings 未配置时（纯库调用）退回内置默认值"""
    if not settings.configured:
        return DEFAULTS[name]
    return getattr(settings, name, DEFAULTS[name])
