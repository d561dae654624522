"""magfim：磁强计阵列的可观测性分析、布局优化与定位验证工具"""

__version__ = '1.0.0'
