"""
领域异常定义
每个异常携带命令行退出码：2 参数错误，3 文件错误，4 数值失败
"""

from typing import Optional


EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class MagfimError(Exception):
    """所有领域异常的基类"""

    exit_code = EXIT_NUMERIC


class InvariantViolation(MagfimError, ValueError):
    """输入违反了类型不变量（重复传感器、空布局、越界参数等）"""

    exit_code = EXIT_USAGE


class ParseError(MagfimError):
    """文件解析失败，附带行号/字段上下文"""

    exit_code = EXIT_IO

    def __init__(self, message: str, *, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        context = []
        if line is not None:
            context.append(f"line {line}")
        if field is not None:
            context.append(f"field '{field}'")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)


class DegenerateDistance(MagfimError):
    """传感器与磁铁中心重合，偶极子模型无意义"""

    def __init__(self, sensor_index: int, distance: float, *, record_index: Optional[int] = None):
        self.sensor_index = sensor_index
        self.distance = distance
        self.record_index = record_index
        message = f"sensor {sensor_index} is {distance:.3e} m from the magnet center"
        if record_index is not None:
            message = f"{message} (record {record_index}, retries exhausted)"
        super().__init__(message)


class NonFinite(MagfimError):
    """输入中出现 NaN 或无穷"""


class AllDegenerate(MagfimError):
    """所有采样位姿的 FIM 都是奇异的"""


class InsufficientCandidates(MagfimError):
    """候选点数量不足以放置要求的传感器数"""

    exit_code = EXIT_USAGE


class OffShell(MagfimError):
    """传感器不在立方体壳的任何一个面上"""

    exit_code = EXIT_USAGE


class SingularNormalEquations(MagfimError):
    """LM 阻尼法方程在正则化之后仍然奇异"""
