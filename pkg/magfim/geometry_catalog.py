"""
传感器阵列几何目录
构造三种基准布局（平面、单分层、交错分层），以及任意用户布局的校验和读写
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, ValidationError
from scipy.spatial.distance import pdist

from .exceptions import InvariantViolation, ParseError

logger = logging.getLogger(__name__)


APERTURE_HALF = 0.050  # m，100 × 100 mm² 孔径
GRID_COORDS = (-APERTURE_HALF, -APERTURE_HALF / 3.0, APERTURE_HALF / 3.0, APERTURE_HALF)
GRID_SPACING = 2.0 * APERTURE_HALF / 3.0
LOWER_Z = 0.020
UPPER_Z = 0.180
BASE_Z = 0.000
MIN_SEPARATION = 1e-6
OUTER_INDICES = (0, 3)
COLUMN_AXES = ('x', 'y')


@dataclass(frozen=True, eq=False)
class SensorLayout:
    """有序的 N 个三轴传感器位置（m）"""

    name: str
    positions: NDArray[np.float64]

    def __post_init__(self):
        positions = np.array(self.positions, dtype=np.float64)
        if positions.size == 0:
            raise InvariantViolation(f"layout '{self.name}' has no sensors")
        positions = positions.reshape(-1, 3)
        if not np.all(np.isfinite(positions)):
            raise InvariantViolation(f"layout '{self.name}' contains non-finite coordinates")
        if len(positions) > 1:
            separations = pdist(positions)
            k = int(np.argmin(separations))
            if separations[k] < MIN_SEPARATION:
                i, j = _condensed_pair(k, len(positions))
                raise InvariantViolation(
                    f"layout '{self.name}': sensors {i} and {j} are closer than {MIN_SEPARATION} m"
                )
        positions.setflags(write=False)
        object.__setattr__(self, 'positions', positions)

    def __len__(self) -> int:
        return len(self.positions)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SensorLayout):
            return NotImplemented
        return self.name == other.name and np.array_equal(self.positions, other.positions)

    __hash__ = None

    @property
    def n_sensors(self) -> int:
        return len(self.positions)

    @property
    def z_levels(self) -> List[float]:
        return sorted(set(float(z) for z in self.positions[:, 2]))

    def with_sensor(self, position: ArrayLike, name: str = None) -> 'SensorLayout':
        """追加一个传感器，返回新布局"""
        extra = np.asarray(position, dtype=np.float64).reshape(1, 3)
        return SensorLayout(name=name or self.name, positions=np.vstack([self.positions, extra]))

    def subset(self, indices: Sequence[int], name: str) -> 'SensorLayout':
        return SensorLayout(name=name, positions=self.positions[list(indices)])

    def to_document(self) -> Dict:
        return {
            'name': self.name,
            'positions_m': [[float(c) for c in row] for row in self.positions],
        }


def _condensed_pair(k: int, n: int) -> Tuple[int, int]:
    """pdist 压缩下标还原为 (i, j)"""
    i = 0
    while k >= n - 1 - i:
        k -= n - 1 - i
        i += 1
    return i, i + 1 + k


def _grid_layout(name: str, column_axis: str, outer_z: float, inner_z: float) -> SensorLayout:
    """
    4×4 网格，外侧两列与内侧两列分别放在不同高度

    “列”沿 column_axis 编号：column_axis='x' 时外列为 x = ±50 mm。
    """
    if column_axis not in COLUMN_AXES:
        raise InvariantViolation(f"column_axis must be one of {COLUMN_AXES}, got '{column_axis}'")
    positions = []
    for j, y in enumerate(GRID_COORDS):
        for i, x in enumerate(GRID_COORDS):
            column = i if column_axis == 'x' else j
            z = outer_z if column in OUTER_INDICES else inner_z
            positions.append((x, y, z))
    return SensorLayout(name=name, positions=np.array(positions))


def build_planar(column_axis: str = 'x') -> SensorLayout:
    """平面基线阵列：16 个传感器全部位于 Z = 20 mm"""
    return _grid_layout('planar', column_axis, LOWER_Z, LOWER_Z)


def build_single_split(column_axis: str = 'x') -> SensorLayout:
    """单分层阵列：外列 Z = 20 mm，内列 Z = 0 mm"""
    return _grid_layout('single-split', column_axis, LOWER_Z, BASE_Z)


def build_staggered_split(column_axis: str = 'x') -> SensorLayout:
    """交错分层阵列：外列 Z = 20 mm，内列 Z = 180 mm"""
    return _grid_layout('staggered', column_axis, LOWER_Z, UPPER_Z)


def build_dual_layer() -> SensorLayout:
    """双层硬件的全部 32 个传感器位置（Z = 20 mm 与 Z = 180 mm）"""
    lower = _grid_layout('lower', 'x', LOWER_Z, LOWER_Z).positions
    upper = _grid_layout('upper', 'x', UPPER_Z, UPPER_Z).positions
    return SensorLayout(name='dual-layer', positions=np.vstack([lower, upper]))


BUILDERS: Dict[str, Callable[..., SensorLayout]] = {
    'planar': build_planar,
    'single-split': build_single_split,
    'staggered': build_staggered_split,
}


def build_layout(name: str, column_axis: str = 'x') -> SensorLayout:
    """按名称构造基准布局"""
    try:
        builder = BUILDERS[name]
    except KeyError:
        raise InvariantViolation(
            f"unknown layout '{name}', expected one of {sorted(BUILDERS)}"
        ) from None
    return builder(column_axis=column_axis)


def layout_from_dual_layer(name: str, column_axis: str = 'x') -> SensorLayout:
    """
    从 32 通道双层硬件中挑出与基准布局对应的 16 个传感器

    返回的布局与 build_layout(name) 位置相同，顺序一致，名称加 "@dual-layer" 后缀；
    硬件上没有的高度（如单分层的 Z = 0）抛 InvariantViolation。
    """
    hardware = build_dual_layer()
    target = build_layout(name, column_axis=column_axis)
    indices = []
    for position in target.positions:
        matches = np.flatnonzero(np.all(np.abs(hardware.positions - position) < MIN_SEPARATION, axis=1))
        if len(matches) == 0:
            raise InvariantViolation(
                f"layout '{name}' uses position {position.tolist()} not present on the dual-layer hardware"
            )
        indices.append(int(matches[0]))
    return hardware.subset(indices, name=f'{name}@dual-layer')


# ---------------------------------------------------------------------------
# JSON 读写：{"name": str, "positions_m": [[x, y, z], ...]}
# ---------------------------------------------------------------------------

class LayoutDocument(BaseModel):
    model_config = ConfigDict(extra='forbid')

    name: str
    positions_m: List[Tuple[float, float, float]]


def layout_from_document(data: Dict) -> SensorLayout:
    try:
        document = LayoutDocument.model_validate(data)
    except ValidationError as exc:
        error = exc.errors()[0]
        location = '.'.join(str(part) for part in error['loc'])
        raise ParseError(f"invalid layout document: {error['msg']}", field=location) from exc
    return SensorLayout(name=document.name, positions=np.array(document.positions_m, dtype=np.float64))


def save_layout(layout: SensorLayout, path: Union[str, Path]) -> None:
    """写出布局 JSON；浮点数用最短可逆十进制表示，读回后逐位一致"""
    path = Path(path)
    path.write_text(json.dumps(layout.to_document(), indent=2, ensure_ascii=False), encoding='utf-8')
    logger.debug(f"Saved layout '{layout.name}' ({layout.n_sensors} sensors) to {path}")


def load_layout(path: Union[str, Path]) -> SensorLayout:
    """读取布局 JSON；格式错误抛 ParseError，重复传感器/空布局抛 InvariantViolation"""
    path = Path(path)
    text = path.read_text(encoding='utf-8')
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: layout document must be a JSON object", line=1)
    return layout_from_document(data)


def resolve_layout(spec: str, column_axis: str = 'x') -> SensorLayout:
    """命令行的 --layout 参数：内置名称或 JSON 文件路径"""
    if spec in BUILDERS:
        return build_layout(spec, column_axis=column_axis)
    return load_layout(spec)
