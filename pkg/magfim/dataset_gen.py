"""
硬件感知的合成数据集生成
LHS 位姿采样 → 偶极子磁场仿真 → ±b_clip 饱和截断 → 噪声注入 → CSV/二进制文件
"""

import logging
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, List, Literal, Optional, Union

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from .dipole_core import (
    FieldVector,
    MagnetModel,
    Pose5,
    field_array,
    saturate,
)
from .exceptions import DegenerateDistance, InvariantViolation, ParseError
from .geometry_catalog import SensorLayout
from .observability import WorkspaceSpec, lhs_sample

logger = logging.getLogger(__name__)


DEFAULT_B_CLIP = 1900.0  # µT
DATASET_WORKSPACE = WorkspaceSpec(z_range=(0.045, 0.155))
MAX_RESAMPLE_ATTEMPTS = 16
CSV_CHUNK_ROWS = 10000
FLOAT_FORMAT = '%.17g'

BINARY_MAGIC = b'MAGD'
BINARY_VERSION = 1
BINARY_HEADER = struct.Struct('<4sHHQ')


@dataclass(frozen=True)
class NoiseMode:
    """噪声模式：none | absolute(σ µT) | relative(信号幅值的比例)"""

    kind: Literal['none', 'absolute', 'relative'] = 'none'
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ('none', 'absolute', 'relative'):
            raise InvariantViolation(f"unknown noise mode '{self.kind}'")
        if not math.isfinite(self.value) or self.value < 0:
            raise InvariantViolation(f"noise level must be finite and non-negative, got {self.value}")
        if self.kind == 'relative' and self.value >= 1.0:
            raise InvariantViolation(f"relative noise fraction must lie in [0, 1), got {self.value}")

    @classmethod
    def parse(cls, text: str) -> 'NoiseMode':
        """解析 'none'、'absolute:10'、'relative:0.02'"""
        text = text.strip().lower()
        if text == 'none':
            return cls()
        kind, sep, value = text.partition(':')
        if not sep or kind not in ('absolute', 'relative'):
            raise InvariantViolation(f"noise mode must be none|absolute:<uT>|relative:<fraction>, got '{text}'")
        try:
            level = float(value)
        except ValueError:
            raise InvariantViolation(f"invalid noise level '{value}'") from None
        return cls(kind=kind, value=level)

    @property
    def label(self) -> str:
        return 'none' if self.kind == 'none' else f"{self.kind}:{self.value:g}"

    def __str__(self) -> str:
        return self.label

    @property
    def is_silent(self) -> bool:
        return self.kind == 'none' or self.value == 0.0

    def apply(self, signal: NDArray, rng: np.random.Generator, amplitude: Optional[NDArray] = None) -> NDArray:
        """加噪；相对模式的标准差取 amplitude（缺省为 signal 本身）的幅值"""
        if self.is_silent:
            return signal.copy()
        if self.kind == 'absolute':
            scale = np.full(signal.shape, self.value)
        else:
            scale = self.value * np.abs(signal if amplitude is None else amplitude)
        return signal + scale * rng.standard_normal(signal.shape)


@dataclass(frozen=True, eq=False)
class DatasetSpec:
    workspace: WorkspaceSpec
    layout: SensorLayout
    model: MagnetModel = field(default_factory=MagnetModel)
    b_clip: float = DEFAULT_B_CLIP
    noise_mode: NoiseMode = field(default_factory=NoiseMode)
    count: int = 100000
    seed: int = 0
    clip_before_noise: bool = True

    def __post_init__(self):
        if self.count < 1:
            raise InvariantViolation(f"count must be >= 1, got {self.count}")
        if not self.b_clip > 0:
            raise InvariantViolation(f"b_clip must be positive, got {self.b_clip}")


@dataclass(frozen=True, eq=False)
class DatasetRecord:
    """单条样本：真值位姿、方向向量、截断+加噪后的观测"""

    pose: Pose5
    n: NDArray[np.float64]
    fields: FieldVector
    index: int = 0

    @property
    def sat_mask(self) -> NDArray[np.bool_]:
        return self.fields.sat_mask


@dataclass
class GenerationStats:
    n_generated: int = 0
    n_resampled: int = 0


def simulate_record(
    pose: Pose5,
    layout: SensorLayout,
    model: MagnetModel,
    b_clip: float,
    noise_mode: NoiseMode,
    rng: np.random.Generator,
    clip_before_noise: bool = True,
) -> FieldVector:
    """
    单条观测的生成管线

    默认先截断后加噪：掩码代表硬件饱和事件，只反映加噪前的截断。
    两种顺序下相对噪声的标准差都取未截断信号的幅值。
    """
    clean = field_array(pose, layout, model)
    if clip_before_noise:
        clipped = saturate(clean, b_clip)
        return FieldVector(b=noise_mode.apply(clipped.b, rng, amplitude=clean.b), sat_mask=clipped.sat_mask)
    noisy = FieldVector(b=noise_mode.apply(clean.b, rng, amplitude=clean.b))
    return saturate(noisy, b_clip)


def record_rng(seed: int, index: int) -> np.random.Generator:
    """每条记录独立的随机流，由 (seed, index) 决定"""
    return np.random.default_rng([seed, index])


def generate(spec: DatasetSpec, stats: Optional[GenerationStats] = None) -> Iterator[DatasetRecord]:
    """
    流式生成数据集

    偶极子距离退化的位姿按 (seed + 尝试次数) 的备用 LHS 序列确定性重采样。
    """
    stats = stats if stats is not None else GenerationStats()
    workspace = spec.workspace.with_samples(spec.count, seed=spec.seed)
    poses = lhs_sample(workspace)
    fallbacks = {}

    for index in range(spec.count):
        pose = poses[index]
        last_failure = None
        for attempt in range(1, MAX_RESAMPLE_ATTEMPTS + 1):
            try:
                fields = simulate_record(
                    pose, spec.layout, spec.model, spec.b_clip, spec.noise_mode,
                    record_rng(spec.seed, index), spec.clip_before_noise,
                )
                break
            except DegenerateDistance as exc:
                last_failure = exc
                stats.n_resampled += 1
                if attempt not in fallbacks:
                    fallbacks[attempt] = lhs_sample(workspace.with_samples(spec.count, seed=spec.seed + attempt))
                pose = fallbacks[attempt][index]
        else:
            raise DegenerateDistance(last_failure.sensor_index, last_failure.distance, record_index=index)
        stats.n_generated += 1
        yield DatasetRecord(pose=pose, n=pose.n, fields=fields, index=index)

    if stats.n_resampled:
        logger.warning(f"Resampled {stats.n_resampled} poses that coincided with a sensor")


# ---------------------------------------------------------------------------
# CSV：px,py,pz,nx,ny,nz, b0x,b0y,b0z, ..., sat0x,sat0y,sat0z, ...
# ---------------------------------------------------------------------------

def header_columns(n_sensors: int) -> List[str]:
    columns = ['px', 'py', 'pz', 'nx', 'ny', 'nz']
    columns += [f"b{i}{axis}" for i in range(n_sensors) for axis in 'xyz']
    columns += [f"sat{i}{axis}" for i in range(n_sensors) for axis in 'xyz']
    return columns


def _record_row(record: DatasetRecord) -> NDArray[np.float64]:
    return np.concatenate([record.pose.p, record.n, record.fields.b, record.sat_mask.astype(np.float64)])


def _frame(rows: List[NDArray], n_sensors: int) -> pd.DataFrame:
    frame = pd.DataFrame(np.vstack(rows), columns=header_columns(n_sensors))
    sat_columns = frame.columns[6 + 3 * n_sensors:]
    frame[sat_columns] = frame[sat_columns].astype(np.int8)
    return frame


def write_csv(records: Iterable[DatasetRecord], path: Union[str, Path]) -> int:
    """流式写出 CSV，浮点数保留 17 位有效数字；返回记录数"""
    path = Path(path)
    written = 0
    rows: List[NDArray] = []
    n_sensors = None
    header = True

    def flush():
        nonlocal header, rows
        _frame(rows, n_sensors).to_csv(
            path, mode='w' if header else 'a', header=header, index=False, float_format=FLOAT_FORMAT,
        )
        header = False
        rows = []

    for record in records:
        if n_sensors is None:
            n_sensors = record.fields.n_sensors
        elif record.fields.n_sensors != n_sensors:
            raise InvariantViolation("all records must share the same sensor count")
        rows.append(_record_row(record))
        written += 1
        if len(rows) >= CSV_CHUNK_ROWS:
            flush()
    if rows:
        flush()
    if written == 0:
        raise InvariantViolation("no records to write")
    logger.info(f"Wrote {written} records to {path}")
    return written


def _sensor_count(columns: List[str]) -> int:
    extra = len(columns) - 6
    if extra <= 0 or extra % 6:
        raise ParseError(f"header has {len(columns)} columns, expected 6 + 6N", line=1)
    n_sensors = extra // 6
    expected = header_columns(n_sensors)
    for name, wanted in zip(columns, expected):
        if name != wanted:
            raise ParseError(f"unexpected column '{name}', expected '{wanted}'", line=1, field=name)
    return n_sensors


def _records_from_matrix(values: NDArray, n_sensors: int, line_offset: int) -> List[DatasetRecord]:
    records = []
    b_end = 6 + 3 * n_sensors
    for row_index, row in enumerate(values):
        flags = row[b_end:]
        if not np.all((flags == 0.0) | (flags == 1.0)):
            raise ParseError("saturation flags must be 0 or 1", line=row_index + line_offset)
        try:
            pose = Pose5.from_orientation(row[:3], row[3:6])
        except InvariantViolation as exc:
            raise ParseError(f"invalid pose: {exc}", line=row_index + line_offset) from exc
        records.append(DatasetRecord(
            pose=pose,
            n=row[3:6].copy(),
            fields=FieldVector(b=row[6:b_end], sat_mask=flags.astype(bool)),
            index=row_index,
        ))
    return records


def read_csv(path: Union[str, Path]) -> List[DatasetRecord]:
    """读取 CSV 数据集；列缺失或非数值时抛出带行号和列名的 ParseError"""
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except pd.errors.EmptyDataError as exc:
        raise ParseError(f"{path}: file is empty", line=1) from exc
    except pd.errors.ParserError as exc:
        match = re.search(r'line (\d+)', str(exc))
        raise ParseError(f"{path}: {exc}", line=int(match.group(1)) if match else None) from exc

    n_sensors = _sensor_count(list(frame.columns))
    numeric = frame.apply(pd.to_numeric, errors='coerce')
    bad = numeric.isna().to_numpy()
    if bad.any():
        row, column = np.argwhere(bad)[0]
        raise ParseError(
            f"{path}: missing or non-numeric value", line=int(row) + 2, field=str(frame.columns[column])
        )
    return _records_from_matrix(numeric.to_numpy(dtype=np.float64), n_sensors, line_offset=2)


# ---------------------------------------------------------------------------
# 二进制变体：magic "MAGD", version u16, N u16, count u64，随后为小端 float64
# ---------------------------------------------------------------------------

def write_binary(records: Iterable[DatasetRecord], path: Union[str, Path]) -> int:
    """写出二进制数据集；字段顺序与 CSV 相同，count 在写完后回填"""
    path = Path(path)
    written = 0
    n_sensors = None
    with path.open('wb') as handle:
        handle.write(BINARY_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, 0, 0))
        for record in records:
            if n_sensors is None:
                n_sensors = record.fields.n_sensors
            elif record.fields.n_sensors != n_sensors:
                raise InvariantViolation("all records must share the same sensor count")
            handle.write(_record_row(record).astype('<f8').tobytes())
            written += 1
        if written == 0:
            raise InvariantViolation("no records to write")
        handle.seek(0)
        handle.write(BINARY_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, n_sensors, written))
    logger.info(f"Wrote {written} binary records to {path}")
    return written


def read_binary(path: Union[str, Path]) -> List[DatasetRecord]:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < BINARY_HEADER.size:
        raise ParseError(f"{path}: truncated header", field='header')
    magic, version, n_sensors, count = BINARY_HEADER.unpack_from(data)
    if magic != BINARY_MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}", field='magic')
    if version != BINARY_VERSION:
        raise ParseError(f"{path}: unsupported version {version}", field='version')
    width = 6 + 6 * n_sensors
    payload = np.frombuffer(data, dtype='<f8', offset=BINARY_HEADER.size)
    if payload.size != count * width:
        raise ParseError(f"{path}: expected {count} records of {width} values, found {payload.size} values")
    return _records_from_matrix(payload.reshape(count, width), n_sensors, line_offset=1)
