"""
磁偶极子正向模型
提供姿态参数化、阵列磁场、解析雅可比矩阵以及传感器饱和模型

单位约定：长度 m，磁场 µT，角度 rad，因此 B_T 的单位为 µT·m³。
通道顺序全局固定为传感器优先（sensor 0: Bx, By, Bz; sensor 1: ...）。
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Tuple, TYPE_CHECKING

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import DegenerateDistance, InvariantViolation, NonFinite

if TYPE_CHECKING:
    from .geometry_catalog import SensorLayout

logger = logging.getLogger(__name__)


TWO_PI = 2.0 * math.pi
DEFAULT_B_T = 7.9666e-2  # µT·m³，φ10×10 mm N35 磁铁
MU_0 = 4.0e-7 * math.pi
MIN_DISTANCE = 1e-6  # m
POLE_EPS = 1e-9

# 实验协议中的六个姿态方向（±x, ±y, ±z）
SIX_ORIENTATIONS = np.array([
    [1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, 0.0, -1.0],
])
SIX_ORIENTATIONS.setflags(write=False)


def _frozen(values: ArrayLike, shape: Tuple[int, ...]) -> NDArray[np.float64]:
    array = np.array(values, dtype=np.float64).reshape(shape)
    array.setflags(write=False)
    return array


def _normalize_psi(psi: float) -> float:
    psi = float(psi) % TWO_PI
    # -1e-17 % 2π 会舍入成 2π
    if psi >= TWO_PI:
        psi = 0.0
    return psi


def magnet_strength(radius: float, length: float, magnetization: float, mu_r: float = 1.0) -> float:
    """
    由磁铁物理参数计算磁强度系数 B_T（µT·m³）

    B_T = µ_r µ_0 π r² l M / 4π，SI 结果为 T·m³，乘 1e6 换算为 µT·m³。
    """
    if min(radius, length, magnetization, mu_r) <= 0:
        raise InvariantViolation("magnet radius, length, magnetization and mu_r must be positive")
    volume = math.pi * radius ** 2 * length
    return mu_r * MU_0 * volume * magnetization / (4.0 * math.pi) * 1e6


def dipole_validity_ok(distance: float, radius: float) -> bool:
    """偶极子近似要求距离大于磁铁半径的 8 倍"""
    return distance > 8.0 * radius


@dataclass(frozen=True)
class MagnetModel:
    """磁铁模型，r、l、M、µ0、µr 全部折算进 b_t"""

    b_t: float = DEFAULT_B_T

    def __post_init__(self):
        if not math.isfinite(self.b_t) or self.b_t <= 0:
            raise InvariantViolation(f"b_t must be positive, got {self.b_t}")


@dataclass(frozen=True)
class Pose5:
    """5 自由度磁铁状态 x = [p, ψ, θ]，构造时 ψ 归一化到 [0, 2π)"""

    p: NDArray[np.float64]
    psi: float
    theta: float

    def __post_init__(self):
        p = _frozen(self.p, (3,))
        if not np.all(np.isfinite(p)):
            raise NonFinite(f"pose position must be finite, got {p}")
        theta = float(self.theta)
        if not (math.isfinite(theta) and math.isfinite(self.psi)):
            raise NonFinite(f"pose angles must be finite, got psi={self.psi}, theta={theta}")
        if not 0.0 <= theta <= math.pi:
            raise InvariantViolation(f"theta must lie in [0, pi], got {theta}")
        object.__setattr__(self, 'p', p)
        object.__setattr__(self, 'psi', _normalize_psi(self.psi))
        object.__setattr__(self, 'theta', theta)

    @property
    def n(self) -> NDArray[np.float64]:
        return orientation_from_angles(self.psi, self.theta)

    def as_vector(self) -> NDArray[np.float64]:
        return np.concatenate([self.p, [self.psi, self.theta]])

    @classmethod
    def from_orientation(cls, p: ArrayLike, n: ArrayLike) -> 'Pose5':
        psi, theta = angles_from_orientation(n)
        return cls(p=np.asarray(p, dtype=float), psi=psi, theta=theta)


@dataclass(frozen=True)
class FieldVector:
    """3N 维磁场观测向量（µT）及逐通道饱和标记"""

    b: NDArray[np.float64]
    sat_mask: NDArray[np.bool_] = field(default=None)

    def __post_init__(self):
        b = np.array(self.b, dtype=np.float64).reshape(-1)
        if b.size == 0 or b.size % 3:
            raise InvariantViolation(f"field vector length must be a positive multiple of 3, got {b.size}")
        if self.sat_mask is None:
            mask = np.zeros(b.size, dtype=bool)
        else:
            mask = np.array(self.sat_mask, dtype=bool).reshape(-1)
        if mask.size != b.size:
            raise InvariantViolation(f"sat_mask length {mask.size} does not match field length {b.size}")
        b.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, 'b', b)
        object.__setattr__(self, 'sat_mask', mask)

    @property
    def n_sensors(self) -> int:
        return self.b.size // 3

    def per_sensor(self) -> NDArray[np.float64]:
        return self.b.reshape(-1, 3)


# ---------------------------------------------------------------------------
# 姿态参数化
# ---------------------------------------------------------------------------

def orientation_from_angles(psi: float, theta: float) -> NDArray[np.float64]:
    """n = [cosψ sinθ, sinψ sinθ, cosθ]"""
    sin_theta = math.sin(theta)
    return np.array([
        math.cos(psi) * sin_theta,
        math.sin(psi) * sin_theta,
        math.cos(theta),
    ])


def angles_from_orientation(n: ArrayLike) -> Tuple[float, float]:
    """
    单位方向向量反解 (ψ, θ)

    在极点（sinθ < 1e-9）ψ 无定义，按约定返回 0。
    """
    n = np.asarray(n, dtype=np.float64).reshape(3)
    norm = float(np.linalg.norm(n))
    if not math.isfinite(norm):
        raise NonFinite("orientation vector must be finite")
    if abs(norm - 1.0) > 1e-6:
        raise InvariantViolation(f"orientation vector must be unit length, got norm {norm}")
    n = n / norm
    theta = math.acos(min(1.0, max(-1.0, float(n[2]))))
    if math.hypot(n[0], n[1]) < POLE_EPS:
        return 0.0, theta
    return _normalize_psi(math.atan2(n[1], n[0])), theta


def orientation_batch(psi: NDArray, theta: NDArray) -> NDArray[np.float64]:
    """批量计算方向向量，返回 (M, 3)"""
    sin_theta = np.sin(theta)
    return np.stack([np.cos(psi) * sin_theta, np.sin(psi) * sin_theta, np.cos(theta)], axis=-1)


def orientation_derivatives(psi: NDArray, theta: NDArray) -> Tuple[NDArray, NDArray]:
    """∂n/∂ψ 与 ∂n/∂θ，各为 (M, 3)"""
    sin_psi, cos_psi = np.sin(psi), np.cos(psi)
    sin_theta, cos_theta = np.sin(theta), np.cos(theta)
    dn_dpsi = np.stack([-sin_psi * sin_theta, cos_psi * sin_theta, np.zeros_like(sin_theta)], axis=-1)
    dn_dtheta = np.stack([cos_psi * cos_theta, sin_psi * cos_theta, -sin_theta], axis=-1)
    return dn_dpsi, dn_dtheta


# ---------------------------------------------------------------------------
# 批量核函数：M 个位姿 × N 个传感器
# ---------------------------------------------------------------------------

def displacements(positions: NDArray, sensors: NDArray) -> Tuple[NDArray, NDArray]:
    """
    d = r_i - p，返回 d (M, N, 3) 与 |d| (M, N)

    距离不大于 1e-6 m 时抛出 DegenerateDistance（带传感器序号）。
    """
    d = sensors[np.newaxis, :, :] - positions[:, np.newaxis, :]
    dist = np.linalg.norm(d, axis=-1)
    too_close = dist <= MIN_DISTANCE
    if np.any(too_close):
        pose_index, sensor_index = np.argwhere(too_close)[0]
        raise DegenerateDistance(int(sensor_index), float(dist[pose_index, sensor_index]))
    return d, dist


def dipole_field(d: NDArray, dist: NDArray, n: NDArray, b_t: float) -> NDArray:
    """B = B_T (3(n·d)d/|d|⁵ - n/|d|³)，n 需可广播到 d 的形状"""
    n_dot_d = np.sum(n * d, axis=-1)
    inv_r3 = 1.0 / dist ** 3
    inv_r5 = inv_r3 / dist ** 2
    return b_t * (3.0 * (n_dot_d * inv_r5)[..., np.newaxis] * d - inv_r3[..., np.newaxis] * n)


def field_gradient(d: NDArray, dist: NDArray, n: NDArray, b_t: float) -> NDArray:
    """
    空间梯度 ∂B/∂d，形状 (..., 3, 3)

    G = B_T [3(d nᵀ + (n·d) I + n dᵀ)/|d|⁵ - 15 (n·d) d dᵀ/|d|⁷]，迹恒为零。
    """
    n_dot_d = np.sum(n * d, axis=-1)[..., np.newaxis, np.newaxis]
    inv_r5 = (1.0 / dist ** 5)[..., np.newaxis, np.newaxis]
    inv_r7 = inv_r5 / dist[..., np.newaxis, np.newaxis] ** 2
    n_b = np.broadcast_to(n, d.shape)
    outer_dn = d[..., :, np.newaxis] * n_b[..., np.newaxis, :]
    outer_nd = n_b[..., :, np.newaxis] * d[..., np.newaxis, :]
    outer_dd = d[..., :, np.newaxis] * d[..., np.newaxis, :]
    eye = np.eye(3)
    return b_t * (
        3.0 * inv_r5 * (outer_dn + n_dot_d * eye + outer_nd)
        - 15.0 * n_dot_d * inv_r7 * outer_dd
    )


def field_orientation_derivative(d: NDArray, dist: NDArray, b_t: float) -> NDArray:
    """∂B/∂n = B_T (3 d dᵀ/|d|⁵ - I/|d|³)，形状 (..., 3, 3)"""
    inv_r3 = (1.0 / dist ** 3)[..., np.newaxis, np.newaxis]
    inv_r5 = inv_r3 / dist[..., np.newaxis, np.newaxis] ** 2
    outer_dd = d[..., :, np.newaxis] * d[..., np.newaxis, :]
    return b_t * (3.0 * inv_r5 * outer_dd - inv_r3 * np.eye(3))


def field_batch(positions: NDArray, orientations: NDArray, sensors: NDArray, b_t: float) -> NDArray:
    """批量磁场，返回 (M, 3N)"""
    d, dist = displacements(positions, sensors)
    b = dipole_field(d, dist, orientations[:, np.newaxis, :], b_t)
    return b.reshape(positions.shape[0], -1)


def jacobian_batch(positions: NDArray, psi: NDArray, theta: NDArray, sensors: NDArray, b_t: float) -> NDArray:
    """
    批量解析雅可比 ∂B/∂(p_x, p_y, p_z, ψ, θ)，返回 (M, 3N, 5)

    ∂d/∂p = -I，故位置列为 -∂B/∂d；角度列经 ∂n/∂ψ、∂n/∂θ 链式求导。
    """
    n = orientation_batch(psi, theta)
    dn_dpsi, dn_dtheta = orientation_derivatives(psi, theta)
    d, dist = displacements(positions, sensors)
    grad = field_gradient(d, dist, n[:, np.newaxis, :], b_t)
    db_dn = field_orientation_derivative(d, dist, b_t)

    m, n_sensors = dist.shape
    jac = np.empty((m, n_sensors, 3, 5))
    jac[..., :3] = -grad
    jac[..., 3] = np.einsum('mnij,mj->mni', db_dn, dn_dpsi)
    jac[..., 4] = np.einsum('mnij,mj->mni', db_dn, dn_dtheta)
    return jac.reshape(m, 3 * n_sensors, 5)


# ---------------------------------------------------------------------------
# 单位姿接口
# ---------------------------------------------------------------------------

def field_at(pose: Pose5, sensor_pos: ArrayLike, model: MagnetModel) -> NDArray[np.float64]:
    """单个传感器处的磁场（µT）"""
    sensor = np.asarray(sensor_pos, dtype=np.float64).reshape(1, 3)
    return field_batch(pose.p[np.newaxis, :], pose.n[np.newaxis, :], sensor, model.b_t)[0]


def field_array(pose: Pose5, layout: 'SensorLayout', model: MagnetModel) -> FieldVector:
    """按布局顺序拼接的 3N 维观测向量，不做饱和截断"""
    b = field_batch(pose.p[np.newaxis, :], pose.n[np.newaxis, :], layout.positions, model.b_t)[0]
    return FieldVector(b=b)


def jacobian(pose: Pose5, layout: 'SensorLayout', model: MagnetModel) -> NDArray[np.float64]:
    """单位姿的 3N×5 解析雅可比"""
    return jacobian_batch(
        pose.p[np.newaxis, :],
        np.array([pose.psi]),
        np.array([pose.theta]),
        layout.positions,
        model.b_t,
    )[0]


def saturate(field_vector: FieldVector, b_clip: float) -> FieldVector:
    """
    传感器量程截断：逐通道限幅到 [-b_clip, b_clip]

    |b| ≥ b_clip 的通道标记为饱和（边界包含在内）。b_clip 可以是 inf。
    """
    if not b_clip > 0:
        raise InvariantViolation(f"b_clip must be positive, got {b_clip}")
    b = field_vector.b
    hit = np.abs(b) >= b_clip
    clipped = np.clip(b, -b_clip, b_clip)
    return FieldVector(b=clipped, sat_mask=field_vector.sat_mask | hit)
