"""
Fisher 信息与可观测性分析
FIM 组装、CRLB 指标提取，以及基于拉丁超立方采样的工作空间扫描
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.stats import qmc

from .dipole_core import (
    MagnetModel,
    Pose5,
    dipole_validity_ok,
    jacobian,
    jacobian_batch,
    orientation_batch,
)
from .exceptions import AllDegenerate, InvariantViolation, NonFinite
from .geometry_catalog import SensorLayout
from .performance import parallel_map

logger = logging.getLogger(__name__)


RANK_TOL = 1e-12
DEFAULT_THETA_MARGIN = 0.05  # rad，排除万向节奇异
CHUNK_SIZE = 4096
RAD_TO_DEG = 180.0 / math.pi
METRIC_NAMES = ('pos_bound_mm', 'ori_bound_deg', 'lambda_min', 'kappa', 'logdet')
MAGNET_RADIUS = 0.005  # m，φ10 mm


@dataclass(frozen=True)
class NoiseModel:
    """各通道独立同分布高斯噪声"""

    sigma: float

    def __post_init__(self):
        if not math.isfinite(self.sigma) or self.sigma <= 0:
            raise InvariantViolation(f"noise sigma must be positive, got {self.sigma}")


@dataclass(frozen=True, eq=False)
class FimReport:
    fim: NDArray[np.float64]
    eigenvalues: NDArray[np.float64]
    pos_bound_mm: float
    ori_bound_deg: float
    lambda_min: float
    kappa: float
    logdet: float
    degenerate: bool


class WorkspaceSpec(BaseModel):
    """工作空间与采样参数，默认值对应 x, y ∈ [-50, 50] mm，z ∈ [50, 150] mm"""

    model_config = ConfigDict(frozen=True, extra='forbid')

    x_range: Tuple[float, float] = (-0.050, 0.050)
    y_range: Tuple[float, float] = (-0.050, 0.050)
    z_range: Tuple[float, float] = (0.050, 0.150)
    n_samples: int = Field(default=200000, ge=1)
    seed: int = Field(default=0, ge=0)
    theta_margin: float = Field(default=DEFAULT_THETA_MARGIN, gt=0.0, lt=math.pi / 2)

    @field_validator('x_range', 'y_range', 'z_range')
    @classmethod
    def _non_degenerate(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = value
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ValueError(f"range must be finite with lo < hi, got {value}")
        return value

    def with_samples(self, n_samples: int, seed: Optional[int] = None) -> 'WorkspaceSpec':
        update = {'n_samples': n_samples}
        if seed is not None:
            update['seed'] = seed
        return WorkspaceSpec.model_validate({**self.model_dump(), **update})


class MetricSummary(BaseModel):
    median: float
    mean: float
    p25: float
    p75: float
    p5: float
    p95: float


class SweepReport(BaseModel):
    """工作空间扫描统计，几何内联保存以便报告自包含"""

    layout: Dict[str, Any]
    workspace: WorkspaceSpec
    sigma_ut: float
    b_t: float
    n_samples: int
    n_valid: int
    n_degenerate: int
    metrics: Dict[str, MetricSummary]
    fixed_z: Optional[float] = None

    @property
    def layout_name(self) -> str:
        return self.layout['name']

    def median(self, metric: str) -> float:
        return self.metrics[metric].median

    def mean(self, metric: str) -> float:
        return self.metrics[metric].mean


# ---------------------------------------------------------------------------
# 位姿集合与拉丁超立方采样
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PoseSet(Sequence):
    """数组存储的 Pose5 序列"""

    positions: NDArray[np.float64]
    psi: NDArray[np.float64]
    theta: NDArray[np.float64]

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        psi = np.asarray(self.psi, dtype=np.float64).reshape(-1)
        theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if not len(positions) == len(psi) == len(theta):
            raise InvariantViolation("pose arrays must have equal length")
        for array in (positions, psi, theta):
            array.setflags(write=False)
        object.__setattr__(self, 'positions', positions)
        object.__setattr__(self, 'psi', psi)
        object.__setattr__(self, 'theta', theta)

    def __len__(self) -> int:
        return len(self.psi)

    def __getitem__(self, index: Union[int, slice]):
        if isinstance(index, slice):
            return PoseSet(self.positions[index], self.psi[index], self.theta[index])
        if not -len(self) <= index < len(self):
            raise IndexError(index)
        return Pose5(p=self.positions[index], psi=self.psi[index], theta=self.theta[index])

    @property
    def orientations(self) -> NDArray[np.float64]:
        return orientation_batch(self.psi, self.theta)

    @classmethod
    def from_poses(cls, poses: Sequence) -> 'PoseSet':
        if isinstance(poses, PoseSet):
            return poses
        return cls(
            positions=np.array([pose.p for pose in poses]),
            psi=np.array([pose.psi for pose in poses]),
            theta=np.array([pose.theta for pose in poses]),
        )


def _cos_theta_bounds(theta_margin: float) -> Tuple[float, float]:
    m = 1.0 - math.cos(theta_margin)
    return -1.0 + m, 1.0 - m


def _angles_from_unit(psi_col: NDArray, cos_col: NDArray) -> Tuple[NDArray, NDArray]:
    psi = np.mod(psi_col, 2.0 * math.pi)
    psi[psi >= 2.0 * math.pi] = 0.0
    return psi, np.arccos(np.clip(cos_col, -1.0, 1.0))


def lhs_sample(spec: WorkspaceSpec) -> PoseSet:
    """
    5 维拉丁超立方采样 (x, y, z, ψ, cosθ)

    cosθ 在 [-1+m, 1-m] 上分层（m = 1 - cos(theta_margin)），方向近似球面均匀且避开两极。
    给定 seed 时结果确定。
    """
    sampler = qmc.LatinHypercube(d=5, seed=spec.seed)
    unit = sampler.random(spec.n_samples)
    cos_lo, cos_hi = _cos_theta_bounds(spec.theta_margin)
    lower = [spec.x_range[0], spec.y_range[0], spec.z_range[0], 0.0, cos_lo]
    upper = [spec.x_range[1], spec.y_range[1], spec.z_range[1], 2.0 * math.pi, cos_hi]
    sample = qmc.scale(unit, lower, upper)
    psi, theta = _angles_from_unit(sample[:, 3], sample[:, 4])
    return PoseSet(positions=sample[:, :3], psi=psi, theta=theta)


def lhs_sample_fixed_z(spec: WorkspaceSpec, z: float) -> PoseSet:
    """固定高度 z 的 4 维拉丁超立方采样 (x, y, ψ, cosθ)，用于分层剖面"""
    sampler = qmc.LatinHypercube(d=4, seed=spec.seed)
    unit = sampler.random(spec.n_samples)
    cos_lo, cos_hi = _cos_theta_bounds(spec.theta_margin)
    lower = [spec.x_range[0], spec.y_range[0], 0.0, cos_lo]
    upper = [spec.x_range[1], spec.y_range[1], 2.0 * math.pi, cos_hi]
    sample = qmc.scale(unit, lower, upper)
    psi, theta = _angles_from_unit(sample[:, 2], sample[:, 3])
    positions = np.column_stack([sample[:, 0], sample[:, 1], np.full(spec.n_samples, float(z))])
    return PoseSet(positions=positions, psi=psi, theta=theta)


# ---------------------------------------------------------------------------
# FIM 与 CRLB
# ---------------------------------------------------------------------------

def symmetrize(matrices: NDArray) -> NDArray:
    return 0.5 * (matrices + np.swapaxes(matrices, -1, -2))


def fim_from_jacobian(jac: NDArray, sigma: float) -> NDArray:
    """F = JᵀJ/σ²，支持批量 (M, 3N, 5)；结果严格对称"""
    gram = np.einsum('...ki,...kj->...ij', jac, jac)
    return symmetrize(gram / sigma ** 2)


def build_fim(pose: Pose5, layout: SensorLayout, model: MagnetModel, noise: NoiseModel) -> NDArray[np.float64]:
    """单位姿 5×5 Fisher 信息矩阵（使用未截断的解析雅可比）"""
    return fim_from_jacobian(jacobian(pose, layout, model), noise.sigma)


def fim_batch(poses: PoseSet, sensors: NDArray, model: MagnetModel, noise: NoiseModel) -> NDArray:
    jac = jacobian_batch(poses.positions, poses.psi, poses.theta, sensors, model.b_t)
    return fim_from_jacobian(jac, noise.sigma)


@dataclass(frozen=True, eq=False)
class PoseMetrics:
    """逐位姿指标数组"""

    pos_bound_mm: NDArray
    ori_bound_deg: NDArray
    angular_ori_bound_deg: NDArray
    lambda_min: NDArray
    kappa: NDArray
    logdet: NDArray
    degenerate: NDArray

    @classmethod
    def concatenate(cls, parts: List['PoseMetrics']) -> 'PoseMetrics':
        return cls(**{
            name: np.concatenate([getattr(part, name) for part in parts])
            for name in cls.__dataclass_fields__
        })

    def valid(self, metric: str) -> NDArray:
        return getattr(self, metric)[~self.degenerate]


def metrics_from_fim(fim: NDArray, theta: Optional[NDArray] = None) -> PoseMetrics:
    """
    批量由 FIM 计算 CRLB 指标

    特征分解一次，同时用于 λ_min、κ、奇异判定和求逆；
    λ_min ≤ RANK_TOL·λ_max 的位姿判为奇异，界限记为 +∞。
    """
    fim = np.asarray(fim, dtype=np.float64).reshape(-1, 5, 5)
    if not np.all(np.isfinite(fim)):
        raise NonFinite("FIM contains NaN or infinite entries")
    eigenvalues, eigenvectors = np.linalg.eigh(fim)
    lam_min = eigenvalues[:, 0]
    lam_max = eigenvalues[:, -1]
    degenerate = ~((lam_max > 0) & (lam_min > RANK_TOL * lam_max))

    safe = np.where(degenerate[:, np.newaxis], 1.0, eigenvalues)
    inverse = np.einsum('mik,mk,mjk->mij', eigenvectors, 1.0 / safe, eigenvectors)
    pos_var = np.trace(inverse[:, :3, :3], axis1=1, axis2=2)
    psi_var = inverse[:, 3, 3]
    theta_var = inverse[:, 4, 4]

    pos = 1000.0 * np.sqrt(np.maximum(pos_var, 0.0))
    ori = RAD_TO_DEG * np.sqrt(np.maximum(psi_var + theta_var, 0.0))
    if theta is None:
        angular = np.full(len(fim), np.nan)
    else:
        # 切平面角误差：dθ² + sin²θ dψ²
        angular = RAD_TO_DEG * np.sqrt(np.maximum(theta_var + np.sin(theta) ** 2 * psi_var, 0.0))
    with np.errstate(divide='ignore', invalid='ignore'):
        kappa = lam_max / lam_min
        logdet = np.sum(np.log(safe), axis=1)

    inf = np.inf
    return PoseMetrics(
        pos_bound_mm=np.where(degenerate, inf, pos),
        ori_bound_deg=np.where(degenerate, inf, ori),
        angular_ori_bound_deg=np.where(degenerate, inf, angular),
        lambda_min=lam_min,
        kappa=np.where(degenerate, inf, kappa),
        logdet=np.where(degenerate, -inf, logdet),
        degenerate=degenerate,
    )


def crlb_metrics(fim: NDArray) -> FimReport:
    """由单个 5×5 FIM 提取四项可观测性指标"""
    fim = np.asarray(fim, dtype=np.float64)
    if fim.shape != (5, 5):
        raise InvariantViolation(f"FIM must be 5x5, got shape {fim.shape}")
    metrics = metrics_from_fim(fim[np.newaxis])
    eigenvalues = np.linalg.eigvalsh(fim)
    return FimReport(
        fim=fim,
        eigenvalues=eigenvalues,
        pos_bound_mm=float(metrics.pos_bound_mm[0]),
        ori_bound_deg=float(metrics.ori_bound_deg[0]),
        lambda_min=float(metrics.lambda_min[0]),
        kappa=float(metrics.kappa[0]),
        logdet=float(metrics.logdet[0]),
        degenerate=bool(metrics.degenerate[0]),
    )


def angular_ori_bound_deg(fim: NDArray, theta: float) -> float:
    """方向向量角误差的下界（度），与 e_ori 度量同口径"""
    metrics = metrics_from_fim(np.asarray(fim)[np.newaxis], theta=np.array([theta]))
    return float(metrics.angular_ori_bound_deg[0])


def _chunks(n: int, size: int) -> List[slice]:
    return [slice(start, min(start + size, n)) for start in range(0, n, size)]


def evaluate_poses(
    layout: SensorLayout,
    poses: PoseSet,
    model: MagnetModel,
    noise: NoiseModel,
    threads: Optional[int] = 1,
    chunk_size: int = CHUNK_SIZE,
) -> PoseMetrics:
    """
    逐位姿计算 CRLB 指标

    分块边界与线程数无关，因此并行结果与顺序计算逐位一致。
    """
    poses = PoseSet.from_poses(poses)

    def evaluate_chunk(chunk: slice) -> PoseMetrics:
        part = poses[chunk]
        return metrics_from_fim(fim_batch(part, layout.positions, model, noise), theta=part.theta)

    parts = parallel_map(evaluate_chunk, _chunks(len(poses), chunk_size), threads)
    return PoseMetrics.concatenate(parts)


def summarize(values: NDArray) -> MetricSummary:
    """分位数采用次序统计量之间的线性插值"""
    values = np.asarray(values, dtype=np.float64)
    p5, p25, median, p75, p95 = np.quantile(values, [0.05, 0.25, 0.5, 0.75, 0.95], method='linear')
    return MetricSummary(
        median=float(median),
        mean=float(np.mean(values)),
        p25=float(p25),
        p75=float(p75),
        p5=float(p5),
        p95=float(p95),
    )


def workspace_clearance(layout: SensorLayout, spec: WorkspaceSpec) -> float:
    """传感器到工作空间长方体的最小距离（m）"""
    lower = np.array([spec.x_range[0], spec.y_range[0], spec.z_range[0]])
    upper = np.array([spec.x_range[1], spec.y_range[1], spec.z_range[1]])
    outside = np.maximum(lower - layout.positions, 0.0) + np.maximum(layout.positions - upper, 0.0)
    return float(np.min(np.linalg.norm(outside, axis=1)))


def report_from_metrics(
    layout: SensorLayout,
    spec: WorkspaceSpec,
    model: MagnetModel,
    noise: NoiseModel,
    metrics: PoseMetrics,
    fixed_z: Optional[float] = None,
) -> SweepReport:
    n_degenerate = int(np.count_nonzero(metrics.degenerate))
    n_valid = len(metrics.degenerate) - n_degenerate
    if n_valid == 0:
        raise AllDegenerate(f"all {len(metrics.degenerate)} sampled poses have a singular FIM")
    if n_degenerate:
        logger.warning(f"{n_degenerate} degenerate poses excluded from sweep of '{layout.name}'")
    return SweepReport(
        layout=layout.to_document(),
        workspace=spec,
        sigma_ut=noise.sigma,
        b_t=model.b_t,
        n_samples=len(metrics.degenerate),
        n_valid=n_valid,
        n_degenerate=n_degenerate,
        metrics={name: summarize(metrics.valid(name)) for name in METRIC_NAMES},
        fixed_z=fixed_z,
    )


def sweep_workspace(
    layout: SensorLayout,
    spec: WorkspaceSpec,
    model: MagnetModel,
    noise: NoiseModel,
    threads: Optional[int] = 1,
) -> SweepReport:
    """在 LHS 位姿上评估 FIM 指标并汇总；奇异位姿计数但不参与分位数"""
    clearance = workspace_clearance(layout, spec)
    if not dipole_validity_ok(clearance, MAGNET_RADIUS):
        logger.warning(
            f"Layout '{layout.name}' comes within {clearance * 1000:.1f} mm of the workspace, "
            f"below the dipole validity distance of {8 * MAGNET_RADIUS * 1000:.0f} mm"
        )
    poses = lhs_sample(spec)
    metrics = evaluate_poses(layout, poses, model, noise, threads=threads)
    report = report_from_metrics(layout, spec, model, noise, metrics)
    logger.info(
        f"Sweep '{layout.name}': median pos {report.median('pos_bound_mm'):.3f} mm, "
        f"ori {report.median('ori_bound_deg'):.3f} deg over {report.n_valid} poses"
    )
    return report


def sweep_fixed_z(
    layout: SensorLayout,
    spec: WorkspaceSpec,
    z: float,
    model: MagnetModel,
    noise: NoiseModel,
    threads: Optional[int] = 1,
) -> SweepReport:
    """固定高度的 CRLB 扫描"""
    poses = lhs_sample_fixed_z(spec, z)
    metrics = evaluate_poses(layout, poses, model, noise, threads=threads)
    return report_from_metrics(layout, spec, model, noise, metrics, fixed_z=float(z))
