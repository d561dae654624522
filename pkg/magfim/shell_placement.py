"""
立方壳体约束下的传感器自由布局
贪心初始化 + 面内连续细化，目标为工作空间平均的 log det(F)
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field
from typing_extensions import Self

from .dipole_core import MagnetModel, jacobian_batch
from .exceptions import AllDegenerate, DegenerateDistance, InsufficientCandidates, InvariantViolation, OffShell
from .geometry_catalog import MIN_SEPARATION, SensorLayout
from .observability import (
    RANK_TOL,
    NoiseModel,
    PoseSet,
    SweepReport,
    WorkspaceSpec,
    lhs_sample,
)
from .performance import PerformanceMonitor, parallel_map

logger = logging.getLogger(__name__)


LOGDET_EPS = 1e-12
FACE_TOL = 1e-9  # m
DEFAULT_CENTER = (0.0, 0.0, 0.100)
DEFAULT_SIDE = 0.160
DEFAULT_CANDIDATES_PER_FACE = 225
DEFAULT_EVAL_POSES = 2000
MIN_USEFUL_SENSORS = 5
CANDIDATE_CHUNK = 32
POSE_CHUNK = 4096

# face_id -> (法向坐标轴, 方向, 面内 (u, v) 对应的坐标轴)
FACES: Dict[str, Tuple[int, float, Tuple[int, int]]] = {
    '+x': (0, 1.0, (1, 2)),
    '-x': (0, -1.0, (1, 2)),
    '+y': (1, 1.0, (0, 2)),
    '-y': (1, -1.0, (0, 2)),
    '+z': (2, 1.0, (0, 1)),
    '-z': (2, -1.0, (0, 1)),
}
FACE_IDS = tuple(FACES)


@dataclass(frozen=True)
class FacePlacement:
    """壳体某一面上的面内坐标 (u, v)，相对面中心，单位 m"""

    face_id: str
    u: float
    v: float

    def __post_init__(self):
        if self.face_id not in FACES:
            raise InvariantViolation(f"unknown face '{self.face_id}', expected one of {FACE_IDS}")
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise InvariantViolation("face coordinates must be finite")


class ShellSpec(BaseModel):
    """轴对齐立方壳体；默认中心使上下两面与 Z = 20 / 180 mm 硬件平面重合"""

    model_config = ConfigDict(frozen=True, extra='forbid')

    center: Tuple[float, float, float] = DEFAULT_CENTER
    side: float = Field(default=DEFAULT_SIDE, gt=0.0)

    @property
    def half(self) -> float:
        return self.side / 2.0

    @property
    def faces(self) -> Tuple[str, ...]:
        return FACE_IDS

    def position(self, placement: FacePlacement) -> NDArray[np.float64]:
        """面内坐标转三维位置；法向坐标精确取 center ± side/2"""
        half = self.half
        if abs(placement.u) > half + FACE_TOL or abs(placement.v) > half + FACE_TOL:
            raise InvariantViolation(
                f"face coordinates ({placement.u}, {placement.v}) exceed the half side {half}"
            )
        axis, sign, (u_axis, v_axis) = FACES[placement.face_id]
        center = np.array(self.center, dtype=np.float64)
        point = center.copy()
        point[axis] = center[axis] + sign * half
        point[u_axis] = center[u_axis] + placement.u
        point[v_axis] = center[v_axis] + placement.v
        return point

    def locate(self, position: ArrayLike) -> FacePlacement:
        """三维位置所在的面；棱上的点取 FACE_IDS 顺序中的第一个面"""
        point = np.asarray(position, dtype=np.float64).reshape(3)
        center = np.array(self.center, dtype=np.float64)
        offset = point - center
        half = self.half
        for face_id, (axis, sign, (u_axis, v_axis)) in FACES.items():
            if abs(offset[axis] - sign * half) > FACE_TOL:
                continue
            u, v = float(offset[u_axis]), float(offset[v_axis])
            if abs(u) <= half + FACE_TOL and abs(v) <= half + FACE_TOL:
                return FacePlacement(face_id, float(np.clip(u, -half, half)), float(np.clip(v, -half, half)))
        raise OffShell(f"sensor at {point.tolist()} is not on a face of the shell")

    def candidates(self, per_face: int) -> Tuple[NDArray[np.float64], List[FacePlacement]]:
        """
        每个面上 g×g 的单元中心网格（g = ⌊√per_face⌋）

        u_i = -side/2 + (i + 0.5)·side/g，候选点不落在棱上，各面之间不重合。
        """
        if per_face < 1:
            raise InvariantViolation(f"candidates_per_face must be >= 1, got {per_face}")
        g = math.isqrt(per_face)
        if g * g != per_face:
            logger.warning(f"candidates_per_face={per_face} is not a square; using a {g}x{g} grid")
        coords = -self.half + (np.arange(g) + 0.5) * self.side / g
        placements = [
            FacePlacement(face_id, float(u), float(v))
            for face_id in FACE_IDS
            for v in coords
            for u in coords
        ]
        positions = np.array([self.position(p) for p in placements])
        return positions, placements


class RefineConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    max_cycles: int = Field(default=10, ge=1)
    step_fraction: float = Field(default=1.0 / 16.0, gt=0.0, le=1.0)
    min_step: float = Field(default=1e-4, gt=0.0)
    rel_tol: float = Field(default=1e-6, ge=0.0)


@dataclass(frozen=True, eq=False)
class PlacementResult:
    """布局、面内坐标、目标值轨迹，以及可选的最终扫描报告"""

    layout: SensorLayout
    placements: List[FacePlacement]
    objective_trace: List[float]
    stage: str
    report: Optional[SweepReport] = None
    cycles: int = 0

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    def with_report(self, report: SweepReport) -> Self:
        return replace(self, report=report)

    def to_document(self) -> Dict:
        return {
            'stage': self.stage,
            'layout': self.layout.to_document(),
            'placements': [{'face': p.face_id, 'u_m': p.u, 'v_m': p.v} for p in self.placements],
            'objective_trace': list(self.objective_trace),
            'cycles': self.cycles,
            'report': self.report.model_dump(mode='json') if self.report else None,
        }


# ---------------------------------------------------------------------------
# 目标函数
# ---------------------------------------------------------------------------

def sensor_contributions(sensors: NDArray, poses: PoseSet, model: MagnetModel, noise: NoiseModel) -> NDArray:
    """每个传感器在每个位姿上的 FIM 增量，形状 (S, M, 5, 5)"""
    sensors = np.asarray(sensors, dtype=np.float64).reshape(-1, 3)
    jac = jacobian_batch(poses.positions, poses.psi, poses.theta, sensors, model.b_t)
    blocks = jac.reshape(len(poses), len(sensors), 3, 5)
    return np.einsum('msai,msaj->smij', blocks, blocks) / noise.sigma ** 2


def regularized_logdet(fims: NDArray) -> NDArray:
    """log det(F + ε·tr(F)/5·I)，批量；F 秩亏时仍有限，F = 0 时为 -inf"""
    eigenvalues = np.linalg.eigvalsh(fims)
    shift = LOGDET_EPS * np.trace(fims, axis1=-2, axis2=-1) / 5.0
    with np.errstate(divide='ignore'):
        return np.sum(np.log(np.maximum(eigenvalues + shift[..., np.newaxis], 0.0)), axis=-1)


def objective_from_fims(fims: NDArray) -> float:
    """非奇异位姿取 log det F，奇异位姿取正则化 log det，再对位姿求平均"""
    fims = np.asarray(fims, dtype=np.float64).reshape(-1, 5, 5)
    eigenvalues = np.linalg.eigvalsh(fims)
    lam_min, lam_max = eigenvalues[:, 0], eigenvalues[:, -1]
    degenerate = ~((lam_max > 0) & (lam_min > RANK_TOL * lam_max))
    if np.all(degenerate):
        raise AllDegenerate(f"all {len(fims)} poses have a singular FIM")
    plain = np.sum(np.log(np.where(degenerate[:, np.newaxis], 1.0, eigenvalues)), axis=1)
    values = np.where(degenerate, regularized_logdet(fims), plain)
    return float(np.mean(values))


def _total_fim(sensors: NDArray, poses: PoseSet, model: MagnetModel, noise: NoiseModel, threads: Optional[int]) -> NDArray:
    def chunk_fim(chunk: slice) -> NDArray:
        return np.sum(sensor_contributions(sensors, poses[chunk], model, noise), axis=0)

    chunks = [slice(start, min(start + POSE_CHUNK, len(poses))) for start in range(0, len(poses), POSE_CHUNK)]
    return np.concatenate(parallel_map(chunk_fim, chunks, threads))


def placement_objective(
    layout: SensorLayout,
    poses: Sequence,
    model: MagnetModel,
    noise: NoiseModel,
    threads: Optional[int] = 1,
) -> float:
    """位姿集合上的平均 log det(F)"""
    poses = PoseSet.from_poses(poses)
    if len(poses) == 0:
        raise InvariantViolation("placement objective needs at least one pose")
    return objective_from_fims(_total_fim(layout.positions, poses, model, noise, threads))


def default_poses(seed: int = 0, n_poses: int = DEFAULT_EVAL_POSES, workspace: Optional[WorkspaceSpec] = None) -> PoseSet:
    """优化用的评估位姿：工作空间上的 LHS 样本"""
    workspace = workspace or WorkspaceSpec()
    return lhs_sample(workspace.with_samples(n_poses, seed=seed))


# ---------------------------------------------------------------------------
# 贪心初始化
# ---------------------------------------------------------------------------

@PerformanceMonitor.measure_time('greedy_place')
def greedy_place(
    shell: ShellSpec,
    k: int,
    candidates_per_face: int = DEFAULT_CANDIDATES_PER_FACE,
    poses: Optional[Sequence] = None,
    model: Optional[MagnetModel] = None,
    noise: Optional[NoiseModel] = None,
    seed: int = 0,
    threads: Optional[int] = 1,
) -> PlacementResult:
    """
    逐个加入使正则化平均 log-det 最大的候选点

    每步只需对每个候选点计算其 3 行雅可比块带来的 FIM 增量；并列时取最小候选下标。
    poses 缺省时用 seed 生成 2000 个 LHS 位姿。
    """
    model = model or MagnetModel()
    noise = noise or NoiseModel(sigma=10.0)
    if k < 1:
        raise InvariantViolation(f"sensor count must be >= 1, got {k}")
    if k < MIN_USEFUL_SENSORS:
        logger.warning(f"k={k} sensors cannot make the 5x5 FIM invertible in general")
    poses = default_poses(seed) if poses is None else PoseSet.from_poses(poses)
    positions, placements = shell.candidates(candidates_per_face)
    if k > len(positions):
        raise InsufficientCandidates(f"requested {k} sensors but only {len(positions)} candidates exist")

    current = np.zeros((len(poses), 5, 5))
    available = np.ones(len(positions), dtype=bool)
    chosen: List[int] = []
    trace: List[float] = []
    chunks = [slice(start, min(start + CANDIDATE_CHUNK, len(positions))) for start in range(0, len(positions), CANDIDATE_CHUNK)]

    def score_chunk(chunk: slice) -> NDArray:
        contributions = sensor_contributions(positions[chunk], poses, model, noise)
        return np.mean(regularized_logdet(current[np.newaxis] + contributions), axis=1)

    for step in range(k):
        scores = np.concatenate(parallel_map(score_chunk, chunks, threads))
        scores = np.where(available, scores, -np.inf)
        best = int(np.argmax(scores))
        chosen.append(best)
        available[best] = False
        current = current + sensor_contributions(positions[best], poses, model, noise)[0]
        trace.append(float(scores[best]))
        logger.info(f"Greedy step {step + 1}/{k}: candidate {best} on face {placements[best].face_id}, objective {trace[-1]:.4f}")

    layout = SensorLayout(name=f'shell-k{k}-greedy', positions=positions[chosen])
    return PlacementResult(
        layout=layout,
        placements=[placements[i] for i in chosen],
        objective_trace=trace,
        stage='greedy',
    )


# ---------------------------------------------------------------------------
# 面内细化
# ---------------------------------------------------------------------------

def _collides(candidate: NDArray, others: NDArray) -> bool:
    return len(others) > 0 and float(np.min(np.linalg.norm(others - candidate, axis=1))) < MIN_SEPARATION


@PerformanceMonitor.measure_time('refine_place')
def refine_place(
    initial: SensorLayout,
    shell: ShellSpec,
    poses: Optional[Sequence] = None,
    model: Optional[MagnetModel] = None,
    noise: Optional[NoiseModel] = None,
    config: Optional[RefineConfig] = None,
    seed: int = 0,
) -> PlacementResult:
    """
    循环坐标下降：逐个传感器在所在面内做模式搜索

    面分配固定；每个传感器步长从 side·step_fraction 起，无改进时减半，直到 min_step。
    只接受严格改进，因此输出目标值不低于输入。一轮相对改进低于 rel_tol 或达到 max_cycles 时停止。
    传感器顺序依次处理，结果与顺序参考实现一致。
    """
    model = model or MagnetModel()
    noise = noise or NoiseModel(sigma=10.0)
    config = config or RefineConfig()
    poses = default_poses(seed) if poses is None else PoseSet.from_poses(poses)
    placements = [shell.locate(position) for position in initial.positions]
    positions = np.array([shell.position(p) for p in placements])
    half = shell.half

    contributions = sensor_contributions(positions, poses, model, noise)
    total = np.sum(contributions, axis=0)
    objective = float(np.mean(regularized_logdet(total)))
    trace = [objective]
    cycles = 0

    for cycles in range(1, config.max_cycles + 1):
        cycle_start = objective
        for s in range(len(positions)):
            others = np.delete(positions, s, axis=0)
            base = total - contributions[s]
            step = shell.side * config.step_fraction
            while step >= config.min_step:
                current = placements[s]
                moves = []
                for du, dv in ((step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)):
                    u = float(np.clip(current.u + du, -half, half))
                    v = float(np.clip(current.v + dv, -half, half))
                    if (u, v) == (current.u, current.v):
                        continue
                    move = FacePlacement(current.face_id, u, v)
                    point = shell.position(move)
                    if not _collides(point, others):
                        moves.append((move, point))
                if not moves:
                    step /= 2.0
                    continue
                try:
                    trial = sensor_contributions(np.array([point for _, point in moves]), poses, model, noise)
                except DegenerateDistance:
                    step /= 2.0
                    continue
                values = np.mean(regularized_logdet(base[np.newaxis] + trial), axis=1)
                best = int(np.argmax(values))
                if values[best] > objective:
                    placements[s], positions[s] = moves[best]
                    contributions[s] = trial[best]
                    total = base + trial[best]
                    objective = float(values[best])
                else:
                    step /= 2.0
        trace.append(objective)
        improvement = (objective - cycle_start) / max(abs(cycle_start), 1e-300)
        logger.info(f"Refinement cycle {cycles}: objective {objective:.6f} (relative gain {improvement:.2e})")
        if improvement < config.rel_tol:
            break

    layout = SensorLayout(name=initial.name.replace('-greedy', '') + '-refined', positions=positions)
    return PlacementResult(
        layout=layout,
        placements=placements,
        objective_trace=trace,
        stage='refine',
        cycles=cycles,
    )


# ---------------------------------------------------------------------------
# 报告
# ---------------------------------------------------------------------------

def improvement_ratios(optimized: SweepReport, baseline: SweepReport) -> Dict[str, float]:
    """优化布局与基线的 CRLB 均值之比（越小越好）"""
    return {
        'pos_bound_mean_ratio': optimized.mean('pos_bound_mm') / baseline.mean('pos_bound_mm'),
        'ori_bound_mean_ratio': optimized.mean('ori_bound_deg') / baseline.mean('ori_bound_deg'),
        'lambda_min_median_ratio': optimized.median('lambda_min') / baseline.median('lambda_min'),
    }


def relative_profile(report: SweepReport, reference: SweepReport) -> Dict[str, float]:
    """
    相对参考布局（通常为平面阵列）的归一化性能

    精度取 CRLB 均值之比的倒数，大于 1 表示优于参考。
    """
    return {
        'mean_logdet': report.mean('logdet'),
        'median_lambda_min': report.median('lambda_min'),
        'relative_lambda_min': report.median('lambda_min') / reference.median('lambda_min'),
        'relative_pos_precision': reference.mean('pos_bound_mm') / report.mean('pos_bound_mm'),
        'relative_ori_precision': reference.mean('ori_bound_deg') / report.mean('ori_bound_deg'),
    }
