"""
蒙特卡洛评估
定位误差指标、汇总统计、Z 轴分层剖面，以及 LM 与 CRLB 的对比
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field

from .dipole_core import FieldVector, MagnetModel, Pose5
from .dataset_gen import DEFAULT_B_CLIP, NoiseMode, record_rng, simulate_record
from .exceptions import AllDegenerate, InvariantViolation
from .geometry_catalog import SensorLayout
from .lm_solver import DEFAULT_DN, DEFAULT_DP, LmConfig, lm_solve, perturbed_init
from .observability import (
    NoiseModel,
    WorkspaceSpec,
    angular_ori_bound_deg,
    build_fim,
    crlb_metrics,
    lhs_sample,
    lhs_sample_fixed_z,
    sweep_fixed_z,
)
from .performance import parallel_map

logger = logging.getLogger(__name__)


INTERIOR_WORKSPACE = WorkspaceSpec(z_range=(0.060, 0.140))
CRLB_SLACK = 0.9


def e_pos(p_hat: ArrayLike, p: ArrayLike) -> float:
    """位置误差（mm）"""
    return float(np.linalg.norm(np.asarray(p_hat, dtype=float) - np.asarray(p, dtype=float)) * 1000.0)


def e_ori(n_hat: ArrayLike, n: ArrayLike) -> float:
    """方向夹角误差（度），余弦先截断到 [-1, 1]"""
    n_hat = np.asarray(n_hat, dtype=float)
    n = np.asarray(n, dtype=float)
    cosine = float(n_hat @ n) / (np.linalg.norm(n_hat) * np.linalg.norm(n))
    return math.degrees(math.acos(min(1.0, max(-1.0, cosine))))


class ErrorSummary(BaseModel):
    mean: float
    std: float
    rmse: float
    max: float
    p95: float


class ErrorStats(BaseModel):
    """E_pos（mm）与 E_ori（度）的汇总，std 为总体标准差，满足 rmse² = mean² + std²"""

    pos: ErrorSummary
    ori: ErrorSummary
    n_trials: int
    n_converged: int
    mean_wall_time_ms: float


class TrialSpec(BaseModel):
    """蒙特卡洛试验设置"""

    model_config = ConfigDict(frozen=True, extra='forbid')

    n_trials: int = Field(default=1000, ge=1)
    workspace: WorkspaceSpec = WorkspaceSpec()
    seed: int = Field(default=0, ge=0)
    b_clip: float = Field(default=DEFAULT_B_CLIP, gt=0.0)
    dp: float = DEFAULT_DP
    dn: float = DEFAULT_DN
    include_nonconverged: bool = True


class LevelStats(BaseModel):
    z: float
    stats: ErrorStats
    crlb_pos_median_mm: float
    crlb_ori_median_deg: float


class LayerProfile(BaseModel):
    z_levels: List[float]
    levels: List[LevelStats]


class CrlbComparison(BaseModel):
    mc_rmse_pos: float
    crlb_pos: float
    mc_rmse_ori: float
    crlb_ori: float
    crlb_ori_chart: float
    ratio_pos: float
    ratio_ori: float
    n_trials: int
    n_converged: int
    degenerate: bool = False

    @property
    def ratio(self) -> float:
        return min(self.ratio_pos, self.ratio_ori)

    @property
    def dominated(self) -> bool:
        return self.ratio_pos >= CRLB_SLACK and self.ratio_ori >= CRLB_SLACK


@dataclass(frozen=True, eq=False)
class TrialOutcome:
    pos_error_mm: float
    ori_error_deg: float
    converged: bool
    wall_time: float


def summarize_errors(errors: ArrayLike) -> ErrorSummary:
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        return ErrorSummary(mean=math.nan, std=math.nan, rmse=math.nan, max=math.nan, p95=math.nan)
    return ErrorSummary(
        mean=float(np.mean(errors)),
        std=float(np.std(errors)),
        rmse=float(np.sqrt(np.mean(errors ** 2))),
        max=float(np.max(errors)),
        p95=float(np.quantile(errors, 0.95, method='linear')),
    )


def aggregate(outcomes: Sequence[TrialOutcome], include_nonconverged: bool = True) -> ErrorStats:
    """
    汇总试验结果

    默认包含不收敛的求解（失败也是数据）；耗时均值排除第一次调用（预热）。
    """
    converged = [outcome.converged for outcome in outcomes]
    kept = [o for o in outcomes if include_nonconverged or o.converged]
    timed = outcomes[1:] if len(outcomes) > 1 else outcomes
    return ErrorStats(
        pos=summarize_errors([o.pos_error_mm for o in kept]),
        ori=summarize_errors([o.ori_error_deg for o in kept]),
        n_trials=len(outcomes),
        n_converged=int(sum(converged)),
        mean_wall_time_ms=float(np.mean([o.wall_time for o in timed]) * 1000.0),
    )


def run_trial(
    pose: Pose5,
    layout: SensorLayout,
    model: MagnetModel,
    noise_mode: NoiseMode,
    config: LmConfig,
    trials: TrialSpec,
    rng: np.random.Generator,
) -> TrialOutcome:
    """一次试验：仿真观测（截断 + 噪声）→ 固定扰动初值 → LM → 误差"""
    meas = simulate_record(pose, layout, model, trials.b_clip, noise_mode, rng)
    estimate = lm_solve(meas, layout, model, perturbed_init(pose, trials.dp, trials.dn), config)
    return TrialOutcome(
        pos_error_mm=e_pos(estimate.p_hat, pose.p),
        ori_error_deg=e_ori(estimate.n_hat, pose.n),
        converged=estimate.converged,
        wall_time=estimate.wall_time,
    )


def run_trials(
    poses: Sequence[Pose5],
    layout: SensorLayout,
    model: MagnetModel,
    noise_mode: NoiseMode,
    config: LmConfig,
    trials: TrialSpec,
    threads: Optional[int] = 1,
) -> List[TrialOutcome]:
    """每个试验的随机流由 (seed, 试验序号) 决定，与线程数无关"""

    def one(index: int) -> TrialOutcome:
        return run_trial(poses[index], layout, model, noise_mode, config, trials, record_rng(trials.seed, index))

    return parallel_map(one, range(len(poses)), threads)


def run_mc(
    layout: SensorLayout,
    model: MagnetModel,
    noise_mode: NoiseMode,
    config: Optional[LmConfig] = None,
    trials: Optional[TrialSpec] = None,
    threads: Optional[int] = 1,
) -> ErrorStats:
    """在 LHS 真值位姿上重复“仿真-求解-评估”"""
    config = config or LmConfig()
    trials = trials or TrialSpec()
    poses = lhs_sample(trials.workspace.with_samples(trials.n_trials, seed=trials.seed))
    outcomes = run_trials(poses, layout, model, noise_mode, config, trials, threads)
    stats = aggregate(outcomes, trials.include_nonconverged)
    if stats.n_converged < stats.n_trials:
        logger.warning(f"{stats.n_trials - stats.n_converged} of {stats.n_trials} LM solves did not converge")
    logger.info(
        f"MC '{layout.name}' ({noise_mode.label}): RMSE pos {stats.pos.rmse:.4f} mm, "
        f"ori {stats.ori.rmse:.4f} deg"
    )
    return stats


def layer_profile(
    layout: SensorLayout,
    model: MagnetModel,
    noise_mode: NoiseMode,
    config: Optional[LmConfig],
    z_levels: Sequence[float],
    trials_per_level: int,
    seed: int = 0,
    b_clip: float = DEFAULT_B_CLIP,
    crlb_sigma: Optional[float] = None,
    workspace: Optional[WorkspaceSpec] = None,
    threads: Optional[int] = 1,
) -> LayerProfile:
    """
    Z 轴分层误差剖面

    每层固定 z，对 (x, y, ψ, cosθ) 做 LHS；同时给出该层 CRLB 中位数（crlb_sigma 缺省时记为 NaN）。
    """
    config = config or LmConfig()
    levels = sorted(float(z) for z in z_levels)
    if not levels:
        raise InvariantViolation("at least one z level is required")
    base = (workspace or WorkspaceSpec()).with_samples(trials_per_level, seed=seed)
    trials = TrialSpec(n_trials=trials_per_level, workspace=base, seed=seed, b_clip=b_clip)

    results = []
    for level_index, z in enumerate(levels):
        level_spec = base.with_samples(trials_per_level, seed=seed + level_index)
        poses = lhs_sample_fixed_z(level_spec, z)
        level_trials = trials.model_copy(update={'seed': seed + level_index})
        stats = aggregate(
            run_trials(poses, layout, model, noise_mode, config, level_trials, threads),
            trials.include_nonconverged,
        )
        crlb_pos = crlb_ori = math.nan
        if crlb_sigma:
            try:
                sweep = sweep_fixed_z(layout, level_spec, z, model, NoiseModel(crlb_sigma), threads)
                crlb_pos, crlb_ori = sweep.median('pos_bound_mm'), sweep.median('ori_bound_deg')
            except AllDegenerate:
                logger.warning(f"All poses degenerate at z = {z:.3f} m")
        logger.info(f"Layer z={z:.3f} m: RMSE pos {stats.pos.rmse:.4f} mm")
        results.append(LevelStats(z=z, stats=stats, crlb_pos_median_mm=crlb_pos, crlb_ori_median_deg=crlb_ori))
    return LayerProfile(z_levels=levels, levels=results)


def crlb_profile(
    layout: SensorLayout,
    model: MagnetModel,
    noise: NoiseModel,
    z_levels: Sequence[float],
    samples_per_level: int,
    seed: int = 0,
    threads: Optional[int] = 1,
) -> NDArray[np.float64]:
    """各层 CRLB 位置界中位数（mm），不运行求解器"""
    medians = []
    for level_index, z in enumerate(sorted(z_levels)):
        spec = WorkspaceSpec(n_samples=samples_per_level, seed=seed + level_index)
        medians.append(sweep_fixed_z(layout, spec, z, model, noise, threads).median('pos_bound_mm'))
    return np.array(medians)


def compare_crlb(
    layout: SensorLayout,
    model: MagnetModel,
    noise: NoiseModel,
    pose: Pose5,
    config: Optional[LmConfig] = None,
    n_trials: int = 1000,
    seed: int = 0,
    threads: Optional[int] = 1,
) -> CrlbComparison:
    """
    固定位姿、重复噪声的蒙特卡洛 RMSE 与 CRLB 对比

    方向误差按夹角计，因此比较对象是切平面角误差下界；
    按 (ψ, θ) 坐标计算的 ori_bound 作为 crlb_ori_chart 一并给出。不做饱和截断。
    """
    config = config or LmConfig()
    report = crlb_metrics(build_fim(pose, layout, model, noise))
    if report.degenerate:
        logger.warning("compare_crlb called on a degenerate pose")
        return CrlbComparison(
            mc_rmse_pos=math.nan, crlb_pos=math.inf, mc_rmse_ori=math.nan, crlb_ori=math.inf,
            crlb_ori_chart=math.inf, ratio_pos=math.nan, ratio_ori=math.nan,
            n_trials=0, n_converged=0, degenerate=True,
        )
    crlb_ori = angular_ori_bound_deg(report.fim, pose.theta)
    trials = TrialSpec(n_trials=n_trials, seed=seed, b_clip=math.inf)
    noise_mode = NoiseMode(kind='absolute', value=noise.sigma)
    outcomes = run_trials([pose] * n_trials, layout, model, noise_mode, config, trials, threads)
    stats = aggregate(outcomes)
    return CrlbComparison(
        mc_rmse_pos=stats.pos.rmse,
        crlb_pos=report.pos_bound_mm,
        mc_rmse_ori=stats.ori.rmse,
        crlb_ori=crlb_ori,
        crlb_ori_chart=report.ori_bound_deg,
        ratio_pos=stats.pos.rmse / report.pos_bound_mm,
        ratio_ori=stats.ori.rmse / crlb_ori,
        n_trials=stats.n_trials,
        n_converged=stats.n_converged,
    )


def noiseless_meas(pose: Pose5, layout: SensorLayout, model: MagnetModel) -> FieldVector:
    """无噪声、无截断的观测"""
    return simulate_record(pose, layout, model, math.inf, NoiseMode(), record_rng(0, 0))
