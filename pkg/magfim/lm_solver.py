"""
Levenberg-Marquardt 位姿求解器
由磁场观测反解磁铁位置与方向；状态为 6 维 (p, m)，残差使用归一化方向 m/|m|
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .dipole_core import (
    FieldVector,
    MagnetModel,
    Pose5,
    dipole_field,
    displacements,
    field_gradient,
    field_orientation_derivative,
)
from .exceptions import DegenerateDistance, InvariantViolation, NonFinite, SingularNormalEquations
from .geometry_catalog import SensorLayout

logger = logging.getLogger(__name__)


MIN_ORIENTATION_NORM = 1e-6
POSITION_SCALE = 0.1  # m，步长范数中位置分量除以该尺度
DEFAULT_DP = 0.020  # m
DEFAULT_DN = 0.3


class LmConfig(BaseModel):
    """阻尼调度与停止准则（常规 Marquardt 设置）"""

    model_config = ConfigDict(frozen=True, extra='forbid')

    lambda0: float = Field(default=1e-3, gt=0.0)
    lambda_up: float = Field(default=10.0, gt=1.0)
    lambda_down: float = Field(default=0.1, gt=0.0, lt=1.0)
    max_iters: int = Field(default=100, ge=1)
    step_tol: float = Field(default=1e-9, ge=0.0)
    resid_tol: float = Field(default=1e-10, ge=0.0)
    use_sat_mask: bool = False

    @model_validator(mode='after')
    def _check_schedule(self) -> 'LmConfig':
        if not self.lambda_up > 1.0 > self.lambda_down:
            raise ValueError("damping multipliers must satisfy lambda_up > 1 > lambda_down")
        return self


@dataclass(frozen=True)
class LmState6:
    """求解器内部状态：位置 p 与未归一化方向 m"""

    p: NDArray[np.float64]
    m: NDArray[np.float64]

    def __post_init__(self):
        p = np.array(self.p, dtype=np.float64).reshape(3)
        m = np.array(self.m, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(m))):
            raise NonFinite("LM state must be finite")
        if np.linalg.norm(m) <= MIN_ORIENTATION_NORM:
            raise InvariantViolation(f"orientation norm must exceed {MIN_ORIENTATION_NORM}")
        p.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, 'p', p)
        object.__setattr__(self, 'm', m)

    def as_vector(self) -> NDArray[np.float64]:
        return np.concatenate([self.p, self.m])

    @classmethod
    def from_vector(cls, x: ArrayLike) -> 'LmState6':
        x = np.asarray(x, dtype=np.float64)
        return cls(p=x[:3], m=x[3:])


@dataclass(frozen=True, eq=False)
class LmEstimate:
    p_hat: NDArray[np.float64]
    n_hat: NDArray[np.float64]
    residual_rms: float
    iters: int
    converged: bool
    wall_time: float
    cost_trace: List[float] = field(default_factory=list)


def perturbed_init(gt_pose: Pose5, dp: float = DEFAULT_DP, dn: float = DEFAULT_DN) -> LmState6:
    """固定扰动初值：位置各分量 +dp，方向向量各分量 +dn"""
    return LmState6(p=gt_pose.p + dp, m=gt_pose.n + dn)


def predict(state_vector: NDArray, sensors: NDArray, b_t: float) -> NDArray:
    """ŷ(p, m/|m|)，返回 3N 维"""
    p, m = state_vector[:3], state_vector[3:]
    n = m / np.linalg.norm(m)
    d, dist = displacements(p[np.newaxis, :], sensors)
    return dipole_field(d, dist, n, b_t).reshape(-1)


def predict_jacobian(state_vector: NDArray, sensors: NDArray, b_t: float) -> NDArray:
    """
    3N×6 链式雅可比

    ∂ŷ/∂p = -∂B/∂d；∂ŷ/∂m = ∂B/∂n · (I - n nᵀ)/|m|，沿 m 方向为零空间。
    """
    p, m = state_vector[:3], state_vector[3:]
    norm_m = np.linalg.norm(m)
    n = m / norm_m
    d, dist = displacements(p[np.newaxis, :], sensors)
    grad = field_gradient(d[0], dist[0], n, b_t)
    db_dn = field_orientation_derivative(d[0], dist[0], b_t)
    projector = (np.eye(3) - np.outer(n, n)) / norm_m
    jac = np.empty((len(sensors), 3, 6))
    jac[..., :3] = -grad
    jac[..., 3:] = db_dn @ projector
    return jac.reshape(-1, 6)


def _solve_damped(normal: NDArray, gradient: NDArray, damping: float) -> NDArray:
    """(JᵀJ + λ diag(JᵀJ)) δ = Jᵀr，失败时退回 (JᵀJ + λI)"""
    for regularizer in (np.diag(np.diag(normal)), np.eye(len(normal))):
        system = normal + damping * regularizer
        try:
            delta = np.linalg.solve(system, gradient)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(delta)):
            return delta
    raise SingularNormalEquations(f"damped normal equations are singular (lambda={damping:.3e})")


def _step_norm(delta: NDArray) -> float:
    return float(np.linalg.norm(np.concatenate([delta[:3] / POSITION_SCALE, delta[3:]])))


def lm_solve(
    meas: FieldVector,
    layout: SensorLayout,
    model: MagnetModel,
    init: LmState6,
    config: Optional[LmConfig] = None,
) -> LmEstimate:
    """
    最小化 |meas - ŷ(p, m/|m|)|²

    步长使代价下降则接受并减小阻尼，否则拒绝并增大阻尼；
    相对代价变化 < resid_tol 或缩放步长 < step_tol 视为收敛。
    不收敛不抛异常，由 converged 标记返回。
    """
    config = config or LmConfig()
    if len(meas.b) != 3 * layout.n_sensors:
        raise InvariantViolation(
            f"measurement has {len(meas.b)} channels, layout expects {3 * layout.n_sensors}"
        )
    if not np.all(np.isfinite(meas.b)):
        raise NonFinite("measurement contains NaN or infinite channels")

    start = time.perf_counter()
    keep = ~meas.sat_mask if config.use_sat_mask else np.ones(len(meas.b), dtype=bool)
    if not np.any(keep):
        raise InvariantViolation("every channel is saturated; nothing left to fit")
    observed = meas.b[keep]
    sensors = layout.positions

    def residual(x: NDArray) -> NDArray:
        return observed - predict(x, sensors, model.b_t)[keep]

    x = init.as_vector()
    r = residual(x)
    cost = float(r @ r)
    costs = [cost]
    damping = config.lambda0
    converged = False
    iters = 0

    for iters in range(1, config.max_iters + 1):
        jac = predict_jacobian(x, sensors, model.b_t)[keep]
        normal = jac.T @ jac
        gradient = jac.T @ r
        delta = _solve_damped(normal, gradient, damping)

        if _step_norm(delta) < config.step_tol:
            converged = True
            break

        candidate = x + delta
        if np.linalg.norm(candidate[3:]) <= MIN_ORIENTATION_NORM:
            damping *= config.lambda_up
            continue
        try:
            r_new = residual(candidate)
        except DegenerateDistance:
            damping *= config.lambda_up
            continue
        cost_new = float(r_new @ r_new)

        if cost_new < cost:
            relative_change = (cost - cost_new) / cost
            x, r, cost = candidate, r_new, cost_new
            costs.append(cost)
            damping *= config.lambda_down
            logger.debug(f"LM iter {iters}: cost {cost:.6e}, lambda {damping:.1e}")
            if relative_change < config.resid_tol:
                converged = True
                break
        else:
            damping *= config.lambda_up

    wall_time = time.perf_counter() - start
    if not converged:
        logger.debug(f"LM did not converge within {config.max_iters} iterations (cost {cost:.3e})")

    m = x[3:]
    return LmEstimate(
        p_hat=x[:3].copy(),
        n_hat=m / np.linalg.norm(m),
        residual_rms=math.sqrt(cost / len(observed)),
        iters=iters,
        converged=converged,
        wall_time=wall_time,
        cost_trace=costs,
    )


def residual_cost(meas: FieldVector, layout: SensorLayout, model: MagnetModel, p: ArrayLike, n: ArrayLike) -> float:
    """给定 (p, n) 的平方残差和"""
    x = np.concatenate([np.asarray(p, dtype=float), np.asarray(n, dtype=float)])
    r = meas.b - predict(x, layout.positions, model.b_t)
    return float(r @ r)


def solve_from_truth(
    meas: FieldVector,
    layout: SensorLayout,
    model: MagnetModel,
    gt_pose: Pose5,
    config: Optional[LmConfig] = None,
    dp: float = DEFAULT_DP,
    dn: float = DEFAULT_DN,
) -> Tuple[LmEstimate, LmState6]:
    """按固定扰动协议初始化并求解"""
    init = perturbed_init(gt_pose, dp=dp, dn=dn)
    return lm_solve(meas, layout, model, init, config), init
