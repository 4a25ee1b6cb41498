"""Meta-adaptive EMA teacher update.

Cosine base momentum, a small MLP controller that scales it, clamping, the
importance-damped per-parameter update and the drift reset.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import expit

from core.errors import ConfigurationError, NumericError, PreconditionError, ShapeError
from core.importance import ImportanceMap
from core.nnet import ParamVector

logger = logging.getLogger(__name__)

GAMMA_LOW = 0.995
GAMMA_SPAN = 0.01
_PRE_SIGMOID_CLIP = 30.0  # keeps gamma strictly inside (0.995, 1.005)


class EmaConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    m0: float = Field(default=0.996, gt=0, lt=1)
    m_min: float = 0.99
    m_max: float = 0.9999
    eta: float = Field(default=1.0, ge=0)
    delta: float = 0.01  # -inf disables the reset
    reset_factor: float = Field(default=0.6, gt=0, le=1)
    reset_direction: Literal["printed", "drift"] = "printed"
    total_steps: int = Field(default=1, ge=1)
    use_importance: bool = True
    use_dynamic: bool = True
    raw_importance: bool = False
    controller_hidden: int = Field(default=16, ge=1)
    controller_seed: int = Field(default=0, ge=0)
    controller_mode: Literal["frozen", "fd"] = "frozen"
    controller_every: int = Field(default=5, ge=1)
    controller_lr: float = Field(default=0.05, gt=0)
    controller_fd_step: float = Field(default=1e-3, gt=0)

    @model_validator(mode="after")
    def _check_bounds(self):
        if not 0.0 < self.m_min <= self.m_max < 1.0:
            raise ValueError(f"need 0 < m_min <= m_max < 1, got {self.m_min}, {self.m_max}")
        if not self.m_min <= self.m0 <= self.m_max:
            raise ValueError(f"m0={self.m0} must lie in [m_min, m_max]")
        return self


@dataclass(frozen=True, eq=False)
class MetaControllerState:
    W1: np.ndarray  # (hidden, 3)
    b1: np.ndarray
    W2: np.ndarray  # (hidden,)
    b2: float
    seed: int = 0

    @property
    def hidden(self) -> int:
        return len(self.b1)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.W2, [self.b2]])

    def from_flat(self, values: np.ndarray) -> "MetaControllerState":
        h = self.hidden
        values = np.asarray(values, dtype=np.float64)
        if len(values) != 5 * h + 1:
            raise ShapeError(f"controller has {5 * h + 1} weights, got {len(values)}")
        return MetaControllerState(
            W1=values[:3 * h].reshape(h, 3),
            b1=values[3 * h:4 * h],
            W2=values[4 * h:5 * h],
            b2=float(values[-1]),
            seed=self.seed,
        )


def init_controller(hidden: int = 16, seed: int = 0) -> MetaControllerState:
    rng = np.random.default_rng(seed)
    a1 = math.sqrt(6.0 / (3 + hidden))
    a2 = math.sqrt(6.0 / (hidden + 1))
    return MetaControllerState(
        W1=rng.uniform(-a1, a1, size=(hidden, 3)),
        b1=np.zeros(hidden),
        W2=rng.uniform(-a2, a2, size=hidden),
        b2=0.0,
        seed=seed,
    )


@dataclass(frozen=True)
class EmaInputs:
    delta_loss: float  # teacher minus student validation loss
    teacher_loss: float
    progress: float  # t / T

    def __post_init__(self):
        if not (math.isfinite(self.delta_loss) and math.isfinite(self.teacher_loss)):
            raise NumericError(f"controller inputs must be finite, got {self.delta_loss}, {self.teacher_loss}")
        if not 0.0 <= self.progress <= 1.0:
            raise PreconditionError(f"progress must lie in [0, 1], got {self.progress}")

    def vector(self) -> np.ndarray:
        return np.array([self.delta_loss, self.teacher_loss, self.progress])


def base_momentum(t: int, T: int, m0: float) -> float:
    """1 - (1 - m0) * (cos(pi t / T) + 1) / 2"""
    if T < 1 or not 0 <= t <= T:
        raise ConfigurationError(f"need 0 <= t <= T and T >= 1, got t={t}, T={T}")
    return 1.0 - (1.0 - m0) * (math.cos(math.pi * t / T) + 1.0) / 2.0


def controller_gamma(inputs: EmaInputs, ctrl: MetaControllerState) -> float:
    hidden = np.maximum(ctrl.W1 @ inputs.vector() + ctrl.b1, 0.0)
    pre = float(ctrl.W2 @ hidden + ctrl.b2)
    pre = float(np.clip(np.nan_to_num(pre, nan=0.0), -_PRE_SIGMOID_CLIP, _PRE_SIGMOID_CLIP))
    return float(expit(pre)) * GAMMA_SPAN + GAMMA_LOW


def effective_momentum(gamma: float, m_base: float, cfg: EmaConfig) -> float:
    return float(min(max(gamma * m_base, cfg.m_min), cfg.m_max))


def _check_aligned(teacher: ParamVector, student: ParamVector, m: float) -> None:
    if not teacher.aligned_with(student):
        raise ShapeError(f"teacher ({teacher.total_len}) and student ({student.total_len}) parameters differ")
    if not 0.0 <= m <= 1.0:
        raise PreconditionError(f"momentum must lie in [0, 1], got {m}")


def ema_update_fixed(teacher: ParamVector, student: ParamVector, m: float) -> ParamVector:
    """theta_T <- m * theta_T + (1 - m) * theta_S

    Evaluated as theta_S + m * (theta_T - theta_S): m = 0 copies the student
    exactly and equal parameters stay put.
    """
    _check_aligned(teacher, student, m)
    return teacher.replace(student.values + m * (teacher.values - student.values))


def ema_update_regularized(teacher: ParamVector, student: ParamVector, m: float, omega: ImportanceMap,
                           eta: float) -> ParamVector:
    """theta_T,i <- theta_T,i + (1 - m) / (1 + eta * omega_i) * (theta_S,i - theta_T,i)

    Same form as ema_update_fixed with a per-parameter momentum
    (m + eta * omega_i) / (1 + eta * omega_i); eta = 0 reproduces it bit for bit.
    """
    _check_aligned(teacher, student, m)
    if len(omega.omega) != teacher.total_len:
        raise ShapeError(f"importance map has {len(omega.omega)} entries, parameters {teacher.total_len}")
    if eta < 0:
        raise PreconditionError(f"eta must be non-negative, got {eta}")
    pull = eta * omega.omega
    keep = (m + pull) / (1.0 + pull)
    return teacher.replace(student.values + keep * (teacher.values - student.values))


def reset_triggered(sup_loss: float, teacher_loss: float, cfg: EmaConfig) -> bool:
    if cfg.delta == -math.inf:
        return False
    if not (math.isfinite(sup_loss) and math.isfinite(teacher_loss)):
        raise NumericError(f"reset check needs finite losses, got {sup_loss}, {teacher_loss}")
    if cfg.reset_direction == "printed":
        return sup_loss - teacher_loss < cfg.delta
    return teacher_loss - sup_loss > cfg.delta


def maybe_reset(sup_loss: float, teacher_loss: float, cfg: EmaConfig, m: float) -> float:
    return cfg.reset_factor * m if reset_triggered(sup_loss, teacher_loss, cfg) else m


@dataclass(frozen=True)
class MomentumDecision:
    m_base: float
    gamma: float
    m_effective: float
    reset: bool
    m: float  # momentum actually applied


def decide_momentum(cfg: EmaConfig, ctrl: MetaControllerState, step: int, teacher_loss: float,
                    student_loss: float) -> MomentumDecision:
    """Base schedule, controller scaling, clamp and reset for one teacher update."""
    m_base = base_momentum(step, cfg.total_steps, cfg.m0)
    inputs = EmaInputs(teacher_loss - student_loss, teacher_loss, step / cfg.total_steps)
    gamma = controller_gamma(inputs, ctrl)
    m_eff = effective_momentum(gamma, m_base, cfg)
    reset = reset_triggered(student_loss, teacher_loss, cfg)
    m = maybe_reset(student_loss, teacher_loss, cfg, m_eff)
    return MomentumDecision(m_base=m_base, gamma=gamma, m_effective=m_eff, reset=reset, m=m)


def fd_controller_step(ctrl: MetaControllerState, objective: Callable[[MetaControllerState], float],
                       lr: float, h: float) -> MetaControllerState:
    """One central-difference descent step on the controller weights."""
    theta = ctrl.flat()
    grad = np.zeros_like(theta)
    for i in range(len(theta)):
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (objective(ctrl.from_flat(up)) - objective(ctrl.from_flat(down))) / (2.0 * h)
    if not np.all(np.isfinite(grad)):
        raise NumericError("controller finite-difference gradient is not finite")
    logger.debug(f"Controller step: |grad| {np.linalg.norm(grad):.4g}")
    return ctrl.from_flat(theta - lr * grad)
