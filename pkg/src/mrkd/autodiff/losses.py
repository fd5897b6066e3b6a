# src/mrkd/autodiff/losses.py
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np

from ..errors import InvalidDistributionError, ParameterError, ShapeError
from .tensor import Function, Tensor, as_tensor

EPS = 1e-12
ROW_SUM_TOLERANCE = 1e-4


class KLDirection(str, Enum):
    # forward: KL(student || teacher), как в формуле; reverse: KL(teacher || student)
    FORWARD = "forward"
    REVERSE = "reverse"


@dataclass(frozen=True)
class LossValues:
    l_ce: float
    l_kl: float
    l_d: float

    @classmethod
    def combine(cls, l_ce: float, l_kl: float) -> "LossValues":
        l_ce, l_kl = float(l_ce), float(l_kl)
        return cls(l_ce=l_ce, l_kl=l_kl, l_d=l_ce + l_kl)


def softmax_rows(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = logits / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def entropy_rows(probs: np.ndarray) -> np.ndarray:
    p = np.maximum(probs, EPS)
    return -(probs * np.log(p)).sum(axis=-1)


def _check_rows(name: str, values: np.ndarray) -> None:
    if values.ndim != 2:
        raise ShapeError(name, values.shape, ("batch", "M"))
    sums = values.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > ROW_SUM_TOLERANCE) or np.any(values < 0):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise InvalidDistributionError(f"{name}: rows are not probability distributions (max |sum-1|={worst:.3g})")


class Soften(Function):
    def forward(self, logits, temperature: float = 1.0):
        if temperature <= 0:
            raise ParameterError(f"temperature must be > 0, got {temperature}")
        if logits.ndim != 2 or logits.shape[1] < 2:
            raise ShapeError("soften", logits.shape, ("batch", "M>=2"))
        self.temperature = temperature
        self.probs = softmax_rows(logits, temperature)
        return self.probs

    def backward(self, grad):
        p = self.probs
        dz = p * (grad - (grad * p).sum(axis=1, keepdims=True))
        return (dz / self.temperature,)


def soften(logits: Tensor, temperature: float = 1.0) -> Tensor:
    """Смягчённый softmax: exp(g_i/T) / sum_j exp(g_j/T), с вычитанием максимума."""
    return Soften.apply(logits, temperature=temperature)


class CrossEntropy(Function):
    def forward(self, probs, targets):
        if probs.shape != targets.shape:
            raise ShapeError("cross_entropy", probs.shape, targets.shape)
        _check_rows("cross_entropy probs", probs)
        _check_rows("cross_entropy targets", targets)
        self.clamped = np.maximum(probs, EPS)
        self.active = probs > EPS
        self.targets = targets
        self.n = probs.shape[0]
        return np.asarray(-(targets * np.log(self.clamped)).sum() / self.n, dtype=probs.dtype)

    def backward(self, grad):
        dp = -grad * self.targets / self.clamped * self.active / self.n
        return dp.astype(self.clamped.dtype, copy=False), None


def cross_entropy(probs: Tensor, targets) -> Tensor:
    """-(1/N) sum_i sum_c t_ic log p_ic; p зажимается снизу на 1e-12."""
    targets = as_tensor(targets, probs.dtype)
    return CrossEntropy.apply(probs, targets)


class KLToTeacher(Function):
    def forward(self, student, teacher, direction: KLDirection = KLDirection.FORWARD):
        if student.shape != teacher.shape:
            raise ShapeError("kl_to_teacher", student.shape, teacher.shape)
        s = np.maximum(student, EPS)
        t = np.maximum(teacher, EPS)
        self.s, self.t = s, t
        self.active = student > EPS
        self.n = student.shape[0]
        self.direction = KLDirection(direction)
        if self.direction is KLDirection.FORWARD:
            value = (s * np.log(s / t)).sum() / self.n
        else:
            value = (t * np.log(t / s)).sum() / self.n
        return np.asarray(value, dtype=student.dtype)

    def backward(self, grad):
        if self.direction is KLDirection.FORWARD:
            ds = (np.log(self.s / self.t) + 1.0) * self.active
        else:
            ds = -(self.t / self.s) * self.active
        # учитель зафиксирован: градиент только по студенту
        return (grad * ds / self.n).astype(self.s.dtype, copy=False), None


def kl_to_teacher(student: Tensor, teacher, direction: KLDirection | str = KLDirection.FORWARD) -> Tensor:
    teacher = as_tensor(teacher, student.dtype).detach()
    return KLToTeacher.apply(student, teacher, direction=KLDirection(direction))


def distillation_loss(
    logits: Tensor,
    targets,
    teacher,
    temperature: float,
    direction: KLDirection | str = KLDirection.FORWARD,
    t_squared: bool = False,
    kl_weight: float = 1.0,
) -> Tuple[Tensor, LossValues]:
    """
    L_d = L_ce + L_kl. Студент в L_kl смягчается той же температурой, что и учитель.
    t_squared включает классическую компенсацию T^2 (по умолчанию выключена).
    """
    l_ce = cross_entropy(soften(logits, 1.0), targets)
    scale = kl_weight * (temperature ** 2 if t_squared else 1.0)
    if scale == 0.0:
        return l_ce, LossValues.combine(l_ce.item(), 0.0)
    l_kl = kl_to_teacher(soften(logits, temperature), teacher, direction)
    if scale != 1.0:
        l_kl = l_kl * scale
    return l_ce + l_kl, LossValues.combine(l_ce.item(), l_kl.item())
