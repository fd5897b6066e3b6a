# src/mrkd/autodiff/optim.py
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ParameterError
from .tensor import Parameter

DEFAULT_BASE_LR = 0.001
DEFAULT_MOMENTUM = 0.9


@dataclass
class OptimizerState:
    base_lr: float = DEFAULT_BASE_LR
    momentum: float = DEFAULT_MOMENTUM
    epoch: int = 0
    total_epochs: int = 1
    weight_decay: float = 0.0

    def advance(self, epochs: int = 1) -> None:
        self.epoch += epochs


def cosine_lr(state: OptimizerState) -> float:
    """lr(t) = 0.5 * base_lr * (1 + cos(pi * t / total_epochs)), как CosineAnnealingLR без eta_min."""
    if state.total_epochs < 1:
        raise ParameterError(f"total_epochs must be >= 1, got {state.total_epochs}")
    if not 0 <= state.epoch <= state.total_epochs:
        raise ParameterError(f"epoch {state.epoch} is outside [0, {state.total_epochs}]")
    lr = 0.5 * state.base_lr * (1.0 + math.cos(math.pi * state.epoch / state.total_epochs))
    return min(max(lr, 0.0), state.base_lr)


def sgd_step(
    params: Sequence[np.ndarray],
    grads: Sequence[Optional[np.ndarray]],
    state: OptimizerState,
    velocities: Optional[List[Optional[np.ndarray]]] = None,
) -> List[Optional[np.ndarray]]:
    """
    Один шаг SGD с моментумом (вариант PyTorch: v = mu*v + g; theta -= lr*v).
    Параметры обновляются на месте, возвращаются новые скорости.
    """
    lr = cosine_lr(state)
    if velocities is None:
        velocities = [None] * len(params)
    out: List[Optional[np.ndarray]] = []
    for param, grad, velocity in zip(params, grads, velocities):
        if grad is None:
            out.append(velocity)
            continue
        if state.weight_decay:
            grad = grad + state.weight_decay * param
        if state.momentum:
            velocity = grad.copy() if velocity is None else state.momentum * velocity + grad
            update = velocity
        else:
            update = grad
        param -= (lr * update).astype(param.dtype, copy=False)
        out.append(velocity)
    return out


class SGD:
    def __init__(self, named_params: List[Tuple[str, Parameter]], state: OptimizerState) -> None:
        self.named_params = named_params
        self.state = state
        self.velocity: "OrderedDict[str, Optional[np.ndarray]]" = OrderedDict((name, None) for name, _ in named_params)

    @property
    def lr(self) -> float:
        return cosine_lr(self.state)

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.zero_grad()

    def step(self) -> None:
        names = [name for name, _ in self.named_params]
        params = [p.data for _, p in self.named_params]
        grads = [p.grad for _, p in self.named_params]
        velocities = sgd_step(params, grads, self.state, [self.velocity[n] for n in names])
        for name, velocity in zip(names, velocities):
            self.velocity[name] = velocity

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, velocity in self.velocity.items():
            if velocity is not None:
                state[f"optim.velocity.{name}"] = velocity
        state["optim.epoch"] = np.array([self.state.epoch], dtype=np.float32)
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name in self.velocity:
            key = f"optim.velocity.{name}"
            self.velocity[name] = np.array(state[key]) if key in state else None
        if "optim.epoch" in state:
            self.state.epoch = int(state["optim.epoch"][0])
