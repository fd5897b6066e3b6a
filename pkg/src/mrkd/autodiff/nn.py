# src/mrkd/autodiff/nn.py
from __future__ import annotations

from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ShapeError
from . import functional as F
from .tensor import Parameter, Tensor


class Module:
    """
    Минимальный контейнер слоёв: параметры и буферы находятся обходом атрибутов
    в порядке их создания, поэтому имена стабильны между запусками.
    """

    def __init__(self) -> None:
        self.training = True
        self._buffers: Dict[str, np.ndarray] = OrderedDict()

    def __call__(self, *args, **kwargs) -> Tensor:
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs) -> Tensor:
        raise NotImplementedError

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_") or name == "training":
                continue
            if isinstance(value, (Module, Parameter)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, child in enumerate(value):
                    yield f"{name}.{i}", child

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Parameter]]:
        out: List[Tuple[str, Parameter]] = []
        for name, child in self._children():
            full = f"{prefix}{name}"
            if isinstance(child, Parameter):
                out.append((full, child))
            else:
                out.extend(child.named_parameters(prefix=f"{full}."))
        return out

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> List[Tuple[str, np.ndarray]]:
        out = [(f"{prefix}{name}", buf) for name, buf in self._buffers.items()]
        for name, child in self._children():
            if isinstance(child, Module):
                out.extend(child.named_buffers(prefix=f"{prefix}{name}."))
        return out

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self._children():
            if isinstance(child, Module):
                yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, p in self.named_parameters():
            state[f"param.{name}"] = p.data
        for name, buf in self.named_buffers():
            state[f"buffer.{name}"] = buf
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = []
        for name, p in own.items():
            key = f"param.{name}"
            if key not in state:
                missing.append(key)
                continue
            if state[key].shape != p.shape:
                raise ShapeError(f"load {key}", state[key].shape, p.shape)
            p.data = np.array(state[key], dtype=p.dtype)
        for name, buf in buffers.items():
            key = f"buffer.{name}"
            if key not in state:
                missing.append(key)
                continue
            buf[...] = state[key]
        if strict and missing:
            raise KeyError(f"state is missing entries: {', '.join(missing)}")

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))


def he_normal(rng: np.random.Generator, shape: Sequence[int], fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: str = "same",
        bias: bool = False,
        dtype=np.float32,
    ) -> None:
        super().__init__()
        fan_in = in_channels * kernel * kernel
        self.weight = Parameter(he_normal(rng, (out_channels, in_channels, kernel, kernel), fan_in, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32) -> None:
        super().__init__()
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self._buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self._buffers["running_var"] = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x,
            self.gamma,
            self.beta,
            self._buffers["running_mean"],
            self._buffers["running_var"],
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype=np.float32) -> None:
        super().__init__()
        scale = np.sqrt(1.0 / in_features)
        self.weight = Parameter((rng.standard_normal((out_features, in_features)) * scale).astype(dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class ConvBNReLU(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        stride: int = 1,
        relu: bool = True,
        kernel: int = 3,
        dtype=np.float32,
    ) -> None:
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, kernel, rng, stride=stride, dtype=dtype)
        self.bn = BatchNorm2d(out_channels, dtype=dtype)
        self.relu = relu

    def forward(self, x: Tensor) -> Tensor:
        out = self.bn(self.conv(x))
        return F.relu(out) if self.relu else out


class Sequential(Module):
    def __init__(self, layers: Optional[List[Module]] = None) -> None:
        super().__init__()
        self.layers = list(layers or [])

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x
