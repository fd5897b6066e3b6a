# src/mrkd/autodiff/functional.py
from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ParameterError, ShapeError
from .tensor import Function, Tensor

PADDING_MODES = ("same", "valid")


def _conv_geometry(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _padding(kernel: int, padding: str) -> int:
    if padding == "valid":
        return 0
    if padding == "same":
        return kernel // 2
    raise ParameterError(f"padding must be one of {PADDING_MODES}, got {padding!r}")


class Conv2d(Function):
    """NCHW свёртка через im2col; квадратное ядро, одинаковый шаг по осям."""

    def forward(self, x, w, b=None, stride: int = 1, padding: str = "same"):
        if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
            raise ShapeError("conv2d", x.shape, w.shape)
        if stride < 1:
            raise ParameterError(f"conv2d stride must be >= 1, got {stride}")
        batch, _, height, width = x.shape
        out_ch, _, k, _ = w.shape
        pad = _padding(k, padding)
        out_h = _conv_geometry(height, k, stride, pad)
        out_w = _conv_geometry(width, k, stride, pad)
        if out_h < 1 or out_w < 1:
            raise ShapeError("conv2d", x.shape, w.shape)

        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        cols = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
        out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # B, H', W', O
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
        if b is not None:
            if b.shape != (out_ch,):
                raise ShapeError("conv2d bias", b.shape, (out_ch,))
            out += b[None, :, None, None]

        self.cols, self.w = cols, w
        self.meta = (x.shape, xp.shape, k, stride, pad, out_h, out_w)
        self.has_bias = b is not None
        return out

    def backward(self, grad):
        x_shape, xp_shape, k, stride, pad, out_h, out_w = self.meta
        dw = np.tensordot(grad, self.cols, axes=([0, 2, 3], [0, 2, 3]))  # O, C, k, k
        dcols = np.tensordot(grad, self.w, axes=([1], [0]))  # B, H', W', C, k, k
        dxp = np.zeros(xp_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += dcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        height, width = x_shape[2], x_shape[3]
        dx = dxp[:, :, pad : pad + height, pad : pad + width]
        grads = [np.ascontiguousarray(dx), dw]
        if self.has_bias:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return grads


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: str = "same") -> Tensor:
    if b is None:
        return Conv2d.apply(x, w, stride=stride, padding=padding)
    return Conv2d.apply(x, w, b, stride=stride, padding=padding)


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return x * self.mask

    def backward(self, grad):
        return (grad * self.mask,)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


class MaxPool2d(Function):
    """Окно k x k с шагом k, хвосты, не кратные k, отбрасываются."""

    def forward(self, x, kernel: int = 2):
        if x.ndim != 4:
            raise ShapeError("max_pool2d", x.shape, ("B", "C", "H", "W"))
        batch, ch, height, width = x.shape
        out_h, out_w = height // kernel, width // kernel
        if out_h < 1 or out_w < 1:
            raise ShapeError("max_pool2d", x.shape, (kernel, kernel))
        blocks = (
            x[:, :, : out_h * kernel, : out_w * kernel]
            .reshape(batch, ch, out_h, kernel, out_w, kernel)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(batch, ch, out_h, out_w, kernel * kernel)
        )
        self.idx = blocks.argmax(axis=-1)[..., None]
        self.meta = (x.shape, kernel, out_h, out_w)
        return np.take_along_axis(blocks, self.idx, axis=-1)[..., 0]

    def backward(self, grad):
        x_shape, kernel, out_h, out_w = self.meta
        batch, ch = x_shape[:2]
        blocks = np.zeros((batch, ch, out_h, out_w, kernel * kernel), dtype=grad.dtype)
        np.put_along_axis(blocks, self.idx, grad[..., None], axis=-1)
        dx = np.zeros(x_shape, dtype=grad.dtype)
        dx[:, :, : out_h * kernel, : out_w * kernel] = (
            blocks.reshape(batch, ch, out_h, out_w, kernel, kernel)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(batch, ch, out_h * kernel, out_w * kernel)
        )
        return (dx,)


def max_pool2d(x: Tensor, kernel: int = 2) -> Tensor:
    return MaxPool2d.apply(x, kernel=kernel)


class GlobalAvgPool(Function):
    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError("global_avg_pool", x.shape, ("B", "C", "H", "W"))
        self.shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        height, width = self.shape[2], self.shape[3]
        scaled = grad[:, :, None, None] / (height * width)
        return (np.broadcast_to(scaled, self.shape).copy(),)


def global_avg_pool(x: Tensor) -> Tensor:
    return GlobalAvgPool.apply(x)


class BatchNorm(Function):
    """
    Нормировка по (N, H, W) для каждого канала.
    В режиме train бегущие статистики обновляются на месте (momentum как в PyTorch).
    """

    def forward(
        self,
        x,
        gamma,
        beta,
        running_mean: np.ndarray,
        running_var: np.ndarray,
        training: bool = True,
        momentum: float = 0.1,
        eps: float = 1e-5,
    ):
        if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
            raise ShapeError("batch_norm", x.shape, gamma.shape)
        axes = (0, 2, 3)
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            count = x.size // x.shape[1]
            unbiased = var * (count / max(count - 1, 1))
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
        else:
            mean, var = running_mean, running_var
        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self.x_hat, self.inv_std, self.gamma = x_hat, inv_std, gamma
        self.training = training
        return (x_hat * gamma[None, :, None, None] + beta[None, :, None, None]).astype(x.dtype, copy=False)

    def backward(self, grad):
        axes = (0, 2, 3)
        dgamma = (grad * self.x_hat).sum(axis=axes)
        dbeta = grad.sum(axis=axes)
        dx_hat = grad * self.gamma[None, :, None, None]
        inv_std = self.inv_std[None, :, None, None]
        if self.training:
            mean_dx_hat = dx_hat.mean(axis=axes, keepdims=True)
            mean_dx_hat_xhat = (dx_hat * self.x_hat).mean(axis=axes, keepdims=True)
            dx = inv_std * (dx_hat - mean_dx_hat - self.x_hat * mean_dx_hat_xhat)
        else:
            dx = dx_hat * inv_std
        return dx.astype(grad.dtype, copy=False), dgamma, dbeta


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool = True,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    return BatchNorm.apply(
        x,
        gamma,
        beta,
        running_mean=running_mean,
        running_var=running_var,
        training=training,
        momentum=momentum,
        eps=eps,
    )


class Linear(Function):
    def forward(self, x, w, b=None):
        if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
            raise ShapeError("linear", x.shape, w.shape)
        self.x, self.w = x, w
        self.has_bias = b is not None
        out = x @ w.T
        if b is not None:
            if b.shape != (w.shape[0],):
                raise ShapeError("linear bias", b.shape, (w.shape[0],))
            out = out + b
        return out

    def backward(self, grad):
        grads = [grad @ self.w, grad.T @ self.x]
        if self.has_bias:
            grads.append(grad.sum(axis=0))
        return grads


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    if b is None:
        return Linear.apply(x, w)
    return Linear.apply(x, w, b)


class ResidualAdd(Function):
    """Сложение без broadcasting: формы ветви и shortcut обязаны совпадать."""

    def forward(self, a, b):
        if a.shape != b.shape:
            raise ShapeError("residual_add", a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return grad, grad


def residual_add(a: Tensor, b: Tensor) -> Tensor:
    return ResidualAdd.apply(a, b)
