# src/mrkd/models.py
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from .autodiff import functional as F
from .autodiff.nn import BatchNorm2d, Conv2d, ConvBNReLU, Linear, Module, Sequential
from .autodiff.tensor import Tensor, as_tensor
from .errors import ParameterError

logger = logging.getLogger(__name__)


class ModelFamily(str, Enum):
    VGG_SMALL = "vgg_small"
    RESNET_SMALL = "resnet_small"


@dataclass(frozen=True)
class ModelConfig:
    family: ModelFamily = ModelFamily.RESNET_SMALL
    stage_channels: Tuple[int, ...] = (16, 32, 64)
    blocks_per_stage: int = 2
    input_channels: int = 3
    n_classes: int = 10

    def __post_init__(self) -> None:
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))

    def violations(self) -> List[str]:
        problems = []
        try:
            ModelFamily(self.family)
        except ValueError:
            problems.append(f"unknown model family {self.family!r}")
        if self.n_classes < 2:
            problems.append(f"n_classes must be >= 2, got {self.n_classes}")
        if not self.stage_channels or any(c <= 0 for c in self.stage_channels):
            problems.append(f"stage_channels must be non-empty and positive, got {list(self.stage_channels)}")
        if self.blocks_per_stage < 1:
            problems.append(f"blocks_per_stage must be >= 1, got {self.blocks_per_stage}")
        if self.input_channels not in (1, 3):
            problems.append(f"input_channels must be 1 or 3, got {self.input_channels}")
        return problems

    def validate(self) -> None:
        problems = self.violations()
        if problems:
            raise ParameterError("; ".join(problems))


class Classifier(Module):
    """Общий хвост: global average pooling + linear -> логиты batch x M."""

    def logits(self, x) -> Tensor:
        return self.forward(as_tensor(x, self.dtype))

    @property
    def dtype(self):
        return self.parameters()[0].dtype


class VggSmall(Classifier):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> None:
        super().__init__()
        stages = []
        in_ch = cfg.input_channels
        for out_ch in cfg.stage_channels:
            layers = []
            for _ in range(cfg.blocks_per_stage):
                layers.append(ConvBNReLU(in_ch, out_ch, rng, dtype=dtype))
                in_ch = out_ch
            stages.append(Sequential(layers))
        self.stages = stages
        self.head = Linear(in_ch, cfg.n_classes, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        for stage in self.stages:
            x = F.max_pool2d(stage(x), 2)
        return self.head(F.global_avg_pool(x))


class ResidualBlock(Module):
    """Две свёртки 3x3 с BN; shortcut тождественный или проекция 1x1 (+BN) при смене формы."""

    def __init__(self, in_ch: int, out_ch: int, stride: int, rng: np.random.Generator, dtype=np.float32) -> None:
        super().__init__()
        self.conv1 = ConvBNReLU(in_ch, out_ch, rng, stride=stride, dtype=dtype)
        self.conv2 = ConvBNReLU(out_ch, out_ch, rng, relu=False, dtype=dtype)
        if stride != 1 or in_ch != out_ch:
            self.projection: Optional[Module] = Sequential(
                [
                    Conv2d(in_ch, out_ch, 1, rng, stride=stride, padding="valid", dtype=dtype),
                    BatchNorm2d(out_ch, dtype=dtype),
                ]
            )
        else:
            self.projection = None

    def shortcut(self, x: Tensor) -> Tensor:
        return self.projection(x) if self.projection is not None else x

    def residual_branch(self, x: Tensor) -> Tensor:
        return self.conv2(self.conv1(x))

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(F.residual_add(self.residual_branch(x), self.shortcut(x)))

    def branch_weights(self) -> List[Tensor]:
        return [self.conv1.conv.weight, self.conv2.conv.weight]


class ResNetSmall(Classifier):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> None:
        super().__init__()
        first = cfg.stage_channels[0]
        self.stem = ConvBNReLU(cfg.input_channels, first, rng, dtype=dtype)
        blocks = []
        in_ch = first
        for stage_idx, out_ch in enumerate(cfg.stage_channels):
            for block_idx in range(cfg.blocks_per_stage):
                stride = 2 if stage_idx > 0 and block_idx == 0 else 1
                blocks.append(ResidualBlock(in_ch, out_ch, stride, rng, dtype=dtype))
                in_ch = out_ch
        self.blocks = blocks
        self.head = Linear(in_ch, cfg.n_classes, rng, dtype=dtype)

    def features(self, x: Tensor, shortcut_only: bool = False) -> Tensor:
        x = F.max_pool2d(self.stem(x), 2)
        for block in self.blocks:
            x = F.relu(block.shortcut(x)) if shortcut_only else block(x)
        return F.global_avg_pool(x)

    def forward(self, x: Tensor) -> Tensor:
        return self.head(self.features(x))

    def shortcut_forward(self, x: Tensor) -> Tensor:
        """Путь только через shortcut: эталон для проверки обвязки residual-блоков."""
        return self.head(self.features(x, shortcut_only=True))


_FAMILIES = {
    ModelFamily.VGG_SMALL: VggSmall,
    ModelFamily.RESNET_SMALL: ResNetSmall,
}


def build(cfg: ModelConfig, seed: int, dtype=np.float32) -> Classifier:
    """
    Строит сеть по конфигу; веса: He-инициализация из seed, без предобучения.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    model = _FAMILIES[ModelFamily(cfg.family)](cfg, rng, dtype=dtype)
    logger.debug(
        "Built %s with %d parameters (seed=%d)", ModelFamily(cfg.family).value, model.n_parameters(), seed
    )
    return model
