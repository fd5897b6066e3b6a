# src/mrkd/schemas.py
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff.losses import KLDirection
from .errors import ParameterError
from .features.extractors import RepresentationTag
from .models import ModelConfig

# Колонки CSV манифеста
MANIFEST_COLUMNS: List[str] = [
    "path",
    "label",
    "split",
]

SPLITS: Tuple[str, ...] = ("train", "test", "val")


# Колонки журнала обучения (TSV, одна запись на строку)
TRAINING_LOG_COLUMNS: List[str] = [
    "cycle",
    "phase",
    "branch_id",
    "epoch",
    "l_ce",
    "l_kl",
    "l_d",
    "lr",
    "wall_ms",
]

PHASE_BRANCH = "branch"
PHASE_FUSE = "fuse"
PHASE_DISTILL = "distill"
PHASE_BASELINE = "baseline"


# Колонки машинно-читаемого отчёта метрик
METRICS_COLUMNS: List[str] = [
    "name",
    "accuracy",
    "map_at_3",
    "n_evaluated",
]


def _fmt(value: float) -> str:
    # repr float64 восстанавливается без потерь
    return repr(float(value))


@dataclass
class ManifestEntry:
    path: str
    label: str
    split: str = "train"
    label_index: int = -1

    @property
    def clip_id(self) -> str:
        """Идентификатор клипа: относительный путь без расширения, '/' заменён на '__'."""
        stem = self.path.rsplit(".", 1)[0] if "." in self.path.rsplit("/", 1)[-1] else self.path
        return stem.replace("\\", "/").replace("/", "__")

    @classmethod
    def from_row(cls, row: Dict[str, str]) -> "ManifestEntry":
        """
        Строка CSV (csv.DictReader) -> ManifestEntry.
        Отсутствующая колонка split означает train.
        """
        def _get(key: str) -> str:
            value = row.get(key)
            return value.strip() if value else ""

        return cls(
            path=_get("path"),
            label=_get("label"),
            split=_get("split") or "train",
        )

    def to_row(self) -> List[str]:
        return [self.path, self.label, self.split]


@dataclass
class TrainingLogRecord:
    cycle: int
    phase: str
    branch_id: str
    epoch: int
    l_ce: float
    l_kl: float
    l_d: float
    lr: float
    wall_ms: float

    @classmethod
    def from_row(cls, row: List[str]) -> "TrainingLogRecord":
        def _get(i: int) -> str:
            return row[i] if i < len(row) else ""

        return cls(
            cycle=int(_get(0) or 0),
            phase=_get(1),
            branch_id=_get(2),
            epoch=int(_get(3) or 0),
            l_ce=float(_get(4) or "nan"),
            l_kl=float(_get(5) or "nan"),
            l_d=float(_get(6) or "nan"),
            lr=float(_get(7) or "nan"),
            wall_ms=float(_get(8) or 0.0),
        )

    def to_row(self) -> List[str]:
        return [
            str(self.cycle),
            self.phase,
            self.branch_id,
            str(self.epoch),
            _fmt(self.l_ce),
            _fmt(self.l_kl),
            _fmt(self.l_d),
            _fmt(self.lr),
            f"{self.wall_ms:.1f}",
        ]


@dataclass
class MetricsReport:
    accuracy: float
    map_at_3: float
    per_class_accuracy: List[float]
    n_evaluated: int
    confusion: Optional[np.ndarray] = None  # M x M, строки: истинный класс
    name: str = ""
    class_names: List[str] = field(default_factory=list)

    def to_row(self) -> List[str]:
        return [self.name, _fmt(self.accuracy), _fmt(self.map_at_3), str(self.n_evaluated)]

    def per_class_rows(self) -> List[List[str]]:
        names = self.class_names or [str(i) for i in range(len(self.per_class_accuracy))]
        return [[name, _fmt(acc)] for name, acc in zip(names, self.per_class_accuracy)]

    def to_text(self) -> str:
        lines = [
            f"name: {self.name}",
            f"accuracy: {self.accuracy:.6f}",
            f"map_at_3: {self.map_at_3:.6f}",
            f"n_evaluated: {self.n_evaluated}",
        ]
        for name, acc in self.per_class_rows():
            lines.append(f"class_accuracy[{name}]: {float(acc):.6f}")
        return "\n".join(lines) + "\n"


# ---------- Distillation ----------


@dataclass(frozen=True)
class BranchSpec:
    branch_id: str
    representation: RepresentationTag
    model_config: ModelConfig
    seed: int = 0
    channels: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "representation", RepresentationTag(self.representation))


@dataclass(frozen=True)
class DistillationSchedule:
    cycles: int = 75
    branch_epochs: int = 1
    distill_epochs: int = 1
    temperature: float = 2.0
    batch_size: int = 64
    total_epoch_budget: int = 150
    base_lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0
    mixup_alpha: float = 0.2
    kl_direction: KLDirection = KLDirection.FORWARD
    t_squared: bool = False
    warmup_cycles: int = 0
    freeze_batch_norm: bool = False
    dump_soft_labels: bool = False

    @property
    def epochs_per_cycle(self) -> int:
        return self.branch_epochs + self.distill_epochs

    @property
    def total_epochs(self) -> int:
        return self.cycles * self.epochs_per_cycle

    def violations(self, allow_zero_epochs: bool = False) -> List[str]:
        problems = []
        low = 0 if allow_zero_epochs else 1
        if self.cycles < 1:
            problems.append(f"cycles Q must be >= 1, got {self.cycles}")
        if self.branch_epochs < low:
            problems.append(f"branch_epochs b must be >= {low}, got {self.branch_epochs}")
        if self.distill_epochs < low:
            problems.append(f"distill_epochs d must be >= {low}, got {self.distill_epochs}")
        if self.total_epochs > self.total_epoch_budget:
            problems.append(
                f"Q*(b+d) = {self.total_epochs} exceeds the epoch budget {self.total_epoch_budget}"
            )
        if self.temperature <= 0:
            problems.append(f"temperature T must be > 0, got {self.temperature}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.base_lr < 0:
            problems.append(f"base_lr must be >= 0, got {self.base_lr}")
        if self.mixup_alpha < 0:
            problems.append(f"mixup alpha must be >= 0, got {self.mixup_alpha}")
        if self.warmup_cycles < 0:
            problems.append(f"warmup_cycles must be >= 0, got {self.warmup_cycles}")
        return problems

    def validate(self, allow_zero_epochs: bool = False) -> None:
        problems = self.violations(allow_zero_epochs)
        if problems:
            raise ParameterError("; ".join(problems))


def _frozen(values: np.ndarray) -> np.ndarray:
    values = np.array(values, dtype=np.float64)
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class SoftLabelMatrix:
    values: np.ndarray  # N x M, строки в порядке train-сплита манифеста
    temperature: float
    cycle: int
    sample_ids: Tuple[str, ...] = ()
    branch_id: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _frozen(self.values))
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def digest(self) -> str:
        return hashlib.sha256(self.values.tobytes()).hexdigest()


@dataclass(frozen=True)
class AggregatedTeacher:
    values: np.ndarray  # N x M
    contributing_branches: Tuple[str, ...]
    temperature: float
    cycle: int
    sample_ids: Tuple[str, ...] = ()
    _row_index: Dict[str, int] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _frozen(self.values))
        object.__setattr__(self, "contributing_branches", tuple(self.contributing_branches))
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        object.__setattr__(self, "_row_index", {sid: i for i, sid in enumerate(self.sample_ids)})

    @property
    def n_branches(self) -> int:
        return len(self.contributing_branches)

    def rows(self, ids: Sequence[Any]) -> np.ndarray:
        """Строки учителя по id образцов (строковым или позиционным)."""
        index = [self._row_index[i] if isinstance(i, str) else int(i) for i in ids]
        return self.values[index]

    def digest(self) -> str:
        return hashlib.sha256(self.values.tobytes()).hexdigest()
