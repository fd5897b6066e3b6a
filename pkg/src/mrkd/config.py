# src/mrkd/config.py
from __future__ import annotations

import logging
import os
import re
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .audio_io import CANONICAL_LENGTH, CANONICAL_SAMPLE_RATE
from .autodiff.losses import KLDirection
from .errors import ConfigError, ParameterError
from .features.dsp import frame_count
from .features.extractors import FEATURE_TAGS
from .features.extractors import FeatureConfig as ExtractorConfig
from .models import ModelConfig, ModelFamily
from .schemas import BranchSpec, DistillationSchedule

BASE_DIR = Path(__file__).resolve().parent.parent.parent
load_dotenv(BASE_DIR / ".env")

DEFAULT_WORK_DIR = "work"
SYNTHETIC_SUBDIR = "synthetic"
MANIFEST_NAME = "manifest.csv"

# Пресет --desk-scale: 20 циклов по b = d = 1 в бюджете 40 эпох
DESK_SCALE = {
    "training": {"total_epochs": 40},
    "distillation": {"cycles": 20, "branch_epochs": 1, "distill_epochs": 1},
}

_LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


@dataclass
class DatasetConfig:
    manifest: Optional[str] = None  # None: <work_dir>/synthetic/manifest.csv
    sample_rate: int = CANONICAL_SAMPLE_RATE
    canonical_length: int = CANONICAL_LENGTH
    seed: int = 0


@dataclass
class FeaturesConfig:
    frame_len: int = 3528
    hop: int = 441
    f_min: float = 0.0
    f_max: Optional[float] = None
    mel_scale: str = "slaney"
    n_mels_mfcc: int = 64
    n_mfcc: int = 40
    cqt_f_min: float = 32.70
    cqt_bins_per_octave: int = 12
    cqt_n_bins: int = 84
    delta_half_window: int = 4


@dataclass
class BranchConfig:
    branch_id: str = ""
    representation: str = "logmel64"
    channels: Optional[int] = None
    family: str = ModelFamily.RESNET_SMALL.value
    stage_channels: List[int] = field(default_factory=lambda: [16, 32, 64])
    blocks_per_stage: int = 2
    seed: int = 0


@dataclass
class TrainingConfig:
    base_lr: float = 0.001
    momentum: float = 0.9
    batch_size: int = 64
    total_epochs: int = 150
    mixup_alpha: float = 0.2
    weight_decay: float = 0.0


@dataclass
class DistillationConfig:
    cycles: int = 75
    branch_epochs: int = 1
    distill_epochs: int = 1
    temperature: float = 2.0
    kl_direction: str = KLDirection.FORWARD.value
    t_squared: bool = False
    warmup_cycles: int = 0
    freeze_batch_norm: bool = False
    dump_soft_labels: bool = False


@dataclass
class OutputConfig:
    work_dir: str = DEFAULT_WORK_DIR
    log_level: str = "INFO"
    log_file: bool = True  # дублировать лог в <work_dir>/logs/run.log
    workers: int = 1
    checkpoint_every: int = 1  # циклов между чекпоинтами фаз; 0: только final


def _default_branches() -> List[BranchConfig]:
    return [
        BranchConfig(branch_id="logmel64", representation="logmel64", seed=1),
        BranchConfig(branch_id="mfcc", representation="mfcc", seed=2),
    ]


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    distillation: DistillationConfig = field(default_factory=DistillationConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    branches: List[BranchConfig] = field(default_factory=_default_branches)
    config_path: Optional[str] = None

    # ---------- производные значения ----------

    @property
    def work_dir(self) -> Path:
        return Path(self.output.work_dir)

    @property
    def manifest_path(self) -> Path:
        if self.dataset.manifest is None:
            return self.work_dir / SYNTHETIC_SUBDIR / MANIFEST_NAME
        path = Path(self.dataset.manifest)
        if not path.is_absolute() and self.config_path is not None:
            path = Path(self.config_path).resolve().parent / path
        return path

    @property
    def n_frames(self) -> int:
        """Число кадров канонического окна (143 при 1.5 с, 80 мс / 10 мс)."""
        return frame_count(self.dataset.canonical_length, self.features.frame_len, self.features.hop)

    def branch_seed(self, branch: BranchConfig) -> int:
        return self.dataset.seed * 1000 + branch.seed

    def feature_config(self, representation: str, channels: Optional[int] = None) -> ExtractorConfig:
        f = self.features
        return ExtractorConfig(
            representation=representation,
            sample_rate=self.dataset.sample_rate,
            frame_len=f.frame_len,
            hop=f.hop,
            f_min=f.f_min,
            f_max=f.f_max,
            mel_scale=f.mel_scale,
            n_mels_mfcc=f.n_mels_mfcc,
            n_mfcc=f.n_mfcc,
            cqt_f_min=f.cqt_f_min,
            cqt_bins_per_octave=f.cqt_bins_per_octave,
            cqt_n_bins=f.cqt_n_bins,
            channels=channels,
            delta_half_window=f.delta_half_window,
        )

    def feature_tag(self, branch: BranchConfig) -> str:
        return self.feature_config(branch.representation, branch.channels).cache_tag

    def feature_sets(self) -> List[ExtractorConfig]:
        """Уникальные наборы признаков веток (по cache_tag) в порядке объявления."""
        out: Dict[str, ExtractorConfig] = {}
        for branch in self.branches:
            feature_cfg = self.feature_config(branch.representation, branch.channels)
            out.setdefault(feature_cfg.cache_tag, feature_cfg)
        return list(out.values())

    def model_config(self, branch: BranchConfig, n_classes: int) -> ModelConfig:
        feature_cfg = self.feature_config(branch.representation, branch.channels)
        return ModelConfig(
            family=ModelFamily(branch.family),
            stage_channels=tuple(branch.stage_channels),
            blocks_per_stage=branch.blocks_per_stage,
            input_channels=feature_cfg.n_channels,
            n_classes=n_classes,
        )

    def branch_specs(self, n_classes: int) -> List[BranchSpec]:
        return [
            BranchSpec(
                branch_id=branch.branch_id,
                representation=branch.representation,
                model_config=self.model_config(branch, n_classes),
                seed=self.branch_seed(branch),
                channels=branch.channels,
            )
            for branch in self.branches
        ]

    def schedule(self) -> DistillationSchedule:
        d = self.distillation
        t = self.training
        return DistillationSchedule(
            cycles=d.cycles,
            branch_epochs=d.branch_epochs,
            distill_epochs=d.distill_epochs,
            temperature=d.temperature,
            batch_size=t.batch_size,
            total_epoch_budget=t.total_epochs,
            base_lr=t.base_lr,
            momentum=t.momentum,
            weight_decay=t.weight_decay,
            mixup_alpha=t.mixup_alpha,
            kl_direction=KLDirection(d.kl_direction),
            t_squared=d.t_squared,
            warmup_cycles=d.warmup_cycles,
            freeze_batch_norm=d.freeze_batch_norm,
            dump_soft_labels=d.dump_soft_labels,
        )

    # ---------- проверка ----------

    def violations(self, require_manifest: bool = False) -> List[str]:
        problems: List[str] = []
        ds, ft, tr, di, out = self.dataset, self.features, self.training, self.distillation, self.output

        if ds.sample_rate <= 0:
            problems.append(f"dataset.sample_rate must be > 0, got {ds.sample_rate}")
        if ds.canonical_length < ft.frame_len:
            problems.append(
                f"dataset.canonical_length ({ds.canonical_length}) is shorter than one frame ({ft.frame_len})"
            )
        if require_manifest and not self.manifest_path.is_file():
            problems.append(f"dataset.manifest not found: {self.manifest_path}")

        if tr.base_lr < 0:
            problems.append(f"training.base_lr must be >= 0, got {tr.base_lr}")
        if not 0.0 <= tr.momentum < 1.0:
            problems.append(f"training.momentum must be in [0, 1), got {tr.momentum}")
        if tr.batch_size < 1:
            problems.append(f"training.batch_size must be >= 1, got {tr.batch_size}")
        if tr.total_epochs < 1:
            problems.append(f"training.total_epochs must be >= 1, got {tr.total_epochs}")
        if tr.mixup_alpha < 0:
            problems.append(f"training.mixup_alpha must be >= 0, got {tr.mixup_alpha}")
        if tr.weight_decay < 0:
            problems.append(f"training.weight_decay must be >= 0, got {tr.weight_decay}")

        try:
            KLDirection(di.kl_direction)
        except ValueError:
            problems.append(f"distillation.kl_direction must be 'forward' or 'reverse', got {di.kl_direction!r}")
        else:
            problems.extend(f"distillation: {p}" for p in self.schedule().violations())

        if out.workers < 1:
            problems.append(f"output.workers must be >= 1, got {out.workers}")
        if out.checkpoint_every < 0:
            problems.append(f"output.checkpoint_every must be >= 0, got {out.checkpoint_every}")
        if ds.seed < 0:
            problems.append(f"dataset.seed must be >= 0, got {ds.seed}")
        if str(out.log_level).upper() not in _LOG_LEVELS:
            problems.append(f"output.log_level must be one of {', '.join(_LOG_LEVELS)}, got {out.log_level!r}")

        if not self.branches:
            problems.append("at least one [[branches]] entry is required")
        seen_ids: List[str] = []
        for i, branch in enumerate(self.branches):
            where = f"branches[{i}]"
            if not branch.branch_id:
                problems.append(f"{where}.branch_id must be non-empty")
            elif branch.branch_id in seen_ids:
                problems.append(f"{where}.branch_id {branch.branch_id!r} is duplicated")
            elif not re.fullmatch(r"[A-Za-z0-9_.-]+", branch.branch_id):
                problems.append(f"{where}.branch_id {branch.branch_id!r} may only use letters, digits, '_', '.', '-'")
            seen_ids.append(branch.branch_id)
            if branch.seed < 0:
                problems.append(f"{where}.seed must be >= 0, got {branch.seed}")

            if branch.representation not in FEATURE_TAGS:
                problems.append(
                    f"{where}.representation {branch.representation!r} is not one of {', '.join(FEATURE_TAGS)}"
                )
                continue
            try:
                self.feature_config(branch.representation, branch.channels).validate()
            except ParameterError as exc:
                problems.append(f"{where}: {exc}")
                continue
            try:
                ModelFamily(branch.family)
            except ValueError:
                problems.append(f"{where}.family {branch.family!r} is not one of vgg_small, resnet_small")
                continue
            problems.extend(f"{where}: {p}" for p in self.model_config(branch, n_classes=2).violations())
        return problems

    def validate(self, require_manifest: bool = False) -> None:
        problems = self.violations(require_manifest)
        if problems:
            raise ConfigError(problems)

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload["resolved"] = {
            "work_dir": str(self.work_dir.resolve()),
            "manifest_path": str(self.manifest_path.resolve()),
            "n_frames": self.n_frames,
            "branch_seeds": {b.branch_id: self.branch_seed(b) for b in self.branches},
            "total_epochs_per_branch": self.distillation.cycles
            * (self.distillation.branch_epochs + self.distillation.distill_epochs),
        }
        return payload


# ---------- сборка ----------

_SCALARS = {"int": int, "float": float, "bool": bool, "str": str}
_TYPE_RE = re.compile(r"^(?:Optional\[)?(List\[)?(\w+)")


def _coerce(where: str, type_name: str, value: Any, problems: List[str]) -> Any:
    match = _TYPE_RE.match(type_name)
    is_list = bool(match and match.group(1))
    kind = _SCALARS.get(match.group(2) if match else "str", str)

    if is_list and not isinstance(value, list):
        problems.append(f"{where} must be a list, got {value!r}")
        return None
    out = []
    for item in value if is_list else [value]:
        if kind is bool:
            ok = isinstance(item, bool)
        elif kind is float:
            ok = isinstance(item, (int, float)) and not isinstance(item, bool)
        elif kind is int:
            ok = isinstance(item, int) and not isinstance(item, bool)
        else:
            ok = isinstance(item, str)
        if not ok:
            problems.append(f"{where} must be {kind.__name__}, got {item!r}")
            return None
        out.append(kind(item))
    return out if is_list else out[0]


def _apply_section(section: Any, values: Dict[str, Any], name: str, problems: List[str]) -> Any:
    if not isinstance(values, dict):
        problems.append(f"[{name}] must be a table")
        return section
    known = {f.name: f for f in fields(section)}
    changes: Dict[str, Any] = {}
    for key, value in values.items():
        if key not in known:
            problems.append(f"unknown key {name}.{key}")
            continue
        coerced = _coerce(f"{name}.{key}", str(known[key].type), value, problems)
        if coerced is not None:
            changes[key] = coerced
    return replace(section, **changes)


_SECTIONS = ("dataset", "features", "training", "distillation", "output")


def _apply(cfg: RunConfig, data: Dict[str, Any], problems: List[str]) -> RunConfig:
    for name in _SECTIONS:
        if name in data:
            setattr(cfg, name, _apply_section(getattr(cfg, name), data[name], name, problems))
    if "branches" in data:
        raw = data["branches"]
        if not isinstance(raw, list) or not raw:
            problems.append("[[branches]] must be a non-empty array of tables")
        else:
            cfg.branches = [
                _apply_section(BranchConfig(), item, f"branches[{i}]", problems) for i, item in enumerate(raw)
            ]
    for key in data:
        if key not in _SECTIONS and key != "branches":
            problems.append(f"unknown section [{key}]")
    return cfg


def _env_section(problems: List[str]) -> Dict[str, Dict[str, Any]]:
    # MRKD_WORK_DIR=/data/mrkd
    # MRKD_LOG_LEVEL=DEBUG
    # MRKD_WORKERS=2
    out: Dict[str, Any] = {}
    work_dir = os.getenv("MRKD_WORK_DIR")
    if work_dir:
        out["work_dir"] = work_dir
    log_level = os.getenv("MRKD_LOG_LEVEL")
    if log_level:
        out["log_level"] = log_level.upper()
    workers_raw = os.getenv("MRKD_WORKERS")
    if workers_raw:
        try:
            out["workers"] = int(workers_raw)
        except ValueError:
            problems.append(f"MRKD_WORKERS must be an integer, got {workers_raw!r}")
    return {"output": out} if out else {}


def load_toml(path: Path) -> Dict[str, Any]:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"])
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"config file {path} is not valid TOML: {exc}"])


def get_settings(
    config_path: Optional[Path] = None,
    overrides: Optional[Dict[str, Dict[str, Any]]] = None,
    desk_scale: bool = False,
) -> RunConfig:
    """
    Порядок приоритетов: флаги CLI > файл конфига > переменные окружения > значения по умолчанию.
    --desk-scale тоже флаг: применяется поверх файла, но под явными флагами.
    Ошибки типов и неизвестные ключи собираются все сразу в один ConfigError.
    """
    problems: List[str] = []
    cfg = RunConfig()
    cfg = _apply(cfg, _env_section(problems), problems)

    if config_path is not None:
        cfg = _apply(cfg, load_toml(Path(config_path)), problems)
        cfg.config_path = str(config_path)

    if desk_scale:
        cfg = _apply(cfg, DESK_SCALE, problems)
    if overrides:
        cfg = _apply(cfg, {k: v for k, v in overrides.items() if v}, problems)

    cfg.output.log_level = str(cfg.output.log_level).upper()
    if problems:
        raise ConfigError(problems)
    logging.getLogger(__name__).debug("Settings resolved (config=%s, desk_scale=%s)", config_path, desk_scale)
    return cfg
