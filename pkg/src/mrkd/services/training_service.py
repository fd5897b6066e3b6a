# src/mrkd/services/training_service.py
from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..audio_io import CropMode
from ..autodiff.losses import LossValues, cross_entropy, distillation_loss, soften, softmax_rows
from ..autodiff.mixup import mixup, one_hot
from ..autodiff.nn import BatchNorm2d
from ..autodiff.optim import SGD, OptimizerState
from ..autodiff.tensor import no_grad
from ..config import RunConfig
from ..data.batching import batcher
from ..data.manifest import DatasetManifest
from ..errors import AggregationError, NumericError
from ..models import Classifier, build
from ..schemas import (
    PHASE_BASELINE,
    PHASE_BRANCH,
    PHASE_DISTILL,
    AggregatedTeacher,
    BranchSpec,
    DistillationSchedule,
    SoftLabelMatrix,
    TrainingLogRecord,
)
from ..workspace import Workspace
from .feature_store import FeatureStore, get_feature_store

logger = logging.getLogger(__name__)

SOFT_LABEL_BATCH = 64


@dataclass
class Branch:
    """
    Рабочее состояние ветки: сеть, оптимизатор и её представление обучающих данных.
    train_ids задают порядок строк мягких меток.
    """

    spec: BranchSpec
    model: Classifier
    optimizer: SGD
    store: FeatureStore
    train_ids: List[str]
    labels: np.ndarray  # индексы классов, выровнены с train_ids
    n_classes: int
    _label_of: Dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.train_ids = list(self.train_ids)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self._label_of = dict(zip(self.train_ids, self.labels.tolist()))

    @classmethod
    def create(
        cls,
        spec: BranchSpec,
        store: FeatureStore,
        train_ids: Sequence[str],
        labels: Sequence[int],
        schedule: DistillationSchedule,
        total_epochs: Optional[int] = None,
        dtype=np.float32,
    ) -> "Branch":
        model = build(spec.model_config, spec.seed, dtype=dtype)
        state = OptimizerState(
            base_lr=schedule.base_lr,
            momentum=schedule.momentum,
            epoch=0,
            total_epochs=max(1, total_epochs if total_epochs is not None else schedule.total_epochs),
            weight_decay=schedule.weight_decay,
        )
        return cls(
            spec=spec,
            model=model,
            optimizer=SGD(model.named_parameters(), state),
            store=store,
            train_ids=list(train_ids),
            labels=np.asarray(labels, dtype=np.int64),
            n_classes=spec.model_config.n_classes,
        )

    @property
    def branch_id(self) -> str:
        return self.spec.branch_id

    @property
    def epoch(self) -> int:
        return self.optimizer.state.epoch

    def targets(self, ids: Sequence[str]) -> np.ndarray:
        return one_hot(np.array([self._label_of[i] for i in ids]), self.n_classes, dtype=self.model.dtype)

    def state_digest(self) -> str:
        """sha256 параметров и буферов: для проверок детерминизма и симметрии."""
        h = hashlib.sha256()
        for name, array in self.model.state_dict().items():
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(array).tobytes())
        return h.hexdigest()


# ---------- Одна эпоха ----------


def _step_seed(seed: int, epoch: int, step: int) -> int:
    return int(np.random.default_rng([seed, epoch, step]).integers(0, 2**31 - 1))


def _set_train_mode(branch: Branch, freeze_batch_norm: bool) -> None:
    branch.model.train()
    if freeze_batch_norm:
        for module in branch.model.modules():
            if isinstance(module, BatchNorm2d):
                module.eval()


def _run_epoch(
    branch: Branch,
    schedule: DistillationSchedule,
    phase: str,
    cycle: int,
    teacher: Optional[AggregatedTeacher] = None,
    kl_weight: float = 1.0,
) -> TrainingLogRecord:
    epoch = branch.epoch
    _set_train_mode(branch, freeze_batch_norm=teacher is not None and schedule.freeze_batch_norm)
    lr = branch.optimizer.lr
    started = time.perf_counter()
    sum_ce = sum_kl = 0.0
    seen = 0

    for step, ids in enumerate(batcher(branch.train_ids, schedule.batch_size, branch.spec.seed, epoch)):
        seed = _step_seed(branch.spec.seed, epoch, step)
        x = branch.store.batch(ids, CropMode.TRAIN_RANDOM, seed)
        y = branch.targets(ids)
        t = teacher.rows(ids) if teacher is not None else None
        if schedule.mixup_alpha > 0 and len(ids) >= 2:
            mixed = mixup(x, y, schedule.mixup_alpha, seed=seed + 1)
            x, y = mixed.x, mixed.targets
            if t is not None:
                t = mixed.mix_rows(t)

        try:
            branch.optimizer.zero_grad()
            logits = branch.model.logits(x)
            if t is None:
                loss = cross_entropy(soften(logits, 1.0), y)
                values = LossValues.combine(loss.item(), 0.0)
            else:
                loss, values = distillation_loss(
                    logits,
                    y,
                    t,
                    schedule.temperature,
                    schedule.kl_direction,
                    t_squared=schedule.t_squared,
                    kl_weight=kl_weight,
                )
            if not np.isfinite(values.l_d):
                raise NumericError(f"loss is {values.l_d}")
            loss.backward()
            branch.optimizer.step()
        except NumericError as exc:
            raise NumericError(
                f"branch {branch.branch_id}: {phase} phase, cycle {cycle}, epoch {epoch}, step {step}: {exc}"
            ) from exc

        logger.debug(
            "%s %s epoch=%d step=%d l_ce=%.5f l_kl=%.5f", branch.branch_id, phase, epoch, step, values.l_ce, values.l_kl
        )
        sum_ce += values.l_ce * len(ids)
        sum_kl += values.l_kl * len(ids)
        seen += len(ids)

    branch.optimizer.state.advance(1)
    mean = LossValues.combine(sum_ce / max(seen, 1), sum_kl / max(seen, 1))
    return TrainingLogRecord(
        cycle=cycle,
        phase=phase,
        branch_id=branch.branch_id,
        epoch=epoch,
        l_ce=mean.l_ce,
        l_kl=mean.l_kl,
        l_d=mean.l_d,
        lr=lr,
        wall_ms=(time.perf_counter() - started) * 1000.0,
    )


# ---------- Фазы цикла ----------


def train_branch_phase(
    branch: Branch,
    schedule: DistillationSchedule,
    cycle: int = 0,
    epochs: Optional[int] = None,
    phase: str = PHASE_BRANCH,
) -> List[TrainingLogRecord]:
    """
    b эпох SGD по L_ce с mixup. b = 0 оставляет параметры нетронутыми.
    """
    n_epochs = schedule.branch_epochs if epochs is None else epochs
    records = [_run_epoch(branch, schedule, phase, cycle) for _ in range(n_epochs)]
    if records:
        logger.info("Branch %s cycle %d: %s phase done, l_ce=%.4f", branch.branch_id, cycle, phase, records[-1].l_ce)
    return records


def compute_soft_labels(branch: Branch, temperature: float, cycle: int = 0) -> SoftLabelMatrix:
    """
    Мягкие метки всех обучающих клипов: центральное окно, eval-режим (BN на накопленных
    статистиках), softmax(logits / T) в float64. Строки в порядке train_ids.
    """
    branch.model.eval()
    rows = []
    with no_grad():
        for start in range(0, len(branch.train_ids), SOFT_LABEL_BATCH):
            ids = branch.train_ids[start : start + SOFT_LABEL_BATCH]
            x = branch.store.batch(ids, CropMode.EVAL_CENTER)
            logits = branch.model.logits(x).numpy().astype(np.float64)
            rows.append(softmax_rows(logits, temperature))
    values = np.concatenate(rows, axis=0) if rows else np.zeros((0, branch.n_classes))
    return SoftLabelMatrix(
        values=values,
        temperature=temperature,
        cycle=cycle,
        sample_ids=tuple(branch.train_ids),
        branch_id=branch.branch_id,
    )


def distill_phase(
    branch: Branch,
    teacher: AggregatedTeacher,
    schedule: DistillationSchedule,
    cycle: int = 0,
    kl_weight: float = 1.0,
    epochs: Optional[int] = None,
) -> List[TrainingLogRecord]:
    """
    d эпох по L_d = L_ce + L_kl против общего учителя; строки учителя берутся по id
    образца и не меняются до конца фазы.
    """
    if teacher.values.shape[0] != len(branch.train_ids):
        raise AggregationError(
            f"teacher has {teacher.values.shape[0]} rows, branch {branch.branch_id} trains on {len(branch.train_ids)}"
        )
    if not teacher.sample_ids:
        teacher = AggregatedTeacher(
            values=teacher.values,
            contributing_branches=teacher.contributing_branches,
            temperature=teacher.temperature,
            cycle=teacher.cycle,
            sample_ids=tuple(branch.train_ids),
        )
    elif tuple(teacher.sample_ids) != tuple(branch.train_ids):
        raise AggregationError(f"teacher rows are not aligned with branch {branch.branch_id} training order")

    n_epochs = schedule.distill_epochs if epochs is None else epochs
    digest = teacher.digest()
    records = [
        _run_epoch(branch, schedule, PHASE_DISTILL, cycle, teacher=teacher, kl_weight=kl_weight)
        for _ in range(n_epochs)
    ]
    if teacher.digest() != digest:
        raise AggregationError(f"teacher changed during distillation of branch {branch.branch_id}")
    if records:
        logger.info(
            "Branch %s cycle %d: distill phase done, l_ce=%.4f l_kl=%.4f",
            branch.branch_id,
            cycle,
            records[-1].l_ce,
            records[-1].l_kl,
        )
    return records


def train_independent(branch: Branch, schedule: DistillationSchedule) -> List[TrainingLogRecord]:
    """Независимый baseline: тот же бюджет Q*(b+d) эпох, только L_ce."""
    records: List[TrainingLogRecord] = []
    for cycle in range(1, schedule.cycles + 1):
        records.extend(
            train_branch_phase(branch, schedule, cycle=cycle, epochs=schedule.epochs_per_cycle, phase=PHASE_BASELINE)
        )
    return records


def build_branches(cfg: RunConfig, workspace: Workspace, manifest: DatasetManifest) -> List[Branch]:
    """Ветки из конфига поверх кэша признаков train-сплита; ветки с общим представлением делят хранилище."""
    train_ids = manifest.split_ids("train")
    labels = manifest.labels(train_ids)
    schedule = cfg.schedule()
    branches = []
    for spec, branch_cfg in zip(cfg.branch_specs(manifest.n_classes), cfg.branches):
        tag = cfg.feature_tag(branch_cfg)
        store = get_feature_store(workspace, tag, train_ids, cfg.n_frames)
        branches.append(Branch.create(spec, store, train_ids, labels, schedule))
    return branches
