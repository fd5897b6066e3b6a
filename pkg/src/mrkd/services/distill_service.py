# src/mrkd/services/distill_service.py
from __future__ import annotations

import asyncio
import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, TypeVar, Union

import numpy as np

from ..audio_io import AudioClip
from ..autodiff.checkpoint import save_checkpoint
from ..errors import AggregationError, InvalidInputError, MissingFeatureError
from ..features.cache import cache_write, matrix_to_feature_map
from ..schemas import (
    PHASE_BRANCH,
    PHASE_DISTILL,
    PHASE_FUSE,
    TRAINING_LOG_COLUMNS,
    AggregatedTeacher,
    DistillationSchedule,
    SoftLabelMatrix,
    TrainingLogRecord,
)
from ..workspace import FINAL_CHECKPOINT, STAGE_DISTILL, Workspace
from .evaluation_service import Scorer, rank_predictions, scorer_probability
from .training_service import Branch, compute_soft_labels, distill_phase, train_branch_phase

logger = logging.getLogger(__name__)

T = TypeVar("T")


# ---------- Узел агрегации ----------


def aggregate(soft_labels: Sequence[SoftLabelMatrix]) -> AggregatedTeacher:
    """
    Учитель = поэлементное среднее Γ матриц мягких меток.
    Все матрицы обязаны совпадать по форме, T, циклу и порядку образцов.
    """
    if not soft_labels:
        raise AggregationError("nothing to aggregate: no soft-label matrices")
    first = soft_labels[0]
    for other in soft_labels[1:]:
        if other.shape != first.shape:
            raise AggregationError(
                f"soft-label shapes differ: {first.branch_id or 0} {first.shape} vs {other.branch_id} {other.shape}"
            )
        if other.temperature != first.temperature:
            raise AggregationError(f"soft-label temperatures differ: {first.temperature} vs {other.temperature}")
        if other.cycle != first.cycle:
            raise AggregationError(f"soft labels come from different cycles: {first.cycle} vs {other.cycle}")
        if other.sample_ids != first.sample_ids:
            raise AggregationError("soft-label matrices are not aligned to the same sample order")

    if len(soft_labels) == 1:
        values = first.values
    else:
        values = np.stack([m.values for m in soft_labels]).sum(axis=0) / len(soft_labels)
    return AggregatedTeacher(
        values=values,
        contributing_branches=tuple(m.branch_id for m in soft_labels),
        temperature=first.temperature,
        cycle=first.cycle,
        sample_ids=first.sample_ids,
    )


# ---------- Журнал обучения ----------


class TrainingLog:
    """
    TSV с заголовком TRAINING_LOG_COLUMNS; строки дописываются по мере фаз.
    Запись слияния имеет branch_id "*" и пустые (nan) потери.
    """

    def __init__(self, path: Optional[Path] = None) -> None:
        self.path = path
        self.records: List[TrainingLogRecord] = []
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="") as fh:
                csv.writer(fh, delimiter="\t", lineterminator="\n").writerow(TRAINING_LOG_COLUMNS)

    def extend(self, records: Sequence[TrainingLogRecord]) -> None:
        self.records.extend(records)
        if self.path is None or not records:
            return
        with open(self.path, "a", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
            for record in records:
                writer.writerow(record.to_row())

    def phases(self) -> List[str]:
        """Последовательность фаз без повторов подряд: [branch, fuse, distill] x Q."""
        out: List[str] = []
        for record in self.records:
            if not out or out[-1] != record.phase:
                out.append(record.phase)
        return out


def read_training_log(path: Union[str, Path]) -> List[TrainingLogRecord]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows or rows[0] != TRAINING_LOG_COLUMNS:
        raise InvalidInputError(f"{path} is not a training log")
    return [TrainingLogRecord.from_row(row) for row in rows[1:]]


# ---------- Циклическая дистилляция ----------


@dataclass
class CycleResult:
    branches: List[Branch]
    log: TrainingLog
    teachers: List[str] = field(default_factory=list)  # sha256 учителя каждого цикла


def _fuse_record(cycle: int, wall_ms: float) -> TrainingLogRecord:
    nan = float("nan")
    return TrainingLogRecord(
        cycle=cycle, phase=PHASE_FUSE, branch_id="*", epoch=-1, l_ce=nan, l_kl=nan, l_d=nan, lr=nan, wall_ms=wall_ms
    )


def _dump_soft_labels(workspace: Workspace, cycle: int, matrices: Sequence[SoftLabelMatrix], teacher: AggregatedTeacher) -> None:
    for matrix in matrices:
        cache_write(matrix_to_feature_map(matrix.values, matrix.branch_id), workspace.soft_label_path(cycle, matrix.branch_id))
    cache_write(matrix_to_feature_map(teacher.values, "teacher"), workspace.soft_label_path(cycle, "teacher"))


def _save_phase_checkpoints(workspace: Workspace, branches: Sequence[Branch], cycle: int, phase: str) -> None:
    for branch in branches:
        save_checkpoint(workspace.cycle_checkpoint_path(branch.branch_id, cycle, phase), branch.model, branch.optimizer)


async def run_cycles_async(
    branches: Sequence[Branch],
    schedule: DistillationSchedule,
    workers: int = 1,
    workspace: Optional[Workspace] = None,
    log: Optional[TrainingLog] = None,
    checkpoint_every: int = 1,
) -> CycleResult:
    """
    Q циклов: все ветки учатся по L_ce -> мягкие метки -> один учитель -> все ветки
    дистиллируются. Между барьерами ветки независимы; workers > 1 раздаёт их по потокам,
    workers = 1 выполняет по очереди в текущем потоке (эталонный режим).
    """
    if not branches:
        raise AggregationError("distillation needs at least one branch")
    schedule.validate()
    log = log if log is not None else TrainingLog()
    semaphore = asyncio.Semaphore(max(1, workers))
    teachers: List[str] = []

    async def fan_out(fn: Callable[[Branch], T]) -> List[T]:
        if workers <= 1:
            return [fn(branch) for branch in branches]

        async def _one(branch: Branch) -> T:
            async with semaphore:
                return await asyncio.to_thread(fn, branch)

        return list(await asyncio.gather(*(_one(b) for b in branches)))

    for cycle in range(1, schedule.cycles + 1):
        completed: List[str] = []
        kl_weight = 0.0 if cycle <= schedule.warmup_cycles else 1.0
        try:
            for records in await fan_out(lambda b: train_branch_phase(b, schedule, cycle)):
                log.extend(records)
            completed.append(PHASE_BRANCH)
            if workspace is not None and _due(cycle, schedule.cycles, checkpoint_every):
                _save_phase_checkpoints(workspace, branches, cycle, PHASE_BRANCH)

            started = time.perf_counter()
            matrices = await fan_out(lambda b: compute_soft_labels(b, schedule.temperature, cycle))
            teacher = aggregate(matrices)
            teachers.append(teacher.digest())
            log.extend([_fuse_record(cycle, (time.perf_counter() - started) * 1000.0)])
            completed.append(PHASE_FUSE)
            if workspace is not None and schedule.dump_soft_labels:
                _dump_soft_labels(workspace, cycle, matrices, teacher)

            for records in await fan_out(lambda b: distill_phase(b, teacher, schedule, cycle, kl_weight=kl_weight)):
                log.extend(records)
            completed.append(PHASE_DISTILL)
            if workspace is not None and _due(cycle, schedule.cycles, checkpoint_every):
                _save_phase_checkpoints(workspace, branches, cycle, PHASE_DISTILL)
        except Exception:
            logger.error("Cycle %d aborted; completed phases: %s", cycle, ", ".join(completed) or "none")
            raise

        logger.info(
            "Cycle %d/%d done (lr=%.6f%s)",
            cycle,
            schedule.cycles,
            branches[0].optimizer.lr,
            ", warm-up" if kl_weight == 0.0 else "",
        )

    if workspace is not None:
        for branch in branches:
            save_checkpoint(
                workspace.checkpoint_path(STAGE_DISTILL, branch.branch_id, FINAL_CHECKPOINT),
                branch.model,
                branch.optimizer,
            )
    return CycleResult(branches=list(branches), log=log, teachers=teachers)


def _due(cycle: int, total: int, every: int) -> bool:
    if every <= 0:
        return False
    return cycle % every == 0 or cycle == total


def run_cycles(
    branches: Sequence[Branch],
    schedule: DistillationSchedule,
    workspace: Optional[Workspace] = None,
    log: Optional[TrainingLog] = None,
    checkpoint_every: int = 1,
) -> CycleResult:
    """Последовательный вариант run_cycles_async для синхронного кода."""
    return asyncio.run(
        run_cycles_async(branches, schedule, workers=1, workspace=workspace, log=log, checkpoint_every=checkpoint_every)
    )


# ---------- Ансамбль ----------


def ensemble_predict(scorers: Sequence[Scorer], clip: AudioClip) -> np.ndarray:
    """
    Среднее вероятностей уровня клипа (T = 1) по веткам; argmax с выбором
    меньшего индекса при равенстве даёт предсказание.
    """
    if not scorers:
        raise MissingFeatureError(clip.source_id, "any representation")
    return mean_probabilities([scorer_probability(s, clip) for s in scorers])


def mean_probabilities(probs: Sequence[np.ndarray]) -> np.ndarray:
    stacked = np.stack([np.asarray(p, dtype=np.float64) for p in probs])
    return stacked.sum(axis=0) / stacked.shape[0]


def ensemble_label(probs: np.ndarray) -> int:
    return int(rank_predictions(probs)[0])
