# src/mrkd/services/evaluation_service.py
from __future__ import annotations

import asyncio
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..audio_io import CANONICAL_LENGTH, AudioClip, CropMode, load_canonical, tile_or_crop
from ..autodiff.checkpoint import load_checkpoint, restore
from ..autodiff.losses import softmax_rows
from ..autodiff.tensor import no_grad
from ..config import BranchConfig, RunConfig
from ..data.manifest import DatasetManifest
from ..errors import InvalidInputError, InvalidPredictionError
from ..features.extractors import FeatureConfig, FeatureStats, extract
from ..models import Classifier, build
from ..schemas import METRICS_COLUMNS, ManifestEntry, MetricsReport
from ..workspace import Workspace

logger = logging.getLogger(__name__)

DEFAULT_K = 3


@dataclass
class Scorer:
    """Обученная ветка в режиме инференса: сеть + её представление + статистики."""

    branch_id: str
    model: Classifier
    feature_cfg: FeatureConfig
    stats: Optional[FeatureStats] = None
    window_len: int = CANONICAL_LENGTH


def load_scorer(
    cfg: RunConfig,
    workspace: Workspace,
    branch: BranchConfig,
    stage: str,
    n_classes: int,
) -> Scorer:
    model = build(cfg.model_config(branch, n_classes), cfg.branch_seed(branch))
    restore(load_checkpoint(workspace.checkpoint_path(stage, branch.branch_id)), model)
    return Scorer(
        branch_id=branch.branch_id,
        model=model,
        feature_cfg=cfg.feature_config(branch.representation, branch.channels),
        stats=FeatureStats.load(workspace.stats_path(cfg.feature_tag(branch))),
        window_len=cfg.dataset.canonical_length,
    )


# ---------- Уровень клипа ----------


def clip_windows(clip: AudioClip, window_len: int) -> List[AudioClip]:
    """
    Подряд идущие окна длины window_len без перекрытия; короткий остаток
    дополняется повтором самого себя.
    """
    n = len(clip)
    if n == 0:
        raise InvalidInputError(f"clip {clip.source_id!r} has no samples")
    windows = []
    for start in range(0, n, window_len):
        segment = clip.samples[start : start + window_len]
        if segment.shape[0] < window_len:
            segment = tile_or_crop(segment, window_len, CropMode.EVAL_CENTER)
        windows.append(clip.with_samples(segment))
    return windows


def window_logits(
    model: Classifier,
    clip: AudioClip,
    features_cfg: FeatureConfig,
    stats: Optional[FeatureStats] = None,
    window_len: int = CANONICAL_LENGTH,
) -> np.ndarray:
    """Логиты по окнам: n_windows x M (float64)."""
    maps = []
    for window in clip_windows(clip, window_len):
        data = extract(window, features_cfg).data
        maps.append(stats.apply(data) if stats is not None else data)
    model.eval()
    with no_grad():
        return model.logits(np.stack(maps)).numpy().astype(np.float64)


def clip_probability(
    model: Classifier,
    clip: AudioClip,
    features_cfg: FeatureConfig,
    stats: Optional[FeatureStats] = None,
    window_len: int = CANONICAL_LENGTH,
) -> np.ndarray:
    """Вероятности уровня клипа: среднее softmax(T=1) по окнам."""
    probs = softmax_rows(window_logits(model, clip, features_cfg, stats, window_len), 1.0)
    return probs.mean(axis=0)


def clip_logits(
    model: Classifier,
    clip: AudioClip,
    features_cfg: FeatureConfig,
    stats: Optional[FeatureStats] = None,
    window_len: int = CANONICAL_LENGTH,
) -> np.ndarray:
    return window_logits(model, clip, features_cfg, stats, window_len).mean(axis=0)


def scorer_probability(scorer: Scorer, clip: AudioClip) -> np.ndarray:
    return clip_probability(scorer.model, clip, scorer.feature_cfg, scorer.stats, scorer.window_len)


# ---------- Метрики ----------


def rank_predictions(probs: np.ndarray) -> np.ndarray:
    """Классы по убыванию вероятности; при равенстве меньший индекс раньше."""
    return np.argsort(-np.asarray(probs), axis=-1, kind="stable")


def map_at_k(predictions: Sequence[Sequence[int]], truths: Sequence[int], k: int = DEFAULT_K) -> float:
    """
    Для каждого образца 1/rank, если истинная метка среди первых k, иначе 0; среднее.
    """
    if len(predictions) != len(truths):
        raise InvalidPredictionError(f"{len(predictions)} rankings for {len(truths)} truths")
    if not predictions:
        raise InvalidPredictionError("no predictions to score")
    total = 0.0
    for i, (ranking, truth) in enumerate(zip(predictions, truths)):
        ranking = [int(label) for label in ranking]
        if len(set(ranking)) != len(ranking):
            raise InvalidPredictionError(f"prediction {i} repeats a label: {ranking}")
        if len(ranking) < k:
            raise InvalidPredictionError(f"prediction {i} has {len(ranking)} labels, need at least {k}")
        top = ranking[:k]
        if int(truth) in top:
            total += 1.0 / (top.index(int(truth)) + 1)
    return total / len(predictions)


def metrics_from_probabilities(
    probs: np.ndarray,
    labels: Sequence[int],
    name: str = "",
    class_names: Optional[List[str]] = None,
) -> MetricsReport:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = probs.shape[1]
    ranked = rank_predictions(probs)
    predicted = ranked[:, 0]

    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels, predicted), 1)
    counts = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(counts > 0, np.diag(confusion) / np.maximum(counts, 1), np.nan)

    return MetricsReport(
        accuracy=float(np.mean(predicted == labels)),
        map_at_3=map_at_k(ranked.tolist(), labels.tolist(), k=min(DEFAULT_K, n_classes)),
        per_class_accuracy=[float(v) for v in per_class],
        n_evaluated=int(labels.shape[0]),
        confusion=confusion,
        name=name,
        class_names=list(class_names or []),
    )


# ---------- Оценка сплита ----------


def _load_clip(manifest: DatasetManifest, entry: ManifestEntry, sample_rate: int) -> AudioClip:
    return load_canonical(manifest.resolve(entry), sample_rate=sample_rate, source_id=entry.clip_id)


def score_entries(scorers: Sequence[Scorer], manifest: DatasetManifest, entries: Sequence[ManifestEntry]) -> np.ndarray:
    """Вероятности n_scorers x n_entries x M; аудио декодируется один раз на клип."""
    sample_rate = scorers[0].feature_cfg.sample_rate
    out = np.empty((len(scorers), len(entries), manifest.n_classes), dtype=np.float64)
    for j, entry in enumerate(entries):
        clip = _load_clip(manifest, entry, sample_rate)
        for i, scorer in enumerate(scorers):
            out[i, j] = scorer_probability(scorer, clip)
    return out


async def score_split_async(
    scorers: Sequence[Scorer],
    manifest: DatasetManifest,
    split: str = "test",
    workers: int = 1,
) -> Tuple[List[ManifestEntry], np.ndarray]:
    """
    Раздаёт клипы пачками по потокам; порядок результатов = порядок манифеста,
    поэтому итог не зависит от числа потоков.
    """
    entries = manifest.split_entries(split)
    if workers <= 1:
        return entries, score_entries(scorers, manifest, entries)
    chunk = -(-len(entries) // workers)
    parts = [entries[i : i + chunk] for i in range(0, len(entries), chunk)]
    results = await asyncio.gather(*(asyncio.to_thread(score_entries, scorers, manifest, p) for p in parts))
    return entries, np.concatenate(results, axis=1)


def evaluate_model(scorer: Scorer, manifest: DatasetManifest, split: str = "test", name: str = "") -> MetricsReport:
    entries = manifest.split_entries(split)
    probs = score_entries([scorer], manifest, entries)[0]
    return metrics_from_probabilities(
        probs, [e.label_index for e in entries], name=name or scorer.branch_id, class_names=manifest.class_names
    )


# ---------- Экспорт ----------


def write_metrics(report: MetricsReport, workspace: Workspace) -> Path:
    """metrics/<name>.txt (key: value), <name>.csv, <name>_per_class.csv, <name>_confusion.csv."""
    text_path = workspace.metrics_path(report.name, ".txt")
    text_path.write_text(report.to_text(), encoding="utf-8")

    with open(workspace.metrics_path(report.name, ".csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        writer.writerow(report.to_row())

    with open(workspace.metrics_path(f"{report.name}_per_class", ".csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["class", "accuracy"])
        writer.writerows(report.per_class_rows())

    if report.confusion is not None:
        names = report.class_names or [str(i) for i in range(report.confusion.shape[0])]
        with open(workspace.metrics_path(f"{report.name}_confusion", ".csv"), "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["true\\predicted", *names])
            for name, row in zip(names, report.confusion.tolist()):
                writer.writerow([name, *row])
    logger.info("Metrics %s written to %s", report.name, text_path.parent)
    return text_path


def read_metrics(path: Union[str, Path]) -> MetricsReport:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or rows[0] != METRICS_COLUMNS:
        raise InvalidInputError(f"{path} is not a metrics CSV")
    name, accuracy, map3, n = rows[1]
    return MetricsReport(accuracy=float(accuracy), map_at_3=float(map3), per_class_accuracy=[], n_evaluated=int(n), name=name)


def export_logits(
    scorer: Scorer,
    manifest: DatasetManifest,
    split: str,
    out_path: Union[str, Path],
) -> int:
    """
    CSV clip_id,label,logit_0..logit_{M-1}: по строке на клип в порядке манифеста,
    логиты уровня клипа (среднее по окнам), формат %.9g.
    """
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    entries = manifest.split_entries(split)
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["clip_id", "label", *(f"logit_{m}" for m in range(manifest.n_classes))])
        for entry in entries:
            clip = _load_clip(manifest, entry, scorer.feature_cfg.sample_rate)
            logits = clip_logits(scorer.model, clip, scorer.feature_cfg, scorer.stats, scorer.window_len)
            writer.writerow([entry.clip_id, entry.label, *(f"{v:.9g}" for v in logits)])
    logger.info("Exported logits of %d clips to %s", len(entries), out_path)
    return len(entries)
