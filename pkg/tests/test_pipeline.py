# tests/test_pipeline.py
"""Сквозные прогоны CLI на синтетических корпусах (pytest -m slow)."""
import asyncio
import csv
from pathlib import Path

import numpy as np
import pytest

from mrkd.data.synthetic import gen_synthetic
from mrkd.main import main
from mrkd.services.distill_service import read_training_log
from mrkd.services.evaluation_service import read_metrics

pytestmark = pytest.mark.slow

CONFIG = """
[dataset]
seed = 3
canonical_length = 22050

[training]
batch_size = 4
total_epochs = 4
base_lr = 0.01

[distillation]
cycles = 2
branch_epochs = 1
distill_epochs = 1
temperature = 2.0
dump_soft_labels = true

[output]
checkpoint_every = 1

[[branches]]
branch_id = "lm"
representation = "logmel64"
family = "vgg_small"
stage_channels = [4, 8]
blocks_per_stage = 1
seed = 1

[[branches]]
branch_id = "mf"
representation = "mfcc"
family = "resnet_small"
stage_channels = [4, 8]
blocks_per_stage = 1
seed = 2
"""


def _run(config: Path, work: Path, *argv: str) -> int:
    return asyncio.run(main([*argv, "--config", str(config), "--work-dir", str(work)]))


def _pipeline(tmp_path: Path, name: str) -> Path:
    config = tmp_path / "tiny.toml"
    config.write_text(CONFIG, encoding="utf-8")
    work = tmp_path / name
    steps = [
        ("gen-synthetic", "--classes", "3", "--clips-per-class", "5"),
        ("extract",),
        ("train",),
        ("distill",),
        ("evaluate", "--stage", "train"),
        ("evaluate", "--stage", "distill"),
        ("ensemble-eval", "--stage", "baseline"),
        ("ensemble-eval", "--stage", "distill"),
        ("export-logits", "--branch", "lm"),
        ("compare",),
    ]
    for step in steps:
        assert _run(config, work, *step) == 0, step
    return work


def test_full_pipeline(tmp_path):
    work = _pipeline(tmp_path, "a")

    for tag in ("logmel64", "mfcc"):
        assert (work / "features" / tag / "stats.npz").is_file()
    for stage in ("train", "distill"):
        for branch in ("lm", "mf"):
            assert (work / "checkpoints" / stage / branch / "final.mrkp").is_file()
    assert (work / "checkpoints" / "distill" / "lm" / "cycle_002_distill.mrkp").is_file()
    assert (work / "soft_labels" / "cycle_001" / "teacher.mrkd").is_file()

    records = read_training_log(work / "logs" / "training_distill.tsv")
    phases = []
    for r in records:
        if not phases or phases[-1] != r.phase:
            phases.append(r.phase)
    assert phases == ["branch", "fuse", "distill"] * 2
    assert len(read_training_log(work / "logs" / "training_train.tsv")) == 2 * 4

    for name in ("train_lm", "distill_mf", "ensemble_baseline", "ensemble_distill"):
        report = read_metrics(work / "metrics" / f"{name}.csv")
        assert report.n_evaluated == 3
        assert report.map_at_3 >= report.accuracy

    with open(work / "logits" / "distill_lm_test.csv", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 4 and len(rows[0]) == 2 + 3

    with open(work / "metrics" / "compare.tsv", encoding="utf-8") as fh:
        table = list(csv.reader(fh, delimiter="\t"))
    assert [row[0] for row in table[1:]] == ["lm", "mf", "ансамбль"]


def test_sequential_reruns_are_bit_identical(tmp_path):
    first = _pipeline(tmp_path, "a")
    second = _pipeline(tmp_path, "b")
    for rel in (
        "checkpoints/train/lm/final.mrkp",
        "checkpoints/distill/lm/final.mrkp",
        "checkpoints/distill/mf/final.mrkp",
        "features/mfcc/class_00__class_00_0000.mrkd",
        "metrics/ensemble_distill.csv",
    ):
        assert (first / rel).read_bytes() == (second / rel).read_bytes(), rel


TREND_CONFIG = """
[dataset]
manifest = "{manifest}"

[training]
base_lr = 0.001
batch_size = 64
mixup_alpha = 0.2

[distillation]
temperature = 2.0

[output]
checkpoint_every = 0

[[branches]]
branch_id = "logmel64"
representation = "logmel64"
family = "resnet_small"
seed = 1

[[branches]]
branch_id = "mfcc"
representation = "mfcc"
family = "resnet_small"
seed = 2
"""

TREND_SEEDS = (7, 8, 9)
TREND_BRANCHES = ("logmel64", "mfcc")


def test_distillation_keeps_up_with_independent_training(tmp_path):
    corpus = gen_synthetic(tmp_path / "corpus", n_classes=10, clips_per_class=100, seed=7)
    assert len(corpus) == 1000
    config = tmp_path / "trend.toml"
    config.write_text(TREND_CONFIG.format(manifest=(tmp_path / "corpus" / "manifest.csv").as_posix()), encoding="utf-8")

    independent = {b: [] for b in TREND_BRANCHES}
    distilled = {b: [] for b in TREND_BRANCHES}
    ensemble, best_branch = [], []
    for seed in TREND_SEEDS:
        work = tmp_path / f"seed_{seed}"
        for step in (
            ("extract",),
            ("train", "--desk-scale"),
            ("distill", "--desk-scale"),
            ("evaluate", "--stage", "train"),
            ("evaluate", "--stage", "distill"),
            ("ensemble-eval", "--stage", "distill"),
        ):
            assert _run(config, work, *step, "--seed", str(seed), "--workers", "2") == 0, (seed, step)

        names = [f"{stage}_{b}" for stage in ("train", "distill") for b in TREND_BRANCHES] + ["ensemble_distill"]
        reports = {name: read_metrics(work / "metrics" / f"{name}.csv") for name in names}
        for report in reports.values():
            assert report.map_at_3 >= report.accuracy
        for branch in TREND_BRANCHES:
            independent[branch].append(reports[f"train_{branch}"].accuracy)
            distilled[branch].append(reports[f"distill_{branch}"].accuracy)
        ensemble.append(reports["ensemble_distill"].accuracy)
        best_branch.append(max(reports[f"distill_{b}"].accuracy for b in TREND_BRANCHES))

    for branch in TREND_BRANCHES:
        assert np.median(distilled[branch]) >= np.median(independent[branch]) - 0.010, branch
    assert np.median(ensemble) >= np.median(best_branch) - 0.005
