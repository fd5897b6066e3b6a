# src/mrkd/handlers/evaluation.py
from __future__ import annotations

import argparse
import csv
import logging
from pathlib import Path
from typing import Dict, List, Optional

from .. import texts
from ..config import BranchConfig, RunConfig
from ..data.manifest import DatasetManifest
from ..errors import MissingPrerequisiteError
from ..schemas import MetricsReport
from ..services.distill_service import mean_probabilities
from ..services.evaluation_service import (
    Scorer,
    export_logits,
    load_scorer,
    metrics_from_probabilities,
    read_metrics,
    score_split_async,
    write_metrics,
)
from ..workspace import STAGE_DISTILL, STAGE_TRAIN, Workspace
from .common import Router, arg, dry_run_done, manifest_for, select_branches, workspace_for

logger = logging.getLogger(__name__)

router = Router("evaluation")

# ensemble-eval: baseline собирается из независимо обученных веток
ENSEMBLE_STAGES = {"distill": STAGE_DISTILL, "baseline": STAGE_TRAIN}


def _stage_flag(default: str = STAGE_DISTILL):
    return arg("--stage", choices=[STAGE_TRAIN, STAGE_DISTILL], default=default, help="чьи чекпоинты оценивать")


def _branch_flag():
    return arg("--branch", action="append", default=None, help="id ветки (можно повторять; по умолчанию все)")


def _split_flag():
    return arg("--split", default="test", help="сплит манифеста")


def _prepare_scorers(
    settings: RunConfig,
    stage: str,
    requested: Optional[List[str]],
    split: str,
):
    manifest = manifest_for(settings)
    manifest.split_entries(split)
    workspace = workspace_for(settings)
    branches = select_branches(settings, requested)
    workspace.require_features([settings.feature_tag(b) for b in branches])
    workspace.require_checkpoints(stage, [b.branch_id for b in branches])
    return manifest, workspace, branches


def _load_scorers(
    settings: RunConfig,
    workspace: Workspace,
    branches: List[BranchConfig],
    stage: str,
    manifest: DatasetManifest,
) -> List[Scorer]:
    return [load_scorer(settings, workspace, b, stage, manifest.n_classes) for b in branches]


def _report(report: MetricsReport, workspace: Workspace) -> None:
    write_metrics(report, workspace)
    print(
        texts.METRICS_HEADER.format(
            name=report.name, accuracy=report.accuracy, map_at_3=report.map_at_3, n=report.n_evaluated
        )
    )


@router.command(
    "evaluate",
    help="accuracy и mAP@3 уровня клипа для каждой ветки",
    arguments=[_stage_flag(), _branch_flag(), _split_flag()],
)
async def cmd_evaluate(args: argparse.Namespace, settings: RunConfig) -> int:
    manifest, workspace, branches = _prepare_scorers(settings, args.stage, args.branch, args.split)
    if args.dry_run:
        return dry_run_done()

    scorers = _load_scorers(settings, workspace, branches, args.stage, manifest)
    entries, probs = await score_split_async(scorers, manifest, args.split, workers=settings.output.workers)
    labels = [e.label_index for e in entries]
    for scorer, branch_probs in zip(scorers, probs):
        report = metrics_from_probabilities(
            branch_probs, labels, name=f"{args.stage}_{scorer.branch_id}", class_names=manifest.class_names
        )
        _report(report, workspace)
    return 0


@router.command(
    "ensemble-eval",
    help="ансамбль веток: среднее вероятностей (distill = Ensemble*, baseline = без дистилляции)",
    arguments=[
        arg("--stage", choices=sorted(ENSEMBLE_STAGES), default="distill"),
        _branch_flag(),
        _split_flag(),
    ],
)
async def cmd_ensemble_eval(args: argparse.Namespace, settings: RunConfig) -> int:
    stage = ENSEMBLE_STAGES[args.stage]
    manifest, workspace, branches = _prepare_scorers(settings, stage, args.branch, args.split)
    if args.dry_run:
        return dry_run_done()

    scorers = _load_scorers(settings, workspace, branches, stage, manifest)
    entries, probs = await score_split_async(scorers, manifest, args.split, workers=settings.output.workers)
    report = metrics_from_probabilities(
        mean_probabilities(list(probs)),
        [e.label_index for e in entries],
        name=f"ensemble_{args.stage}",
        class_names=manifest.class_names,
    )
    logger.info("Ensemble of %s over %d clips", ", ".join(s.branch_id for s in scorers), len(entries))
    _report(report, workspace)
    return 0


@router.command(
    "export-logits",
    help="логиты уровня клипа одной ветки в CSV",
    arguments=[
        _stage_flag(),
        arg("--branch", required=True, help="id ветки"),
        _split_flag(),
        arg("--out", type=Path, default=None, help="путь CSV (по умолчанию <work_dir>/logits/<stage>_<branch>_<split>.csv)"),
    ],
)
async def cmd_export_logits(args: argparse.Namespace, settings: RunConfig) -> int:
    manifest, workspace, branches = _prepare_scorers(settings, args.stage, [args.branch], args.split)
    if args.dry_run:
        return dry_run_done()

    scorer = _load_scorers(settings, workspace, branches, args.stage, manifest)[0]
    out = args.out or workspace.logits_path(f"{args.stage}_{scorer.branch_id}_{args.split}")
    n_rows = export_logits(scorer, manifest, args.split, out)
    print(texts.EXPORT_DONE.format(n_rows=n_rows, path=out))
    return 0


# ---------- Сводка ----------


def _metrics_or_error(workspace: Workspace, name: str, command: str) -> MetricsReport:
    path = workspace.root / "metrics" / f"{name}.csv"
    if not path.is_file():
        raise MissingPrerequisiteError(f"metrics {name!r}", command)
    return read_metrics(path)


def _compare_row(independent: MetricsReport, distilled: MetricsReport) -> Dict[str, float]:
    return {
        "acc": independent.accuracy,
        "acc_star": distilled.accuracy,
        "d_acc": distilled.accuracy - independent.accuracy,
        "map3": independent.map_at_3,
        "map3_star": distilled.map_at_3,
        "d_map3": distilled.map_at_3 - independent.map_at_3,
    }


@router.command(
    "compare",
    help="таблица: независимое обучение против дистилляции (по веткам и ансамблям)",
    arguments=[_branch_flag()],
)
async def cmd_compare(args: argparse.Namespace, settings: RunConfig) -> int:
    workspace = workspace_for(settings)
    branches = select_branches(settings, args.branch)
    rows = []
    for branch in branches:
        independent = _metrics_or_error(workspace, f"{STAGE_TRAIN}_{branch.branch_id}", "evaluate --stage train")
        distilled = _metrics_or_error(workspace, f"{STAGE_DISTILL}_{branch.branch_id}", "evaluate --stage distill")
        rows.append(
            texts.COMPARE_ROW.format(
                branch=branch.branch_id,
                representation=branch.representation,
                **_compare_row(independent, distilled),
            )
        )

    have_ensembles = all((workspace.root / "metrics" / f"ensemble_{s}.csv").is_file() for s in ENSEMBLE_STAGES)
    if have_ensembles:
        baseline = _metrics_or_error(workspace, "ensemble_baseline", "ensemble-eval --stage baseline")
        starred = _metrics_or_error(workspace, "ensemble_distill", "ensemble-eval --stage distill")
        rows.append(texts.COMPARE_ENSEMBLE_ROW.format(**_compare_row(baseline, starred)))
    else:
        logger.info("Ensemble metrics not found, comparison has branch rows only")
    if args.dry_run:
        return dry_run_done()

    lines = [texts.COMPARE_HEADER, *rows]
    out = workspace.metrics_path("compare", ".tsv")
    with open(out, "w", encoding="utf-8", newline="") as fh:
        csv.writer(fh, delimiter="\t", lineterminator="\n").writerows(line.split("\t") for line in lines)
    print("\n".join(lines))
    print(texts.COMPARE_NOTE)
    return 0
