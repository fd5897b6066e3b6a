# src/mrkd/handlers/training.py
from __future__ import annotations

import argparse
import asyncio
import logging
from typing import List

from .. import texts
from ..autodiff.checkpoint import save_checkpoint
from ..config import RunConfig
from ..schemas import TrainingLogRecord
from ..services.distill_service import TrainingLog, run_cycles_async
from ..services.training_service import Branch, build_branches, train_independent
from ..workspace import STAGE_DISTILL, STAGE_TRAIN
from .common import Router, dry_run_done, manifest_for, workspace_for

logger = logging.getLogger(__name__)

router = Router("training")


def _prepare(settings: RunConfig):
    manifest = manifest_for(settings)
    manifest.split_entries("train")
    workspace = workspace_for(settings)
    workspace.require_features([settings.feature_tag(b) for b in settings.branches])
    return manifest, workspace


@router.command("train", help="независимое обучение каждой ветки (baseline, только L_ce)")
async def cmd_train(args: argparse.Namespace, settings: RunConfig) -> int:
    manifest, workspace = _prepare(settings)
    if args.dry_run:
        return dry_run_done()

    schedule = settings.schedule()
    branches = build_branches(settings, workspace, manifest)
    workers = settings.output.workers

    if workers <= 1:
        results = [train_independent(branch, schedule) for branch in branches]
    else:
        semaphore = asyncio.Semaphore(workers)

        async def _one(branch: Branch) -> List[TrainingLogRecord]:
            async with semaphore:
                return await asyncio.to_thread(train_independent, branch, schedule)

        results = list(await asyncio.gather(*(_one(b) for b in branches)))

    # журнал пишется в порядке веток, поэтому не зависит от числа потоков
    log = TrainingLog(workspace.training_log_path(STAGE_TRAIN))
    for records in results:
        log.extend(records)

    for branch in branches:
        path = workspace.checkpoint_path(STAGE_TRAIN, branch.branch_id)
        save_checkpoint(path, branch.model, branch.optimizer)
        print(texts.TRAIN_DONE.format(branch_id=branch.branch_id, path=path))
    return 0


@router.command("distill", help="циклическая многопредставленческая дистилляция всех веток")
async def cmd_distill(args: argparse.Namespace, settings: RunConfig) -> int:
    manifest, workspace = _prepare(settings)
    if args.dry_run:
        return dry_run_done()

    schedule = settings.schedule()
    branches = build_branches(settings, workspace, manifest)
    log = TrainingLog(workspace.training_log_path(STAGE_DISTILL))
    logger.info(
        "Distilling %d branches: Q=%d, b=%d, d=%d, T=%s",
        len(branches),
        schedule.cycles,
        schedule.branch_epochs,
        schedule.distill_epochs,
        schedule.temperature,
    )
    await run_cycles_async(
        branches,
        schedule,
        workers=settings.output.workers,
        workspace=workspace,
        log=log,
        checkpoint_every=settings.output.checkpoint_every,
    )
    print(texts.DISTILL_DONE.format(n_cycles=schedule.cycles, n_branches=len(branches), log=log.path))
    return 0
