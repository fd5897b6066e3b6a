# src/mrkd/handlers/data.py
from __future__ import annotations

import argparse
import asyncio
import logging
from pathlib import Path

from .. import texts
from ..config import RunConfig
from ..data.synthetic import gen_synthetic
from ..errors import ParameterError
from ..services.feature_store import extract_all
from .common import Router, arg, dry_run_done, manifest_for, workspace_for

logger = logging.getLogger(__name__)

router = Router("data")


@router.command(
    "gen-synthetic",
    help="сгенерировать синтетический корпус WAV + manifest.csv",
    arguments=[
        arg("--classes", type=int, default=10, help="число классов (2..20)"),
        arg("--clips-per-class", type=int, default=100),
        arg("--out", type=Path, default=None, help="каталог корпуса (по умолчанию <work_dir>/synthetic)"),
        arg("--label-corruption", type=float, default=0.0, help="доля испорченных меток train"),
    ],
    needs_manifest=False,
)
async def cmd_gen_synthetic(args: argparse.Namespace, settings: RunConfig) -> int:
    out_dir = args.out or workspace_for(settings).synthetic_dir()
    if args.classes < 2 or args.clips_per_class < 1:
        raise ParameterError(f"need --classes >= 2 and --clips-per-class >= 1, got {args.classes}, {args.clips_per_class}")
    if args.dry_run:
        return dry_run_done()

    manifest = await asyncio.to_thread(
        gen_synthetic,
        out_dir,
        n_classes=args.classes,
        clips_per_class=args.clips_per_class,
        seed=settings.dataset.seed,
        label_corruption=args.label_corruption,
        sample_rate=settings.dataset.sample_rate,
        n_samples=settings.dataset.canonical_length,
    )
    logger.info("Synthetic corpus written to %s", out_dir)
    print(
        texts.GEN_SYNTHETIC_DONE.format(
            n_clips=len(manifest), n_classes=manifest.n_classes, manifest=Path(out_dir) / "manifest.csv"
        )
    )
    return 0


@router.command(
    "extract",
    help="извлечь и закэшировать признаки всех представлений веток",
    arguments=[arg("--force", action="store_true", help="пересчитать уже закэшированные клипы")],
)
async def cmd_extract(args: argparse.Namespace, settings: RunConfig) -> int:
    manifest = manifest_for(settings)
    manifest.split_entries("train")
    if args.dry_run:
        return dry_run_done()

    workspace = workspace_for(settings)
    for feature_cfg in settings.feature_sets():
        await extract_all(
            manifest,
            feature_cfg,
            workspace,
            canonical_length=settings.dataset.canonical_length,
            workers=settings.output.workers,
            force=args.force,
        )
        print(
            texts.EXTRACT_DONE.format(
                representation=feature_cfg.cache_tag,
                n_clips=len(manifest),
                directory=workspace.features_dir(feature_cfg.cache_tag),
            )
        )
    return 0
