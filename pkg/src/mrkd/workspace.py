# src/mrkd/workspace.py
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List

from .autodiff.checkpoint import CHECKPOINT_SUFFIX
from .config import SYNTHETIC_SUBDIR, RunConfig
from .errors import MissingPrerequisiteError
from .features.cache import CACHE_SUFFIX, atomic_write_bytes

logger = logging.getLogger(__name__)

STAGE_TRAIN = "train"
STAGE_DISTILL = "distill"
STAGES = (STAGE_TRAIN, STAGE_DISTILL)

FINAL_CHECKPOINT = "final"
STATS_NAME = "stats.npz"


@dataclass
class Workspace:
    """
    Раскладка рабочего каталога: все артефакты команд живут здесь.

      features/<tag>/<clip_id>.mrkd, features/<tag>/stats.npz
      checkpoints/<stage>/<branch_id>/cycle_QQQ_<phase>.mrkp, final.mrkp
      soft_labels/cycle_QQQ/<branch_id>.mrkd, teacher.mrkd
      logs/training_<stage>.tsv, logs/run.log
      metrics/<name>.txt, <name>.csv, <name>_confusion.csv
      logits/<name>.csv
    """

    root: Path

    @classmethod
    def from_settings(cls, cfg: RunConfig) -> "Workspace":
        logger.debug("Workspace at %s", cfg.work_dir.resolve())
        return cls(root=cfg.work_dir)

    # ---------- каталоги ----------

    def _dir(self, *parts: str) -> Path:
        path = self.root.joinpath(*parts)
        path.mkdir(parents=True, exist_ok=True)
        return path

    def synthetic_dir(self) -> Path:
        return self.root / SYNTHETIC_SUBDIR

    def features_dir(self, representation: str) -> Path:
        return self._dir("features", representation)

    def feature_path(self, representation: str, clip_id: str) -> Path:
        return self.features_dir(representation) / f"{clip_id}{CACHE_SUFFIX}"

    def stats_path(self, representation: str) -> Path:
        return self.features_dir(representation) / STATS_NAME

    def checkpoint_dir(self, stage: str, branch_id: str) -> Path:
        return self._dir("checkpoints", stage, branch_id)

    def checkpoint_path(self, stage: str, branch_id: str, name: str = FINAL_CHECKPOINT) -> Path:
        return self.checkpoint_dir(stage, branch_id) / f"{name}{CHECKPOINT_SUFFIX}"

    def cycle_checkpoint_path(self, branch_id: str, cycle: int, phase: str) -> Path:
        return self.checkpoint_path(STAGE_DISTILL, branch_id, f"cycle_{cycle:03d}_{phase}")

    def soft_label_path(self, cycle: int, name: str) -> Path:
        return self._dir("soft_labels", f"cycle_{cycle:03d}") / f"{name}{CACHE_SUFFIX}"

    def training_log_path(self, stage: str) -> Path:
        return self._dir("logs") / f"training_{stage}.tsv"

    def run_log_path(self) -> Path:
        return self._dir("logs") / "run.log"

    def metrics_path(self, name: str, suffix: str = ".txt") -> Path:
        return self._dir("metrics") / f"{name}{suffix}"

    def logits_path(self, name: str) -> Path:
        return self._dir("logits") / f"{name}.csv"

    def resolved_config_path(self) -> Path:
        return self.root / "resolved_config.json"

    # ---------- предусловия ----------

    def require_features(self, representations: List[str]) -> None:
        for tag in representations:
            if not (self.root / "features" / tag / STATS_NAME).is_file():
                raise MissingPrerequisiteError(f"feature cache for {tag!r} in {self.root}", "extract")

    def require_checkpoints(self, stage: str, branch_ids: List[str]) -> None:
        for branch_id in branch_ids:
            path = self.root / "checkpoints" / stage / branch_id / f"{FINAL_CHECKPOINT}{CHECKPOINT_SUFFIX}"
            if not path.is_file():
                raise MissingPrerequisiteError(f"{stage} checkpoint for branch {branch_id!r}", stage)

    # ---------- provenance ----------

    def write_resolved_config(self, cfg: RunConfig, command: str) -> Path:
        payload = {"command": command, "written_at": utc_now_iso(), "config": cfg.to_dict()}
        path = self.resolved_config_path()
        atomic_write_bytes(path, (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode("utf-8"))
        logger.info("Resolved config written to %s", path)
        return path


def utc_now_iso() -> str:
    """
    Время в ISO-формате (UTC) для отметок provenance.
    """
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()


_workspaces: Dict[Path, Workspace] = {}


def get_workspace(cfg: RunConfig) -> Workspace:
    """
    Возвращает Workspace для рабочего каталога конфига (по одному на каталог).
    """
    key = cfg.work_dir.resolve()
    if key not in _workspaces:
        _workspaces[key] = Workspace.from_settings(cfg)
    return _workspaces[key]
