# src/mrkd/data/manifest.py
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np

from ..errors import ManifestError
from ..schemas import MANIFEST_COLUMNS, SPLITS, ManifestEntry

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DatasetManifest:
    """
    Неизменяемый список клипов: путь, индекс метки, сплит.
    Порядок записей = порядок строк CSV; на нём держится выравнивание мягких меток.
    """

    entries: List[ManifestEntry]
    class_names: List[str]
    root: Path = field(default_factory=Path)
    _by_id: Dict[str, ManifestEntry] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", list(self.entries))
        object.__setattr__(self, "class_names", list(self.class_names))
        object.__setattr__(self, "_by_id", {e.clip_id: e for e in self.entries})

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return len(self.entries)

    def split_entries(self, split: str) -> List[ManifestEntry]:
        if split not in SPLITS:
            raise ManifestError(f"unknown split {split!r}, expected one of {', '.join(SPLITS)}")
        selected = [e for e in self.entries if e.split == split]
        if not selected:
            raise ManifestError(f"split {split!r} is empty in manifest {self.root}")
        return selected

    def split_ids(self, split: str) -> List[str]:
        return [e.clip_id for e in self.split_entries(split)]

    def labels(self, clip_ids: Sequence[str]) -> np.ndarray:
        return np.array([self._by_id[cid].label_index for cid in clip_ids], dtype=np.int64)

    def resolve(self, entry: ManifestEntry) -> Path:
        path = Path(entry.path)
        return path if path.is_absolute() else self.root / path


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    """
    CSV с заголовком path,label[,split]. Метки нумеруются по алфавиту имён классов.
    Нет колонки split: все строки считаются train.
    Номера строк в ошибках считаются как в файле (заголовок = строка 1).
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8-sig", newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames
            if not header:
                raise ManifestError(f"manifest {path} is empty", row=1)
            header = [h.strip() for h in header]
            reader.fieldnames = header
            missing = [c for c in ("path", "label") if c not in header]
            if missing:
                raise ManifestError(f"header lacks column(s) {', '.join(missing)}", row=1)

            entries: List[ManifestEntry] = []
            seen: Dict[str, int] = {}
            seen_ids: Dict[str, int] = {}
            for raw in reader:
                row_no = reader.line_num
                if None in raw or any(v is None for v in raw.values()):
                    raise ManifestError("unreadable row: wrong number of fields", row=row_no)
                entry = ManifestEntry.from_row(raw)
                if not entry.path or not entry.label:
                    raise ManifestError("path and label must be non-empty", row=row_no)
                if entry.split not in SPLITS:
                    raise ManifestError(
                        f"unknown split tag {entry.split!r}, expected one of {', '.join(SPLITS)}", row=row_no
                    )
                if entry.path in seen:
                    raise ManifestError(f"duplicate path {entry.path!r} (first seen at row {seen[entry.path]})", row=row_no)
                if entry.clip_id in seen_ids:
                    raise ManifestError(
                        f"path {entry.path!r} maps to the same clip id as row {seen_ids[entry.clip_id]}", row=row_no
                    )
                seen[entry.path] = row_no
                seen_ids[entry.clip_id] = row_no
                entries.append(entry)
    except UnicodeDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid UTF-8: {exc}") from exc
    except csv.Error as exc:
        raise ManifestError(f"malformed CSV in {path}: {exc}") from exc

    if not entries:
        raise ManifestError(f"manifest {path} has no data rows", row=2)

    class_names = sorted({e.label for e in entries})
    index = {name: i for i, name in enumerate(class_names)}
    for entry in entries:
        entry.label_index = index[entry.label]

    logger.info("Manifest %s: %d clips, %d classes", path, len(entries), len(class_names))
    return DatasetManifest(entries=entries, class_names=class_names, root=path.resolve().parent)


def write_manifest(path: Union[str, Path], entries: Sequence[ManifestEntry]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for entry in entries:
            writer.writerow(entry.to_row())
    return path
