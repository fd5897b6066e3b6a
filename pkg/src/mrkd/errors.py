# src/mrkd/errors.py
from __future__ import annotations

from typing import Iterable, List, Optional


class MrkdError(Exception):
    """
    Базовая ошибка тулкита.
    category и exit_code используются CLI для кода возврата.
    """

    category = "error"
    exit_code = 1


# ---------- Данные и форматы ----------


class AudioDecodeError(MrkdError, ValueError):
    category = "decode"
    exit_code = 4


class UnsupportedFormatError(MrkdError, ValueError):
    category = "unsupported-format"
    exit_code = 4

    def __init__(self, field: str, value: object, expected: str) -> None:
        self.field = field
        self.value = value
        super().__init__(f"unsupported {field}: {value!r} (expected {expected})")


class InvalidInputError(MrkdError, ValueError):
    category = "invalid-input"
    exit_code = 4


class CorruptCacheError(MrkdError, ValueError):
    category = "corrupt-cache"
    exit_code = 4


class ManifestError(MrkdError, ValueError):
    category = "manifest"
    exit_code = 4

    def __init__(self, message: str, row: Optional[int] = None) -> None:
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class MissingFeatureError(MrkdError, KeyError):
    category = "missing-feature"
    exit_code = 3

    def __init__(self, clip_id: str, representation: str) -> None:
        self.clip_id = clip_id
        self.representation = representation
        super().__init__(f"no {representation} features cached for clip {clip_id!r}")

    def __str__(self) -> str:
        return self.args[0]


# ---------- Параметры и численные ошибки ----------


class ParameterError(MrkdError, ValueError):
    category = "parameter"
    exit_code = 2


class ShapeError(MrkdError, ValueError):
    category = "shape"

    def __init__(self, op: str, *shapes: Iterable[int]) -> None:
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        rendered = " and ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class NumericError(MrkdError, ArithmeticError):
    category = "numeric"
    exit_code = 5


class InvalidDistributionError(MrkdError, ValueError):
    category = "invalid-distribution"


class AggregationError(MrkdError, ValueError):
    category = "aggregation"


class InvalidPredictionError(MrkdError, ValueError):
    category = "invalid-prediction"


# ---------- Конфигурация и CLI ----------


class ConfigError(MrkdError):
    category = "config"
    exit_code = 2

    def __init__(self, violations: List[str]) -> None:
        self.violations = list(violations)
        lines = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(f"{len(self.violations)} config violation(s):\n{lines}")


class MissingPrerequisiteError(MrkdError):
    category = "missing-prerequisite"
    exit_code = 3

    def __init__(self, what: str, command: str) -> None:
        self.what = what
        self.command = command
        super().__init__(f"{what} not found; run `mrkd {command}` first")
