# src/mrkd/autodiff/mixup.py
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ParameterError

DEFAULT_ALPHA = 0.2


@dataclass(frozen=True)
class MixedBatch:
    x: np.ndarray
    targets: np.ndarray
    lam: float
    perm: np.ndarray

    def mix_rows(self, rows: np.ndarray) -> np.ndarray:
        """Смешивает дополнительные построчные цели (строки учителя) тем же lam и перестановкой."""
        return mix(rows, self.lam, self.perm)


def mix(values: np.ndarray, lam: float, perm: np.ndarray) -> np.ndarray:
    lam_arr = np.asarray(lam, dtype=values.dtype)
    return lam_arr * values + (1 - lam_arr) * values[perm]


def one_hot(labels: np.ndarray, n_classes: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], n_classes), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def mixup(
    batch_x: np.ndarray,
    batch_targets: np.ndarray,
    alpha: float = DEFAULT_ALPHA,
    seed: int = 0,
    lam: Optional[float] = None,
) -> MixedBatch:
    """
    lam ~ Beta(alpha, alpha) на батч; x = lam*x_i + (1-lam)*x_perm(i), цели так же.
    lam и перестановка воспроизводимы по seed; lam можно задать явно.
    """
    if batch_x.shape[0] < 2:
        raise ParameterError(f"mixup needs a batch of at least 2, got {batch_x.shape[0]}")
    if batch_x.shape[0] != batch_targets.shape[0]:
        raise ParameterError(
            f"mixup batch sizes differ: inputs {batch_x.shape[0]}, targets {batch_targets.shape[0]}"
        )
    rng = np.random.default_rng(seed)
    if lam is None:
        if alpha <= 0:
            raise ParameterError(f"mixup alpha must be > 0, got {alpha}")
        lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(batch_x.shape[0])
    return MixedBatch(
        x=mix(batch_x, lam, perm),
        targets=mix(batch_targets, lam, perm),
        lam=float(lam),
        perm=perm,
    )
