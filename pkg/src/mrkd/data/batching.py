# src/mrkd/data/batching.py
from __future__ import annotations

from typing import Iterator, List, Sequence

import numpy as np

from ..errors import ParameterError


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Перестановка 0..n-1, воспроизводимая по паре (seed, epoch)."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def batcher(ids: Sequence[str], batch_size: int, seed: int, epoch: int) -> Iterator[List[str]]:
    """
    Перемешанные батчи id за одну эпоху; последний неполный батч не отбрасывается.
    """
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    order = epoch_order(len(ids), seed, epoch)
    for start in range(0, len(order), batch_size):
        yield [ids[i] for i in order[start : start + batch_size]]
