"""Attack-quality and model-performance metrics: RGO, SRCC, PLCC."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .oracle import ScoreBounds


class DegenerateCorrelationError(ValueError):
    """Correlation is undefined because one input has no variation."""


@dataclass(frozen=True)
class ScorePair:
    """Victim scores of one image before and after the attack."""

    original: float
    adversarial: float
    mos: Optional[float] = None


def rgo_single(original: float, adversarial: float, bounds: ScoreBounds) -> float:
    """Achieved score change over the maximum achievable change for one image."""
    denom = max(bounds.beta2 - original, original - bounds.beta1)
    if denom <= 0.0:
        raise ValueError("original score leaves no achievable change")
    return abs(adversarial - original) / denom


def rgo(pairs: Sequence[ScorePair], bounds: ScoreBounds) -> float:
    """Mean per-image ratio of achieved to maximum achievable score change."""
    if not pairs:
        raise ValueError("rgo needs at least one score pair")
    return sum(rgo_single(p.original, p.adversarial, bounds) for p in pairs) / len(pairs)


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks, ties receiving the mean of their rank positions."""
    arr = np.asarray(values, dtype=np.float64)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(arr.size, dtype=np.float64)
    i = 0
    while i < arr.size:
        j = i
        while j + 1 < arr.size and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if denom == 0.0:
        raise DegenerateCorrelationError("zero variance in correlation input")
    return float(np.sum(a * b) / denom)


def _validate_lists(predictions, mos) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=np.float64)
    m = np.asarray(mos, dtype=np.float64)
    if p.shape != m.shape or p.ndim != 1:
        raise ValueError(f"prediction/MOS lists must match, got {p.shape} vs {m.shape}")
    if p.size < 2:
        raise ValueError("correlation needs at least 2 points")
    return p, m


def srcc(predictions: Sequence[float], mos: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties.

    The general Pearson-of-ranks form is used instead of the 6*sum(d^2)
    shortcut because attacked-score lists routinely contain ties at the
    clamped extremes; the two agree when no ties exist.
    """
    p, m = _validate_lists(predictions, mos)
    return _pearson(average_ranks(p), average_ranks(m))


def plcc(predictions: Sequence[float], mos: Sequence[float]) -> float:
    """Pearson product-moment correlation."""
    p, m = _validate_lists(predictions, mos)
    return _pearson(p, m)
