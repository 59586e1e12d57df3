"""Adversarial objectives: the bi-directional loss and the MSE baseline.

Both return values the search loop minimizes.  The branch of the
bi-directional loss is anchored once, on the victim's score of the clean
image, and never re-evaluated mid-attack.
"""

from __future__ import annotations

import enum
from typing import Callable

from .oracle import ScoreBounds


class LossKind(enum.Enum):
    BI_DIRECTIONAL = "bidi"
    MSE_BASELINE = "mse"


def bidirectional_loss(
    score_perturbed: float, score_original: float, bounds: ScoreBounds
) -> float:
    """Piecewise objective steering the perturbed score away from the original.

    Originals strictly above the range midpoint are pushed down (the loss is
    the perturbed score itself); everything else, midpoint included, is
    pushed up (negated perturbed score).
    """
    if score_original > bounds.midpoint():
        return score_perturbed
    return -score_perturbed


def mse_loss(score_perturbed: float, score_original: float) -> float:
    """Negated squared score deviation.

    The baseline maximizes the squared difference between the two scores;
    negation fits it into the same minimize-loss search loop.
    """
    diff = score_perturbed - score_original
    return -(diff * diff)


def make_loss(
    kind: LossKind, score_original: float, bounds: ScoreBounds
) -> Callable[[float], float]:
    """Bind a loss to the (fixed) original score, yielding score -> loss."""
    if kind is LossKind.BI_DIRECTIONAL:
        if score_original > bounds.midpoint():
            return lambda s: s
        return lambda s: -s
    if kind is LossKind.MSE_BASELINE:
        return lambda s: mse_loss(s, score_original)
    raise ValueError(f"unknown loss kind {kind!r}")
