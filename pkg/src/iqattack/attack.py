"""Random-search adversarial example generation.

The accept-if-improved loop queries the victim once per iteration with a
candidate built by overwriting random square patches of the running
perturbation with fresh +-rho sign maps.  Patch squares shrink on a
milestone schedule so the search moves from broad exploration to local
refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .image import ImageTensor
from .loss import LossKind, make_loss
from .oracle import OracleFailure, QualityOracle, ScoreBounds, DEFAULT_BOUNDS

# Milestone iterations (for T=10000) at which the square-size factor halves.
DECAY_MILESTONES_10K = (10, 50, 200, 500, 1000, 2000, 4000, 6000, 8000)

PATCH_MODES = ("per-pixel", "constant-per-channel")


@dataclass(frozen=True)
class AttackConfig:
    """Knobs of one attack run.

    patch_mode "per-pixel" samples one sign per spatial location and
    replicates it across channels; "constant-per-channel" fills the whole
    patch with one sign per channel (an alternative reading kept for
    ablations).
    """

    max_iterations: int = 10000
    num_patches: int = 2
    gamma0: float = 0.04
    rho: float = 3.0 / 255.0
    bounds: ScoreBounds = DEFAULT_BOUNDS
    loss: LossKind = LossKind.BI_DIRECTIONAL
    seed: int = 0
    init_random: bool = True
    patch_mode: str = "per-pixel"

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.num_patches < 1:
            raise ValueError("num_patches must be >= 1")
        if not 0.0 < self.gamma0 <= 1.0:
            raise ValueError("gamma0 must lie in (0, 1]")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.patch_mode not in PATCH_MODES:
            raise ValueError(f"patch_mode must be one of {PATCH_MODES}")


@dataclass
class AttackResult:
    adversarial: ImageTensor
    original_score: float
    final_score: float
    loss_trace: list[tuple[int, float, bool]]
    queries: int
    linf: float
    aborted: bool = False
    abort_reason: str = ""
    # (iteration, best score so far) samples for query-progression curves;
    # iteration 0 is the initialized perturbation.
    score_curve: list[tuple[int, float]] = field(default_factory=list)


def square_size(gamma_t: float, height: int, width: int) -> int:
    """Side length floor(sqrt(gamma_t * h * w)), clamped to [1, min(h, w)]."""
    if gamma_t <= 0.0:
        raise ValueError("gamma_t must be positive")
    s = int(math.floor(math.sqrt(gamma_t * height * width)))
    return max(1, min(s, height, width))


def decay_schedule(max_iterations: int) -> list[int]:
    """Iterations at which the square-size factor is halved.

    For T=10000 this is the canonical milestone set; for other budgets each
    milestone m becomes round-half-up(m * T / 10000), with zeros dropped and
    duplicates collapsed.
    """
    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    out: list[int] = []
    for m in DECAY_MILESTONES_10K:
        scaled = int(math.floor(m * max_iterations / 10000.0 + 0.5))
        if scaled > 0 and scaled not in out:
            out.append(scaled)
    return out


def init_perturbation(
    x: ImageTensor, rho: float, rng: np.random.Generator, init_random: bool = True
) -> ImageTensor:
    """Shift every element by an independent +-rho sign, then clip to [0, 1].

    With init_random=False the image is returned unchanged (ablation case).
    """
    if not init_random:
        return x
    signs = rng.integers(0, 2, size=x.shape) * 2 - 1
    return ImageTensor(np.clip(x.array + signs * rho, 0.0, 1.0))


def _overwrite_patches(
    delta: np.ndarray,
    height: int,
    width: int,
    s: int,
    config: AttackConfig,
    rng: np.random.Generator,
) -> None:
    # Draw order per patch is fixed (values, row, col) for reproducibility.
    for _ in range(config.num_patches):
        if config.patch_mode == "per-pixel":
            signs = rng.integers(0, 2, size=(s, s, 1)) * 2 - 1
            patch = signs * config.rho
        else:  # constant-per-channel
            signs = rng.integers(0, 2, size=(1, 1, delta.shape[2])) * 2 - 1
            patch = np.broadcast_to(signs * config.rho, (s, s, delta.shape[2]))
        row = int(rng.integers(0, height - s + 1))
        col = int(rng.integers(0, width - s + 1))
        delta[row : row + s, col : col + s, :] = patch


def gamma_at(t: int, gamma0: float, milestones: list[int]) -> float:
    """Square-size factor in effect at iteration t (halvings applied at milestones)."""
    halvings = sum(1 for m in milestones if m <= t)
    return gamma0 / (2.0**halvings)


def perturb(
    x: ImageTensor,
    x_opt: ImageTensor,
    t: int,
    config: AttackConfig,
    rng: np.random.Generator,
    milestones: Optional[list[int]] = None,
) -> ImageTensor:
    """Build the iteration-t candidate from the incumbent solution.

    Overwrites n random squares of the running delta with fresh +-rho sign
    maps (later patches win where they overlap) and re-clips to [0, 1].
    """
    if x.shape != x_opt.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_opt.shape}")
    if milestones is None:
        milestones = decay_schedule(config.max_iterations)
    h, w = x.height, x.width
    s = square_size(gamma_at(t, config.gamma0, milestones), h, w)
    delta = x_opt.array - x.array
    _overwrite_patches(delta, h, w, s, config, rng)
    return ImageTensor(np.clip(x.array + delta, 0.0, 1.0))


def rng_for_image(seed: int, image_index: int) -> np.random.Generator:
    """Child RNG stream for one image of a batch.

    Streams are keyed by (seed, image index) so batch order and concurrency
    never change per-image results.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(image_index,))))


def run_attack(
    x: ImageTensor,
    oracle: QualityOracle,
    config: AttackConfig,
    original_score: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
    curve_every: int = 100,
    on_candidate: Optional[Callable[[int, ImageTensor], None]] = None,
) -> AttackResult:
    """Accept-if-improved search for the maximally deviating perturbation.

    ``original_score`` anchors the loss branch; when omitted it is obtained
    with a single extra oracle query that is not counted in the result's
    query total (which is always 1 + T for completed runs).  Oracle failures
    abort the run, returning the best solution so far with ``aborted`` set.
    """
    if oracle.bounds() != config.bounds:
        raise ValueError(
            f"oracle bounds {oracle.bounds()} differ from config bounds {config.bounds}"
        )
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed)))

    if original_score is None:
        original_score = oracle.score(x)

    loss_of = make_loss(config.loss, original_score, config.bounds)
    T = config.max_iterations
    milestones = decay_schedule(T) if T >= 1 else []

    x_opt = init_perturbation(x, config.rho, rng, config.init_random)
    trace: list[tuple[int, float, bool]] = []
    curve: list[tuple[int, float]] = []
    queries = 0
    aborted = False
    reason = ""

    def result(best_score: float) -> AttackResult:
        delta = np.max(np.abs(x_opt.array - x.array)) if x_opt is not x else 0.0
        return AttackResult(
            adversarial=x_opt,
            original_score=original_score,
            final_score=best_score,
            loss_trace=trace,
            queries=queries,
            linf=float(delta),
            aborted=aborted,
            abort_reason=reason,
            score_curve=curve,
        )

    try:
        best_score = oracle.score(x_opt)
        queries += 1
    except OracleFailure as exc:
        aborted, reason = True, str(exc)
        return result(math.nan)
    j_opt = loss_of(best_score)
    trace.append((0, j_opt, True))
    curve.append((0, best_score))

    for t in range(1, T + 1):
        candidate = perturb(x, x_opt, t, config, rng, milestones)
        if on_candidate is not None:
            on_candidate(t, candidate)
        try:
            cand_score = oracle.score(candidate)
            queries += 1
        except OracleFailure as exc:
            aborted, reason = True, str(exc)
            break
        j_t = loss_of(cand_score)
        accepted = j_t < j_opt
        if accepted:
            j_opt = j_t
            x_opt = candidate
            best_score = cand_score
        trace.append((t, j_t, accepted))
        if curve_every > 0 and t % curve_every == 0:
            curve.append((t, best_score))

    if curve_every > 0 and (not curve or curve[-1][0] != T) and not aborted:
        curve.append((T, best_score))
    return result(best_score)
