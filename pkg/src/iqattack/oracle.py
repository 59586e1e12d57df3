"""Black-box scorer contract, deterministic built-in scorers and calibration.

The built-in scorers exist to make tests oracle-exact: the mean-brightness
scorer is linear in the pixels (its attack optimum is known in closed form)
and the sharpness scorer is a nonlinear but deterministic surrogate.  They
make no claim about human perception.
"""

from __future__ import annotations

import abc
import threading
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .image import ImageTensor, ShapeError


class OracleFailure(Exception):
    """An oracle could not produce a score; attacks surface this as an abort."""


class DegenerateFitError(ValueError):
    """Calibration data cannot pin down a logistic curve."""


@dataclass(frozen=True)
class ScoreBounds:
    """Lower/upper bound of the calibrated score (MOS) range."""

    beta1: float
    beta2: float

    def __post_init__(self):
        if not self.beta1 < self.beta2:
            raise ValueError(f"beta1 must be < beta2, got ({self.beta1}, {self.beta2})")

    def midpoint(self) -> float:
        return (self.beta1 + self.beta2) / 2.0

    def span(self) -> float:
        return self.beta2 - self.beta1

    def clamp(self, value: float) -> float:
        return min(self.beta2, max(self.beta1, value))


# Default range follows the evaluation protocol that rescales all MOS values
# into [0, 10].  The metric definition's prose also mentions (1, 10); the
# bounds stay configurable so either convention can be used explicitly.
DEFAULT_BOUNDS = ScoreBounds(0.0, 10.0)


class _QueryCounter:
    """Exact query count, safe under concurrent increments."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def increment(self) -> None:
        with self._lock:
            self._count += 1

    @property
    def value(self) -> int:
        with self._lock:
            return self._count


class QualityOracle(abc.ABC):
    """Opaque scorer: image in, calibrated score in [beta1, beta2] out.

    Scores must be a pure function of pixel content, and every ``score``
    call increments the query count by exactly one.
    """

    @abc.abstractmethod
    def score(self, img: ImageTensor) -> float: ...

    @abc.abstractmethod
    def bounds(self) -> ScoreBounds: ...

    @abc.abstractmethod
    def queries_used(self) -> int: ...


class MeanBrightnessScorer(QualityOracle):
    """Linear verification scorer: beta1 + span * mean(pixels)."""

    def __init__(self, bounds: ScoreBounds = DEFAULT_BOUNDS):
        self._bounds = bounds
        self._counter = _QueryCounter()

    def score(self, img: ImageTensor) -> float:
        self._counter.increment()
        return self._bounds.beta1 + self._bounds.span() * float(np.mean(img.array))

    def bounds(self) -> ScoreBounds:
        return self._bounds

    def queries_used(self) -> int:
        return self._counter.value


# Fixed logistic squash for the sharpness scorer; offset/scale chosen so that
# smooth images land below the midpoint and +-rho noise moves the score.
_SHARPNESS_OFFSET = 0.03
_SHARPNESS_SCALE = 0.015

_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class SharpnessScorer(QualityOracle):
    """Nonlinear verification scorer: logistic of the mean |4-neighbour Laplacian|."""

    def __init__(self, bounds: ScoreBounds = DEFAULT_BOUNDS):
        self._bounds = bounds
        self._counter = _QueryCounter()

    def score(self, img: ImageTensor) -> float:
        self._counter.increment()
        if img.height < 3 or img.width < 3:
            raise ShapeError("sharpness scorer needs at least a 3x3 image")
        arr = img.array
        if img.channels == 1:
            luma = arr[:, :, 0]
        elif img.channels == 3:
            luma = arr @ _LUMA_WEIGHTS
        else:
            luma = np.mean(arr, axis=2)
        lap = (
            4.0 * luma[1:-1, 1:-1]
            - luma[:-2, 1:-1]
            - luma[2:, 1:-1]
            - luma[1:-1, :-2]
            - luma[1:-1, 2:]
        )
        m = float(np.mean(np.abs(lap)))
        squashed = 1.0 / (1.0 + np.exp(-(m - _SHARPNESS_OFFSET) / _SHARPNESS_SCALE))
        return self._bounds.beta1 + self._bounds.span() * float(squashed)

    def bounds(self) -> ScoreBounds:
        return self._bounds

    def queries_used(self) -> int:
        return self._counter.value


def builtin_mean_brightness_scorer(bounds: ScoreBounds = DEFAULT_BOUNDS) -> QualityOracle:
    return MeanBrightnessScorer(bounds)


def builtin_sharpness_scorer(bounds: ScoreBounds = DEFAULT_BOUNDS) -> QualityOracle:
    return SharpnessScorer(bounds)


BUILTIN_SCORERS = {
    "mean-brightness": builtin_mean_brightness_scorer,
    "sharpness": builtin_sharpness_scorer,
}


class CountingOracle(QualityOracle):
    """Delegates scoring to an inner oracle while keeping its own exact count."""

    def __init__(self, inner: QualityOracle):
        self._inner = inner
        self._counter = _QueryCounter()

    def score(self, img: ImageTensor) -> float:
        self._counter.increment()
        return self._inner.score(img)

    def bounds(self) -> ScoreBounds:
        return self._inner.bounds()

    def queries_used(self) -> int:
        return self._counter.value


def counting_wrapper(inner: QualityOracle) -> CountingOracle:
    return CountingOracle(inner)


@dataclass(frozen=True)
class LogisticMapping:
    """Monotonic 4-parameter logistic mapping raw scores into [beta1, beta2].

    mapped(x) = d + (a - d) / (1 + exp(-b * (x - c))), clamped to the bounds.
    """

    a: float
    b: float
    c: float
    d: float
    bounds: ScoreBounds

    def apply(self, raw: float) -> float:
        return self.bounds.clamp(_logistic4(raw, self.a, self.b, self.c, self.d))

    def apply_many(self, raw_scores) -> list[float]:
        return [self.apply(float(r)) for r in raw_scores]


def _logistic4(x, a, b, c, d):
    with np.errstate(over="ignore"):
        return d + (a - d) / (1.0 + np.exp(-b * (x - c)))


def calibrate_logistic(
    raw_scores, mos, bounds: ScoreBounds = DEFAULT_BOUNDS
) -> LogisticMapping:
    """Least-squares fit of the 4-parameter logistic from raw scores to MOS.

    Uses a deterministic initial guess refined by Nelder-Mead simplex search
    (derivative-free, at most 2000 evaluations per restart, residual-change
    tolerance 1e-10).
    """
    raw = np.asarray(raw_scores, dtype=np.float64)
    target = np.asarray(mos, dtype=np.float64)
    if raw.shape != target.shape:
        raise ShapeError(f"length mismatch: {raw.shape[0]} raw scores, {target.shape[0]} MOS")
    if raw.ndim != 1 or raw.size < 5:
        raise ValueError("need at least 5 paired calibration points")
    if np.ptp(raw) == 0.0:
        raise DegenerateFitError("raw scores are all equal; logistic fit is degenerate")

    slope_sign = 1.0 if np.corrcoef(raw, target)[0, 1] >= 0 else -1.0
    x0 = np.array(
        [
            bounds.beta2,
            slope_sign * 4.0 / float(np.ptp(raw)),
            float(np.median(raw)),
            bounds.beta1,
        ]
    )

    def residual(params):
        pred = _logistic4(raw, *params)
        return float(np.sum((pred - target) ** 2))

    best = x0
    for _ in range(3):  # deterministic restarts from the previous optimum
        res = minimize(
            residual,
            best,
            method="Nelder-Mead",
            options={"maxfev": 2000, "fatol": 1e-10, "xatol": 1e-12},
        )
        best = res.x
        if res.fun < 1e-12:
            break

    a, b, c, d = (float(v) for v in best)
    lo, hi = float(np.min(raw)), float(np.max(raw))
    probe = np.linspace(lo, hi, 256)
    mapped = _logistic4(probe, a, b, c, d)
    diffs = np.diff(mapped)
    if not (np.all(diffs >= 0.0) or np.all(diffs <= 0.0)):
        raise DegenerateFitError("fitted mapping is not monotone over the calibration range")
    return LogisticMapping(a=a, b=b, c=c, d=d, bounds=bounds)
