"""Black-box adversarial attack toolkit for no-reference image quality scorers."""

from .attack import AttackConfig, AttackResult, decay_schedule, run_attack, square_size
from .image import ImageTensor, clip01, linf_distance, load_image, save_image
from .loss import LossKind, bidirectional_loss, mse_loss
from .metrics import ScorePair, plcc, rgo, srcc
from .oracle import (
    LogisticMapping,
    QualityOracle,
    ScoreBounds,
    builtin_mean_brightness_scorer,
    builtin_sharpness_scorer,
    calibrate_logistic,
    counting_wrapper,
)
from .wire import connect_external_oracle, serve_builtin

__all__ = [
    "AttackConfig",
    "AttackResult",
    "ImageTensor",
    "LogisticMapping",
    "LossKind",
    "QualityOracle",
    "ScoreBounds",
    "ScorePair",
    "bidirectional_loss",
    "builtin_mean_brightness_scorer",
    "builtin_sharpness_scorer",
    "calibrate_logistic",
    "clip01",
    "connect_external_oracle",
    "counting_wrapper",
    "decay_schedule",
    "linf_distance",
    "load_image",
    "mse_loss",
    "plcc",
    "rgo",
    "run_attack",
    "save_image",
    "serve_builtin",
    "square_size",
    "srcc",
]

__version__ = "0.1.0"
