import numpy as np
import pytest
from hypothesis import settings

from iqattack.image import ImageTensor

settings.register_profile("fast", max_examples=50, deadline=None)
settings.load_profile("fast")


def grid_image(rng: np.random.Generator, h: int, w: int, c: int = 3) -> ImageTensor:
    """Random image with all values on the exact 1/255 grid."""
    levels = rng.integers(0, 256, size=(h, w, c))
    return ImageTensor(levels.astype(np.float64) / 255.0)


def f32_image(rng: np.random.Generator, h: int, w: int, c: int = 3) -> ImageTensor:
    """Random image whose float64 values are exactly float32-representable."""
    return ImageTensor(rng.random(size=(h, w, c), dtype=np.float32).astype(np.float64))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
