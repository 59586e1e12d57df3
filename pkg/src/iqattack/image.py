"""Pixel buffers, elementwise arithmetic, distortion measurement and lossless I/O.

Images are height x width x channels float64 arrays with values in [0, 1].
PNG (8-bit, 1 or 3 channels) is the only decode format; the raw ``IQT1``
dump is the exact float interchange format used on the wire.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

RAW_MAGIC = b"IQT1"

# save_image refuses values further than this from the 1/255 grid unless
# quantize=True; float rounding inside the attack stays many orders below it.
GRID_TOLERANCE = 1e-9


class ShapeError(ValueError):
    """Operands have incompatible tensor shapes."""


class ImageIOError(IOError):
    """Image file could not be read, decoded or written."""


class ImageTensor:
    """Immutable H x W x C float pixel buffer.

    The array is stored as float64 and marked read-only; mutation happens
    only by constructing a new tensor.  Values are expected to lie in
    [0, 1] for proper images; intermediates produced by :func:`add` may
    transiently leave that range and must be passed through :func:`clip01`.
    """

    __slots__ = ("_array",)

    def __init__(self, array: np.ndarray):
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim != 3:
            raise ShapeError(f"expected a (h, w, c) array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ShapeError(f"degenerate image shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image data contains non-finite values")
        arr = arr.copy()
        arr.flags.writeable = False
        self._array = arr

    @property
    def array(self) -> np.ndarray:
        return self._array

    @property
    def height(self) -> int:
        return self._array.shape[0]

    @property
    def width(self) -> int:
        return self._array.shape[1]

    @property
    def channels(self) -> int:
        return self._array.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._array.shape  # type: ignore[return-value]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageTensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._array, other._array)

    def __hash__(self) -> int:  # content hash, tensors are immutable
        return hash((self.shape, self._array.tobytes()))

    def __repr__(self) -> str:
        return f"ImageTensor(h={self.height}, w={self.width}, c={self.channels})"


def _check_same_shape(a: ImageTensor, b: ImageTensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def linf_distance(a: ImageTensor, b: ImageTensor) -> float:
    """Maximum absolute elementwise difference between two equal-shape images."""
    _check_same_shape(a, b)
    return float(np.max(np.abs(a.array - b.array)))


def clip01(img: ImageTensor) -> ImageTensor:
    """Clamp every element into [0, 1]."""
    return ImageTensor(np.clip(img.array, 0.0, 1.0))


def add(img: ImageTensor, delta: ImageTensor) -> ImageTensor:
    """Elementwise sum without clamping; the caller must clip afterwards."""
    _check_same_shape(img, delta)
    return ImageTensor(img.array + delta.array)


def load_image(path: str | Path) -> ImageTensor:
    """Decode an 8-bit PNG into a [0, 1] float tensor (channel value v -> v/255)."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise ImageIOError(f"{path}: unsupported format {im.format!r}, expected PNG")
            if im.mode not in ("L", "RGB"):
                raise ImageIOError(
                    f"{path}: unsupported PNG mode {im.mode!r} (8-bit L or RGB only)"
                )
            arr = np.asarray(im, dtype=np.uint8)
    except FileNotFoundError as exc:
        raise ImageIOError(f"{path}: file not found") from exc
    except UnidentifiedImageError as exc:
        raise ImageIOError(f"{path}: not a decodable image") from exc
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    return ImageTensor(arr.astype(np.float64) / 255.0)


def save_image(img: ImageTensor, path: str | Path, quantize: bool = False) -> None:
    """Write an 8-bit PNG using round-half-up of 255*e.

    Inputs further than ``GRID_TOLERANCE`` from the 1/255 grid are refused
    unless ``quantize`` is set, so sub-grid adversarial deltas are never
    destroyed silently.
    """
    path = Path(path)
    arr = img.array
    if np.min(arr) < 0.0 or np.max(arr) > 1.0:
        raise ValueError("image values must lie in [0, 1] before saving")
    levels = np.floor(255.0 * arr + 0.5)
    if not quantize:
        off_grid = np.max(np.abs(arr - levels / 255.0))
        if off_grid > GRID_TOLERANCE:
            raise ValueError(
                f"image is off the 1/255 grid by {off_grid:.3g}; "
                "pass quantize=True to round"
            )
    data = levels.astype(np.uint8)
    if img.channels == 1:
        pil = Image.fromarray(data[:, :, 0], mode="L")
    elif img.channels == 3:
        pil = Image.fromarray(data, mode="RGB")
    else:
        raise ImageIOError(f"cannot encode {img.channels}-channel image as PNG")
    try:
        pil.save(path, format="PNG")
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc}") from exc


def write_raw_tensor(img: ImageTensor, path: str | Path) -> None:
    """Write the exact-interchange dump: IQT1 header + u32 h,w,c + f32 payload (LE)."""
    payload = img.array.astype("<f4").tobytes()
    header = RAW_MAGIC + struct.pack("<III", img.height, img.width, img.channels)
    Path(path).write_bytes(header + payload)


def read_raw_tensor(path: str | Path) -> ImageTensor:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError as exc:
        raise ImageIOError(f"{path}: file not found") from exc
    if len(blob) < 16 or blob[:4] != RAW_MAGIC:
        raise ImageIOError(f"{path}: missing IQT1 header")
    h, w, c = struct.unpack("<III", blob[4:16])
    expected = 16 + 4 * h * w * c
    if len(blob) != expected:
        raise ImageIOError(f"{path}: payload length {len(blob) - 16}, expected {expected - 16}")
    arr = np.frombuffer(blob[16:], dtype="<f4").reshape(h, w, c)
    return ImageTensor(arr.astype(np.float64))
