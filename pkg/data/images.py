"""Image decoding (PNG, binary PPM) and bilinear resizing to the model extent."""

import io
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from autodiff.tensor import DTYPE, Tensor
from core.errors import DataError
from storage.cache import DecodeCache

SUPPORTED_MODES = ("RGB", "RGBA", "L", "LA", "P")


def decode_image(path: Union[str, Path]) -> np.ndarray:
    """Decode to an H x W x 3 float32 array in [0, 1]; alpha is discarded.

    Raises:
        DataError: unsupported format, bit depth or corrupt data (names the path)
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc})") from exc

    try:
        with Image.open(io.BytesIO(raw)) as img:
            if img.format == "PNG":
                if img.info.get("interlace"):
                    raise DataError(f"{path}: interlaced PNG is not supported")
            elif img.format == "PPM":
                if not raw.startswith(b"P6"):
                    raise DataError(f"{path}: only binary PPM (P6) is supported, found {raw[:2]!r}")
            else:
                raise DataError(f"{path}: unsupported format {img.format}")
            if img.mode not in SUPPORTED_MODES:
                raise DataError(f"{path}: unsupported pixel mode {img.mode} (8-bit only)")
            img.load()
            rgb = img.convert("RGB")
    except DataError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DataError(f"{path}: corrupt or unreadable image ({exc})") from exc

    return np.asarray(rgb, dtype=np.float64).astype(DTYPE) / DTYPE(255.0)


def _axis_weights(size_in: int, size_out: int):
    """Source indices and blend weights along one axis (half-pixel centres, edge clamped)."""
    scale = size_in / size_out
    src = (np.arange(size_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, size_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, size_in - 1)
    return lo, hi, src - lo


def resize_bilinear(pixels: np.ndarray, extent: int) -> np.ndarray:
    """Bilinear resize of an H x W x C array to extent x extent."""
    if extent < 1:
        raise ValueError(f"resize_bilinear: extent must be >= 1, got {extent}")
    h, w = pixels.shape[:2]
    if (h, w) == (extent, extent):
        return pixels.astype(DTYPE, copy=True)

    y0, y1, wy = _axis_weights(h, extent)
    x0, x1, wx = _axis_weights(w, extent)
    data = pixels.astype(np.float64)
    rows = data[y0] * (1.0 - wy)[:, None, None] + data[y1] * wy[:, None, None]
    out = rows[:, x0] * (1.0 - wx)[None, :, None] + rows[:, x1] * wx[None, :, None]
    return np.clip(out, 0.0, 1.0).astype(DTYPE)


def decode_and_resize(
    path: Union[str, Path],
    extent: int,
    cache: Optional[DecodeCache] = None,
) -> Tensor:
    """Decode an image file and resize it to a 1 x E x E x 3 tensor."""
    if cache is not None:
        cached = cache.get(Path(path), extent)
        if cached is not None:
            return Tensor(cached[None])

    pixels = resize_bilinear(decode_image(path), extent)
    if cache is not None:
        cache.set(Path(path), extent, pixels)
    return Tensor(pixels[None])
