"""Image buffers as float arrays in [0, 1].

An image is a ``(H, W)`` or ``(H, W, 3)`` float64 array, row-major.
"""

import hashlib
import io
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, DimensionError

MIN_SIDE = 32


def check_image(image, min_side=MIN_SIDE):
    """Validate and return ``image`` as a float64 array."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise DimensionError(f"expected (H, W) or (H, W, 3) image, got shape {arr.shape}")
    h, w = arr.shape[:2]
    if h < min_side or w < min_side:
        raise DimensionError(f"image is {w}x{h}; both sides must be >= {min_side}")
    if not np.all(np.isfinite(arr)):
        raise DataError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise DataError("image intensities must lie in [0, 1]")
    return arr


def load_image(path):
    path = Path(path)
    try:
        with Image.open(path) as im:
            im = im.convert("L") if im.mode in ("L", "I", "I;16", "1") else im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except FileNotFoundError as exc:
        raise DataError(f"image not found: {path}") from exc
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return check_image(arr)


def to_uint8(image):
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def png_bytes(image):
    buf = io.BytesIO()
    Image.fromarray(to_uint8(image)).save(buf, format="PNG")
    return buf.getvalue()


def save_png(image, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(png_bytes(image))
    return path


def image_digest(image):
    """Content hash of an image buffer (shape + float64 bytes)."""
    arr = np.ascontiguousarray(image, dtype=np.float64)
    h = hashlib.sha256()
    h.update(repr(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def to_gray(image):
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    return arr @ np.array([0.299, 0.587, 0.114])
