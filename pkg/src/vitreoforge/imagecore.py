"""Grayscale image tensors plus the shared normalization, padding, and I/O ops.

An image is a 2D ``numpy.ndarray`` (rows x cols, row-major, origin at the
top-left as displayed in a B-scan). Normalized images hold values in [0, 1].
Two on-disk formats are supported:

* ``.octf`` -- little-endian float32 raw format with a 16-byte header
  (magic ``OCTF``, u32 height, u32 width, 4 reserved zero bytes). Lossless,
  used everywhere quantitative fidelity matters.
* ``.png`` -- 8-bit grayscale rendering for human viewing; quantizes to 256
  levels with round-half-up.
"""

from __future__ import annotations

import os
import struct

import numpy as np
from PIL import Image

from .errors import InvalidInputError, MalformedFileError

OCTF_MAGIC = b"OCTF"
OCTF_HEADER = struct.Struct("<4sIII")  # magic, height, width, reserved

__all__ = [
    "as_image",
    "assert_normalized",
    "minmax_normalize",
    "pad_vertical",
    "crop_vertical",
    "difference_map",
    "save_image",
    "load_image",
]


def as_image(arr, dtype=None) -> np.ndarray:
    """Validate and return a 2D finite image array.

    Passing ``dtype`` casts; by default the input dtype is preserved
    (lists become float32).
    """
    a = np.asarray(arr)
    if dtype is not None:
        a = a.astype(dtype, copy=False)
    elif not np.issubdtype(a.dtype, np.floating):
        a = a.astype(np.float32)
    if a.ndim != 2:
        raise InvalidInputError(f"expected a 2D image, got shape {a.shape}")
    if a.size == 0:
        raise InvalidInputError("image has zero pixels")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("image contains non-finite values")
    return a


def assert_normalized(img: np.ndarray, what: str = "image") -> None:
    if img.min() < 0.0 or img.max() > 1.0:
        raise InvalidInputError(
            f"{what} is not normalized to [0, 1] (range [{img.min()}, {img.max()}])"
        )


def minmax_normalize(img) -> np.ndarray:
    """Linearly map an image onto [0, 1]; a constant image maps to all zeros."""
    a = as_image(img)
    lo = float(a.min())
    hi = float(a.max())
    if hi == lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def pad_vertical(img, rows_each_side: int) -> np.ndarray:
    """Add `rows_each_side` rows of black pixels at the top and at the bottom."""
    a = as_image(img)
    r = int(rows_each_side)
    if r < 0:
        raise InvalidInputError("rows_each_side must be >= 0")
    if r == 0:
        return a.copy()
    return np.pad(a, ((r, r), (0, 0)), mode="constant", constant_values=0)


def crop_vertical(img, rows_each_side: int) -> np.ndarray:
    """Remove `rows_each_side` rows from the top and the bottom (inverse of pad)."""
    a = as_image(img)
    r = int(rows_each_side)
    if r < 0:
        raise InvalidInputError("rows_each_side must be >= 0")
    if a.shape[0] <= 2 * r:
        raise InvalidInputError(
            f"cannot crop {r} rows from each side of a {a.shape[0]}-row image"
        )
    if r == 0:
        return a.copy()
    return a[r:-r, :].copy()


def difference_map(gen, gt) -> np.ndarray:
    """Signed per-pixel difference (generated minus ground truth), in [-1, 1]."""
    g = as_image(gen)
    t = as_image(gt)
    if g.shape != t.shape:
        raise InvalidInputError(f"shape mismatch: {g.shape} vs {t.shape}")
    assert_normalized(g, "generated image")
    assert_normalized(t, "ground-truth image")
    return g - t


def save_image(img, path) -> None:
    """Write an image to disk; format chosen by extension (.octf or .png)."""
    a = as_image(img)
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".octf":
        h, w = a.shape
        with open(path, "wb") as f:
            f.write(OCTF_HEADER.pack(OCTF_MAGIC, h, w, 0))
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    elif ext == ".png":
        # round-half-up quantization to 256 levels
        q = np.floor(np.clip(a, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        Image.fromarray(q, mode="L").save(path)
    else:
        raise InvalidInputError(f"unsupported image extension {ext!r} (use .octf or .png)")


def load_image(path) -> np.ndarray:
    """Read an image from disk. Raw floats round-trip bit-exactly; PNG maps to v/255."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".octf":
        return _load_octf(path)
    if ext == ".png":
        return _load_png(path)
    raise InvalidInputError(f"unsupported image extension {ext!r} (use .octf or .png)")


def _load_octf(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(OCTF_HEADER.size)
        if len(header) < OCTF_HEADER.size:
            raise MalformedFileError(f"{path}: truncated header ({len(header)} bytes)")
        magic, h, w, _reserved = OCTF_HEADER.unpack(header)
        if magic != OCTF_MAGIC:
            raise MalformedFileError(f"{path}: bad magic {magic!r}")
        if h == 0 or w == 0:
            raise MalformedFileError(f"{path}: degenerate dimensions {h}x{w}")
        payload = f.read(4 * h * w)
    if len(payload) != 4 * h * w:
        raise MalformedFileError(
            f"{path}: truncated payload ({len(payload)} of {4 * h * w} bytes)"
        )
    a = np.frombuffer(payload, dtype="<f4").reshape(h, w)
    return a.astype(np.float32)


def _load_png(path: str) -> np.ndarray:
    try:
        im = Image.open(path)
        im.load()
    except Exception as exc:
        raise MalformedFileError(f"{path}: not a readable PNG ({exc})") from exc
    if im.mode != "L":
        raise MalformedFileError(
            f"{path}: unsupported PNG mode {im.mode!r} (8-bit grayscale only)"
        )
    return (np.asarray(im, dtype=np.float32) / 255.0).astype(np.float32)
