"""Motion-artifact detection and weighted signal averaging.

The detection chain mirrors the averaging pipeline used to build the ground
truth: binary-threshold the frame at 0 to keep black pixels, close small gaps
with a square structuring element, drop true pixels with fewer than 3 true
4-neighbors, then keep only connected components wide enough to be motion
strips. The weighted average gives zero weight to detected pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError
from .imagecore import as_image

__all__ = [
    "DetectConfig",
    "binary_threshold",
    "morph_close",
    "neighbor_refine",
    "detect_artifact",
    "weighted_average",
    "arithmetic_average",
    "pseudo_art100",
]


@dataclass(frozen=True)
class DetectConfig:
    """Artifact-detector knobs.

    ``min_width_frac``: a connected component counts as a motion strip only
    if it spans at least this fraction of the image width.
    """

    threshold: float = 0.0
    kernel_half: int = 2
    min_width_frac: float = 0.5


def binary_threshold(img, thr: float = 0.0) -> np.ndarray:
    """mask[p] = img[p] <= thr (<= so exact zeros survive float I/O)."""
    a = as_image(img)
    return a <= thr


def morph_close(mask, kernel_half: int) -> np.ndarray:
    """Dilation then erosion with a (2k+1)-square element; out-of-image is false."""
    m = np.asarray(mask, dtype=bool)
    k = int(kernel_half)
    if k < 0:
        raise InvalidInputError("kernel_half must be >= 0")
    if k == 0:
        return m.copy()
    structure = np.ones((2 * k + 1, 2 * k + 1), dtype=bool)
    dilated = ndimage.binary_dilation(m, structure=structure, border_value=0)
    return ndimage.binary_erosion(dilated, structure=structure, border_value=0)


def neighbor_refine(mask) -> np.ndarray:
    """Single removal pass: a true pixel survives iff >= 3 of its 4-neighbors are true."""
    m = np.asarray(mask, dtype=bool)
    counts = np.zeros(m.shape, dtype=np.int8)
    counts[1:, :] += m[:-1, :]
    counts[:-1, :] += m[1:, :]
    counts[:, 1:] += m[:, :-1]
    counts[:, :-1] += m[:, 1:]
    return m & (counts >= 3)


def _strip_filter(mask: np.ndarray, min_width_frac: float) -> np.ndarray:
    """Keep only 8-connected components spanning >= min_width_frac of the width."""
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return mask.copy()
    min_cols = max(1, int(np.ceil(min_width_frac * mask.shape[1])))
    out = np.zeros_like(mask)
    slices = ndimage.find_objects(labels)
    for lab, sl in enumerate(slices, start=1):
        if sl is None:
            continue
        span = sl[1].stop - sl[1].start
        if span >= min_cols:
            out[sl][labels[sl] == lab] = True
    return out


def detect_artifact(img, cfg: DetectConfig = DetectConfig()) -> np.ndarray:
    """Boolean mask of motion-artifact pixels in one frame."""
    mask = binary_threshold(img, cfg.threshold)
    mask = morph_close(mask, cfg.kernel_half)
    mask = neighbor_refine(mask)
    return _strip_filter(mask, cfg.min_width_frac)


def _check_frames(frames):
    if len(frames) < 1:
        raise InvalidInputError("need at least one frame")
    arrs = [as_image(f) for f in frames]
    shape = arrs[0].shape
    if any(a.shape != shape for a in arrs):
        raise InvalidInputError("frames have mixed shapes")
    return arrs


def weighted_average(frames, masks):
    """Per-pixel mean over unmasked frames.

    Returns (average, coverage) where coverage[p] counts contributing frames.
    Pixels masked in every frame fall back to the unweighted mean of all
    frames (typically near zero there, an honest black pixel).
    """
    arrs = _check_frames(frames)
    if len(masks) != len(arrs):
        raise InvalidInputError(f"{len(arrs)} frames but {len(masks)} masks")
    stack = np.stack(arrs).astype(np.float64)
    mstack = np.stack([np.asarray(m, dtype=bool) for m in masks])
    if mstack.shape != stack.shape:
        raise InvalidInputError("mask shapes do not match frame shapes")
    keep = ~mstack
    coverage = keep.sum(axis=0)
    weighted_sum = (stack * keep).sum(axis=0)
    fallback = stack.mean(axis=0)
    out = np.where(coverage > 0, weighted_sum / np.maximum(coverage, 1), fallback)
    return out.astype(arrs[0].dtype), coverage


def arithmetic_average(frames) -> np.ndarray:
    """Plain unweighted per-pixel mean, the baseline the masked average beats."""
    arrs = _check_frames(frames)
    return np.stack(arrs).astype(np.float64).mean(axis=0).astype(arrs[0].dtype)


def pseudo_art100(frames, cfg: DetectConfig = DetectConfig(), expected_frames: int = 10):
    """Detect artifacts per frame, then weighted-average into the ground truth.

    Returns (average, masks, coverage). ``expected_frames`` pins how many
    frames one location must supply (10 unless reconfigured); pass None to
    accept any count.
    """
    if expected_frames is not None and len(frames) != expected_frames:
        raise InvalidInputError(
            f"expected {expected_frames} frames per location, got {len(frames)}"
        )
    arrs = _check_frames(frames)
    masks = [detect_artifact(a, cfg) for a in arrs]
    avg, coverage = weighted_average(arrs, masks)
    return avg, masks, coverage
