"""Synthetic layered B-scan generator.

Produces clean piecewise-constant "retina-like" images, speckled single
frames (multiplicative unit-mean gamma noise, "number of looks" L), simulated
ARTn frames (mean of n independent single-frame realizations), and motion
artifact strips (rows forced to exact zero). Everything is reproducible from
(spec, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .imagecore import as_image
from .seeding import substream

__all__ = [
    "PhantomSpec",
    "generate_clean",
    "apply_speckle",
    "apply_motion_artifact",
    "generate_art_series",
    "simulate_artn",
]


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry and noise description of one synthetic eye location.

    ``artifact_strips`` entries are (row_start, row_end, frame_index): rows
    [row_start, row_end) of frame ``frame_index`` are zeroed.
    """

    height: int = 64
    width: int = 64
    layer_boundaries: tuple = (20, 44)
    layer_reflectivities: tuple = (0.08, 0.65, 0.35)
    boundary_jitter: float = 1.5
    speckle_looks: float = 1.0
    artifact_strips: tuple = field(default_factory=tuple)
    seed: int = 0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise InvalidInputError("phantom dimensions must be positive")
        bounds = tuple(int(b) for b in self.layer_boundaries)
        if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
            raise InvalidInputError("layer boundaries must be strictly increasing")
        if bounds and (bounds[0] < 0 or bounds[-1] >= self.height):
            raise InvalidInputError("layer boundaries must lie within the image height")
        if len(self.layer_reflectivities) != len(bounds) + 1:
            raise InvalidInputError(
                f"need {len(bounds) + 1} reflectivities for {len(bounds)} boundaries, "
                f"got {len(self.layer_reflectivities)}"
            )
        if any(not (0.0 <= r <= 1.0) for r in self.layer_reflectivities):
            raise InvalidInputError("reflectivities must lie in [0, 1]")
        if self.boundary_jitter < 0:
            raise InvalidInputError("boundary jitter must be >= 0")
        if not self.speckle_looks > 0:
            raise InvalidInputError("speckle looks L must be > 0")
        for strip in self.artifact_strips:
            r0, r1, fi = strip
            if not (0 <= r0 < r1 <= self.height):
                raise InvalidInputError(f"artifact strip rows {r0}:{r1} out of bounds")
            if fi < 0:
                raise InvalidInputError("artifact strip frame index must be >= 0")
        object.__setattr__(self, "layer_boundaries", bounds)
        object.__setattr__(
            self, "layer_reflectivities", tuple(float(r) for r in self.layer_reflectivities)
        )
        object.__setattr__(
            self, "artifact_strips", tuple((int(a), int(b), int(c)) for a, b, c in self.artifact_strips)
        )


def _jitter_curve(rng: np.random.Generator, width: int, amplitude: float) -> np.ndarray:
    """Smooth column-wise displacement in [-amplitude, amplitude]."""
    if amplitude == 0:
        return np.zeros(width)
    x = np.arange(width) / max(width, 1)
    curve = np.zeros(width)
    for k in range(1, 4):
        freq = rng.uniform(0.5, 2.5) * k
        phase = rng.uniform(0, 2 * np.pi)
        curve += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * freq * x + phase)
    peak = np.abs(curve).max()
    if peak > 0:
        curve *= amplitude / peak
    return curve


def generate_clean(spec: PhantomSpec) -> np.ndarray:
    """Piecewise-constant layered image with smoothly jittered boundaries."""
    rng = substream(spec.seed, "clean")
    rows = np.arange(spec.height)[:, None]
    img = np.full((spec.height, spec.width), spec.layer_reflectivities[0], dtype=np.float32)
    for boundary, refl in zip(spec.layer_boundaries, spec.layer_reflectivities[1:]):
        jitter = _jitter_curve(rng, spec.width, spec.boundary_jitter)
        edge = np.clip(np.round(boundary + jitter), 0, spec.height).astype(int)[None, :]
        img = np.where(rows >= edge, np.float32(refl), img)
    return img


def apply_speckle(img, looks: float, seed: int) -> np.ndarray:
    """Multiply by i.i.d. gamma(shape=L, scale=1/L) noise (unit mean), clamp to [0, 1]."""
    a = as_image(img)
    if not looks > 0:
        raise InvalidInputError("speckle looks L must be > 0")
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "speckle")
    g = rng.gamma(shape=looks, scale=1.0 / looks, size=a.shape)
    return np.clip(a * g, 0.0, 1.0).astype(a.dtype)


def apply_motion_artifact(img, strips) -> np.ndarray:
    """Zero all pixels in the given [row_start, row_end) ranges."""
    a = as_image(img).copy()
    for strip in strips:
        r0, r1 = int(strip[0]), int(strip[1])
        if not (0 <= r0 <= r1 <= a.shape[0]):
            raise InvalidInputError(f"strip rows {r0}:{r1} out of bounds for height {a.shape[0]}")
        a[r0:r1, :] = 0.0
    return a


def _frame(spec: PhantomSpec, clean: np.ndarray, index: int) -> np.ndarray:
    rng = substream(spec.seed, "frame", index)
    frame = apply_speckle(clean, spec.speckle_looks, rng)
    strips = [(r0, r1) for (r0, r1, fi) in spec.artifact_strips if fi == index]
    if strips:
        frame = apply_motion_artifact(frame, strips)
    return frame


def generate_art_series(spec: PhantomSpec, n_frames: int):
    """The shared clean image plus n_frames independent speckle realizations.

    Frame i draws from an RNG stream derived from (spec.seed, i), so each
    frame is reproducible on its own.
    """
    if n_frames < 1:
        raise InvalidInputError("n_frames must be >= 1")
    clean = generate_clean(spec)
    frames = [_frame(spec, clean, i) for i in range(n_frames)]
    return clean, frames


def simulate_artn(spec: PhantomSpec, n: int, frame_index: int = 0) -> np.ndarray:
    """One ARTn frame: the arithmetic mean of n independent single-frame draws.

    Artifact strips assigned to ``frame_index`` are applied after averaging,
    mirroring how motion obliterates rows of an averaged acquisition.
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    clean = generate_clean(spec)
    acc = np.zeros_like(clean, dtype=np.float64)
    for j in range(n):
        rng = substream(spec.seed, "artn", frame_index, j)
        acc += apply_speckle(clean, spec.speckle_looks, rng)
    frame = (acc / n).astype(np.float32)
    strips = [(r0, r1) for (r0, r1, fi) in spec.artifact_strips if fi == frame_index]
    if strips:
        frame = apply_motion_artifact(frame, strips)
    return frame
