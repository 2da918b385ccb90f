"""Image-quality metrics and per-set aggregation.

PSNR uses an infinity sentinel for identical images; aggregation excludes
sentinels from mean/std and reports how many were excluded, rather than
capping the value and silently biasing the average. SSIM follows the
standard 11x11 Gaussian-window formulation with valid-window cropping (no
padding), so every local statistic is computed from real pixels only.

The perceptual interface is a registry of named backends. The bundled
"gradmag" backend (mean squared difference of gradient-magnitude maps) is a
stand-in so the plumbing is exercisable offline; it is NOT a learned
perceptual metric and every report labels it accordingly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .errors import InvalidInputError, MalformedFileError
from .imagecore import as_image, assert_normalized, load_image

__all__ = [
    "mse",
    "psnr",
    "masked_psnr",
    "ssim",
    "perceptual_distance",
    "register_perceptual_backend",
    "perceptual_backends",
    "MetricSummary",
    "MetricReport",
    "summarize",
    "metric_report",
    "format_report",
    "report_rows",
    "load_roi_mask",
]

PSNR_INF = float("inf")


def _pair(a, b):
    ia = as_image(a)
    ib = as_image(b)
    if ia.shape != ib.shape:
        raise InvalidInputError(f"shape mismatch: {ia.shape} vs {ib.shape}")
    assert_normalized(ia, "first image")
    assert_normalized(ib, "second image")
    return ia, ib


def mse(a, b) -> float:
    """Mean squared difference over all pixels."""
    ia, ib = _pair(a, b)
    d = ia.astype(np.float64) - ib.astype(np.float64)
    return float(np.mean(d * d))


def _psnr_from_mse(err: float, max_val: float) -> float:
    if max_val <= 0:
        raise InvalidInputError("max_val must be positive")
    if err == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(max_val * max_val / err)


def psnr(a, b, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical images give infinity."""
    return _psnr_from_mse(mse(a, b), max_val)


def masked_psnr(a, b, roi, max_val: float = 1.0) -> float:
    """PSNR restricted to the pixels where roi is true."""
    ia, ib = _pair(a, b)
    m = np.asarray(roi)
    if m.shape != ia.shape:
        raise InvalidInputError(f"roi shape {m.shape} does not match image {ia.shape}")
    m = m.astype(bool)
    if not m.any():
        raise InvalidInputError("roi selects no pixels")
    d = ia.astype(np.float64)[m] - ib.astype(np.float64)[m]
    return _psnr_from_mse(float(np.mean(d * d)), max_val)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01,
         k2: float = 0.03, max_val: float = 1.0) -> float:
    """Mean local structural similarity over all fully valid window positions."""
    ia, ib = _pair(a, b)
    if window < 1 or window % 2 == 0:
        raise InvalidInputError("window size must be odd and positive")
    h, w = ia.shape
    if h < window or w < window:
        raise InvalidInputError(f"image {h}x{w} smaller than the {window}x{window} window")
    g = _gaussian_window(window, sigma)
    fa = ia.astype(np.float64)
    fb = ib.astype(np.float64)

    def smooth(img):
        out = correlate1d(img, g, axis=0, mode="constant")
        out = correlate1d(out, g, axis=1, mode="constant")
        r = window // 2
        return out[r:h - r, r:w - r]

    mu_a = smooth(fa)
    mu_b = smooth(fb)
    e_aa = smooth(fa * fa)
    e_bb = smooth(fb * fb)
    e_ab = smooth(fa * fb)
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    c1 = (k1 * max_val) ** 2
    c2 = (k2 * max_val) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# ---- perceptual interface -----------------------------------------------------


def _gradmag(img: np.ndarray) -> np.ndarray:
    gy, gx = np.gradient(img.astype(np.float64))
    return np.sqrt(gx * gx + gy * gy)


def _gradmag_distance(a: np.ndarray, b: np.ndarray) -> float:
    d = _gradmag(a) - _gradmag(b)
    return float(np.mean(d * d))


# name -> (callable, human label); the label travels into reports
_PERCEPTUAL_BACKENDS: dict = {
    "gradmag": (_gradmag_distance, "gradmag (gradient-magnitude MSE, not LPIPS)"),
}


def register_perceptual_backend(name: str, fn, label: str | None = None) -> None:
    """Plug in an external perceptual metric; fn(a, b) must be a pseudometric."""
    if not name:
        raise InvalidInputError("backend name must be non-empty")
    _PERCEPTUAL_BACKENDS[name] = (fn, label or name)


def perceptual_backends() -> dict:
    return {name: label for name, (fn, label) in _PERCEPTUAL_BACKENDS.items()}


def perceptual_distance(a, b, backend: str = "gradmag") -> float:
    if backend not in _PERCEPTUAL_BACKENDS:
        raise InvalidInputError(
            f"unknown perceptual backend {backend!r}; registered: "
            f"{sorted(_PERCEPTUAL_BACKENDS)}"
        )
    ia, ib = _pair(a, b)
    fn, _ = _PERCEPTUAL_BACKENDS[backend]
    return float(fn(ia, ib))


# ---- aggregation ----------------------------------------------------------------


@dataclass(frozen=True)
class MetricSummary:
    """Mean and sample std (n-1) over the finite values of one metric."""

    values: tuple
    mean: float
    std: float
    n: int
    n_excluded: int


def summarize(values) -> MetricSummary:
    vals = [float(v) for v in values]
    finite = [v for v in vals if math.isfinite(v)]
    n_excluded = len(vals) - len(finite)
    if not finite:
        return MetricSummary(tuple(vals), float("inf"), 0.0, len(vals), n_excluded)
    mean = float(np.mean(finite))
    std = float(np.std(finite, ddof=1)) if len(finite) > 1 else 0.0
    return MetricSummary(tuple(vals), mean, std, len(vals), n_excluded)


@dataclass(frozen=True)
class MetricReport:
    metrics: dict
    baseline: dict | None = None
    perceptual_label: str = ""


def metric_report(pairs, rois=None, inputs=None,
                  perceptual_backend: str = "gradmag") -> MetricReport:
    """Per-image metrics aggregated into mean +/- sample std.

    ``pairs`` holds (generated, ground-truth) images. ``rois``, when given,
    adds an ROI-masked PSNR row. ``inputs``, when given, adds baseline rows
    measuring the raw inputs against the same ground truths.
    """
    pairs = list(pairs)
    if not pairs:
        raise InvalidInputError("metric report needs at least one image pair")
    if rois is not None and len(rois) != len(pairs):
        raise InvalidInputError(f"{len(pairs)} pairs but {len(rois)} ROI masks")
    if inputs is not None and len(inputs) != len(pairs):
        raise InvalidInputError(f"{len(pairs)} pairs but {len(inputs)} inputs")

    def collect(gen_list, gt_list):
        rows = {
            "mse": [mse(g, t) for g, t in zip(gen_list, gt_list)],
            "psnr": [psnr(g, t) for g, t in zip(gen_list, gt_list)],
            "ssim": [ssim(g, t) for g, t in zip(gen_list, gt_list)],
            "perceptual": [perceptual_distance(g, t, perceptual_backend)
                           for g, t in zip(gen_list, gt_list)],
        }
        if rois is not None:
            rows["roi_psnr"] = [masked_psnr(g, t, m)
                                for (g, t), m in zip(zip(gen_list, gt_list), rois)]
        return {k: summarize(v) for k, v in rows.items()}

    gens = [p[0] for p in pairs]
    gts = [p[1] for p in pairs]
    metrics = collect(gens, gts)
    baseline = collect(inputs, gts) if inputs is not None else None
    _, label = _PERCEPTUAL_BACKENDS[perceptual_backend]
    return MetricReport(metrics=metrics, baseline=baseline, perceptual_label=label)


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.3f}"


def format_report(report: MetricReport) -> str:
    """Human-readable rendering, one 'name: mean +/- std' line per metric."""
    lines = []

    def block(title, metrics):
        lines.append(title)
        for name, s in metrics.items():
            shown = f"{report.perceptual_label}" if name == "perceptual" else name
            extra = f", excluded={s.n_excluded}" if s.n_excluded else ""
            lines.append(f"  {shown}: {_fmt(s.mean)} ± {_fmt(s.std)} (n={s.n}{extra})")

    block("generated vs ground truth", report.metrics)
    if report.baseline is not None:
        block("baseline: input vs ground truth", report.baseline)
    return "\n".join(lines)


def report_rows(report: MetricReport) -> list:
    """Flat (metric, mean, std, n, n_excluded) rows for delimited output."""
    rows = []
    for name, s in report.metrics.items():
        rows.append((name, s.mean, s.std, s.n, s.n_excluded))
    if report.baseline is not None:
        for name, s in report.baseline.items():
            rows.append((f"baseline_{name}", s.mean, s.std, s.n, s.n_excluded))
    return rows


def load_roi_mask(path) -> np.ndarray:
    """Read a float raw mask of exact 0.0/1.0 values as booleans."""
    arr = load_image(path)
    vals = np.unique(arr)
    if not np.all(np.isin(vals, (0.0, 1.0))):
        raise MalformedFileError(f"{path}: mask values must be exactly 0.0 or 1.0")
    return arr == 1.0
