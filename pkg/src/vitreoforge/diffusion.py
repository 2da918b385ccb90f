"""Stochastic-process core: noise schedules, conditional DDPM forward/reverse
algebra with velocity parameterization, and the Brownian-bridge process with
its deterministic reverse sampler.

Every operation here is a pure array formula; all shapes broadcast over an
optional leading batch axis. Timesteps are 1-based for the DDPM chain
(t in 1..T, arrays indexed t-1) and 0-based inclusive for the bridge
(t in 0..T, arrays indexed t).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .errors import InvalidInputError
from .seeding import substream

__all__ = [
    "NoiseSchedule",
    "BridgeSchedule",
    "LatentCodec",
    "IdentityCodec",
    "cumulative_alpha",
    "linear_beta_schedule",
    "forward_sample",
    "velocity_target",
    "recover_from_v",
    "ddpm_step",
    "cddpm_sample",
    "bridge_forward",
    "bbdm_target",
    "bbdm_sample",
    "sampling_subgrid",
]


def cumulative_alpha(betas: np.ndarray) -> np.ndarray:
    """alpha_bar_t = prod_{i<=t} (1 - beta_i); equals 1 in the all-zero-beta limit."""
    return np.cumprod(1.0 - np.asarray(betas, dtype=np.float64))


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed beta/alpha/alpha_bar/sigma arrays for t = 1..T (index t-1)."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray
    sigma_mode: str = "beta"

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise InvalidInputError("beta must be a non-empty 1D array")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise InvalidInputError("every beta_t must lie in (0, 1)")
        if np.any(self.sigma < 0):
            raise InvalidInputError("sigma_t must be >= 0")

    @property
    def T(self) -> int:
        return int(self.beta.size)

    def check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise InvalidInputError(f"timestep {t} outside 1..{self.T}")
        return t


def _sigma_from_mode(beta: np.ndarray, alpha_bar: np.ndarray, mode: str) -> np.ndarray:
    if mode == "beta":
        sigma = np.sqrt(beta)
    elif mode == "posterior":
        alpha_bar_prev = np.concatenate(([1.0], alpha_bar[:-1]))
        sigma = np.sqrt(beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar))
    else:
        raise InvalidInputError(f"unknown sigma mode {mode!r} (use 'beta' or 'posterior')")
    sigma = sigma.copy()
    sigma[0] = 0.0  # the final reverse step is deterministic
    return sigma


def linear_beta_schedule(
    T: int, beta_start: float = 1e-4, beta_end: float = 0.02, sigma_mode: str = "beta"
) -> NoiseSchedule:
    """Linear variance schedule; defaults follow the usual DDPM convention."""
    if T < 1:
        raise InvalidInputError("T must be >= 1")
    if not (0 < beta_start <= beta_end < 1):
        raise InvalidInputError("need 0 < beta_start <= beta_end < 1")
    if T == 1:
        beta = np.array([beta_start], dtype=np.float64)
    else:
        beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = cumulative_alpha(beta)
    sigma = _sigma_from_mode(beta, alpha_bar, sigma_mode)
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar, sigma=sigma, sigma_mode=sigma_mode)


def _check_shapes(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise InvalidInputError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def forward_sample(x0, t: int, eps, sched: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps."""
    t = sched.check_t(t)
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    _check_shapes(x0, eps, "forward_sample")
    ab = sched.alpha_bar[t - 1]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def velocity_target(x0, eps, t: int, sched: NoiseSchedule) -> np.ndarray:
    """v = sqrt(alpha_bar_t) eps - sqrt(1 - alpha_bar_t) x0."""
    t = sched.check_t(t)
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    _check_shapes(x0, eps, "velocity_target")
    ab = sched.alpha_bar[t - 1]
    return np.sqrt(ab) * eps - np.sqrt(1.0 - ab) * x0


def recover_from_v(x_t, v, t: int, sched: NoiseSchedule):
    """Invert (x_t, v) -> (x0_hat, eps_hat) using alpha_bar + (1 - alpha_bar) = 1."""
    t = sched.check_t(t)
    x_t = np.asarray(x_t)
    v = np.asarray(v)
    _check_shapes(x_t, v, "recover_from_v")
    ab = sched.alpha_bar[t - 1]
    sa, sb = np.sqrt(ab), np.sqrt(1.0 - ab)
    x0_hat = sa * x_t - sb * v
    eps_hat = sb * x_t + sa * v
    return x0_hat, eps_hat


def ddpm_step(x_t, eps_hat, t: int, sched: NoiseSchedule, z=None) -> np.ndarray:
    """One ancestral reverse step; the random term is forced off at t = 1."""
    t = sched.check_t(t)
    x_t = np.asarray(x_t)
    eps_hat = np.asarray(eps_hat)
    _check_shapes(x_t, eps_hat, "ddpm_step")
    a = sched.alpha[t - 1]
    ab = sched.alpha_bar[t - 1]
    mean = (x_t - (1.0 - a) / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)
    if t == 1 or z is None:
        return mean
    z = np.asarray(z)
    _check_shapes(x_t, z, "ddpm_step noise")
    return mean + sched.sigma[t - 1] * z


def cddpm_sample(
    denoiser: Callable[[np.ndarray, int], np.ndarray],
    y,
    sched: NoiseSchedule,
    seed: int,
    prediction: str = "velocity",
) -> np.ndarray:
    """Full ancestral chain conditioned on y via channel concatenation.

    ``denoiser(stack, t)`` receives the (batch, 2, H, W) concatenation
    [x_t, y] and returns the (batch, H, W) prediction (velocity by default,
    raw noise with prediction='noise'). Starts from unit Gaussian noise and
    clamps to [0, 1] once, after the last step.

    Noise is drawn from one substream per image, keyed by (seed, index), so
    sampling a batch gives bit-identical results to sampling each image
    alone (provided the denoiser itself is batch-equivariant).
    """
    if prediction not in ("velocity", "noise"):
        raise InvalidInputError(f"unknown prediction mode {prediction!r}")
    y = np.asarray(y, dtype=np.float64)
    squeeze = y.ndim == 2
    yb = y[None] if squeeze else y
    if yb.ndim != 3:
        raise InvalidInputError(f"y must be (H, W) or (N, H, W), got {y.shape}")
    rngs = [substream(seed, "cddpm_sample", i) for i in range(yb.shape[0])]
    per_image = yb.shape[1:]
    x = np.stack([r.standard_normal(per_image) for r in rngs])
    for t in range(sched.T, 0, -1):
        stack = np.stack([x, yb], axis=1)
        pred = np.asarray(denoiser(stack, t), dtype=np.float64)
        if pred.shape != yb.shape:
            raise InvalidInputError(
                f"denoiser returned {pred.shape}, expected {yb.shape}"
            )
        if prediction == "velocity":
            _, eps_hat = recover_from_v(x, pred, t, sched)
        else:
            eps_hat = pred
        z = np.stack([r.standard_normal(per_image) for r in rngs]) if t > 1 else None
        x = ddpm_step(x, eps_hat, t, sched, z)
    x = np.clip(x, 0.0, 1.0)
    return x[0] if squeeze else x


@dataclass(frozen=True)
class BridgeSchedule:
    """m_t = t/T and delta_t = 2(m_t - m_t^2) for t = 0..T (index t)."""

    T: int

    def __post_init__(self):
        if self.T < 1:
            raise InvalidInputError("T must be >= 1")

    @property
    def m(self) -> np.ndarray:
        return np.arange(self.T + 1, dtype=np.float64) / self.T

    @property
    def delta(self) -> np.ndarray:
        m = self.m
        return 2.0 * (m - m * m)

    def check_t(self, t: int) -> int:
        t = int(t)
        if not 0 <= t <= self.T:
            raise InvalidInputError(f"bridge timestep {t} outside 0..{self.T}")
        return t


def bridge_forward(lx0, ly, t: int, bsched: BridgeSchedule, eps) -> np.ndarray:
    """x_t = (1 - m_t) L(x0) + m_t L(y) + sqrt(delta_t) eps."""
    t = bsched.check_t(t)
    lx0 = np.asarray(lx0)
    ly = np.asarray(ly)
    eps = np.asarray(eps)
    _check_shapes(lx0, ly, "bridge_forward")
    _check_shapes(lx0, eps, "bridge_forward noise")
    m = t / bsched.T
    delta = 2.0 * (m - m * m)
    return (1.0 - m) * lx0 + m * ly + np.sqrt(delta) * eps


def bbdm_target(lx0, ly, t: int, bsched: BridgeSchedule, eps) -> np.ndarray:
    """The trained bracket: b_t = m_t (L(y) - L(x0)) + sqrt(delta_t) eps."""
    t = bsched.check_t(t)
    lx0 = np.asarray(lx0)
    ly = np.asarray(ly)
    eps = np.asarray(eps)
    _check_shapes(lx0, ly, "bbdm_target")
    _check_shapes(lx0, eps, "bbdm_target noise")
    m = t / bsched.T
    delta = 2.0 * (m - m * m)
    return m * (ly - lx0) + np.sqrt(delta) * eps


def sampling_subgrid(T: int, n_steps: int) -> np.ndarray:
    """Decreasing timestep grid T = t_0 > ... > t_n = 0, evenly spaced."""
    if n_steps < 1:
        raise InvalidInputError("n_steps must be >= 1")
    if n_steps > T:
        raise InvalidInputError(f"n_steps {n_steps} exceeds T {T}")
    grid = np.floor(np.linspace(T, 0.0, n_steps + 1) + 0.5).astype(int)
    return grid


def bbdm_sample(
    denoiser: Callable[[np.ndarray, int], np.ndarray],
    ly,
    bsched: BridgeSchedule,
    n_steps: int,
    seed: int | None = None,
) -> np.ndarray:
    """Deterministic bridge reverse from the conditioning latent (x_T = L(y)).

    At each subgrid hop t -> s: predict the bracket, reconstruct
    x0_hat = x_t - b_hat, carry over the implied residual noise, and re-noise
    to level s. The seed parameter is reserved; this reverse draws no fresh
    randomness, so the output is a deterministic function of the inputs.
    """
    del seed
    ly = np.asarray(ly, dtype=np.float64)
    grid = sampling_subgrid(bsched.T, n_steps)
    x = ly.copy()
    T = bsched.T
    for t, s in zip(grid[:-1], grid[1:]):
        b_hat = np.asarray(denoiser(x, int(t)), dtype=np.float64)
        _check_shapes(x, b_hat, "bbdm_sample prediction")
        x0_hat = x - b_hat
        m_t = t / T
        delta_t = 2.0 * (m_t - m_t * m_t)
        if delta_t > 0:
            residual = (x - (1.0 - m_t) * x0_hat - m_t * ly) / np.sqrt(delta_t)
        else:
            residual = np.zeros_like(x)
        m_s = s / T
        delta_s = 2.0 * (m_s - m_s * m_s)
        x = (1.0 - m_s) * x0_hat + m_s * ly + np.sqrt(delta_s) * residual
    return x


class LatentCodec(Protocol):
    """Encoder/decoder pair mapping images to the space the bridge runs in."""

    tolerance: float

    def encode(self, img: np.ndarray) -> np.ndarray: ...

    def decode(self, latent: np.ndarray) -> np.ndarray: ...

    def latent_shape(self, height: int, width: int) -> tuple: ...


class IdentityCodec:
    """Exact codec: the latent is the image itself with a channel axis."""

    tolerance = 0.0

    def encode(self, img: np.ndarray) -> np.ndarray:
        img = np.asarray(img)
        if img.ndim != 2:
            raise InvalidInputError(f"expected a 2D image, got shape {img.shape}")
        return img[None, :, :].copy()

    def decode(self, latent: np.ndarray) -> np.ndarray:
        latent = np.asarray(latent)
        if latent.ndim != 3 or latent.shape[0] != 1:
            raise InvalidInputError(f"expected a (1, H, W) latent, got {latent.shape}")
        return latent[0].copy()

    def latent_shape(self, height: int, width: int) -> tuple:
        return (1, height, width)
