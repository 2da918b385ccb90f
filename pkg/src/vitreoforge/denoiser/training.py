"""Training drivers: conditional diffusion, direct regression, bridge
diffusion, and a small convolutional autoencoder usable as a latent codec.

All loops are sequential and bit-reproducible given (pairs order, config
seed): pair choice, timestep, noise, and dropout all come from one RNG
substream. A non-finite loss aborts with diagnostics instead of continuing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..diffusion import (
    BridgeSchedule,
    IdentityCodec,
    NoiseSchedule,
    bbdm_target,
    bridge_forward,
    forward_sample,
    velocity_target,
)
from ..errors import InvalidInputError, TrainingDivergedError
from ..seeding import substream
from .layers import AvgPool2, Conv2d, Module, NearestUp2, SiLU
from .model import ModelConfig, UNet
from .optim import EMA, AdamW, clip_global_norm
from .params import read_blob, write_blob

__all__ = [
    "TrainConfig",
    "TrainResult",
    "train_cddpm",
    "train_regression_baseline",
    "train_bbdm",
    "TinyAutoencoderCodec",
    "tiny_autoencoder_train",
    "save_codec",
    "load_codec",
    "cddpm_denoiser",
    "bbdm_denoiser",
]


@dataclass(frozen=True)
class TrainConfig:
    """Optimization knobs; defaults follow the published training setup."""

    learning_rate: float = 2e-5
    weight_decay: float = 0.01
    dropout: float = 0.1
    ema_decay: float = 0.9999
    steps: int = 1000
    batch_size: int = 1
    loss: str = "l2"
    prediction: str = "velocity"
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidInputError("learning rate must be positive")
        if self.weight_decay < 0:
            raise InvalidInputError("weight decay must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidInputError("dropout must be in [0, 1)")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise InvalidInputError("EMA decay must be in [0, 1]")
        if self.steps < 1 or self.batch_size < 1:
            raise InvalidInputError("steps and batch size must be >= 1")
        if self.loss != "l2":
            raise InvalidInputError(f"unsupported loss type {self.loss!r}")
        if self.prediction not in ("velocity", "noise", "regression"):
            raise InvalidInputError(f"unknown prediction mode {self.prediction!r}")
        if self.grad_clip <= 0:
            raise InvalidInputError("gradient clip must be positive")


@dataclass
class TrainResult:
    model: UNet
    ema_model: UNet
    losses: np.ndarray


def _check_pairs(pairs):
    if not pairs:
        raise InvalidInputError("training set is empty")
    shape = np.asarray(pairs[0][0]).shape
    for y, x0 in pairs:
        ya, xa = np.asarray(y), np.asarray(x0)
        if ya.shape != shape or xa.shape != shape:
            raise InvalidInputError("all training images must share one shape")
    return shape


def _ema_clone(model: UNet, ema: EMA, dtype) -> UNet:
    clone = UNet(model.cfg, seed=0, dtype=dtype)
    clone.load_flat(np.concatenate([s.ravel() for s in ema.shadow]))
    return clone


def _finite_or_raise(loss: float, step: int):
    if not np.isfinite(loss):
        raise TrainingDivergedError(step, float(loss))


def train_cddpm(pairs, sched: NoiseSchedule, cfg: TrainConfig,
                model_cfg: ModelConfig | None = None, dtype=np.float32,
                progress=None) -> TrainResult:
    """Fit the conditional denoiser on (conditioning, clean-target) pairs.

    Each step draws one minibatch, a uniform timestep, and fresh noise; the
    network sees the 2-channel [x_t, y] stack and regresses the velocity
    target (or the raw noise when cfg.prediction == 'noise').
    """
    if cfg.prediction == "regression":
        raise InvalidInputError("use train_regression_baseline for the regression task")
    _check_pairs(pairs)
    if model_cfg is None:
        model_cfg = ModelConfig(in_channels=2, dropout=cfg.dropout)
    if model_cfg.in_channels != 2 or not model_cfg.time_embedding:
        raise InvalidInputError("conditional diffusion needs a 2-channel, timestep-aware network")
    ys = [np.asarray(y, dtype=dtype) for y, _ in pairs]
    xs = [np.asarray(x0, dtype=dtype) for _, x0 in pairs]
    model = UNet(model_cfg, seed=cfg.seed, dtype=dtype)
    opt = AdamW(model.parameters(), cfg.learning_rate, cfg.weight_decay)
    ema = EMA(model.parameters(), cfg.ema_decay)
    rng = substream(cfg.seed, "train")
    losses = np.zeros(cfg.steps)
    for step in range(cfg.steps):
        idx = rng.integers(0, len(pairs), size=cfg.batch_size)
        t = int(rng.integers(1, sched.T + 1))
        x0 = np.stack([xs[i] for i in idx])
        y = np.stack([ys[i] for i in idx])
        eps = rng.standard_normal(x0.shape).astype(dtype)
        x_t = forward_sample(x0, t, eps, sched).astype(dtype)
        if cfg.prediction == "velocity":
            target = velocity_target(x0, eps, t, sched).astype(dtype)
        else:
            target = eps
        inp = np.stack([x_t, y], axis=1)
        pred = model.forward(inp, t, train=True, rng=rng)[:, 0]
        diff = pred - target
        loss = float(np.mean(np.square(diff, dtype=np.float64)))
        _finite_or_raise(loss, step)
        losses[step] = loss
        model.zero_grad()
        dout = (2.0 / diff.size) * diff
        model.backward(dout[:, None].astype(dtype))
        clip_global_norm(model.gradients(), cfg.grad_clip)
        opt.step(model.gradients())
        ema.update()
        if progress is not None:
            progress(step, loss)
    return TrainResult(model, _ema_clone(model, ema, dtype), losses)


def train_regression_baseline(pairs, cfg: TrainConfig,
                              model_cfg: ModelConfig | None = None,
                              dtype=np.float32, progress=None) -> TrainResult:
    """Fit the timestep-free network mapping the input frame to the target."""
    _check_pairs(pairs)
    if model_cfg is None:
        model_cfg = ModelConfig(in_channels=1, time_embedding=False, dropout=cfg.dropout)
    if model_cfg.in_channels != 1 or model_cfg.time_embedding:
        raise InvalidInputError("regression needs a 1-channel network without timesteps")
    ys = [np.asarray(y, dtype=dtype) for y, _ in pairs]
    xs = [np.asarray(x0, dtype=dtype) for _, x0 in pairs]
    model = UNet(model_cfg, seed=cfg.seed, dtype=dtype)
    opt = AdamW(model.parameters(), cfg.learning_rate, cfg.weight_decay)
    ema = EMA(model.parameters(), cfg.ema_decay)
    rng = substream(cfg.seed, "train")
    losses = np.zeros(cfg.steps)
    for step in range(cfg.steps):
        idx = rng.integers(0, len(pairs), size=cfg.batch_size)
        x0 = np.stack([xs[i] for i in idx])
        y = np.stack([ys[i] for i in idx])
        pred = model.forward(y[:, None], None, train=True, rng=rng)[:, 0]
        diff = pred - x0
        loss = float(np.mean(np.square(diff, dtype=np.float64)))
        _finite_or_raise(loss, step)
        losses[step] = loss
        model.zero_grad()
        dout = (2.0 / diff.size) * diff
        model.backward(dout[:, None].astype(dtype))
        clip_global_norm(model.gradients(), cfg.grad_clip)
        opt.step(model.gradients())
        ema.update()
        if progress is not None:
            progress(step, loss)
    return TrainResult(model, _ema_clone(model, ema, dtype), losses)


def train_bbdm(pairs, bsched: BridgeSchedule, cfg: TrainConfig, codec=None,
               model_cfg: ModelConfig | None = None, dtype=np.float32,
               progress=None) -> TrainResult:
    """Fit the bridge denoiser in codec latent space.

    The network sees x_t alone (the bridge construction already ties it to
    the conditioning endpoint) and regresses the full drift-plus-noise
    bracket; input and output channel counts equal the latent channel count.
    """
    _check_pairs(pairs)
    codec = codec or IdentityCodec()
    lys = [np.asarray(codec.encode(np.asarray(y)), dtype=dtype) for y, _ in pairs]
    lxs = [np.asarray(codec.encode(np.asarray(x0)), dtype=dtype) for _, x0 in pairs]
    lat_ch = lys[0].shape[0]
    if model_cfg is None:
        model_cfg = ModelConfig(in_channels=lat_ch, out_channels=lat_ch,
                                dropout=cfg.dropout)
    if model_cfg.in_channels != lat_ch or model_cfg.out_channels != lat_ch:
        raise InvalidInputError(
            f"bridge network channels must match the {lat_ch}-channel latent"
        )
    model = UNet(model_cfg, seed=cfg.seed, dtype=dtype)
    opt = AdamW(model.parameters(), cfg.learning_rate, cfg.weight_decay)
    ema = EMA(model.parameters(), cfg.ema_decay)
    rng = substream(cfg.seed, "train")
    losses = np.zeros(cfg.steps)
    for step in range(cfg.steps):
        idx = rng.integers(0, len(pairs), size=cfg.batch_size)
        t = int(rng.integers(1, bsched.T + 1))
        lx0 = np.stack([lxs[i] for i in idx])
        ly = np.stack([lys[i] for i in idx])
        eps = rng.standard_normal(lx0.shape).astype(dtype)
        x_t = bridge_forward(lx0, ly, t, bsched, eps).astype(dtype)
        target = bbdm_target(lx0, ly, t, bsched, eps).astype(dtype)
        pred = model.forward(x_t, t, train=True, rng=rng)
        diff = pred - target
        loss = float(np.mean(np.square(diff, dtype=np.float64)))
        _finite_or_raise(loss, step)
        losses[step] = loss
        model.zero_grad()
        dout = (2.0 / diff.size) * diff
        model.backward(dout.astype(dtype))
        clip_global_norm(model.gradients(), cfg.grad_clip)
        opt.step(model.gradients())
        ema.update()
        if progress is not None:
            progress(step, loss)
    return TrainResult(model, _ema_clone(model, ema, dtype), losses)


# ---- sampler adapters --------------------------------------------------------


def cddpm_denoiser(model: UNet):
    """Wrap a trained conditional network as the sampler's callable."""

    def fn(stack, t):
        return model.predict(stack.astype(model.stem.w.dtype, copy=False), t)

    return fn


def bbdm_denoiser(model: UNet):
    """Wrap a trained bridge network; accepts (C,H,W) or (N,C,H,W) latents."""

    def fn(x, t):
        batched = x.ndim == 4
        xb = x if batched else x[None]
        out = model.forward(xb.astype(model.stem.w.dtype, copy=False), t, train=False)
        return out if batched else out[0]

    return fn


# ---- tiny autoencoder codec ----------------------------------------------------


class TinyAutoencoderCodec(Module):
    """Two-layer conv autoencoder with a 2x-downsampled latent.

    Meets the LatentCodec protocol; ``tolerance`` is set by training to the
    worst observed reconstruction error so callers can decide whether the
    codec is adequate for their data.
    """

    def __init__(self, latent_channels: int = 4, hidden: int = 8, seed: int = 0,
                 dtype=np.float32):
        super().__init__()
        if latent_channels < 1 or hidden < 1:
            raise InvalidInputError("channel counts must be positive")
        self.latent_channels = int(latent_channels)
        self.hidden = int(hidden)
        rng = substream(seed, "init")
        self.add_child("enc_conv1", Conv2d(1, hidden, 3, rng=rng, dtype=dtype))
        self.add_child("enc_act", SiLU())
        self.add_child("enc_pool", AvgPool2())
        self.add_child("enc_conv2", Conv2d(hidden, latent_channels, 3, rng=rng, dtype=dtype))
        self.add_child("dec_up", NearestUp2())
        self.add_child("dec_conv1", Conv2d(latent_channels, hidden, 3, rng=rng, dtype=dtype))
        self.add_child("dec_act", SiLU())
        self.add_child("dec_conv2", Conv2d(hidden, 1, 3, rng=rng, dtype=dtype))
        self.tolerance = float("inf")

    # -- LatentCodec protocol --

    def encode(self, img: np.ndarray) -> np.ndarray:
        img = np.asarray(img)
        if img.ndim != 2:
            raise InvalidInputError(f"expected a 2D image, got shape {img.shape}")
        x = img[None, None].astype(self.enc_conv1.w.dtype, copy=False)
        return self._encode_batch(x, train=False)[0]

    def decode(self, latent: np.ndarray) -> np.ndarray:
        latent = np.asarray(latent)
        if latent.ndim != 3 or latent.shape[0] != self.latent_channels:
            raise InvalidInputError(
                f"expected a ({self.latent_channels}, H, W) latent, got {latent.shape}"
            )
        x = latent[None].astype(self.dec_conv1.w.dtype, copy=False)
        return self._decode_batch(x, train=False)[0, 0]

    def latent_shape(self, height: int, width: int) -> tuple:
        if height % 2 or width % 2:
            raise InvalidInputError("codec needs even image dimensions")
        return (self.latent_channels, height // 2, width // 2)

    # -- training passes --

    def _encode_batch(self, x, train):
        h = self.enc_act.forward(self.enc_conv1.forward(x, train), train)
        return self.enc_conv2.forward(self.enc_pool.forward(h, train), train)

    def _decode_batch(self, z, train):
        h = self.dec_act.forward(self.dec_conv1.forward(self.dec_up.forward(z, train), train), train)
        return self.dec_conv2.forward(h, train)

    def forward(self, x, train=False):
        return self._decode_batch(self._encode_batch(x, train), train)

    def backward(self, dout):
        dz = self.dec_conv1.backward(self.dec_act.backward(self.dec_conv2.backward(dout)))
        dz = self.dec_up.backward(dz)
        dh = self.enc_pool.backward(self.enc_conv2.backward(dz))
        return self.enc_conv1.backward(self.enc_act.backward(dh))

    def descriptor_json(self) -> str:
        return json.dumps(
            {"kind": "autoencoder", "latent_channels": self.latent_channels,
             "hidden": self.hidden},
            sort_keys=True,
        )


def tiny_autoencoder_train(images, cfg: TrainConfig,
                           latent_channels: int = 4, hidden: int = 8,
                           dtype=np.float32) -> TinyAutoencoderCodec:
    """Train the codec to reconstruct the given images; sets its tolerance
    to the worst per-image reconstruction MSE at the end."""
    if not images:
        raise InvalidInputError("training set is empty")
    imgs = [np.asarray(im, dtype=dtype) for im in images]
    shape = imgs[0].shape
    if any(im.shape != shape for im in imgs):
        raise InvalidInputError("all training images must share one shape")
    codec = TinyAutoencoderCodec(latent_channels, hidden, seed=cfg.seed, dtype=dtype)
    opt = AdamW(codec.parameters(), cfg.learning_rate, cfg.weight_decay)
    rng = substream(cfg.seed, "train")
    for step in range(cfg.steps):
        idx = rng.integers(0, len(imgs), size=cfg.batch_size)
        x = np.stack([imgs[i] for i in idx])[:, None]
        recon = codec.forward(x, train=True)
        diff = recon - x
        loss = float(np.mean(np.square(diff, dtype=np.float64)))
        _finite_or_raise(loss, step)
        codec.zero_grad()
        codec.backward(((2.0 / diff.size) * diff).astype(dtype))
        clip_global_norm(codec.gradients(), cfg.grad_clip)
        opt.step(codec.gradients())
    worst = 0.0
    for im in imgs:
        recon = codec.decode(codec.encode(im))
        worst = max(worst, float(np.mean((recon - im) ** 2)))
    codec.tolerance = worst
    return codec


def save_codec(path, codec: TinyAutoencoderCodec) -> None:
    write_blob(path, codec.descriptor_json(), codec.flatten_params())


def load_codec(path, dtype=np.float32) -> TinyAutoencoderCodec:
    from ..errors import MalformedFileError

    desc_json, flat = read_blob(path)
    desc = json.loads(desc_json)
    if desc.get("kind") != "autoencoder":
        raise MalformedFileError(f"{path}: descriptor is not an autoencoder")
    codec = TinyAutoencoderCodec(desc["latent_channels"], desc["hidden"], dtype=dtype)
    if flat.size != codec.param_count():
        raise MalformedFileError(
            f"{path}: descriptor implies {codec.param_count()} weights, file holds {flat.size}"
        )
    codec.load_flat(flat)
    return codec
