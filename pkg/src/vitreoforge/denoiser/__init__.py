"""Trainable denoising network: numpy layers with hand-written backward
passes, a small U-Net, AdamW/EMA optimization, parameter serialization, and
the training drivers for the diffusion and regression tasks."""

from .layers import (
    AvgPool2,
    Conv2d,
    Dropout,
    GroupNorm,
    Linear,
    Module,
    NearestUp2,
    SelfAttention,
    SiLU,
    timestep_embedding,
)
from .model import ModelConfig, UNet
from .optim import EMA, AdamW, clip_global_norm
from .params import load_params, save_params
from .training import (
    TrainConfig,
    TinyAutoencoderCodec,
    train_bbdm,
    train_cddpm,
    train_regression_baseline,
    tiny_autoencoder_train,
)

__all__ = [
    "AvgPool2",
    "Conv2d",
    "Dropout",
    "GroupNorm",
    "Linear",
    "Module",
    "NearestUp2",
    "SelfAttention",
    "SiLU",
    "timestep_embedding",
    "ModelConfig",
    "UNet",
    "EMA",
    "AdamW",
    "clip_global_norm",
    "load_params",
    "save_params",
    "TrainConfig",
    "TinyAutoencoderCodec",
    "train_bbdm",
    "train_cddpm",
    "train_regression_baseline",
    "tiny_autoencoder_train",
]
