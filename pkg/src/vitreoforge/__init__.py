"""Vitreous OCT enhancement toolkit: phantoms, frame averaging, diffusion
models with a from-scratch trainable denoiser, image metrics, reader-study
statistics, and a grading service."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    InvalidInputError,
    MalformedFileError,
    TrainingDivergedError,
    VitreoForgeError,
)

__all__ = [
    "ConfigError",
    "InvalidInputError",
    "MalformedFileError",
    "TrainingDivergedError",
    "VitreoForgeError",
    "__version__",
]
