"""Run configuration: one INI-style file drives every pipeline stage.

Sections and keys are fixed; unknown sections or keys are rejected so a typo
cannot silently fall back to a default. All defaults reproduce the shipped
training configuration (2e-5 learning rate, 0.01 weight decay, 0.1 dropout,
0.9999 EMA, batch size 1, 1000-step linear noise schedule, l2 loss on the
velocity target).
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass

from .denoiser.model import ModelConfig
from .denoiser.training import TrainConfig
from .diffusion import BridgeSchedule, NoiseSchedule, linear_beta_schedule
from .errors import ConfigError
from .phantom import PhantomSpec
from .seeding import substream

__all__ = ["RunConfig", "load_config", "default_config", "write_example_config"]


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _bools(text: str) -> tuple:
    return tuple(_bool(v) for v in text.split(",") if v.strip())


# section -> key -> (default string, parser)
_SCHEMA = {
    "run": {
        "seed": ("0", int),
    },
    "phantom": {
        "height": ("64", int),
        "width": ("64", int),
        "layer_boundaries": ("20,44", _ints),
        "layer_reflectivities": ("0.08,0.65,0.35", _floats),
        "boundary_jitter": ("1.5", float),
        "speckle_looks": ("1.0", float),
        "locations": ("4", int),
        "frames_per_location": ("10", int),
        "strip_rows": ("8", int),
        "strips_per_location": ("1", int),
    },
    "schedule": {
        "t": ("1000", int),
        "beta_start": ("1e-4", float),
        "beta_end": ("0.02", float),
        "sigma_mode": ("beta", str),
    },
    "model": {
        "base": ("16", int),
        "multipliers": ("1.0,2.0", _floats),
        "res_blocks": ("2", int),
        "groups": ("8", int),
        "attention": ("", _bools),
        "time_embedding": ("true", _bool),
    },
    "training": {
        "method": ("cddpm", str),
        "learning_rate": ("2e-5", float),
        "weight_decay": ("0.01", float),
        "dropout": ("0.1", float),
        "ema_decay": ("0.9999", float),
        "steps": ("1000", int),
        "batch_size": ("1", int),
        "loss": ("l2", str),
        "prediction": ("velocity", str),
        "grad_clip": ("1.0", float),
        "latent_channels": ("4", int),
        "ae_hidden": ("8", int),
        "ae_steps": ("400", int),
        "ae_learning_rate": ("0.01", float),
    },
    "sampling": {
        "steps": ("1000", int),
    },
    "metrics": {
        "perceptual_backend": ("gradmag", str),
        "ssim_window": ("11", int),
        "ssim_sigma": ("1.5", float),
    },
    "turing": {
        "n_questions": ("10", int),
    },
}

_METHODS = ("cddpm", "regression", "bbdm")


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration; builders below derive the typed domain objects."""

    seed: int
    phantom: dict
    schedule: dict
    model: dict
    training: dict
    sampling: dict
    metrics: dict
    turing: dict

    def __post_init__(self):
        if self.training["method"] not in _METHODS:
            raise ConfigError(
                f"training.method must be one of {_METHODS}, "
                f"got {self.training['method']!r}"
            )
        for name in ("locations", "frames_per_location"):
            if self.phantom[name] < 1:
                raise ConfigError(f"phantom.{name} must be >= 1")
        if not (0 <= self.phantom["strips_per_location"]
                <= self.phantom["frames_per_location"]):
            raise ConfigError("phantom.strips_per_location out of range")
        if self.sampling["steps"] < 1:
            raise ConfigError("sampling.steps must be >= 1")

    # ---- builders -------------------------------------------------------

    def phantom_spec(self, location: int) -> PhantomSpec:
        """Per-location phantom description with seeded strip placement."""
        p = self.phantom
        rng = substream(self.seed, "phantom-location", location)
        loc_seed = int(rng.integers(0, 2 ** 31 - 1))
        strips = []
        if p["strip_rows"] > 0:
            max_start = max(1, p["height"] - p["strip_rows"])
            frame_pool = rng.permutation(p["frames_per_location"])
            for k in range(p["strips_per_location"]):
                r0 = int(rng.integers(0, max_start))
                strips.append((r0, min(p["height"], r0 + p["strip_rows"]),
                               int(frame_pool[k])))
        return PhantomSpec(
            height=p["height"],
            width=p["width"],
            layer_boundaries=p["layer_boundaries"],
            layer_reflectivities=p["layer_reflectivities"],
            boundary_jitter=p["boundary_jitter"],
            speckle_looks=p["speckle_looks"],
            artifact_strips=tuple(strips),
            seed=loc_seed,
        )

    def noise_schedule(self) -> NoiseSchedule:
        s = self.schedule
        return linear_beta_schedule(s["t"], s["beta_start"], s["beta_end"],
                                    sigma_mode=s["sigma_mode"])

    def bridge_schedule(self) -> BridgeSchedule:
        return BridgeSchedule(self.schedule["t"])

    def model_config(self, in_channels: int, out_channels: int = 1,
                     time_embedding: bool | None = None) -> ModelConfig:
        m = self.model
        return ModelConfig(
            in_channels=in_channels,
            out_channels=out_channels,
            base=m["base"],
            multipliers=m["multipliers"],
            res_blocks=m["res_blocks"],
            attention=m["attention"],
            groups=m["groups"],
            time_embedding=(m["time_embedding"] if time_embedding is None
                            else time_embedding),
            dropout=self.training["dropout"],
        )

    def train_config(self) -> TrainConfig:
        t = self.training
        return TrainConfig(
            learning_rate=t["learning_rate"],
            weight_decay=t["weight_decay"],
            dropout=t["dropout"],
            ema_decay=t["ema_decay"],
            steps=t["steps"],
            batch_size=t["batch_size"],
            loss=t["loss"],
            prediction=t["prediction"],
            grad_clip=t["grad_clip"],
            seed=self.seed,
        )


def _parse(parser: configparser.ConfigParser, path: str | None) -> RunConfig:
    values = {}
    for section, keys in _SCHEMA.items():
        values[section] = {}
        for key, (default, conv) in keys.items():
            raw = default
            if parser.has_section(section) and parser.has_option(section, key):
                raw = parser.get(section, key)
            try:
                values[section][key] = conv(raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{section}.{key}: bad value {raw!r} ({exc})")
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]"
                              + (f" in {path}" if path else ""))
        for key, _ in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}"
                                  + (f" in {path}" if path else ""))
    seed = values["run"]["seed"]
    return RunConfig(
        seed=seed,
        phantom=values["phantom"],
        schedule=values["schedule"],
        model=values["model"],
        training=values["training"],
        sampling=values["sampling"],
        metrics=values["metrics"],
        turing=values["turing"],
    )


def load_config(path) -> RunConfig:
    path = os.fspath(path)
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}")
    return _parse(parser, path)


def default_config(seed: int = 0) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    cfg = _parse(parser, None)
    if seed == cfg.seed:
        return cfg
    return RunConfig(seed=seed, phantom=cfg.phantom, schedule=cfg.schedule,
                     model=cfg.model, training=cfg.training,
                     sampling=cfg.sampling, metrics=cfg.metrics,
                     turing=cfg.turing)


def write_example_config(path, seed: int = 0) -> None:
    """Emit every section with its default value, ready to edit."""
    lines = []
    for section, keys in _SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (default, _) in keys.items():
            if section == "run" and key == "seed":
                default = str(int(seed))
            lines.append(f"{key} = {default}")
        lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
