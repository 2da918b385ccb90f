"""Small encoder-decoder denoising network.

A classic U-Net layout: stem conv, per-level residual blocks with optional
self-attention, 2x mean-pool downsampling, a two-block bottleneck, then the
mirrored decoder with one skip concatenation per level. Timestep conditioning
enters every residual block through a shared two-layer embedding MLP. The
whole network is built from the hand-backpropped layers in ``layers``;
``backward`` returns the input gradient so the model itself is finite-
difference checkable end to end.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import InvalidInputError
from ..seeding import substream
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

__all__ = ["ModelConfig", "ResBlock", "UNet"]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture descriptor; serialized verbatim into parameter files."""

    in_channels: int = 2
    out_channels: int = 1
    base: int = 16
    multipliers: tuple = (1.0, 2.0)
    res_blocks: int = 2
    attention: tuple = ()
    groups: int = 8
    time_embedding: bool = True
    dropout: float = 0.1

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise InvalidInputError("channel counts must be positive")
        if self.base < 2 or self.base % 2:
            raise InvalidInputError("base channel count must be even and >= 2")
        if not self.multipliers or any(m <= 0 for m in self.multipliers):
            raise InvalidInputError("multipliers must be positive")
        if self.res_blocks < 1:
            raise InvalidInputError("need at least one residual block per level")
        attn = tuple(bool(a) for a in self.attention)
        if not attn:
            attn = (False,) * len(self.multipliers)
        if len(attn) != len(self.multipliers):
            raise InvalidInputError("attention flags must match the level count")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidInputError("dropout must be in [0, 1)")
        object.__setattr__(self, "multipliers", tuple(float(m) for m in self.multipliers))
        object.__setattr__(self, "attention", attn)

    @property
    def levels(self) -> int:
        return len(self.multipliers)

    @property
    def channels(self) -> tuple:
        # fractional multipliers resolve by rounding, never below one channel
        return tuple(max(1, round(self.base * m)) for m in self.multipliers)

    @property
    def temb_dim(self) -> int:
        return 4 * self.base

    def to_json(self) -> str:
        d = asdict(self)
        d["kind"] = "unet"
        return json.dumps(d, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ModelConfig":
        d = json.loads(text)
        kind = d.pop("kind", "unet")
        if kind != "unet":
            raise InvalidInputError(f"descriptor kind {kind!r} is not a network descriptor")
        d["multipliers"] = tuple(d.get("multipliers", ()))
        d["attention"] = tuple(d.get("attention", ()))
        return ModelConfig(**d)


class ResBlock(Module):
    """GroupNorm-SiLU-Conv twice, additive timestep injection, residual skip."""

    def __init__(self, in_ch, out_ch, temb_dim, groups, dropout, rng, dtype=np.float32):
        super().__init__()
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.add_child("gn1", GroupNorm(in_ch, groups, dtype=dtype))
        self.add_child("act1", SiLU())
        self.add_child("conv1", Conv2d(in_ch, out_ch, 3, rng=rng, dtype=dtype))
        if temb_dim:
            self.add_child("temb_act", SiLU())
            self.add_child("temb_proj", Linear(temb_dim, out_ch, rng=rng, dtype=dtype))
        else:
            self.temb_proj = None
        self.add_child("gn2", GroupNorm(out_ch, groups, dtype=dtype))
        self.add_child("act2", SiLU())
        self.add_child("drop", Dropout(dropout))
        self.add_child("conv2", Conv2d(out_ch, out_ch, 3, zero_init=True, dtype=dtype))
        if in_ch != out_ch:
            self.add_child("skip", Conv2d(in_ch, out_ch, 1, rng=rng, dtype=dtype))
        else:
            self.skip = None

    def forward(self, x, temb, train=False, rng=None):
        h = self.conv1.forward(self.act1.forward(self.gn1.forward(x, train), train), train)
        if self.temb_proj is not None:
            if temb is None:
                raise InvalidInputError("this network requires a timestep")
            emb = self.temb_proj.forward(self.temb_act.forward(temb, train), train)
            h = h + emb[:, :, None, None]
        h = self.conv2.forward(
            self.drop.forward(self.act2.forward(self.gn2.forward(h, train), train),
                              train, rng),
            train,
        )
        s = self.skip.forward(x, train) if self.skip is not None else x
        return s + h

    def backward(self, dout):
        dh = self.gn2.backward(
            self.act2.backward(self.drop.backward(self.conv2.backward(dout)))
        )
        dtemb = None
        if self.temb_proj is not None:
            dtemb = self.temb_act.backward(self.temb_proj.backward(dh.sum(axis=(2, 3))))
        dx = self.gn1.backward(self.act1.backward(self.conv1.backward(dh)))
        if self.skip is not None:
            dx += self.skip.backward(dout)
        else:
            dx += dout
        return dx, dtemb


class UNet(Module):
    """The denoising network; ``task`` of the caller decides input channels."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        rng = substream(seed, "init")
        chans = cfg.channels
        temb_dim = cfg.temb_dim if cfg.time_embedding else 0
        self.add_child("stem", Conv2d(cfg.in_channels, chans[0], 3, rng=rng, dtype=dtype))
        if cfg.time_embedding:
            self.add_child("temb_lin1", Linear(cfg.base, temb_dim, rng=rng, dtype=dtype))
            self.add_child("temb_act", SiLU())
            self.add_child("temb_lin2", Linear(temb_dim, temb_dim, rng=rng, dtype=dtype))
        self.down_blocks = []
        self.down_attn = []
        self.pools = []
        prev = chans[0]
        for i, ch in enumerate(chans):
            level = []
            for b in range(cfg.res_blocks):
                blk = ResBlock(prev if b == 0 else ch, ch, temb_dim, cfg.groups,
                               cfg.dropout, rng, dtype)
                self.add_child(f"down_{i}_{b}", blk)
                level.append(blk)
            self.down_blocks.append(level)
            if cfg.attention[i]:
                attn = SelfAttention(ch, cfg.groups, rng=rng, dtype=dtype)
                self.add_child(f"down_attn_{i}", attn)
                self.down_attn.append(attn)
            else:
                self.down_attn.append(None)
            if i < cfg.levels - 1:
                pool = AvgPool2()
                self.add_child(f"pool_{i}", pool)
                self.pools.append(pool)
            prev = ch
        mid_ch = chans[-1]
        self.add_child("mid_1", ResBlock(mid_ch, mid_ch, temb_dim, cfg.groups,
                                         cfg.dropout, rng, dtype))
        self.add_child("mid_2", ResBlock(mid_ch, mid_ch, temb_dim, cfg.groups,
                                         cfg.dropout, rng, dtype))
        self.up_blocks = []
        self.up_attn = []
        self.upsamples = {}
        for i in range(cfg.levels - 1, -1, -1):
            ch = chans[i]
            level = []
            for b in range(cfg.res_blocks):
                blk = ResBlock(2 * ch if b == 0 else ch, ch, temb_dim, cfg.groups,
                               cfg.dropout, rng, dtype)
                self.add_child(f"up_{i}_{b}", blk)
                level.append(blk)
            self.up_blocks.append((i, level))
            if cfg.attention[i]:
                attn = SelfAttention(ch, cfg.groups, rng=rng, dtype=dtype)
                self.add_child(f"up_attn_{i}", attn)
                self.up_attn.append(attn)
            else:
                self.up_attn.append(None)
            if i > 0:
                up = NearestUp2()
                conv = Conv2d(ch, chans[i - 1], 3, rng=rng, dtype=dtype)
                self.add_child(f"up_sample_{i}", up)
                self.add_child(f"up_conv_{i}", conv)
                self.upsamples[i] = (up, conv)
        self.add_child("head_norm", GroupNorm(chans[0], cfg.groups, dtype=dtype))
        self.add_child("head_act", SiLU())
        self.add_child("head_conv", Conv2d(chans[0], cfg.out_channels, 3,
                                           zero_init=True, dtype=dtype))

    # ---- passes ----

    def _temb(self, t, n, train):
        if not self.cfg.time_embedding:
            if t is not None:
                raise InvalidInputError("this network takes no timestep")
            return None
        if t is None:
            raise InvalidInputError("this network requires a timestep")
        emb = timestep_embedding(t, self.cfg.base)
        emb = np.tile(emb.astype(self.stem.w.dtype), (n, 1))
        return self.temb_lin2.forward(
            self.temb_act.forward(self.temb_lin1.forward(emb, train), train), train
        )

    def forward(self, x, t=None, train=False, rng=None):
        x = np.asarray(x)
        if x.ndim != 4:
            raise InvalidInputError(f"expected (N, C, H, W) input, got shape {x.shape}")
        n, c, h, w = x.shape
        if c != self.cfg.in_channels:
            raise InvalidInputError(
                f"network expects {self.cfg.in_channels} input channels, got {c}"
            )
        down_factor = 2 ** (self.cfg.levels - 1)
        if h % down_factor or w % down_factor:
            raise InvalidInputError(
                f"spatial dims must be divisible by {down_factor}, got {h}x{w}"
            )
        temb = self._temb(t, n, train)
        hmap = self.stem.forward(x, train)
        skips = []
        for i in range(self.cfg.levels):
            for blk in self.down_blocks[i]:
                hmap = blk.forward(hmap, temb, train, rng)
            if self.down_attn[i] is not None:
                hmap = self.down_attn[i].forward(hmap, train)
            skips.append(hmap)
            if i < self.cfg.levels - 1:
                hmap = self.pools[i].forward(hmap, train)
        hmap = self.mid_1.forward(hmap, temb, train, rng)
        hmap = self.mid_2.forward(hmap, temb, train, rng)
        for idx, (i, level) in enumerate(self.up_blocks):
            hmap = np.concatenate([hmap, skips[i]], axis=1)
            for blk in level:
                hmap = blk.forward(hmap, temb, train, rng)
            if self.up_attn[idx] is not None:
                hmap = self.up_attn[idx].forward(hmap, train)
            if i > 0:
                up, conv = self.upsamples[i]
                hmap = conv.forward(up.forward(hmap, train), train)
        out = self.head_conv.forward(
            self.head_act.forward(self.head_norm.forward(hmap, train), train), train
        )
        return out

    def backward(self, dout):
        """Backpropagate a loss gradient; accumulates parameter gradients and
        returns the gradient with respect to the network input."""
        d = self.head_norm.backward(
            self.head_act.backward(self.head_conv.backward(dout))
        )
        dtemb_total = None

        def add_temb(dt):
            nonlocal dtemb_total
            if dt is None:
                return
            dtemb_total = dt if dtemb_total is None else dtemb_total + dt

        dskips = {}
        for idx in range(len(self.up_blocks) - 1, -1, -1):
            i, level = self.up_blocks[idx]
            if i > 0:
                up, conv = self.upsamples[i]
                d = up.backward(conv.backward(d))
            if self.up_attn[idx] is not None:
                d = self.up_attn[idx].backward(d)
            for blk in reversed(level):
                d, dt = blk.backward(d)
                add_temb(dt)
            ch = self.cfg.channels[i]
            dskips[i] = d[:, ch:]
            d = d[:, :ch]
        d, dt = self.mid_2.backward(d)
        add_temb(dt)
        d, dt = self.mid_1.backward(d)
        add_temb(dt)
        for i in range(self.cfg.levels - 1, -1, -1):
            if i < self.cfg.levels - 1:
                d = self.pools[i].backward(d)
            d = d + dskips[i]
            if self.down_attn[i] is not None:
                d = self.down_attn[i].backward(d)
            for blk in reversed(self.down_blocks[i]):
                d, dt = blk.backward(d)
                add_temb(dt)
        dx = self.stem.backward(d)
        if dtemb_total is not None:
            self.temb_lin1.backward(
                self.temb_act.backward(self.temb_lin2.backward(dtemb_total))
            )
        return dx

    def predict(self, stack, t=None) -> np.ndarray:
        """Inference helper returning (N, H, W) for single-output networks."""
        out = self.forward(stack, t, train=False)
        if out.shape[1] != 1:
            raise InvalidInputError("predict() requires a single-channel output head")
        return out[:, 0]
