"""Network building blocks with explicit backward passes.

All layers operate on (N, C, H, W) batches (Linear on (N, F)) and follow the
same protocol: ``forward(x, train=...)`` caches whatever backward needs when
train is True, ``backward(dout)`` returns dx and accumulates parameter
gradients in place. Each module instance runs at most once per forward pass,
so a single cache slot per instance is sufficient.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InvalidInputError

__all__ = [
    "Module",
    "Conv2d",
    "Linear",
    "GroupNorm",
    "SiLU",
    "Dropout",
    "AvgPool2",
    "NearestUp2",
    "SelfAttention",
    "timestep_embedding",
]


class Module:
    """Base with ordered parameter registration and recursive traversal."""

    def __init__(self):
        self._params: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}
        self._children: list[tuple[str, "Module"]] = []

    def add_param(self, name: str, value: np.ndarray) -> np.ndarray:
        self._params[name] = value
        self._grads[name] = np.zeros_like(value)
        return value

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children.append((name, module))
        setattr(self, name, module)
        return module

    def parameters(self) -> list[np.ndarray]:
        out = list(self._params.values())
        for _, child in self._children:
            out.extend(child.parameters())
        return out

    def gradients(self) -> list[np.ndarray]:
        out = list(self._grads.values())
        for _, child in self._children:
            out.extend(child.gradients())
        return out

    def parameter_names(self, prefix: str = "") -> list[str]:
        out = [prefix + n for n in self._params]
        for name, child in self._children:
            out.extend(child.parameter_names(prefix + name + "."))
        return out

    def zero_grad(self) -> None:
        for g in self._grads.values():
            g[...] = 0
        for _, child in self._children:
            child.zero_grad()

    def astype(self, dtype) -> "Module":
        for name in self._params:
            self._params[name] = self._params[name].astype(dtype)
            self._grads[name] = np.zeros_like(self._params[name])
        self._refresh_param_attrs()
        for _, child in self._children:
            child.astype(dtype)
        return self

    def load_flat(self, flat: np.ndarray, dtype=None) -> int:
        """Fill parameters from a flat vector in declaration order; returns count used."""
        offset = 0
        for p in self.parameters():
            n = p.size
            if offset + n > flat.size:
                raise InvalidInputError("weight vector shorter than parameter count")
            p[...] = flat[offset : offset + n].reshape(p.shape).astype(p.dtype)
            offset += n
        return offset

    def flatten_params(self) -> np.ndarray:
        ps = self.parameters()
        if not ps:
            return np.zeros(0, dtype=np.float32)
        return np.concatenate([p.ravel() for p in ps])

    def param_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def _refresh_param_attrs(self) -> None:
        pass


def _as_batch(x: np.ndarray, ndim: int, what: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != ndim:
        raise InvalidInputError(f"{what}: expected {ndim}D input, got shape {x.shape}")
    return x


def _im2col(x: np.ndarray, ksize: int, pad: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C*k*k, OH*OW) patch matrix for stride-1 correlation."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (ksize, ksize), axis=(2, 3))  # N,C,OH,OW,k,k
    n, c, oh, ow, _, _ = win.shape
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * ksize * ksize, oh * ow)
    return np.ascontiguousarray(cols)


class Conv2d(Module):
    """Stride-1 2D convolution (cross-correlation) via an im2col GEMM.

    Backward computes dx as a full correlation with the 180-degree-rotated,
    channel-swapped kernel, and dW as a GEMM against the cached input patches.
    """

    def __init__(self, in_ch, out_ch, ksize=3, pad=None, bias=True, rng=None,
                 zero_init=False, dtype=np.float32):
        super().__init__()
        self.in_ch = int(in_ch)
        self.out_ch = int(out_ch)
        self.ksize = int(ksize)
        self.pad = (self.ksize - 1) // 2 if pad is None else int(pad)
        if self.ksize < 1 or self.ksize % 2 == 0:
            raise InvalidInputError("kernel size must be odd and positive")
        fan_in = self.in_ch * self.ksize * self.ksize
        if zero_init:
            w = np.zeros((self.out_ch, self.in_ch, self.ksize, self.ksize), dtype=dtype)
        else:
            rng = rng or np.random.default_rng(0)
            w = (rng.standard_normal((self.out_ch, self.in_ch, self.ksize, self.ksize))
                 * np.sqrt(2.0 / fan_in)).astype(dtype)
        self.w = self.add_param("w", w)
        self.b = self.add_param("b", np.zeros(self.out_ch, dtype=dtype)) if bias else None
        self._cache = None

    def _refresh_param_attrs(self):
        self.w = self._params["w"]
        if self.b is not None:
            self.b = self._params["b"]

    def forward(self, x, train=False):
        x = _as_batch(x, 4, "Conv2d")
        if x.shape[1] != self.in_ch:
            raise InvalidInputError(
                f"Conv2d expects {self.in_ch} input channels, got {x.shape[1]}"
            )
        n, _, h, w = x.shape
        oh = h + 2 * self.pad - self.ksize + 1
        ow = w + 2 * self.pad - self.ksize + 1
        if oh < 1 or ow < 1:
            raise InvalidInputError(f"input {h}x{w} too small for kernel {self.ksize}")
        cols = _im2col(x, self.ksize, self.pad)
        wmat = self.w.reshape(self.out_ch, -1)
        out = np.einsum("of,nfl->nol", wmat, cols, optimize=True)
        if self.b is not None:
            out += self.b[None, :, None]
        out = out.reshape(n, self.out_ch, oh, ow)
        if train:
            self._cache = (cols, x.shape)
        return out

    def backward(self, dout):
        if self._cache is None:
            raise InvalidInputError("backward called before a training forward pass")
        cols, xshape = self._cache
        self._cache = None
        n, _, h, w = xshape
        dout = _as_batch(dout, 4, "Conv2d.backward")
        dflat = dout.reshape(n, self.out_ch, -1)
        dw = np.einsum("nol,nfl->of", dflat, cols, optimize=True)
        self._grads["w"] += dw.reshape(self.w.shape)
        if self.b is not None:
            self._grads["b"] += dflat.sum(axis=(0, 2))
        # full correlation of dout with the rotated kernel gives dx
        w_rot = self.w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # (in, out, k, k)
        full_pad = self.ksize - 1 - self.pad
        dcols = _im2col(dout, self.ksize, full_pad)
        wmat = np.ascontiguousarray(w_rot.reshape(self.in_ch, -1))
        dx = np.einsum("cf,nfl->ncl", wmat, dcols, optimize=True)
        return dx.reshape(n, self.in_ch, h, w)


class Linear(Module):
    def __init__(self, in_f, out_f, bias=True, rng=None, zero_init=False, dtype=np.float32):
        super().__init__()
        self.in_f = int(in_f)
        self.out_f = int(out_f)
        if zero_init:
            w = np.zeros((self.out_f, self.in_f), dtype=dtype)
        else:
            rng = rng or np.random.default_rng(0)
            w = (rng.standard_normal((self.out_f, self.in_f))
                 * np.sqrt(2.0 / self.in_f)).astype(dtype)
        self.w = self.add_param("w", w)
        self.b = self.add_param("b", np.zeros(self.out_f, dtype=dtype)) if bias else None
        self._cache = None

    def _refresh_param_attrs(self):
        self.w = self._params["w"]
        if self.b is not None:
            self.b = self._params["b"]

    def forward(self, x, train=False):
        x = _as_batch(x, 2, "Linear")
        if x.shape[1] != self.in_f:
            raise InvalidInputError(f"Linear expects {self.in_f} features, got {x.shape[1]}")
        out = x @ self.w.T
        if self.b is not None:
            out = out + self.b
        if train:
            self._cache = x
        return out

    def backward(self, dout):
        x = self._cache
        self._cache = None
        self._grads["w"] += dout.T @ x
        if self.b is not None:
            self._grads["b"] += dout.sum(axis=0)
        return dout @ self.w


class GroupNorm(Module):
    """Per-group normalization with per-channel affine parameters.

    The effective group count is the largest divisor of the channel count
    that does not exceed the requested one, so any channel width is legal.
    """

    def __init__(self, channels, groups=8, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.channels = int(channels)
        self.groups = max(g for g in range(1, int(groups) + 1) if self.channels % g == 0)
        self.eps = float(eps)
        self.gamma = self.add_param("gamma", np.ones(self.channels, dtype=dtype))
        self.beta = self.add_param("beta", np.zeros(self.channels, dtype=dtype))
        self._cache = None

    def _refresh_param_attrs(self):
        self.gamma = self._params["gamma"]
        self.beta = self._params["beta"]

    def forward(self, x, train=False):
        x = _as_batch(x, 4, "GroupNorm")
        n, c, h, w = x.shape
        if c != self.channels:
            raise InvalidInputError(f"GroupNorm expects {self.channels} channels, got {c}")
        g = self.groups
        xg = x.reshape(n, g, -1)
        mu = xg.mean(axis=2, keepdims=True)
        var = xg.var(axis=2, keepdims=True)
        std = np.sqrt(var + self.eps)
        xhat = ((xg - mu) / std).reshape(n, c, h, w)
        out = self.gamma[None, :, None, None] * xhat + self.beta[None, :, None, None]
        if train:
            self._cache = (xhat, std, x.shape)
        return out

    def backward(self, dout):
        xhat, std, shape = self._cache
        self._cache = None
        n, c, h, w = shape
        g = self.groups
        self._grads["gamma"] += (dout * xhat).sum(axis=(0, 2, 3))
        self._grads["beta"] += dout.sum(axis=(0, 2, 3))
        dxhat = (dout * self.gamma[None, :, None, None]).reshape(n, g, -1)
        xh = xhat.reshape(n, g, -1)
        m = dxhat.shape[2]
        dx = (dxhat - dxhat.mean(axis=2, keepdims=True)
              - xh * (dxhat * xh).mean(axis=2, keepdims=True)) / std
        return dx.reshape(n, c, h, w)


class SiLU(Module):
    def __init__(self):
        super().__init__()
        self._cache = None

    def forward(self, x, train=False):
        s = 1.0 / (1.0 + np.exp(-x))
        if train:
            self._cache = (x, s)
        return x * s

    def backward(self, dout):
        x, s = self._cache
        self._cache = None
        return dout * s * (1.0 + x * (1.0 - s))


class Dropout(Module):
    """Inverted dropout: active only when training and p > 0."""

    def __init__(self, p):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise InvalidInputError("dropout rate must be in [0, 1)")
        self.p = float(p)
        self._mask = None

    def forward(self, x, train=False, rng=None):
        if not train or self.p == 0.0:
            self._mask = 1.0
            return x
        if rng is None:
            raise InvalidInputError("training-mode dropout needs an RNG")
        self._mask = (rng.random(x.shape) >= self.p).astype(x.dtype) / (1.0 - self.p)
        return x * self._mask

    def backward(self, dout):
        mask = self._mask
        self._mask = None
        return dout * mask


class AvgPool2(Module):
    """2x2 mean pooling with stride 2; spatial dims must be even."""

    def __init__(self):
        super().__init__()
        self._shape = None

    def forward(self, x, train=False):
        x = _as_batch(x, 4, "AvgPool2")
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise InvalidInputError(f"AvgPool2 needs even spatial dims, got {h}x{w}")
        self._shape = x.shape
        return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(self, dout):
        n, c, h, w = self._shape
        self._shape = None
        up = np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3)
        return up / 4.0


class NearestUp2(Module):
    """Nearest-neighbor 2x upsampling."""

    def __init__(self):
        super().__init__()

    def forward(self, x, train=False):
        x = _as_batch(x, 4, "NearestUp2")
        return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)

    def backward(self, dout):
        n, c, h, w = dout.shape
        return dout.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


class SelfAttention(Module):
    """Single-head spatial self-attention with a residual connection."""

    def __init__(self, channels, groups=8, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.channels = int(channels)
        self.add_child("norm", GroupNorm(channels, groups, dtype=dtype))
        self.add_child("q", Conv2d(channels, channels, 1, rng=rng, dtype=dtype))
        self.add_child("k", Conv2d(channels, channels, 1, rng=rng, dtype=dtype))
        self.add_child("v", Conv2d(channels, channels, 1, rng=rng, dtype=dtype))
        self.add_child("proj", Conv2d(channels, channels, 1, zero_init=True, dtype=dtype))
        self._cache = None

    def forward(self, x, train=False):
        x = _as_batch(x, 4, "SelfAttention")
        n, c, h, w = x.shape
        hn = self.norm.forward(x, train)
        q = self.q.forward(hn, train).reshape(n, c, h * w)
        k = self.k.forward(hn, train).reshape(n, c, h * w)
        v = self.v.forward(hn, train).reshape(n, c, h * w)
        scale = 1.0 / np.sqrt(c)
        scores = np.einsum("ncl,ncm->nlm", q, k, optimize=True) * scale
        scores -= scores.max(axis=2, keepdims=True)
        attn = np.exp(scores)
        attn /= attn.sum(axis=2, keepdims=True)
        out = np.einsum("ncm,nlm->ncl", v, attn, optimize=True)
        out = self.proj.forward(out.reshape(n, c, h, w), train)
        if train:
            self._cache = (q, k, v, attn, scale, (n, c, h, w))
        return x + out

    def backward(self, dout):
        q, k, v, attn, scale, (n, c, h, w) = self._cache
        self._cache = None
        dproj_in = self.proj.backward(dout).reshape(n, c, h * w)
        dv = np.einsum("ncl,nlm->ncm", dproj_in, attn, optimize=True)
        dattn = np.einsum("ncl,ncm->nlm", dproj_in, v, optimize=True)
        dscores = attn * (dattn - (dattn * attn).sum(axis=2, keepdims=True))
        dq = np.einsum("nlm,ncm->ncl", dscores, k, optimize=True) * scale
        dk = np.einsum("nlm,ncl->ncm", dscores, q, optimize=True) * scale
        dhn = self.q.backward(dq.reshape(n, c, h, w))
        dhn += self.k.backward(dk.reshape(n, c, h, w))
        dhn += self.v.backward(dv.reshape(n, c, h, w))
        dx = self.norm.backward(dhn)
        return dout + dx


def timestep_embedding(t, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal embedding of a scalar timestep into a length-dim vector."""
    if dim < 2 or dim % 2:
        raise InvalidInputError("embedding dimension must be even and >= 2")
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = float(t) * freqs
    return np.concatenate([np.sin(args), np.cos(args)])
