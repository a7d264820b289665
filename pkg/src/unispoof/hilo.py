"""Frequency-split attention over a feature map.

High-frequency heads run plain self-attention inside small s x s
windows; low-frequency heads keep queries at full resolution but take
keys and values from the window-average-pooled map.  The two paths use
separate Q/K/V and output projections and their channels concatenate,
high-frequency first.

Degenerate configurations collapse to global multi-head attention:
all-hi heads with a window covering the whole map, or all-lo heads with
a 1x1 pooling window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .rng import SeedStream
from .swin import window_partition, window_reverse
from .tensor import Tensor

__all__ = ["HiLoConfig", "init_hilo", "hilo_attend"]


@dataclass(frozen=True)
class HiLoConfig:
    """Channel split and window size for the two attention paths."""

    channels: int
    total_heads: int
    hi_heads: int
    window: int = 2

    def __post_init__(self):
        if not 0 <= self.hi_heads <= self.total_heads:
            raise ValueError(f"hi_heads {self.hi_heads} outside "
                             f"[0, {self.total_heads}]")
        if self.total_heads < 1 or self.channels % self.total_heads:
            raise ValueError(f"total_heads {self.total_heads} must divide "
                             f"channels {self.channels}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")

    @property
    def head_dim(self) -> int:
        return self.channels // self.total_heads

    @property
    def hi_channels(self) -> int:
        return self.hi_heads * self.head_dim

    @property
    def lo_channels(self) -> int:
        return self.channels - self.hi_channels

    @property
    def lo_heads(self) -> int:
        return self.total_heads - self.hi_heads


def init_hilo(config: HiLoConfig, stream: SeedStream,
              dtype=np.float32) -> dict[str, Tensor]:
    """Per-path projection weights; paths with zero heads get no parameters.

    Scaled by fan-in (the head sits behind no normalization layer, so
    flat-sigma init would shrink activations by orders of magnitude).
    """
    c = config.channels
    p: dict[str, Tensor] = {}

    def dense(tag, din, dout):
        p[tag + ".w"] = T.trunc_normal((din, dout), din ** -0.5,
                                       stream.child(tag).generator, dtype=dtype)
        p[tag + ".b"] = T.zeros((dout,), dtype=dtype, requires_grad=True)

    if config.hi_heads > 0:
        dense("hi_qkv", c, 3 * config.hi_channels)
        dense("hi_proj", config.hi_channels, config.hi_channels)
    if config.lo_heads > 0:
        dense("lo_q", c, config.lo_channels)
        dense("lo_kv", c, 2 * config.lo_channels)
        dense("lo_proj", config.lo_channels, config.lo_channels)
    return p


def _split_heads(x: Tensor, heads: int) -> Tensor:
    """(B, T, heads*dh) -> (B, heads, T, dh)."""
    b, t, c = x.shape
    x = T.reshape(x, (b, t, heads, c // heads))
    return T.transpose(x, (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    """(B, heads, T, dh) -> (B, T, heads*dh)."""
    b, h, t, d = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, t, h * d))


def _attend(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    dh = q.shape[-1]
    scores = T.matmul(q * (1.0 / math.sqrt(dh)), T.transpose(k, (0, 1, 3, 2)))
    return T.matmul(T.softmax(scores, axis=-1), v)


def hilo_attend(params: dict[str, Tensor], x: Tensor,
                config: HiLoConfig, prefix: str = "") -> Tensor:
    """Run both attention paths over (N, h, w, D); output shape equals input."""
    n, h, w, c = x.shape
    s = config.window
    if c != config.channels:
        raise T.ShapeError(f"expected {config.channels} channels, got {c}")
    if h % s or w % s:
        raise T.ShapeError(f"window {s} does not divide feature map {h}x{w}")

    parts: list[Tensor] = []

    if config.hi_heads > 0:
        xw = window_partition(x, s)
        qkv = T.linear(xw, params[prefix + "hi_qkv.w"], params[prefix + "hi_qkv.b"])
        bw, t, _ = qkv.shape
        qkv = T.reshape(qkv, (bw, t, 3, config.hi_heads, config.head_dim))
        qkv = T.transpose(qkv, (2, 0, 3, 1, 4))
        out = _attend(qkv[0], qkv[1], qkv[2])
        out = _merge_heads(out)
        out = T.linear(out, params[prefix + "hi_proj.w"], params[prefix + "hi_proj.b"])
        parts.append(window_reverse(out, s, h, w))

    if config.lo_heads > 0:
        pooled = T.pool2d(x, s, "avg") if s > 1 else x
        m = (h // s) * (w // s)
        pooled = T.reshape(pooled, (n, m, c))
        q = T.linear(T.reshape(x, (n, h * w, c)),
                     params[prefix + "lo_q.w"], params[prefix + "lo_q.b"])
        q = _split_heads(q, config.lo_heads)
        kv = T.linear(pooled, params[prefix + "lo_kv.w"], params[prefix + "lo_kv.b"])
        kv = T.reshape(kv, (n, m, 2, config.lo_heads, config.head_dim))
        kv = T.transpose(kv, (2, 0, 3, 1, 4))
        out = _attend(q, kv[0], kv[1])
        out = _merge_heads(out)
        out = T.linear(out, params[prefix + "lo_proj.w"], params[prefix + "lo_proj.b"])
        parts.append(T.reshape(out, (n, h, w, config.lo_channels)))

    return parts[0] if len(parts) == 1 else T.concat(parts, axis=-1)
