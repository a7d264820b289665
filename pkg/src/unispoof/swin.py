"""Hierarchical shifted-window transformer backbone.

Four stages of windowed multi-head self-attention blocks over an NHWC
token grid.  Even-indexed blocks attend inside aligned windows; odd
blocks cyclically shift the grid by half a window first and mask
attention so tokens only see others from the same pre-shift region.
Between stages, 2x2 patch merging halves the grid and doubles channels.

The third stage is the tap stage: `encode` returns every block output
there (the candidate feature maps for the spoof head) plus the final
normalized grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .rng import SeedStream
from .tensor import Tensor

__all__ = [
    "SwinConfig", "WindowLayout", "BackboneFeatures",
    "window_partition", "window_reverse", "build_window_layout",
    "relative_position_index", "init_backbone", "encode",
    "patch_embed", "swin_block", "patch_merge", "TAP_STAGE",
]

NEG_INF = -1e9  # additive mask value for cross-region attention
TAP_STAGE = 2   # stage whose block outputs feed the spoof head


@dataclass(frozen=True)
class SwinConfig:
    """Backbone hyperparameters; defaults give the full-scale model."""

    image_size: int = 224
    patch_size: int = 4
    in_chans: int = 3
    embed_dim: int = 128
    depths: tuple[int, ...] = (2, 2, 18, 2)
    num_heads: tuple[int, ...] = (4, 8, 16, 32)
    window_size: int = 7
    mlp_ratio: float = 4.0
    rel_pos_bias: bool = True

    def __post_init__(self):
        if len(self.depths) != 4 or len(self.num_heads) != 4:
            raise ValueError(f"expected 4 stages, got depths={self.depths}, "
                             f"heads={self.num_heads}")
        if self.image_size % self.patch_size:
            raise ValueError(f"patch size {self.patch_size} does not divide "
                             f"image size {self.image_size}")
        if self.window_size < 1:
            raise ValueError(f"window size must be >= 1, got {self.window_size}")
        side = self.image_size // self.patch_size
        for i, (d, h) in enumerate(zip(self.depths, self.num_heads)):
            dim = self.embed_dim * 2 ** i
            if d < 1 or h < 1:
                raise ValueError(f"stage {i}: depth and heads must be >= 1")
            if dim % h:
                raise ValueError(f"stage {i}: dim {dim} not divisible by {h} heads")
            grid = side // 2 ** i
            if grid < 1 or (side // 2 ** i) * 2 ** i != side:
                raise ValueError(f"stage {i}: grid side {side}/2^{i} is not integral")
            m = min(self.window_size, grid)
            if grid % m:
                raise ValueError(f"stage {i}: window {m} does not divide grid {grid}")

    def stage_dims(self) -> list[int]:
        return [self.embed_dim * 2 ** i for i in range(4)]

    def stage_grid(self, stage: int) -> int:
        return self.image_size // self.patch_size // 2 ** stage

    def stage_window(self, stage: int) -> int:
        """Window size clamped so one window never exceeds the grid."""
        return min(self.window_size, self.stage_grid(stage))

    def tap_shape(self) -> tuple[int, int, int]:
        g = self.stage_grid(TAP_STAGE)
        return (g, g, self.embed_dim * 2 ** TAP_STAGE)

    def final_shape(self) -> tuple[int, int, int]:
        g = self.stage_grid(3)
        return (g, g, self.embed_dim * 8)


# -- window bookkeeping -------------------------------------------------------


def window_partition(x: Tensor, window: int) -> Tensor:
    """(N, H, W, C) -> (N * nW, window*window, C), row-major window order."""
    n, h, w, c = x.shape
    if h % window or w % window:
        raise T.ShapeError(f"window {window} does not divide grid {h}x{w}")
    gh, gw = h // window, w // window
    x = T.reshape(x, (n, gh, window, gw, window, c))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    return T.reshape(x, (n * gh * gw, window * window, c))


def window_reverse(xw: Tensor, window: int, h: int, w: int) -> Tensor:
    """Inverse of window_partition back to (N, H, W, C)."""
    gh, gw = h // window, w // window
    nw = gh * gw
    if xw.shape[0] % nw or xw.shape[1] != window * window:
        raise T.ShapeError(f"cannot reassemble windows {xw.shape} into {h}x{w} "
                           f"grid with window {window}")
    n = xw.shape[0] // nw
    c = xw.shape[2]
    x = T.reshape(xw, (n, gh, gw, window, window, c))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    return T.reshape(x, (n, h, w, c))


def relative_position_index(window: int) -> np.ndarray:
    """(T, T) indices into the (2M-1)^2 relative position bias table."""
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window),
                                  indexing="ij"))
    flat = coords.reshape(2, -1)
    rel = flat[:, :, None] - flat[:, None, :]
    rel = rel.transpose(1, 2, 0).copy()
    rel += window - 1
    rel[:, :, 0] *= 2 * window - 1
    return rel.sum(-1).astype(np.int64)


@dataclass
class WindowLayout:
    """Precomputed masks and index tables for one (grid, window, shift) tuple."""

    height: int
    width: int
    window: int
    shift: int
    region_ids: np.ndarray                 # (H, W) pre-shift region labels
    attn_mask: np.ndarray | None           # (nW, T, T) additive, or None
    rel_index: np.ndarray = field(repr=False, default=None)

    @property
    def num_windows(self) -> int:
        return (self.height // self.window) * (self.width // self.window)


def build_window_layout(height: int, width: int, window: int, shift: int) -> WindowLayout:
    """Region labels plus the additive attention mask for a shifted grid.

    After rolling the grid by (-shift, -shift), windows along the wrapped
    edges mix tokens that were not neighbours in the original grid.  The
    span scheme labels the shifted canvas so that each contiguous run of
    original tokens shares one label while wrapped-in tokens get another;
    attention between different labels inside a window is masked with a
    large negative additive term.  `region_ids` carries the labels mapped
    back to pre-shift coordinates.
    """
    if window > min(height, width):
        raise T.ShapeError(f"window {window} exceeds grid {height}x{width}")
    if height % window or width % window:
        raise T.ShapeError(f"window {window} does not divide grid {height}x{width}")
    if not 0 <= shift < window:
        raise ValueError(f"shift must lie in [0, window), got {shift}")

    rel = relative_position_index(window)
    if shift == 0:
        ids = np.zeros((height, width), dtype=np.int64)
        return WindowLayout(height, width, window, 0, ids, None, rel)

    canvas = np.zeros((height, width), dtype=np.int64)
    label = 0
    spans = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    for hs in spans:
        for ws in spans:
            canvas[hs, ws] = label
            label += 1

    gh, gw = height // window, width // window
    wins = canvas.reshape(gh, window, gw, window).transpose(0, 2, 1, 3)
    wins = wins.reshape(gh * gw, window * window)
    diff = wins[:, :, None] != wins[:, None, :]
    mask = np.where(diff, NEG_INF, 0.0)
    ids = np.roll(canvas, (shift, shift), axis=(0, 1))
    return WindowLayout(height, width, window, shift, ids, mask, rel)


# -- parameter construction ---------------------------------------------------


def _dense(stream: SeedStream, din: int, dout: int, dtype) -> Tensor:
    return T.trunc_normal((din, dout), 0.02, stream.generator, dtype=dtype)


def init_backbone(config: SwinConfig, stream: SeedStream,
                  dtype=np.float32) -> dict[str, Tensor]:
    """Freshly initialized backbone parameters, keyed by dotted path.

    Weight matrices and relative position bias tables draw from a
    truncated normal (sigma 0.02); biases start at zero, layer norm at
    identity.  Parameter order is deterministic given the stream.
    """
    p: dict[str, Tensor] = {}
    pd = config.patch_size * config.patch_size * config.in_chans
    c0 = config.embed_dim
    p["patch_embed.w"] = _dense(stream.child("patch_embed"), pd, c0, dtype)
    p["patch_embed.b"] = T.zeros((c0,), dtype=dtype, requires_grad=True)
    p["patch_embed.norm.g"] = T.ones((c0,), dtype=dtype, requires_grad=True)
    p["patch_embed.norm.b"] = T.zeros((c0,), dtype=dtype, requires_grad=True)

    for i, (depth, heads) in enumerate(zip(config.depths, config.num_heads)):
        d = config.embed_dim * 2 ** i
        m = config.stage_window(i)
        hidden = int(d * config.mlp_ratio)
        for j in range(depth):
            pre = f"stage{i}.block{j}."
            sub = stream.child(f"stage{i}", f"block{j}")
            p[pre + "norm1.g"] = T.ones((d,), dtype=dtype, requires_grad=True)
            p[pre + "norm1.b"] = T.zeros((d,), dtype=dtype, requires_grad=True)
            p[pre + "attn.qkv.w"] = _dense(sub.child("qkv"), d, 3 * d, dtype)
            p[pre + "attn.qkv.b"] = T.zeros((3 * d,), dtype=dtype, requires_grad=True)
            p[pre + "attn.proj.w"] = _dense(sub.child("proj"), d, d, dtype)
            p[pre + "attn.proj.b"] = T.zeros((d,), dtype=dtype, requires_grad=True)
            if config.rel_pos_bias:
                table = (2 * m - 1) ** 2
                p[pre + "attn.rel_bias"] = T.trunc_normal(
                    (table, heads), 0.02, sub.child("rel_bias").generator, dtype=dtype)
            p[pre + "norm2.g"] = T.ones((d,), dtype=dtype, requires_grad=True)
            p[pre + "norm2.b"] = T.zeros((d,), dtype=dtype, requires_grad=True)
            p[pre + "mlp.fc1.w"] = _dense(sub.child("fc1"), d, hidden, dtype)
            p[pre + "mlp.fc1.b"] = T.zeros((hidden,), dtype=dtype, requires_grad=True)
            p[pre + "mlp.fc2.w"] = _dense(sub.child("fc2"), hidden, d, dtype)
            p[pre + "mlp.fc2.b"] = T.zeros((d,), dtype=dtype, requires_grad=True)
        if i < 3:
            pre = f"merge{i}."
            p[pre + "norm.g"] = T.ones((4 * d,), dtype=dtype, requires_grad=True)
            p[pre + "norm.b"] = T.zeros((4 * d,), dtype=dtype, requires_grad=True)
            p[pre + "reduce.w"] = _dense(stream.child(f"merge{i}"), 4 * d, 2 * d, dtype)

    dn = config.embed_dim * 8
    p["norm.g"] = T.ones((dn,), dtype=dtype, requires_grad=True)
    p["norm.b"] = T.zeros((dn,), dtype=dtype, requires_grad=True)
    return p


# -- forward pieces -----------------------------------------------------------


def patch_embed(params: dict[str, Tensor], x: Tensor, config: SwinConfig) -> Tensor:
    """(N, H, W, 3) image -> (N, H/p, W/p, C) token grid."""
    n, h, w, c = x.shape
    pz = config.patch_size
    if c != config.in_chans:
        raise T.ShapeError(f"expected {config.in_chans} input channels, got {c}")
    if h != config.image_size or w != config.image_size:
        raise T.ShapeError(f"expected {config.image_size}px input, got {h}x{w}")
    gh, gw = h // pz, w // pz
    t = T.reshape(x, (n, gh, pz, gw, pz, c))
    t = T.transpose(t, (0, 1, 3, 2, 4, 5))
    t = T.reshape(t, (n, gh, gw, pz * pz * c))
    t = T.linear(t, params["patch_embed.w"], params["patch_embed.b"])
    return T.layer_norm(t, params["patch_embed.norm.g"], params["patch_embed.norm.b"])


def _window_attention(params: dict[str, Tensor], prefix: str, xw: Tensor,
                      heads: int, layout: WindowLayout,
                      rel_bias: Tensor | None) -> Tensor:
    """Multi-head self-attention inside each window of a partitioned batch."""
    bw, t, c = xw.shape
    dh = c // heads
    qkv = T.linear(xw, params[prefix + "attn.qkv.w"], params[prefix + "attn.qkv.b"])
    qkv = T.reshape(qkv, (bw, t, 3, heads, dh))
    qkv = T.transpose(qkv, (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]

    scores = T.matmul(q * (1.0 / math.sqrt(dh)), T.transpose(k, (0, 1, 3, 2)))
    if rel_bias is not None:
        bias = T.embedding_lookup(rel_bias, layout.rel_index.reshape(-1))
        bias = T.reshape(bias, (t, t, heads))
        bias = T.transpose(bias, (2, 0, 1))
        scores = scores + T.reshape(bias, (1, heads, t, t))
    if layout.attn_mask is not None:
        nw = layout.num_windows
        mask = Tensor(layout.attn_mask.astype(xw.dtype), dtype=xw.dtype)
        scores = T.reshape(scores, (bw // nw, nw, heads, t, t))
        scores = scores + T.reshape(mask, (1, nw, 1, t, t))
        scores = T.reshape(scores, (bw, heads, t, t))

    attn = T.softmax(scores, axis=-1)
    out = T.matmul(attn, v)
    out = T.transpose(out, (0, 2, 1, 3))
    out = T.reshape(out, (bw, t, c))
    return T.linear(out, params[prefix + "attn.proj.w"], params[prefix + "attn.proj.b"])


def swin_block(params: dict[str, Tensor], prefix: str, x: Tensor,
               layout: WindowLayout, heads: int) -> Tensor:
    """One transformer block: (shifted) window attention then a 2-layer MLP."""
    n, h, w, c = x.shape
    rel = params.get(prefix + "attn.rel_bias")

    t = T.layer_norm(x, params[prefix + "norm1.g"], params[prefix + "norm1.b"])
    if layout.shift:
        t = T.roll(t, (-layout.shift, -layout.shift), (1, 2))
    tw = window_partition(t, layout.window)
    tw = _window_attention(params, prefix, tw, heads, layout, rel)
    t = window_reverse(tw, layout.window, h, w)
    if layout.shift:
        t = T.roll(t, (layout.shift, layout.shift), (1, 2))
    x = x + t

    t = T.layer_norm(x, params[prefix + "norm2.g"], params[prefix + "norm2.b"])
    t = T.linear(t, params[prefix + "mlp.fc1.w"], params[prefix + "mlp.fc1.b"])
    t = T.gelu(t)
    t = T.linear(t, params[prefix + "mlp.fc2.w"], params[prefix + "mlp.fc2.b"])
    return x + t


def patch_merge(params: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    """Halve the grid: gather each 2x2 neighbourhood, norm, project 4C -> 2C."""
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise T.ShapeError(f"patch merge needs an even grid, got {h}x{w}")
    parts = [x[:, 0::2, 0::2, :], x[:, 1::2, 0::2, :],
             x[:, 0::2, 1::2, :], x[:, 1::2, 1::2, :]]
    t = T.concat(parts, axis=-1)
    t = T.layer_norm(t, params[prefix + "norm.g"], params[prefix + "norm.b"])
    return T.matmul(t, params[prefix + "reduce.w"])


@dataclass
class BackboneFeatures:
    """Tap-stage block outputs plus the final normalized grid."""

    taps: list[Tensor]
    final: Tensor

    def tap_count(self) -> int:
        return len(self.taps)


def build_layouts(config: SwinConfig) -> list[tuple[WindowLayout, WindowLayout]]:
    """Per stage: the unshifted layout and the one used by odd blocks."""
    out = []
    for i in range(4):
        g = config.stage_grid(i)
        m = config.stage_window(i)
        plain = build_window_layout(g, g, m, 0)
        # once a single window covers the grid there is nothing to shift
        shifted = build_window_layout(g, g, m, m // 2) if m < g else plain
        out.append((plain, shifted))
    return out


def encode(params: dict[str, Tensor], x: Tensor, config: SwinConfig,
           layouts: list[tuple[WindowLayout, WindowLayout]] | None = None
           ) -> BackboneFeatures:
    """Run the backbone; collect every tap-stage block output and the final map."""
    if layouts is None:
        layouts = build_layouts(config)
    t = patch_embed(params, x, config)
    taps: list[Tensor] = []
    for i, (depth, heads) in enumerate(zip(config.depths, config.num_heads)):
        plain, shifted = layouts[i]
        for j in range(depth):
            layout = shifted if j % 2 else plain
            t = swin_block(params, f"stage{i}.block{j}.", t, layout, heads)
            if i == TAP_STAGE:
                taps.append(t)
        if i < 3:
            t = patch_merge(params, f"merge{i}.", t)
    final = T.layer_norm(t, params["norm.g"], params["norm.b"])
    return BackboneFeatures(taps=taps, final=final)
