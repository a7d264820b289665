"""Task heads: face embedding with an angular-margin loss, and the
spoof classifier (frequency-split attention followed by a small CNN).

Spoof labels are binary with 1 = bona fide and 0 = attack, physical or
digital alike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .hilo import HiLoConfig, hilo_attend, init_hilo
from .rng import SeedStream
from .tensor import Tensor

__all__ = [
    "ArcFaceConfig", "UadConfig", "init_frm", "frm_embed",
    "init_arcface", "arcface_loss", "init_uad", "uad_forward", "bce_loss",
]

COS_EPS = 1e-7   # clamp margin for cosines before the angle arithmetic
BCE_EPS = 1e-7   # clamp margin for predicted probabilities


# -- face embedding -----------------------------------------------------------


def init_frm(in_channels: int, stream: SeedStream, embed_dim: int = 1024,
             dtype=np.float32) -> dict[str, Tensor]:
    return {
        "fc.w": T.trunc_normal((in_channels, embed_dim), 0.02,
                               stream.child("fc").generator, dtype=dtype),
        "fc.b": T.zeros((embed_dim,), dtype=dtype, requires_grad=True),
    }


def frm_embed(params: dict[str, Tensor], final: Tensor, prefix: str = "") -> Tensor:
    """(N, h, w, C) final feature map -> unit-norm (N, embed_dim) rows."""
    if final.ndim != 4:
        raise T.ShapeError(f"expected an NHWC feature map, got {final.shape}")
    pooled = final.mean(axis=(1, 2))
    emb = T.linear(pooled, params[prefix + "fc.w"], params[prefix + "fc.b"])
    return T.l2_normalize(emb)


# -- angular-margin classification loss ----------------------------------------


@dataclass(frozen=True)
class ArcFaceConfig:
    """Class count plus the scale/margin pair of the angular softmax."""

    num_classes: int
    embed_dim: int = 1024
    scale: float = 32.0
    margin: float = 0.5

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError(f"need at least one class, got {self.num_classes}")
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not 0.0 <= self.margin < math.pi / 2:
            raise ValueError(f"margin must lie in [0, pi/2), got {self.margin}")


def init_arcface(config: ArcFaceConfig, stream: SeedStream,
                 dtype=np.float32) -> dict[str, Tensor]:
    """Class-weight matrix, one column per identity; normalized at use."""
    return {"w": T.trunc_normal((config.embed_dim, config.num_classes), 0.02,
                                stream.child("w").generator, dtype=dtype)}


def arcface_loss(emb: Tensor, labels: np.ndarray, params: dict[str, Tensor],
                 config: ArcFaceConfig, prefix: str = "") -> Tensor:
    """Mean negative log-softmax with the margin added to the target angle.

    cos(theta_y + m) expands to cos*cos(m) - sin*sin(m) with
    sin = sqrt(1 - cos^2); cosines are clamped away from +/-1 first.
    Only the target column receives the margin; every logit is scaled by s.
    """
    labels = np.asarray(labels)
    n, d = emb.shape
    if d != config.embed_dim:
        raise T.ShapeError(f"embedding dim {d} != configured {config.embed_dim}")
    if labels.shape != (n,):
        raise T.ShapeError(f"labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= config.num_classes:
        raise ValueError(f"labels must lie in [0, {config.num_classes}), got "
                         f"range [{labels.min()}, {labels.max()}]")

    w = params[prefix + "w"]
    w_hat = T.transpose(T.l2_normalize(T.transpose(w, (1, 0))), (1, 0))
    cos = T.clip(emb @ w_hat, -1.0 + COS_EPS, 1.0 - COS_EPS)

    one = Tensor(np.zeros((n, config.num_classes), dtype=emb.dtype.type),
                 dtype=emb.dtype)
    one.data[np.arange(n), labels] = 1.0
    sin = T.sqrt(1.0 - cos * cos)
    cos_margin = cos * math.cos(config.margin) - sin * math.sin(config.margin)
    logits = (one * cos_margin + (1.0 - one) * cos) * config.scale

    # max-subtracted log-softmax; the shift is a constant so gradients are exact
    shift = Tensor(logits.data.max(axis=1, keepdims=True), dtype=emb.dtype)
    z = logits - shift
    log_norm = T.log(T.exp(z).sum(axis=1))
    target = (z * one).sum(axis=1)
    return (log_norm - target).mean()


# -- spoof head ----------------------------------------------------------------


@dataclass(frozen=True)
class UadConfig:
    """Spoof-head geometry, derived from the tapped feature-map shape."""

    tap_height: int
    tap_width: int
    tap_channels: int
    total_heads: int = 8
    hi_heads: int = 4
    window: int = 2
    conv1_out: int = 64
    conv2_out: int = 32
    fc_dim: int = 128

    def __post_init__(self):
        self.hilo()  # validates the head split
        if self.tap_height % self.window or self.tap_width % self.window:
            raise ValueError(f"window {self.window} does not divide tap "
                             f"{self.tap_height}x{self.tap_width}")
        if self.tap_height % 2 or self.tap_width % 2:
            raise ValueError(f"2x2 max-pool needs even tap dims, got "
                             f"{self.tap_height}x{self.tap_width}")

    def hilo(self) -> HiLoConfig:
        return HiLoConfig(channels=self.tap_channels,
                          total_heads=self.total_heads,
                          hi_heads=self.hi_heads, window=self.window)

    def flat_dim(self) -> int:
        return (self.tap_height // 2) * (self.tap_width // 2) * self.conv2_out


def init_uad(config: UadConfig, stream: SeedStream,
             dtype=np.float32) -> dict[str, Tensor]:
    c = config.tap_channels
    p = {"hilo." + k: v for k, v in
         init_hilo(config.hilo(), stream.child("hilo"), dtype=dtype).items()}

    def conv(tag, cin, cout):
        # He-style scale for the relu layers; no norm layers in this head.
        p[tag + ".w"] = T.trunc_normal((3, 3, cin, cout), (2.0 / (9 * cin)) ** 0.5,
                                       stream.child(tag).generator, dtype=dtype)
        p[tag + ".b"] = T.zeros((cout,), dtype=dtype, requires_grad=True)

    conv("conv1", c, config.conv1_out)
    conv("conv2", config.conv1_out, config.conv2_out)
    p["fc.w"] = T.trunc_normal((config.flat_dim(), config.fc_dim),
                               (2.0 / config.flat_dim()) ** 0.5,
                               stream.child("fc").generator, dtype=dtype)
    p["fc.b"] = T.zeros((config.fc_dim,), dtype=dtype, requires_grad=True)
    p["out.w"] = T.trunc_normal((config.fc_dim, 1), config.fc_dim ** -0.5,
                                stream.child("out").generator, dtype=dtype)
    p["out.b"] = T.zeros((1,), dtype=dtype, requires_grad=True)
    return p


def uad_forward(params: dict[str, Tensor], feat: Tensor, config: UadConfig,
                prefix: str = "") -> Tensor:
    """Tapped feature map (N, h, w, C) -> bona fide probability per sample."""
    n, h, w, c = feat.shape
    if (h, w, c) != (config.tap_height, config.tap_width, config.tap_channels):
        raise T.ShapeError(f"feature map {h}x{w}x{c} does not match configured "
                           f"tap {config.tap_height}x{config.tap_width}"
                           f"x{config.tap_channels}")
    t = hilo_attend(params, feat, config.hilo(), prefix=prefix + "hilo.")
    t = T.relu(T.conv2d(t, params[prefix + "conv1.w"], params[prefix + "conv1.b"],
                        padding=1))
    t = T.relu(T.conv2d(t, params[prefix + "conv2.w"], params[prefix + "conv2.b"],
                        padding=1))
    t = T.pool2d(t, 2, "max")
    t = T.reshape(t, (n, config.flat_dim()))
    t = T.relu(T.linear(t, params[prefix + "fc.w"], params[prefix + "fc.b"]))
    t = T.linear(t, params[prefix + "out.w"], params[prefix + "out.b"])
    return T.reshape(T.sigmoid(t), (n,))


# -- binary cross-entropy -------------------------------------------------------


def bce_loss(pred: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy; label 1 = bona fide, 0 = spoof."""
    labels = np.asarray(labels, dtype=pred.dtype.type)
    if pred.ndim != 1 or labels.shape != pred.shape:
        raise T.ShapeError(f"pred {pred.shape} and labels {labels.shape} must "
                           f"be matching 1-d arrays")
    y = Tensor(labels, dtype=pred.dtype)
    p = T.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    return -(y * T.log(p) + (1.0 - y) * T.log(1.0 - p)).mean()
