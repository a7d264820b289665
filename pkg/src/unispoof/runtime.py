"""Shared glue between checkpoints, manifests, and the model stack.

Holds the config (de)serialization used in checkpoint headers and the
batched no-grad forward passes that both training and evaluation need.
Images are mapped from [0,1] to [-1,1] before entering the backbone.
"""

from __future__ import annotations

from dataclasses import asdict

import numpy as np

from . import tensor as T
from .heads import ArcFaceConfig, UadConfig, frm_embed, uad_forward
from .swin import SwinConfig, WindowLayout, build_layouts, encode
from .synthdata import Manifest, ManifestRecord
from .tensor import Tensor

__all__ = [
    "swin_to_dict", "swin_from_dict", "uad_to_dict", "uad_from_dict",
    "arcface_to_dict", "arcface_from_dict", "load_images", "batched",
    "tap_feature", "resolve_tap", "batched_taps", "batched_embeddings",
    "batched_probs",
]

EVAL_BATCH = 32


def swin_to_dict(cfg: SwinConfig) -> dict:
    d = asdict(cfg)
    d["depths"] = list(d["depths"])
    d["num_heads"] = list(d["num_heads"])
    return d


def swin_from_dict(d: dict) -> SwinConfig:
    d = dict(d)
    d["depths"] = tuple(d["depths"])
    d["num_heads"] = tuple(d["num_heads"])
    return SwinConfig(**d)


def uad_to_dict(cfg: UadConfig) -> dict:
    return asdict(cfg)


def uad_from_dict(d: dict) -> UadConfig:
    return UadConfig(**d)


def arcface_to_dict(cfg: ArcFaceConfig) -> dict:
    return asdict(cfg)


def arcface_from_dict(d: dict) -> ArcFaceConfig:
    return ArcFaceConfig(**d)


def load_images(manifest: Manifest, records: list[ManifestRecord],
                dtype=np.float32) -> np.ndarray:
    """(N, H, W, 3) array in [-1, 1] for a list of manifest records."""
    if not records:
        size = 0
        return np.zeros((0, size, size, 3), dtype=dtype)
    imgs = np.stack([manifest.load_image(r) for r in records])
    return (imgs.astype(dtype) * 2.0 - 1.0)


def batched(n: int, batch_size: int):
    for start in range(0, n, batch_size):
        yield slice(start, min(start + batch_size, n))


def resolve_tap(tap, config: SwinConfig) -> int | str:
    """Validate a tap selector: a Stage-3 block index or 'final'."""
    if tap == "final":
        return tap
    if isinstance(tap, (int, np.integer)) and not isinstance(tap, bool):
        if 0 <= int(tap) < config.depths[2]:
            return int(tap)
        raise ValueError(f"tap index {tap} outside [0, {config.depths[2]})")
    raise ValueError(f"tap must be a Stage-3 block index or 'final', got {tap!r}")


def tap_feature(feats, tap):
    return feats.final if tap == "final" else feats.taps[tap]


def tap_shape(config: SwinConfig, tap) -> tuple[int, int, int]:
    return config.final_shape() if tap == "final" else config.tap_shape()


def batched_taps(backbone: dict[str, Tensor], images: np.ndarray,
                 config: SwinConfig, tap,
                 layouts: list[tuple[WindowLayout, WindowLayout]] | None = None,
                 batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Tapped feature maps for a stack of images, computed without grads."""
    layouts = layouts or build_layouts(config)
    out = []
    with T.no_grad():
        for sl in batched(len(images), batch_size):
            feats = encode(backbone, Tensor(images[sl]), config, layouts)
            out.append(tap_feature(feats, tap).data)
    return np.concatenate(out) if out else np.zeros((0,) + tap_shape(config, tap),
                                                    dtype=images.dtype)


def batched_embeddings(backbone: dict[str, Tensor], frm: dict[str, Tensor],
                       images: np.ndarray, config: SwinConfig,
                       layouts=None, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Unit-norm FRM embeddings for a stack of images."""
    layouts = layouts or build_layouts(config)
    out = []
    with T.no_grad():
        for sl in batched(len(images), batch_size):
            feats = encode(backbone, Tensor(images[sl]), config, layouts)
            out.append(frm_embed(frm, feats.final).data)
    return np.concatenate(out)


def batched_probs(uad: dict[str, Tensor], features: np.ndarray,
                  config: UadConfig, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Bona fide probabilities from cached tap features."""
    out = []
    with T.no_grad():
        for sl in batched(len(features), batch_size):
            out.append(uad_forward(uad, Tensor(features[sl]), config).data)
    return np.concatenate(out)
