"""Spoof-cue augmentations: physical (print/replay) and digital (self-blend).

All operations are pure functions of (inputs, spec, seed).  Each derives
its own named stream from the seed, so calls are bit-identical across
repeats, platforms, and worker schedules.  Images are H x W x 3 float
arrays in [0, 1]; masks are H x W in [0, 1].

Identity-valued parameters (factor exactly 1, shift exactly 0, amplitude
exactly 0) skip their transform entirely, which keeps degenerate specs
bit-exact instead of merely close.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from .rng import SeedStream, derive_seed

__all__ = [
    "AugmentSpec", "color_jitter", "moire_synthesize", "spsc",
    "deform_mask", "sdsc", "rgb_to_hsv", "hsv_to_rgb", "soft_ellipse_mask",
]

# Rec. 601 luma weights, used for contrast and saturation blending
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AugmentSpec:
    """Parameter ranges for every augmentation branch.

    Ranges are inclusive (lo, hi) pairs; scalar fields are maximum
    absolute deviations around the identity.  Hue shifts are in turns
    (1.0 = full circle); frequencies are cycles per pixel.
    """

    brightness: tuple[float, float] = (0.6, 1.4)
    contrast: tuple[float, float] = (0.6, 1.4)
    saturation: tuple[float, float] = (0.6, 1.4)
    hue: float = 0.1
    moire_freq: tuple[float, float] = (0.05, 0.25)
    moire_amplitude: float = 0.15
    moire_phase: tuple[float, float] = (0.0, 2.0 * math.pi)
    sdsc_translate: float = 4.0
    sdsc_resize: tuple[float, float] = (0.9, 1.1)
    sdsc_brightness: tuple[float, float] = (0.8, 1.2)
    sdsc_hue: float = 0.05
    elastic_alpha: float = 8.0
    elastic_sigma: float = 4.0
    mask_blur_sigma: float = 1.5
    mask_translate: float = 2.0
    mask_scale: float = 0.05
    mask_rotate: float = 0.1

    def __post_init__(self):
        for name in ("brightness", "contrast", "saturation", "moire_freq",
                     "moire_phase", "sdsc_resize", "sdsc_brightness"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range ({lo}, {hi}) is not ordered")
        if not 0.0 <= self.moire_amplitude <= 1.0:
            raise ValueError(f"moire amplitude {self.moire_amplitude} "
                             f"outside [0, 1]")
        for name in ("hue", "sdsc_translate", "sdsc_hue", "elastic_alpha",
                     "elastic_sigma", "mask_blur_sigma", "mask_translate",
                     "mask_scale", "mask_rotate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def identity(cls) -> "AugmentSpec":
        """Every transform at its no-op value."""
        return cls(brightness=(1, 1), contrast=(1, 1), saturation=(1, 1),
                   hue=0.0, moire_amplitude=0.0, sdsc_translate=0.0,
                   sdsc_resize=(1, 1), sdsc_brightness=(1, 1), sdsc_hue=0.0,
                   elastic_alpha=0.0, mask_blur_sigma=0.0, mask_translate=0.0,
                   mask_scale=0.0, mask_rotate=0.0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentSpec":
        fields = {k: tuple(v) if isinstance(v, (list, tuple)) else v
                  for k, v in d.items()}
        return cls(**fields)


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must be HxWx3, got {img.shape}")
    return img


def _check_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise ValueError(f"mask must be HxW, got {mask.shape}")
    return mask


# -- colour space --------------------------------------------------------------
# Hexcone model.  Test vectors (RGB -> HSV, hue in turns):
#   (1, 0, 0) -> (0,    1, 1)      (0, 1, 0) -> (1/3, 1, 1)
#   (0, 0, 1) -> (2/3,  1, 1)      (1, 1, 0) -> (1/6, 1, 1)
#   (0.5, 0.5, 0.5) -> (0, 0, 0.5)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    delta = maxc - minc
    sat = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)

    with np.errstate(invalid="ignore", divide="ignore"):
        safe = np.where(delta > 0, delta, 1.0)
        hr = ((g - b) / safe) % 6.0
        hg = (b - r) / safe + 2.0
        hb = (r - g) / safe + 4.0
    hue = np.where(maxc == r, hr, np.where(maxc == g, hg, hb)) / 6.0
    hue = np.where(delta > 0, hue, 0.0)
    return np.stack([hue, sat, maxc], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    sectors = [
        np.stack([v, t, p], axis=-1), np.stack([q, v, p], axis=-1),
        np.stack([p, v, t], axis=-1), np.stack([p, q, v], axis=-1),
        np.stack([t, p, v], axis=-1), np.stack([v, p, q], axis=-1),
    ]
    out = np.zeros_like(hsv)
    for k, sector in enumerate(sectors):
        out += (i == k)[..., None] * sector
    return out


# -- colour jitter --------------------------------------------------------------


def color_jitter(img: np.ndarray, spec: AugmentSpec, seed: int) -> np.ndarray:
    """Brightness, contrast, saturation, then hue rotation; clamped to [0,1].

    One factor per property is drawn in that fixed order, so the draw
    sequence is stable even when some transforms are identity.
    """
    img = _check_image(img)
    stream = SeedStream(derive_seed(seed, "color_jitter"))
    b = stream.uniform(*spec.brightness)
    c = stream.uniform(*spec.contrast)
    s = stream.uniform(*spec.saturation)
    h = stream.uniform(-spec.hue, spec.hue)

    out = img
    if b != 1.0:
        out = out * b
    if c != 1.0:
        mean = float((out @ _LUMA).mean())
        out = mean + c * (out - mean)
    if s != 1.0:
        luma = (out @ _LUMA)[..., None]
        out = luma + s * (out - luma)
    if h != 0.0:
        hsv = rgb_to_hsv(np.clip(out, 0.0, 1.0))
        hsv[..., 0] = (hsv[..., 0] + h) % 1.0
        out = hsv_to_rgb(hsv)
    if out is img:
        return img.copy()
    return np.clip(out, 0.0, 1.0)


# -- moire interference ----------------------------------------------------------


def moire_synthesize(img: np.ndarray, spec: AugmentSpec, seed: int) -> np.ndarray:
    """Additive polar interference pattern, bounded by the spec amplitude.

    p(x, y) = A sin(2 pi f r + phi) sin(2 pi f' theta + phi') around a
    seeded centre, where (r, theta) are polar coordinates in pixels.
    """
    img = _check_image(img)
    if spec.moire_amplitude == 0.0:
        return img.copy()
    h, w = img.shape[:2]
    stream = SeedStream(derive_seed(seed, "moire"))
    cy = stream.uniform(0.0, h - 1.0)
    cx = stream.uniform(0.0, w - 1.0)
    f_r = stream.uniform(*spec.moire_freq)
    f_t = stream.uniform(*spec.moire_freq)
    phi_r = stream.uniform(*spec.moire_phase)
    phi_t = stream.uniform(*spec.moire_phase)

    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    r = np.hypot(yy - cy, xx - cx)
    theta = np.arctan2(yy - cy, xx - cx)
    pattern = spec.moire_amplitude * np.sin(2 * math.pi * f_r * r + phi_r) \
        * np.sin(2 * math.pi * f_t * theta + phi_t)
    return np.clip(img + pattern[..., None], 0.0, 1.0)


# -- physical spoof cue -----------------------------------------------------------


def spsc(img: np.ndarray, spec: AugmentSpec, seed: int) -> tuple[np.ndarray, str]:
    """Fair seeded choice between the print cue (jitter) and replay cue (moire).

    Returns (image, branch tag); the branch output is exactly what calling
    that branch directly with derive_seed(seed, tag) would produce.
    """
    img = _check_image(img)
    stream = SeedStream(derive_seed(seed, "spsc"))
    branch = "print" if stream.uniform() < 0.5 else "replay"
    sub_seed = derive_seed(seed, branch)
    if branch == "print":
        return color_jitter(img, spec, sub_seed), branch
    return moire_synthesize(img, spec, sub_seed), branch


# -- mask deformation --------------------------------------------------------------


def _affine_sample_coords(h: int, w: int, ty: float, tx: float,
                          scale: float, rot: float) -> tuple[np.ndarray, np.ndarray]:
    """Source coordinates that realize translate/scale/rotate about the centre."""
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    dy = yy - cy - ty
    dx = xx - cx - tx
    cosr, sinr = math.cos(-rot), math.sin(-rot)
    sy = (cosr * dy - sinr * dx) / scale + cy
    sx = (sinr * dy + cosr * dx) / scale + cx
    return sy, sx


def deform_mask(mask: np.ndarray, spec: AugmentSpec, seed: int) -> np.ndarray:
    """Affine jitter, then elastic displacement, then Gaussian blur.

    Resampling is bilinear with edge replication, so constant masks stay
    constant.  Draw order: ty, tx, scale, rotation, elastic dy, elastic dx.
    """
    mask = _check_mask(mask)
    h, w = mask.shape
    stream = SeedStream(derive_seed(seed, "deform_mask"))
    ty = stream.uniform(-spec.mask_translate, spec.mask_translate)
    tx = stream.uniform(-spec.mask_translate, spec.mask_translate)
    scale = stream.uniform(1.0 - spec.mask_scale, 1.0 + spec.mask_scale)
    rot = stream.uniform(-spec.mask_rotate, spec.mask_rotate)

    out = mask
    if (ty, tx, scale, rot) != (0.0, 0.0, 1.0, 0.0):
        sy, sx = _affine_sample_coords(h, w, ty, tx, scale, rot)
        out = map_coordinates(out, [sy, sx], order=1, mode="nearest")

    if spec.elastic_alpha > 0:
        field_y = stream.uniform(-1.0, 1.0, size=(h, w))
        field_x = stream.uniform(-1.0, 1.0, size=(h, w))
        dy = spec.elastic_alpha * gaussian_filter(field_y, spec.elastic_sigma)
        dx = spec.elastic_alpha * gaussian_filter(field_x, spec.elastic_sigma)
        yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
        out = map_coordinates(out, [yy + dy, xx + dx], order=1, mode="nearest")

    if spec.mask_blur_sigma > 0:
        out = gaussian_filter(out, spec.mask_blur_sigma, mode="nearest")

    if out is mask:
        return mask.copy()
    return np.clip(out, 0.0, 1.0)


# -- digital spoof cue ---------------------------------------------------------------


def sdsc(img: np.ndarray, mask: np.ndarray, spec: AugmentSpec, seed: int,
         return_parts: bool = False):
    """Self-blend forgery: jittered, shifted copy composited through the mask.

    Three steps: (1) duplicate the image into a pseudo-source (colour
    jitter plus resize/translate) and an untouched pseudo-target; (2)
    deform the face mask; (3) per-pixel convex blend M*source +
    (1-M)*target.  With `return_parts`, also returns the source, target,
    and deformed mask for inspection.
    """
    img = _check_image(img)
    mask = _check_mask(mask)
    if mask.shape != img.shape[:2]:
        raise ValueError(f"mask {mask.shape} does not match image "
                         f"{img.shape[:2]}")
    h, w = mask.shape
    stream = SeedStream(derive_seed(seed, "sdsc"))

    jitter_spec = replace(AugmentSpec.identity(),
                          brightness=spec.sdsc_brightness, hue=spec.sdsc_hue)
    source = color_jitter(img, jitter_spec, derive_seed(seed, "sdsc", "jitter"))

    ty = stream.uniform(-spec.sdsc_translate, spec.sdsc_translate)
    tx = stream.uniform(-spec.sdsc_translate, spec.sdsc_translate)
    resize = stream.uniform(*spec.sdsc_resize)
    if (ty, tx, resize) != (0.0, 0.0, 1.0):
        sy, sx = _affine_sample_coords(h, w, ty, tx, resize, 0.0)
        source = np.stack([map_coordinates(source[..., ch], [sy, sx],
                                           order=1, mode="nearest")
                           for ch in range(3)], axis=-1)
        source = np.clip(source, 0.0, 1.0)

    blend = deform_mask(mask, spec, derive_seed(seed, "sdsc", "mask"))
    m3 = blend[..., None]
    out = np.clip(m3 * source + (1.0 - m3) * img, 0.0, 1.0)
    if return_parts:
        return out, {"source": source, "target": img.copy(), "mask": blend}
    return out


# -- fallback mask --------------------------------------------------------------------


def soft_ellipse_mask(height: int, width: int, margin: float = 0.12,
                      softness: float = 0.08) -> np.ndarray:
    """Centered soft-edged ellipse, the fallback when no mask is available."""
    yy, xx = np.meshgrid(np.linspace(-1, 1, height), np.linspace(-1, 1, width),
                         indexing="ij")
    r = 1.0 - margin
    d = np.sqrt((yy / r) ** 2 + (xx / r) ** 2)
    if softness <= 0:
        return (d <= 1.0).astype(np.float64)
    return np.clip((1.0 + softness - d) / softness, 0.0, 1.0)
