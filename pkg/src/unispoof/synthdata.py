"""Procedural identity-labeled face-like images with ground-truth masks.

Stands in for web-scale face corpora at desk scale: each identity is a
parameter vector (ellipse geometry, skin tone, feature layout, texture),
each variant a seeded pose/lighting jitter of it.  Materialization
writes binary PPM images plus a CSV manifest and is a deterministic
function of (config, seed).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentSpec, sdsc, spsc
from .rng import SeedStream, derive_seed

__all__ = [
    "IdentitySpec", "SplitPlan", "ManifestRecord", "Manifest",
    "VerificationPair", "gen_identity", "render_face", "build_manifest",
    "sample_pairs", "write_ppm", "read_ppm", "write_image", "read_image",
    "MANIFEST_HEADER",
]

MANIFEST_HEADER = ["sample_id", "identity_id", "label", "spoof_kind",
                   "split", "path"]


# -- identity parameters --------------------------------------------------------


@dataclass(frozen=True)
class IdentitySpec:
    """Deterministic appearance parameters for one synthetic identity.

    Geometry is in normalized [0,1] image coordinates; the texture is an
    oriented sinusoid fixed per identity so variants stay recognizable.
    The hair cap and the eye/mouth/skin palette carry most of the
    identity signal, the way hairstyle and complexion dominate
    low-resolution face chips.
    """

    identity_id: int
    face_cy: float
    face_cx: float
    face_ry: float
    face_rx: float
    skin: tuple[float, float, float]
    hair: tuple[float, float, float]
    hair_line: float
    eye_dy: float
    eye_dx: float
    eye_r: float
    eye_shade: float
    mouth_dy: float
    mouth_w: float
    mouth_h: float
    mouth_shade: float
    tex_freq: float
    tex_angle: float
    tex_phase: float
    tex_amp: float


def gen_identity(identity_id: int, global_seed: int) -> IdentitySpec:
    s = SeedStream(derive_seed(global_seed, "identity", identity_id))
    # Skin is drawn as chained channel ratios so every identity stays warm
    # (R > G > B) with floored brightness and saturation; identity signal
    # lives in the ratios, hair, and geometry rather than in overall
    # luminance.  Keeping live faces bright and saturated by construction
    # leaves the dim and desaturated ends free to act as spoof markers.
    skin_r = s.uniform(0.50, 0.95)
    skin_g = skin_r * s.uniform(0.45, 0.95)
    skin_b = skin_g * s.uniform(0.30, 0.80)
    hair_r = s.uniform(0.05, 0.60)
    hair_g = hair_r * s.uniform(0.30, 0.95)
    hair_b = hair_g * s.uniform(0.30, 0.95)
    return IdentitySpec(
        identity_id=identity_id,
        face_cy=s.uniform(0.48, 0.52),
        face_cx=s.uniform(0.48, 0.52),
        face_ry=s.uniform(0.38, 0.54),
        face_rx=s.uniform(0.30, 0.46),
        skin=(skin_r, skin_g, skin_b),
        hair=(hair_r, hair_g, hair_b),
        hair_line=s.uniform(0.35, 0.75),
        eye_dy=s.uniform(-0.20, -0.10),
        eye_dx=s.uniform(0.08, 0.18),
        eye_r=s.uniform(0.025, 0.055),
        eye_shade=s.uniform(0.02, 0.35),
        mouth_dy=s.uniform(0.10, 0.26),
        mouth_w=s.uniform(0.08, 0.20),
        mouth_h=s.uniform(0.02, 0.05),
        mouth_shade=s.uniform(0.05, 0.45),
        tex_freq=s.uniform(5.0, 12.0),
        tex_angle=s.uniform(0.0, math.pi),
        tex_phase=s.uniform(0.0, 2.0 * math.pi),
        tex_amp=s.uniform(0.05, 0.12),
    )


def render_face(spec: IdentitySpec, variation_seed: int,
                size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize one variant; returns (H x W x 3 image, H x W face mask).

    Inputs model pre-cropped, roughly aligned face chips: the face fills
    most of the frame and the background is a muted gray ramp.
    Per-variation jitter moves the head slightly, rescales it, and
    changes the lighting; identity parameters fix everything else.  The
    mask is exactly 1 strictly inside the face ellipse and 0 outside its
    soft edge.
    """
    s = SeedStream(derive_seed(variation_seed, "render"))
    jit_y = s.uniform(-0.02, 0.02)
    jit_x = s.uniform(-0.02, 0.02)
    jit_scale = s.uniform(0.95, 1.05)
    gain = s.uniform(0.90, 1.10)
    bg_a = np.repeat(s.uniform(0.38, 0.42), 3)
    bg_b = np.repeat(s.uniform(0.38, 0.42), 3)
    bg_angle = s.uniform(0.0, 2.0 * math.pi)

    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size),
                         indexing="ij")
    ramp = (yy - 0.5) * math.cos(bg_angle) + (xx - 0.5) * math.sin(bg_angle) + 0.5
    img = bg_a[None, None] + ramp[..., None] * (bg_b - bg_a)[None, None]

    cy, cx = spec.face_cy + jit_y, spec.face_cx + jit_x
    ry, rx = spec.face_ry * jit_scale, spec.face_rx * jit_scale
    d = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
    soft = 0.06
    mask = np.clip((1.0 + soft - d) / soft, 0.0, 1.0)

    wave = np.sin(2 * math.pi * spec.tex_freq
                  * (xx * math.cos(spec.tex_angle) + yy * math.sin(spec.tex_angle))
                  + spec.tex_phase)
    face = np.clip(np.array(spec.skin) * gain, 0, 1)[None, None] \
        + (spec.tex_amp * wave)[..., None]

    hair = yy < cy - spec.hair_line * ry
    face = np.where(hair[..., None],
                    np.clip(np.array(spec.hair) * gain, 0, 1)[None, None], face)
    for side in (-1.0, 1.0):
        eye = np.hypot(yy - (cy + spec.eye_dy), xx - (cx + side * spec.eye_dx))
        face = np.where((eye < spec.eye_r)[..., None], spec.eye_shade * gain, face)
    mouth = np.sqrt(((yy - (cy + spec.mouth_dy)) / spec.mouth_h) ** 2
                    + ((xx - cx) / spec.mouth_w) ** 2)
    face = np.where((mouth < 1.0)[..., None], spec.mouth_shade * gain, face)

    img = img + (face - img) * mask[..., None]
    return np.clip(img, 0.0, 1.0), mask


# -- pixmap I/O -------------------------------------------------------------------


def write_ppm(path: Path | str, img: np.ndarray) -> None:
    """Binary PPM (P6, maxval 255) from a float image in [0,1]."""
    arr = np.clip(np.asarray(img) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"image must be HxWx3, got {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_ppm(path: Path | str) -> np.ndarray:
    """Float image in [0,1] from a binary PPM written by write_ppm."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM file")
    w, h = (int(v) for v in parts[1].split())
    if parts[2] != b"255":
        raise ValueError(f"{path}: expected maxval 255, got {parts[2].decode()}")
    arr = np.frombuffer(parts[3][: w * h * 3], dtype=np.uint8)
    if arr.size != w * h * 3:
        raise ValueError(f"{path}: truncated pixel payload")
    return arr.reshape(h, w, 3).astype(np.float64) / 255.0


def write_image(path: Path | str, img: np.ndarray) -> None:
    """PPM natively; .png via Pillow when available."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image as PilImage
        arr = np.clip(np.asarray(img) * 255.0 + 0.5, 0, 255).astype(np.uint8)
        PilImage.fromarray(arr, mode="RGB").save(path)
    else:
        write_ppm(path, img)


def read_image(path: Path | str) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image as PilImage
        arr = np.asarray(PilImage.open(path).convert("RGB"))
        return arr.astype(np.float64) / 255.0
    return read_ppm(path)


# -- manifest ----------------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    """How identities and variants divide into train/val/test.

    The last `test_identities` ids are held out entirely (identity
    disjointness for verification); the last `val_variants` variants of
    every remaining identity form the validation split.
    """

    test_identities: int = 4
    val_variants: int = 1


@dataclass(frozen=True)
class ManifestRecord:
    sample_id: str
    identity_id: int
    label: str        # "live" | "spoof"
    spoof_kind: str   # "none" | "spsc" | "sdsc"
    split: str        # "train" | "val" | "test"
    path: str         # POSIX-style, relative to the manifest directory

    @property
    def is_live(self) -> bool:
        return self.label == "live"

    @property
    def source_sample_id(self) -> str:
        """For spoof records, the live sample the image was derived from."""
        if self.spoof_kind == "none":
            return self.sample_id
        return self.sample_id.rsplit("_", 1)[0]


@dataclass
class Manifest:
    root: Path
    records: list[ManifestRecord] = field(default_factory=list)

    def select(self, split: str | None = None, label: str | None = None,
               spoof_kind: str | None = None) -> list[ManifestRecord]:
        out = self.records
        if split is not None:
            out = [r for r in out if r.split == split]
        if label is not None:
            out = [r for r in out if r.label == label]
        if spoof_kind is not None:
            out = [r for r in out if r.spoof_kind == spoof_kind]
        return out

    def identities(self, split: str | None = None) -> list[int]:
        return sorted({r.identity_id for r in self.select(split=split)})

    def load_image(self, record: ManifestRecord) -> np.ndarray:
        return read_image(self.root / record.path)

    def save(self, path: Path | str | None = None) -> Path:
        path = Path(path) if path is not None else self.root / "manifest.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(MANIFEST_HEADER)
            for r in self.records:
                writer.writerow([r.sample_id, r.identity_id, r.label,
                                 r.spoof_kind, r.split, r.path])
        return path

    @classmethod
    def load(cls, path: Path | str) -> "Manifest":
        path = Path(path)
        records = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != MANIFEST_HEADER:
                raise ValueError(f"{path}: unexpected manifest header {header}")
            for row in reader:
                records.append(ManifestRecord(
                    sample_id=row[0], identity_id=int(row[1]), label=row[2],
                    spoof_kind=row[3], split=row[4], path=row[5]))
        return cls(root=path.parent, records=records)


@dataclass(frozen=True)
class VerificationPair:
    sample_a: str
    sample_b: str
    genuine: bool


def _split_for(identity: int, variant: int, n_identities: int,
               plan: SplitPlan, per_identity: int) -> str:
    if identity >= n_identities - plan.test_identities:
        return "test"
    if variant >= per_identity - plan.val_variants:
        return "val"
    return "train"


def build_manifest(out_dir: Path | str, n_identities: int = 16,
                   per_identity: int = 8, spoof_ratio: float = 0.5,
                   splits: SplitPlan = SplitPlan(), seed: int = 0,
                   image_size: int = 64,
                   augment_spec: AugmentSpec = AugmentSpec()) -> Manifest:
    """Render the dataset, derive spoofs, write images and the CSV manifest.

    Each identity contributes `per_identity` live variants; a seeded
    `spoof_ratio` fraction of them (alternating SPSC and SDSC in variant
    order, so the two kinds stay balanced per identity) also yields a
    spoof image derived from the same float render and, for SDSC, its
    own ground-truth mask.  Spoofs inherit the source sample's split.
    """
    if n_identities < 2:
        raise ValueError(f"need at least 2 identities, got {n_identities}")
    if not 0.0 <= spoof_ratio <= 1.0:
        raise ValueError(f"spoof ratio {spoof_ratio} outside [0, 1]")
    if splits.test_identities >= n_identities:
        raise ValueError(f"cannot hold out {splits.test_identities} of "
                         f"{n_identities} identities for test")
    if splits.val_variants >= per_identity:
        raise ValueError(f"cannot hold out {splits.val_variants} of "
                         f"{per_identity} variants for validation")

    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)

    n_spoof_per_id = round(spoof_ratio * per_identity)
    records: list[ManifestRecord] = []
    for ident in range(n_identities):
        spec = gen_identity(ident, seed)
        sel = SeedStream(derive_seed(seed, "spoofsel", ident))
        chosen = sel.choice(per_identity, size=n_spoof_per_id, replace=False)
        spoof_kind = {int(v): ("spsc" if rank % 2 == 0 else "sdsc")
                      for rank, v in enumerate(np.sort(chosen))}
        for variant in range(per_identity):
            sample_id = f"i{ident:03d}_v{variant:02d}"
            split = _split_for(ident, variant, n_identities, splits, per_identity)
            img, mask = render_face(spec, derive_seed(seed, "variant", ident, variant),
                                    size=image_size)
            rel = f"images/{sample_id}.ppm"
            write_ppm(out_dir / rel, img)
            records.append(ManifestRecord(sample_id, ident, "live", "none",
                                          split, rel))
            if variant in spoof_kind:
                kind = spoof_kind[variant]
                spoof_seed = derive_seed(seed, "spoof", sample_id)
                if kind == "spsc":
                    spoofed, _branch = spsc(img, augment_spec, spoof_seed)
                else:
                    spoofed = sdsc(img, mask, augment_spec, spoof_seed)
                spoof_id = f"{sample_id}_{kind}"
                rel_spoof = f"images/{spoof_id}.ppm"
                write_ppm(out_dir / rel_spoof, spoofed)
                records.append(ManifestRecord(spoof_id, ident, "spoof", kind,
                                              split, rel_spoof))

    manifest = Manifest(root=out_dir, records=records)
    manifest.save()
    return manifest


def sample_pairs(manifest: Manifest, n_genuine: int, n_impostor: int,
                 seed: int, split: str = "test") -> list[VerificationPair]:
    """Seeded sampling without replacement from the live images of a split."""
    live = manifest.select(split=split, label="live")
    by_id: dict[int, list[str]] = {}
    for r in live:
        by_id.setdefault(r.identity_id, []).append(r.sample_id)

    genuine_pool = [(a, b) for ids in by_id.values()
                    for i, a in enumerate(ids) for b in ids[i + 1:]]
    idents = sorted(by_id)
    impostor_pool = [(a, b)
                     for i, ia in enumerate(idents) for ib in idents[i + 1:]
                     for a in by_id[ia] for b in by_id[ib]]
    if n_genuine > len(genuine_pool):
        raise ValueError(f"requested {n_genuine} genuine pairs, only "
                         f"{len(genuine_pool)} exist in split {split!r}")
    if n_impostor > len(impostor_pool):
        raise ValueError(f"requested {n_impostor} impostor pairs, only "
                         f"{len(impostor_pool)} exist in split {split!r}")

    stream = SeedStream(derive_seed(seed, "pairs"))
    gen_idx = stream.choice(len(genuine_pool), size=n_genuine, replace=False)
    imp_idx = stream.choice(len(impostor_pool), size=n_impostor, replace=False)
    pairs = [VerificationPair(*genuine_pool[i], True) for i in np.sort(gen_idx)]
    pairs += [VerificationPair(*impostor_pool[i], False) for i in np.sort(imp_idx)]
    return pairs
