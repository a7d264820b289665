"""Training loops: face recognition (ArcFace), spoof head, and block sweeps.

Plain SGD throughout; data order is a seeded shuffle per epoch; early
stopping monitors validation loss with configurable patience and
restores the best weights.  Everything is deterministic given (seed,
config, manifest), so reruns produce identical loss curves and
checkpoints.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, params_hash, with_prefix
from .evaluate import uad_report
from .heads import (ArcFaceConfig, UadConfig, arcface_loss, bce_loss,
                    frm_embed, init_arcface, init_frm, init_uad, uad_forward)
from .metrics import MetricsReport
from .rng import SeedStream, derive_seed
from .runtime import (arcface_to_dict, batched_taps, load_images,
                      resolve_tap, swin_from_dict, swin_to_dict, tap_feature,
                      tap_shape, uad_to_dict)
from .swin import SwinConfig, build_layouts, encode, init_backbone
from .synthdata import Manifest
from .tensor import Tensor

__all__ = ["TrainConfig", "DivergenceError", "train_frm", "train_uad",
           "sweep_blocks", "best_tap", "worker_count"]


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 20
    patience: int = 5
    seed: int = 0
    freeze_backbone: bool = True
    tap: int | str = "final"

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 0:
            raise ValueError(f"patience must be >= 0, got {self.patience}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**data)


def worker_count() -> int:
    """Worker cap from UNISPOOF_THREADS; 0 or unset means sequential."""
    raw = os.environ.get("UNISPOOF_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"UNISPOOF_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise ValueError(f"UNISPOOF_THREADS must be >= 0, got {n}")
    return n


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return SeedStream(derive_seed(seed, "epoch", epoch)).permutation(n)


def _check_finite(loss: float, epoch: int) -> float:
    if not np.isfinite(loss):
        raise DivergenceError(f"training diverged (non-finite loss) at "
                              f"epoch {epoch}")
    return loss


def _snapshot(groups) -> list[dict[str, np.ndarray]]:
    return [{k: t.data.copy() for k, t in g.items()} for g in groups]


def _restore(groups, snaps) -> None:
    for g, snap in zip(groups, snaps):
        for k, t in g.items():
            t.data[...] = snap[k]


class _EarlyStopper:
    """Tracks the best monitored loss; `should_stop` after more than
    `patience` consecutive non-improving epochs (patience=0 stops at the
    first one)."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = -1
        self.bad = 0

    def update(self, value: float, epoch: int) -> bool:
        """Returns True when this epoch improved on the best so far."""
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.bad = 0
            return True
        self.bad += 1
        return False

    def should_stop(self) -> bool:
        return self.bad > self.patience


def train_frm(cfg: TrainConfig, manifest: Manifest, model: SwinConfig,
              embed_dim: int = 64, scale: float = 32.0,
              margin: float = 0.5) -> Checkpoint:
    """Train backbone + FRM embedding + ArcFace weights on live images."""
    train_recs = manifest.select(split="train", label="live")
    val_recs = manifest.select(split="val", label="live")
    classes = sorted({r.identity_id for r in train_recs})
    if len(classes) < 2:
        raise ValueError(f"ArcFace training needs at least 2 identities, "
                         f"found {len(classes)} in the train split")
    class_of = {ident: k for k, ident in enumerate(classes)}
    unknown = {r.identity_id for r in val_recs} - set(class_of)
    if unknown:
        raise ValueError(f"val split contains identities missing from "
                         f"train: {sorted(unknown)}")

    x_train = load_images(manifest, train_recs)
    y_train = np.array([class_of[r.identity_id] for r in train_recs])
    x_val = load_images(manifest, val_recs)
    y_val = np.array([class_of[r.identity_id] for r in val_recs])

    arc_cfg = ArcFaceConfig(num_classes=len(classes), embed_dim=embed_dim,
                            scale=scale, margin=margin)
    stream = SeedStream(derive_seed(cfg.seed, "init"))
    backbone = init_backbone(model, stream.child("backbone"))
    frm = init_frm(model.final_shape()[2], stream.child("frm"),
                   embed_dim=embed_dim)
    arc = init_arcface(arc_cfg, stream.child("arcface"))
    trainable = [*backbone.values(), *frm.values(), *arc.values()]
    layouts = build_layouts(model)

    def batch_loss(x: np.ndarray, y: np.ndarray) -> Tensor:
        feats = encode(backbone, Tensor(x), model, layouts)
        emb = frm_embed(frm, feats.final)
        return arcface_loss(emb, y, arc, arc_cfg)

    def eval_loss(x: np.ndarray, y: np.ndarray) -> float:
        total = 0.0
        with T.no_grad():
            for sl in _slices(len(x), cfg.batch_size):
                total += float(batch_loss(x[sl], y[sl]).data) * (sl.stop - sl.start)
        return total / len(x)

    stopper = _EarlyStopper(cfg.patience)
    monitor_val = len(val_recs) > 0
    history: dict = {"train_loss": [], "val_loss": []}
    best_state = _snapshot([backbone, frm, arc])
    for epoch in range(cfg.max_epochs):
        order = _epoch_order(cfg.seed, epoch, len(x_train))
        total = 0.0
        for sl in _slices(len(order), cfg.batch_size):
            idx = order[sl]
            loss = batch_loss(x_train[idx], y_train[idx])
            total += _check_finite(float(loss.data), epoch) * len(idx)
            T.backward(loss)
            T.sgd_step(trainable, cfg.lr)
        history["train_loss"].append(total / len(x_train))
        monitored = eval_loss(x_val, y_val) if monitor_val \
            else history["train_loss"][-1]
        if monitor_val:
            history["val_loss"].append(monitored)
        if stopper.update(monitored, epoch):
            best_state = _snapshot([backbone, frm, arc])
        if stopper.should_stop():
            break
    _restore([backbone, frm, arc], best_state)
    history["best_epoch"] = stopper.best_epoch
    history["stopped_epoch"] = epoch

    params = (with_prefix({k: t.data for k, t in backbone.items()}, "backbone.")
              | with_prefix({k: t.data for k, t in frm.items()}, "frm.")
              | with_prefix({k: t.data for k, t in arc.items()}, "arcface."))
    config = {
        "task": "frm",
        "swin": swin_to_dict(model),
        "train": cfg.to_dict(),
        "frm": {"embed_dim": embed_dim, "in_channels": model.final_shape()[2]},
        "arcface": arcface_to_dict(arc_cfg),
        "classes": {str(ident): k for ident, k in class_of.items()},
    }
    return Checkpoint(params=params, config=config, history=history)


def _slices(n: int, batch: int):
    for start in range(0, n, batch):
        yield slice(start, min(start + batch, n))


def _uad_labels(records) -> np.ndarray:
    return np.array([1.0 if r.label == "live" else 0.0 for r in records],
                    dtype=np.float32)


def train_uad(cfg: TrainConfig, backbone_ckpt: Checkpoint, manifest: Manifest,
              total_heads: int = 8, hi_heads: int = 4,
              window: int = 2) -> Checkpoint:
    """Train the spoof head on tapped features; optionally also the backbone.

    With freeze_backbone the tap features are computed once and the
    backbone weights are asserted unchanged (hash before == after).
    """
    model = swin_from_dict(backbone_ckpt.config["swin"])
    tap = resolve_tap(cfg.tap, model)
    train_recs = manifest.select(split="train")
    val_recs = manifest.select(split="val")
    present = {r.label for r in train_recs}
    if present != {"live", "spoof"}:
        missing = {"live", "spoof"} - present
        raise ValueError(f"train split is missing {sorted(missing)} samples")

    backbone = {name: Tensor(t.data, requires_grad=not cfg.freeze_backbone)
                for name, t in backbone_ckpt.tensors("backbone.").items()}
    hash_before = params_hash(backbone)

    th, tw, tc = tap_shape(model, tap)
    uad_cfg = UadConfig(tap_height=th, tap_width=tw, tap_channels=tc,
                        total_heads=total_heads, hi_heads=hi_heads,
                        window=window)
    uad = init_uad(uad_cfg, SeedStream(derive_seed(cfg.seed, "init", "uad")))
    layouts = build_layouts(model)

    x_train = load_images(manifest, train_recs)
    y_train = _uad_labels(train_recs)
    x_val = load_images(manifest, val_recs)
    y_val = _uad_labels(val_recs)

    if cfg.freeze_backbone:
        f_train = batched_taps(backbone, x_train, model, tap, layouts)
        f_val = batched_taps(backbone, x_val, model, tap, layouts) \
            if len(val_recs) else np.zeros((0, th, tw, tc), dtype=np.float32)
        trainable = list(uad.values())

        def batch_loss(idx):
            probs = uad_forward(uad, Tensor(f_train[idx]), uad_cfg)
            return bce_loss(probs, y_train[idx])

        def eval_loss():
            total = 0.0
            with T.no_grad():
                for sl in _slices(len(f_val), cfg.batch_size):
                    probs = uad_forward(uad, Tensor(f_val[sl]), uad_cfg)
                    total += float(bce_loss(probs, y_val[sl]).data) \
                        * (sl.stop - sl.start)
            return total / len(f_val)
        groups = [uad]
    else:
        trainable = [*backbone.values(), *uad.values()]

        def batch_loss(idx):
            feats = encode(backbone, Tensor(x_train[idx]), model, layouts)
            probs = uad_forward(uad, tap_feature(feats, tap), uad_cfg)
            return bce_loss(probs, y_train[idx])

        def eval_loss():
            total = 0.0
            with T.no_grad():
                for sl in _slices(len(x_val), cfg.batch_size):
                    feats = encode(backbone, Tensor(x_val[sl]), model, layouts)
                    probs = uad_forward(uad, tap_feature(feats, tap), uad_cfg)
                    total += float(bce_loss(probs, y_val[sl]).data) \
                        * (sl.stop - sl.start)
            return total / len(x_val)
        groups = [backbone, uad]

    stopper = _EarlyStopper(cfg.patience)
    monitor_val = len(val_recs) > 0
    history: dict = {"train_loss": [], "val_loss": []}
    best_state = _snapshot(groups)
    for epoch in range(cfg.max_epochs):
        order = _epoch_order(cfg.seed, epoch, len(x_train))
        total = 0.0
        for sl in _slices(len(order), cfg.batch_size):
            idx = order[sl]
            loss = batch_loss(idx)
            total += _check_finite(float(loss.data), epoch) * len(idx)
            T.backward(loss)
            T.sgd_step(trainable, cfg.lr)
        history["train_loss"].append(total / len(x_train))
        monitored = eval_loss() if monitor_val else history["train_loss"][-1]
        if monitor_val:
            history["val_loss"].append(monitored)
        if stopper.update(monitored, epoch):
            best_state = _snapshot(groups)
        if stopper.should_stop():
            break
    _restore(groups, best_state)
    history["best_epoch"] = stopper.best_epoch
    history["stopped_epoch"] = epoch

    hash_after = params_hash(backbone)
    if cfg.freeze_backbone:
        assert hash_after == hash_before, "frozen backbone was modified"

    params = (with_prefix({k: t.data for k, t in backbone.items()}, "backbone.")
              | with_prefix({k: t.data for k, t in uad.items()}, "uad."))
    # Carry the recognition heads through so FRM metrics can be measured
    # after any UAD run (unchanged when frozen, re-scored when not).
    for name, arr in backbone_ckpt.params.items():
        if name.startswith(("frm.", "arcface.")):
            params[name] = arr
    config = {
        "task": "uad",
        "swin": swin_to_dict(model),
        "train": cfg.to_dict(),
        "uad": uad_to_dict(uad_cfg),
        "tap": tap,
        "frozen": cfg.freeze_backbone,
        "backbone_hash_before": hash_before,
        "backbone_hash_after": hash_after,
    }
    for key in ("frm", "arcface", "classes"):
        if key in backbone_ckpt.config:
            config[key] = backbone_ckpt.config[key]
    return Checkpoint(params=params, config=config, history=history)


def _sweep_one(args) -> tuple[int | str, dict]:
    cfg, backbone_ckpt, manifest, tap, heads = args
    run_cfg = replace(cfg, tap=tap, seed=derive_seed(cfg.seed, "tap", str(tap)))
    ckpt = train_uad(run_cfg, backbone_ckpt, manifest,
                     total_heads=heads[0], hi_heads=heads[1], window=heads[2])
    report, _scores = uad_report(ckpt, manifest, split="test")
    return tap, report.to_dict()


def sweep_blocks(cfg: TrainConfig, backbone_ckpt: Checkpoint,
                 manifest: Manifest, total_heads: int = 8, hi_heads: int = 4,
                 window: int = 2) -> list[tuple[int | str, MetricsReport]]:
    """One spoof head per Stage-3 block plus the final tap, identical
    hyperparameters, per-tap derived seeds.  Results are in tap order and
    independent of scheduling."""
    if not cfg.freeze_backbone:
        raise ValueError("sweep_blocks requires freeze_backbone=true")
    model = swin_from_dict(backbone_ckpt.config["swin"])
    taps: list[int | str] = [*range(model.depths[2]), "final"]
    jobs = [(cfg, backbone_ckpt, manifest, tap, (total_heads, hi_heads, window))
            for tap in taps]
    workers = worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_sweep_one, jobs))
    else:
        raw = [_sweep_one(job) for job in jobs]
    return [(tap, MetricsReport.from_dict(rep)) for tap, rep in raw]


def best_tap(results: list[tuple[int | str, MetricsReport]]) -> int | str:
    """Argmax-accuracy tap; ties keep the earliest tap in sweep order."""
    if not results:
        raise ValueError("empty sweep results")
    best = results[0]
    for entry in results[1:]:
        if entry[1].accuracy > best[1].accuracy:
            best = entry
    return best[0]
