"""Scoring trained checkpoints: verification cosines and spoof probabilities."""

from __future__ import annotations

import numpy as np

from .checkpoint import Checkpoint, strip_prefix
from .metrics import (MetricsReport, ScoreRecord, spoof_metrics,
                      verification_metrics)
from .runtime import (batched_embeddings, batched_probs, batched_taps,
                      load_images, swin_from_dict, uad_from_dict)
from .synthdata import Manifest, VerificationPair, sample_pairs
from .tensor import Tensor

__all__ = [
    "verify", "uad_scores", "verification_report", "spoof_report",
    "frm_report", "uad_report",
]


def _component(ckpt: Checkpoint, prefix: str, what: str) -> dict[str, Tensor]:
    sub = strip_prefix(ckpt.params, prefix)
    if not sub:
        raise ValueError(f"checkpoint does not contain {what}")
    return {name: Tensor(arr) for name, arr in sub.items()}


def verify(ckpt: Checkpoint, pairs: list[VerificationPair],
           manifest: Manifest) -> list[ScoreRecord]:
    """Cosine similarity of unit embeddings for each verification pair."""
    swin = swin_from_dict(ckpt.config["swin"])
    backbone = _component(ckpt, "backbone.", "a backbone")
    frm = _component(ckpt, "frm.", "an FRM head")

    wanted = sorted({p.sample_a for p in pairs} | {p.sample_b for p in pairs})
    by_id = {r.sample_id: r for r in manifest.records}
    missing = [s for s in wanted if s not in by_id]
    if missing:
        raise ValueError(f"pairs reference samples not in the manifest: "
                         f"{missing[:4]}")
    images = load_images(manifest, [by_id[s] for s in wanted])
    emb = batched_embeddings(backbone, frm, images, swin)
    index = {sid: k for k, sid in enumerate(wanted)}
    return [
        ScoreRecord(f"{p.sample_a}:{p.sample_b}",
                    float(emb[index[p.sample_a]] @ emb[index[p.sample_b]]),
                    "genuine" if p.genuine else "impostor")
        for p in pairs
    ]


def uad_scores(ckpt: Checkpoint, manifest: Manifest,
               split: str = "test") -> list[ScoreRecord]:
    """Bona fide probability for every sample of a split."""
    swin = swin_from_dict(ckpt.config["swin"])
    uad_cfg = uad_from_dict(ckpt.config["uad"])
    tap = ckpt.config["tap"]
    backbone = _component(ckpt, "backbone.", "a backbone")
    uad = _component(ckpt, "uad.", "a UAD head")
    records = manifest.select(split=split)
    if not records:
        raise ValueError(f"manifest has no records in split {split!r}")
    images = load_images(manifest, records)
    feats = batched_taps(backbone, images, swin, tap)
    probs = batched_probs(uad, feats, uad_cfg)
    return [ScoreRecord(r.sample_id, float(p), r.label)
            for r, p in zip(records, probs)]


def verification_report(scores: list[ScoreRecord],
                        config: dict | None = None) -> MetricsReport:
    genuine = [s.score for s in scores if s.label == "genuine"]
    impostor = [s.score for s in scores if s.label == "impostor"]
    return verification_metrics(genuine, impostor, config)


def spoof_report(scores: list[ScoreRecord], config: dict | None = None,
                 threshold: float = 0.5) -> MetricsReport:
    bona = [s.score for s in scores if s.label == "live"]
    attack = [s.score for s in scores if s.label == "spoof"]
    return spoof_metrics(bona, attack, config, threshold)


def frm_report(ckpt: Checkpoint, manifest: Manifest, n_genuine: int = 100,
               n_impostor: int = 100, seed: int = 0, split: str = "test",
               ) -> tuple[MetricsReport, list[ScoreRecord]]:
    """End-to-end verification evaluation on sampled pairs of a split."""
    pairs = sample_pairs(manifest, n_genuine, n_impostor, seed, split=split)
    scores = verify(ckpt, pairs, manifest)
    report = verification_report(scores, config={
        "split": split, "seed": seed,
        "n_genuine": n_genuine, "n_impostor": n_impostor})
    return report, scores


def uad_report(ckpt: Checkpoint, manifest: Manifest, split: str = "test",
               threshold: float = 0.5) -> tuple[MetricsReport, list[ScoreRecord]]:
    scores = uad_scores(ckpt, manifest, split=split)
    report = spoof_report(scores, config={"split": split,
                                          "tap": ckpt.config.get("tap")},
                          threshold=threshold)
    return report, scores
