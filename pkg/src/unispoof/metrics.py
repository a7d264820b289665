"""Biometric evaluation: EER, APCER/BPCER, score files, metric reports.

Decision convention: higher score means more genuine (verification) or
more bona fide (spoof detection).  APCER/BPCER follow the ISO 30107-3
definitions; accuracy is the plain fraction of correct decisions.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "SCHEMA_VERSION", "ScoreRecord", "MetricsReport", "compute_eer",
    "compute_apcer_bpcer", "verification_metrics", "spoof_metrics",
    "save_scores", "load_scores",
]

SCHEMA_VERSION = 1

SCORE_HEADER = ["pair_or_sample_id", "score", "label"]


@dataclass(frozen=True)
class ScoreRecord:
    """One scored pair or sample; label names its ground-truth class."""

    pair_or_sample_id: str
    score: float
    label: str


def save_scores(path: Path | str, records: list[ScoreRecord]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_HEADER)
        for r in records:
            writer.writerow([r.pair_or_sample_id, repr(r.score), r.label])
    return path


def load_scores(path: Path | str) -> list[ScoreRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != SCORE_HEADER:
            raise ValueError(f"{path}: unexpected score header {header}")
        return [ScoreRecord(row[0], float(row[1]), row[2]) for row in reader]


def compute_eer(genuine, impostor) -> tuple[float, float]:
    """Equal error rate and its operating threshold.

    Candidate thresholds are the midpoints of consecutive sorted unique
    scores; FAR is the fraction of impostor scores >= t, FRR the
    fraction of genuine scores < t.  Returns (FAR+FRR)/2 at the
    threshold minimizing |FAR-FRR|, ties broken toward the lower
    threshold.
    """
    g = np.asarray(genuine, dtype=np.float64).ravel()
    i = np.asarray(impostor, dtype=np.float64).ravel()
    if g.size == 0 or i.size == 0:
        raise ValueError("compute_eer needs non-empty genuine and impostor scores")
    uniq = np.unique(np.concatenate([g, i]))
    if uniq.size >= 2:
        candidates = (uniq[:-1] + uniq[1:]) / 2.0
    else:
        # One distinct score: every threshold gives the same degenerate
        # split, so report at the score itself.
        candidates = uniq
    far = (i[None, :] >= candidates[:, None]).mean(axis=1)
    frr = (g[None, :] < candidates[:, None]).mean(axis=1)
    k = int(np.argmin(np.abs(far - frr)))  # first minimum = lowest threshold
    return float((far[k] + frr[k]) / 2.0), float(candidates[k])


def compute_apcer_bpcer(attack, bona_fide,
                        threshold: float = 0.5) -> tuple[float, float, float]:
    """(APCER, BPCER, accuracy) at a decision threshold.

    A sample is called bona fide iff its score >= threshold.  APCER is
    the fraction of attacks accepted as bona fide, BPCER the fraction
    of bona fide samples rejected.
    """
    a = np.asarray(attack, dtype=np.float64).ravel()
    b = np.asarray(bona_fide, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("compute_apcer_bpcer needs both attack and bona fide scores")
    apcer = float((a >= threshold).mean())
    bpcer = float((b < threshold).mean())
    correct = int((a < threshold).sum() + (b >= threshold).sum())
    return apcer, bpcer, correct / (a.size + b.size)


@dataclass
class MetricsReport:
    """Evaluation summary serialized into run reports.

    `accuracy`, `apcer`, and `bpcer` are measured at
    `decision_threshold`; `eer_threshold` is reported alongside so the
    EER operating point is also available.
    """

    task: str
    accuracy: float
    eer: float
    eer_threshold: float
    decision_threshold: float
    counts: dict[str, int]
    apcer: float | None = None
    bpcer: float | None = None
    config: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(**data)


def verification_metrics(genuine, impostor, config: dict | None = None) -> MetricsReport:
    """Face-verification report; accuracy is measured at the EER threshold
    since no external decision threshold is defined for cosine scores."""
    eer, thr = compute_eer(genuine, impostor)
    g = np.asarray(genuine, dtype=np.float64)
    i = np.asarray(impostor, dtype=np.float64)
    correct = int((g >= thr).sum() + (i < thr).sum())
    return MetricsReport(
        task="verification",
        accuracy=correct / (g.size + i.size),
        eer=eer,
        eer_threshold=thr,
        decision_threshold=thr,
        counts={"genuine": int(g.size), "impostor": int(i.size)},
        config=dict(config or {}),
    )


def spoof_metrics(bona_fide, attack, config: dict | None = None,
                  threshold: float = 0.5) -> MetricsReport:
    eer, eer_thr = compute_eer(bona_fide, attack)
    apcer, bpcer, accuracy = compute_apcer_bpcer(attack, bona_fide, threshold)
    return MetricsReport(
        task="spoof-detection",
        accuracy=accuracy,
        eer=eer,
        eer_threshold=eer_thr,
        decision_threshold=threshold,
        counts={"bona_fide": int(np.asarray(bona_fide).size),
                "attack": int(np.asarray(attack).size)},
        apcer=apcer,
        bpcer=bpcer,
        config=dict(config or {}),
    )
