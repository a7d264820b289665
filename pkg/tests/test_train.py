"""Training loop behavior on a micro model and dataset.

These tests care about the mechanics (determinism, early stopping,
freezing, error paths), not about reaching good metrics; the dataset is
deliberately tiny and epochs few.
"""

import dataclasses

import numpy as np
import pytest

from unispoof.checkpoint import params_hash
from unispoof.evaluate import frm_report, uad_report, verify
from unispoof.metrics import MetricsReport
from unispoof.swin import SwinConfig
from unispoof.synthdata import (Manifest, SplitPlan, VerificationPair,
                                build_manifest)
from unispoof.train import (DivergenceError, TrainConfig, _check_finite,
                            _EarlyStopper, best_tap, sweep_blocks, train_frm,
                            train_uad, worker_count)

MICRO = SwinConfig(image_size=64, patch_size=4, embed_dim=8,
                   depths=(1, 1, 2, 1), num_heads=(1, 2, 4, 4), window_size=4)


@pytest.fixture(scope="module")
def micro_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("micro")
    return build_manifest(root, n_identities=5, per_identity=4,
                          spoof_ratio=0.5,
                          splits=SplitPlan(test_identities=2, val_variants=1),
                          seed=3, image_size=64)


@pytest.fixture(scope="module")
def live_only_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("liveonly")
    return build_manifest(root, n_identities=4, per_identity=4,
                          spoof_ratio=0.0,
                          splits=SplitPlan(test_identities=1, val_variants=1),
                          seed=3, image_size=64)


@pytest.fixture(scope="module")
def frm_ckpt(micro_manifest):
    cfg = TrainConfig(lr=0.01, batch_size=8, max_epochs=2, patience=2, seed=0)
    return train_frm(cfg, micro_manifest, MICRO, embed_dim=16)


# -- config and helpers -----------------------------------------------------------


@pytest.mark.parametrize("kwargs", [
    {"lr": 0.0}, {"lr": -1.0}, {"batch_size": 0}, {"max_epochs": 0},
    {"patience": -1},
])
def test_train_config_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_train_config_dict_round_trip():
    cfg = TrainConfig(lr=0.5, batch_size=3, max_epochs=7, patience=1,
                      seed=9, freeze_backbone=False, tap=4)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_worker_count_parses_env(monkeypatch):
    monkeypatch.delenv("UNISPOOF_THREADS", raising=False)
    assert worker_count() == 0
    monkeypatch.setenv("UNISPOOF_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("UNISPOOF_THREADS", "zorp")
    with pytest.raises(ValueError):
        worker_count()
    monkeypatch.setenv("UNISPOOF_THREADS", "-1")
    with pytest.raises(ValueError):
        worker_count()


def test_early_stopper_patience_zero():
    stop = _EarlyStopper(patience=0)
    assert stop.update(3.0, 0) is True
    assert not stop.should_stop()
    assert stop.update(2.0, 1) is True
    assert stop.update(2.5, 2) is False
    assert stop.should_stop()
    assert stop.best_epoch == 1


def test_early_stopper_counts_consecutive_epochs():
    stop = _EarlyStopper(patience=1)
    stop.update(3.0, 0)
    stop.update(3.5, 1)
    assert not stop.should_stop()
    stop.update(2.0, 2)          # improvement resets the counter
    stop.update(2.1, 3)
    assert not stop.should_stop()
    stop.update(2.2, 4)
    assert stop.should_stop()


# -- train_frm ----------------------------------------------------------------------


def test_frm_checkpoint_layout(frm_ckpt):
    prefixes = {name.split(".", 1)[0] for name in frm_ckpt.params}
    assert prefixes == {"backbone", "frm", "arcface"}
    assert frm_ckpt.config["task"] == "frm"
    assert len(frm_ckpt.config["classes"]) == 3   # one test identity held out
    assert len(frm_ckpt.history["train_loss"]) == 2
    assert len(frm_ckpt.history["val_loss"]) == 2
    assert "best_epoch" in frm_ckpt.history


def test_frm_is_deterministic(micro_manifest, frm_ckpt):
    cfg = TrainConfig(lr=0.01, batch_size=8, max_epochs=2, patience=2, seed=0)
    again = train_frm(cfg, micro_manifest, MICRO, embed_dim=16)
    np.testing.assert_allclose(again.history["train_loss"],
                               frm_ckpt.history["train_loss"], rtol=1e-6)
    assert params_hash(again.params) == params_hash(frm_ckpt.params)


def test_frm_seed_changes_params(micro_manifest, frm_ckpt):
    cfg = TrainConfig(lr=0.01, batch_size=8, max_epochs=2, patience=2, seed=1)
    other = train_frm(cfg, micro_manifest, MICRO, embed_dim=16)
    assert params_hash(other.params) != params_hash(frm_ckpt.params)


def test_frm_needs_two_identities(tmp_path):
    manifest = build_manifest(tmp_path, n_identities=2, per_identity=2,
                              spoof_ratio=0.0,
                              splits=SplitPlan(test_identities=1,
                                               val_variants=1),
                              seed=0, image_size=64)
    cfg = TrainConfig(lr=0.01, batch_size=4, max_epochs=1)
    with pytest.raises(ValueError, match="identities"):
        train_frm(cfg, manifest, MICRO, embed_dim=16)


def test_frm_rejects_unknown_val_identity(micro_manifest):
    records = []
    for rec in micro_manifest.records:
        if rec.split == "val" and rec.label == "live":
            rec = dataclasses.replace(rec, identity_id=99)
        records.append(rec)
    tampered = Manifest(micro_manifest.root, records)
    cfg = TrainConfig(lr=0.01, batch_size=8, max_epochs=1)
    with pytest.raises(ValueError, match="val split"):
        train_frm(cfg, tampered, MICRO, embed_dim=16)


def test_check_finite_guard():
    assert _check_finite(1.5, epoch=0) == 1.5
    with pytest.raises(DivergenceError, match="epoch 3"):
        _check_finite(float("nan"), epoch=3)
    with pytest.raises(DivergenceError):
        _check_finite(float("inf"), epoch=0)


def test_divergence_detected_from_nan_weights(micro_manifest, frm_ckpt):
    """A corrupt backbone makes every loss NaN; training must refuse to
    continue rather than quietly produce a NaN checkpoint."""
    poisoned = dataclasses.replace(
        frm_ckpt, params={k: (np.full_like(v, np.nan)
                              if k.startswith("backbone.") else v)
                          for k, v in frm_ckpt.params.items()})
    cfg = TrainConfig(lr=0.05, batch_size=8, max_epochs=2, tap="final")
    with pytest.raises(DivergenceError, match="epoch 0"):
        with np.errstate(invalid="ignore", over="ignore"):
            train_uad(cfg, poisoned, micro_manifest, window=2)


# -- train_uad ----------------------------------------------------------------------


def test_uad_frozen_backbone_unchanged(micro_manifest, frm_ckpt):
    cfg = TrainConfig(lr=0.05, batch_size=8, max_epochs=2, patience=2,
                      freeze_backbone=True, tap=1)
    ckpt = train_uad(cfg, frm_ckpt, micro_manifest, window=2)
    assert ckpt.config["frozen"] is True
    assert ckpt.config["backbone_hash_before"] == \
        ckpt.config["backbone_hash_after"]
    for name, arr in frm_ckpt.params.items():
        if name.startswith("backbone."):
            np.testing.assert_array_equal(ckpt.params[name], arr)


def test_uad_unfrozen_backbone_moves(micro_manifest, frm_ckpt):
    cfg = TrainConfig(lr=0.05, batch_size=8, max_epochs=1,
                      freeze_backbone=False, tap="final")
    ckpt = train_uad(cfg, frm_ckpt, micro_manifest, window=2)
    assert ckpt.config["frozen"] is False
    assert ckpt.config["backbone_hash_before"] != \
        ckpt.config["backbone_hash_after"]


def test_uad_requires_both_labels(live_only_manifest, frm_ckpt):
    cfg = TrainConfig(lr=0.05, batch_size=8, max_epochs=1, tap="final")
    with pytest.raises(ValueError, match="missing"):
        train_uad(cfg, frm_ckpt, live_only_manifest, window=2)


def test_uad_carries_recognition_heads(micro_manifest, frm_ckpt):
    cfg = TrainConfig(lr=0.05, batch_size=8, max_epochs=1, tap="final")
    ckpt = train_uad(cfg, frm_ckpt, micro_manifest, window=2)
    assert any(n.startswith("frm.") for n in ckpt.params)
    assert any(n.startswith("arcface.") for n in ckpt.params)
    assert ckpt.config["classes"] == frm_ckpt.config["classes"]
    report, scores = frm_report(ckpt, micro_manifest,
                                n_genuine=4, n_impostor=4, seed=0)
    assert report.counts == {"genuine": 4, "impostor": 4}
    assert len(scores) == 8


def test_uad_is_deterministic(micro_manifest, frm_ckpt):
    cfg = TrainConfig(lr=0.05, batch_size=8, max_epochs=2, patience=2, tap=0)
    a = train_uad(cfg, frm_ckpt, micro_manifest, window=2)
    b = train_uad(cfg, frm_ckpt, micro_manifest, window=2)
    assert params_hash(a.params) == params_hash(b.params)
    assert a.history["train_loss"] == b.history["train_loss"]


def test_uad_rejects_out_of_range_tap(micro_manifest, frm_ckpt):
    cfg = TrainConfig(lr=0.05, batch_size=8, max_epochs=1,
                      tap=MICRO.depths[2])
    with pytest.raises(ValueError, match="tap"):
        train_uad(cfg, frm_ckpt, micro_manifest, window=2)


# -- sweep --------------------------------------------------------------------------


def test_sweep_covers_stage3_and_final(micro_manifest, frm_ckpt):
    cfg = TrainConfig(lr=0.05, batch_size=8, max_epochs=1, patience=1)
    results = sweep_blocks(cfg, frm_ckpt, micro_manifest, window=2)
    assert [tap for tap, _ in results] == [0, 1, "final"]
    assert all(isinstance(rep, MetricsReport) for _, rep in results)
    assert best_tap(results) in (0, 1, "final")


def test_sweep_is_deterministic(micro_manifest, frm_ckpt):
    cfg = TrainConfig(lr=0.05, batch_size=8, max_epochs=1, patience=1)
    a = sweep_blocks(cfg, frm_ckpt, micro_manifest, window=2)
    b = sweep_blocks(cfg, frm_ckpt, micro_manifest, window=2)
    assert [(tap, rep.accuracy, rep.eer) for tap, rep in a] == \
        [(tap, rep.accuracy, rep.eer) for tap, rep in b]


def test_sweep_parallel_matches_sequential(micro_manifest, frm_ckpt,
                                           monkeypatch):
    cfg = TrainConfig(lr=0.05, batch_size=8, max_epochs=1, patience=1)
    monkeypatch.delenv("UNISPOOF_THREADS", raising=False)
    seq = sweep_blocks(cfg, frm_ckpt, micro_manifest, window=2)
    monkeypatch.setenv("UNISPOOF_THREADS", "2")
    par = sweep_blocks(cfg, frm_ckpt, micro_manifest, window=2)
    assert [(tap, rep.to_dict()) for tap, rep in seq] == \
        [(tap, rep.to_dict()) for tap, rep in par]


def test_sweep_requires_frozen_backbone(micro_manifest, frm_ckpt):
    cfg = TrainConfig(lr=0.05, batch_size=8, max_epochs=1,
                      freeze_backbone=False)
    with pytest.raises(ValueError, match="freeze"):
        sweep_blocks(cfg, frm_ckpt, micro_manifest, window=2)


def test_best_tap_prefers_earliest_on_ties():
    def rep(acc):
        return MetricsReport(task="spoof-detection", accuracy=acc, eer=0.1,
                             eer_threshold=0.5, decision_threshold=0.5,
                             counts={})
    results = [(0, rep(0.8)), (1, rep(0.8)), ("final", rep(0.7))]
    assert best_tap(results) == 0
    results = [(0, rep(0.7)), (1, rep(0.9)), ("final", rep(0.9))]
    assert best_tap(results) == 1
    with pytest.raises(ValueError):
        best_tap([])


# -- evaluation on trained checkpoints ---------------------------------------------


def test_verify_identical_pair_scores_one(micro_manifest, frm_ckpt):
    rec = micro_manifest.select(split="test", label="live")[0]
    pair = VerificationPair(rec.sample_id, rec.sample_id, True)
    scores = verify(frm_ckpt, [pair], micro_manifest)
    assert abs(scores[0].score - 1.0) < 1e-6


def test_verify_is_symmetric(micro_manifest, frm_ckpt):
    recs = micro_manifest.select(split="test", label="live")
    ab = VerificationPair(recs[0].sample_id, recs[1].sample_id, True)
    ba = VerificationPair(recs[1].sample_id, recs[0].sample_id, True)
    scores = verify(frm_ckpt, [ab, ba], micro_manifest)
    assert abs(scores[0].score - scores[1].score) < 1e-6


def test_verify_rejects_unknown_sample(micro_manifest, frm_ckpt):
    pair = VerificationPair("i999_v00", "i999_v01", True)
    with pytest.raises(ValueError, match="not in the manifest"):
        verify(frm_ckpt, [pair], micro_manifest)


def test_uad_report_fields(micro_manifest, frm_ckpt):
    cfg = TrainConfig(lr=0.05, batch_size=8, max_epochs=1, tap="final")
    ckpt = train_uad(cfg, frm_ckpt, micro_manifest, window=2)
    report, scores = uad_report(ckpt, micro_manifest)
    assert report.task == "spoof-detection"
    assert report.apcer is not None and report.bpcer is not None
    assert 0.0 <= report.accuracy <= 1.0
    assert all(0.0 <= s.score <= 1.0 for s in scores)
    n_test = len(micro_manifest.select(split="test"))
    assert len(scores) == n_test


def test_uad_report_rejects_empty_split(micro_manifest, frm_ckpt):
    cfg = TrainConfig(lr=0.05, batch_size=8, max_epochs=1, tap="final")
    ckpt = train_uad(cfg, frm_ckpt, micro_manifest, window=2)
    with pytest.raises(ValueError, match="split"):
        uad_report(ckpt, micro_manifest, split="nope")
