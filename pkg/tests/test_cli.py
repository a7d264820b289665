"""Command-line behavior: exit codes, config resolution, artifacts."""

import json

import pytest

from unispoof.cli import available_presets, load_preset, main

MICRO_CONFIG = {
    "swin": {"image_size": 64, "patch_size": 4, "embed_dim": 8,
             "depths": [1, 1, 2, 1], "num_heads": [1, 2, 4, 4],
             "window_size": 4},
    "frm_embed_dim": 16,
    "arcface": {"scale": 16.0, "margin": 0.2},
    "uad": {"total_heads": 8, "hi_heads": 4, "window": 2},
    "dataset": {"n_identities": 5, "per_identity": 4, "spoof_ratio": 0.5,
                "image_size": 64, "test_identities": 2, "val_variants": 1,
                "seed": 3},
    "train": {"lr": 0.02, "batch_size": 8, "max_epochs": 2, "patience": 2,
              "seed": 0, "freeze_backbone": True, "tap": "final"},
    "eval": {"n_genuine": 4, "n_impostor": 4},
}


@pytest.fixture(scope="module")
def micro_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "micro.json"
    path.write_text(json.dumps(MICRO_CONFIG))
    return path


@pytest.fixture(scope="module")
def data_dir(micro_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "gen"
    rc = main(["gen-data", "--config", str(micro_config), "--out", str(out),
               "--no-timestamp"])
    assert rc == 0
    return out / "data"


# -- parsing and exit codes ---------------------------------------------------------


def test_no_command_is_usage_error(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_command_is_usage_error(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    assert main(["gen-data", "--frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_missing_data_flag_is_reported(capsys):
    assert main(["train-frm"]) == 1
    assert "--data" in capsys.readouterr().err


def test_unknown_preset_is_reported(capsys, tmp_path):
    rc = main(["gen-data", "--preset", "no-such-preset",
               "--out", str(tmp_path)])
    assert rc == 1
    assert "preset" in capsys.readouterr().err


def test_bad_tap_value_rejected(capsys):
    assert main(["train-uad", "--tap", "sideways"]) == 1


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "COMMAND" in capsys.readouterr().out


def test_presets_ship_with_package():
    names = available_presets()
    assert "swin-desk" in names and "swin-base-paper" in names
    full = load_preset("swin-base-paper")
    assert full["swin"]["embed_dim"] == 128
    assert tuple(full["swin"]["depths"]) == (2, 2, 18, 2)


# -- gen-data -----------------------------------------------------------------------


def test_gen_data_artifacts(data_dir):
    assert (data_dir / "manifest.csv").is_file()
    run_dir = data_dir.parent
    assert (run_dir / "resolved_config.json").is_file()
    report = json.loads((run_dir / "report.json").read_text())
    assert report["records"] == 30
    assert report["schema_version"] == 1
    assert "created" not in report
    resolved = json.loads((run_dir / "resolved_config.json").read_text())
    assert resolved["dataset"]["n_identities"] == 5


def test_gen_data_is_reproducible(micro_config, tmp_path):
    out = tmp_path / "again"
    assert main(["gen-data", "--config", str(micro_config), "--out", str(out),
                 "--no-timestamp"]) == 0
    first = (out / "report.json").read_bytes()
    manifest_first = (out / "data" / "manifest.csv").read_bytes()
    assert main(["gen-data", "--config", str(micro_config), "--out", str(out),
                 "--no-timestamp"]) == 0
    assert (out / "report.json").read_bytes() == first
    assert (out / "data" / "manifest.csv").read_bytes() == manifest_first


def test_seed_flag_overrides_dataset_seed(micro_config, tmp_path):
    out = tmp_path / "seeded"
    assert main(["gen-data", "--config", str(micro_config), "--seed", "11",
                 "--out", str(out), "--no-timestamp"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["seed"] == 11
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["dataset"]["seed"] == 11
    assert resolved["train"]["seed"] == 11


# -- training pipeline --------------------------------------------------------------


@pytest.fixture(scope="module")
def frm_run(micro_config, data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "frm"
    rc = main(["train-frm", "--config", str(micro_config),
               "--data", str(data_dir), "--out", str(out), "--no-timestamp"])
    assert rc == 0
    return out


def test_train_frm_artifacts(frm_run):
    assert (frm_run / "frm.ckpt").is_file()
    assert (frm_run / "scores.csv").is_file()
    report = json.loads((frm_run / "report.json").read_text())
    assert report["command"] == "train-frm"
    assert len(report["history"]["train_loss"]) == 2
    assert 0.0 <= report["metrics"]["eer"] <= 1.0


def test_train_uad_artifacts(micro_config, data_dir, frm_run, tmp_path):
    out = tmp_path / "uad"
    rc = main(["train-uad", "--config", str(micro_config),
               "--data", str(data_dir), "--ckpt", str(frm_run / "frm.ckpt"),
               "--tap", "1", "--out", str(out), "--no-timestamp"])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert report["tap"] == 1
    assert report["frozen"] is True
    assert report["backbone_unchanged"] is True
    assert report["metrics"]["apcer"] is not None
    assert "frm_metrics_after" in report


def test_sweep_blocks_reports_all_taps(micro_config, data_dir, frm_run,
                                       tmp_path):
    out = tmp_path / "sweep"
    rc = main(["sweep-blocks", "--config", str(micro_config),
               "--data", str(data_dir), "--ckpt", str(frm_run / "frm.ckpt"),
               "--out", str(out), "--no-timestamp"])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert [row["tap"] for row in report["rows"]] == [0, 1, "final"]
    assert report["best_tap"] in (0, 1, "final")


def test_verify_command(micro_config, data_dir, frm_run, tmp_path, capsys):
    out = tmp_path / "verify"
    rc = main(["verify", "--config", str(micro_config),
               "--data", str(data_dir), "--ckpt", str(frm_run / "frm.ckpt"),
               "--out", str(out), "--no-timestamp"])
    assert rc == 0
    assert "EER" in capsys.readouterr().out
    assert (out / "scores.csv").is_file()


def test_eval_reports_both_heads(micro_config, data_dir, frm_run, tmp_path):
    uad_out = tmp_path / "uad"
    assert main(["train-uad", "--config", str(micro_config),
                 "--data", str(data_dir),
                 "--ckpt", str(frm_run / "frm.ckpt"),
                 "--out", str(uad_out), "--no-timestamp"]) == 0
    out = tmp_path / "eval"
    rc = main(["eval", "--config", str(micro_config), "--data", str(data_dir),
               "--ckpt", str(uad_out / "uad.ckpt"), "--out", str(out),
               "--no-timestamp"])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert "spoof_metrics" in report
    assert "verification_metrics" in report


def test_missing_checkpoint_is_reported(micro_config, data_dir, tmp_path,
                                        capsys):
    rc = main(["train-uad", "--config", str(micro_config),
               "--data", str(data_dir), "--ckpt", str(tmp_path / "nope.ckpt"),
               "--out", str(tmp_path / "out")])
    assert rc == 1
    assert "checkpoint" in capsys.readouterr().err


# -- other commands -----------------------------------------------------------------


def test_augment_writes_previews(micro_config, tmp_path):
    out = tmp_path / "aug"
    rc = main(["augment", "--config", str(micro_config), "--out", str(out),
               "--no-timestamp"])
    assert rc == 0
    for name in ("original", "color_jitter", "moire", "spsc", "sdsc"):
        assert (out / f"{name}.ppm").is_file()
    report = json.loads((out / "report.json").read_text())
    assert report["spsc_branch"] in ("print", "replay")


def test_count_params_full_model(capsys):
    rc = main(["count-params", "--preset", "swin-base-paper"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "86,743,224" in out
    assert "10,825,728" in out


def test_count_params_report(tmp_path):
    out = tmp_path / "counts"
    rc = main(["count-params", "--preset", "swin-base-paper",
               "--classes", "10572", "--out", str(out), "--no-timestamp"])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert report["table"]["backbone"] == 86743224
    assert report["table"]["arcface_head"] == 10825728
