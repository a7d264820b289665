"""Command-line entry point for reproducible runs.

Every subcommand reads an optional JSON config (starting from a named
preset), applies flag overrides, echoes the resolved config into the run
directory, and writes a machine-readable report with a schema version.
Exit codes: 0 success, 1 validation error (including unknown
subcommands or flags), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from .augment import (AugmentSpec, color_jitter, moire_synthesize, sdsc,
                      soft_ellipse_mask, spsc)
from .checkpoint import load_checkpoint, save_checkpoint
from .evaluate import frm_report, uad_report, verification_report, verify
from .gradsuite import TOLERANCE, run_model_check, run_op_checks
from .heads import UadConfig
from .metrics import SCHEMA_VERSION, save_scores
from .params import count_params
from .rng import derive_seed
from .runtime import swin_from_dict
from .synthdata import (Manifest, SplitPlan, build_manifest, gen_identity,
                        read_image, render_face, sample_pairs, write_ppm)
from .train import (TrainConfig, best_tap, sweep_blocks, train_frm,
                    train_uad)

__all__ = ["main", "dispatch", "load_preset", "available_presets"]

DEFAULT_PRESET = "swin-desk"


# -- config plumbing ---------------------------------------------------------------


def available_presets() -> list[str]:
    pdir = resources.files("unispoof").joinpath("presets")
    return sorted(p.name[:-5] for p in pdir.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    path = resources.files("unispoof").joinpath("presets", f"{name}.json")
    if not path.is_file():
        raise ValueError(f"unknown preset {name!r}; available: "
                         f"{', '.join(available_presets())}")
    return json.loads(path.read_text())


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_config(args) -> dict:
    """Preset, then config file, then flags; later sources win."""
    cfg = load_preset(args.preset)
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise ValueError(f"config file not found: {path}")
        cfg = _deep_merge(cfg, json.loads(path.read_text()))
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
        cfg.setdefault("train", {})["seed"] = args.seed
        cfg.setdefault("dataset", {})["seed"] = args.seed
        if "train_uad" in cfg:
            cfg["train_uad"]["seed"] = args.seed
    if getattr(args, "tap", None) is not None:
        cfg.setdefault("train", {})["tap"] = args.tap
        cfg.setdefault("train_uad", {})["tap"] = args.tap
    if getattr(args, "freeze", None) is not None:
        cfg.setdefault("train", {})["freeze_backbone"] = args.freeze
        cfg.setdefault("train_uad", {})["freeze_backbone"] = args.freeze
    return cfg


def _train_config(cfg: dict, section: str = "train") -> TrainConfig:
    # the spoof head reads "train_uad" when present, inheriting "train"
    merged = dict(cfg.get("train", {}))
    if section != "train":
        merged.update(cfg.get(section, {}))
    try:
        return TrainConfig(**merged)
    except TypeError as exc:
        raise ValueError(f"bad {section} config: {exc}")


def _out_dir(args, command: str) -> Path:
    out = Path(args.out) if args.out else Path("runs") / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(out: Path, cfg: dict) -> None:
    (out / "resolved_config.json").write_text(
        json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _write_report(out: Path, name: str, payload: dict, args) -> Path:
    body = {"schema_version": SCHEMA_VERSION}
    body.update(payload)
    if not args.no_timestamp:
        body["created"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    path = out / f"{name}.json"
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return path


def _load_manifest(args) -> Manifest:
    if not args.data:
        raise ValueError("--data DIR (containing manifest.csv) is required")
    path = Path(args.data) / "manifest.csv"
    if not path.is_file():
        raise ValueError(f"no manifest at {path}; run gen-data first")
    return Manifest.load(path)


def _load_ckpt(args):
    if not args.ckpt:
        raise ValueError("--ckpt PATH is required")
    path = Path(args.ckpt)
    if not path.is_file():
        raise ValueError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _augment_spec(cfg: dict) -> AugmentSpec:
    if "augment" in cfg:
        return AugmentSpec.from_dict(cfg["augment"])
    return AugmentSpec()


# -- subcommands ------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, "gen-data")
    _echo_config(out, cfg)
    ds = cfg["dataset"]
    seed = ds.get("seed", cfg.get("seed", 0))
    manifest = build_manifest(
        out / "data",
        n_identities=ds["n_identities"], per_identity=ds["per_identity"],
        spoof_ratio=ds["spoof_ratio"],
        splits=SplitPlan(ds["test_identities"], ds["val_variants"]),
        seed=seed, image_size=ds["image_size"],
        augment_spec=_augment_spec(cfg))
    counts = {}
    for split in ("train", "val", "test"):
        counts[split] = {
            "live": len(manifest.select(split=split, label="live")),
            "spoof": len(manifest.select(split=split, label="spoof")),
        }
    _write_report(out, "report", {
        "command": "gen-data",
        "manifest": "data/manifest.csv",     # relative to the run dir
        "records": len(manifest.records),
        "counts": counts, "seed": seed}, args)
    print(f"wrote {len(manifest.records)} records to {out / 'data'}")
    return 0


def cmd_augment(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, "augment")
    _echo_config(out, cfg)
    spec = _augment_spec(cfg)
    seed = cfg.get("seed", cfg.get("dataset", {}).get("seed", 0))
    if args.image:
        img = read_image(args.image)
        mask = soft_ellipse_mask(img.shape[0], img.shape[1])
    else:
        ident = gen_identity(0, seed)
        img, mask = render_face(ident, derive_seed(seed, "variant", 0, 0),
                                size=cfg["dataset"]["image_size"])
    outputs = {"original": img}
    outputs["color_jitter"] = color_jitter(img, spec, derive_seed(seed, "demo", "jitter"))
    outputs["moire"] = moire_synthesize(img, spec, derive_seed(seed, "demo", "moire"))
    spoofed, branch = spsc(img, spec, derive_seed(seed, "demo", "spsc"))
    outputs["spsc"] = spoofed
    outputs["sdsc"] = sdsc(img, mask, spec, derive_seed(seed, "demo", "sdsc"))
    files = {}
    for name, image in outputs.items():
        path = out / f"{name}.ppm"
        write_ppm(path, image)
        files[name] = path.name
    _write_report(out, "report", {
        "command": "augment", "seed": seed, "spsc_branch": branch,
        "files": files}, args)
    print(f"wrote {len(files)} images to {out}")
    return 0


def cmd_train_frm(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, "train-frm")
    _echo_config(out, cfg)
    manifest = _load_manifest(args)
    model = swin_from_dict(cfg["swin"])
    tc = _train_config(cfg)
    ckpt = train_frm(tc, manifest, model,
                     embed_dim=cfg["frm_embed_dim"],
                     scale=cfg["arcface"]["scale"],
                     margin=cfg["arcface"]["margin"])
    ckpt_path = save_checkpoint(out / "frm.ckpt", ckpt.params, ckpt.config,
                                ckpt.history)
    ev = cfg.get("eval", {})
    report, scores = frm_report(
        load_checkpoint(ckpt_path), manifest,
        n_genuine=ev.get("n_genuine", 100), n_impostor=ev.get("n_impostor", 100),
        seed=derive_seed(tc.seed, "eval"))
    save_scores(out / "scores.csv", scores)
    _write_report(out, "report", {
        "command": "train-frm", "checkpoint": ckpt_path.name,
        "history": ckpt.history, "metrics": report.to_dict()}, args)
    print(f"final train loss {ckpt.history['train_loss'][-1]:.4f}, "
          f"test EER {report.eer:.4f}")
    return 0


def cmd_train_uad(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, "train-uad")
    _echo_config(out, cfg)
    manifest = _load_manifest(args)
    backbone_ckpt = _load_ckpt(args)
    tc = _train_config(cfg, "train_uad")
    uad_args = cfg.get("uad", {})
    ckpt = train_uad(tc, backbone_ckpt, manifest,
                     total_heads=uad_args.get("total_heads", 8),
                     hi_heads=uad_args.get("hi_heads", 4),
                     window=uad_args.get("window", 2))
    ckpt_path = save_checkpoint(out / "uad.ckpt", ckpt.params, ckpt.config,
                                ckpt.history)
    report, scores = uad_report(ckpt, manifest)
    save_scores(out / "scores.csv", scores)
    payload = {
        "command": "train-uad", "checkpoint": ckpt_path.name,
        "tap": ckpt.config["tap"], "frozen": ckpt.config["frozen"],
        "backbone_unchanged": (ckpt.config["backbone_hash_before"]
                               == ckpt.config["backbone_hash_after"]),
        "history": ckpt.history, "metrics": report.to_dict(),
    }
    # Verification quality after UAD training, for frozen/unfrozen
    # comparisons (unchanged by construction when frozen).
    if any(k.startswith("frm.") for k in ckpt.params):
        ev = cfg.get("eval", {})
        frm_rep, _ = frm_report(ckpt, manifest,
                                n_genuine=ev.get("n_genuine", 100),
                                n_impostor=ev.get("n_impostor", 100),
                                seed=derive_seed(tc.seed, "eval"))
        payload["frm_metrics_after"] = frm_rep.to_dict()
    _write_report(out, "report", payload, args)
    print(f"tap {ckpt.config['tap']}: test accuracy {report.accuracy:.4f}, "
          f"APCER {report.apcer:.4f}, BPCER {report.bpcer:.4f}")
    return 0


def cmd_sweep_blocks(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, "sweep-blocks")
    _echo_config(out, cfg)
    manifest = _load_manifest(args)
    backbone_ckpt = _load_ckpt(args)
    tc = _train_config(cfg, "train_uad")
    uad_args = cfg.get("uad", {})
    results = sweep_blocks(tc, backbone_ckpt, manifest,
                           total_heads=uad_args.get("total_heads", 8),
                           hi_heads=uad_args.get("hi_heads", 4),
                           window=uad_args.get("window", 2))
    rows = [{"tap": tap, **report.to_dict()} for tap, report in results]
    _write_report(out, "report", {
        "command": "sweep-blocks", "rows": rows,
        "best_tap": best_tap(results)}, args)
    for tap, report in results:
        print(f"tap {tap}: accuracy {report.accuracy:.4f}  eer {report.eer:.4f}")
    print(f"best tap: {best_tap(results)}")
    return 0


def cmd_verify(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, "verify")
    _echo_config(out, cfg)
    manifest = _load_manifest(args)
    ckpt = _load_ckpt(args)
    ev = cfg.get("eval", {})
    seed = cfg.get("seed", 0)
    pairs = sample_pairs(manifest, ev.get("n_genuine", 100),
                         ev.get("n_impostor", 100),
                         derive_seed(seed, "verify"))
    scores = verify(ckpt, pairs, manifest)
    save_scores(out / "scores.csv", scores)
    report = verification_report(scores, config={"seed": seed})
    _write_report(out, "report", {"command": "verify",
                                  "metrics": report.to_dict()}, args)
    print(f"EER {report.eer:.4f} at threshold {report.eer_threshold:.4f} "
          f"({len(pairs)} pairs)")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, "eval")
    _echo_config(out, cfg)
    manifest = _load_manifest(args)
    ckpt = _load_ckpt(args)
    payload: dict = {"command": "eval", "task": ckpt.config.get("task")}
    ran = []
    if any(k.startswith("uad.") for k in ckpt.params):
        report, scores = uad_report(ckpt, manifest)
        save_scores(out / "uad_scores.csv", scores)
        payload["spoof_metrics"] = report.to_dict()
        ran.append(f"spoof accuracy {report.accuracy:.4f}")
    if any(k.startswith("frm.") for k in ckpt.params):
        ev = cfg.get("eval", {})
        report, scores = frm_report(ckpt, manifest,
                                    n_genuine=ev.get("n_genuine", 100),
                                    n_impostor=ev.get("n_impostor", 100),
                                    seed=derive_seed(cfg.get("seed", 0), "eval"))
        save_scores(out / "verify_scores.csv", scores)
        payload["verification_metrics"] = report.to_dict()
        ran.append(f"verification EER {report.eer:.4f}")
    if not ran:
        raise ValueError("checkpoint contains neither a UAD nor an FRM head")
    _write_report(out, "report", payload, args)
    print("; ".join(ran))
    return 0


def cmd_gradcheck(args) -> int:
    results = run_op_checks()
    if args.all:
        results["end-to-end-model"] = run_model_check()
    failures = {k: v for k, v in results.items() if v > TOLERANCE}
    for name, err in results.items():
        status = "ok" if err <= TOLERANCE else "FAIL"
        print(f"{name:24s} {err:.3e}  {status}")
    if args.out:
        out = _out_dir(args, "gradcheck")
        _write_report(out, "report", {
            "command": "gradcheck", "tolerance": TOLERANCE,
            "max_relative_error": results,
            "passed": not failures}, args)
    if failures:
        print(f"gradcheck FAILED for: {', '.join(sorted(failures))}",
              file=sys.stderr)
        return 2
    return 0


def cmd_count_params(args) -> int:
    cfg = resolve_config(args)
    model = swin_from_dict(cfg["swin"])
    th, tw, tc = model.tap_shape()
    uad_args = cfg.get("uad", {})
    uad_cfg = UadConfig(tap_height=th, tap_width=tw, tap_channels=tc,
                        total_heads=uad_args.get("total_heads", 8),
                        hi_heads=uad_args.get("hi_heads", 4),
                        window=uad_args.get("window", 2))
    table = count_params(model, num_classes=args.classes,
                         frm_embed_dim=cfg["frm_embed_dim"], uad=uad_cfg)
    for name in ("backbone", "frm_head", "arcface_head", "uad_head", "total"):
        print(f"{name:14s} {table[name]:>12,}")
    if args.out:
        out = _out_dir(args, "count-params")
        _echo_config(out, cfg)
        _write_report(out, "report", {
            "command": "count-params", "classes": args.classes,
            "table": table}, args)
    return 0


# -- argument parsing ----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_tap(value: str):
    if value == "final":
        return value
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"tap must be a block index or 'final', got {value!r}")


def _parse_bool(value: str) -> bool:
    low = value.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {value!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="JSON config overriding the preset")
    common.add_argument("--preset", default=DEFAULT_PRESET,
                        help="named preset to start from (default: %(default)s)")
    common.add_argument("--seed", type=int, default=None,
                        help="override every seed in the config")
    common.add_argument("--out", metavar="DIR", default=None,
                        help="run directory (default: runs/<command>)")
    common.add_argument("--no-timestamp", action="store_true",
                        help="omit timestamps so reports are byte-reproducible")

    parser = _Parser(prog="unispoof",
                     description="Face verification and spoof detection "
                                 "training harness.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen-data", parents=[common],
                       help="render the synthetic dataset and manifest")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("augment", parents=[common],
                       help="write augmentation previews for one image")
    p.add_argument("--image", metavar="PATH",
                   help="input image (default: a rendered sample)")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train-frm", parents=[common],
                       help="train backbone + recognition head (ArcFace)")
    p.add_argument("--data", metavar="DIR", help="dataset directory")
    p.set_defaults(func=cmd_train_frm)

    p = sub.add_parser("train-uad", parents=[common],
                       help="train the spoof head on tapped features")
    p.add_argument("--data", metavar="DIR", help="dataset directory")
    p.add_argument("--ckpt", metavar="PATH", help="backbone checkpoint")
    p.add_argument("--tap", type=_parse_tap, default=None,
                   help="Stage-3 block index or 'final'")
    p.add_argument("--freeze", type=_parse_bool, default=None,
                   metavar="{true,false}", help="freeze the backbone")
    p.set_defaults(func=cmd_train_uad)

    p = sub.add_parser("sweep-blocks", parents=[common],
                       help="train one spoof head per Stage-3 block + final")
    p.add_argument("--data", metavar="DIR", help="dataset directory")
    p.add_argument("--ckpt", metavar="PATH", help="backbone checkpoint")
    p.set_defaults(func=cmd_sweep_blocks)

    p = sub.add_parser("verify", parents=[common],
                       help="score verification pairs with a trained model")
    p.add_argument("--data", metavar="DIR", help="dataset directory")
    p.add_argument("--ckpt", metavar="PATH", help="checkpoint with FRM head")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate whatever heads a checkpoint contains")
    p.add_argument("--data", metavar="DIR", help="dataset directory")
    p.add_argument("--ckpt", metavar="PATH", help="checkpoint to evaluate")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference checks for every op")
    p.add_argument("--all", action="store_true",
                   help="also run the end-to-end model check")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("count-params", parents=[common],
                       help="analytic parameter counts for a preset")
    p.add_argument("--classes", type=int, default=10572,
                   help="ArcFace class count (default: %(default)s)")
    p.set_defaults(func=cmd_count_params)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args) or 0
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def dispatch(argv) -> int:
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
