"""Command-line surface tying the pipeline stages together.

Subcommands: scene-gen, train-depth, train-diffusion, finetune-reward,
enhance, evaluate, ablate.  Any contract violation exits nonzero with a
single-line machine-parsable error, and outputs created by the failed run
are removed.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .datasets import load_corpus, load_png, read_manifest, save_png
from .enhancer import LowLightEnhancer
from .experiments import (
    ABLATION_KEYS,
    VARIANTS,
    ensure_nss,
    ensure_probe,
    run_protocol,
)
from .metrics import evaluate_run, save_report_plots
from .scene import Annotation


class CliError(ValueError):
    """User-facing contract violation."""


class _Outputs:
    """Tracks paths created by a command so failures leave nothing behind."""

    def __init__(self) -> None:
        self.paths: list[Path] = []

    def track(self, path: str | Path) -> Path:
        path = Path(path)
        if not path.exists():
            self.paths.append(path)
        return path

    def cleanup(self) -> None:
        for path in reversed(self.paths):
            if path.is_dir():
                shutil.rmtree(path, ignore_errors=True)
            elif path.exists():
                path.unlink()


def _load_config(path: str | None) -> dict:
    if path is None:
        return cfgmod.default_config()
    return cfgmod.load_config(path)


def _progress(message: str) -> None:
    print(message, flush=True)


# ---------------------------------------------------------------------------
# subcommand implementations

def cmd_scene_gen(args, outputs: _Outputs) -> None:
    cfg = _load_config(args.config)
    if args.count is not None:
        cfg["scene"]["count"] = args.count
    if args.size is not None:
        cfg["scene"]["image_size"] = args.size
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfgmod.validate_config(cfg)
    out = outputs.track(args.out)
    from .datasets import generate_dataset

    manifest = generate_dataset(
        out,
        cfg["scene"]["count"],
        cfg["seed"],
        cfgmod.build_scene_spec(cfg),
        cfgmod.build_camera(cfg),
        cfgmod.build_lidar(cfg),
        with_night=args.with_night,
        degrade_ranges=cfgmod.build_ranges(cfg),
    )
    print(f"wrote {cfg['scene']['count']} scenes to {manifest}")


def cmd_train_depth(args, outputs: _Outputs) -> None:
    cfg = _load_config(args.config)
    samples, _ = load_corpus(args.data)
    reg = cfgmod.build_depth_regressor(cfg)
    out = outputs.track(args.out)
    reg.fit(samples, degrade_ranges=cfgmod.build_ranges(cfg))
    reg.save_weights(out, config_hash=cfgmod.config_hash(cfg))
    final = float(np.mean(reg.loss_history_[-20:]))
    print(f"depth net trained ({reg.steps} steps, final loss {final:.5f}) -> {out}")


def _check_hash(stored: str | None, cfg: dict, what: str) -> None:
    expected = cfgmod.config_hash(cfg)
    if stored is not None and stored != expected:
        print(f"warning: {what} was produced under a different config", file=sys.stderr)


def cmd_train_diffusion(args, outputs: _Outputs) -> None:
    cfg = _load_config(args.config)
    samples, _ = load_corpus(args.data)
    depth = cfgmod.build_depth_regressor(cfg).load_weights(args.depth)
    _check_hash(LowLightEnhancer.stored_config_hash(args.depth), cfg, "depth checkpoint")
    enhancer = cfgmod.build_enhancer(cfg, depth_model=depth)
    log_path = Path(args.log) if args.log else Path(args.out).with_suffix(".log.jsonl")
    log_fn = _make_logger(log_path)
    out_path = Path(args.out)
    if args.resume and out_path.exists():
        enhancer.load_weights(out_path)
        enhancer.resume_fit(samples, log_fn=log_fn)
    else:
        outputs.track(out_path)
        outputs.track(log_path)
        enhancer.fit(samples, log_fn=log_fn)
    enhancer.save_weights(out_path, config_hash=cfgmod.config_hash(cfg))
    print(
        f"diffusion trained (base {enhancer.base_step_}, control {enhancer.control_step_}) -> {out_path}"
    )


def cmd_finetune_reward(args, outputs: _Outputs) -> None:
    cfg = _load_config(args.config)
    samples, _ = load_corpus(args.data)
    depth = cfgmod.build_depth_regressor(cfg).load_weights(args.depth)
    enhancer = cfgmod.build_enhancer(cfg, depth_model=depth)
    enhancer.load_weights(args.model)
    _check_hash(LowLightEnhancer.stored_config_hash(args.model), cfg, "model checkpoint")
    if not hasattr(enhancer, "branch_") or enhancer.branch_ is None:
        raise CliError("checkpoint has no control branch; run train-diffusion first")
    log_path = Path(args.log) if args.log else Path(args.out).with_suffix(".log.jsonl")
    out_path = Path(args.out)
    if not (args.resume and out_path.exists()):
        outputs.track(out_path)
        outputs.track(log_path)
    else:
        enhancer.load_weights(out_path)
    enhancer.finetune(samples, log_fn=_make_logger(log_path))
    enhancer.save_weights(out_path, config_hash=cfgmod.config_hash(cfg))
    print(f"reward fine-tuning done ({enhancer.finetune_step_} steps) -> {out_path}")


def _make_logger(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)

    def log_fn(row: dict) -> None:
        with open(path, "a", encoding="utf-8") as f:
            f.write(json.dumps(row, sort_keys=True) + "\n")

    return log_fn


def _load_night_inputs(source: str) -> tuple[list[str], np.ndarray]:
    path = Path(source)
    if path.suffix == ".jsonl":
        records = read_manifest(path)
        root = path.parent
        names, images = [], []
        for rec in records:
            if rec.night_path is None:
                raise CliError(f"record {rec.id} has no materialized night image")
            names.append(f"{rec.id:05d}")
            images.append(load_png(root / rec.night_path))
        return names, np.stack(images)
    if path.is_dir():
        files = sorted(path.glob("*.png"))
        if not files:
            raise CliError(f"no PNG files in {path}")
        return [f.stem for f in files], np.stack([load_png(f) for f in files])
    raise CliError(f"--input must be a manifest or a directory, got {source}")


def cmd_enhance(args, outputs: _Outputs) -> None:
    cfg = _load_config(args.config)
    depth = cfgmod.build_depth_regressor(cfg).load_weights(args.depth)
    captioner = None
    if args.probe:
        probe = cfgmod.build_probe(cfg).load_weights(args.probe)
        from .captions import caption_from_presence

        captioner = lambda img: caption_from_presence(probe.present_classes(img))
    enhancer = cfgmod.build_enhancer(cfg, depth_model=depth, captioner=captioner)
    if args.max_iters is not None:
        enhancer.max_iters = args.max_iters
    enhancer.load_weights(args.model)
    _check_hash(LowLightEnhancer.stored_config_hash(args.model), cfg, "model checkpoint")

    names, nights = _load_night_inputs(args.input)
    out_dir = outputs.track(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    enhanced, traces = enhancer.transform_with_traces(nights)
    summary = {"config_hash": cfgmod.config_hash(cfg), "images": []}
    for name, img, trace in zip(names, enhanced, traces):
        save_png(out_dir / f"{name}_enhanced.png", img)
        summary["images"].append(
            {"name": name, "iterations": len(trace.records), "differences": trace.differences}
        )
        if args.trace_dir:
            trace_dir = Path(args.trace_dir)
            trace_dir.mkdir(parents=True, exist_ok=True)
            for i, rec in enumerate(trace.records):
                save_png(trace_dir / f"{name}_iter{i + 1}.png", rec.image_out)
    (out_dir / "enhance_summary.json").write_text(json.dumps(summary, sort_keys=True))
    print(f"enhanced {len(names)} images -> {out_dir}")


def _labels_from_records(records) -> np.ndarray:
    from .metrics import presence_labels

    class _Shim:
        def __init__(self, rec):
            self.annotations = [Annotation.from_dict(a) for a in rec.annotations]

    return presence_labels([_Shim(r) for r in records])


def cmd_evaluate(args, outputs: _Outputs) -> None:
    cfg = _load_config(args.config)
    chash = cfgmod.config_hash(cfg)
    records = read_manifest(args.data)
    root = Path(args.data).parent
    nights, clean = [], []
    for rec in records:
        if rec.night_path is None:
            raise CliError(f"record {rec.id} has no materialized night image")
        nights.append(load_png(root / rec.night_path))
        clean.append(load_png(root / rec.rgb_path))
    labels = _labels_from_records(records)

    enhanced_dir = Path(args.enhanced)
    summary_path = enhanced_dir / "enhance_summary.json"
    if summary_path.exists():
        stored = json.loads(summary_path.read_text()).get("config_hash")
        if stored != chash and not args.allow_hash_mismatch:
            raise CliError(
                "enhanced images were produced under a different config "
                f"({stored[:12] if stored else 'unknown'} != {chash[:12]}); "
                "pass --allow-hash-mismatch to override"
            )
    files = sorted(p for p in enhanced_dir.glob("*.png"))
    if len(files) != len(records):
        raise CliError(f"{len(files)} enhanced images for {len(records)} records")
    enhanced = [load_png(f) for f in files]

    train_samples, _ = load_corpus(args.train_data)
    cache_dir = Path(args.train_data).parent
    probe = ensure_probe(cfg, cfg["seed"], train_samples, cache_dir / f"probe_{chash[:12]}.ldck")
    nss = ensure_nss(cfg, train_samples, cache_dir / f"nss_{chash[:12]}.ldck")

    report = evaluate_run(nights, enhanced, clean, labels, probe, nss)
    report["config_hash"] = chash
    out = outputs.track(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if args.plots:
        save_report_plots(report, out.with_suffix(".png"))
    for name, row in report["columns"].items():
        print(
            f"{name:>9}: probe_acc {row['probe_accuracy']:.3f}  nss {row['nss_distance']:.2f}  "
            f"luma {row['mean_luma']:.3f}"
        )
    print(f"report -> {out}")


def cmd_ablate(args, outputs: _Outputs) -> None:
    cfg = _load_config(args.config)
    variant_keys = tuple(args.disable) if args.disable else ABLATION_KEYS
    for key in variant_keys:
        if key not in VARIANTS or key == "full":
            raise CliError(f"unknown ablation {key!r}; choose from {sorted(set(VARIANTS) - {'full'})}")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg["seed"]]
    workdir = Path(args.workdir)
    summary = run_protocol(cfg, workdir, seeds, variant_keys, progress=_progress)
    rows = []
    for key in ["full", *variant_keys]:
        agg = summary["variants"][key]
        rows.append(
            {
                "label": agg["label"],
                "composite": agg["composite_mean"],
                "probe_accuracy": agg["enhanced_probe_accuracy"],
                "nss_distance": agg["enhanced_nss_distance"],
            }
        )
    report = {"config_hash": summary["config_hash"], "seeds": summary["seeds"], "rows": rows}
    report_path = workdir / "report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    for row in rows:
        print(
            f"{row['label']:>16}: composite {row['composite']:+.3f}  "
            f"probe_acc {row['probe_accuracy']:.3f}  nss {row['nss_distance']:.2f}"
        )
    print(f"report -> {report_path}")


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nightlift",
        description="Desk-scale low-light enhancement with a multi-condition diffusion model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scene-gen", help="render a synthetic scene dataset")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--out", default="dataset", help="output dataset directory")
    p.add_argument("--count", type=int, help="number of scenes (overrides config)")
    p.add_argument("--size", type=int, help="image size (overrides config)")
    p.add_argument("--seed", type=int, help="global seed (overrides config)")
    p.add_argument("--with-night", action="store_true", help="also materialize night images")
    p.set_defaults(fn=cmd_scene_gen)

    p = sub.add_parser("train-depth", help="fit the sparse-LiDAR depth net")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="training manifest.jsonl")
    p.add_argument("--out", required=True, help="output LDCK checkpoint")
    p.set_defaults(fn=cmd_train_depth)

    p = sub.add_parser("train-diffusion", help="train the denoiser and control branch")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--depth", required=True, help="frozen depth checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="training log JSONL (default: alongside --out)")
    p.add_argument("--resume", action="store_true", help="continue from --out if it exists")
    p.set_defaults(fn=cmd_train_diffusion)

    p = sub.add_parser("finetune-reward", help="reward-guided fine-tuning")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--model", required=True, help="checkpoint from train-diffusion")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(fn=cmd_finetune_reward)

    p = sub.add_parser("enhance", help="enhance night images with recurrent inference")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--probe", help="probe checkpoint for caption feedback")
    p.add_argument("--input", required=True, help="night PNG directory or test manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--trace-dir", help="optional per-iteration PNG dump")
    p.add_argument("--max-iters", type=int, help="override recurrent iteration count")
    p.set_defaults(fn=cmd_enhance)

    p = sub.add_parser("evaluate", help="score night/enhanced/clean image sets")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="test manifest with materialized nights")
    p.add_argument("--enhanced", required=True, help="directory of enhanced PNGs")
    p.add_argument("--train-data", required=True, help="clean manifest for probe/NSS fitting")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--plots", action="store_true", help="also write bar-chart PNG")
    p.add_argument("--allow-hash-mismatch", action="store_true")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and evaluate the ablation matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--workdir", required=True)
    p.add_argument(
        "--disable",
        nargs="+",
        metavar="COMPONENT",
        help="ablations to run (default: all of mc_adapter reward reli depth text)",
    )
    p.add_argument("--seeds", help="comma-separated seed list (default: config seed)")
    p.set_defaults(fn=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    outputs = _Outputs()
    try:
        args.fn(args, outputs)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # contract violations exit nonzero, one line
        outputs.cleanup()
        message = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
