"""End-to-end experiment orchestration.

Runs the full pipeline per seed (data, depth net, probe, NSS reference,
diffusion training, reward fine-tuning, recurrent inference, evaluation)
and the ablation matrix on top of it.  Every stage writes its artifact into
a workdir keyed by the config hash, so interrupted runs resume and variants
share the stages they have in common:

- the base (stage-1) denoiser is shared by all variants;
- variants with the same conditioning switches share the control stage;
- the no-reward variant shares the control stage with the full model and
  only re-runs fine-tuning with zeroed reward weights;
- the no-recurrence variant shares the full model entirely and differs only
  at inference.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .captions import caption_from_presence
from .config import (
    build_camera,
    build_depth_regressor,
    build_enhancer,
    build_lidar,
    build_nss,
    build_probe,
    build_ranges,
    build_scene_spec,
    config_hash,
)
from .datasets import generate_dataset, load_corpus, read_manifest
from .metrics import evaluate_run, presence_labels


@dataclass(frozen=True)
class VariantSpec:
    key: str
    label: str
    use_fusion: bool = True
    use_depth: bool = True
    use_text: bool = True
    reward_on: bool = True
    single_pass: bool = False  # disable recurrent inference

    @property
    def control_key(self) -> str:
        return f"f{int(self.use_fusion)}d{int(self.use_depth)}t{int(self.use_text)}"

    @property
    def model_key(self) -> str:
        return f"{self.control_key}-r{int(self.reward_on)}"


VARIANTS = {
    "full": VariantSpec("full", "full"),
    "mc_adapter": VariantSpec("mc_adapter", "w/o. MC-Adapter", use_fusion=False),
    "reward": VariantSpec("reward", "w/o. LDRM", reward_on=False),
    "reli": VariantSpec("reli", "w/o. ReLI", single_pass=True),
    "depth": VariantSpec("depth", "w/o. Depth Map", use_depth=False),
    "text": VariantSpec("text", "w/o. Text", use_text=False),
}

ABLATION_KEYS = ("mc_adapter", "reward", "reli", "depth", "text")


def _jsonl_logger(path: Path):
    def log_fn(row: dict) -> None:
        with open(path, "a", encoding="utf-8") as f:
            f.write(json.dumps(row, sort_keys=True) + "\n")

    return log_fn


def read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def ensure_dataset(cfg: dict, seed: int, root: Path, progress=None):
    """Train corpus (clean) plus held-out test corpus with materialized nights."""
    spec = build_scene_spec(cfg)
    camera = build_camera(cfg)
    lidar = build_lidar(cfg)
    ranges = build_ranges(cfg)
    count = cfg["scene"]["count"]
    test_count = cfg["scene"]["test_count"]

    train_manifest = root / "train" / "manifest.jsonl"
    if not train_manifest.exists():
        if progress:
            progress(f"[seed {seed}] generating {count} training scenes")
        generate_dataset(root / "train", count, seed, spec, camera, lidar)
    test_manifest = root / "test" / "manifest.jsonl"
    if not test_manifest.exists():
        if progress:
            progress(f"[seed {seed}] generating {test_count} held-out scenes")
        generate_dataset(
            root / "test",
            test_count,
            seed,
            spec,
            camera,
            lidar,
            with_night=True,
            degrade_ranges=ranges,
            start_id=count,
        )
    train_samples, _ = load_corpus(train_manifest)
    test_samples, test_nights = load_corpus(test_manifest)
    return train_samples, test_samples, np.stack(test_nights)


def ensure_depth(cfg: dict, seed: int, samples, path: Path, progress=None):
    reg = build_depth_regressor(cfg)
    reg.seed = seed
    if path.exists():
        return reg.load_weights(path)
    if progress:
        progress(f"[seed {seed}] training depth net ({reg.steps} steps)")
    reg.fit(samples, degrade_ranges=build_ranges(cfg))
    reg.save_weights(path, config_hash=config_hash(cfg))
    return reg


def ensure_probe(cfg: dict, seed: int, samples, path: Path, progress=None):
    probe = build_probe(cfg)
    probe.seed = seed
    if path.exists():
        return probe.load_weights(path)
    if progress:
        progress(f"[seed {seed}] training perception probe ({probe.steps} steps)")
    probe.fit([s.rgb for s in samples], presence_labels(samples))
    probe.save_weights(path, config_hash=config_hash(cfg))
    return probe


def ensure_nss(cfg: dict, samples, path: Path, progress=None):
    nss = build_nss(cfg)
    if path.exists():
        return nss.load_weights(path)
    if progress:
        progress(f"fitting NSS reference on {len(samples)} images")
    nss.fit([s.rgb for s in samples])
    nss.save_weights(path, config_hash=config_hash(cfg))
    return nss


def _enhancer_for(cfg: dict, seed: int, variant: VariantSpec, depth_model, captioner):
    enh = build_enhancer(
        cfg,
        depth_model=depth_model,
        captioner=captioner,
        use_fusion=variant.use_fusion,
        use_depth_condition=variant.use_depth,
        use_text_condition=variant.use_text,
        max_iters=1 if variant.single_pass else None,
    )
    enh.seed = seed
    if not variant.reward_on:
        enh.reward_lambda_depth = 0.0
        enh.reward_lambda_mmd = 0.0
    return enh


def ensure_variant_model(
    cfg: dict,
    seed: int,
    variant: VariantSpec,
    samples,
    depth_model,
    seed_dir: Path,
    progress=None,
):
    """Base + control + fine-tune for one variant, every stage cached."""
    chash = config_hash(cfg)
    base_path = seed_dir / "base.ldck"
    enh = _enhancer_for(cfg, seed, variant, depth_model, captioner=None)
    if not base_path.exists():
        if progress:
            progress(f"[seed {seed}] base denoiser ({enh.base_steps} steps)")
        log = _jsonl_logger(seed_dir / "log_base.jsonl")
        enh.fit_base(samples, log_fn=log)
        enh.save_weights(base_path, config_hash=chash)

    control_path = seed_dir / f"control_{variant.control_key}.ldck"
    if not control_path.exists():
        if progress:
            progress(f"[seed {seed}] control branch {variant.control_key} ({enh.control_steps} steps)")
        enh.load_weights(base_path)
        log = _jsonl_logger(seed_dir / f"log_control_{variant.control_key}.jsonl")
        enh.fit_control(samples, log_fn=log)
        enh.save_weights(control_path, config_hash=chash)

    model_path = seed_dir / f"model_{variant.model_key}.ldck"
    if not model_path.exists():
        if progress:
            progress(f"[seed {seed}] reward fine-tune {variant.model_key} ({enh.finetune_steps} steps)")
        enh.load_weights(control_path)
        log = _jsonl_logger(seed_dir / f"log_finetune_{variant.model_key}.jsonl")
        enh.finetune(samples, log_fn=log)
        enh.save_weights(model_path, config_hash=chash)
    else:
        enh.load_weights(model_path)
    return enh


def composite_score(row: dict) -> float:
    """Probe accuracy minus the night-normalized NSS distance of the output."""
    night_nss = max(row["columns"]["night"]["nss_distance"], 1e-9)
    return row["columns"]["enhanced"]["probe_accuracy"] - (
        row["columns"]["enhanced"]["nss_distance"] / night_nss
    )


def run_seed(
    cfg: dict,
    seed: int,
    workdir: Path,
    variant_keys,
    progress=None,
) -> dict:
    """One full pipeline run; returns per-variant reports plus trace/log data."""
    chash = config_hash(cfg)
    seed_dir = workdir / f"{chash[:12]}" / f"s{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    result_path = seed_dir / "results.json"
    wanted = ["full"] + [k for k in variant_keys if k != "full"]
    if result_path.exists():
        cached = json.loads(result_path.read_text())
        if set(wanted) <= set(cached["variants"]):
            return cached

    train, test, nights = ensure_dataset(cfg, seed, seed_dir / "data", progress)
    depth_model = ensure_depth(cfg, seed, train, seed_dir / "depth.ldck", progress)
    probe = ensure_probe(cfg, seed, train, seed_dir / "probe.ldck", progress)
    nss = ensure_nss(cfg, train, seed_dir / "nss.ldck", progress)

    def captioner(img):
        return caption_from_presence(probe.present_classes(img))

    labels = presence_labels(test)
    clean = [s.rgb for s in test]

    result = {"seed": seed, "config_hash": chash, "variants": {}}
    for key in wanted:
        variant = VARIANTS[key]
        enh = ensure_variant_model(cfg, seed, variant, train, depth_model, seed_dir, progress)
        enh.captioner = captioner
        if progress:
            progress(f"[seed {seed}] enhancing {len(nights)} night images ({variant.label})")
        t0 = time.time()
        enhanced, traces = enh.transform_with_traces(nights)
        report = evaluate_run(list(nights), list(enhanced), clean, labels, probe, nss)
        report["label"] = variant.label
        report["composite"] = composite_score(report)
        report["enhance_seconds"] = time.time() - t0
        report["trace_differences"] = [t.differences for t in traces]
        result["variants"][key] = report

    ft_log = seed_dir / f"log_finetune_{VARIANTS['full'].model_key}.jsonl"
    if ft_log.exists():
        rows = read_jsonl(ft_log)
        result["finetune_log"] = [
            {"step": r["step"], "L_Depth": r["L_Depth"], "n_gated": r["n_gated"]} for r in rows
        ]
    control_log = seed_dir / f"log_control_{VARIANTS['full'].control_key}.jsonl"
    if control_log.exists():
        tail = [r["L_Lighting"] for r in read_jsonl(control_log)][-50:]
        result["control_loss_tail"] = float(np.mean(tail)) if tail else None
    result_path.write_text(json.dumps(result, sort_keys=True))
    return result


def run_protocol(
    cfg: dict,
    workdir: str | Path,
    seeds,
    variant_keys=ABLATION_KEYS,
    progress=None,
) -> dict:
    """Multi-seed pipeline + ablations; writes and returns the summary."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    per_seed = []
    for seed in seeds:
        cfg_seed = json.loads(json.dumps(cfg))
        cfg_seed["seed"] = int(seed)
        per_seed.append(run_seed(cfg_seed, int(seed), workdir, variant_keys, progress))

    wanted = ["full"] + [k for k in variant_keys if k != "full"]
    summary = {
        "config_hash": chash,
        "seeds": [int(s) for s in seeds],
        "variants": {},
        "finetune_logs": {str(r["seed"]): r.get("finetune_log", []) for r in per_seed},
        "control_loss_tails": {str(r["seed"]): r.get("control_loss_tail") for r in per_seed},
    }
    for key in wanted:
        rows = [r["variants"][key] for r in per_seed]
        agg = {
            "label": VARIANTS[key].label,
            "per_seed": rows,
            "composite_mean": float(np.mean([r["composite"] for r in rows])),
        }
        for column in ("night", "enhanced", "clean"):
            agg[f"{column}_probe_accuracy"] = float(
                np.mean([r["columns"][column]["probe_accuracy"] for r in rows])
            )
            agg[f"{column}_nss_distance"] = float(
                np.mean([r["columns"][column]["nss_distance"] for r in rows])
            )
        summary["variants"][key] = agg
    (workdir / f"summary_{chash[:12]}.json").write_text(json.dumps(summary, sort_keys=True))
    return summary
