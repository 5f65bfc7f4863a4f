import json
from pathlib import Path

import numpy as np
import pytest

from nightlift.cli import main
from nightlift.config import merge_config, save_config


def micro_config(tmp_path, **overrides) -> Path:
    base = {
        "scene": {"count": 10, "test_count": 4, "image_size": 16},
        "depth_net": {"steps": 15, "width": 4, "levels": 2},
        "diffusion": {
            "timesteps": 6,
            "beta_start": 0.01,
            "beta_end": 0.2,
            "channels": [8, 8, 8],
            "time_dim": 16,
            "text_dim": 16,
            "base_steps": 4,
            "control_steps": 4,
            "batch_size": 2,
        },
        "reward": {"steps": 3, "batch_size": 4, "tau": 3},
        "reli": {"max_iters": 2, "stop_tol": 1e-6},
        "eval": {"probe_steps": 20, "nss_min_images": 8},
        "io": {"sample_chunk": 4},
    }
    for section, vals in overrides.items():
        base.setdefault(section, {}).update(vals)
    cfg = merge_config(base)
    path = tmp_path / "cfg.json"
    save_config(cfg, path)
    return path


def test_scene_gen_deterministic_manifests(tmp_path):
    cfg = micro_config(tmp_path)
    for name in ("a", "b"):
        code = main(
            ["scene-gen", "--config", str(cfg), "--count", "8", "--seed", "7",
             "--out", str(tmp_path / name)]
        )
        assert code == 0
    a = (tmp_path / "a" / "manifest.jsonl").read_bytes()
    b = (tmp_path / "b" / "manifest.jsonl").read_bytes()
    assert a == b
    # image payloads identical as well
    for img in sorted((tmp_path / "a" / "images").iterdir()):
        assert img.read_bytes() == (tmp_path / "b" / "images" / img.name).read_bytes()


def test_error_is_single_line_and_cleans_partial_outputs(tmp_path, capsys):
    cfg = micro_config(tmp_path)
    out = tmp_path / "depth.ldck"
    code = main(
        ["train-depth", "--config", str(cfg), "--data", str(tmp_path / "missing.jsonl"),
         "--out", str(out)]
    )
    assert code == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: ")
    assert "\n" not in err
    assert not out.exists()


def test_invalid_config_rejected(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scene": {"bogus_key": 1}}))
    code = main(["scene-gen", "--config", str(bad), "--out", str(tmp_path / "d")])
    assert code == 1
    assert "unknown key" in capsys.readouterr().err
    assert not (tmp_path / "d").exists()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Micro pipeline artifacts shared by the CLI surface tests."""
    root = tmp_path_factory.mktemp("cli_pipeline")
    cfg = micro_config(root)
    assert main(["scene-gen", "--config", str(cfg), "--out", str(root / "train")]) == 0
    assert (
        main(
            ["scene-gen", "--config", str(cfg), "--out", str(root / "test"),
             "--count", "4", "--seed", "99", "--with-night"]
        )
        == 0
    )
    assert (
        main(
            ["train-depth", "--config", str(cfg), "--data", str(root / "train/manifest.jsonl"),
             "--out", str(root / "depth.ldck")]
        )
        == 0
    )
    assert (
        main(
            ["train-diffusion", "--config", str(cfg), "--data", str(root / "train/manifest.jsonl"),
             "--depth", str(root / "depth.ldck"), "--out", str(root / "model.ldck")]
        )
        == 0
    )
    return root, cfg


def test_training_log_is_line_delimited(pipeline):
    root, _ = pipeline
    rows = [json.loads(l) for l in (root / "model.log.jsonl").read_text().splitlines()]
    assert len(rows) == 8  # 4 base + 4 control
    assert {"stage", "step", "L_Lighting"} <= set(rows[0])


def test_finetune_enhance_evaluate_chain(pipeline):
    root, cfg = pipeline
    assert (
        main(
            ["finetune-reward", "--config", str(cfg), "--data", str(root / "train/manifest.jsonl"),
             "--depth", str(root / "depth.ldck"), "--model", str(root / "model.ldck"),
             "--out", str(root / "model_ft.ldck")]
        )
        == 0
    )
    ft_rows = [json.loads(l) for l in (root / "model_ft.log.jsonl").read_text().splitlines()]
    assert {"L_Lighting", "L_MMD", "L_Depth", "L_obj"} <= set(ft_rows[0])

    assert (
        main(
            ["enhance", "--config", str(cfg), "--model", str(root / "model_ft.ldck"),
             "--depth", str(root / "depth.ldck"), "--input", str(root / "test/manifest.jsonl"),
             "--out", str(root / "enhanced"), "--trace-dir", str(root / "traces")]
        )
        == 0
    )
    pngs = sorted((root / "enhanced").glob("*.png"))
    assert len(pngs) == 4
    summary = json.loads((root / "enhanced" / "enhance_summary.json").read_text())
    assert len(summary["images"]) == 4
    assert all(1 <= rec["iterations"] <= 2 for rec in summary["images"])
    assert any((root / "traces").glob("*.png"))

    assert (
        main(
            ["evaluate", "--config", str(cfg), "--data", str(root / "test/manifest.jsonl"),
             "--enhanced", str(root / "enhanced"), "--train-data", str(root / "train/manifest.jsonl"),
             "--out", str(root / "report.json")]
        )
        == 0
    )
    report = json.loads((root / "report.json").read_text())
    assert set(report["columns"]) == {"night", "enhanced", "clean"}
    assert "config_hash" in report


def test_evaluate_refuses_mismatched_hash(pipeline, tmp_path, capsys):
    root, _ = pipeline
    # a config differing in seed produces a different hash
    from nightlift.config import merge_config, save_config

    cfg2 = merge_config({"seed": 12345})
    cfg2_path = tmp_path / "cfg2.json"
    save_config(cfg2, cfg2_path)
    code = main(
        ["evaluate", "--config", str(cfg2_path), "--data", str(root / "test/manifest.jsonl"),
         "--enhanced", str(root / "enhanced"), "--train-data", str(root / "train/manifest.jsonl"),
         "--out", str(tmp_path / "r.json")]
    )
    assert code == 1
    assert "different config" in capsys.readouterr().err
    assert not (tmp_path / "r.json").exists()


def test_evaluate_hash_override(pipeline, tmp_path):
    root, cfg = pipeline
    from nightlift.config import load_config, save_config

    cfg2 = load_config(cfg)
    cfg2["seed"] = 12345
    cfg2_path = tmp_path / "cfg_override.json"
    save_config(cfg2, cfg2_path)
    code = main(
        ["evaluate", "--config", str(cfg2_path), "--data", str(root / "test/manifest.jsonl"),
         "--enhanced", str(root / "enhanced"), "--train-data", str(root / "train/manifest.jsonl"),
         "--out", str(tmp_path / "r2.json"), "--allow-hash-mismatch"]
    )
    assert code == 0
    assert (tmp_path / "r2.json").exists()


def test_resume_completed_run_is_stable(pipeline, tmp_path):
    root, cfg = pipeline
    before = (root / "model.ldck").read_bytes()
    code = main(
        ["train-diffusion", "--config", str(cfg), "--data", str(root / "train/manifest.jsonl"),
         "--depth", str(root / "depth.ldck"), "--out", str(root / "model.ldck"), "--resume"]
    )
    assert code == 0
    assert (root / "model.ldck").read_bytes() == before


def test_ablate_report_row_labels(tmp_path):
    cfg_path = micro_config(tmp_path)
    workdir = tmp_path / "ablate"
    code = main(
        ["ablate", "--config", str(cfg_path), "--workdir", str(workdir),
         "--disable", "mc_adapter"]
    )
    assert code == 0
    report = json.loads((workdir / "report.json").read_text())
    labels = [row["label"] for row in report["rows"]]
    assert "w/o. MC-Adapter" in labels
    assert "full" in labels


def test_ablate_rejects_unknown_component(tmp_path, capsys):
    cfg_path = micro_config(tmp_path)
    code = main(
        ["ablate", "--config", str(cfg_path), "--workdir", str(tmp_path / "w"),
         "--disable", "warp_drive"]
    )
    assert code == 1
    assert "unknown ablation" in capsys.readouterr().err
