"""Dataset generation and persistence.

A dataset directory holds 8-bit PNG renderings, LDF1 depth/mask arrays and
a line-delimited JSON manifest with one record per scene.  Night images are
normally produced online during training; a materialized night set (with
its exact degradation parameters recorded for replay) is emitted for
held-out evaluation data when requested.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import CameraIntrinsics
from .degradation import DegradationParams, DegradationRanges, degrade
from .formats import read_ldf1, write_ldf1
from .lidar import LidarPattern
from .nnops import derive_seed
from .scene import Annotation, ImageSample, SceneSpec, generate_scene


def save_png(path: str | Path, rgb: np.ndarray) -> None:
    arr = np.clip(np.asarray(rgb) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


@dataclass
class DatasetRecord:
    id: int
    rgb_path: str
    dense_depth_path: str
    sparse_depth_path: str
    mask_path: str
    caption: str
    annotations: list[dict] = field(default_factory=list)
    night_path: str | None = None
    degradation: dict | None = None

    def to_json(self) -> str:
        d = {
            "id": self.id,
            "rgb_path": self.rgb_path,
            "dense_depth_path": self.dense_depth_path,
            "sparse_depth_path": self.sparse_depth_path,
            "mask_path": self.mask_path,
            "caption": self.caption,
            "annotations": self.annotations,
        }
        if self.night_path is not None:
            d["night_path"] = self.night_path
            d["degradation"] = self.degradation
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "DatasetRecord":
        d = json.loads(line)
        return cls(
            id=int(d["id"]),
            rgb_path=d["rgb_path"],
            dense_depth_path=d["dense_depth_path"],
            sparse_depth_path=d["sparse_depth_path"],
            mask_path=d["mask_path"],
            caption=d["caption"],
            annotations=list(d.get("annotations", [])),
            night_path=d.get("night_path"),
            degradation=d.get("degradation"),
        )


def write_manifest(path: str | Path, records: list[DatasetRecord]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(rec.to_json() + "\n")


def read_manifest(path: str | Path) -> list[DatasetRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(DatasetRecord.from_json(line))
    return records


def generate_dataset(
    root: str | Path,
    count: int,
    seed: int,
    spec: SceneSpec | None = None,
    camera: CameraIntrinsics | None = None,
    lidar: LidarPattern | None = None,
    with_night: bool = False,
    degrade_ranges: DegradationRanges | None = None,
    start_id: int = 0,
) -> Path:
    """Render `count` scenes into `root` and write the manifest.

    Per-scene seeds derive from (seed, scene id), so generation is
    insensitive to ordering and safe to parallelize per item.
    """
    root = Path(root)
    spec = spec or SceneSpec()
    if camera is None:
        camera = default_camera(64)
    subdirs = ["images", "depth"] + (["night"] if with_night else [])
    for sub in subdirs:
        (root / sub).mkdir(parents=True, exist_ok=True)
    ranges = degrade_ranges or DegradationRanges()

    records = []
    for i in range(start_id, start_id + count):
        sample = generate_scene(spec, camera, seed=derive_seed(seed, "scene", i), lidar=lidar)
        rec = save_sample(root, sample, i)
        if with_night:
            night, params = degrade(sample.rgb, ranges, derive_seed(seed, "night", i))
            night_rel = f"night/{i:05d}_night.png"
            save_png(root / night_rel, night)
            rec.night_path = night_rel
            rec.degradation = params.to_flat_dict()
        records.append(rec)
    manifest = root / "manifest.jsonl"
    write_manifest(manifest, records)
    return manifest


def save_sample(root: Path, sample: ImageSample, idx: int) -> DatasetRecord:
    rgb_rel = f"images/{idx:05d}_rgb.png"
    dense_rel = f"depth/{idx:05d}_dense.ldf"
    sparse_rel = f"depth/{idx:05d}_sparse.ldf"
    mask_rel = f"depth/{idx:05d}_mask.ldf"
    save_png(root / rgb_rel, sample.rgb)
    write_ldf1(root / dense_rel, sample.dense_depth)
    write_ldf1(root / sparse_rel, sample.sparse_depth)
    write_ldf1(root / mask_rel, sample.sparse_mask.astype(np.float32))
    return DatasetRecord(
        id=idx,
        rgb_path=rgb_rel,
        dense_depth_path=dense_rel,
        sparse_depth_path=sparse_rel,
        mask_path=mask_rel,
        caption=sample.caption,
        annotations=[a.to_dict() for a in sample.annotations],
    )


def load_sample(root: str | Path, record: DatasetRecord) -> ImageSample:
    root = Path(root)
    return ImageSample(
        rgb=load_png(root / record.rgb_path),
        dense_depth=read_ldf1(root / record.dense_depth_path)[:, :, 0],
        sparse_depth=read_ldf1(root / record.sparse_depth_path)[:, :, 0],
        sparse_mask=read_ldf1(root / record.mask_path)[:, :, 0] > 0.5,
        caption=record.caption,
        annotations=[Annotation.from_dict(a) for a in record.annotations],
    )


def load_corpus(manifest_path: str | Path) -> tuple[list[ImageSample], list[np.ndarray | None]]:
    """All samples plus their materialized night images (None if absent)."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    records = read_manifest(manifest_path)
    samples = [load_sample(root, r) for r in records]
    nights = [
        load_png(root / r.night_path) if r.night_path is not None else None for r in records
    ]
    return samples, nights


def default_camera(size: int) -> CameraIntrinsics:
    """Square pinhole camera with a ~53 degree horizontal field of view."""
    f = size  # fx = width gives atan(0.5) * 2 ~ 53 degrees
    return CameraIntrinsics(fx=f, fy=f, cx=size / 2.0, cy=size / 2.0, width=size, height=size)
