"""Procedural daytime road scenes with exact dense depth.

Scenes are flat-shaded primitives (boxes, spheres, cylinders) resting on a
ground plane under a directional light.  Rendering casts one ray per pixel
and keeps the nearest analytic intersection, so the z-buffer is exact and
every depth value can be checked against closed-form geometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraIntrinsics, pixel_rays
from .captions import CLASS_ORDER, template_caption
from .lidar import LidarPattern, simulate_lidar

_CLASS_COLORS = {
    "box": np.array([0.78, 0.33, 0.25]),
    "cylinder": np.array([0.30, 0.42, 0.78]),
    "sphere": np.array([0.88, 0.75, 0.25]),
}

_SIZE_RANGES = {
    # (min, max) of the characteristic radius/half-extent in meters
    "box": (0.6, 1.4),
    "cylinder": (0.4, 0.9),
    "sphere": (0.5, 1.2),
}


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class SceneSpec:
    object_count_range: tuple[int, int] = (0, 4)
    classes: tuple[str, ...] = CLASS_ORDER
    depth_range: tuple[float, float] = (6.0, 28.0)
    light_direction: tuple[float, float, float] = tuple(_unit((0.35, 0.75, 0.25)))
    ground_palette: tuple[tuple[float, float, float], tuple[float, float, float]] = (
        (0.38, 0.38, 0.40),
        (0.30, 0.30, 0.33),
    )
    sky_palette: tuple[tuple[float, float, float], tuple[float, float, float]] = (
        (0.52, 0.70, 0.92),
        (0.78, 0.86, 0.96),
    )
    camera_height: float = 1.6
    max_range: float = 50.0
    ambient: float = 0.35

    def __post_init__(self) -> None:
        lo, hi = self.object_count_range
        if lo > hi or lo < 0:
            raise ValueError(f"empty object_count_range {self.object_count_range}")
        d_lo, d_hi = self.depth_range
        if d_lo <= 0:
            raise ValueError(f"depth_range lower bound must be > 0, got {d_lo}")
        if d_lo > d_hi:
            raise ValueError(f"empty depth_range {self.depth_range}")
        if not self.classes or any(c not in _CLASS_COLORS for c in self.classes):
            raise ValueError(f"unknown classes in {self.classes}")
        norm = np.linalg.norm(self.light_direction)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"light_direction must be unit norm, |v|={norm}")


@dataclass(frozen=True)
class Annotation:
    cls: str
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1 inclusive pixel bounds
    center_depth: float

    def to_dict(self) -> dict:
        return {"cls": self.cls, "bbox": list(self.bbox), "center_depth": self.center_depth}

    @classmethod
    def from_dict(cls, d: dict) -> "Annotation":
        return cls(d["cls"], tuple(d["bbox"]), float(d["center_depth"]))


@dataclass
class ImageSample:
    """One scene: sRGB image, exact dense depth, sparse LiDAR depth, caption."""

    rgb: np.ndarray  # H x W x 3 float32 in [0, 1]
    dense_depth: np.ndarray  # H x W float32, meters
    sparse_depth: np.ndarray  # H x W float32, meters (valid where mask)
    sparse_mask: np.ndarray  # H x W bool
    caption: str
    annotations: list[Annotation] = field(default_factory=list)


@dataclass(frozen=True)
class _Object:
    cls: str
    center: np.ndarray
    params: tuple[float, ...]  # class-specific geometry
    shade: float


def _intersect_object(obj: _Object, rays: np.ndarray):
    """Depth map (inf where missed) and surface normals for one object."""
    dx, dy = rays[:, :, 0], rays[:, :, 1]
    inf = np.inf
    cx, cy, cz = obj.center
    if obj.cls == "sphere":
        (r,) = obj.params
        a = dx * dx + dy * dy + 1.0
        b = -2.0 * (dx * cx + dy * cy + cz)
        c0 = cx * cx + cy * cy + cz * cz - r * r
        disc = b * b - 4.0 * a * c0
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t = np.where(hit, (-b - sq) / (2.0 * a), inf)
        t = np.where(t > 1e-6, t, inf)
        p = rays * np.where(np.isfinite(t), t, 0.0)[:, :, None]
        normal = (p - obj.center) / r
        return t, normal
    if obj.cls == "box":
        hx, hy, hz = obj.params
        lo = np.array([cx - hx, cy - hy, cz - hz])
        hi = np.array([cx + hx, cy + hy, cz + hz])
        t_near = np.full(dx.shape, -inf)
        t_far = np.full(dx.shape, inf)
        near_axis = np.zeros(dx.shape, dtype=np.int8)
        d_all = [dx, dy, np.ones_like(dx)]
        for axis in range(3):
            d = d_all[axis]
            with np.errstate(divide="ignore", invalid="ignore"):
                t0 = (lo[axis]) / d
                t1 = (hi[axis]) / d
            t_lo = np.minimum(t0, t1)
            t_hi = np.maximum(t0, t1)
            parallel = np.abs(d) < 1e-12
            inside_slab = (0.0 >= lo[axis]) & (0.0 <= hi[axis])
            t_lo = np.where(parallel, np.where(inside_slab, -inf, inf), t_lo)
            t_hi = np.where(parallel, np.where(inside_slab, inf, -inf), t_hi)
            update = t_lo > t_near
            near_axis = np.where(update, axis, near_axis)
            t_near = np.maximum(t_near, t_lo)
            t_far = np.minimum(t_far, t_hi)
        hit = (t_near <= t_far) & (t_near > 1e-6)
        t = np.where(hit, t_near, inf)
        p = rays * np.where(np.isfinite(t), t, 0.0)[:, :, None]
        normal = np.zeros_like(rays)
        for axis in range(3):
            sel = near_axis == axis
            sign = np.sign(p[:, :, axis] - obj.center[axis])
            normal[:, :, axis] = np.where(sel, sign, normal[:, :, axis])
        return t, normal
    if obj.cls == "cylinder":
        r, hh = obj.params  # radius, half-height along y
        a = dx * dx + 1.0
        b = -2.0 * (dx * cx + cz)
        c0 = cx * cx + cz * cz - r * r
        disc = b * b - 4.0 * a * c0
        side_hit = disc >= 0
        sq = np.sqrt(np.where(side_hit, disc, 0.0))
        t_side = np.full(dx.shape, inf)
        for root in ((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)):
            in_span = np.abs(dy * root - cy) <= hh
            ok = side_hit & in_span & (root > 1e-6)
            t_side = np.where(ok & (root < t_side), root, t_side)

        # flat caps at y = cy -/+ hh
        t_cap = np.full(dx.shape, inf)
        cap_sign = np.zeros(dx.shape)
        for y_plane, sign in ((cy - hh, -1.0), (cy + hh, 1.0)):
            with np.errstate(divide="ignore", invalid="ignore"):
                t_p = np.where(np.abs(dy) > 1e-12, y_plane / dy, inf)
            t_safe = np.where(np.isfinite(t_p), t_p, 0.0)
            px = dx * t_safe - cx
            pz = t_safe - cz
            ok = (t_p > 1e-6) & (px * px + pz * pz <= r * r)
            better = ok & (t_p < t_cap)
            cap_sign = np.where(better, sign, cap_sign)
            t_cap = np.where(better, t_p, t_cap)

        t = np.minimum(t_side, t_cap)
        p = rays * np.where(np.isfinite(t), t, 0.0)[:, :, None]
        radial = np.stack(
            [p[:, :, 0] - cx, np.zeros_like(dx), p[:, :, 2] - cz], axis=-1
        )
        radial /= np.maximum(np.linalg.norm(radial, axis=-1, keepdims=True), 1e-12)
        cap_normal = np.zeros_like(rays)
        cap_normal[:, :, 1] = cap_sign
        use_cap = t_cap < t_side
        normal = np.where(use_cap[:, :, None], cap_normal, radial)
        return t, normal
    raise ValueError(f"unknown primitive class {obj.cls!r}")


def _sample_objects(spec: SceneSpec, camera: CameraIntrinsics, rng: np.random.Generator):
    n = int(rng.integers(spec.object_count_range[0], spec.object_count_range[1] + 1))
    objects: list[_Object] = []
    margin = 4
    for _ in range(n):
        cls = str(rng.choice(list(spec.classes)))
        z = float(rng.uniform(*spec.depth_range))
        u = float(rng.uniform(margin, camera.width - 1 - margin))
        x = (u - camera.cx) * z / camera.fx
        s_lo, s_hi = _SIZE_RANGES[cls]
        s = float(rng.uniform(s_lo, s_hi))
        shade = float(rng.uniform(0.85, 1.1))
        if cls == "sphere":
            center = np.array([x, spec.camera_height - s, z])
            params: tuple[float, ...] = (s,)
        elif cls == "box":
            hy = float(rng.uniform(s_lo, s_hi))
            center = np.array([x, spec.camera_height - hy, z])
            params = (s, hy, float(rng.uniform(s_lo, s_hi)))
        else:  # cylinder
            hh = float(rng.uniform(0.6, 1.3))
            center = np.array([x, spec.camera_height - hh, z])
            params = (s, hh)
        objects.append(_Object(cls, center, params, shade))
    return objects


def _shade(base: np.ndarray, normal: np.ndarray, light: np.ndarray, ambient: float) -> np.ndarray:
    lambert = np.maximum(0.0, -(normal @ light))
    return base * (ambient + (1.0 - ambient) * lambert)[..., None]


def render_objects(
    objects: list[_Object], spec: SceneSpec, camera: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Composite rendering. Returns (rgb f64, depth f64, winner index map).

    Winner map holds the index of the nearest object per pixel, -1 for
    ground and -2 for sky.
    """
    rays = pixel_rays(camera)
    h, w = camera.height, camera.width
    light = np.asarray(spec.light_direction, dtype=np.float64)

    depth = np.full((h, w), spec.max_range, dtype=np.float64)
    winner = np.full((h, w), -2, dtype=np.int64)

    # ground plane y = camera_height (camera looks along +z, y points down)
    dy = rays[:, :, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = np.where(dy > 1e-12, spec.camera_height / dy, np.inf)
    ground_hit = (t_ground > 0) & (t_ground < depth)
    depth = np.where(ground_hit, t_ground, depth)
    winner = np.where(ground_hit, -1, winner)

    normals = np.zeros((h, w, 3), dtype=np.float64)
    normals[:, :, 1] = np.where(winner == -1, -1.0, 0.0)

    for idx, obj in enumerate(objects):
        t, n = _intersect_object(obj, rays)
        closer = t < depth
        depth = np.where(closer, t, depth)
        winner = np.where(closer, idx, winner)
        normals = np.where(closer[:, :, None], n, normals)

    # colors
    rgb = np.zeros((h, w, 3), dtype=np.float64)
    sky_top = np.asarray(spec.sky_palette[0])
    sky_horizon = np.asarray(spec.sky_palette[1])
    grad = np.linspace(0.0, 1.0, h)[:, None, None]
    sky = sky_top * (1 - grad) + sky_horizon * grad
    rgb = np.where((winner == -2)[:, :, None], sky, rgb)

    points = rays * depth[:, :, None]
    checker = ((np.floor(points[:, :, 0] / 2.0) + np.floor(points[:, :, 2] / 2.0)) % 2).astype(bool)
    g0 = np.asarray(spec.ground_palette[0])
    g1 = np.asarray(spec.ground_palette[1])
    ground_base = np.where(checker[:, :, None], g0, g1)
    ground_rgb = _shade(ground_base, normals, light, spec.ambient)
    rgb = np.where((winner == -1)[:, :, None], ground_rgb, rgb)

    for idx, obj in enumerate(objects):
        base = _CLASS_COLORS[obj.cls] * obj.shade
        obj_rgb = _shade(np.broadcast_to(base, (h, w, 3)), normals, light, spec.ambient)
        rgb = np.where((winner == idx)[:, :, None], obj_rgb, rgb)

    return np.clip(rgb, 0.0, 1.0), depth, winner


def generate_scene(
    spec: SceneSpec,
    camera: CameraIntrinsics,
    seed: int,
    lidar: LidarPattern | None = None,
) -> ImageSample:
    """Deterministically generate one annotated scene sample."""
    rng = np.random.default_rng(seed)
    objects = _sample_objects(spec, camera, rng)
    rgb, depth, winner = render_objects(objects, spec, camera)

    annotations: list[Annotation] = []
    for idx, obj in enumerate(objects):
        ys, xs = np.nonzero(winner == idx)
        if ys.size == 0:
            continue  # fully occluded or out of frame
        bbox = (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
        annotations.append(Annotation(obj.cls, bbox, float(obj.center[2])))

    pattern = lidar if lidar is not None else LidarPattern()
    sparse, mask = simulate_lidar(depth, camera, pattern, seed=seed ^ 0x5EED)

    return ImageSample(
        rgb=rgb.astype(np.float32),
        dense_depth=depth.astype(np.float32),
        sparse_depth=sparse.astype(np.float32),
        sparse_mask=mask,
        caption=template_caption(annotations),
        annotations=annotations,
    )
