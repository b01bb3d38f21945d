"""Synthetic scenes with ground truth: partition, per-node frames, cameras."""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .fields import Aabb, AnalyticSdf, bake, make_colorizer, write_grid
from .manifest import Manifest, NodeEntry, write_ground_truth, write_poses
from .register import transform_pose
from .render import CameraIntrinsics, CameraPose
from .transforms import SimilarityTransform

log = logging.getLogger(__name__)

# named substreams of the global seed
STREAM_SCENE = 0
STREAM_DISTURBANCE = 1
STREAM_RAYS = 2
STREAM_PERTURB = 3


def substream(seed: int, stream: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream, *map(int, extra)])


def substream_seed(seed: int, stream: int, *extra: int) -> int:
    return int(np.random.SeedSequence([int(seed), stream, *map(int, extra)]).generate_state(1)[0])


@dataclass(frozen=True)
class CameraRig:
    """Cameras orbiting look-at targets: each cell centre and each adjacent-cell overlap centre."""

    per_cell: int = 4
    per_overlap: int = 4
    radius: float = 2.5
    elevation_deg: float = 35.0
    width: int = 64
    height: int = 64
    fov_deg: float = 40.0

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_fov(self.width, self.height, self.fov_deg)

    def around(self, target, count: int, phase: float) -> list[CameraPose]:
        target = np.asarray(target, dtype=np.float64)
        el = math.radians(self.elevation_deg)
        poses = []
        for k in range(count):
            az = phase + 2 * math.pi * k / count
            eye = target + self.radius * np.array(
                [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
            poses.append(CameraPose.look_at(eye, target, up=(0.0, 0.0, 1.0)))
        return poses


@dataclass(frozen=True)
class Disturbance:
    """Bounds of the random per-node local frame (rotation degrees, translation, relative scale)."""

    rotation_deg: float = 10.0
    translation: float = 0.1
    scale: float = 0.1

    def __post_init__(self):
        if min(self.rotation_deg, self.translation, self.scale) < 0:
            raise ValueError("disturbance bounds must be >= 0")
        if self.scale >= 1:
            raise ValueError("scale disturbance must be < 1")

    def sample(self, rng: np.random.Generator) -> SimilarityTransform:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = math.radians(self.rotation_deg) * rng.uniform(0.0, 1.0)
        R = Rotation.from_rotvec(axis * angle).as_matrix() if angle > 0 else np.eye(3)
        T = rng.uniform(-self.translation, self.translation, size=3)
        s = 1.0 + rng.uniform(-self.scale, self.scale)
        return SimilarityTransform(R, T, s)


@dataclass(frozen=True)
class SceneSpec:
    scene: AnalyticSdf
    colorizer: str = "sines"
    bbox: Aabb = Aabb((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))
    counts: tuple = (2, 1, 1)
    overlap: tuple = (0.2, 0.2, 0.2)
    dims: tuple = (65, 65, 65)
    noise: float = 0.0
    rig: CameraRig = field(default_factory=CameraRig)
    disturbance: Disturbance = field(default_factory=Disturbance)
    seed: int = 0

    def __post_init__(self):
        if len(self.counts) != 3 or min(self.counts) < 1:
            raise ValueError("grid counts must be three integers >= 1")
        ov = self.overlap
        if np.isscalar(ov):
            object.__setattr__(self, "overlap", (float(ov),) * 3)
        if any(not 0 < o < 0.5 for o in self.overlap):
            raise ValueError(f"overlap fraction must lie in (0, 0.5), got {self.overlap}")

    def to_dict(self) -> dict:
        return {"scene": self.scene.to_dict(), "colorizer": self.colorizer,
                "bbox": {"lo": list(self.bbox.lo), "hi": list(self.bbox.hi)},
                "counts": list(self.counts), "overlap": list(self.overlap),
                "dims": list(self.dims), "noise": self.noise,
                "rig": asdict(self.rig), "disturbance": asdict(self.disturbance),
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(AnalyticSdf.from_dict(d["scene"]), d.get("colorizer", "sines"),
                   Aabb(tuple(d["bbox"]["lo"]), tuple(d["bbox"]["hi"])),
                   tuple(d.get("counts", (2, 1, 1))), tuple(d.get("overlap", (0.2,) * 3)),
                   tuple(d.get("dims", (65, 65, 65))), float(d.get("noise", 0.0)),
                   CameraRig(**d.get("rig", {})), Disturbance(**d.get("disturbance", {})),
                   int(d.get("seed", 0)))

    @classmethod
    def load(cls, path) -> "SceneSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


def partition_axis(lo: float, hi: float, count: int, overlap: float) -> list[tuple[float, float]]:
    """Equal cells whose interior boundaries are widened by ``overlap * (hi - lo) / 2`` each way."""
    if not 0 < overlap < 0.5:
        raise ValueError(f"overlap fraction must lie in (0, 0.5), got {overlap}")
    width = (hi - lo) / count
    ext = overlap * (hi - lo) / 2
    out = []
    for c in range(count):
        a = lo + c * width
        b = hi if c == count - 1 else lo + (c + 1) * width
        out.append((max(lo, a - ext) if c > 0 else lo, min(hi, b + ext) if c < count - 1 else hi))
    return out


def partition(spec: SceneSpec) -> list[tuple[tuple[int, int, int], Aabb]]:
    """Global-frame cell boxes in x-fastest order with their grid indices."""
    axes = [partition_axis(spec.bbox.lo[a], spec.bbox.hi[a], spec.counts[a], spec.overlap[a])
            for a in range(3)]
    cells = []
    for iz, iy, ix in itertools.product(*(range(spec.counts[a]) for a in (2, 1, 0))):
        (x0, x1), (y0, y1), (z0, z1) = axes[0][ix], axes[1][iy], axes[2][iz]
        cells.append(((ix, iy, iz), Aabb((x0, y0, z0), (x1, y1, z1))))
    return cells


def scene_presets() -> dict:
    return {
        "sphere-pair": SceneSpec(
            AnalyticSdf.union(AnalyticSdf.sphere((-0.45, 0.0, 0.0), 0.4),
                              AnalyticSdf.sphere((0.45, 0.05, 0.0), 0.4),
                              AnalyticSdf.sphere((0.0, -0.05, 0.05), 0.3))),
        "campus": SceneSpec(
            _campus_scene(), counts=(5, 5, 1), overlap=(0.08, 0.08, 0.2), dims=(33, 33, 33),
            bbox=Aabb((-2.5, -2.5, -0.5), (2.5, 2.5, 0.5)),
            rig=CameraRig(per_cell=3, per_overlap=3, radius=1.6, elevation_deg=45.0, fov_deg=50.0)),
    }


def _campus_scene() -> AnalyticSdf:
    parts = [AnalyticSdf.box((0.0, 0.0, -0.3), (2.4, 2.4, 0.1))]
    for ix, iy in itertools.product(range(5), range(5)):
        cx, cy = -2.0 + ix, -2.0 + iy
        if (ix + iy) % 2 == 0:
            parts.append(AnalyticSdf.box((cx + 0.1, cy - 0.05, -0.05), (0.2, 0.25, 0.2)))
        else:
            parts.append(AnalyticSdf.sphere((cx - 0.05, cy + 0.1, -0.05), 0.22))
    return AnalyticSdf.union(*parts)


@dataclass
class GeneratedScene:
    manifest_path: Path
    to_global: dict
    cells: list
    camera_count: int


def gen(spec: SceneSpec, outdir) -> GeneratedScene:
    """Write a manifest, per-node grids, pose files, ground truth and the scene spec."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    cells = partition(spec)
    colorizer = make_colorizer(spec.colorizer)
    rng_dist = substream(spec.seed, STREAM_DISTURBANCE)
    rng_scene = substream(spec.seed, STREAM_SCENE)

    # cameras: targets at cell centres and at overlap centres of grid-adjacent cells
    intr = spec.rig.intrinsics()
    cameras = []
    for (idx, box) in cells:
        for pose in spec.rig.around(box.center, spec.rig.per_cell, rng_scene.uniform(0, 2 * math.pi)):
            cameras.append((box.center, pose))
    index = {idx: box for idx, box in cells}
    for (idx, box) in cells:
        for a in range(3):
            nb = tuple(idx[k] + (1 if k == a else 0) for k in range(3))
            if nb not in index:
                continue
            other = index[nb]
            lo = np.maximum(box.lo_arr, other.lo_arr)
            hi = np.minimum(box.hi_arr, other.hi_arr)
            target = 0.5 * (lo + hi)
            for pose in spec.rig.around(target, spec.rig.per_overlap, rng_scene.uniform(0, 2 * math.pi)):
                cameras.append((target, pose))
    image_ids = [f"cam_{k:04d}" for k in range(len(cameras))]

    to_global = {}
    entries = []
    for k, (idx, box) in enumerate(cells):
        G = spec.disturbance.sample(rng_dist)
        to_global[k] = G
        local_corners = G.apply_inverse(box.corners())
        domain = Aabb.from_points(local_corners)

        def sdf_local(x, G=G):
            return G.s * spec.scene(G.apply(x))

        def color_local(x, G=G):
            return colorizer(G.apply(x))

        fld = bake(sdf_local, color_local, domain, spec.dims, noise=spec.noise,
                   seed=substream_seed(spec.seed, STREAM_SCENE, k))
        vals = fld.sdf_grid.values
        if not (vals.min() < 0 < vals.max()):
            log.warning("node %d %s: empty node content (no surface crossing)", k, idx)
        grid_name = f"node_{k:03d}.sdfg"
        write_grid(out / grid_name, fld)

        poses = []
        for img, (target, pose) in zip(image_ids, cameras):
            if box.contains(np.asarray(target)[None], strict=False)[0]:
                poses.append((img, transform_pose(pose, G)[0], intr))
        pose_name = f"poses_{k:03d}.json"
        write_poses(out / pose_name, poses)
        entries.append(NodeEntry(k, grid_name, pose_name, domain, [p[0] for p in poses]))

    write_ground_truth(out / "ground_truth.txt", to_global)
    spec.save(out / "scene.json")
    manifest = Manifest(entries, scene="scene.json", ground_truth="ground_truth.txt", base_dir=out)
    mpath = out / "manifest.json"
    manifest.save(mpath)
    return GeneratedScene(mpath, to_global, cells, len(cameras))


CONFLICT_OFFSET = 0.052


def conflicting_planes(outdir, offset: float = CONFLICT_OFFSET, overlap: float = 0.2,
                       dims=(33, 5, 33)) -> Path:
    """Two nodes on [-1, 1]^3 split along x whose planar surfaces disagree by ``offset``.

    Node 0 holds ``f = z``, node 1 holds ``f = z - offset``; both frames are the
    global frame, so the manifest carries identity placements and edge transform.
    Returns the manifest path.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    xs = partition_axis(-1.0, 1.0, 2, overlap)
    rig = CameraRig(width=16, height=16)
    pose = rig.around((0.0, 0.0, 0.0), 1, 0.0)[0]
    ident = SimilarityTransform.identity()
    entries = []
    for k, (x0, x1) in enumerate(xs):
        dom = Aabb((x0, -1.0, -1.0), (x1, 1.0, 1.0))
        shift = offset * k
        fld = bake(lambda p, shift=shift: p[:, 2] - shift, make_colorizer("gray"), dom, dims)
        write_grid(out / f"node_{k:03d}.sdfg", fld)
        write_poses(out / f"poses_{k:03d}.json", [("shared", pose, rig.intrinsics())])
        entries.append(NodeEntry(k, f"node_{k:03d}.sdfg", f"poses_{k:03d}.json", dom,
                                 ["shared"], ident))
    manifest = Manifest(entries, {(0, 1): ident}, base_dir=out)
    mpath = out / "manifest.json"
    manifest.save(mpath)
    return mpath
