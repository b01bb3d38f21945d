"""Graph manifest, pose file and ground-truth file formats.

Manifest (JSON)::

    {
      "version": 1,
      "nodes": [
        {"id": 0, "grid": "node_000.sdfg", "poses": "poses_000.json",
         "domain": {"lo": [x, y, z], "hi": [x, y, z]},
         "image_ids": ["cam_0003", ...],
         "to_global": [r00, ..., r22, tx, ty, tz, s]}          # optional
      ],
      "edge_transforms": [{"i": 0, "j": 1, "transform": [13 numbers]}],  # optional, maps j -> i
      "scene": "scene.json",                                   # optional
      "ground_truth": "ground_truth.txt"                       # optional
    }

Pose file (JSON)::

    {"images": [{"image_id": "cam_0003", "R": [9 numbers, row-major], "T": [3 numbers],
                 "fx": ..., "fy": ..., "cx": ..., "cy": ..., "width": W, "height": H}]}

Ground truth (text): ``#`` comments, then one line per node:
``node_id r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz s`` (true to-global transform).

Relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .fields import Aabb, read_grid
from .graph import GraphNode
from .render import CameraIntrinsics, CameraPose
from .transforms import SimilarityTransform


class ManifestError(ValueError):
    pass


def pose_record(image_id: str, pose: CameraPose, intr: CameraIntrinsics) -> dict:
    return {"image_id": image_id, "R": pose.R.ravel().tolist(), "T": pose.T.tolist(),
            "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            "width": intr.width, "height": intr.height}


def write_poses(path, poses) -> None:
    recs = [pose_record(img, p, intr) for img, p, intr in poses]
    Path(path).write_text(json.dumps({"images": recs}, indent=1) + "\n")


def read_poses(path) -> list[tuple[str, CameraPose, CameraIntrinsics]]:
    data = json.loads(Path(path).read_text())
    out = []
    for rec in data["images"]:
        try:
            pose = CameraPose(rec["R"], rec["T"])
            intr = CameraIntrinsics(rec["fx"], rec["fy"], rec["cx"], rec["cy"],
                                    int(rec["width"]), int(rec["height"]))
        except (KeyError, ValueError) as exc:
            raise ManifestError(f"{path}: bad pose record {rec.get('image_id')!r}: {exc}") from None
        out.append((str(rec["image_id"]), pose, intr))
    return out


def write_ground_truth(path, transforms: dict[int, SimilarityTransform]) -> None:
    lines = ["# node_id r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz s",
             "# true transform from node-local to global coordinates: x_g = (R x + T) / s"]
    for k in sorted(transforms):
        lines.append(f"{k} " + " ".join(repr(v) for v in transforms[k].to_list()))
    Path(path).write_text("\n".join(lines) + "\n")


def read_ground_truth(path) -> dict[int, SimilarityTransform]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        out[int(parts[0])] = SimilarityTransform.from_list(parts[1:])
    return out


@dataclass
class NodeEntry:
    id: int
    grid: str
    poses: str
    domain: Aabb
    image_ids: list
    to_global: SimilarityTransform | None = None


@dataclass
class Manifest:
    nodes: list
    edge_transforms: dict = field(default_factory=dict)
    scene: str | None = None
    ground_truth: str | None = None
    base_dir: Path = field(default_factory=Path)

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ManifestError(f"cannot read manifest {path}: {exc}") from None
        nodes = []
        for rec in data.get("nodes", []):
            try:
                tg = rec.get("to_global")
                nodes.append(NodeEntry(
                    int(rec["id"]), rec["grid"], rec["poses"],
                    Aabb(tuple(rec["domain"]["lo"]), tuple(rec["domain"]["hi"])),
                    [str(i) for i in rec["image_ids"]],
                    SimilarityTransform.from_list(tg) if tg is not None else None))
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"bad node record {rec}: {exc}") from None
        if not nodes:
            raise ManifestError("manifest lists no nodes")
        edges = {}
        for rec in data.get("edge_transforms", []):
            edges[(int(rec["i"]), int(rec["j"]))] = SimilarityTransform.from_list(rec["transform"])
        return cls(nodes, edges, data.get("scene"), data.get("ground_truth"), path.parent)

    def to_dict(self) -> dict:
        nodes = []
        for n in self.nodes:
            rec = {"id": n.id, "grid": n.grid, "poses": n.poses,
                   "domain": {"lo": list(n.domain.lo), "hi": list(n.domain.hi)},
                   "image_ids": list(n.image_ids)}
            if n.to_global is not None:
                rec["to_global"] = n.to_global.to_list()
            nodes.append(rec)
        out = {"version": 1, "nodes": nodes}
        if self.edge_transforms:
            out["edge_transforms"] = [{"i": i, "j": j, "transform": t.to_list()}
                                      for (i, j), t in sorted(self.edge_transforms.items())]
        if self.scene:
            out["scene"] = self.scene
        if self.ground_truth:
            out["ground_truth"] = self.ground_truth
        return out

    def save(self, path) -> None:
        """Write the manifest; file references are rewritten relative to the new location."""
        path = Path(path)
        target_dir = path.parent.resolve()

        def rel(p):
            if p is None:
                return None
            full = (self.base_dir / p).resolve()
            try:
                return str(full.relative_to(target_dir))
            except ValueError:
                return str(full)

        clone = Manifest(
            [NodeEntry(n.id, rel(n.grid), rel(n.poses), n.domain, n.image_ids, n.to_global)
             for n in self.nodes],
            dict(self.edge_transforms), rel(self.scene), rel(self.ground_truth), target_dir)
        path.write_text(json.dumps(clone.to_dict(), indent=1) + "\n")

    def resolve(self, rel: str) -> Path:
        return self.base_dir / rel

    def load_nodes(self) -> list[GraphNode]:
        out = []
        for n in self.nodes:
            fld = read_grid(self.resolve(n.grid))
            if fld.domain != n.domain:
                raise ManifestError(f"node {n.id}: grid domain does not match manifest domain")
            poses = read_poses(self.resolve(n.poses))
            kw = {"to_global": n.to_global} if n.to_global is not None else {}
            out.append(GraphNode(n.id, n.domain, frozenset(n.image_ids), fld, poses, **kw))
        return out

    def load_ground_truth(self) -> dict[int, SimilarityTransform] | None:
        if not self.ground_truth:
            return None
        return read_ground_truth(self.resolve(self.ground_truth))
