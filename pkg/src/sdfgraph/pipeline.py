"""End-to-end orchestration: register -> propagate -> blend -> mesh -> evaluate."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .blend import BlendConfig, GlobalField
from .fields import Aabb, AnalyticSdf
from .graph import GraphNode, SdfGraph, propagate_transforms
from .manifest import Manifest
from .mesh import TriangleMesh, evaluate_mesh, export_mesh, marching_cubes, sample_surface
from .register import (RefineConfig, RefineResult, SharedView, compute_masks, init_registration,
                       psnr, refine_registration, transform_pose)
from .render import RenderConfig, error_map, render_image, write_pgm, write_ppm
from .scene import STREAM_PERTURB, STREAM_RAYS, SceneSpec, substream, substream_seed
from .transforms import SimilarityTransform

log = logging.getLogger(__name__)

# refinement defaults used by the pipeline (see README for why lr0 differs from RefineConfig)
PIPELINE_REFINE = RefineConfig(lr0=3e-3, iterations=5000, eval_every=25, patience=4,
                               min_improvement=0.02)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class Perturbation:
    """Deliberate error injected into each initial edge transform (for evaluating refinement)."""

    rotation_deg: float = 2.0
    translation_frac: float = 0.02  # of the node-i domain's largest side
    scale_frac: float = 0.01

    def sample(self, rng: np.random.Generator, extent: float) -> SimilarityTransform:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        R = Rotation.from_rotvec(axis * math.radians(self.rotation_deg)).as_matrix()
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        return SimilarityTransform(R, direction * self.translation_frac * extent,
                                   1.0 + sign * self.scale_frac)


@dataclass
class PipelineConfig:
    manifest: Path
    out: Path
    root: int = 0
    refine: RefineConfig = PIPELINE_REFINE
    blend: BlendConfig = field(default_factory=BlendConfig)
    blend_mode: str = "softmax"
    mc_resolution: int = 128
    region: Aabb | None = None
    seed: int = 0
    render: RenderConfig = field(default_factory=lambda: RenderConfig(n_samples=64))
    mask_tau: float = 0.5
    perturb: Perturbation | None = None
    write_renders: bool = True
    eval_samples: int = 200_000

    def __post_init__(self):
        self.manifest = Path(self.manifest)
        self.out = Path(self.out)
        if self.mc_resolution < 2:
            raise ValueError("mesh resolution must be >= 2")


class RunLog:
    """Line-oriented ``key=value`` records."""

    def __init__(self, path: Path | None = None):
        self.path = path
        self.lines: list[str] = []

    def record(self, **kv) -> None:
        parts = []
        for k, v in kv.items():
            if isinstance(v, float):
                v = repr(v)
            elif isinstance(v, (tuple, list)):
                v = "-".join(str(x) for x in v)
            parts.append(f"{k}={v}")
        line = " ".join(parts)
        self.lines.append(line)
        log.info(line)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(line + "\n")


@dataclass
class EdgeResult:
    i: int
    j: int
    initial: SimilarityTransform
    transform: SimilarityTransform
    refine: RefineResult | None
    views: list
    masks: list
    source: str


@dataclass
class PipelineResult:
    graph: SdfGraph
    mst: list
    edges: dict
    global_field: GlobalField
    mesh: TriangleMesh
    report: object | None
    out: Path
    transform_errors: dict


def shared_views(node_i: GraphNode, node_j: GraphNode) -> list[SharedView]:
    """Shared images with poses in both nodes, in sorted image-id order."""
    pi, pj = node_i.pose_map(), node_j.pose_map()
    ids = sorted((node_i.image_ids & node_j.image_ids) & pi.keys() & pj.keys())
    return [SharedView(k, pi[k][0], pj[k][0], pi[k][1]) for k in ids]


def register_edge(node_i: GraphNode, node_j: GraphNode, refine_cfg: RefineConfig,
                  render_cfg: RenderConfig, perturbation: SimilarityTransform | None = None,
                  mask_tau: float = 0.5) -> EdgeResult:
    """Closed-form init then photometric refinement for one edge; the result maps j -> i."""
    views = shared_views(node_i, node_j)
    tag = f"edge ({node_i.id}, {node_j.id})"
    try:
        T0 = init_registration([(v.pose_i, v.pose_j) for v in views])
    except ValueError as exc:
        raise PipelineError("register-init", f"{tag}: {exc}") from None
    if perturbation is not None:
        T0 = perturbation @ T0
    try:
        masks = compute_masks(node_i.field, node_j.field, T0, views, render_cfg, mask_tau)
        res = refine_registration(node_j.field, views, masks, T0, refine_cfg, render_cfg)
    except ValueError as exc:
        raise PipelineError("register-refine", f"{tag}: {exc}") from None
    return EdgeResult(node_i.id, node_j.id, T0, res.transform, res, views, masks, "registered")


def analytic_surface_points(sdf: AnalyticSdf, region: Aabb, n: int, seed: int = 0,
                            resolution: int = 128, steps: int = 4) -> np.ndarray:
    """Points on the analytic zero set: mesh samples pulled onto the surface by Newton steps."""
    mesh = marching_cubes(sdf, region, resolution)
    pts = sample_surface(mesh, n, seed)
    h = 1e-6
    eye = np.eye(3) * h
    for _ in range(steps):
        f = sdf(pts)
        g = np.stack([(sdf(pts + eye[a]) - sdf(pts - eye[a])) / (2 * h) for a in range(3)], axis=1)
        norm2 = np.maximum((g * g).sum(axis=1), 1e-12)
        pts = pts - (f / norm2)[:, None] * g
    return pts


def _write_edge_renders(outdir: Path, node_j: GraphNode, er: EdgeResult, cfg: RenderConfig,
                        runlog: RunLog) -> None:
    v, m = er.views[0], er.masks[0]
    target = render_image(node_j.field, v.pose_j, v.intr, cfg).color
    stem = f"edge_{er.i}_{er.j}"
    write_ppm(outdir / f"{stem}_target.ppm", target)
    for name, tr in (("initial", er.initial), ("final", er.transform)):
        img = render_image(node_j.field, transform_pose(v.pose_i, tr)[0], v.intr, cfg).color
        write_ppm(outdir / f"{stem}_{name}.ppm", img)
        write_pgm(outdir / f"{stem}_{name}_error.pgm", error_map(img, target))
        mask = m.mask if m.count else None
        runlog.record(stage="renders", edge=(er.i, er.j), image=v.image_id, which=name,
                      psnr_vs_target=psnr(img, target, mask))


def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.log").unlink(missing_ok=True)
    runlog = RunLog(out / "run.log")
    timings = []

    def stage_done(name, t0):
        timings.append(f"stage={name} elapsed_s={time.perf_counter() - t0:.3f}")

    t0 = time.perf_counter()
    try:
        manifest = Manifest.load(cfg.manifest)
        nodes = manifest.load_nodes()
    except (OSError, ValueError) as exc:
        raise PipelineError("load", str(exc)) from None
    runlog.record(stage="load", manifest=str(cfg.manifest), nodes=len(nodes), seed=cfg.seed)

    try:
        graph = SdfGraph(nodes)
        mst = graph.minimum_spanning_tree()
    except ValueError as exc:
        raise PipelineError("graph", str(exc)) from None
    if not 0 <= cfg.root < len(graph):
        raise PipelineError("graph", f"root node {cfg.root} not in graph")
    runlog.record(stage="graph", edges=len(graph.edges), mst_edges=len(mst),
                  mst=";".join(f"{e.i}-{e.j}" for e in mst))
    stage_done("load+graph", t0)

    # registration
    edges: dict[tuple[int, int], EdgeResult] = {}
    (out / "traces").mkdir(exist_ok=True)
    if cfg.write_renders and mst:
        (out / "renders").mkdir(exist_ok=True)
    gt = manifest.load_ground_truth()
    for e in mst:
        t0 = time.perf_counter()
        ni, nj = graph.node(e.i), graph.node(e.j)
        if (e.i, e.j) in manifest.edge_transforms:
            tr = manifest.edge_transforms[(e.i, e.j)]
            edges[(e.i, e.j)] = EdgeResult(e.i, e.j, tr, tr, None, [], [], "manifest")
            runlog.record(stage="register", edge=(e.i, e.j), source="manifest")
            continue
        pert = None
        if cfg.perturb is not None:
            extent = float(ni.domain.size.max())
            pert = cfg.perturb.sample(substream(cfg.seed, STREAM_PERTURB, e.i, e.j), extent)
        rcfg = dataclasses.replace(cfg.refine, seed=substream_seed(cfg.seed, STREAM_RAYS, e.i, e.j))
        er = register_edge(ni, nj, rcfg, cfg.render, pert, cfg.mask_tau)
        edges[(e.i, e.j)] = er
        er.refine.write_trace(out / "traces" / f"edge_{e.i}_{e.j}.csv")
        rec = dict(stage="register", edge=(e.i, e.j), source="registered", shared=len(er.views),
                   mask_pixels=sum(m.count for m in er.masks),
                   iterations=er.refine.iterations_run, best_iteration=er.refine.best_iteration,
                   initial_loss=er.refine.initial_loss, final_loss=er.refine.final_loss,
                   rejected_steps=er.refine.rejected_steps,
                   transform=",".join(repr(v) for v in er.transform.to_list()))
        if gt is not None:
            true = gt[e.i].inverse() @ gt[e.j]
            ei, ef = er.initial.errors_to(true), er.transform.errors_to(true)
            rec.update(init_rot_err_deg=ei["rotation_deg"], final_rot_err_deg=ef["rotation_deg"],
                       init_trans_err=ei["translation"], final_trans_err=ef["translation"],
                       init_scale_err=ei["scale_rel"], final_scale_err=ef["scale_rel"])
        runlog.record(**rec)
        if cfg.write_renders:
            _write_edge_renders(out / "renders", nj, er, cfg.render, runlog)
        stage_done(f"register {e.i}-{e.j}", t0)

    # propagation
    t0 = time.perf_counter()
    try:
        graph = propagate_transforms(graph, mst, cfg.root, {k: v.transform for k, v in edges.items()})
    except ValueError as exc:
        raise PipelineError("propagate", str(exc)) from None
    transform_errors = {}
    for n in graph.nodes:
        rec = dict(stage="propagate", node=n.id,
                   to_global=",".join(repr(v) for v in n.to_global.to_list()))
        if gt is not None:
            err = n.to_global.errors_to(gt[cfg.root].inverse() @ gt[n.id])
            transform_errors[n.id] = err
            rec.update(rot_err_deg=err["rotation_deg"], trans_err=err["translation"],
                       scale_err=err["scale_rel"])
        runlog.record(**rec)
    registered = Manifest(manifest.nodes, {k: v.transform for k, v in edges.items()},
                          manifest.scene, manifest.ground_truth, manifest.base_dir)
    for entry in registered.nodes:
        entry.to_global = graph.node(entry.id).to_global
    registered.save(out / "registered_manifest.json")
    stage_done("propagate", t0)

    # blending and meshing
    t0 = time.perf_counter()
    gfield = GlobalField.from_graph(graph, config=cfg.blend, mode=cfg.blend_mode)
    region = cfg.region or gfield.global_bounds()
    try:
        mesh = marching_cubes(gfield, region, cfg.mc_resolution)
    except ValueError as exc:
        raise PipelineError("mesh", str(exc)) from None
    if mesh.is_empty:
        raise PipelineError("mesh", "marching cubes produced an empty mesh")
    export_mesh(mesh, out / "mesh.ply")
    runlog.record(stage="mesh", blend=cfg.blend_mode, beta=cfg.blend.beta,
                  resolution=cfg.mc_resolution, vertices=len(mesh.vertices),
                  triangles=len(mesh.triangles), components=len(mesh.components()))
    stage_done("blend+mesh", t0)

    # evaluation against the analytic scene, in the global frame
    t0 = time.perf_counter()
    report = None
    if gt is not None and manifest.scene:
        report = evaluate_against_scene(mesh, gfield, region, cfg, manifest, gt, transform_errors)
        (out / "report.txt").write_text(report.to_text())
        (out / "metrics.csv").write_text(report.csv_header() + "\n" + report.csv_row() + "\n")
        runlog.record(stage="eval", **{k: v for k, v in report.as_dict().items()})
    else:
        runlog.record(stage="eval", skipped="no scene or ground truth in manifest")
    stage_done("eval", t0)
    (out / "timing.log").write_text("\n".join(timings) + "\n")
    return PipelineResult(graph, mst, edges, gfield, mesh, report, out, transform_errors)


def evaluate_against_scene(mesh: TriangleMesh, gfield: GlobalField, region: Aabb,
                           cfg: PipelineConfig, manifest: Manifest, gt: dict,
                           transform_errors: dict):
    spec = SceneSpec.load(manifest.resolve(manifest.scene))
    G_root = gt[cfg.root]
    mesh_global = TriangleMesh(G_root.apply(mesh.vertices), mesh.triangles)
    ref_pts = analytic_surface_points(spec.scene, spec.bbox, cfg.eval_samples,
                                      seed=substream_seed(cfg.seed, STREAM_RAYS, 1 << 20))
    cell = float((region.size / (cfg.mc_resolution - 1)).max()) * G_root.distance_scale
    voxel = max(float(e.field.sdf_grid.spacing.max()) * gt[e.node_id].distance_scale
                for e in gfield.entries)

    def blended_global(p):
        return gfield(G_root.apply_inverse(p)) * G_root.distance_scale

    extra = {"cell_size": cell, "voxel_size": voxel}
    if transform_errors:
        extra["max_rot_err_deg"] = max(e["rotation_deg"] for e in transform_errors.values())
        extra["max_trans_err"] = max(e["translation"] for e in transform_errors.values())
        extra["max_scale_err"] = max(e["scale_rel"] for e in transform_errors.values())
    return evaluate_mesh(mesh_global, ref_pts, 2 * cell, sdf_points=ref_pts,
                         sdf_evaluator=blended_global, n_samples=cfg.eval_samples,
                         seed=cfg.seed, **extra)

