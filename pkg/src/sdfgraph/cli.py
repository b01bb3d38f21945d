"""Command-line entry points (``sdfgraph <subcommand>``)."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .blend import BlendConfig, GlobalField, seam_profile
from .graph import SdfGraph, propagate_transforms
from .manifest import Manifest
from .mesh import evaluate_mesh, export_mesh, marching_cubes, read_mesh
from .pipeline import (PIPELINE_REFINE, PipelineConfig, PipelineError, Perturbation,
                       analytic_surface_points, register_edge, run_pipeline, shared_views)
from .register import RegistrationError, init_registration
from .render import RenderConfig, render_image, write_pgm, write_ppm
from .scene import (STREAM_RAYS, Disturbance, SceneSpec, conflicting_planes, gen, scene_presets,
                    substream_seed)
from .transforms import SimilarityTransform


class CliError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")


def _load_graph(path, stage: str):
    try:
        manifest = Manifest.load(path)
        nodes = manifest.load_nodes()
        return manifest, SdfGraph(nodes)
    except (OSError, ValueError) as exc:
        raise CliError(stage, str(exc)) from None


def _refine_cfg(args) -> object:
    kw = {}
    if args.iters is not None:
        kw["iterations"] = args.iters
    if args.lr0 is not None:
        kw["lr0"] = args.lr0
    if args.rays is not None:
        kw["rays_per_iter"] = args.rays
    if args.loss is not None:
        kw["loss"] = args.loss
    return dataclasses.replace(PIPELINE_REFINE, **kw)


def _global_field(manifest: Manifest, graph: SdfGraph, args) -> tuple[SdfGraph, GlobalField]:
    missing = [n.id for n in manifest.nodes if n.to_global is None]
    if missing:
        raise CliError("blend", f"manifest has no to_global for nodes {missing}; run propagate first")
    graph = graph.with_transforms({n.id: n.to_global for n in manifest.nodes})
    return graph, GlobalField.from_graph(graph, config=BlendConfig(args.beta), mode=args.blend)


def _write_transform(tr: SimilarityTransform, path) -> None:
    text = json.dumps({"transform": tr.to_list()}) + "\n"
    if path:
        Path(path).write_text(text)
    print(" ".join(repr(v) for v in tr.to_list()))


def _read_transform(path) -> SimilarityTransform:
    return SimilarityTransform.from_list(json.loads(Path(path).read_text())["transform"])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> None:
    if args.preset == "conflicting-planes":
        path = conflicting_planes(args.out, overlap=args.overlap or 0.2)
        print(f"manifest={path} nodes=2 cameras=1")
        return
    if args.spec:
        spec = SceneSpec.load(args.spec)
    else:
        spec = scene_presets()[args.preset]
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.counts:
        kw["counts"] = tuple(args.counts)
    if args.overlap is not None:
        kw["overlap"] = (args.overlap,) * 3
    if args.dims:
        kw["dims"] = (args.dims,) * 3
    if args.no_disturbance:
        kw["disturbance"] = Disturbance(0.0, 0.0, 0.0)
    try:
        spec = dataclasses.replace(spec, **kw)
        g = gen(spec, args.out)
    except ValueError as exc:
        raise CliError("gen", str(exc)) from None
    print(f"manifest={g.manifest_path} nodes={len(g.cells)} cameras={g.camera_count}")


def cmd_pipeline(args) -> None:
    render = RenderConfig(n_samples=args.samples)
    cfg = PipelineConfig(args.manifest, args.out, root=args.root, refine=_refine_cfg(args),
                         blend=BlendConfig(args.beta), blend_mode=args.blend,
                         mc_resolution=args.mc_res, seed=args.seed, render=render,
                         perturb=Perturbation() if args.perturb else None,
                         write_renders=not args.no_renders)
    res = run_pipeline(cfg)
    print(f"mesh={res.out / 'mesh.ply'} vertices={len(res.mesh.vertices)} "
          f"triangles={len(res.mesh.triangles)}")
    if res.report is not None:
        sys.stdout.write(res.report.to_text())


def _edge_nodes(graph: SdfGraph, edge, stage: str):
    i, j = edge
    if not (0 <= i < len(graph) and 0 <= j < len(graph)) or i == j:
        raise CliError(stage, f"invalid edge ({i}, {j})")
    return graph.node(i), graph.node(j)


def cmd_register_init(args) -> None:
    _, graph = _load_graph(args.manifest, "register-init")
    ni, nj = _edge_nodes(graph, args.edge, "register-init")
    views = shared_views(ni, nj)
    try:
        tr = init_registration([(v.pose_i, v.pose_j) for v in views])
    except RegistrationError as exc:
        raise CliError("register-init", f"edge ({ni.id}, {nj.id}): {exc}") from None
    _write_transform(tr, args.out)


def cmd_register_refine(args) -> None:
    _, graph = _load_graph(args.manifest, "register-refine")
    ni, nj = _edge_nodes(graph, args.edge, "register-refine")
    cfg = dataclasses.replace(_refine_cfg(args),
                              seed=substream_seed(args.seed, STREAM_RAYS, ni.id, nj.id))
    er = register_edge(ni, nj, cfg, RenderConfig(n_samples=args.samples))
    if args.trace:
        er.refine.write_trace(args.trace)
    _write_transform(er.transform, args.out)


def cmd_propagate(args) -> None:
    manifest, graph = _load_graph(args.manifest, "propagate")
    try:
        mst = graph.minimum_spanning_tree()
        placed = propagate_transforms(graph, mst, args.root, manifest.edge_transforms)
    except ValueError as exc:
        raise CliError("propagate", str(exc)) from None
    for entry in manifest.nodes:
        entry.to_global = placed.node(entry.id).to_global
    manifest.save(args.out)
    print(f"manifest={args.out}")


def cmd_blend_mesh(args) -> None:
    manifest, graph = _load_graph(args.manifest, "blend-mesh")
    graph, g = _global_field(manifest, graph, args)
    mesh = marching_cubes(g, g.global_bounds(), args.mc_res)
    export_mesh(mesh, args.out)
    print(f"mesh={args.out} vertices={len(mesh.vertices)} triangles={len(mesh.triangles)}")


def cmd_render(args) -> None:
    _, graph = _load_graph(args.manifest, "render")
    if not 0 <= args.node < len(graph):
        raise CliError("render", f"unknown node {args.node}")
    node = graph.node(args.node)
    poses = node.pose_map()
    if args.image not in poses:
        raise CliError("render", f"node {args.node} has no pose for image {args.image!r}")
    pose, intr = poses[args.image]
    img = render_image(node.field, pose, intr, RenderConfig(n_samples=args.samples))
    write_ppm(args.out, img.color)
    if args.depth:
        d = img.depth
        scale = d.max() if d.max() > 0 else 1.0
        write_pgm(args.depth, d / scale)
    print(f"image={args.out}")


def cmd_edit(args) -> None:
    manifest, graph = _load_graph(args.manifest, "edit")
    graph, g = _global_field(manifest, graph, args)
    delta = SimilarityTransform.from_euler(np.radians(args.rotate_deg), args.translate, args.scale)
    try:
        g = g.edit_node(args.node, delta)
    except (KeyError, ValueError) as exc:
        raise CliError("edit", str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for entry in manifest.nodes:
        if entry.id == args.node:
            entry.to_global = delta @ entry.to_global
    manifest.save(out / "edited_manifest.json")
    mesh = marching_cubes(g, g.global_bounds(), args.mc_res)
    export_mesh(mesh, out / "mesh.ply")
    print(f"mesh={out / 'mesh.ply'} vertices={len(mesh.vertices)} triangles={len(mesh.triangles)}")


def cmd_eval(args) -> None:
    try:
        mesh = read_mesh(args.mesh)
        if args.reference.endswith(".json"):
            spec = SceneSpec.load(args.reference)
            ref = analytic_surface_points(spec.scene, spec.bbox, args.samples, seed=args.seed)
        else:
            ref = read_mesh(args.reference)
    except (OSError, ValueError) as exc:
        raise CliError("eval", str(exc)) from None
    report = evaluate_mesh(mesh, ref, args.threshold, n_samples=args.samples, seed=args.seed)
    text = report.to_text()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)


def cmd_seam_scan(args) -> None:
    manifest, graph = _load_graph(args.manifest, "seam-scan")
    graph, g = _global_field(manifest, graph, args)
    prof = seam_profile(g, args.start, args.end, args.n)
    if args.out:
        prof.to_csv(args.out)
    loc = ",".join(repr(float(v)) for v in prof.location)
    print(f"blend={args.blend} max_jump={prof.max_jump!r} location={loc}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_refine_flags(p) -> None:
    p.add_argument("--iters", type=int, help="maximum refinement iterations")
    p.add_argument("--lr0", type=float, help="initial learning rate")
    p.add_argument("--rays", type=int, help="rays per iteration")
    p.add_argument("--loss", choices=("l1", "l2"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=64, help="samples per ray")


def _add_blend_flags(p) -> None:
    p.add_argument("--beta", type=float, default=10.0)
    p.add_argument("--blend", choices=("softmax", "min"), default="softmax")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sdfgraph", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic multi-node scene")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=[*sorted(scene_presets()), "conflicting-planes"],
                     default="sphere-pair")
    src.add_argument("--spec", help="scene spec JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--counts", type=int, nargs=3, metavar=("NX", "NY", "NZ"))
    p.add_argument("--overlap", type=float, help="overlap fraction per axis, in (0, 0.5)")
    p.add_argument("--dims", type=int, help="grid vertices per axis")
    p.add_argument("--no-disturbance", action="store_true", help="identity local frames")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("pipeline", help="register, propagate, blend, mesh and evaluate")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--root", type=int, default=0)
    p.add_argument("--mc-res", type=int, default=128)
    p.add_argument("--perturb", action="store_true",
                   help="perturb each initial transform by 2 deg / 2%% / 1%%")
    p.add_argument("--no-renders", action="store_true")
    _add_refine_flags(p)
    _add_blend_flags(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("register-init", help="closed-form transform for one edge")
    p.add_argument("--manifest", required=True)
    p.add_argument("--edge", type=int, nargs=2, required=True, metavar=("I", "J"))
    p.add_argument("--out", help="write the transform as JSON")
    p.set_defaults(func=cmd_register_init)

    p = sub.add_parser("register-refine", help="init plus photometric refinement for one edge")
    p.add_argument("--manifest", required=True)
    p.add_argument("--edge", type=int, nargs=2, required=True, metavar=("I", "J"))
    p.add_argument("--out", help="write the transform as JSON")
    p.add_argument("--trace", help="write the loss trace CSV")
    _add_refine_flags(p)
    p.set_defaults(func=cmd_register_refine)

    p = sub.add_parser("propagate", help="place nodes from the manifest's edge transforms")
    p.add_argument("--manifest", required=True)
    p.add_argument("--root", type=int, default=0)
    p.add_argument("--out", required=True, help="output manifest path")
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("blend-mesh", help="mesh the blended field of a registered manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mc-res", type=int, default=128)
    p.add_argument("--out", required=True, help="mesh path (.ply or .obj)")
    _add_blend_flags(p)
    p.set_defaults(func=cmd_blend_mesh)

    p = sub.add_parser("render", help="render one node at one of its cameras")
    p.add_argument("--manifest", required=True)
    p.add_argument("--node", type=int, required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="PPM path")
    p.add_argument("--depth", help="optional normalized depth PGM path")
    p.add_argument("--samples", type=int, default=128)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("edit", help="apply a delta transform to a node and re-mesh")
    p.add_argument("--manifest", required=True)
    p.add_argument("--node", type=int, required=True)
    p.add_argument("--translate", type=float, nargs=3, default=[0.0, 0.0, 0.0])
    p.add_argument("--rotate-deg", type=float, nargs=3, default=[0.0, 0.0, 0.0],
                   metavar=("PHI", "THETA", "PSI"), help="Euler ZYX angles")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--mc-res", type=int, default=128)
    p.add_argument("--out", required=True, help="output directory")
    _add_blend_flags(p)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("eval", help="chamfer / F-score of a mesh against a reference")
    p.add_argument("--mesh", required=True)
    p.add_argument("--reference", required=True, help="mesh file or scene JSON")
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--samples", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the report (key=value lines)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("seam-scan", help="largest jump of the global field along a segment")
    p.add_argument("--manifest", required=True)
    p.add_argument("--from", dest="start", type=float, nargs=3, required=True)
    p.add_argument("--to", dest="end", type=float, nargs=3, required=True)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--out", help="CSV of the sampled profile")
    _add_blend_flags(p)
    p.set_defaults(func=cmd_seam_scan)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CliError, PipelineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
