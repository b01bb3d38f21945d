import dataclasses
import json
import logging

import numpy as np
import pytest

from sdfgraph.fields import Aabb, AnalyticSdf, read_grid
from sdfgraph.graph import SdfGraph
from sdfgraph.manifest import Manifest, ManifestError, read_ground_truth, read_poses
from sdfgraph.register import transform_pose
from sdfgraph.scene import (CameraRig, Disturbance, SceneSpec, conflicting_planes, gen,
                            partition, partition_axis, scene_presets, substream)
from sdfgraph.transforms import SimilarityTransform

TINY_RIG = CameraRig(per_cell=2, per_overlap=2, width=8, height=8)


def test_partition_two_cells():
    spec = scene_presets()["sphere-pair"]
    cells = partition(spec)
    assert [c[0] for c in cells] == [(0, 0, 0), (1, 0, 0)]
    a, b = cells[0][1], cells[1][1]
    assert a.lo == (-1.0, -1.0, -1.0) and a.hi == pytest.approx((0.2, 1.0, 1.0), abs=1e-15)
    assert b.lo == pytest.approx((-0.2, -1.0, -1.0), abs=1e-15) and b.hi == (1.0, 1.0, 1.0)


@pytest.mark.parametrize("count", [1, 2, 3, 5])
def test_partition_axis_covers(count):
    cells = partition_axis(-2.0, 3.0, count, 0.1)
    assert cells[0][0] == -2.0 and cells[-1][1] == 3.0
    for (a0, a1), (b0, b1) in zip(cells, cells[1:]):
        assert a1 - b0 == pytest.approx(0.1 * 5.0)


@pytest.mark.parametrize("bad", [0.0, 0.5, -0.1, 0.7])
def test_overlap_out_of_range(bad):
    with pytest.raises(ValueError, match="overlap"):
        partition_axis(0, 1, 2, bad)
    with pytest.raises(ValueError, match="overlap"):
        dataclasses.replace(scene_presets()["sphere-pair"], overlap=(bad,) * 3)


def test_bad_counts_and_disturbance():
    with pytest.raises(ValueError):
        dataclasses.replace(scene_presets()["sphere-pair"], counts=(0, 1, 1))
    with pytest.raises(ValueError):
        Disturbance(scale=1.0)
    with pytest.raises(ValueError):
        Disturbance(rotation_deg=-1.0)


def test_substreams_independent():
    a = substream(7, 0).uniform(size=4)
    assert np.array_equal(a, substream(7, 0).uniform(size=4))
    assert not np.array_equal(a, substream(7, 1).uniform(size=4))
    assert not np.array_equal(a, substream(8, 0).uniform(size=4))


def test_spec_roundtrip(tmp_path):
    spec = scene_presets()["campus"]
    spec.save(tmp_path / "s.json")
    back = SceneSpec.load(tmp_path / "s.json")
    assert back.to_dict() == spec.to_dict()
    pts = np.random.default_rng(0).uniform(-2, 2, size=(100, 3))
    assert np.array_equal(back.scene(pts), spec.scene(pts))


def test_zero_disturbance_identity(flat_scene):
    gt = read_ground_truth(flat_scene.manifest_path.parent / "ground_truth.txt")
    for tr in gt.values():
        assert tr.max_entry_error(SimilarityTransform.identity()) == 0.0


def test_generated_layout(small_scene):
    m = Manifest.load(small_scene.manifest_path)
    gt = m.load_ground_truth()
    assert len(m.nodes) == 2
    for entry, (_, box) in zip(m.nodes, small_scene.cells):
        fld = read_grid(m.resolve(entry.grid))
        assert fld.domain == entry.domain
        # the disturbed domain, mapped back to global, contains the cell box
        corners = gt[entry.id].apply(entry.domain.corners())
        assert (corners.min(axis=0) <= np.asarray(box.lo) + 1e-9).all()
        assert (corners.max(axis=0) >= np.asarray(box.hi) - 1e-9).all()
        # local field is the scene expressed in the local frame
        G = gt[entry.id]
        x = G.apply_inverse(np.asarray(box.center)[None] + np.array([[0.1, 0.05, -0.02]]))
        spec = SceneSpec.load(m.resolve(m.scene))
        assert fld.sdf(x)[0] == pytest.approx(G.s * spec.scene(G.apply(x))[0], abs=0.02)


def test_shared_images_in_both_nodes(small_scene):
    m = Manifest.load(small_scene.manifest_path)
    ids = [set(e.image_ids) for e in m.nodes]
    shared = ids[0] & ids[1]
    # cameras aimed at the overlap centre land in both nodes
    assert len(shared) >= 3
    p0 = {k: p for k, p, _ in read_poses(m.resolve(m.nodes[0].poses))}
    p1 = {k: p for k, p, _ in read_poses(m.resolve(m.nodes[1].poses))}
    gt = m.load_ground_truth()
    true = gt[0].inverse() @ gt[1]
    for k in shared:
        mapped = transform_pose(p0[k], true)[0]
        assert np.allclose(mapped.R, p1[k].R, atol=1e-12) and np.allclose(mapped.T, p1[k].T, atol=1e-12)


def test_campus_grid_adjacency(tmp_path):
    spec = dataclasses.replace(scene_presets()["campus"], dims=(9, 9, 9), rig=TINY_RIG)
    g = gen(spec, tmp_path)
    graph = SdfGraph(Manifest.load(g.manifest_path).load_nodes())
    expected = set()
    for iy in range(5):
        for ix in range(5):
            k = iy * 5 + ix
            if ix < 4:
                expected.add((k, k + 1))
            if iy < 4:
                expected.add((k, k + 5))
    assert {e.endpoints for e in graph.edges} == expected
    assert len(graph.edges) == 40
    assert len(graph.minimum_spanning_tree()) == 24


def test_empty_node_warning(tmp_path, caplog):
    spec = dataclasses.replace(scene_presets()["sphere-pair"], dims=(9, 9, 9), rig=TINY_RIG,
                               scene=AnalyticSdf.sphere((0.8, 0, 0), 0.1))
    with caplog.at_level(logging.WARNING):
        gen(spec, tmp_path)
    assert "empty node content" in caplog.text


def test_gen_deterministic(tmp_path):
    spec = dataclasses.replace(scene_presets()["sphere-pair"], dims=(9, 9, 9), rig=TINY_RIG)
    gen(spec, tmp_path / "a")
    gen(spec, tmp_path / "b")
    for name in ("manifest.json", "node_000.sdfg", "node_001.sdfg", "poses_000.json",
                 "ground_truth.txt", "scene.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_conflicting_planes(tmp_path):
    path = conflicting_planes(tmp_path)
    m = Manifest.load(path)
    assert m.nodes[0].domain == Aabb((-1, -1, -1), (0.2, 1, 1))
    assert m.nodes[1].domain.lo[0] == pytest.approx(-0.2)
    assert set(m.edge_transforms) == {(0, 1)}


def test_manifest_roundtrip_and_relocation(small_scene, tmp_path):
    m = Manifest.load(small_scene.manifest_path)
    m.edge_transforms[(0, 1)] = SimilarityTransform.from_euler((0.1, 0.2, 0.3), (1, 2, 3), 1.5)
    m.save(tmp_path / "moved.json")
    back = Manifest.load(tmp_path / "moved.json")
    assert back.edge_transforms[(0, 1)].max_entry_error(m.edge_transforms[(0, 1)]) == 0.0
    nodes = back.load_nodes()
    assert [n.id for n in nodes] == [0, 1]


def test_manifest_errors(tmp_path):
    with pytest.raises(ManifestError):
        Manifest.load(tmp_path / "missing.json")
    (tmp_path / "empty.json").write_text(json.dumps({"version": 1, "nodes": []}))
    with pytest.raises(ManifestError, match="no nodes"):
        Manifest.load(tmp_path / "empty.json")
    (tmp_path / "bad.json").write_text(json.dumps({"nodes": [{"id": 0}]}))
    with pytest.raises(ManifestError, match="bad node record"):
        Manifest.load(tmp_path / "bad.json")
