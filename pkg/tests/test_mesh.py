import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import brute_nearest
from sdfgraph.fields import Aabb, AnalyticSdf
from sdfgraph.mesh import (MetricReport, TriangleMesh, chamfer, closest_points_on_triangles,
                           evaluate_mesh, export_obj, export_ply, f_score, marching_cubes,
                           mean_abs_sdf, nearest_distances, point_mesh_distances, read_mesh,
                           read_obj, read_ply, sample_surface, triangle_table)

CUBE = Aabb((-1, -1, -1), (1, 1, 1))
SPHERE = AnalyticSdf.sphere((0, 0, 0), 0.5)


def sphere_points(rng, n, r, center=(0, 0, 0)):
    v = rng.normal(size=(n, 3))
    return np.asarray(center) + r * v / np.linalg.norm(v, axis=1, keepdims=True)


@pytest.fixture(scope="module")
def sphere64():
    return marching_cubes(SPHERE, CUBE, 64)


def test_triangle_table_has_256_cases():
    table = triangle_table()
    assert len(table) == 256 and table[0] == () and table[255] == ()
    assert all(table[c] for c in range(1, 255))
    assert all(0 <= e < 12 for case in table for tri in case for e in tri)


def test_sphere_vertices_within_cell_diagonal(sphere64):
    diag = math.sqrt(3) * 2 / 63
    r = np.linalg.norm(sphere64.vertices, axis=1)
    assert np.abs(r - 0.5).max() <= diag


def test_constant_field_gives_empty_mesh():
    assert marching_cubes(lambda p: np.ones(len(p)), CUBE, 8).is_empty


def test_plane_exact():
    m = marching_cubes(lambda p: p[:, 2] - 0.25, CUBE, (9, 7, 12))
    assert not m.is_empty and np.abs(m.vertices[:, 2] - 0.25).max() <= 1e-9


def test_resolution_validation():
    with pytest.raises(ValueError):
        marching_cubes(SPHERE, CUBE, (1, 8, 8))


def test_watertight_and_oriented(sphere64):
    counts = sphere64.edge_use_counts()
    assert set(counts.values()) == {2}
    # consistent outward orientation: signed volume is positive and close to 4/3 pi r^3
    v = sphere64.vertices[sphere64.triangles]
    vol = np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6
    assert vol == pytest.approx(4 / 3 * math.pi * 0.125, rel=0.02)
    assert len(sphere64.components()) == 1


@given(st.floats(-0.6, 0.6), st.floats(-0.6, 0.6), st.floats(-0.6, 0.6), st.floats(0.15, 0.35))
def test_watertight_random_spheres(cx, cy, cz, r):
    m = marching_cubes(AnalyticSdf.sphere((cx, cy, cz), r), CUBE, 24)
    assert set(m.edge_use_counts().values()) == {2}


def test_deterministic(sphere64):
    again = marching_cubes(SPHERE, CUBE, 64)
    assert np.array_equal(again.vertices, sphere64.vertices)
    assert np.array_equal(again.triangles, sphere64.triangles)


def test_mesh_invariants():
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 3]])
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 1]])


def test_obj_unit_triangle(tmp_path):
    m = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    export_obj(m, tmp_path / "t.obj")
    lines = (tmp_path / "t.obj").read_text().splitlines()
    assert sum(l.startswith("v ") for l in lines) == 3
    assert [l for l in lines if l.startswith("f")] == ["f 1 2 3"]


@pytest.mark.parametrize("ext", ["obj", "ply"])
@pytest.mark.parametrize("colored", [False, True])
def test_roundtrip(tmp_path, rng, ext, colored):
    v = rng.normal(size=(30, 3))
    t = np.array([rng.choice(30, 3, replace=False) for _ in range(40)])
    c = rng.uniform(size=(30, 3)) if colored else None
    m = TriangleMesh(v, t, c)
    path = tmp_path / f"m.{ext}"
    (export_obj if ext == "obj" else export_ply)(m, path)
    back = read_mesh(path)
    # float32 precision: within half an ulp of float32 relative rounding
    assert (np.abs(back.vertices - v) <= 2.0 ** -24 * np.abs(v) + 1e-300).all()
    assert np.array_equal(back.triangles, t)
    if colored and ext == "ply":
        assert np.abs(back.colors - c).max() <= 0.5 / 255 + 1e-12


def test_ply_header_counts(tmp_path, sphere64):
    export_ply(sphere64, tmp_path / "s.ply")
    raw = (tmp_path / "s.ply").read_bytes()
    head = raw[:raw.index(b"end_header\n")].decode()
    assert f"element vertex {len(sphere64.vertices)}" in head
    assert f"element face {len(sphere64.triangles)}" in head
    nv, nf = len(sphere64.vertices), len(sphere64.triangles)
    assert len(raw) - len(head) - len("end_header\n") == 12 * nv + 13 * nf
    (tmp_path / "bad.ply").write_bytes(raw[:-5])
    with pytest.raises(ValueError):
        read_ply(tmp_path / "bad.ply")


def test_sample_single_triangle():
    m = TriangleMesh([[0, 0, 0], [2, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    pts, face, bary = sample_surface(m, 1000, seed=1, return_barycentric=True)
    assert (bary >= 0).all() and np.allclose(bary.sum(axis=1), 1)
    assert (pts[:, 0] / 2 + pts[:, 1] <= 1 + 1e-12).all() and (pts >= -1e-15).all()


def test_sample_area_weighting():
    # areas 9 : 1
    m = TriangleMesh([[0, 0, 0], [3, 0, 0], [0, 3, 0], [5, 0, 0], [6, 0, 0], [5, 1, 0]],
                     [[0, 1, 2], [3, 4, 5]])
    _, face, _ = sample_surface(m, 10_000, seed=2, return_barycentric=True)
    n0 = int((face == 0).sum())
    sigma = math.sqrt(10_000 * 0.9 * 0.1)
    assert abs(n0 - 9000) <= 3 * sigma


def test_sample_reproducible_and_errors(sphere64):
    assert np.array_equal(sample_surface(sphere64, 50, 3), sample_surface(sphere64, 50, 3))
    with pytest.raises(ValueError):
        sample_surface(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3))), 5)


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 2000), st.integers(1, 2000))
def test_spatial_index_exact(seed, n, m):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(n, 3)), r.normal(size=(m, 3))
    assert np.array_equal(nearest_distances(a, b), brute_nearest(a, b))


def test_closest_point_not_beaten_by_dense_sampling(rng):
    for _ in range(20):
        tri = rng.normal(size=(3, 3))
        p = rng.normal(size=(1, 3)) * 2
        q = closest_points_on_triangles(p, tri[:1], tri[1:2], tri[2:3])
        uv = rng.uniform(size=(20000, 2))
        flip = uv.sum(axis=1) > 1
        uv[flip] = 1 - uv[flip]
        dense = tri[0] + uv[:, :1] * (tri[1] - tri[0]) + uv[:, 1:] * (tri[2] - tri[0])
        best = np.linalg.norm(dense - p, axis=1).min()
        got = np.linalg.norm(q - p)
        assert got <= best + 1e-12 and got >= best - 0.05


def test_point_mesh_distance_matches_brute(rng, sphere64):
    pts = rng.uniform(-0.8, 0.8, size=(300, 3))
    tri = sphere64.vertices[sphere64.triangles]
    n = len(tri)
    brute = np.empty(len(pts))
    for k, p in enumerate(pts):
        q = closest_points_on_triangles(np.repeat(p[None], n, 0), tri[:, 0], tri[:, 1], tri[:, 2])
        brute[k] = np.linalg.norm(q - p, axis=1).min()
    assert np.array_equal(point_mesh_distances(pts, sphere64), brute)


def test_mesh_vs_itself(sphere64):
    assert chamfer(sphere64, sphere64, n_samples=20_000) <= 1e-20
    assert f_score(sphere64, sphere64, 1e-3, n_samples=20_000) == 1.0


def test_concentric_spheres(rng):
    delta = 0.05
    src = sphere_points(rng, 5000, 0.5)
    dst = sphere_points(rng, 200_000, 0.5 + delta)
    assert chamfer(src, dst) == pytest.approx(delta ** 2, rel=0.05)
    assert chamfer(src, dst, squared=False) == pytest.approx(delta, rel=0.05)


def test_mean_abs_sdf_on_zero_set(rng):
    pts = sphere_points(rng, 1000, 0.5)
    assert mean_abs_sdf(pts, SPHERE) <= 1e-15
    with pytest.raises(ValueError):
        mean_abs_sdf(np.zeros((0, 3)), SPHERE)


@given(st.integers(0, 2 ** 32 - 1))
def test_f_score_symmetric(seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(200, 3)), r.normal(size=(150, 3))
    t = float(r.uniform(0.05, 1))
    assert f_score(a, b, t) == f_score(b, a, t)


def test_resolution_convergence(rng):
    ref = sphere_points(rng, 20_000, 0.5)
    errs = [chamfer(ref, marching_cubes(SPHERE, CUBE, n)) for n in (32, 64, 128)]
    assert errs[0] > errs[1] > errs[2]


def test_report(sphere64, rng):
    ref = sphere_points(rng, 5000, 0.5)
    # threshold above the reference cloud spacing so precision is not limited by sampling
    rep = evaluate_mesh(sphere64, ref, 0.05, sdf_points=ref, sdf_evaluator=SPHERE, n_samples=5000)
    assert rep.f_score == pytest.approx(1.0) and rep.chamfer < 1e-5 and rep.mean_abs_sdf <= 1e-15
    assert "chamfer=" in rep.to_text() and rep.csv_header().startswith("chamfer,f_score")
    with pytest.raises(ValueError):
        MetricReport(-1.0, 0.5, 0.0, 0.1)
    with pytest.raises(ValueError):
        f_score(ref, ref, 0.0)
