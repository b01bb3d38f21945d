"""Marching Cubes surface extraction, mesh I/O and geometric accuracy metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cc
from scipy.spatial import cKDTree

from .fields import Aabb

Array = np.ndarray

_EVAL_CHUNK = 1 << 18

# cube corner c has offset (c & 1, c >> 1 & 1, c >> 2 & 1)
CORNERS = np.array([[c & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)])
# edges as (low corner, high corner), ordered by axis then low corner
EDGES = tuple((a, a | (1 << ax)) for ax in range(3) for a in range(8) if not a & (1 << ax))
EDGE_AXIS = np.array([ax for ax in range(3) for a in range(8) if not a & (1 << ax)])
_EDGE_INDEX = {frozenset(e): k for k, e in enumerate(EDGES)}


def _faces():
    faces = []
    for ax in range(3):
        u, w = [a for a in range(3) if a != ax]
        for side in (0, 1):
            cyc = []
            for bu, bw in ((0, 0), (1, 0), (1, 1), (0, 1)):
                cyc.append((side << ax) | (bu << u) | (bw << w))
            faces.append(cyc)
    return faces


def _case_loops(case: int) -> list[list[int]]:
    inside = [(case >> c) & 1 for c in range(8)]
    nbr = {}

    def link(e1, e2):
        nbr.setdefault(e1, []).append(e2)
        nbr.setdefault(e2, []).append(e1)

    for cyc in _faces():
        fe = [_EDGE_INDEX[frozenset((cyc[k], cyc[(k + 1) % 4]))] for k in range(4)]
        crossing = [inside[cyc[k]] != inside[cyc[(k + 1) % 4]] for k in range(4)]
        if sum(crossing) == 2:
            a, b = [fe[k] for k in range(4) if crossing[k]]
            link(a, b)
        elif sum(crossing) == 4:
            # ambiguous face: cut off each inside corner separately
            for k in range(4):
                if inside[cyc[k]]:
                    link(fe[(k - 1) % 4], fe[k])
    loops, seen = [], set()
    for start in sorted(nbr):
        if start in seen:
            continue
        loop, prev, cur = [start], None, start
        seen.add(start)
        while True:
            a, b = nbr[cur]
            nxt = b if a == prev else a
            if nxt == start:
                break
            loop.append(nxt)
            seen.add(nxt)
            prev, cur = cur, nxt
        loops.append(loop)
    return loops


def _orient(loop: list[int], case: int) -> list[int]:
    """Order a loop so that its normal points from inside (< iso) to outside."""
    mids = np.array([(CORNERS[a] + CORNERS[b]) / 2.0 for a, b in (EDGES[e] for e in loop)])
    normal = np.zeros(3)
    for k in range(len(mids)):
        normal += np.cross(mids[k], mids[(k + 1) % len(mids)])
    grad = np.zeros(3)
    for e in loop:
        a, b = EDGES[e]
        if (case >> a) & 1:
            grad += CORNERS[b] - CORNERS[a]
        else:
            grad += CORNERS[a] - CORNERS[b]
    if normal @ grad < 0:
        loop = [loop[0]] + loop[:0:-1]
    return loop


_FACE_EDGE_SETS = [{frozenset((c[k], c[(k + 1) % 4])) for k in range(4)} for c in _faces()]


def _share_face(e1: int, e2: int) -> bool:
    a, b = frozenset(EDGES[e1]), frozenset(EDGES[e2])
    return any(a in f and b in f for f in _FACE_EDGE_SETS)


def _triangulate(loop: list[int]) -> list[tuple[int, int, int]]:
    """Triangulate a loop without diagonals lying in a cube face.

    Such a diagonal would duplicate or cross the neighbouring cube's face
    segment and break edge manifoldness.
    """
    n = len(loop)

    def ok(a, b):
        return (b - a) % n in (1, n - 1) or not _share_face(loop[a], loop[b])

    @lru_cache(maxsize=None)
    def solve(i, j):
        if j - i < 2:
            return ()
        for k in range(i + 1, j):
            if ok(i, k) and ok(k, j):
                left, right = solve(i, k), solve(k, j)
                if left is not None and right is not None:
                    return left + ((i, k, j),) + right
        return None

    tris = solve(0, n - 1)
    if tris is None:  # never hit by the generated loops; fan as a fallback
        tris = tuple((0, k, k + 1) for k in range(1, n - 1))
    return [(loop[a], loop[b], loop[c]) for a, b, c in tris]


@lru_cache(maxsize=None)
def triangle_table() -> tuple[tuple[tuple[int, int, int], ...], ...]:
    """256-case table: per cube configuration, triangles as local edge triples."""
    table = []
    for case in range(256):
        tris = []
        for loop in _case_loops(case):
            tris += _triangulate(_orient(loop, case))
        table.append(tuple(tris))
    return tuple(table)


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles):
            if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
                raise ValueError("triangle index out of range")
            t = self.triangles
            if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
                raise ValueError("degenerate triangle with repeated vertex index")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(self.colors) != len(self.vertices):
                raise ValueError("need one color per vertex")

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def areas(self) -> Array:
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def edge_use_counts(self) -> dict:
        """Undirected edge -> number of incident triangles."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        keys, counts = np.unique(e, axis=0, return_counts=True)
        return {tuple(k): int(c) for k, c in zip(keys, counts)}

    def components(self) -> list[np.ndarray]:
        """Vertex index arrays of connected components, largest first."""
        n = len(self.vertices)
        t = self.triangles
        rows = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
        cols = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
        adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        k, labels = _cc(adj, directed=False)
        comps = [np.nonzero(labels == c)[0] for c in range(k)]
        return sorted(comps, key=lambda c: (-len(c), c[0]))

    def translated(self, v) -> "TriangleMesh":
        return TriangleMesh(self.vertices + np.asarray(v), self.triangles.copy(),
                            None if self.colors is None else self.colors.copy())


def _sample_grid(evaluator, region: Aabb, resolution) -> Array:
    nx, ny, nz = (int(r) for r in resolution)
    lo, size = region.lo_arr, region.size
    xs = lo[0] + size[0] * np.arange(nx) / (nx - 1)
    ys = lo[1] + size[1] * np.arange(ny) / (ny - 1)
    zs = lo[2] + size[2] * np.arange(nz) / (nz - 1)
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    vals = np.concatenate([np.asarray(evaluator(pts[k:k + _EVAL_CHUNK]), dtype=np.float64)
                           for k in range(0, len(pts), _EVAL_CHUNK)])
    return vals.reshape(nx, ny, nz), (xs, ys, zs)


def marching_cubes_volume(vol: Array, axes, iso: float = 0.0) -> TriangleMesh:
    """Marching Cubes on samples ``vol[ix, iy, iz]`` at coordinates ``axes = (xs, ys, zs)``."""
    vol = np.asarray(vol, dtype=np.float64)
    nx, ny, nz = vol.shape
    inside = vol < iso
    cube = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for c, (ox, oy, oz) in enumerate(CORNERS):
        cube |= inside[ox:nx - 1 + ox, oy:ny - 1 + oy, oz:nz - 1 + oz].astype(np.int64) << c

    coords = [np.asarray(a, dtype=np.float64) for a in axes]
    verts, eid, n_verts = [], [], 0
    for ax in range(3):
        sl0 = [slice(None)] * 3
        sl1 = [slice(None)] * 3
        sl0[ax] = slice(0, vol.shape[ax] - 1)
        sl1[ax] = slice(1, vol.shape[ax])
        v0, v1 = vol[tuple(sl0)], vol[tuple(sl1)]
        cross = inside[tuple(sl0)] != inside[tuple(sl1)]
        ids = np.full(v0.shape, -1, dtype=np.int64)
        idx = np.nonzero(cross)
        ids[idx] = n_verts + np.arange(len(idx[0]))
        n_verts += len(idx[0])
        eid.append(ids)
        a, b = v0[idx], v1[idx]
        t = (iso - a) / (b - a)
        p = np.stack([coords[k][idx[k]] for k in range(3)], axis=1)
        step = coords[ax][idx[ax] + 1] - coords[ax][idx[ax]]
        p[:, ax] = p[:, ax] + t * step
        verts.append(p)
    vertices = np.concatenate(verts) if verts else np.zeros((0, 3))

    table = triangle_table()
    keys, tris = [], []
    flat_cube = cube.ravel()
    for case in np.unique(flat_cube):
        local = table[case]
        if not local:
            continue
        cells = np.nonzero(flat_cube == case)[0]
        ix, iy, iz = np.unravel_index(cells, cube.shape)
        local = np.array(local)
        gids = np.empty((len(cells), len(local), 3), dtype=np.int64)
        for e in np.unique(local):
            a = EDGES[e][0]
            ox, oy, oz = CORNERS[a]
            g = eid[EDGE_AXIS[e]][ix + ox, iy + oy, iz + oz]
            gids[:, local == e] = g[:, None]
        tris.append(gids.reshape(-1, 3))
        order = np.arange(len(local))
        keys.append(np.stack([np.repeat(cells, len(local)), np.tile(order, len(cells))], axis=1))
    if not tris:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    tris = np.concatenate(tris)
    keys = np.concatenate(keys)
    perm = np.lexsort((keys[:, 1], keys[:, 0]))
    return TriangleMesh(vertices, tris[perm])


def marching_cubes(evaluator: Callable[[Array], Array], region: Aabb, resolution,
                   iso: float = 0.0) -> TriangleMesh:
    """Extract the ``iso`` level set of ``evaluator`` (vectorized over (N, 3) points)
    sampled on a ``resolution`` vertex grid spanning ``region``."""
    if np.ndim(resolution) == 0:
        resolution = (int(resolution),) * 3
    if len(resolution) != 3 or min(resolution) < 2:
        raise ValueError("resolution must be >= 2 per axis")
    vol, axes = _sample_grid(evaluator, region, resolution)
    return marching_cubes_volume(vol, axes, iso)


# ---------------------------------------------------------------------------
# export / import
# ---------------------------------------------------------------------------


def export_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w") as fh:
        for k, v in enumerate(mesh.vertices):
            if mesh.colors is not None:
                c = mesh.colors[k]
                fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g} {c[0]:.6g} {c[1]:.6g} {c[2]:.6g}\n")
            else:
                fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.triangles + 1:
            fh.write(f"f {t[0]} {t[1]} {t[2]}\n")


def read_obj(path) -> TriangleMesh:
    verts, cols, faces = [], [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
            if len(parts) >= 7:
                cols.append([float(x) for x in parts[4:7]])
        elif parts[0] == "f":
            faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    colors = np.array(cols) if cols and len(cols) == len(verts) else None
    return TriangleMesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3), colors)


def export_ply(mesh: TriangleMesh, path) -> None:
    """Binary little-endian PLY: float32 xyz, optional uchar rgb, int32 face lists."""
    has_color = mesh.colors is not None
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {len(mesh.vertices)}",
              "property float x", "property float y", "property float z"]
    if has_color:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header += [f"element face {len(mesh.triangles)}",
               "property list uchar int vertex_indices", "end_header"]
    vdtype = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if has_color:
        vdtype += [("r", "u1"), ("g", "u1"), ("b", "u1")]
    vrec = np.empty(len(mesh.vertices), dtype=vdtype)
    for k, name in enumerate("xyz"):
        vrec[name] = mesh.vertices[:, k]
    if has_color:
        rgb = np.round(np.clip(mesh.colors, 0, 1) * 255).astype(np.uint8)
        for k, name in enumerate("rgb"):
            vrec[name] = rgb[:, k]
    frec = np.empty(len(mesh.triangles), dtype=[("n", "u1"), ("v", "<i4", (3,))])
    frec["n"] = 3
    frec["v"] = mesh.triangles
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(vrec.tobytes())
        fh.write(frec.tobytes())


def read_ply(path) -> TriangleMesh:
    """Read binary PLY files in the layout written by :func:`export_ply`."""
    raw = Path(path).read_bytes()
    end = raw.index(b"end_header\n") + len(b"end_header\n")
    header = raw[:end].decode("ascii").splitlines()
    if header[0] != "ply" or "binary_little_endian" not in header[1]:
        raise ValueError("unsupported PLY variant")
    n_v = n_f = 0
    has_color = False
    for line in header:
        p = line.split()
        if p[:2] == ["element", "vertex"]:
            n_v = int(p[2])
        elif p[:2] == ["element", "face"]:
            n_f = int(p[2])
        elif p[:2] == ["property", "uchar"] and p[2] == "red":
            has_color = True
    vdtype = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if has_color:
        vdtype += [("r", "u1"), ("g", "u1"), ("b", "u1")]
    vrec = np.frombuffer(raw, dtype=vdtype, count=n_v, offset=end)
    off = end + vrec.nbytes
    fdtype = np.dtype([("n", "u1"), ("v", "<i4", (3,))])
    if len(raw) - off != n_f * fdtype.itemsize:
        raise ValueError("PLY payload does not match header element counts")
    frec = np.frombuffer(raw, dtype=fdtype, count=n_f, offset=off)
    verts = np.stack([vrec["x"], vrec["y"], vrec["z"]], axis=1).astype(np.float64)
    colors = None
    if has_color:
        colors = np.stack([vrec["r"], vrec["g"], vrec["b"]], axis=1) / 255.0
    return TriangleMesh(verts, frec["v"].astype(np.int64), colors)


def export_mesh(mesh: TriangleMesh, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        export_obj(mesh, path)
    elif path.suffix.lower() == ".ply":
        export_ply(mesh, path)
    else:
        raise ValueError(f"unsupported mesh format {path.suffix!r}")


def read_mesh(path) -> TriangleMesh:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        return read_obj(path)
    if path.suffix.lower() == ".ply":
        return read_ply(path)
    raise ValueError(f"unsupported mesh format {path.suffix!r}")


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def sample_surface(mesh: TriangleMesh, n: int, seed: int = 0, return_barycentric: bool = False):
    """Area-weighted uniform samples on the mesh surface."""
    if mesh.is_empty:
        raise ValueError("cannot sample an empty mesh")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    areas = mesh.areas()
    total = areas.sum()
    if not total > 0:
        raise ValueError("mesh has zero surface area")
    face = rng.choice(len(areas), size=n, p=areas / total)
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    bary = np.stack([1 - u - v, u, v], axis=1)
    tri = mesh.vertices[mesh.triangles[face]]
    pts = np.einsum("nk,nkc->nc", bary, tri)
    if return_barycentric:
        return pts, face, bary
    return pts


def nearest_distances(src, dst) -> Array:
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if len(src) == 0 or len(dst) == 0:
        raise ValueError("empty point set")
    d, _ = cKDTree(dst).query(src, k=1)
    return d


def closest_points_on_triangles(p, a, b, c) -> Array:
    """Closest point to ``p[k]`` on triangle ``(a[k], b[k], c[k])`` (Voronoi-region walk)."""
    ab, ac = b - a, c - a
    ap, bp, cp = p - a, p - b, p - c

    def dot(u, v):
        return np.einsum("ij,ij->i", u, v)

    d1, d2 = dot(ab, ap), dot(ac, ap)
    d3, d4 = dot(ab, bp), dot(ac, bp)
    d5, d6 = dot(ab, cp), dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        out = a + ab * (vb / denom)[:, None] + ac * (vc / denom)[:, None]
        wbc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        # later assignments take precedence, so apply regions in reverse priority
        cases = [
            ((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), b + (c - b) * wbc[:, None]),
            ((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + ac * (d2 / (d2 - d6))[:, None]),
            ((d6 >= 0) & (d5 <= d6), c),
            ((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + ab * (d1 / (d1 - d3))[:, None]),
            ((d3 >= 0) & (d4 <= d3), b),
            ((d1 <= 0) & (d2 <= 0), a),
        ]
        for cond, q in cases:
            out = np.where(cond[:, None], q, out)
    return out


def _candidate_distances(p, tri, ci) -> Array:
    k = ci.shape[1]
    rep = np.repeat(p, k, axis=0)
    t = tri[ci.ravel()]
    q = closest_points_on_triangles(rep, t[:, 0], t[:, 1], t[:, 2])
    return np.linalg.norm(rep - q, axis=1).reshape(len(p), k).min(axis=1)


def point_mesh_distances(points, mesh: "TriangleMesh", k: int = 8) -> Array:
    """Exact Euclidean distance from each point to the mesh surface.

    Candidates are the triangles with the nearest centroids. A result is
    accepted once the farthest candidate centroid is beyond ``d + reach``
    (``reach`` = largest centroid-to-vertex distance), since no unvisited
    triangle can then come closer; otherwise the candidate set grows.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0 or mesh.is_empty:
        raise ValueError("empty point set")
    tri = mesh.vertices[mesh.triangles]
    cent = tri.mean(axis=1)
    reach = float(np.linalg.norm(tri - cent[:, None], axis=2).max())
    tree = cKDTree(cent)
    d = np.full(len(p), np.inf)
    todo = np.arange(len(p))
    while len(todo):
        kk = min(k, len(cent))
        cd, ci = tree.query(p[todo], k=kk)
        cd, ci = cd.reshape(len(todo), kk), ci.reshape(len(todo), kk)
        d[todo] = _candidate_distances(p[todo], tri, ci)
        if kk == len(cent):
            break
        todo = todo[cd[:, -1] <= d[todo] + reach]
        k *= 4
    return d


def _as_cloud(x, n: int, seed: int) -> Array:
    if isinstance(x, TriangleMesh):
        return sample_surface(x, n, seed)
    return np.asarray(x, dtype=np.float64).reshape(-1, 3)


def _distances_to(src_pts: Array, target, n: int, seed: int) -> Array:
    if isinstance(target, TriangleMesh):
        return point_mesh_distances(src_pts, target)
    return nearest_distances(src_pts, _as_cloud(target, n, seed))


def chamfer(source, target, squared: bool = True, symmetric: bool = False,
            n_samples: int = 200_000, seed: int = 0) -> float:
    """Mean (squared) distance from ``source`` samples to ``target``.

    A mesh source is replaced by ``n_samples`` surface samples; distances to a
    mesh target are exact point-to-surface distances. ``symmetric`` averages
    both directions.
    """
    a = _as_cloud(source, n_samples, seed)
    d = _distances_to(a, target, n_samples, seed)
    val = float(np.mean(d * d if squared else d))
    if symmetric:
        b = _as_cloud(target, n_samples, seed)
        d2 = _distances_to(b, source, n_samples, seed)
        val = 0.5 * (val + float(np.mean(d2 * d2 if squared else d2)))
    return val


def f_score(a, b, threshold: float, n_samples: int = 200_000, seed: int = 0) -> float:
    """Harmonic mean of precision (a -> b) and recall (b -> a) at ``threshold``."""
    if not threshold > 0:
        raise ValueError("threshold must be > 0")
    pa = _as_cloud(a, n_samples, seed)
    pb = _as_cloud(b, n_samples, seed)
    precision = float(np.mean(_distances_to(pa, b, n_samples, seed) < threshold))
    recall = float(np.mean(_distances_to(pb, a, n_samples, seed) < threshold))
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def mean_abs_sdf(points, evaluator) -> float:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0:
        raise ValueError("empty point set")
    return float(np.mean(np.abs(evaluator(p))))


@dataclass
class MetricReport:
    chamfer: float
    f_score: float
    mean_abs_sdf: float
    threshold: float
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.f_score <= 1.0:
            raise ValueError("f_score must lie in [0, 1]")
        if self.chamfer < 0:
            raise ValueError("chamfer must be >= 0")

    def as_dict(self) -> dict:
        return {"chamfer": self.chamfer, "f_score": self.f_score,
                "mean_abs_sdf": self.mean_abs_sdf, "threshold": self.threshold, **self.extra}

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n"
                       for k, v in self.as_dict().items())

    def csv_header(self) -> str:
        return ",".join(self.as_dict())

    def csv_row(self) -> str:
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in self.as_dict().values())


def evaluate_mesh(mesh: TriangleMesh, reference, threshold: float,
                  sdf_points=None, sdf_evaluator=None, n_samples: int = 200_000,
                  seed: int = 0, **extra) -> MetricReport:
    """Chamfer (reference -> mesh), F-score (mesh vs reference), and mean |SDF| of ``sdf_points``."""
    ref = _as_cloud(reference, n_samples, seed)
    cd = chamfer(ref, mesh, n_samples=n_samples, seed=seed)
    fs = f_score(mesh, reference, threshold, n_samples=n_samples, seed=seed)
    mas = mean_abs_sdf(sdf_points, sdf_evaluator) if sdf_evaluator is not None else math.nan
    return MetricReport(cd, fs, mas, threshold, dict(extra))
