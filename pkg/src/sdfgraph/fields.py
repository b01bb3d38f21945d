"""Bounded SDF / color fields.

Dense vertex-centered grids stand in for trained local fields; analytic
primitives provide ground truth. All point queries are vectorized over
``(N, 3)`` arrays.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numba
import numpy as np

Array = np.ndarray

GRID_MAGIC = b"SDFG"
GRID_VERSION = 1
_HEADER = struct.Struct("<4sI3I6dB")

# snap tolerance (in cell units) so that queries at vertices return stored values exactly
_SNAP = 1e-11


class GridFormatError(ValueError):
    pass


def _as_points(x) -> Array:
    p = np.asarray(x, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    if p.shape[-1] != 3:
        raise ValueError(f"expected points of shape (N, 3), got {p.shape}")
    return np.ascontiguousarray(p.reshape(-1, 3))


@dataclass(frozen=True)
class Aabb:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("Aabb corners must be 3-vectors")
        if not all(a < b for a, b in zip(lo, hi)):
            raise ValueError(f"degenerate Aabb: lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def lo_arr(self) -> Array:
        return np.array(self.lo)

    @property
    def hi_arr(self) -> Array:
        return np.array(self.hi)

    @property
    def size(self) -> Array:
        return self.hi_arr - self.lo_arr

    @property
    def center(self) -> Array:
        return 0.5 * (self.lo_arr + self.hi_arr)

    def corners(self) -> Array:
        lo, hi = self.lo_arr, self.hi_arr
        out = np.empty((8, 3))
        for k in range(8):
            bits = np.array([k & 1, (k >> 1) & 1, (k >> 2) & 1])
            out[k] = np.where(bits, hi, lo)
        return out

    def contains(self, points, strict: bool = False) -> Array:
        p = _as_points(points)
        if strict:
            return np.all((p > self.lo_arr) & (p < self.hi_arr), axis=1)
        return np.all((p >= self.lo_arr) & (p <= self.hi_arr), axis=1)

    def exterior_distance(self, points) -> Array:
        p = _as_points(points)
        q = np.clip(p, self.lo_arr, self.hi_arr)
        return np.linalg.norm(p - q, axis=1)

    @classmethod
    def from_points(cls, points) -> "Aabb":
        p = _as_points(points)
        return cls(tuple(p.min(axis=0)), tuple(p.max(axis=0)))


# ---------------------------------------------------------------------------
# analytic ground truth
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnalyticSdf:
    """Exact SDF of a sphere, box, plane, or a min-union of those."""

    kind: str
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.0
    half_extents: tuple = (0.0, 0.0, 0.0)
    normal: tuple = (0.0, 0.0, 1.0)
    offset: float = 0.0
    parts: tuple = ()

    def __post_init__(self):
        if self.kind == "sphere":
            if self.radius <= 0:
                raise ValueError("sphere radius must be > 0")
        elif self.kind == "box":
            if min(self.half_extents) <= 0:
                raise ValueError("box half-extents must be > 0")
        elif self.kind == "plane":
            if abs(np.linalg.norm(self.normal) - 1.0) > 1e-12:
                raise ValueError("plane normal must be unit length")
        elif self.kind == "union":
            if not self.parts:
                raise ValueError("union needs at least one part")
        else:
            raise ValueError(f"unknown analytic shape {self.kind!r}")

    @classmethod
    def sphere(cls, center, radius: float) -> "AnalyticSdf":
        return cls("sphere", center=tuple(map(float, center)), radius=float(radius))

    @classmethod
    def box(cls, center, half_extents) -> "AnalyticSdf":
        return cls("box", center=tuple(map(float, center)),
                   half_extents=tuple(map(float, half_extents)))

    @classmethod
    def plane(cls, normal, offset: float) -> "AnalyticSdf":
        return cls("plane", normal=tuple(map(float, normal)), offset=float(offset))

    @classmethod
    def union(cls, *parts: "AnalyticSdf") -> "AnalyticSdf":
        return cls("union", parts=tuple(parts))

    def __call__(self, points) -> Array:
        p = _as_points(points)
        if self.kind == "sphere":
            return np.linalg.norm(p - np.array(self.center), axis=1) - self.radius
        if self.kind == "box":
            q = np.abs(p - np.array(self.center)) - np.array(self.half_extents)
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            return outside + np.minimum(q.max(axis=1), 0.0)
        if self.kind == "plane":
            return p @ np.array(self.normal) - self.offset
        vals = np.stack([part(p) for part in self.parts])
        return vals.min(axis=0)

    def to_dict(self) -> dict:
        if self.kind == "sphere":
            return {"sphere": {"center": list(self.center), "radius": self.radius}}
        if self.kind == "box":
            return {"box": {"center": list(self.center), "half_extents": list(self.half_extents)}}
        if self.kind == "plane":
            return {"plane": {"normal": list(self.normal), "offset": self.offset}}
        return {"union": [p.to_dict() for p in self.parts]}

    @classmethod
    def from_dict(cls, d: dict) -> "AnalyticSdf":
        (kind, body), = d.items()
        if kind == "sphere":
            return cls.sphere(body["center"], body["radius"])
        if kind == "box":
            return cls.box(body["center"], body["half_extents"])
        if kind == "plane":
            return cls.plane(body["normal"], body["offset"])
        if kind == "union":
            return cls.union(*(cls.from_dict(p) for p in body))
        raise ValueError(f"unknown analytic shape {kind!r}")


def constant_color(rgb) -> Callable[[Array], Array]:
    c = np.asarray(rgb, dtype=np.float64)

    def _color(points):
        p = _as_points(points)
        return np.broadcast_to(c, (len(p), 3)).copy()

    return _color


def sine_texture(frequency: float = 6.0) -> Callable[[Array], Array]:
    """Smooth position-dependent RGB texture; gives photometric gradients."""
    dirs = np.array([[1.0, 0.6, 0.2], [-0.3, 1.0, 0.7], [0.5, -0.4, 1.0]])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    phase = np.array([0.3, 1.7, 4.1])

    def _color(points):
        p = _as_points(points)
        return 0.5 + 0.45 * np.sin(frequency * (p @ dirs.T) + phase)

    return _color


def linear_ramp_color(c0, c1, axis: int = 0, lo: float = 0.0, hi: float = 1.0):
    c0 = np.asarray(c0, dtype=np.float64)
    c1 = np.asarray(c1, dtype=np.float64)

    def _color(points):
        p = _as_points(points)
        t = np.clip((p[:, axis] - lo) / (hi - lo), 0.0, 1.0)[:, None]
        return (1 - t) * c0 + t * c1

    return _color


COLORIZERS = {
    "sines": sine_texture,
    "red": lambda: constant_color((1.0, 0.0, 0.0)),
    "gray": lambda: constant_color((0.5, 0.5, 0.5)),
}


def make_colorizer(name: str, **kwargs):
    try:
        return COLORIZERS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown colorizer {name!r}; choose from {sorted(COLORIZERS)}") from None


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


@numba.njit(cache=True, inline="always")
def _axis_cell(x, lo, hi, m):
    """Clamped coordinate along one axis: (cell index, fraction, squared clamp distance)."""
    d2 = 0.0
    if x < lo:
        d2 = (lo - x) ** 2
        x = lo
    elif x > hi:
        d2 = (x - hi) ** 2
        x = hi
    u = (x - lo) / (hi - lo) * m
    r = np.floor(u + 0.5)
    if abs(u - r) < _SNAP * (m + 1):
        u = r
    i0 = int(np.floor(u))
    if i0 > m - 1:
        i0 = m - 1
    if i0 < 0:
        i0 = 0
    return i0, u - i0, d2


@numba.njit(cache=True, inline="always")
def _locate(lo, hi, vals, x, y, z):
    nz, ny, nx = vals.shape[0], vals.shape[1], vals.shape[2]
    ix, tx, dx = _axis_cell(x, lo[0], hi[0], nx - 1)
    iy, ty, dy = _axis_cell(y, lo[1], hi[1], ny - 1)
    iz, tz, dz = _axis_cell(z, lo[2], hi[2], nz - 1)
    return ix, iy, iz, tx, ty, tz, np.sqrt(dx + dy + dz)


@numba.njit(cache=True, inline="always")
def _lerp(vals, ix, iy, iz, tx, ty, tz, c):
    c00 = vals[iz, iy, ix, c] + tx * (vals[iz, iy, ix + 1, c] - vals[iz, iy, ix, c])
    c10 = vals[iz, iy + 1, ix, c] + tx * (vals[iz, iy + 1, ix + 1, c] - vals[iz, iy + 1, ix, c])
    c01 = vals[iz + 1, iy, ix, c] + tx * (vals[iz + 1, iy, ix + 1, c] - vals[iz + 1, iy, ix, c])
    c11 = vals[iz + 1, iy + 1, ix, c] + tx * (vals[iz + 1, iy + 1, ix + 1, c] - vals[iz + 1, iy + 1, ix, c])
    c0 = c00 + ty * (c10 - c00)
    c1 = c01 + ty * (c11 - c01)
    return c0 + tz * (c1 - c0)


@numba.njit(cache=True)
def _trilinear(vals, lo, hi, pts, out, dist):
    """Trilinear lookup on (nz, ny, nx, C) vertex data; points are clamped to the box
    and the clamp distance is written to ``dist``."""
    nc = vals.shape[3]
    for n in range(pts.shape[0]):
        ix, iy, iz, tx, ty, tz, dd = _locate(lo, hi, vals, pts[n, 0], pts[n, 1], pts[n, 2])
        dist[n] = dd
        for c in range(nc):
            out[n, c] = _lerp(vals, ix, iy, iz, tx, ty, tz, c)


def _check_dims(dims) -> tuple[int, int, int]:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 2:
        raise ValueError(f"invalid dims {dims}: need three counts >= 2")
    return dims


class SdfGrid:
    """Scalar SDF samples on the vertices of a regular grid over ``domain``.

    ``values`` is flat, x-fastest: ``index = ix + nx * (iy + ny * iz)``.
    Outside the domain the field continues as (boundary value + distance to box).
    """

    def __init__(self, domain: Aabb, dims: Sequence[int], values):
        self.domain = domain
        self.dims = _check_dims(dims)
        v = np.asarray(values)
        if v.dtype not in (np.float32, np.float64):
            v = v.astype(np.float64)
        nx, ny, nz = self.dims
        if v.size != nx * ny * nz:
            raise ValueError(f"expected {nx * ny * nz} values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("SDF values must be finite")
        self._vol = np.ascontiguousarray(v.reshape(nz, ny, nx))
        self._vol.setflags(write=False)

    @property
    def values(self) -> Array:
        return self._vol.reshape(-1)

    @property
    def volume(self) -> Array:
        """Values as a (nz, ny, nx) array."""
        return self._vol

    @property
    def spacing(self) -> Array:
        return self.domain.size / (np.array(self.dims) - 1)

    def vertex(self, ix: int, iy: int, iz: int) -> Array:
        lo, size = self.domain.lo_arr, self.domain.size
        return lo + size * np.array([ix, iy, iz]) / (np.array(self.dims) - 1)

    def __call__(self, points) -> Array:
        p = _as_points(points)
        out = np.empty((len(p), 1))
        dist = np.empty(len(p))
        _trilinear(self._vol[..., None], self.domain.lo_arr, self.domain.hi_arr, p, out, dist)
        return out[:, 0] + dist

    def lipschitz_bound(self) -> float:
        """Upper bound on the Lipschitz constant of the extended field."""
        v = self._vol.astype(np.float64)
        h = self.spacing
        gx = np.abs(np.diff(v, axis=2)).max() / h[0]
        gy = np.abs(np.diff(v, axis=1)).max() / h[1]
        gz = np.abs(np.diff(v, axis=0)).max() / h[2]
        return float(np.sqrt(gx * gx + gy * gy + gz * gz)) + 1.0

    def __eq__(self, other):
        if not isinstance(other, SdfGrid):
            return NotImplemented
        return (self.domain == other.domain and self.dims == other.dims
                and self._vol.dtype == other._vol.dtype
                and np.array_equal(self._vol, other._vol))

    __hash__ = None


class ColorGrid:
    """RGB samples (channels in [0, 1]) on the same vertex layout as :class:`SdfGrid`."""

    def __init__(self, domain: Aabb, dims: Sequence[int], values, background=(0.0, 0.0, 0.0)):
        self.domain = domain
        self.dims = _check_dims(dims)
        v = np.asarray(values)
        if v.dtype not in (np.float32, np.float64):
            v = v.astype(np.float64)
        nx, ny, nz = self.dims
        if v.size != nx * ny * nz * 3:
            raise ValueError(f"expected {nx * ny * nz} rgb triples, got {v.size} values")
        if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
            raise ValueError("color channels must lie in [0, 1]")
        self._vol = np.ascontiguousarray(v.reshape(nz, ny, nx, 3))
        self._vol.setflags(write=False)
        self.background = np.asarray(background, dtype=np.float64)

    @property
    def values(self) -> Array:
        return self._vol.reshape(-1, 3)

    def __call__(self, points) -> Array:
        p = _as_points(points)
        out = np.empty((len(p), 3))
        dist = np.empty(len(p))
        _trilinear(self._vol, self.domain.lo_arr, self.domain.hi_arr, p, out, dist)
        out[dist > 0] = self.background
        return out

    def __eq__(self, other):
        if not isinstance(other, ColorGrid):
            return NotImplemented
        return (self.domain == other.domain and self.dims == other.dims
                and self._vol.dtype == other._vol.dtype
                and np.array_equal(self._vol, other._vol))

    __hash__ = None


@dataclass(eq=False)
class NodeField:
    """One node's local field: an SDF grid with a paired color grid."""

    sdf_grid: SdfGrid
    color_grid: ColorGrid
    domain: Aabb = field(default=None)

    def __post_init__(self):
        if self.domain is None:
            self.domain = self.sdf_grid.domain
        if not (self.sdf_grid.domain == self.color_grid.domain == self.domain):
            raise ValueError("sdf, color and node domains must be identical")
        if self.sdf_grid.dims != self.color_grid.dims:
            raise ValueError("sdf and color grid dims differ")

    @property
    def dims(self):
        return self.sdf_grid.dims

    def sdf(self, points) -> Array:
        return self.sdf_grid(points)

    def color(self, points) -> Array:
        return self.color_grid(points)

    def __eq__(self, other):
        if not isinstance(other, NodeField):
            return NotImplemented
        return self.sdf_grid == other.sdf_grid and self.color_grid == other.color_grid


@dataclass
class AnalyticField:
    """Field protocol over plain callables (ground-truth renders)."""

    sdf_fn: Callable[[Array], Array]
    color_fn: Callable[[Array], Array]
    domain: Aabb

    def sdf(self, points) -> Array:
        p = _as_points(points)
        inside = np.clip(p, self.domain.lo_arr, self.domain.hi_arr)
        return self.sdf_fn(inside) + np.linalg.norm(p - inside, axis=1)

    def color(self, points) -> Array:
        return self.color_fn(_as_points(points))


def eval_sdf(field: SdfGrid | NodeField, x) -> Array | float:
    """Point query; scalar in, scalar out."""
    grid = field.sdf_grid if isinstance(field, NodeField) else field
    out = grid(x)
    return float(out[0]) if np.ndim(x) == 1 else out


def eval_color(field: ColorGrid | NodeField, x) -> Array:
    grid = field.color_grid if isinstance(field, NodeField) else field
    out = grid(x)
    return out[0] if np.ndim(x) == 1 else out


def grid_points(domain: Aabb, dims) -> Array:
    """Vertex positions in file order (x fastest)."""
    nx, ny, nz = _check_dims(dims)
    lo, size = domain.lo_arr, domain.size
    xs = lo[0] + size[0] * np.arange(nx) / (nx - 1)
    ys = lo[1] + size[1] * np.arange(ny) / (ny - 1)
    zs = lo[2] + size[2] * np.arange(nz) / (nz - 1)
    Z, Y, X = np.meshgrid(zs, ys, xs, indexing="ij")
    return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)


def bake(sdf_fn: Callable[[Array], Array], colorizer: Callable[[Array], Array],
         domain: Aabb, dims, noise: float = 0.0, seed: int | None = 0,
         dtype=np.float32, background=(0.0, 0.0, 0.0)) -> NodeField:
    """Sample an SDF and colorizer at grid vertices.

    ``noise`` adds uniform perturbations in [-noise, noise] to the SDF samples,
    mimicking reconstruction error. Default storage is float32, the precision
    of the grid file format.
    """
    dims = _check_dims(dims)
    if noise < 0:
        raise ValueError("noise amplitude must be >= 0")
    pts = grid_points(domain, dims)
    sdf = np.asarray(sdf_fn(pts), dtype=np.float64)
    if noise > 0:
        rng = np.random.default_rng(seed)
        sdf = sdf + rng.uniform(-noise, noise, size=sdf.shape)
    rgb = np.clip(np.asarray(colorizer(pts), dtype=np.float64), 0.0, 1.0)
    return NodeField(SdfGrid(domain, dims, sdf.astype(dtype)),
                     ColorGrid(domain, dims, rgb.astype(dtype), background=background))


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------


def write_grid(path, field: NodeField | SdfGrid) -> None:
    """Write the little-endian ``SDFG`` v1 format. Payloads are float32."""
    if isinstance(field, NodeField):
        sdf, color = field.sdf_grid, field.color_grid
    else:
        sdf, color = field, None
    nx, ny, nz = sdf.dims
    header = _HEADER.pack(GRID_MAGIC, GRID_VERSION, nx, ny, nz,
                          *sdf.domain.lo, *sdf.domain.hi, 1 if color is not None else 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(sdf.values.astype("<f4").tobytes())
        if color is not None:
            fh.write(color.values.astype("<f4").tobytes())


def read_grid(path) -> NodeField | SdfGrid:
    """Read a grid file; returns a NodeField when colors are present."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise GridFormatError("malformed header: file shorter than header")
    magic, version, nx, ny, nz, *box, flag = _HEADER.unpack_from(data)
    if magic != GRID_MAGIC or version != GRID_VERSION:
        raise GridFormatError("malformed header: bad magic or version")
    if min(nx, ny, nz) < 2:
        raise GridFormatError(f"malformed header: invalid dims {(nx, ny, nz)}")
    try:
        domain = Aabb(tuple(box[:3]), tuple(box[3:]))
    except ValueError as exc:
        raise GridFormatError(f"malformed header: {exc}") from None
    n = nx * ny * nz
    expected = _HEADER.size + 4 * n * (4 if flag & 1 else 1)
    if len(data) < expected:
        raise GridFormatError("truncated payload")
    if len(data) > expected:
        raise GridFormatError("dims/payload-length mismatch: trailing bytes")
    off = _HEADER.size
    sdf_vals = np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float32)
    sdf = SdfGrid(domain, (nx, ny, nz), sdf_vals)
    if not flag & 1:
        return sdf
    rgb = np.frombuffer(data, dtype="<f4", count=3 * n, offset=off + 4 * n).astype(np.float32)
    return NodeField(sdf, ColorGrid(domain, (nx, ny, nz), rgb))
