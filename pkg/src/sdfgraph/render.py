"""NeuS-style volume rendering of bounded SDF fields."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .fields import NodeField, _lerp, _locate
from .transforms import _check_rotation

Array = np.ndarray

_DEPTH_EPS = 1e-10
_CHUNK_RAYS = 8192


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be > 0")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be >= 1")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float) -> "CameraIntrinsics":
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(f, f, width / 2, height / 2, width, height)


@dataclass(frozen=True, eq=False)
class CameraPose:
    """World-to-camera pose: ``x_c = R x_w + T``. Camera looks along +z, x right, y down."""

    R: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        T = np.array(self.T, dtype=np.float64).reshape(3)
        _check_rotation(R, "camera R")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)

    @property
    def center(self) -> Array:
        return -self.R.T @ self.T

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> "CameraPose":
        eye = np.asarray(eye, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - eye
        z /= np.linalg.norm(z)
        up = np.asarray(up, dtype=np.float64)
        if abs(z @ up) > 0.999 * np.linalg.norm(up):
            up = np.array([0.0, 1.0, 0.0]) if abs(z[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        x = np.cross(z, up)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.stack([x, y, z])
        return cls(R, -R @ eye)

    def __eq__(self, other):
        if not isinstance(other, CameraPose):
            return NotImplemented
        return np.array_equal(self.R, other.R) and np.array_equal(self.T, other.T)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Ray:
    o: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "o", np.asarray(self.o, dtype=np.float64))
        object.__setattr__(self, "d", d)

    def at(self, t):
        return self.o + np.multiply.outer(t, self.d)


@dataclass(frozen=True)
class RenderConfig:
    """Sampling and density settings.

    ``n_samples`` is the number of quadrature segments per ray (``n_samples + 1``
    SDF evaluations). ``t_near``/``t_far`` default to the ray's entry/exit of the
    field's domain box.
    """

    n_samples: int = 128
    t_near: float | None = None
    t_far: float | None = None
    slope_s: float = 40.0
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if self.slope_s <= 0:
            raise ValueError("slope_s must be > 0")
        if (self.t_near is None) != (self.t_far is None):
            raise ValueError("set both t_near and t_far, or neither")
        if self.t_near is not None and not (0 <= self.t_near < self.t_far):
            raise ValueError("need 0 <= t_near < t_far")


@dataclass
class RenderResult:
    color: np.ndarray
    opacity: float
    depth: float


@dataclass
class ImageRender:
    """Row-major (height, width) buffers; pixel (0, 0) is top-left."""

    color: np.ndarray
    opacity: np.ndarray
    depth: np.ndarray = field(repr=False)


def pixel_rays(pose: CameraPose, intr: CameraIntrinsics, px, py) -> tuple[Array, Array]:
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    d_cam = np.stack([(px + 0.5 - intr.cx) / intr.fx,
                      (py + 0.5 - intr.cy) / intr.fy,
                      np.ones_like(px)], axis=-1)
    d = d_cam @ pose.R  # rows of R^T d_cam
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(pose.center, d.shape).copy()
    return o, d


def ray_for_pixel(pose: CameraPose, intr: CameraIntrinsics, px: float, py: float) -> Ray:
    o, d = pixel_rays(pose, intr, px, py)
    return Ray(o, d)


def image_rays(pose: CameraPose, intr: CameraIntrinsics) -> tuple[Array, Array]:
    py, px = np.mgrid[0:intr.height, 0:intr.width]
    return pixel_rays(pose, intr, px.ravel(), py.ravel())


def log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def neus_alpha(f_a, f_b, slope_s: float):
    """Discrete opacity of a segment from SDF values at its ends.

    ``alpha = max((Phi(f_a) - Phi(f_b)) / Phi(f_a), 0)`` with the logistic
    ``Phi(x) = 1 / (1 + exp(-s x))``, evaluated in log space.
    """
    la = log_sigmoid(slope_s * np.asarray(f_a, dtype=np.float64))
    lb = log_sigmoid(slope_s * np.asarray(f_b, dtype=np.float64))
    alpha = -np.expm1(lb - la)
    alpha = np.clip(alpha, 0.0, 1.0) + 0.0  # no -0.0
    return float(alpha) if alpha.ndim == 0 else alpha


def box_interval(o: Array, d: Array, lo: Array, hi: Array) -> tuple[Array, Array]:
    """Slab test. Rays missing the box get an empty interval (t0 == t1 == 0)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t_a = (lo - o) * inv
        t_b = (hi - o) * inv
    t_min = np.where(np.isnan(t_a), -np.inf, np.minimum(t_a, t_b))
    t_max = np.where(np.isnan(t_a), np.inf, np.maximum(t_a, t_b))
    t0 = np.maximum(t_min.max(axis=1), 0.0)
    t1 = t_max.min(axis=1)
    miss = t1 <= t0
    t0 = np.where(miss, 0.0, t0)
    t1 = np.where(miss, 0.0, t1)
    return t0, t1


def _render_chunk(field, o, d, cfg: RenderConfig):
    n_rays = len(o)
    n = cfg.n_samples
    if cfg.t_near is None:
        t0, t1 = box_interval(o, d, field.domain.lo_arr, field.domain.hi_arr)
    else:
        t0 = np.full(n_rays, float(cfg.t_near))
        t1 = np.full(n_rays, float(cfg.t_far))
    frac = np.arange(n + 1) / n
    t = t0[:, None] + (t1 - t0)[:, None] * frac[None, :]
    mids = 0.5 * (t[:, 1:] + t[:, :-1])
    ends = o[:, None, :] + t[..., None] * d[:, None, :]
    f = field.sdf(ends.reshape(-1, 3)).reshape(n_rays, n + 1)
    alpha = neus_alpha(f[:, :-1], f[:, 1:], cfg.slope_s)
    alpha = np.where((t1 > t0)[:, None], alpha, 0.0)
    trans = np.cumprod(1.0 - alpha, axis=1)
    trans = np.concatenate([np.ones((n_rays, 1)), trans[:, :-1]], axis=1)
    w = alpha * trans
    mid_pts = o[:, None, :] + mids[..., None] * d[:, None, :]
    c = field.color(mid_pts.reshape(-1, 3)).reshape(n_rays, n, 3)
    opacity = w.sum(axis=1)
    bg = np.asarray(cfg.background, dtype=np.float64)
    color = np.einsum("rk,rkc->rc", w, c) + (1.0 - opacity)[:, None] * bg
    depth = (w * mids).sum(axis=1) / np.maximum(opacity, _DEPTH_EPS)
    return np.clip(color, 0.0, 1.0), np.clip(opacity, 0.0, 1.0), depth, w


@numba.njit(cache=True, inline="always")
def _log_sigmoid1(x):
    if x >= 0:
        return -np.log1p(np.exp(-x))
    return x - np.log1p(np.exp(x))


@numba.njit(cache=True)
def _render_grid_kernel(sdf_vol, col_vol, lo, hi, col_bg, o, d, t0, t1, n, slope, bg,
                        out_color, out_op, out_depth):
    """Fused per-ray quadrature for grid fields; color is looked up only where w > 0."""
    for r in range(o.shape[0]):
        acc0 = 0.0
        acc1 = 0.0
        acc2 = 0.0
        op = 0.0
        dep = 0.0
        trans = 1.0
        if t1[r] > t0[r]:
            span = t1[r] - t0[r]
            ta = t0[r]
            x = o[r, 0] + ta * d[r, 0]
            y = o[r, 1] + ta * d[r, 1]
            z = o[r, 2] + ta * d[r, 2]
            ix, iy, iz, tx, ty, tz, dd = _locate(lo, hi, sdf_vol, x, y, z)
            fa = _lerp(sdf_vol, ix, iy, iz, tx, ty, tz, 0) + dd
            la = _log_sigmoid1(slope * fa)
            for k in range(n):
                tb = t0[r] + span * ((k + 1) / n)
                x = o[r, 0] + tb * d[r, 0]
                y = o[r, 1] + tb * d[r, 1]
                z = o[r, 2] + tb * d[r, 2]
                ix, iy, iz, tx, ty, tz, dd = _locate(lo, hi, sdf_vol, x, y, z)
                fb = _lerp(sdf_vol, ix, iy, iz, tx, ty, tz, 0) + dd
                lb = _log_sigmoid1(slope * fb)
                alpha = -np.expm1(lb - la)
                if alpha < 0.0:
                    alpha = 0.0
                elif alpha > 1.0:
                    alpha = 1.0
                w = alpha * trans
                if w > 0.0:
                    tm = 0.5 * (ta + tb)
                    x = o[r, 0] + tm * d[r, 0]
                    y = o[r, 1] + tm * d[r, 1]
                    z = o[r, 2] + tm * d[r, 2]
                    ix, iy, iz, tx, ty, tz, dd = _locate(lo, hi, col_vol, x, y, z)
                    if dd > 0.0:
                        acc0 += w * col_bg[0]
                        acc1 += w * col_bg[1]
                        acc2 += w * col_bg[2]
                    else:
                        acc0 += w * _lerp(col_vol, ix, iy, iz, tx, ty, tz, 0)
                        acc1 += w * _lerp(col_vol, ix, iy, iz, tx, ty, tz, 1)
                        acc2 += w * _lerp(col_vol, ix, iy, iz, tx, ty, tz, 2)
                    op += w
                    dep += w * tm
                trans *= 1.0 - alpha
                ta = tb
                la = lb
        out_op[r] = min(max(op, 0.0), 1.0)
        rest = 1.0 - op
        out_color[r, 0] = min(max(acc0 + rest * bg[0], 0.0), 1.0)
        out_color[r, 1] = min(max(acc1 + rest * bg[1], 0.0), 1.0)
        out_color[r, 2] = min(max(acc2 + rest * bg[2], 0.0), 1.0)
        out_depth[r] = dep / max(op, 1e-10)


def _render_grid(field: NodeField, o, d, cfg: RenderConfig):
    if cfg.t_near is None:
        t0, t1 = box_interval(o, d, field.domain.lo_arr, field.domain.hi_arr)
    else:
        t0 = np.full(len(o), float(cfg.t_near))
        t1 = np.full(len(o), float(cfg.t_far))
    color = np.empty((len(o), 3))
    op = np.empty(len(o))
    depth = np.empty(len(o))
    cg = field.color_grid
    _render_grid_kernel(field.sdf_grid.volume[..., None], cg._vol, field.domain.lo_arr,
                        field.domain.hi_arr, cg.background, np.ascontiguousarray(o),
                        np.ascontiguousarray(d), t0, t1, int(cfg.n_samples), float(cfg.slope_s),
                        np.asarray(cfg.background, dtype=np.float64), color, op, depth)
    return color, op, depth


def render_rays(field, origins, dirs, cfg: RenderConfig, return_weights: bool = False):
    """Render a batch of rays; returns ``(color (N,3), opacity (N,), depth (N,))``."""
    o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    if isinstance(field, NodeField) and not return_weights:
        return _render_grid(field, o, d, cfg)
    parts = [_render_chunk(field, o[k:k + _CHUNK_RAYS], d[k:k + _CHUNK_RAYS], cfg)
             for k in range(0, len(o), _CHUNK_RAYS)]
    if not parts:
        empty = np.zeros((0,))
        return np.zeros((0, 3)), empty, empty
    color, opacity, depth, w = (np.concatenate(x) for x in zip(*parts))
    if return_weights:
        return color, opacity, depth, w
    return color, opacity, depth


def render_ray(field, ray: Ray, cfg: RenderConfig) -> RenderResult:
    color, opacity, depth = render_rays(field, ray.o[None], ray.d[None], cfg)
    return RenderResult(color[0], float(opacity[0]), float(depth[0]))


def render_image(field, pose: CameraPose, intr: CameraIntrinsics, cfg: RenderConfig) -> ImageRender:
    o, d = image_rays(pose, intr)
    color, opacity, depth = render_rays(field, o, d, cfg)
    h, w = intr.height, intr.width
    return ImageRender(color.reshape(h, w, 3), opacity.reshape(h, w), depth.reshape(h, w))


# ---------------------------------------------------------------------------
# image files (netpbm)
# ---------------------------------------------------------------------------


def _quantize(img: Array, maxval: int) -> Array:
    return np.round(np.clip(img, 0.0, 1.0) * maxval)


def write_ppm(path, image: Array, bits: int = 8) -> None:
    """Binary P6. ``bits=16`` writes maxval 65535 big-endian samples (lossless to 16-bit PNG)."""
    image = np.asarray(image)
    h, w = image.shape[:2]
    maxval = 255 if bits == 8 else 65535
    data = _quantize(image, maxval).astype(">u2" if bits == 16 else np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(data.tobytes())


def write_pgm(path, image: Array, bits: int = 8) -> None:
    image = np.asarray(image)
    h, w = image.shape
    maxval = 255 if bits == 8 else 65535
    data = _quantize(image, maxval).astype(">u2" if bits == 16 else np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pnm(path) -> Array:
    """Read P5/P6 written by this module; returns floats in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos].decode("ascii"))
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    channels = {"P6": 3, "P5": 1}[magic]
    dtype = np.uint8 if maxval < 256 else ">u2"
    data = np.frombuffer(raw, dtype=dtype, offset=pos, count=w * h * channels)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return data.reshape(shape).astype(np.float64) / maxval


def error_map(a: Array, b: Array) -> Array:
    """Per-pixel mean absolute difference, rendered as grayscale."""
    return np.abs(np.asarray(a) - np.asarray(b)).mean(axis=-1)
