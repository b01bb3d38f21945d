import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import neus_alpha_reference, quadrature_reference, rot_y
from sdfgraph.fields import Aabb, AnalyticField, AnalyticSdf, bake, constant_color, make_colorizer
from sdfgraph.render import (CameraIntrinsics, CameraPose, RenderConfig, Ray, error_map,
                             image_rays, neus_alpha, read_pnm, render_image, render_ray,
                             render_rays, ray_for_pixel, write_pgm, write_ppm)

BIG = Aabb((-5.0, -5.0, -5.0), (5.0, 5.0, 5.0))
CUBE = Aabb((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))


def plane_field(t0, color=(1.0, 0.0, 0.0)):
    # surface z = t0 facing a camera on the z axis
    return AnalyticField(lambda p: t0 - p[:, 2], constant_color(color), BIG)


def test_principal_axis_ray():
    intr = CameraIntrinsics(1, 1, 0, 0, 1, 1)
    r = ray_for_pixel(CameraPose(np.eye(3), np.zeros(3)), intr, -0.5, -0.5)
    assert np.array_equal(r.o, [0, 0, 0]) and np.allclose(r.d, [0, 0, 1], atol=0)


def test_ray_origin_is_camera_center():
    intr = CameraIntrinsics(1, 1, 0, 0, 1, 1)
    r = ray_for_pixel(CameraPose(np.eye(3), (0, 0, -3)), intr, 0, 0)
    assert np.allclose(r.o, [0, 0, 3])


def test_ray_direction_rotated(rng):
    intr = CameraIntrinsics(50, 60, 16, 12, 32, 24)
    R = rot_y(90)
    pose = CameraPose(R, rng.normal(size=3))
    px, py = 7.0, 19.0
    d_cam = np.array([(px + 0.5 - 16) / 50, (py + 0.5 - 12) / 60, 1.0])
    want = R.T @ d_cam
    want /= np.linalg.norm(want)
    assert np.allclose(ray_for_pixel(pose, intr, px, py).d, want, atol=1e-15)


def test_ray_requires_unit_direction():
    with pytest.raises(ValueError):
        Ray(np.zeros(3), np.array([0, 0, 2.0]))


def test_camera_pose_rejects_non_rotation():
    with pytest.raises(ValueError):
        CameraPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_neus_alpha_examples():
    assert neus_alpha(0.1, -0.1, 10) == pytest.approx(0.6321205588285577, abs=1e-12)
    assert neus_alpha(0.3, 0.3, 10) == 0.0
    assert neus_alpha(-0.1, 0.1, 10) == 0.0


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.5, 80))
def test_neus_alpha_matches_reference(fa, fb, s):
    a = neus_alpha(fa, fb, s)
    assert 0.0 <= a <= 1.0
    assert a == pytest.approx(neus_alpha_reference(fa, fb, s), abs=1e-12)


def test_empty_space_ray():
    fld = AnalyticField(lambda p: np.full(len(p), 10.0), constant_color((1, 1, 1)), BIG)
    res = render_ray(fld, Ray(np.zeros(3), np.array([0, 0, 1.0])),
                     RenderConfig(n_samples=32, t_near=0, t_far=3, background=(0.2, 0.3, 0.4)))
    assert res.opacity < 1e-12
    assert np.allclose(res.color, [0.2, 0.3, 0.4])


def test_solid_red():
    fld = AnalyticField(lambda p: -1.0 - p[:, 2], constant_color((1, 0, 0)), BIG)
    res = render_ray(fld, Ray(np.zeros(3), np.array([0, 0, 1.0])),
                     RenderConfig(n_samples=64, t_near=0.0, t_far=2.0))
    ref = quadrature_reference(lambda t: -1.0 - t, lambda t: (1, 0, 0), 0.0, 2.0, 64, 40.0,
                               (0, 0, 0))
    assert res.opacity >= 0.99
    assert np.allclose(res.color, [1, 0, 0], atol=0.01)
    assert res.opacity == pytest.approx(ref[1], abs=1e-12)


def test_render_matches_scalar_quadrature(rng):
    sph = AnalyticSdf.sphere((0.1, 0.0, 0.0), 0.5)
    col = make_colorizer("sines")
    fld = AnalyticField(sph, col, BIG)
    cfg = RenderConfig(n_samples=48, t_near=0.5, t_far=5.0, background=(0.1, 0.2, 0.3))
    for _ in range(5):
        d = np.array([0.0, 0.0, 1.0]) + rng.normal(scale=0.05, size=3)
        d /= np.linalg.norm(d)
        o = np.array([0.0, 0.0, -3.0])
        res = render_ray(fld, Ray(o, d), cfg)
        c, op, dep = quadrature_reference(lambda t: float(sph(o + t * d)[0]),
                                          lambda t: col((o + t * d)[None])[0],
                                          0.5, 5.0, 48, 40.0, (0.1, 0.2, 0.3))
        assert np.allclose(res.color, c, atol=1e-12)
        assert res.opacity == pytest.approx(op, abs=1e-12)
        assert res.depth == pytest.approx(dep, abs=1e-10)


def test_grid_kernel_matches_generic_path(rng):
    fld = bake(AnalyticSdf.sphere((0, 0.1, 0), 0.5), make_colorizer("sines"), CUBE, (17, 17, 17))
    o = rng.uniform(-2.5, 2.5, size=(200, 3))
    d = -o + rng.normal(scale=0.3, size=o.shape)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    cfg = RenderConfig(n_samples=40, background=(0.5, 0.5, 0.5))
    fast = render_rays(fld, o, d, cfg)
    slow = render_rays(fld, o, d, cfg, return_weights=True)[:3]
    for a, b in zip(fast, slow):
        assert np.allclose(a, b, atol=1e-12, rtol=0)


@pytest.mark.parametrize("n", [64, 128, 256])
def test_depth_unbiased_on_plane(n):
    for t0 in np.linspace(0.6, 1.4, 7):
        res = render_ray(plane_field(t0), Ray(np.zeros(3), np.array([0, 0, 1.0])),
                         RenderConfig(n_samples=n, t_near=0.0, t_far=2.0))
        assert abs(res.depth - t0) <= 2.0 / n


@given(st.floats(0.3, 1.7), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(2, 40),
       st.floats(1.01, 4))
def test_opacity_monotone_in_slope(t0, dx, dy, s, factor):
    d = np.array([dx, dy, 1.0])
    d /= np.linalg.norm(d)
    fld = plane_field(t0)
    ray = Ray(np.zeros(3), d)
    lo = render_ray(fld, ray, RenderConfig(n_samples=64, t_near=0, t_far=3, slope_s=s)).opacity
    hi = render_ray(fld, ray, RenderConfig(n_samples=64, t_near=0, t_far=3,
                                           slope_s=s * factor)).opacity
    assert hi >= lo - 1e-12


@given(st.integers(0, 2 ** 31))
def test_weights_nonnegative_and_bounded(seed):
    r = np.random.default_rng(seed)
    fld = bake(AnalyticSdf.union(AnalyticSdf.sphere((0, 0, 0), 0.4),
                                 AnalyticSdf.sphere((0.3, 0.2, 0), 0.3)),
               make_colorizer("gray"), CUBE, (9, 9, 9), noise=0.05, seed=seed)
    o = r.uniform(-2, 2, size=(20, 3))
    d = r.normal(size=(20, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    *_, w = render_rays(fld, o, d, RenderConfig(n_samples=32, slope_s=r.uniform(1, 200)),
                        return_weights=True)
    assert (w >= 0).all()
    assert (w.sum(axis=1) <= 1 + 1e-9).all()


def test_empty_field_image():
    fld = bake(lambda p: np.full(len(p), 5.0), constant_color((1, 1, 1)), CUBE, (3, 3, 3))
    pose = CameraPose.look_at((0, 0, -3), (0, 0, 0), up=(0, 1, 0))
    img = render_image(fld, pose, CameraIntrinsics.from_fov(2, 2, 40),
                       RenderConfig(n_samples=16, background=(0.2, 0.4, 0.6)))
    assert np.allclose(img.color, [0.2, 0.4, 0.6]) and np.all(img.opacity < 1e-12)


def test_sphere_silhouette_and_determinism():
    r, dist = 0.5, 3.0
    fld = bake(AnalyticSdf.sphere((0, 0, 0), r), make_colorizer("sines"), CUBE, (65, 65, 65))
    pose = CameraPose.look_at((0, 0, -dist), (0, 0, 0), up=(0, 1, 0))
    intr = CameraIntrinsics.from_fov(64, 64, 40)
    a = render_image(fld, pose, intr, RenderConfig(n_samples=128))
    b = render_image(fld, pose, intr, RenderConfig(n_samples=128))
    assert np.array_equal(a.color, b.color) and np.array_equal(a.opacity, b.opacity)
    # disk radius in pixels from the analytic tangent cone
    want = intr.fx * math.tan(math.asin(r / dist))
    got = math.sqrt((a.opacity > 0.5).sum() / math.pi)
    assert abs(got - want) <= 1.0
    ys, xs = np.nonzero(a.opacity > 0.5)
    assert abs(xs.mean() + 0.5 - intr.cx) < 0.5 and abs(ys.mean() + 0.5 - intr.cy) < 0.5


def test_image_rays_layout():
    intr = CameraIntrinsics.from_fov(4, 3, 60)
    o, d = image_rays(CameraPose(np.eye(3), np.zeros(3)), intr)
    assert d.shape == (12, 3)
    # row-major: second ray is one pixel to the right
    assert d[1, 0] > d[0, 0] and d[4, 1] > d[0, 1]


@pytest.mark.parametrize("bits", [8, 16])
def test_netpbm_roundtrip(tmp_path, rng, bits):
    img = rng.uniform(size=(5, 7, 3))
    write_ppm(tmp_path / "a.ppm", img, bits=bits)
    back = read_pnm(tmp_path / "a.ppm")
    maxval = 255 if bits == 8 else 65535
    assert back.shape == img.shape and np.abs(back - img).max() <= 0.5 / maxval + 1e-12
    write_pgm(tmp_path / "a.pgm", error_map(img, img * 0), bits=bits)
    assert read_pnm(tmp_path / "a.pgm").shape == (5, 7)
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n7 5\n")
