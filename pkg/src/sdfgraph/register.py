"""Pairwise node registration.

``init_registration`` solves the stacked pose constraint ``P_i @ H = P_j`` in
closed form; ``refine_registration`` then optimizes a 7-parameter delta
(Euler angles, translation, scale) so that renders of node j through the
transformed node-i cameras match renders of node j at its own cameras.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .render import (CameraIntrinsics, CameraPose, RenderConfig, pixel_rays, render_image,
                     render_rays)
from .transforms import EulerPose7, SimilarityTransform, project_to_so3

log = logging.getLogger(__name__)

Array = np.ndarray

PSNR_CAP = 99.0


class RegistrationError(ValueError):
    pass


@dataclass
class SharedView:
    """One shared image: its pose in both node frames plus intrinsics."""

    image_id: str
    pose_i: CameraPose
    pose_j: CameraPose
    intr: CameraIntrinsics


@dataclass
class OverlapMask:
    image_id: str
    mask: np.ndarray  # (height, width) bool

    @property
    def count(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class RefineConfig:
    lr0: float = 5e-5
    decay_base: float = 0.8
    decay_every: float = 100.0
    iterations: int = 5000
    rays_per_iter: int = 2048
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    fd_step: float = 1e-4
    loss: str = "l1"
    eval_every: int = 50
    eval_rays: int = 4096
    patience: int | None = None  # evals without improvement before stopping; None = run all
    min_improvement: float = 1e-4

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError("lr0 must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.rays_per_iter < 1:
            raise ValueError("rays_per_iter must be >= 1")
        if self.loss not in ("l1", "l2"):
            raise ValueError("loss must be 'l1' or 'l2'")

    def lr(self, i: int) -> float:
        return self.lr0 * self.decay_base ** (i / self.decay_every)


def transform_pose(pose: CameraPose, tr: SimilarityTransform) -> tuple[CameraPose, float]:
    """Right-multiply a w2c pose by a similarity: ``[R|T] @ [[R_t, T_t], [0, s]]``.

    Returns the rigid pose ``(R R_t, R T_t + s T)`` in the transform's source
    frame, and ``s``, the factor by which camera coordinates are scaled.
    """
    R = pose.R @ tr.R
    T = pose.R @ tr.T + tr.s * pose.T
    return CameraPose(R, T), tr.s


def init_registration(pose_pairs: Sequence[tuple[CameraPose, CameraPose]],
                      consistency_tol: float = 0.1) -> SimilarityTransform:
    """Least-squares similarity ``T_ij`` with ``P_i @ T_ij ~= P_j`` for every shared image.

    The returned transform maps node-j points to node-i points.
    """
    if len(pose_pairs) < 2:
        raise RegistrationError("underdetermined: need at least 2 shared pose pairs")
    A = np.concatenate([np.hstack([pi.R, pi.T[:, None]]) for pi, _ in pose_pairs])
    B = np.concatenate([np.hstack([pj.R, pj.T[:, None]]) for _, pj in pose_pairs])
    if np.linalg.matrix_rank(A) < 4:
        raise RegistrationError("degenerate pose configuration: stacked system has rank < 4")
    # rotation columns have a zero bottom entry; the last column carries (T, s)
    X, *_ = np.linalg.lstsq(A[:, :3], B[:, :3], rcond=None)
    ts, *_ = np.linalg.lstsq(A, B[:, 3], rcond=None)
    T, s = ts[:3], float(ts[3])
    if not s > 0:
        raise RegistrationError(f"invalid scale: recovered s={s:.6g}")
    R = project_to_so3(X)
    resid = float(np.linalg.norm(X - R))
    if resid > consistency_tol:
        raise RegistrationError(f"inconsistent pose pairs: rotation block is {resid:.3g} from SO(3)")
    return SimilarityTransform(R, T, s)


def compute_masks(field_i, field_j, T0: SimilarityTransform, views: Sequence[SharedView],
                  cfg: RenderConfig, tau: float = 0.5) -> list[OverlapMask]:
    """Pixels where both nodes render opaque content (opacity > tau)."""
    masks = []
    for v in views:
        op_i = render_image(field_i, v.pose_i, v.intr, cfg).opacity
        op_j = render_image(field_j, transform_pose(v.pose_i, T0)[0], v.intr, cfg).opacity
        masks.append(OverlapMask(v.image_id, (op_i > tau) & (op_j > tau)))
    return masks


@dataclass
class RefineResult:
    transform: SimilarityTransform
    initial: SimilarityTransform
    trace: list = field(repr=False)  # rows: (iteration, lr, loss, phi, theta, psi, tx, ty, tz, s)
    initial_loss: float = 0.0
    final_loss: float = 0.0
    iterations_run: int = 0
    best_iteration: int = 0
    rejected_steps: int = 0

    TRACE_HEADER = ("iteration", "lr", "loss", "phi", "theta", "psi", "tx", "ty", "tz", "s")

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(self.TRACE_HEADER) + "\n")
            for row in self.trace:
                fh.write(f"{row[0]:d}," + ",".join(repr(float(v)) for v in row[1:]) + "\n")


class _PixelSet:
    """All masked pixels across shared images, with cached target colors."""

    def __init__(self, field_j, views, masks, cfg: RenderConfig):
        by_id = {m.image_id: m for m in masks}
        img, px, py = [], [], []
        for k, v in enumerate(views):
            m = by_id[v.image_id].mask
            if m.shape != (v.intr.height, v.intr.width):
                raise RegistrationError(f"mask for image {v.image_id} does not match its intrinsics")
            ys, xs = np.nonzero(m)
            img.append(np.full(len(xs), k))
            px.append(xs)
            py.append(ys)
        self.img = np.concatenate(img) if img else np.zeros(0, dtype=int)
        self.px = np.concatenate(px) if px else np.zeros(0)
        self.py = np.concatenate(py) if py else np.zeros(0)
        if len(self.img) == 0:
            raise RegistrationError("empty masks: no overlap pixels to supervise refinement")
        self.views = views
        o, d = self._rays([v.pose_j for v in views], np.arange(len(self.img)))
        self.target = render_rays(field_j, o, d, cfg)[0]

    def __len__(self):
        return len(self.img)

    def _rays(self, poses, idx):
        o = np.empty((len(idx), 3))
        d = np.empty((len(idx), 3))
        img = self.img[idx]
        for k in np.unique(img):
            sel = img == k
            o[sel], d[sel] = pixel_rays(poses[k], self.views[k].intr,
                                        self.px[idx][sel], self.py[idx][sel])
        return o, d

    def rays_for(self, tr: SimilarityTransform, idx):
        poses = [transform_pose(v.pose_i, tr)[0] for v in self.views]
        return self._rays(poses, idx)


def _loss_values(pred, target, kind: str) -> Array:
    diff = pred - target
    if kind == "l1":
        return np.abs(diff).mean(axis=1)
    return (diff * diff).mean(axis=1)


class RegistrationObjective:
    """Photometric loss as a function of the 7-vector (Euler ZYX, T, s)."""

    def __init__(self, field_j, views: Sequence[SharedView], masks: Sequence[OverlapMask],
                 render_cfg: RenderConfig, loss: str = "l1"):
        self.field = field_j
        self.cfg = render_cfg
        self.loss = loss
        self.pixels = _PixelSet(field_j, list(views), masks, render_cfg)

    def losses(self, params: Sequence[Array], idx) -> list[float]:
        """Mean loss over pixels ``idx`` for each parameter vector, rendered in one batch."""
        idx = np.asarray(idx)
        rays = [self.pixels.rays_for(EulerPose7.from_vector(p).to_transform(), idx) for p in params]
        o = np.concatenate([r[0] for r in rays])
        d = np.concatenate([r[1] for r in rays])
        color = render_rays(self.field, o, d, self.cfg)[0]
        target = self.pixels.target[idx]
        n = len(idx)
        out = []
        for k in range(len(params)):
            vals = _loss_values(color[k * n:(k + 1) * n], target, self.loss)
            out.append(math.fsum(vals) / n)
        return out

    def __call__(self, p: Array, idx) -> float:
        return self.losses([p], idx)[0]

    def central_gradient(self, p: Array, idx, h: float | Array) -> tuple[float, Array]:
        """Loss at ``p`` and its central-difference gradient (15 evaluations)."""
        h = np.broadcast_to(np.asarray(h, dtype=np.float64), (7,))
        params = [p]
        for k in range(7):
            e = np.zeros(7)
            e[k] = h[k]
            params += [p + e, p - e]
        vals = self.losses(params, idx)
        grad = np.array([(vals[1 + 2 * k] - vals[2 + 2 * k]) / (2 * h[k]) for k in range(7)])
        return vals[0], grad


def refine_registration(field_j, views: Sequence[SharedView], masks: Sequence[OverlapMask],
                        T0: SimilarityTransform, cfg: RefineConfig = RefineConfig(),
                        render_cfg: RenderConfig = RenderConfig()) -> RefineResult:
    """Adam on central finite-difference gradients of the masked photometric loss.

    The returned transform is the best iterate on a fixed evaluation subset of
    masked pixels, so its loss never exceeds the initial one.
    """
    obj = RegistrationObjective(field_j, views, masks, render_cfg, cfg.loss)
    rng = np.random.default_rng(cfg.seed)
    n_pix = len(obj.pixels)
    eval_idx = (np.arange(n_pix) if n_pix <= cfg.eval_rays
                else np.sort(rng.choice(n_pix, cfg.eval_rays, replace=False)))

    base = EulerPose7.from_transform(T0).vector()
    delta = np.zeros(7)
    m = np.zeros(7)
    v = np.zeros(7)
    lr_scale = np.ones(7)
    trace = []
    initial_loss = obj(base, eval_idx)
    best_loss, best_delta, best_iter = initial_loss, delta.copy(), 0
    stale = 0
    rejected = 0
    it = 0
    for it in range(1, cfg.iterations + 1):
        idx = rng.integers(0, n_pix, size=cfg.rays_per_iter)
        loss, grad = obj.central_gradient(base + delta, idx, cfg.fd_step)
        lr = cfg.lr(it - 1)
        trace.append((it - 1, lr, loss, *(base + delta)))
        m = cfg.beta1 * m + (1 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1 - cfg.beta2) * grad * grad
        m_hat = m / (1 - cfg.beta1 ** it)
        v_hat = v / (1 - cfg.beta2 ** it)
        step = lr * lr_scale * m_hat / (np.sqrt(v_hat) + cfg.eps)
        new = delta - step
        if base[6] + new[6] <= 0:
            lr_scale[6] *= 0.5
            new[6] = delta[6]
            rejected += 1
            log.warning("iteration %d: scale step would make s <= 0; rejected, lr for s halved", it)
        delta = new
        if it % cfg.eval_every == 0 or it == cfg.iterations:
            cur = obj(base + delta, eval_idx)
            if cur < best_loss:
                improved = cur < best_loss * (1 - cfg.min_improvement)
                best_loss, best_delta, best_iter = cur, delta.copy(), it
                stale = 0 if improved else stale + 1
            else:
                stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                log.info("early stop at iteration %d (best %d)", it, best_iter)
                break
    final = EulerPose7.from_vector(base + best_delta).to_transform()
    if not best_delta.any():
        final = T0
    return RefineResult(final, T0, trace, initial_loss, best_loss, it, best_iter, rejected)


# ---------------------------------------------------------------------------
# image metrics
# ---------------------------------------------------------------------------


def psnr(a, b, mask=None) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    sq = (a - b) ** 2
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape[:2]:
            raise ValueError(f"mask shape {mask.shape} does not match image {a.shape[:2]}")
        sq = sq[mask]
        if sq.size == 0:
            raise ValueError("empty mask")
    mse = float(sq.mean())
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def ssim(a, b, k1: float = 0.01, k2: float = 0.03, sigma: float = 1.5) -> float:
    """Mean SSIM with an 11x11 Gaussian window, data range 1, averaged over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    c1, c2 = k1 ** 2, k2 ** 2
    radius = 5
    truncate = radius / sigma
    vals = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]

        def filt(img):
            return gaussian_filter(img, sigma, mode="reflect", truncate=truncate)

        mx, my = filt(x), filt(y)
        sxx = filt(x * x) - mx * mx
        syy = filt(y * y) - my * my
        sxy = filt(x * y) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        smap = num / den
        if min(x.shape) > 2 * radius:
            smap = smap[radius:-radius, radius:-radius]
        vals.append(smap.mean())
    return float(np.mean(vals))


@dataclass
class RenderMetrics:
    psnr: float
    ssim: float


def registration_render_metrics(field_j, views: Sequence[SharedView], masks: Sequence[OverlapMask],
                                tr: SimilarityTransform | None, reference_images: Sequence[Array],
                                cfg: RenderConfig) -> RenderMetrics:
    """PSNR/SSIM of node-j renders against reference images over the masked pixels.

    ``tr=None`` renders at node j's own poses (the "target" row); otherwise the
    node-i poses transformed by ``tr`` are used ("initial"/"final").
    """
    sq, ssims = [], []
    for v, m, ref in zip(views, masks, reference_images):
        pose = v.pose_j if tr is None else transform_pose(v.pose_i, tr)[0]
        img = render_image(field_j, pose, v.intr, cfg).color
        sq.append(((img - ref) ** 2)[m.mask])
        ssims.append(ssim(img, ref))
    sq = np.concatenate(sq)
    mse = float(sq.mean()) if sq.size else 0.0
    p = PSNR_CAP if mse < 1e-10 else min(PSNR_CAP, 10 * math.log10(1 / mse))
    return RenderMetrics(p, float(np.mean(ssims)))
