"""Global SDF assembled from registered local fields.

Each node covers the open interior of its local domain box, mapped to the
global frame by its ``to_global`` similarity. Where several nodes cover a
point their (scale-corrected) SDF values are mixed with softmax weights on
the point's inset depth inside each box, so a node's influence fades out
towards its own boundary.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fields import Aabb, _as_points
from .transforms import SimilarityTransform

Array = np.ndarray

BLEND_MODES = ("softmax", "min")


@dataclass(frozen=True)
class BlendConfig:
    beta: float = 10.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be > 0")


@dataclass(frozen=True)
class BlendEntry:
    node_id: int
    domain: Aabb
    to_global: SimilarityTransform
    field: object  # anything with .sdf(points)

    def __post_init__(self):
        if not self.to_global.s > 0:
            raise ValueError(f"node {self.node_id}: to_global must be invertible")


def inset_distance(domain: Aabb, x_local) -> Array | float:
    """Depth inside the box (distance to the nearest face); 0 on and outside it."""
    p = _as_points(x_local)
    depth = np.minimum(p - domain.lo_arr, domain.hi_arr - p).min(axis=1)
    out = np.maximum(depth, 0.0)
    return float(out[0]) if np.ndim(x_local) == 1 else out


def blend_weights(insets, beta: float) -> Array:
    """Softmax of ``beta * d_k`` over the last axis; ``-inf`` entries get weight 0."""
    d = np.asarray(insets, dtype=np.float64)
    if d.shape[-1] == 0:
        raise ValueError("need at least one covering node")
    logits = beta * d
    top = np.max(logits, axis=-1, keepdims=True)
    e = np.exp(logits - top)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class SeamProfile:
    max_jump: float
    location: np.ndarray
    t: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,value\n")
            for t, v in zip(self.t, self.values):
                fh.write(f"{t!r},{v!r}\n")


class GlobalField:
    def __init__(self, entries: Sequence[BlendEntry], config: BlendConfig = BlendConfig(),
                 outside_value: float = 1e6, mode: str = "softmax"):
        if not entries:
            raise ValueError("GlobalField needs at least one entry")
        if mode not in BLEND_MODES:
            raise ValueError(f"blend mode must be one of {BLEND_MODES}")
        ids = [e.node_id for e in entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node ids in GlobalField")
        self.entries = tuple(entries)
        self.config = config
        self.outside_value = float(outside_value)
        self.mode = mode

    @classmethod
    def from_graph(cls, graph, **kwargs) -> "GlobalField":
        return cls([BlendEntry(n.id, n.domain, n.to_global, n.field) for n in graph.nodes], **kwargs)

    def with_mode(self, mode: str) -> "GlobalField":
        return GlobalField(self.entries, self.config, self.outside_value, mode)

    def _node_samples(self, y: Array):
        """Per-entry scale-corrected SDF values and insets (``nan``/-inf where not covering)."""
        n = len(y)
        vals = np.full((n, len(self.entries)), np.nan)
        insets = np.full((n, len(self.entries)), -np.inf)
        for k, e in enumerate(self.entries):
            x = e.to_global.apply_inverse(y)
            cover = e.domain.contains(x, strict=True)
            if not cover.any():
                continue
            xs = x[cover]
            scale = e.to_global.distance_scale
            vals[cover, k] = e.field.sdf(xs) * scale
            insets[cover, k] = inset_distance(e.domain, xs) * scale
        return vals, insets

    def weights(self, points) -> Array:
        """Blend weights per entry, zero where an entry does not cover."""
        y = _as_points(points)
        _, insets = self._node_samples(y)
        w = np.zeros_like(insets)
        covered = np.isfinite(insets).any(axis=1)
        if covered.any():
            w[covered] = blend_weights(insets[covered], self.config.beta)
        return w

    def eval_softmax(self, points) -> Array:
        y = _as_points(points)
        vals, insets = self._node_samples(y)
        out = np.full(len(y), self.outside_value)
        covered = np.isfinite(insets).any(axis=1)
        if covered.any():
            w = blend_weights(insets[covered], self.config.beta)
            out[covered] = np.sum(w * np.nan_to_num(vals[covered]), axis=1)
        return out

    def eval_min(self, points) -> Array:
        y = _as_points(points)
        vals, insets = self._node_samples(y)
        out = np.full(len(y), self.outside_value)
        covered = np.isfinite(insets).any(axis=1)
        if covered.any():
            out[covered] = np.nanmin(vals[covered], axis=1)
        return out

    def __call__(self, points) -> Array:
        return self.eval_softmax(points) if self.mode == "softmax" else self.eval_min(points)

    def sdf(self, points) -> Array:
        return self(points)

    def edit_node(self, node_id: int, delta: SimilarityTransform) -> "GlobalField":
        """New field with ``to_global`` of one node replaced by ``delta @ to_global``."""
        if not delta.s > 0:
            raise ValueError("delta must be invertible")
        found = False
        entries = []
        for e in self.entries:
            if e.node_id == node_id:
                e = dataclasses.replace(e, to_global=delta @ e.to_global)
                found = True
            entries.append(e)
        if not found:
            raise KeyError(f"unknown node {node_id}")
        return GlobalField(entries, self.config, self.outside_value, self.mode)

    def global_bounds(self) -> Aabb:
        """Axis-aligned bounds of all node boxes in the global frame."""
        corners = np.concatenate([e.to_global.apply(e.domain.corners()) for e in self.entries])
        return Aabb.from_points(corners)


def eval_global_sdf(g: GlobalField, y) -> Array | float:
    out = g.eval_softmax(y)
    return float(out[0]) if np.ndim(y) == 1 else out


def eval_min_union(g: GlobalField, y) -> Array | float:
    out = g.eval_min(y)
    return float(out[0]) if np.ndim(y) == 1 else out


def edit_node(g: GlobalField, node_id: int, delta: SimilarityTransform) -> GlobalField:
    return g.edit_node(node_id, delta)


def seam_profile(evaluator, a, b, n: int) -> SeamProfile:
    """Largest jump between adjacent samples of ``evaluator`` along segment a->b."""
    if n < 2:
        raise ValueError("need n >= 2 samples")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    t = np.linspace(0.0, 1.0, n)
    pts = a + t[:, None] * (b - a)
    vals = np.asarray(evaluator(pts), dtype=np.float64)
    jumps = np.abs(np.diff(vals))
    k = int(np.argmax(jumps))
    return SeamProfile(float(jumps[k]), 0.5 * (pts[k] + pts[k + 1]), t, vals)
