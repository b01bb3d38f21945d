"""SDF graph: nodes with image sets, overlap edges, MST, transform propagation."""

from __future__ import annotations

import dataclasses
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .fields import Aabb, NodeField
from .render import CameraIntrinsics, CameraPose
from .transforms import SimilarityTransform


class GraphError(ValueError):
    pass


class DisconnectedGraphError(GraphError):
    pass


@dataclass
class GraphNode:
    id: int
    domain: Aabb
    image_ids: frozenset
    field: NodeField | None = None
    poses: list = dataclasses.field(default_factory=list)  # (image_id, CameraPose, CameraIntrinsics)
    to_global: SimilarityTransform = dataclasses.field(default_factory=SimilarityTransform.identity)
    name: str | None = None

    def __post_init__(self):
        self.image_ids = frozenset(str(i) for i in self.image_ids)
        if self.field is not None and self.field.domain != self.domain:
            raise GraphError(f"node {self.label}: field domain differs from node domain")
        extra = {str(p[0]) for p in self.poses} - self.image_ids
        if extra:
            raise GraphError(f"node {self.label}: poses for unknown images {sorted(extra)}")

    @property
    def label(self) -> str:
        return self.name if self.name is not None else str(self.id)

    def pose_map(self) -> dict[str, tuple[CameraPose, CameraIntrinsics]]:
        return {str(img): (pose, intr) for img, pose, intr in self.poses}


@dataclass(frozen=True)
class GraphEdge:
    i: int
    j: int
    shared_ids: frozenset
    weight: float

    def __post_init__(self):
        if not self.i < self.j:
            raise GraphError(f"edge endpoints must satisfy i < j, got ({self.i}, {self.j})")

    @property
    def endpoints(self) -> tuple[int, int]:
        return (self.i, self.j)

    @property
    def key(self) -> tuple:
        return (self.weight, self.i, self.j)


def _components(n_ids: Iterable[int], edges: Iterable[tuple[int, int]]) -> list[list[int]]:
    ids = sorted(n_ids)
    adj = {k: [] for k in ids}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen, comps = set(), []
    for start in ids:
        if start in seen:
            continue
        comp, queue = [], deque([start])
        seen.add(start)
        while queue:
            u = queue.popleft()
            comp.append(u)
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        comps.append(sorted(comp))
    return comps


def _disconnected_message(comps, labels: Mapping[int, str]) -> str:
    parts = ["{" + ",".join(labels[k] for k in comp) + "}" for comp in comps]
    return "disconnected: " + ",".join(parts)


def build_edges(nodes: Sequence[GraphNode]) -> list[GraphEdge]:
    """One edge per node pair with shared images, weight ``1 / |shared|``.

    Raises :class:`DisconnectedGraphError` naming the components when the
    resulting graph is not connected.
    """
    by_id = sorted(nodes, key=lambda n: n.id)
    edges = []
    for a in range(len(by_id)):
        for b in range(a + 1, len(by_id)):
            ni, nj = by_id[a], by_id[b]
            shared = ni.image_ids & nj.image_ids
            if shared:
                edges.append(GraphEdge(ni.id, nj.id, frozenset(shared), 1.0 / len(shared)))
    comps = _components((n.id for n in nodes), (e.endpoints for e in edges))
    if len(comps) > 1:
        raise DisconnectedGraphError(_disconnected_message(comps, {n.id: n.label for n in nodes}))
    return edges


class SdfGraph:
    """Nodes with dense ids ``0..n-1`` and overlap edges forming one component."""

    def __init__(self, nodes: Sequence[GraphNode], edges: Sequence[GraphEdge] | None = None):
        nodes = sorted(nodes, key=lambda n: n.id)
        if [n.id for n in nodes] != list(range(len(nodes))):
            raise GraphError("node ids must be dense in [0, n)")
        if not nodes:
            raise GraphError("graph needs at least one node")
        if edges is None:
            edges = build_edges(nodes)
        seen = set()
        for e in edges:
            if e.i == e.j:
                raise GraphError(f"self-edge on node {e.i}")
            if e.endpoints in seen:
                raise GraphError(f"duplicate edge {e.endpoints}")
            if e.j >= len(nodes):
                raise GraphError(f"edge {e.endpoints} references unknown node")
            seen.add(e.endpoints)
        comps = _components(range(len(nodes)), (e.endpoints for e in edges))
        if len(comps) > 1:
            raise DisconnectedGraphError(_disconnected_message(comps, {n.id: n.label for n in nodes}))
        self.nodes = list(nodes)
        self.edges = sorted(edges, key=lambda e: e.endpoints)

    def __len__(self):
        return len(self.nodes)

    def node(self, node_id: int) -> GraphNode:
        return self.nodes[node_id]

    def edge(self, i: int, j: int) -> GraphEdge:
        a, b = min(i, j), max(i, j)
        for e in self.edges:
            if e.endpoints == (a, b):
                return e
        raise KeyError((i, j))

    def minimum_spanning_tree(self) -> list[GraphEdge]:
        return minimum_spanning_tree(self.edges, len(self.nodes))

    def with_transforms(self, to_global: Mapping[int, SimilarityTransform]) -> "SdfGraph":
        nodes = [dataclasses.replace(n, to_global=to_global[n.id]) for n in self.nodes]
        return SdfGraph(nodes, self.edges)


def minimum_spanning_tree(edges: Sequence[GraphEdge], n_nodes: int) -> list[GraphEdge]:
    """Kruskal with ties broken by (i, j); result sorted by endpoints."""
    parent = list(range(n_nodes))

    def find(u):
        while parent[u] != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        return u

    tree = []
    for e in sorted(edges, key=lambda e: e.key):
        ra, rb = find(e.i), find(e.j)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
            tree.append(e)
    if len(tree) != n_nodes - 1:
        comps = _components(range(n_nodes), (e.endpoints for e in edges))
        raise DisconnectedGraphError(_disconnected_message(comps, {k: str(k) for k in range(n_nodes)}))
    return sorted(tree, key=lambda e: e.endpoints)


def tree_weight(edges: Iterable[GraphEdge]) -> float:
    return math.fsum(e.weight for e in edges)


def _edge_transform(edge_transforms, parent: int, child: int) -> SimilarityTransform:
    """Transform taking child-frame points into the parent frame."""
    if (parent, child) in edge_transforms:
        tr = edge_transforms[(parent, child)]
    elif (child, parent) in edge_transforms:
        tr = edge_transforms[(child, parent)]
        if not tr.s > 0:
            raise GraphError(f"edge ({child}, {parent}) transform is not invertible (s <= 0)")
        tr = tr.inverse()
    else:
        raise GraphError(f"missing edge transform for MST edge ({parent}, {child})")
    if not tr.s > 0:
        raise GraphError(f"edge ({parent}, {child}) transform is not invertible (s <= 0)")
    return tr


def propagate(mst: Sequence[GraphEdge], n_nodes: int, root: int,
              edge_transforms: Mapping[tuple[int, int], SimilarityTransform]
              ) -> dict[int, SimilarityTransform]:
    """Place every node in the root's frame.

    ``edge_transforms[(i, j)]`` maps node-j coordinates into node-i coordinates;
    a transform stored under the reversed key is inverted as needed.
    """
    if not 0 <= root < n_nodes:
        raise GraphError(f"unknown root node {root}")
    adj = {k: [] for k in range(n_nodes)}
    for e in mst:
        adj[e.i].append(e.j)
        adj[e.j].append(e.i)
    placed = {root: SimilarityTransform.identity()}
    queue = deque([root])
    while queue:
        p = queue.popleft()
        for c in sorted(adj[p]):
            if c in placed:
                continue
            placed[c] = placed[p] @ _edge_transform(edge_transforms, p, c)
            queue.append(c)
    if len(placed) != n_nodes:
        missing = sorted(set(range(n_nodes)) - set(placed))
        raise DisconnectedGraphError(f"MST does not reach nodes {missing}")
    return placed


def propagate_transforms(graph: SdfGraph, mst: Sequence[GraphEdge], root: int,
                         edge_transforms: Mapping[tuple[int, int], SimilarityTransform]) -> SdfGraph:
    return graph.with_transforms(propagate(mst, len(graph), root, edge_transforms))


def non_tree_residuals(graph: SdfGraph, mst: Sequence[GraphEdge],
                       edge_transforms: Mapping[tuple[int, int], SimilarityTransform]) -> dict:
    """Disagreement of propagated frames with registrations on discarded edges (diagnostic)."""
    tree = {e.endpoints for e in mst}
    out = {}
    for e in graph.edges:
        if e.endpoints in tree or e.endpoints not in edge_transforms:
            continue
        gi, gj = graph.node(e.i).to_global, graph.node(e.j).to_global
        implied = gi.inverse() @ gj
        out[e.endpoints] = implied.errors_to(edge_transforms[e.endpoints])
    return out
