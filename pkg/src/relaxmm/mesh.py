"""Quadrilateral meshes with an oriented edge table and named constraint tags.

Elements are stored counter-clockwise as ``(v0, v1, v2, v3)`` so that the
local edges are ``Σ1 = v0→v1``, ``Σ2 = v1→v2``, ``Σ3 = v2→v3`` and
``Σ4 = v3→v0``. Every global edge is oriented from its lower to its higher
node index; ``elem_signs`` records whether the local counter-clockwise
direction agrees with that orientation.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

log = logging.getLogger(__name__)

LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
BOUNDARY = "boundary"


class MeshError(ValueError):
    """Invalid mesh input or a mesh that violates its invariants."""


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EdgeTable:
    """Global edges and their per-element use.

    Attributes
    ----------
    edges : (n_edges, 2) int array
        Node pairs ``(lo, hi)`` with ``lo < hi``, sorted lexicographically.
    elem_edges : (n_elems, 4) int array
        Global edge index of local edges Σ1..Σ4.
    elem_signs : (n_elems, 4) int array
        +1 when the local counter-clockwise direction runs lo → hi, else -1.
    """

    edges: np.ndarray
    elem_edges: np.ndarray
    elem_signs: np.ndarray

    @classmethod
    def build(cls, elems: np.ndarray) -> "EdgeTable":
        a = elems[:, LOCAL_EDGES[:, 0]]
        b = elems[:, LOCAL_EDGES[:, 1]]
        lo = np.minimum(a, b).ravel()
        hi = np.maximum(a, b).ravel()
        pairs = np.stack([lo, hi], axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        elem_edges = inverse.reshape(-1, 4)
        signs = np.where(a < b, 1, -1)
        return cls(_frozen(edges, np.int64), _frozen(elem_edges, np.int64),
                   _frozen(signs, np.int64))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_elements(self) -> list[list[int]]:
        """Elements adjacent to each edge, in element order."""
        adj: list[list[int]] = [[] for _ in range(self.n_edges)]
        for e, row in enumerate(self.elem_edges):
            for k in row:
                adj[k].append(e)
        return adj

    def index_of(self, pairs: np.ndarray) -> np.ndarray:
        """Edge indices for node pairs given in any order; -1 where absent."""
        pairs = np.sort(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=1)
        keys = self.edges[:, 0] * (self.edges.max() + 1) + self.edges[:, 1]
        q = pairs[:, 0] * (self.edges.max() + 1) + pairs[:, 1]
        pos = np.searchsorted(keys, q)
        pos = np.clip(pos, 0, len(keys) - 1)
        return np.where(keys[pos] == q, pos, -1)


@dataclass(frozen=True)
class Tag:
    nodes: np.ndarray
    edges: np.ndarray

    @classmethod
    def of(cls, nodes: Iterable[int] = (), edges: Iterable[int] = ()) -> "Tag":
        return cls(_frozen(np.unique(np.fromiter(nodes, dtype=np.int64)), np.int64),
                   _frozen(np.unique(np.fromiter(edges, dtype=np.int64)), np.int64))

    def merged(self, other: "Tag") -> "Tag":
        return Tag.of(np.concatenate([self.nodes, other.nodes]),
                      np.concatenate([self.edges, other.edges]))


@dataclass(frozen=True)
class QuadMesh:
    """Immutable conforming quadrilateral mesh.

    ``tags`` maps a name to node and edge index sets. The ``"boundary"`` tag is
    maintained topologically (edges used by exactly one element); other tags
    mark interior constraint lines or boundary parts.
    """

    nodes: np.ndarray
    elems: np.ndarray
    edge_table: EdgeTable = field(repr=False)
    tags: Mapping[str, Tag] = field(default_factory=dict, repr=False)

    @classmethod
    def from_arrays(cls, nodes, elems, tags: Mapping[str, Tag] | None = None,
                    check: bool = True) -> "QuadMesh":
        nodes = _frozen(nodes, np.float64)
        elems = _frozen(elems, np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshError("nodes must have shape (n, 2)")
        if elems.ndim != 2 or elems.shape[1] != 4:
            raise MeshError("elems must have shape (m, 4)")
        table = EdgeTable.build(elems)
        all_tags = dict(tags or {})
        all_tags[BOUNDARY] = _boundary_tag(table)
        mesh = cls(nodes, elems, table, all_tags)
        if check:
            mesh.validate()
        return mesh

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elems(self) -> int:
        return len(self.elems)

    @property
    def n_edges(self) -> int:
        return self.edge_table.n_edges

    @property
    def edges(self) -> np.ndarray:
        return self.edge_table.edges

    def corners(self) -> np.ndarray:
        """(n_elems, 4, 2) corner coordinates."""
        return self.nodes[self.elems]

    def edge_lengths(self) -> np.ndarray:
        d = self.nodes[self.edges[:, 1]] - self.nodes[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def h(self) -> float:
        """Largest edge length."""
        return float(self.edge_lengths().max())

    def tag(self, name: str) -> Tag:
        try:
            return self.tags[name]
        except KeyError:
            raise MeshError(f"unknown mesh tag {name!r}; known: {sorted(self.tags)}") from None

    def validate(self) -> None:
        """Check distinct CCW corners, edge multiplicity and Jacobian positivity."""
        el = self.elems
        if el.min(initial=0) < 0 or el.max(initial=-1) >= self.n_nodes:
            raise MeshError("element references a missing node")
        s = np.sort(el, axis=1)
        if np.any(s[:, 1:] == s[:, :-1]):
            raise MeshError("element with repeated nodes")
        x = self.corners()
        area = 0.5 * np.sum(x[:, :, 0] * np.roll(x[:, :, 1], -1, axis=1)
                            - np.roll(x[:, :, 0], -1, axis=1) * x[:, :, 1], axis=1)
        if np.any(area <= 0):
            raise MeshError(f"elements not counter-clockwise: {np.flatnonzero(area <= 0)[:10]}")
        counts = np.bincount(self.edge_table.elem_edges.ravel(), minlength=self.n_edges)
        if np.any(counts > 2):
            raise MeshError("edge shared by more than two elements")
        bad = np.flatnonzero(min_jacobian(x) <= 0)
        if bad.size:
            raise MeshError(f"nonpositive Jacobian in elements {bad[:10]}")

    def with_tag(self, name: str, tag: Tag) -> "QuadMesh":
        tags = dict(self.tags)
        tags[name] = tags[name].merged(tag) if name in tags else tag
        return QuadMesh(self.nodes, self.elems, self.edge_table, tags)

    # -- serialization -------------------------------------------------------
    def to_json(self) -> str:
        tags = {
            name: {"nodes": t.nodes.tolist(), "edges": self.edges[t.edges].tolist()}
            for name, t in self.tags.items() if name != BOUNDARY
        }
        return json.dumps({"nodes": self.nodes.tolist(), "elems": self.elems.tolist(),
                           "tags": tags})

    @classmethod
    def from_json(cls, text: str) -> "QuadMesh":
        doc = json.loads(text)
        mesh = cls.from_arrays(doc["nodes"], doc["elems"])
        for name, t in doc.get("tags", {}).items():
            pairs = np.asarray(t.get("edges", []), dtype=np.int64).reshape(-1, 2)
            idx = mesh.edge_table.index_of(pairs) if len(pairs) else np.empty(0, np.int64)
            if np.any(idx < 0):
                raise MeshError(f"tag {name!r} references an edge not in the mesh")
            mesh = mesh.with_tag(name, Tag.of(t.get("nodes", []), idx))
        return mesh

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "QuadMesh":
        return cls.from_json(Path(path).read_text())


def _boundary_tag(table: EdgeTable) -> Tag:
    counts = np.bincount(table.elem_edges.ravel(), minlength=table.n_edges)
    bedges = np.flatnonzero(counts == 1)
    return Tag.of(table.edges[bedges].ravel(), bedges)


def min_jacobian(corners: np.ndarray, n: int = 3) -> np.ndarray:
    """Smallest det J of the bilinear map over an n×n Gauss grid, per element."""
    g, _ = np.polynomial.legendre.leggauss(n)
    xi, eta = np.meshgrid(g, g, indexing="xy")
    xi, eta = xi.ravel(), eta.ravel()
    dN_dxi = 0.25 * np.stack([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
    dN_deta = 0.25 * np.stack([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
    x, y = corners[:, :, 0], corners[:, :, 1]
    x_xi, x_eta = x @ dN_dxi, x @ dN_deta
    y_xi, y_eta = y @ dN_dxi, y @ dN_deta
    return (x_xi * y_eta - x_eta * y_xi).min(axis=1)


def generate_structured(nx: int, ny: int,
                        domain: tuple[float, float, float, float] = (-1.0, 1.0, -1.0, 1.0)
                        ) -> QuadMesh:
    """Uniform ``nx × ny`` grid on ``domain = (x0, x1, y0, y1)``.

    Node ``(i, j)`` has index ``i + j*(nx+1)``.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError(f"grid dimensions must be positive integers, got {nx}×{ny}")
    x0, x1, y0, y1 = map(float, domain)
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"domain {domain} has nonpositive width or height")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    v0 = (i + j * (nx + 1)).ravel()
    elems = np.column_stack([v0, v0 + 1, v0 + nx + 2, v0 + nx + 1])
    return QuadMesh.from_arrays(nodes, elems)


def tag_region(mesh: QuadMesh, tag: str, predicate: Callable[[float, float], bool],
               kind: str = "both") -> QuadMesh:
    """Add nodes and/or edges satisfying ``predicate(x, y)`` under ``tag``.

    An edge is selected when both of its endpoints satisfy the predicate.
    ``kind`` is ``"nodes"``, ``"edges"`` or ``"both"``.
    """
    if kind not in ("nodes", "edges", "both"):
        raise ValueError(f"kind must be nodes, edges or both, not {kind!r}")
    hit = np.fromiter((bool(predicate(float(x), float(y))) for x, y in mesh.nodes),
                      dtype=bool, count=mesh.n_nodes)
    nodes = np.flatnonzero(hit) if kind in ("nodes", "both") else np.empty(0, np.int64)
    if kind in ("edges", "both"):
        edges = np.flatnonzero(hit[mesh.edges[:, 0]] & hit[mesh.edges[:, 1]])
    else:
        edges = np.empty(0, np.int64)
    if nodes.size == 0 and edges.size == 0:
        log.warning("tag_region: predicate selected nothing for tag %r", tag)
    return mesh.with_tag(tag, Tag.of(nodes, edges))


def perturb_interior(mesh: QuadMesh, magnitude: float, seed: int) -> QuadMesh:
    """Randomly displace free interior nodes by up to ``magnitude`` × (min edge length).

    Nodes that belong to any tag (boundary or constraint lines) stay put. Offsets
    of nodes touching an inverted element are halved, at most 10 times.
    """
    if not 0 <= magnitude < 0.5:
        raise MeshError("perturbation magnitude must lie in [0, 0.5)")
    if magnitude == 0:
        return mesh
    fixed = np.zeros(mesh.n_nodes, dtype=bool)
    for t in mesh.tags.values():
        fixed[t.nodes] = True
    rng = np.random.default_rng(seed)
    offset = rng.uniform(-1.0, 1.0, size=(mesh.n_nodes, 2))
    offset *= magnitude * mesh.edge_lengths().min()
    offset[fixed] = 0.0
    for _ in range(11):
        nodes = mesh.nodes + offset
        bad = min_jacobian(nodes[mesh.elems]) <= 0
        if not bad.any():
            return QuadMesh(_frozen(nodes, np.float64), mesh.elems, mesh.edge_table,
                            dict(mesh.tags))
        offset[np.unique(mesh.elems[bad])] *= 0.5
    raise MeshError("could not restore positive Jacobians after 10 halvings")


def refine_uniform(mesh: QuadMesh) -> QuadMesh:
    """Split every element into four through edge midpoints and the element centre.

    New nodes: old nodes, then one midpoint per edge (index ``n_nodes + edge``),
    then one centre per element. Tags are carried over to the children.
    """
    nn, ne = mesh.n_nodes, mesh.n_edges
    mids = 0.5 * (mesh.nodes[mesh.edges[:, 0]] + mesh.nodes[mesh.edges[:, 1]])
    centres = mesh.corners().mean(axis=1)
    nodes = np.vstack([mesh.nodes, mids, centres])
    v = mesh.elems
    m = nn + mesh.edge_table.elem_edges
    c = nn + ne + np.arange(mesh.n_elems)
    children = np.stack([
        np.column_stack([v[:, 0], m[:, 0], c, m[:, 3]]),
        np.column_stack([m[:, 0], v[:, 1], m[:, 1], c]),
        np.column_stack([c, m[:, 1], v[:, 2], m[:, 2]]),
        np.column_stack([m[:, 3], c, m[:, 2], v[:, 3]]),
    ], axis=1).reshape(-1, 4)
    fine = QuadMesh.from_arrays(nodes, children, check=False)
    for name, t in mesh.tags.items():
        if name == BOUNDARY:
            continue
        lo, hi = mesh.edges[t.edges, 0], mesh.edges[t.edges, 1]
        mid = nn + t.edges
        pairs = np.concatenate([np.column_stack([lo, mid]), np.column_stack([mid, hi])])
        new_edges = fine.edge_table.index_of(pairs) if len(pairs) else np.empty(0, np.int64)
        fine = fine.with_tag(name, Tag.of(np.concatenate([t.nodes, mid]), new_edges))
    fine.validate()
    return fine
