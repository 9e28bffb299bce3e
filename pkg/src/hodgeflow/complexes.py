"""Oriented clique complexes and boundary matrices for directed flow networks.

A raw directed, weighted multigraph is antisymmetrized into one net flow
value per undirected relationship, with each edge oriented low-to-high under
a total node order. Filling every 3-clique of the undirected support turns
the graph into a two-dimensional oriented simplicial complex whose sparse
boundary matrices drive all downstream Laplacian and decomposition work.

Orientation conventions:
    edge (i, j), i < j        boundary = node j minus node i
    triangle (i, j, k), i<j<k boundary = edge (j,k) minus edge (i,k) plus edge (i,j)
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "FlowNetwork",
    "EdgeFlow",
    "OrientedComplex",
    "BettiNumbers",
    "antisymmetrize",
    "build_clique_complex",
    "betti",
    "complex_summary",
]


@dataclass(frozen=True)
class FlowNetwork:
    """Directed weighted graph of patient (or any) flows for one region and year.

    Arcs are ``(from_id, to_id, weight)`` with non-negative weights.
    Duplicate arcs are merged by summing their weights; self-arcs are
    rejected. When ``nodes`` is given, arcs may only reference ids in it;
    otherwise the node set is derived from the arc endpoints.
    """

    arcs: tuple = ()
    region: str = ""
    year: int = 0
    nodes: frozenset | None = None

    def __post_init__(self) -> None:
        merged: dict[tuple, float] = {}
        for src, dst, weight in self.arcs:
            if src == dst:
                raise ValueError(f"self-arc on node {src!r}")
            w = float(weight)
            if not np.isfinite(w) or w < 0:
                raise ValueError(
                    f"invalid weight {weight!r} on arc ({src!r}, {dst!r}); weights must be finite and >= 0"
                )
            merged[(src, dst)] = merged.get((src, dst), 0.0) + w
        endpoints = {node for pair in merged for node in pair}
        if self.nodes is None:
            node_set = frozenset(endpoints)
        else:
            node_set = frozenset(self.nodes)
            unknown = endpoints - node_set
            if unknown:
                raise ValueError(f"arc references unknown node id(s): {sorted(unknown)}")
        object.__setattr__(self, "nodes", node_set)
        object.__setattr__(
            self, "arcs", tuple((s, d, w) for (s, d), w in sorted(merged.items()))
        )

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_arcs(self) -> int:
        return len(self.arcs)


@dataclass(frozen=True)
class EdgeFlow:
    """Real-valued flow per oriented edge; negative means flow against orientation."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 1:
            raise ValueError("edge flow must be a one-dimensional vector")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class OrientedComplex:
    """Two-dimensional oriented clique complex with sparse boundary matrices.

    ``node_ids`` fixes the vertex indexing (position = dense vertex index).
    ``edges`` and ``triangles`` hold vertex-index tuples sorted ascending,
    and their positions are the dense edge / triangle indices used by
    ``boundary1`` (vertices x edges) and ``boundary2`` (edges x triangles).
    """

    node_ids: tuple
    edges: tuple
    triangles: tuple
    boundary1: sp.csc_matrix
    boundary2: sp.csc_matrix

    @property
    def n0(self) -> int:
        return len(self.node_ids)

    @property
    def n1(self) -> int:
        return len(self.edges)

    @property
    def n2(self) -> int:
        return len(self.triangles)

    @cached_property
    def edge_index(self) -> dict:
        """Vertex-index pair (i, j) -> dense edge index."""
        return {pair: e for e, pair in enumerate(self.edges)}

    def edge_endpoints(self, edge: int) -> tuple:
        """Node ids of an edge, in orientation order."""
        i, j = self.edges[edge]
        return self.node_ids[i], self.node_ids[j]


@dataclass(frozen=True)
class BettiNumbers:
    """Connected-component count (beta0) and independent-cycle count (beta1)."""

    beta0: int
    beta1: int


def _node_ranking(node_ids: Iterable, node_order: Sequence | None) -> dict:
    ids = set(node_ids)
    if node_order is None:
        ordered = sorted(ids)
    else:
        ordered = list(node_order)
        if len(set(ordered)) != len(ordered):
            raise ValueError("node_order contains duplicate ids")
        missing = ids - set(ordered)
        if missing:
            raise ValueError(f"node_order is missing node id(s): {sorted(missing)}")
    return {node: rank for rank, node in enumerate(ordered)}


def antisymmetrize(
    network: FlowNetwork, node_order: Sequence | None = None
) -> tuple[tuple, EdgeFlow]:
    """Net out opposing arcs into one signed flow per oriented edge.

    For each unordered pair with positive total weight, emits the edge
    oriented low-to-high under ``node_order`` (default: sorted ids) with flow
    ``w(low->high) - w(high->low)``. Pairs that cancel exactly keep their
    edge with flow 0; pairs whose arcs all have weight 0 are dropped.

    Returns the oriented edge support (tuple of node-id pairs) and the
    matching flow vector.
    """
    rank = _node_ranking(network.nodes, node_order)
    net: dict[tuple, float] = {}
    total: dict[tuple, float] = {}
    for src, dst, w in network.arcs:
        if rank[src] < rank[dst]:
            key, signed = (src, dst), w
        else:
            key, signed = (dst, src), -w
        net[key] = net.get(key, 0.0) + signed
        total[key] = total.get(key, 0.0) + w
    support = sorted(
        (pair for pair in net if total[pair] > 0),
        key=lambda p: (rank[p[0]], rank[p[1]]),
    )
    values = np.array([net[pair] for pair in support], dtype=float)
    return tuple(support), EdgeFlow(values)


def build_clique_complex(
    edge_support: Iterable[tuple], node_order: Sequence | None = None
) -> OrientedComplex:
    """Fill all 3-cliques of an oriented edge support into an oriented complex.

    ``edge_support`` must contain distinct node-id pairs already oriented
    low-to-high under ``node_order`` (default: sorted ids). Vertices are the
    edge endpoints, densely indexed in node order.
    """
    support = list(edge_support)
    rank = _node_ranking((n for pair in support for n in pair), node_order)
    node_ids = tuple(sorted(rank, key=rank.__getitem__))
    index = {node: i for i, node in enumerate(node_ids)}

    edges: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for a, b in support:
        i, j = index[a], index[b]
        if i == j:
            raise ValueError(f"degenerate edge on node {a!r}")
        if i > j:
            raise ValueError(f"edge ({a!r}, {b!r}) is not oriented low-to-high in node order")
        if (i, j) in seen:
            raise ValueError(f"duplicate edge ({a!r}, {b!r})")
        seen.add((i, j))
        edges.append((i, j))
    edges.sort()

    neighbors: dict[int, set[int]] = defaultdict(set)
    for i, j in edges:
        neighbors[i].add(j)
        neighbors[j].add(i)

    triangles: list[tuple[int, int, int]] = []
    for i, j in edges:
        for k in sorted(neighbors[i] & neighbors[j]):
            if k > j:
                triangles.append((i, j, k))

    n0, n1, n2 = len(node_ids), len(edges), len(triangles)

    rows, cols, vals = [], [], []
    for e, (i, j) in enumerate(edges):
        rows += [i, j]
        cols += [e, e]
        vals += [-1.0, 1.0]
    boundary1 = sp.csc_matrix((vals, (rows, cols)), shape=(n0, n1))

    edge_pos = {pair: e for e, pair in enumerate(edges)}
    rows, cols, vals = [], [], []
    for t, (i, j, k) in enumerate(triangles):
        rows += [edge_pos[(i, j)], edge_pos[(i, k)], edge_pos[(j, k)]]
        cols += [t, t, t]
        vals += [1.0, -1.0, 1.0]
    boundary2 = sp.csc_matrix((vals, (rows, cols)), shape=(n1, n2))

    return OrientedComplex(node_ids, tuple(edges), tuple(triangles), boundary1, boundary2)


def _numerical_rank(matrix: sp.spmatrix, relative_tolerance: float | None) -> int:
    """Rank by singular values above a relative threshold (dense SVD)."""
    m, n = matrix.shape
    if m == 0 or n == 0:
        return 0
    singular = np.linalg.svd(matrix.toarray(), compute_uv=False)
    if singular.size == 0 or singular[0] == 0.0:
        return 0
    rel = relative_tolerance if relative_tolerance is not None else max(m, n) * np.finfo(float).eps
    return int(np.count_nonzero(singular > rel * singular[0]))


def betti(complex: OrientedComplex, tolerance: float | None = None) -> BettiNumbers:
    """Betti numbers by rank-nullity of the boundary matrices.

    ``tolerance`` is relative to the largest singular value; the default is
    the standard max(shape) * machine-epsilon rule.
    """
    rank1 = _numerical_rank(complex.boundary1, tolerance)
    rank2 = _numerical_rank(complex.boundary2, tolerance)
    return BettiNumbers(
        beta0=complex.n0 - rank1,
        beta1=complex.n1 - rank1 - rank2,
    )


def complex_summary(complex: OrientedComplex, betti_numbers: BettiNumbers | None = None) -> str:
    """Plain-text size and topology report for a complex."""
    b = betti_numbers if betti_numbers is not None else betti(complex)
    lines = [
        f"vertices (n0): {complex.n0}",
        f"edges (n1): {complex.n1}",
        f"triangles (n2): {complex.n2}",
        f"beta0: {b.beta0}",
        f"beta1: {b.beta1}",
    ]
    return "\n".join(lines) + "\n"
