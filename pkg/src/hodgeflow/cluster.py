"""Edge clusterings from harmonic structure, geography, and system membership.

Harmonic clustering treats each edge's row of the kernel-eigenvector matrix
as its coordinate vector, normalizes rows to unit length, and runs spectral
clustering on the absolute-cosine affinity. This is a transparent stand-in
for heavier subspace clustering; any callable with the same signature can be
plugged in instead. Edges whose harmonic coordinates are (near) zero carry
no signal; they are assigned to the nearest cluster centroid and flagged
weak. Geographic and system-pair clusterings are the comparison baselines,
and adjusted mutual information (arithmetic-mean normalizer) scores the
agreement between any two clusterings on their common edges.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from sklearn.cluster import KMeans, SpectralClustering
from sklearn.metrics import adjusted_mutual_info_score

from hodgeflow.hodge import HarmonicBasis

__all__ = [
    "ProviderGeo",
    "EdgeClustering",
    "harmonic_cluster",
    "geo_kmeans",
    "system_pair_clusters",
    "adjusted_mutual_information",
    "common_edges",
    "write_clusters",
    "write_ami_report",
]

DEFAULT_K = 10
WEAK_ROW_NORM = 1e-10
AMI_NORMALIZER = "arithmetic"
HARMONIC_METHOD_NOTE = (
    "harmonic clustering uses row-normalized absolute-cosine spectral clustering, "
    "a transparent stand-in for subspace clustering"
)


@dataclass(frozen=True)
class ProviderGeo:
    """Geocoded provider with optional health-system membership."""

    node_id: str
    latitude: float
    longitude: float
    system_id: str | None = None

    def __post_init__(self) -> None:
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} out of range [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude {self.longitude} out of range [-180, 180]")


@dataclass(frozen=True)
class EdgeClustering:
    """Cluster labels over a covered subset of a complex's edges.

    ``edge_indices`` names the covered edges (indices into the complex edge
    list); ``labels`` aligns with it. Edges excluded for missing data are
    counted in ``n_excluded``.
    """

    labels: np.ndarray
    k: int
    method: str
    edge_indices: np.ndarray
    weak: np.ndarray | None = None
    n_edges_total: int = 0
    n_excluded: int = 0
    inertia: float | None = None

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=int)
        indices = np.asarray(self.edge_indices, dtype=int)
        if labels.shape != indices.shape:
            raise ValueError("labels and edge_indices must have equal length")
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise ValueError(f"labels must lie in [0, {self.k})")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "edge_indices", indices)


def _spectral_labels(affinity: np.ndarray, k: int, seed: int) -> np.ndarray:
    if k == 1:
        return np.zeros(affinity.shape[0], dtype=int)
    model = SpectralClustering(
        n_clusters=k,
        affinity="precomputed",
        random_state=seed,
        assign_labels="kmeans",
        n_init=10,
    )
    return model.fit_predict(affinity)


def harmonic_cluster(
    basis: HarmonicBasis,
    k: int = DEFAULT_K,
    seed: int = 0,
    cluster_fn: Callable[[np.ndarray, int, int], np.ndarray] | None = None,
) -> EdgeClustering:
    """Cluster edges by their harmonic coordinate rows.

    Rows are unit-normalized and compared by absolute cosine similarity;
    ``cluster_fn(affinity, k, seed) -> labels`` may replace the default
    spectral clustering. Near-zero rows are assigned to the nearest cluster
    centroid afterwards and flagged weak.
    """
    if basis.dim == 0:
        raise ValueError("no harmonic structure to cluster (basis is empty)")
    if k < 1:
        raise ValueError(f"cluster count must be >= 1, got {k}")
    coords = basis.vectors
    n_edges = coords.shape[0]
    norms = np.linalg.norm(coords, axis=1)
    strong = norms >= WEAK_ROW_NORM
    n_strong = int(strong.sum())
    if n_strong == 0:
        raise ValueError("no harmonic structure to cluster (all rows are zero)")
    if k > n_strong:
        raise ValueError(
            f"cluster count {k} exceeds the {n_strong} edges with harmonic signal"
        )

    unit_rows = coords[strong] / norms[strong, None]
    affinity = np.clip(np.abs(unit_rows @ unit_rows.T), 0.0, 1.0)
    labeler = cluster_fn if cluster_fn is not None else _spectral_labels
    strong_labels = np.asarray(labeler(affinity, k, seed), dtype=int)

    labels = np.empty(n_edges, dtype=int)
    labels[strong] = strong_labels
    if n_strong < n_edges:
        present = np.unique(strong_labels)
        centroids = np.vstack(
            [unit_rows[strong_labels == label].mean(axis=0) for label in present]
        )
        weak_coords = coords[~strong]
        distances = np.linalg.norm(weak_coords[:, None, :] - centroids[None, :, :], axis=2)
        labels[~strong] = present[distances.argmin(axis=1)]
    return EdgeClustering(
        labels=labels,
        k=k,
        method="harmonic",
        edge_indices=np.arange(n_edges),
        weak=~strong,
        n_edges_total=n_edges,
        n_excluded=0,
    )


def geo_kmeans(
    edges: Sequence[tuple],
    geo: Mapping[str, ProviderGeo],
    k: int = DEFAULT_K,
    seed: int = 0,
    restarts: int = 100,
) -> EdgeClustering:
    """K-means over edge features (lat_i, lon_i, lat_j, lon_j) in orientation order.

    Edges with an ungeocoded endpoint are excluded and counted.
    """
    if k < 1:
        raise ValueError(f"cluster count must be >= 1, got {k}")
    features = []
    covered = []
    for index, (src, dst) in enumerate(edges):
        a, b = geo.get(src), geo.get(dst)
        if a is None or b is None:
            continue
        features.append([a.latitude, a.longitude, b.latitude, b.longitude])
        covered.append(index)
    if len(covered) < k:
        raise ValueError(f"cluster count {k} exceeds the {len(covered)} geocoded edges")
    matrix = np.asarray(features)
    model = KMeans(n_clusters=k, init="k-means++", n_init=restarts, random_state=seed)
    labels = model.fit_predict(matrix)
    return EdgeClustering(
        labels=labels,
        k=k,
        method="geo-kmeans",
        edge_indices=np.asarray(covered),
        n_edges_total=len(edges),
        n_excluded=len(edges) - len(covered),
        inertia=float(model.inertia_),
    )


def system_pair_clusters(
    edges: Sequence[tuple], geo: Mapping[str, ProviderGeo]
) -> EdgeClustering:
    """Label each edge by the unordered pair of its endpoints' health systems."""
    pairs = []
    covered = []
    for index, (src, dst) in enumerate(edges):
        a, b = geo.get(src), geo.get(dst)
        if a is None or b is None or a.system_id is None or b.system_id is None:
            continue
        pairs.append(tuple(sorted((a.system_id, b.system_id))))
        covered.append(index)
    label_of = {pair: label for label, pair in enumerate(sorted(set(pairs)))}
    labels = np.array([label_of[pair] for pair in pairs], dtype=int)
    return EdgeClustering(
        labels=labels,
        k=max(len(label_of), 1),
        method="system-pair",
        edge_indices=np.asarray(covered, dtype=int),
        n_edges_total=len(edges),
        n_excluded=len(edges) - len(covered),
    )


def common_edges(a: EdgeClustering, b: EdgeClustering):
    """Shared edge indices of two clusterings plus their aligned labels."""
    shared, a_pos, b_pos = np.intersect1d(
        a.edge_indices, b.edge_indices, return_indices=True
    )
    return shared, a.labels[a_pos], b.labels[b_pos]


def adjusted_mutual_information(a: EdgeClustering, b: EdgeClustering) -> float:
    """Chance-corrected agreement of two clusterings on their common edges.

    Uses the hypergeometric expected mutual information with the arithmetic
    mean of the two entropies as normalizer.
    """
    shared, labels_a, labels_b = common_edges(a, b)
    if shared.size < 2:
        raise ValueError(
            f"need at least 2 edges in common to compare clusterings, got {shared.size}"
        )
    return float(
        adjusted_mutual_info_score(labels_a, labels_b, average_method=AMI_NORMALIZER)
    )


def write_clusters(destination, clusterings, endpoint_ids: Sequence[tuple]) -> None:
    """Per-edge cluster table (edge index, endpoint ids, label, method, weak flag).

    Accepts one clustering or several sharing the same edge list; rows are
    grouped by method in the order given.
    """
    if isinstance(clusterings, EdgeClustering):
        clusterings = [clusterings]
    handle, owned = (destination, False) if hasattr(destination, "write") else (
        open(destination, "w", encoding="utf-8", newline=""),
        True,
    )
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["edge_index", "from_id", "to_id", "label", "method", "weak"])
        for clustering in clusterings:
            for pos, edge in enumerate(clustering.edge_indices):
                src, dst = endpoint_ids[int(edge)]
                weak = bool(clustering.weak[pos]) if clustering.weak is not None else False
                writer.writerow(
                    [int(edge), src, dst, int(clustering.labels[pos]), clustering.method, int(weak)]
                )
    finally:
        if owned:
            handle.close()


def write_ami_report(destination, rows: Iterable[Mapping]) -> None:
    """AMI comparison table: method pair, common edge count, score."""
    handle, owned = (destination, False) if hasattr(destination, "write") else (
        open(destination, "w", encoding="utf-8", newline=""),
        True,
    )
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["method_a", "method_b", "n_common", "ami"])
        for row in rows:
            writer.writerow(
                [row["method_a"], row["method_b"], row["n_common"], repr(float(row["ami"]))]
            )
    finally:
        if owned:
            handle.close()
