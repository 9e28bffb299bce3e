"""Synthetic complexes and flows with known decomposition structure.

``plant`` builds a flow whose gradient, curl, and harmonic parts are exact
by construction, so recovery can be checked componentwise. ``dense_oracle``
recomputes a decomposition through full pivoted-QR orthonormal bases and
explicit projection, a deliberately different algorithm from the production
least-squares path, making agreement between the two meaningful evidence.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np
import scipy.linalg

from hodgeflow.complexes import EdgeFlow, OrientedComplex
from hodgeflow.hodge import (
    HarmonicBasis,
    HodgeDecomposition,
    _subspace_operators,
    harmonic_basis,
)

__all__ = [
    "PlantedFlow",
    "plant",
    "random_support",
    "random_flow",
    "dense_oracle",
    "write_synthetic_inputs",
]

ORACLE_SIZE_CAP = 2000


@dataclass(frozen=True)
class PlantedFlow:
    """A flow assembled from exactly known components."""

    complex: OrientedComplex
    flow: EdgeFlow
    gradient: EdgeFlow
    curl: EdgeFlow
    harmonic: EdgeFlow
    mode: str


def plant(
    complex: OrientedComplex,
    potential: np.ndarray | None = None,
    curl_weights: np.ndarray | None = None,
    harmonic_coeffs: np.ndarray | None = None,
    mode: str = "unnormalized",
    basis: HarmonicBasis | None = None,
) -> PlantedFlow:
    """Build a flow from a node potential, triangle weights, and harmonic coefficients.

    The three resulting components live in the mode's gradient image, curl
    image, and harmonic kernel respectively, and are recorded exactly.
    """
    gradient_ops, curl_ops = _subspace_operators(complex, mode)
    n1 = complex.n1
    gradient = np.zeros(n1)
    curl = np.zeros(n1)
    harmonic = np.zeros(n1)

    if potential is not None:
        p = np.asarray(potential, dtype=float)
        if p.shape != (complex.n0,):
            raise ValueError(f"potential has shape {p.shape}, expected ({complex.n0},)")
        gradient = gradient_ops @ p
    if curl_weights is not None:
        w = np.asarray(curl_weights, dtype=float)
        if w.shape != (complex.n2,):
            raise ValueError(f"curl_weights has shape {w.shape}, expected ({complex.n2},)")
        curl = curl_ops @ w
    if harmonic_coeffs is not None:
        coeffs = np.asarray(harmonic_coeffs, dtype=float)
        if basis is None:
            basis = harmonic_basis(complex, mode=mode)
        if basis.dim == 0:
            raise ValueError("complex has no harmonic space (beta1 = 0); cannot plant harmonic flow")
        if coeffs.shape != (basis.dim,):
            raise ValueError(f"harmonic_coeffs has shape {coeffs.shape}, expected ({basis.dim},)")
        harmonic = basis.vectors @ coeffs

    flow = gradient + curl + harmonic
    return PlantedFlow(
        complex=complex,
        flow=EdgeFlow(flow),
        gradient=EdgeFlow(gradient),
        curl=EdgeFlow(curl),
        harmonic=EdgeFlow(harmonic),
        mode=mode,
    )


def random_support(n: int, p: float, seed: int) -> tuple:
    """Erdos-Renyi edge support on zero-padded string node ids, seeded."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge probability must lie in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    ids = [f"v{i:03d}" for i in range(n)]
    pairs = list(combinations(ids, 2))
    keep = rng.random(len(pairs)) < p
    return tuple(pair for pair, k in zip(pairs, keep) if k)


def random_flow(complex: OrientedComplex, seed: int) -> EdgeFlow:
    """Standard normal flow on the edges of a complex, seeded."""
    rng = np.random.default_rng(seed)
    return EdgeFlow(rng.standard_normal(complex.n1))


def _orthonormal_image(A: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the column space via pivoted QR with a rank cut."""
    if A.shape[1] == 0:
        return np.zeros((A.shape[0], 0))
    Q, R, _ = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        return np.zeros((A.shape[0], 0))
    rank = int(np.count_nonzero(diag > max(A.shape) * np.finfo(float).eps * diag[0]))
    return Q[:, :rank]


def dense_oracle(flow, complex: OrientedComplex, mode: str = "unnormalized") -> HodgeDecomposition:
    """Reference decomposition through explicit dense orthogonal projection."""
    if complex.n1 > ORACLE_SIZE_CAP:
        raise ValueError(f"dense oracle is capped at {ORACLE_SIZE_CAP} edges, got {complex.n1}")
    f = flow.values if isinstance(flow, EdgeFlow) else np.asarray(flow, dtype=float)
    if f.shape != (complex.n1,):
        raise ValueError(f"flow has shape {f.shape}, expected ({complex.n1},)")
    gradient_ops, curl_ops = _subspace_operators(complex, mode)
    q_gradient = _orthonormal_image(gradient_ops.toarray())
    q_curl = _orthonormal_image(curl_ops.toarray())
    gradient = q_gradient @ (q_gradient.T @ f)
    curl = q_curl @ (q_curl.T @ f)
    harmonic = f - gradient - curl
    return HodgeDecomposition(
        gradient=EdgeFlow(gradient),
        curl=EdgeFlow(curl),
        harmonic=EdgeFlow(harmonic),
        residual_norm=0.0,
        mode=mode,
    )


def write_synthetic_inputs(
    out_dir,
    regions: int = 2,
    nodes: int = 12,
    edge_probability: float = 0.35,
    years: tuple[int, ...] = (2017,),
    seed: int = 0,
    max_weight: int = 20,
) -> dict:
    """Write a synthetic edges.csv and providers.csv in the ingest schema.

    Each region gets an independent Erdos-Renyi support whose arcs carry
    random integer weights in both directions, a geographic colony of
    providers around a region-specific centroid, and two health systems.
    Returns the paths written plus row counts.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    edges_path = out / "edges.csv"
    providers_path = out / "providers.csv"
    n_edges = 0
    with open(edges_path, "w", encoding="utf-8", newline="") as edges_file, open(
        providers_path, "w", encoding="utf-8", newline=""
    ) as providers_file:
        edge_writer = csv.writer(edges_file, lineterminator="\n")
        edge_writer.writerow(["from_id", "to_id", "weight", "year"])
        provider_writer = csv.writer(providers_file, lineterminator="\n")
        provider_writer.writerow(
            ["id", "address", "region_id", "lat", "lon", "system_id", "taxonomy", "entity_type"]
        )
        for r in range(regions):
            region_id = f"R{r:02d}"
            ids = [f"{region_id}-p{i:03d}" for i in range(nodes)]
            base_lat = 40.0 + 2.0 * r
            base_lon = -120.0 + 10.0 * r
            for i, node in enumerate(ids):
                lat = base_lat + float(rng.normal(0.0, 0.05))
                lon = base_lon + float(rng.normal(0.0, 0.05))
                system = f"{region_id}-S{int(rng.integers(0, 2))}"
                provider_writer.writerow(
                    [
                        node,
                        f"{i} Main St, {region_id}",
                        region_id,
                        repr(lat),
                        repr(lon),
                        system,
                        "primary_care",
                        "individual",
                    ]
                )
            pairs = [
                (a, b)
                for a, b in combinations(ids, 2)
                if rng.random() < edge_probability
            ]
            for year in years:
                for a, b in pairs:
                    forward = int(rng.integers(0, max_weight + 1))
                    backward = int(rng.integers(0, max_weight + 1))
                    if forward == 0 and backward == 0:
                        forward = 1
                    if forward:
                        edge_writer.writerow([a, b, forward, year])
                        n_edges += 1
                    if backward:
                        edge_writer.writerow([b, a, backward, year])
                        n_edges += 1
    return {"edges": edges_path, "providers": providers_path, "n_edge_rows": n_edges}
