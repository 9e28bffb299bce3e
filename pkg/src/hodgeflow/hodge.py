"""Hodge Laplacians and the orthogonal decomposition of edge flows.

The edge Laplacian is assembled from the boundary matrices of an oriented
clique complex. Its unnormalized form is

    L1 = B1' B1 + B2 B2'

and the random-walk normalized form rescales both terms by degree matrices

    L1_rw = D2 B1' D1^-1 B1 + B2 D3 B2' D2^-1

with D2 the adjusted triangle-incidence degree of each edge (floored at 1),
D1 = 2 * diag(|B1| D2 1) the weighted node degrees, and D3 = I/3. The
random-walk form is similar to a symmetric positive semi-definite matrix by
conjugation with D2^(1/2), which is what the kernel computations use.

An edge flow splits orthogonally (standard inner product) into:

    gradient  g  in im(B1')           (acyclic, sums to zero around cycles)
    curl      r  in im(B2)            (circulation around filled triangles)
    harmonic  h  in ker(L1)           (circulation around unfilled holes)

In normalized mode the gradient image is scaled to im(D2^(1/2) B1') and the
curl image to im(D2^(-1/2) B2); these stay mutually orthogonal because
B1 B2 = 0, and the harmonic remainder lies in the kernel of the symmetrized
normalized Laplacian. Projections are computed by least squares: dense SVD
below ``dense_cutoff`` edges, LSQR above it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from hodgeflow.complexes import EdgeFlow, OrientedComplex

__all__ = [
    "NormalizationDegrees",
    "HodgeLaplacian",
    "HodgeDecomposition",
    "HarmonicBasis",
    "SolverConvergenceError",
    "normalization_degrees",
    "laplacian_l0",
    "laplacian_l1",
    "laplacian_l1_rw",
    "laplacian_l1_symmetrized",
    "decompose",
    "harmonic_basis",
    "write_decomposition",
    "write_laplacian_coo",
]

MODES = ("unnormalized", "normalized")

DEFAULT_SOLVER_TOLERANCE = 1e-10
DEFAULT_EIGEN_TOLERANCE = 1e-8
DENSE_SOLVE_CUTOFF = 500
DENSE_EIGEN_CUTOFF = 3000


class SolverConvergenceError(RuntimeError):
    """Least-squares projection failed to converge within the iteration cap."""

    def __init__(self, iterations: int, residual: float):
        super().__init__(
            f"projection solver did not converge after {iterations} iterations "
            f"(residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class NormalizationDegrees:
    """Diagonal degree rescalings for the random-walk normalized Laplacian."""

    node_degrees: np.ndarray      # 2 * |B1| @ edge_degrees, length n0
    edge_degrees: np.ndarray      # max(#incident triangles, 1), length n1
    triangle_degrees: np.ndarray  # constant 1/3, length n2


@dataclass(frozen=True)
class HodgeLaplacian:
    kind: str  # "unnormalized" | "random-walk" | "symmetrized"
    matrix: sp.csc_matrix
    degrees: NormalizationDegrees | None = None


@dataclass(frozen=True)
class HodgeDecomposition:
    """Gradient + curl + harmonic split of one edge flow."""

    gradient: EdgeFlow
    curl: EdgeFlow
    harmonic: EdgeFlow
    residual_norm: float
    mode: str


@dataclass(frozen=True)
class HarmonicBasis:
    """Orthonormal kernel vectors of the edge Laplacian, one row per edge.

    ``eigenvalue_gap`` is the largest retained (near-zero) eigenvalue over
    the smallest rejected one; a value near 1 means the kernel cutoff was
    ambiguous, in which case ``warning`` is set.
    """

    vectors: np.ndarray
    eigenvalue_gap: float
    tolerance: float
    mode: str
    warning: str | None = None

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


def normalization_degrees(complex: OrientedComplex) -> NormalizationDegrees:
    """Edge, node, and triangle degrees used by the random-walk normalization."""
    incident = np.asarray(abs(complex.boundary2).sum(axis=1)).ravel()
    edge_degrees = np.maximum(incident, 1.0)
    node_degrees = 2.0 * (abs(complex.boundary1) @ edge_degrees)
    triangle_degrees = np.full(complex.n2, 1.0 / 3.0)
    return NormalizationDegrees(node_degrees, edge_degrees, triangle_degrees)


def laplacian_l0(complex: OrientedComplex) -> HodgeLaplacian:
    """Node Laplacian B1 B1', equal to degree-minus-adjacency of the support."""
    matrix = (complex.boundary1 @ complex.boundary1.T).tocsc()
    return HodgeLaplacian("unnormalized", matrix)


def laplacian_l1(complex: OrientedComplex) -> HodgeLaplacian:
    """Unnormalized edge Laplacian B1' B1 + B2 B2' (symmetric PSD)."""
    b1, b2 = complex.boundary1, complex.boundary2
    matrix = (b1.T @ b1 + b2 @ b2.T).tocsc()
    return HodgeLaplacian("unnormalized", matrix)


def laplacian_l1_rw(complex: OrientedComplex) -> HodgeLaplacian:
    """Random-walk normalized edge Laplacian D2 B1' D1^-1 B1 + B2 D3 B2' D2^-1."""
    deg = normalization_degrees(complex)
    b1, b2 = complex.boundary1, complex.boundary2
    d1_inv = sp.diags(1.0 / deg.node_degrees) if complex.n0 else sp.csc_matrix((0, 0))
    d2 = sp.diags(deg.edge_degrees) if complex.n1 else sp.csc_matrix((0, 0))
    d2_inv = sp.diags(1.0 / deg.edge_degrees) if complex.n1 else sp.csc_matrix((0, 0))
    d3 = sp.diags(deg.triangle_degrees) if complex.n2 else sp.csc_matrix((0, 0))
    down = d2 @ b1.T @ d1_inv @ b1
    up = b2 @ d3 @ b2.T @ d2_inv
    return HodgeLaplacian("random-walk", (down + up).tocsc(), deg)


def laplacian_l1_symmetrized(complex: OrientedComplex) -> HodgeLaplacian:
    """Symmetric PSD form similar to the random-walk Laplacian via D2^(1/2)."""
    deg = normalization_degrees(complex)
    b1, b2 = complex.boundary1, complex.boundary2
    sqrt_d2 = np.sqrt(deg.edge_degrees)
    d2_half = sp.diags(sqrt_d2) if complex.n1 else sp.csc_matrix((0, 0))
    d2_half_inv = sp.diags(1.0 / sqrt_d2) if complex.n1 else sp.csc_matrix((0, 0))
    d1_inv = sp.diags(1.0 / deg.node_degrees) if complex.n0 else sp.csc_matrix((0, 0))
    d3 = sp.diags(deg.triangle_degrees) if complex.n2 else sp.csc_matrix((0, 0))
    down = d2_half @ b1.T @ d1_inv @ b1 @ d2_half
    up = d2_half_inv @ b2 @ d3 @ b2.T @ d2_half_inv
    matrix = (down + up).tocsc()
    # enforce exact symmetry against roundoff
    matrix = ((matrix + matrix.T) * 0.5).tocsc()
    return HodgeLaplacian("symmetrized", matrix, deg)


def _flow_vector(flow, n1: int) -> np.ndarray:
    values = flow.values if isinstance(flow, EdgeFlow) else np.asarray(flow, dtype=float)
    if values.shape != (n1,):
        raise ValueError(f"flow has length {values.shape}, expected ({n1},)")
    return values


def _subspace_operators(complex: OrientedComplex, mode: str):
    """Column bases (as sparse operators) of the gradient and curl images."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    gradient_ops = complex.boundary1.T.tocsc()
    curl_ops = complex.boundary2
    if mode == "normalized":
        deg = normalization_degrees(complex)
        sqrt_d2 = np.sqrt(deg.edge_degrees)
        gradient_ops = (sp.diags(sqrt_d2) @ gradient_ops).tocsc()
        curl_ops = (sp.diags(1.0 / sqrt_d2) @ curl_ops).tocsc()
    return gradient_ops, curl_ops


def _least_squares(A: sp.spmatrix, rhs: np.ndarray, tolerance: float, dense_cutoff: int) -> np.ndarray:
    if A.shape[1] == 0 or A.shape[0] == 0:
        return np.zeros(A.shape[1])
    if A.shape[0] <= dense_cutoff:
        solution, *_ = np.linalg.lstsq(A.toarray(), rhs, rcond=None)
        return solution
    result = spla.lsqr(A, rhs, atol=tolerance, btol=tolerance, iter_lim=10 * A.shape[0])
    solution, istop, itn, r1norm = result[0], result[1], result[2], result[3]
    if istop == 7:
        raise SolverConvergenceError(iterations=int(itn), residual=float(r1norm))
    return solution


def decompose(
    flow,
    complex: OrientedComplex,
    mode: str = "normalized",
    solver_tolerance: float = DEFAULT_SOLVER_TOLERANCE,
    dense_cutoff: int = DENSE_SOLVE_CUTOFF,
) -> HodgeDecomposition:
    """Split an edge flow into gradient, curl, and harmonic components.

    The gradient and curl parts are standard-inner-product orthogonal
    projections onto the mode's image subspaces; the harmonic part is the
    remainder. ``residual_norm`` reports the reconstruction defect (zero by
    construction) for auditing.
    """
    f = _flow_vector(flow, complex.n1)
    gradient_ops, curl_ops = _subspace_operators(complex, mode)
    potential = _least_squares(gradient_ops, f, solver_tolerance, dense_cutoff)
    gradient = gradient_ops @ potential if potential.size else np.zeros_like(f)
    if complex.n2:
        weights = _least_squares(curl_ops, f, solver_tolerance, dense_cutoff)
        curl = curl_ops @ weights
    else:
        curl = np.zeros_like(f)
    harmonic = f - gradient - curl
    residual = float(np.linalg.norm(f - (gradient + curl + harmonic)))
    return HodgeDecomposition(
        gradient=EdgeFlow(gradient),
        curl=EdgeFlow(curl),
        harmonic=EdgeFlow(harmonic),
        residual_norm=residual,
        mode=mode,
    )


def _fix_column_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    fixed = vectors.copy()
    for col in range(fixed.shape[1]):
        anchor = int(np.argmax(np.abs(fixed[:, col])))
        if fixed[anchor, col] < 0:
            fixed[:, col] = -fixed[:, col]
    return fixed


def _smallest_eigenpairs(matrix: sp.csc_matrix, eigen_tolerance: float):
    """Low end of the spectrum of a large sparse PSD matrix via shift-invert.

    Requests progressively more eigenpairs until at least one falls above the
    kernel cutoff (or the full spectrum is exhausted). Returns the computed
    eigenvalues (ascending), their vectors, and the largest eigenvalue.
    """
    n = matrix.shape[0]
    lam_max = float(
        spla.eigsh(matrix, k=1, which="LA", return_eigenvectors=False, tol=1e-6)[0]
    )
    cutoff = eigen_tolerance * lam_max
    k = 16
    while True:
        k_eff = min(k, n - 1)
        sigma = -max(lam_max, 1.0) * 1e-3
        evals, evecs = spla.eigsh(matrix, k=k_eff, sigma=sigma, which="LM")
        order = np.argsort(evals)
        evals, evecs = evals[order], evecs[:, order]
        if np.any(evals >= cutoff) or k_eff == n - 1:
            return evals, evecs, lam_max
        k *= 2


def harmonic_basis(
    complex: OrientedComplex,
    mode: str = "normalized",
    eigen_tolerance: float = DEFAULT_EIGEN_TOLERANCE,
    gap_threshold: float = 1e-2,
    dense_cutoff: int = DENSE_EIGEN_CUTOFF,
) -> HarmonicBasis:
    """Orthonormal basis of the kernel of the mode's edge Laplacian.

    Eigenvalues below ``eigen_tolerance`` times the largest eigenvalue count
    as zero. A retained/rejected eigenvalue ratio above ``gap_threshold``
    attaches a warning instead of failing.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if complex.n1 == 0:
        return HarmonicBasis(np.zeros((0, 0)), 0.0, eigen_tolerance, mode)
    laplacian = laplacian_l1(complex) if mode == "unnormalized" else laplacian_l1_symmetrized(complex)
    if complex.n1 <= dense_cutoff:
        evals, evecs = np.linalg.eigh(laplacian.matrix.toarray())
        lam_max = float(evals[-1])
    else:
        evals, evecs, lam_max = _smallest_eigenpairs(laplacian.matrix, eigen_tolerance)
    evals = np.maximum(evals, 0.0)
    cutoff = eigen_tolerance * lam_max
    retained = evals < cutoff
    kernel = evecs[:, retained]
    if kernel.shape[1]:
        kernel, _ = np.linalg.qr(kernel)
        kernel = _fix_column_signs(kernel)

    rejected = evals[~retained]
    if retained.any() and rejected.size:
        gap = float(evals[retained].max() / rejected.min())
    else:
        gap = 0.0
    warning = None
    if gap > gap_threshold:
        warning = (
            f"ambiguous spectral gap: retained/rejected eigenvalue ratio "
            f"{gap:.3e} exceeds {gap_threshold:.3e}"
        )
    return HarmonicBasis(kernel, gap, eigen_tolerance, mode, warning)


# ------------------------------------------------------------------- exports


def _as_text_handle(destination) -> tuple[IO[str], bool]:
    if hasattr(destination, "write"):
        return destination, False
    return open(destination, "w", encoding="utf-8", newline=""), True


def write_decomposition(destination, complex: OrientedComplex, flow, decomposition: HodgeDecomposition) -> None:
    """Per-edge table (edge index, endpoint ids, f, g, r, h) as CSV."""
    f = _flow_vector(flow, complex.n1)
    handle, owned = _as_text_handle(destination)
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["edge_index", "from_id", "to_id", "f", "g", "r", "h"])
        for e in range(complex.n1):
            src, dst = complex.edge_endpoints(e)
            writer.writerow(
                [
                    e,
                    src,
                    dst,
                    repr(float(f[e])),
                    repr(float(decomposition.gradient.values[e])),
                    repr(float(decomposition.curl.values[e])),
                    repr(float(decomposition.harmonic.values[e])),
                ]
            )
    finally:
        if owned:
            handle.close()


def write_laplacian_coo(destination, laplacian: HodgeLaplacian) -> None:
    """Coordinate-format (row, col, value) dump of a Laplacian, sorted by row then col."""
    coo = laplacian.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    handle, owned = _as_text_handle(destination)
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["row", "col", "value"])
        for idx in order:
            writer.writerow([int(coo.row[idx]), int(coo.col[idx]), repr(float(coo.data[idx]))])
    finally:
        if owned:
            handle.close()
