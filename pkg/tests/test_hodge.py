"""Laplacian assembly and flow decomposition against dense oracles."""

import io

import numpy as np
import pytest

from hodgeflow.complexes import EdgeFlow, betti, build_clique_complex
from hodgeflow.hodge import (
    decompose,
    harmonic_basis,
    laplacian_l0,
    laplacian_l1,
    laplacian_l1_rw,
    laplacian_l1_symmetrized,
    normalization_degrees,
    write_decomposition,
    write_laplacian_coo,
)
from hodgeflow.synth import dense_oracle, random_flow, random_support

SINGLE_EDGE = [(0, 1)]
K3 = [(0, 1), (0, 2), (1, 2)]
PATH3 = [(0, 1), (1, 2)]
FOUR_CYCLE = [(0, 1), (1, 2), (2, 3), (0, 3)]
# two triangles sharing the edge (0, 1)
BOWTIE_EDGE = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3)]
TWO_CYCLES_BRIDGED = [
    (0, 1), (1, 2), (2, 3), (0, 3),
    (4, 5), (5, 6), (6, 7), (4, 7),
    (3, 4),
]


def _norm(x):
    return float(np.linalg.norm(x))


def _flow_from_pairs(cx, assignments):
    values = np.zeros(cx.n1)
    for pair, value in assignments.items():
        values[cx.edge_index[pair]] = value
    return values


# ------------------------------------------------------------------ laplacians


def test_l0_single_edge():
    cx = build_clique_complex(SINGLE_EDGE)
    np.testing.assert_array_equal(
        laplacian_l0(cx).matrix.toarray(), [[1.0, -1.0], [-1.0, 1.0]]
    )


def test_l0_k3():
    cx = build_clique_complex(K3)
    expected = 2.0 * np.eye(3) - (np.ones((3, 3)) - np.eye(3))
    np.testing.assert_array_equal(laplacian_l0(cx).matrix.toarray(), expected)


def test_l0_empty_support():
    cx = build_clique_complex([])
    assert laplacian_l0(cx).matrix.shape == (0, 0)


def test_l1_single_edge():
    cx = build_clique_complex(SINGLE_EDGE)
    b1, b2 = cx.boundary1.toarray(), cx.boundary2.toarray()
    expected = b1.T @ b1 + b2 @ b2.T
    np.testing.assert_array_equal(laplacian_l1(cx).matrix.toarray(), expected)
    np.testing.assert_array_equal(expected, [[2.0]])


def test_l1_k3_is_three_i():
    cx = build_clique_complex(K3)
    b1, b2 = cx.boundary1.toarray(), cx.boundary2.toarray()
    np.testing.assert_array_equal(b1.T @ b1 + b2 @ b2.T, 3.0 * np.eye(3))
    np.testing.assert_array_equal(laplacian_l1(cx).matrix.toarray(), 3.0 * np.eye(3))


def test_l1_four_cycle_kernel_dimension():
    cx = build_clique_complex(FOUR_CYCLE)
    evals = np.linalg.eigvalsh(laplacian_l1(cx).matrix.toarray())
    assert np.sum(evals < 1e-8 * evals.max()) == 1


def test_degrees_triangle_free():
    cx = build_clique_complex(FOUR_CYCLE)
    deg = normalization_degrees(cx)
    np.testing.assert_array_equal(deg.edge_degrees, np.ones(4))


def test_degrees_k3():
    cx = build_clique_complex(K3)
    deg = normalization_degrees(cx)
    np.testing.assert_array_equal(deg.edge_degrees, np.ones(3))
    np.testing.assert_array_equal(deg.node_degrees, 2.0 * np.array([2.0, 2.0, 2.0]))
    np.testing.assert_array_equal(deg.triangle_degrees, [1.0 / 3.0])


def test_degrees_shared_edge():
    cx = build_clique_complex(BOWTIE_EDGE)
    deg = normalization_degrees(cx)
    shared = cx.edge_index[(0, 1)]
    expected = np.ones(5)
    expected[shared] = 2.0
    np.testing.assert_array_equal(deg.edge_degrees, expected)


def test_rw_triangle_free_up_term_vanishes():
    cx = build_clique_complex(FOUR_CYCLE)
    rw = laplacian_l1_rw(cx)
    b1 = cx.boundary1
    d1_inv = np.diag(1.0 / rw.degrees.node_degrees)
    expected = (b1.T @ d1_inv @ b1.toarray())
    np.testing.assert_allclose(rw.matrix.toarray(), expected, atol=1e-14)


def test_rw_similar_to_symmetrized():
    cx = build_clique_complex(BOWTIE_EDGE)
    rw = laplacian_l1_rw(cx)
    sym = laplacian_l1_symmetrized(cx)
    s = np.sqrt(rw.degrees.edge_degrees)
    conjugated = np.diag(1.0 / s) @ rw.matrix.toarray() @ np.diag(s)
    np.testing.assert_allclose(conjugated, sym.matrix.toarray(), atol=1e-12)


def test_symmetrized_is_psd():
    cx = build_clique_complex(random_support(15, 0.4, 3))
    evals = np.linalg.eigvalsh(laplacian_l1_symmetrized(cx).matrix.toarray())
    assert evals.min() > -1e-10


# ------------------------------------------------------------------- decompose


@pytest.mark.parametrize("mode", ["unnormalized", "normalized"])
def test_k3_circulation_is_pure_curl(mode):
    cx = build_clique_complex(K3)
    f = np.array([1.0, -1.0, 1.0])  # circulation 0 -> 1 -> 2 -> 0
    dec = decompose(f, cx, mode=mode)
    assert _norm(dec.gradient.values) <= 1e-10
    assert _norm(dec.harmonic.values) <= 1e-10
    np.testing.assert_allclose(dec.curl.values, f, atol=1e-10)


@pytest.mark.parametrize("mode", ["unnormalized", "normalized"])
def test_path_potential_is_pure_gradient(mode):
    cx = build_clique_complex(PATH3)
    f = cx.boundary1.T @ np.array([0.0, 1.0, 2.0])
    np.testing.assert_array_equal(f, [1.0, 1.0])
    dec = decompose(f, cx, mode=mode)
    np.testing.assert_allclose(dec.gradient.values, f, atol=1e-10)
    assert _norm(dec.curl.values) <= 1e-10
    assert _norm(dec.harmonic.values) <= 1e-10


@pytest.mark.parametrize("mode", ["unnormalized", "normalized"])
def test_four_cycle_circulation_is_pure_harmonic(mode):
    cx = build_clique_complex(FOUR_CYCLE)
    # circulation 0 -> 1 -> 2 -> 3 -> 0 runs against the (0, 3) orientation
    f = _flow_from_pairs(cx, {(0, 1): 1.0, (1, 2): 1.0, (2, 3): 1.0, (0, 3): -1.0})
    dec = decompose(f, cx, mode=mode)
    assert _norm(dec.gradient.values) <= 1e-10
    assert _norm(dec.curl.values) <= 1e-10
    np.testing.assert_allclose(dec.harmonic.values, f, atol=1e-10)


def test_bowtie_random_flow_matches_oracle_and_modes_differ():
    cx = build_clique_complex(BOWTIE_EDGE)
    f = random_flow(cx, seed=42)
    results = {}
    for mode in ("unnormalized", "normalized"):
        dec = decompose(f, cx, mode=mode)
        oracle = dense_oracle(f, cx, mode=mode)
        for got, want in (
            (dec.gradient, oracle.gradient),
            (dec.curl, oracle.curl),
            (dec.harmonic, oracle.harmonic),
        ):
            assert _norm(got.values - want.values) <= 1e-8 * max(1.0, _norm(f.values))
        results[mode] = dec
    gap = max(
        np.abs(results["normalized"].gradient.values - results["unnormalized"].gradient.values).max(),
        np.abs(results["normalized"].curl.values - results["unnormalized"].curl.values).max(),
    )
    assert gap > 1e-3 * _norm(f.values)


def test_triangle_free_modes_coincide():
    cx = build_clique_complex(TWO_CYCLES_BRIDGED)
    f = random_flow(cx, seed=5)
    unnorm = decompose(f, cx, mode="unnormalized")
    norm = decompose(f, cx, mode="normalized")
    np.testing.assert_allclose(unnorm.gradient.values, norm.gradient.values, atol=1e-10)
    np.testing.assert_allclose(unnorm.curl.values, norm.curl.values, atol=1e-10)
    np.testing.assert_allclose(unnorm.harmonic.values, norm.harmonic.values, atol=1e-10)


@pytest.mark.parametrize("mode", ["unnormalized", "normalized"])
def test_reconstruction_orthogonality_membership(mode):
    for seed in range(5):
        cx = build_clique_complex(random_support(15, 0.35, 50 + seed))
        f = random_flow(cx, seed=seed)
        dec = decompose(f, cx, mode=mode)
        g, r, h = dec.gradient.values, dec.curl.values, dec.harmonic.values
        fn = _norm(f.values)
        assert _norm(f.values - (g + r + h)) <= 1e-8 * max(1.0, fn)
        assert abs(g @ r) <= 1e-8 * fn**2
        assert abs(g @ h) <= 1e-8 * fn**2
        assert abs(r @ h) <= 1e-8 * fn**2
        if mode == "unnormalized":
            b1, b2 = cx.boundary1, cx.boundary2
            assert _norm(b2.T @ g) <= 1e-8 * fn
            assert _norm(b1 @ r) <= 1e-8 * fn
            assert _norm(b1 @ h) <= 1e-8 * fn
            assert _norm(b2.T @ h) <= 1e-8 * fn
        else:
            d2 = normalization_degrees(cx).edge_degrees
            scale_up = np.sqrt(d2)
            assert _norm(cx.boundary2.T @ (g / scale_up)) <= 1e-8 * fn
            assert _norm(cx.boundary1 @ (r * scale_up)) <= 1e-8 * fn
            assert _norm(cx.boundary1 @ (h * scale_up)) <= 1e-8 * fn
            assert _norm(cx.boundary2.T @ (h / scale_up)) <= 1e-8 * fn


@pytest.mark.parametrize("mode", ["unnormalized", "normalized"])
def test_decompose_is_linear_and_odd(mode):
    cx = build_clique_complex(random_support(12, 0.4, 9))
    f1 = random_flow(cx, seed=1).values
    f2 = random_flow(cx, seed=2).values
    alpha = 2.5
    combo = decompose(alpha * f1 + f2, cx, mode=mode)
    d1 = decompose(f1, cx, mode=mode)
    d2 = decompose(f2, cx, mode=mode)
    tol = 1e-8 * max(1.0, _norm(alpha * f1 + f2))
    np.testing.assert_allclose(
        combo.gradient.values, alpha * d1.gradient.values + d2.gradient.values, atol=tol
    )
    np.testing.assert_allclose(
        combo.curl.values, alpha * d1.curl.values + d2.curl.values, atol=tol
    )
    np.testing.assert_allclose(
        combo.harmonic.values, alpha * d1.harmonic.values + d2.harmonic.values, atol=tol
    )
    negated = decompose(-f1, cx, mode=mode)
    np.testing.assert_allclose(negated.gradient.values, -d1.gradient.values, atol=tol)
    np.testing.assert_allclose(negated.curl.values, -d1.curl.values, atol=tol)
    np.testing.assert_allclose(negated.harmonic.values, -d1.harmonic.values, atol=tol)


@pytest.mark.parametrize("mode", ["unnormalized", "normalized"])
def test_lsqr_path_matches_dense_path(mode):
    cx = build_clique_complex(random_support(20, 0.3, 77))
    f = random_flow(cx, seed=77)
    dense = decompose(f, cx, mode=mode)
    sparse = decompose(f, cx, mode=mode, dense_cutoff=0)
    tol = 1e-7 * max(1.0, _norm(f.values))
    np.testing.assert_allclose(sparse.gradient.values, dense.gradient.values, atol=tol)
    np.testing.assert_allclose(sparse.curl.values, dense.curl.values, atol=tol)
    np.testing.assert_allclose(sparse.harmonic.values, dense.harmonic.values, atol=tol)


def test_flow_length_mismatch_rejected():
    cx = build_clique_complex(K3)
    with pytest.raises(ValueError, match="length"):
        decompose(np.zeros(5), cx)


def test_bad_mode_rejected():
    cx = build_clique_complex(K3)
    with pytest.raises(ValueError, match="mode"):
        decompose(np.zeros(3), cx, mode="weird")


# -------------------------------------------------------------- harmonic basis


def test_filled_triangle_has_empty_basis():
    cx = build_clique_complex(K3)
    basis = harmonic_basis(cx, mode="unnormalized")
    assert basis.dim == 0
    assert basis.vectors.shape == (3, 0)


@pytest.mark.parametrize("mode", ["unnormalized", "normalized"])
def test_four_cycle_basis(mode):
    cx = build_clique_complex(FOUR_CYCLE)
    basis = harmonic_basis(cx, mode=mode)
    assert basis.dim == 1
    expected = _flow_from_pairs(cx, {(0, 1): 1.0, (1, 2): 1.0, (2, 3): 1.0, (0, 3): -1.0}) / 2.0
    vec = basis.vectors[:, 0]
    assert min(_norm(vec - expected), _norm(vec + expected)) <= 1e-10
    assert basis.warning is None
    # deterministic sign convention: largest-magnitude entry positive
    assert vec[np.argmax(np.abs(vec))] > 0


@pytest.mark.parametrize("mode", ["unnormalized", "normalized"])
def test_bridged_cycles_basis_spans_dense_kernel(mode):
    cx = build_clique_complex(TWO_CYCLES_BRIDGED)
    basis = harmonic_basis(cx, mode=mode)
    assert basis.dim == 2
    matrix = (
        laplacian_l1(cx) if mode == "unnormalized" else laplacian_l1_symmetrized(cx)
    ).matrix.toarray()
    evals, evecs = np.linalg.eigh(matrix)
    kernel = evecs[:, evals < 1e-8 * evals.max()]
    # identical projectors <=> identical spans
    np.testing.assert_allclose(
        basis.vectors @ basis.vectors.T, kernel @ kernel.T, atol=1e-8
    )
    np.testing.assert_allclose(basis.vectors.T @ basis.vectors, np.eye(2), atol=1e-10)
    # each kernel vector is annihilated by the defining Laplacian
    assert _norm(matrix @ basis.vectors) <= 1e-8


def test_kernel_dimension_matches_betti_on_random_complexes():
    for seed in range(20):
        cx = build_clique_complex(random_support(12, 0.25, 300 + seed))
        if cx.n1 == 0:
            continue
        b = betti(cx)
        for mode in ("unnormalized", "normalized"):
            assert harmonic_basis(cx, mode=mode).dim == b.beta1


def test_sparse_eigensolver_path_matches_dense():
    cx = build_clique_complex(random_support(25, 0.2, 4))
    dense = harmonic_basis(cx, mode="normalized")
    sparse = harmonic_basis(cx, mode="normalized", dense_cutoff=0)
    assert sparse.dim == dense.dim
    np.testing.assert_allclose(
        sparse.vectors @ sparse.vectors.T, dense.vectors @ dense.vectors.T, atol=1e-7
    )


def test_ambiguous_gap_attaches_warning():
    cx = build_clique_complex(FOUR_CYCLE)
    clean = harmonic_basis(cx, gap_threshold=1e-2)
    assert clean.warning is None
    assert clean.eigenvalue_gap < 1e-2
    # any kernel-bearing complex trips a threshold below the measured ratio
    touchy = harmonic_basis(cx, gap_threshold=-1.0)
    assert touchy.warning is not None
    assert "ambiguous spectral gap" in touchy.warning


def test_solver_nonconvergence_carries_iterations_and_residual(monkeypatch):
    import hodgeflow.hodge as hodge_module

    def fake_lsqr(A, rhs, atol, btol, iter_lim):
        return (np.zeros(A.shape[1]), 7, iter_lim, 1.23, 0, 0, 0, 0, 0, 0)

    monkeypatch.setattr(hodge_module.spla, "lsqr", fake_lsqr)
    cx = build_clique_complex(K3)
    with pytest.raises(hodge_module.SolverConvergenceError) as excinfo:
        decompose(np.ones(3), cx, mode="unnormalized", dense_cutoff=0)
    assert excinfo.value.iterations == 10 * cx.n1
    assert excinfo.value.residual == 1.23
    assert "did not converge" in str(excinfo.value)


# --------------------------------------------------------------------- exports


def test_write_decomposition_roundtrip():
    cx = build_clique_complex([("a", "b"), ("a", "c"), ("b", "c")])
    f = EdgeFlow(np.array([1.0, -1.0, 1.0]))
    dec = decompose(f, cx, mode="unnormalized")
    buffer = io.StringIO()
    write_decomposition(buffer, cx, f, dec)
    lines = buffer.getvalue().strip().splitlines()
    assert lines[0] == "edge_index,from_id,to_id,f,g,r,h"
    assert len(lines) == 4
    first = lines[1].split(",")
    assert first[:3] == ["0", "a", "b"]
    assert float(first[3]) == 1.0


def test_write_laplacian_coo():
    cx = build_clique_complex(SINGLE_EDGE)
    buffer = io.StringIO()
    write_laplacian_coo(buffer, laplacian_l1(cx))
    assert buffer.getvalue() == "row,col,value\n0,0,2.0\n"
