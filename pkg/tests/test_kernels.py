import numpy as np
import pytest

from sfrgnn import backend
from sfrgnn.graph import csr_from_edge_pairs, normalize_adjacency
from sfrgnn.nn import spmm
from sfrgnn.errors import ValidationError

from conftest import build_graph, path3_graph


def random_symmetric_csr(n, density, seed):
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.shape[0]) < density
    return csr_from_edge_pairs(n, np.stack([iu[keep], ju[keep]], axis=1))


def test_identity_csr_times_h_is_h():
    g = build_graph(4, [], [0, 1, 0, 1])
    identity = normalize_adjacency(g.adjacency)  # edgeless normalizes to I
    h = np.arange(12, dtype=np.float64).reshape(4, 3)
    np.testing.assert_array_equal(spmm(identity, h), h)


def test_normalized_path_times_identity_is_the_matrix():
    g = path3_graph()
    prop = normalize_adjacency(g.adjacency)
    np.testing.assert_array_equal(spmm(prop, np.eye(3)), prop.to_dense())


def test_spmm_matches_dense_oracle():
    adj = random_symmetric_csr(5, 0.6, seed=1)
    prop = normalize_adjacency(adj)
    rng = np.random.default_rng(2)
    h = rng.standard_normal((5, 2))
    dense = prop.to_dense() @ h  # independent dense-matmul oracle
    np.testing.assert_allclose(spmm(prop, h), dense, atol=1e-12, rtol=0)


def test_spmm_handles_isolated_nodes():
    adj = csr_from_edge_pairs(5, np.array([[0, 1]]))  # nodes 2..4 isolated
    h = np.ones((5, 2))
    out = spmm(adj, h)
    np.testing.assert_array_equal(out[2:], 0.0)
    np.testing.assert_array_equal(out[0], [1.0, 1.0])


def test_spmm_dimension_mismatch():
    adj = csr_from_edge_pairs(3, np.array([[0, 1]]))
    with pytest.raises(ValidationError):
        spmm(adj, np.ones((4, 2)))


def test_call_counter_increments_and_resets():
    adj = random_symmetric_csr(6, 0.5, seed=3)
    h = np.ones((6, 2))
    backend.reset_spmm_calls()
    spmm(adj, h)
    spmm(adj, h)
    assert backend.spmm_calls() == 2
    backend.reset_spmm_calls()
    assert backend.spmm_calls() == 0


def test_numpy_and_numba_kernels_agree():
    adj = random_symmetric_csr(20, 0.3, seed=4)
    prop = normalize_adjacency(adj)
    rng = np.random.default_rng(5)
    h = rng.standard_normal((20, 7))
    out_np = np.zeros_like(h)
    backend.spmm_numpy_kernel(prop.row_offsets, prop.col_indices, prop.values, h, out_np)
    np.testing.assert_allclose(out_np, prop.to_dense() @ h, atol=1e-12, rtol=0)
    if backend.HAS_NUMBA:
        out_nb = np.zeros_like(h)
        backend.spmm_numba_kernel(prop.row_offsets, prop.col_indices, prop.values, h, out_nb)
        np.testing.assert_allclose(out_nb, out_np, atol=1e-12, rtol=0)


def test_kernel_bitwise_deterministic_across_calls():
    adj = random_symmetric_csr(30, 0.2, seed=6)
    prop = normalize_adjacency(adj)
    h = np.random.default_rng(7).standard_normal((30, 4)).astype(np.float32)
    a = spmm(prop, h)
    b = spmm(prop, h)
    assert np.array_equal(a, b)
