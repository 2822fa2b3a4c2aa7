import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import special

from src.errors import ResourceError, UsageError
from src.families import (
    DIRECT_SUM_LIMIT, InverseDiagonalOracle, LaplacianPathOracle, builtin_hamiltonian, harmonic_difference,
    inverse_square_difference, make_generator
)
from src.hamiltonian import WeightKind


def test_inverse_diag_small():
    oracle = builtin_hamiltonian('inverse-diag', 2)
    assert oracle.mode == 'psd'
    assert_allclose([oracle.diag(i) for i in range(4)], [1, 1 / 2, 1 / 3, 1 / 4])
    assert oracle.marginal(0, 0, WeightKind.DIAGONAL) == pytest.approx(25 / 12, rel=1e-15)
    assert oracle.frobenius_sq() == pytest.approx(1 + 1 / 4 + 1 / 9 + 1 / 16, rel=1e-15)


def test_inverse_diag_scale_param():
    oracle = builtin_hamiltonian('inverse-diag', 3, {'scale': 2.0})
    assert oracle.diag(1) == pytest.approx(1.0)
    assert oracle.trace() == pytest.approx(2.0 * sum(1 / k for k in range(1, 9)))


def test_rank_one_psd_has_one_nonzero_eigenvalue():
    oracle = builtin_hamiltonian('rank-r-psd', 3, {'rank': 1}, seed=7)
    eigenvalues = np.linalg.eigvalsh(oracle.to_dense())
    assert np.count_nonzero(eigenvalues > 1e-10) == 1
    assert eigenvalues.min() > -1e-12


def test_rank_r_psd_rank():
    oracle = builtin_hamiltonian('rank-r-psd', 4, {'rank': 3}, seed=1)
    eigenvalues = np.linalg.eigvalsh(oracle.to_dense())
    assert np.count_nonzero(eigenvalues > 1e-10) == 3


def test_laplacian_path_small():
    oracle = builtin_hamiltonian('laplacian-path', 2)
    dense = oracle.to_dense()
    expected = np.array([[1, -1, 0, 0], [-1, 2, -1, 0], [0, -1, 2, -1], [0, 0, -1, 1]], dtype=complex)
    assert_allclose(dense, expected)
    assert_allclose(dense.sum(axis=1), 0)
    assert np.linalg.eigvalsh(dense).min() > -1e-12


@pytest.mark.parametrize("family", ['inverse-diag', 'laplacian-path'])
@pytest.mark.parametrize("kind", list(WeightKind))
def test_closed_form_marginals_match_direct_sums(family, kind):
    oracle = builtin_hamiltonian(family, 6)
    leaves = np.array([oracle.weight(i, kind) for i in range(64)])
    for length in range(7):
        width = 1 << (6 - length)
        expected = leaves.reshape(-1, width).sum(axis=1)
        got = oracle.marginals(np.arange(1 << length), length, kind)
        assert_allclose(got, expected, rtol=1e-12)
        assert oracle.marginal(1 if length else 0, length, kind) == pytest.approx(expected[1 if length else 0])


@pytest.mark.parametrize("oracle", [InverseDiagonalOracle(40), LaplacianPathOracle(40, coupling=0.5)],
                         ids=['inverse-diag', 'laplacian-path'])
@pytest.mark.parametrize("kind", list(WeightKind))
def test_marginal_additivity_at_large_n(oracle, kind):
    rng = np.random.default_rng(0)
    for length in range(oracle.n):
        prefixes = rng.integers(0, 1 << length, size=8, dtype=np.int64) if length else np.zeros(1, np.int64)
        parent = oracle.marginals(prefixes, length, kind)
        children = (oracle.marginals(prefixes << 1, length + 1, kind)
                    + oracle.marginals((prefixes << 1) | 1, length + 1, kind))
        assert_allclose(parent, children, rtol=1e-10)


def test_procedural_families_reach_62_qubits():
    oracle = builtin_hamiltonian('inverse-diag', 62)
    last = (1 << 62) - 1
    assert oracle.diag(last) == pytest.approx(1.0 / (1 << 62))
    assert oracle.trace() == pytest.approx(float(special.digamma(2.0 ** 62 + 1) - special.digamma(1.0)), rel=1e-12)
    path = builtin_hamiltonian('laplacian-path', 62)
    assert len(path.row(last)) == 2
    assert path.trace() == pytest.approx(2.0 * 2 ** 62 - 2.0)


def test_harmonic_difference_branches():
    assert harmonic_difference(3, 3) == 0.0
    assert harmonic_difference(0, 4) == pytest.approx(25 / 12, rel=1e-15)
    lo, hi = 10, 10 + 2 * DIRECT_SUM_LIMIT
    direct = math.fsum(1.0 / k for k in range(lo + 1, hi + 1))
    assert harmonic_difference(lo, hi) == pytest.approx(direct, rel=1e-13)
    lo, hi = 5000, 5000 + 3 * DIRECT_SUM_LIMIT
    direct = math.fsum(1.0 / k for k in range(lo + 1, hi + 1))
    assert harmonic_difference(lo, hi) == pytest.approx(direct, rel=1e-13)


def test_inverse_square_difference_branches():
    assert inverse_square_difference(0, 2) == pytest.approx(1.25)
    for lo in (7, 6000):
        hi = lo + 3 * DIRECT_SUM_LIMIT
        direct = math.fsum(1.0 / (k * k) for k in range(lo + 1, hi + 1))
        assert inverse_square_difference(lo, hi) == pytest.approx(direct, rel=1e-12)


def test_random_sparse_psd_trace_and_positivity():
    oracle = builtin_hamiltonian('random-sparse-psd', 4, {'row_nnz': 2, 'trace': 3.0}, seed=5)
    dense = oracle.to_dense()
    assert oracle.mode == 'psd'
    assert oracle.trace() == pytest.approx(3.0)
    assert np.linalg.eigvalsh(dense).min() > -1e-12


def test_random_sparse_hermitian_frobenius_param():
    oracle = builtin_hamiltonian('random-sparse-hermitian', 4, {'frobenius_sq': 2.0}, seed=2)
    assert oracle.mode == 'hermitian'
    assert oracle.frobenius_sq() == pytest.approx(2.0)
    dense = oracle.to_dense()
    assert_allclose(dense, dense.conj().T, atol=1e-12)


def test_random_families_are_deterministic_in_seed():
    a = builtin_hamiltonian('random-sparse-psd', 3, seed=9).to_dense()
    b = builtin_hamiltonian('random-sparse-psd', 3, seed=9).to_dense()
    c = builtin_hamiltonian('random-sparse-psd', 3, seed=10).to_dense()
    assert_allclose(a, b, atol=0)
    assert not np.allclose(a, c)


def test_family_errors():
    with pytest.raises(UsageError):
        builtin_hamiltonian('heisenberg', 3)
    with pytest.raises(UsageError):
        builtin_hamiltonian('random-sparse-hermitian', 3, mode='psd')
    with pytest.raises(ResourceError):
        builtin_hamiltonian('random-sparse-psd', 21)
    with pytest.raises(ResourceError):
        builtin_hamiltonian('rank-r-psd', 13)
    with pytest.raises(UsageError):
        builtin_hamiltonian('rank-r-psd', 2, {'rank': 5})
    with pytest.raises(UsageError):
        make_generator(-1)
