import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from conftest import oracle_from_dense, random_hermitian, random_psd
from src.errors import DegenerateWeightError, DomainError, OracleFaultError, UsageError
from src.families import InverseDiagonalOracle, builtin_hamiltonian
from src.hamiltonian import RowOracle, SparseRow, WeightKind
from src.sampler import DRAW_CHUNK, draw_batch, sample_prefix_descent


class FaultyOracle(RowOracle):
    """Uniform diagonal whose marginals go bad at one level."""

    def __init__(self, n, bad_value):
        super().__init__(n, 'psd', name='faulty')
        self.bad_value = bad_value

    def row(self, i):
        return SparseRow([i], [1.0], validate=False)

    def marginal(self, prefix, length, kind):
        if length == self.n:
            return self.bad_value
        return float(1 << (self.n - length))


def test_all_mass_on_one_leaf():
    oracle = oracle_from_dense(np.diag([1.0, 0.0]), 'psd')
    for q in (0.0, 0.3, 0.999):
        index, probability = sample_prefix_descent(oracle, WeightKind.DIAGONAL, q=q)
        assert index == 0
        assert probability == 1.0


def test_uniform_quartiles():
    oracle = oracle_from_dense(np.eye(4), 'psd')
    assert sample_prefix_descent(oracle, WeightKind.DIAGONAL, q=2.5) == (2, 0.25)
    assert sample_prefix_descent(oracle, WeightKind.DIAGONAL, q=0.5)[0] == 0
    assert sample_prefix_descent(oracle, WeightKind.DIAGONAL, q=3.99)[0] == 3


def test_boundary_goes_right():
    oracle = oracle_from_dense(np.eye(4), 'psd')
    assert sample_prefix_descent(oracle, WeightKind.DIAGONAL, q=1.0)[0] == 1
    assert sample_prefix_descent(oracle, WeightKind.DIAGONAL, q=2.0)[0] == 2


def test_q_outside_range():
    oracle = oracle_from_dense(np.eye(4), 'psd')
    with pytest.raises(UsageError):
        sample_prefix_descent(oracle, WeightKind.DIAGONAL, q=4.0)
    with pytest.raises(UsageError):
        sample_prefix_descent(oracle, WeightKind.DIAGONAL)


def test_descent_is_the_inverse_cdf():
    rng = np.random.default_rng(4)
    weights = rng.uniform(0.1, 2.0, size=32)
    weights[[3, 4, 17, 31]] = 0.0
    oracle = oracle_from_dense(np.diag(weights), 'psd')
    breakpoints = np.cumsum(weights)
    grid = np.linspace(0, breakpoints[-1], 2001)[:-1]
    grid = grid[np.min(np.abs(grid[:, None] - breakpoints[None, :]), axis=1) > 1e-9]
    for q in grid:
        index, probability = sample_prefix_descent(oracle, WeightKind.DIAGONAL, q=float(q))
        assert index == int(np.searchsorted(breakpoints, q, side='right'))
        assert probability == pytest.approx(weights[index] / breakpoints[-1], rel=1e-12)


def test_inverse_diag_frequencies():
    oracle = builtin_hamiltonian('inverse-diag', 2)
    batch = draw_batch(oracle, WeightKind.DIAGONAL, 100_000, seed=1)
    expected = np.array([12, 6, 4, 3]) / 25
    counts = np.bincount(batch.indices, minlength=4)
    sigma = np.sqrt(batch.M * expected * (1 - expected))
    assert np.all(np.abs(counts - batch.M * expected) <= 4 * sigma)


def test_draw_batch_is_deterministic():
    oracle = builtin_hamiltonian('random-sparse-psd', 3, seed=2)
    a = draw_batch(oracle, WeightKind.DIAGONAL, 5, seed=42)
    b = draw_batch(oracle, WeightKind.DIAGONAL, 5, seed=42)
    assert_array_equal(a.indices, b.indices)
    assert a.seed == 42


def test_worker_count_does_not_change_draws():
    oracle = builtin_hamiltonian('laplacian-path', 10)
    M = 2 * DRAW_CHUNK + 17
    serial = draw_batch(oracle, WeightKind.SQUARED_ROW_NORM, M, seed=3)
    threaded = draw_batch(oracle, WeightKind.SQUARED_ROW_NORM, M, seed=3, workers=4)
    assert_array_equal(serial.indices, threaded.indices)


def test_rank_one_samples_single_row():
    oracle = oracle_from_dense(np.diag([0.0, 3.0, 0.0, 0.0]), 'psd')
    batch = draw_batch(oracle, WeightKind.DIAGONAL, 500, seed=0)
    assert np.all(batch.indices == 1)
    assert np.all(batch.probabilities == 1.0)


def test_probabilities_and_evaluation_count():
    h = random_hermitian(16, seed=1)
    oracle = oracle_from_dense(h, 'hermitian')
    batch = draw_batch(oracle, WeightKind.SQUARED_ROW_NORM, 300, seed=9)
    row_norms = np.sum(np.abs(h) ** 2, axis=1)
    assert_allclose(batch.probabilities, row_norms[batch.indices] / row_norms.sum(), rtol=1e-12)
    assert batch.total_weight == pytest.approx(row_norms.sum(), rel=1e-12)
    assert batch.marginal_evaluations == oracle.n * batch.M


def test_random_sparse_psd_chi_square():
    oracle = builtin_hamiltonian('random-sparse-psd', 3, seed=4)
    batch = draw_batch(oracle, WeightKind.DIAGONAL, 10_000, seed=11)
    diag = np.array([oracle.diag(i) for i in range(8)])
    p = diag / diag.sum()
    counts = np.bincount(batch.indices, minlength=8)
    assert np.all(counts[p == 0] == 0)
    support = p > 0
    result = stats.chisquare(counts[support], batch.M * p[support])
    assert result.pvalue > 0.001


def test_total_variation_small():
    h = random_psd(64, seed=3, rank=8)
    oracle = oracle_from_dense(h, 'psd')
    batch = draw_batch(oracle, WeightKind.DIAGONAL, 100_000, seed=5)
    p = np.diag(h).real / np.trace(h).real
    empirical = np.bincount(batch.indices, minlength=64) / batch.M
    assert 0.5 * np.abs(empirical - p).sum() <= 0.02


def test_collapsed_batch():
    oracle = oracle_from_dense(np.diag([1.0, 1.0, 2.0, 0.0]), 'psd')
    batch = draw_batch(oracle, WeightKind.DIAGONAL, 1000, seed=0)
    unique, counts, probabilities = batch.collapsed()
    assert list(unique) == [0, 1, 2]
    assert counts.sum() == 1000
    assert_allclose(probabilities, [0.25, 0.25, 0.5])


def test_compensated_descent_at_depth_40():
    oracle = InverseDiagonalOracle(40)
    assert sample_prefix_descent(oracle, WeightKind.DIAGONAL, q=0.0)[0] == 0
    assert sample_prefix_descent(oracle, WeightKind.DIAGONAL, q=0.999)[0] == 0
    assert sample_prefix_descent(oracle, WeightKind.DIAGONAL, q=1.25)[0] == 1
    assert sample_prefix_descent(oracle, WeightKind.DIAGONAL, q=1.6)[0] == 2
    batch = draw_batch(oracle, WeightKind.DIAGONAL, 2000, seed=8)
    assert np.all(batch.probabilities > 0)
    assert batch.marginal_evaluations == 40 * 2000
    assert_allclose(batch.probabilities, 1.0 / (batch.indices + 1.0) / oracle.trace(), rtol=1e-12)


def test_zero_weight_is_degenerate():
    oracle = oracle_from_dense(np.zeros((4, 4)), 'psd')
    with pytest.raises(DegenerateWeightError) as excinfo:
        draw_batch(oracle, WeightKind.DIAGONAL, 10, seed=0)
    assert excinfo.value.exit_code == 6


def test_diagonal_weights_need_psd_mode():
    oracle = oracle_from_dense(random_hermitian(4), 'hermitian')
    with pytest.raises(DomainError):
        draw_batch(oracle, WeightKind.DIAGONAL, 10, seed=0)


@pytest.mark.parametrize("bad_value", [float('nan'), -1.0])
def test_faulty_marginals(bad_value):
    with pytest.raises(OracleFaultError):
        draw_batch(FaultyOracle(3, bad_value), WeightKind.DIAGONAL, 10, seed=0)


def test_invalid_batch_arguments():
    oracle = oracle_from_dense(np.eye(2), 'psd')
    with pytest.raises(UsageError):
        draw_batch(oracle, WeightKind.DIAGONAL, 0, seed=0)
    with pytest.raises(UsageError):
        draw_batch(oracle, WeightKind.DIAGONAL, 3, seed=-2)
