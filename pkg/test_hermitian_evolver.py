import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import oracle_from_dense, random_hermitian
from src.errors import NumericalError, UsageError
from src.exact import dense_reconstruct, exact_evolve
from src.hamiltonian import SparseState, WeightKind
from src.hermitian_evolver import (
    ShiftedOracle, TruncatedSeries, build_sketch_hermitian, eval_series, evolve_hermitian, f_exact, g_exact,
    is_negligible, trace_shift
)
from src.sampler import SampleBatch, draw_batch


def rounding_allowance(x):
    """Double-precision error of the alternating series at |x| (≈ eps·cosh|x| times a small factor)."""
    return 1e-15 * math.cosh(abs(x))


def make_batch(oracle, indices, probabilities=None):
    indices = np.asarray(indices, dtype=np.int64)
    total = oracle.frobenius_sq()
    if probabilities is None:
        probabilities = oracle.weights(indices, WeightKind.SQUARED_ROW_NORM) / total
    return SampleBatch(indices=indices, probabilities=np.asarray(probabilities, dtype=float), total_weight=total,
                       seed=0, kind=WeightKind.SQUARED_ROW_NORM)


def exhaustive_batch(oracle):
    """Every row once with probability 1/N, so AA* = H² exactly."""
    return make_batch(oracle, np.arange(oracle.dim), np.full(oracle.dim, 1.0 / oracle.dim))


def test_two_level_sketch():
    oracle = oracle_from_dense(np.diag([1.0, -1.0]), 'hermitian')
    sketch = build_sketch_hermitian(oracle, make_batch(oracle, [0, 1]), SparseState.basis(1, 0))
    assert_allclose(sketch.probabilities, [0.5, 0.5])
    assert_allclose(sketch.scales, [1.0, 1.0])
    assert_allclose(np.abs(sketch.to_dense_A(2)), np.eye(2))
    assert_allclose(sketch.B, np.eye(2))
    assert sketch.apply_u(0) == 1
    assert sketch.apply_u(1) == 0
    assert_allclose(sketch.v, sketch.to_dense_A(2).conj().T @ np.array([1, 0]))


def test_two_level_evolution_at_pi():
    oracle = oracle_from_dense(np.diag([1.0, -1.0]), 'hermitian')
    psi = SparseState.from_dense(np.array([1.0, 1.0]) / np.sqrt(2))
    sketch = build_sketch_hermitian(oracle, make_batch(oracle, [0, 1]), psi)
    state = evolve_hermitian(sketch, psi, math.pi, 40, oracle)
    assert_allclose(state.amplitudes([0, 1]), [-1 / np.sqrt(2), -1 / np.sqrt(2)], atol=1e-10)


def test_t_zero_returns_psi(hermitian_8x8):
    oracle = oracle_from_dense(hermitian_8x8, 'hermitian')
    psi = SparseState.basis(3, 4)
    sketch = build_sketch_hermitian(oracle, draw_batch(oracle, WeightKind.SQUARED_ROW_NORM, 30, seed=1), psi)
    state = evolve_hermitian(sketch, psi, 0.0, 10, oracle)
    assert_allclose(state.to_dense(), psi.to_dense(), atol=0)


def test_exhaustive_sketch_is_exact(hermitian_8x8):
    oracle = oracle_from_dense(hermitian_8x8, 'hermitian')
    psi = SparseState.basis(3, 1)
    sketch = build_sketch_hermitian(oracle, exhaustive_batch(oracle), psi)
    assert_allclose(dense_reconstruct('aastar', H=hermitian_8x8, sketch=sketch), hermitian_8x8 @ hermitian_8x8,
                    atol=1e-12)
    state = evolve_hermitian(sketch, psi, 1.5, 60, oracle)
    assert_allclose(state.to_dense(), exact_evolve(hermitian_8x8, psi, 1.5), atol=1e-10)


def test_average_aastar_approaches_h_squared(hermitian_8x8):
    oracle = oracle_from_dense(hermitian_8x8, 'hermitian')
    M = 10_000
    batch = draw_batch(oracle, WeightKind.SQUARED_ROW_NORM, M, seed=7)
    sketch = build_sketch_hermitian(oracle, batch, SparseState.basis(3, 0), collapse_repeats=True)
    aastar = dense_reconstruct('aastar', H=hermitian_8x8, sketch=sketch)
    frob_sq = np.sum(np.abs(hermitian_8x8) ** 2)
    assert np.linalg.norm(aastar - hermitian_8x8 @ hermitian_8x8) <= 4 * frob_sq / np.sqrt(M)


def test_collapse_repeats_preserves_aastar_and_state(hermitian_8x8):
    oracle = oracle_from_dense(hermitian_8x8, 'hermitian')
    psi = SparseState.basis(3, 6)
    batch = draw_batch(oracle, WeightKind.SQUARED_ROW_NORM, 40, seed=2)
    full = build_sketch_hermitian(oracle, batch, psi)
    collapsed = build_sketch_hermitian(oracle, batch, psi, collapse_repeats=True)
    assert collapsed.M == len(np.unique(batch.indices)) < full.M
    assert_allclose(dense_reconstruct('aastar', H=hermitian_8x8, sketch=collapsed),
                    dense_reconstruct('aastar', H=hermitian_8x8, sketch=full), atol=1e-12)
    a = evolve_hermitian(full, psi, 0.8, 20, oracle).to_dense()
    b = evolve_hermitian(collapsed, psi, 0.8, 20, oracle).to_dense()
    assert_allclose(a, b, atol=1e-10)


def test_gram_matrix_is_hermitian_psd(hermitian_8x8):
    oracle = oracle_from_dense(hermitian_8x8, 'hermitian')
    sketch = build_sketch_hermitian(oracle, draw_batch(oracle, WeightKind.SQUARED_ROW_NORM, 25, seed=4),
                                    SparseState.basis(3, 0))
    assert_allclose(sketch.B, sketch.B.conj().T, atol=1e-12)
    assert np.linalg.eigvalsh(sketch.B).min() >= -1e-10
    A = sketch.to_dense_A(8)
    assert_allclose(sketch.B, A.conj().T @ A, atol=1e-12)


def test_series_at_zero():
    for K in range(0, 6):
        assert TruncatedSeries.f(K)(0.0) == -0.5
        assert TruncatedSeries.g(K)(0.0) == pytest.approx(-1 / 6, rel=1e-15)


def test_series_coefficients_alternate_and_shrink():
    for series in (TruncatedSeries.f(30), TruncatedSeries.g(30)):
        c = series.coefficients
        assert np.all(np.sign(c[:-1]) == -np.sign(c[1:]))
        assert np.all(np.abs(c[1:]) < np.abs(c[:-1]))
    assert TruncatedSeries.f(2).coefficients[2] == pytest.approx(-1 / math.factorial(6))
    assert TruncatedSeries.g(2).coefficients[2] == pytest.approx(-1 / math.factorial(7))
    assert np.all(np.isfinite(TruncatedSeries.g(120).coefficients))


def test_eval_series_small_cases():
    x = np.array([1.0, -2.0, 0.5j])
    assert_allclose(eval_series(TruncatedSeries.f(0), np.diag([3.0, 1.0, 2.0]), x), -x / 2)
    for K in (0, 4, 9):
        assert_allclose(eval_series(TruncatedSeries.g(K), np.zeros((3, 3)), x), -x / 6)


@pytest.mark.parametrize("y", np.linspace(0.0, 25.0, 51))
def test_eval_series_scalar_matches_closed_forms(y):
    x = np.array([1.0 + 0j])
    assert abs(eval_series(TruncatedSeries.f(60), np.array([[y]]), x)[0] - f_exact(y)) <= 1e-12
    assert abs(eval_series(TruncatedSeries.g(60), np.array([[y]]), x)[0] - g_exact(y)) <= 1e-12


def test_exponential_split_identity():
    f, g = TruncatedSeries.f(80), TruncatedSeries.g(80)
    for x in np.linspace(-20.0, 20.0, 100):
        split = 1 + 1j * x + f(x * x) * x ** 2 + 1j * g(x * x) * x ** 3
        assert abs(split - np.exp(1j * x)) <= 1e-10 + rounding_allowance(x)


def test_exponential_split_is_tight_for_moderate_arguments():
    f, g = TruncatedSeries.f(80), TruncatedSeries.g(80)
    for x in np.linspace(-8.0, 8.0, 161):
        split = 1 + 1j * x + f(x * x) * x ** 2 + 1j * g(x * x) * x ** 3
        assert abs(split - np.exp(1j * x)) <= 1e-10


@pytest.mark.parametrize("K", range(0, 31, 3))
def test_truncation_tail_bounds(K):
    f, g = TruncatedSeries.f(K), TruncatedSeries.g(K)
    for x in np.linspace(0.0, 10.0, 41):
        y = x * x
        f_bound = 2 * x ** (2 * K + 4) * math.exp(x) / math.factorial(2 * K + 4)
        g_bound = 2 * x ** (2 * K + 5) * math.exp(x) / math.factorial(2 * K + 5)
        assert abs(y * (f(y) - f_exact(y))) <= f_bound + rounding_allowance(x)
        assert abs(x ** 3 * (g(y) - g_exact(y))) <= g_bound + rounding_allowance(x)


def test_spectral_commutation():
    h = random_hermitian(32, seed=12)
    oracle = oracle_from_dense(h, 'hermitian')
    sketch = build_sketch_hermitian(oracle, draw_batch(oracle, WeightKind.SQUARED_ROW_NORM, 8, seed=3),
                                    SparseState.basis(5, 0))
    A = sketch.to_dense_A(32)
    t = 0.9
    f = np.vectorize(f_exact)

    def apply(matrix, fn):
        w, U = np.linalg.eigh(matrix)
        return (U * fn(np.clip(w, 0, None))) @ U.conj().T

    left = A @ apply(t * t * (A.conj().T @ A), f) @ A.conj().T
    right = apply(t * t * (A @ A.conj().T), f) @ (A @ A.conj().T)
    assert_allclose(left, right, atol=1e-8)


def test_trace_shift_of_multiple_of_identity():
    oracle = oracle_from_dense(2.5 * np.eye(4), 'hermitian')
    shifted = trace_shift(oracle)
    assert shifted.alpha == pytest.approx(2.5)
    assert shifted.frobenius_sq() == pytest.approx(0.0, abs=1e-12)
    assert is_negligible(shifted, t=1.0, eps=0.1)
    assert len(shifted.row(1)) == 0
    assert shifted.phase(2.0) == pytest.approx(np.exp(5j))


def test_trace_shift_diag_3_1():
    oracle = oracle_from_dense(np.diag([3.0, 1.0]), 'hermitian')
    shifted = trace_shift(oracle)
    assert shifted.alpha == 2.0
    assert_allclose(shifted.to_dense(), np.diag([1.0, -1.0]))
    assert shifted.frobenius_sq() == pytest.approx(2.0)
    assert oracle.frobenius_sq() == pytest.approx(10.0)
    assert not is_negligible(shifted, t=1.0, eps=0.1)


def test_traceless_shift_is_a_no_op():
    h = np.array([[0, 1j], [-1j, 0]])
    oracle = oracle_from_dense(h, 'hermitian')
    shifted = trace_shift(oracle)
    assert shifted.alpha == 0.0
    assert_allclose(shifted.to_dense(), h)


def test_shifted_oracle_rows_and_marginals():
    h = random_hermitian(8, seed=21)
    h[2, 2] = 0.0
    h[5, 5] = 0.75
    oracle = oracle_from_dense(h, 'hermitian')
    shifted = ShiftedOracle(oracle, 0.75)
    expected = h - 0.75 * np.eye(8)
    assert_allclose(shifted.to_dense(), expected, atol=1e-15)
    assert shifted.row(2).value_at(2) == -0.75
    assert shifted.row(5).value_at(5) == 0
    for kind, leaves in ((WeightKind.DIAGONAL, np.diag(expected).real),
                         (WeightKind.SQUARED_ROW_NORM, np.sum(np.abs(expected) ** 2, axis=1))):
        for length in range(4):
            width = 1 << (3 - length)
            assert_allclose(shifted.marginals(np.arange(1 << length), length, kind),
                            leaves.reshape(-1, width).sum(axis=1), atol=1e-12)
        assert_allclose(shifted.weights(np.arange(8), kind), leaves, atol=1e-12)


def test_shifted_marginals_count_empty_rows():
    h = np.zeros((4, 4))
    h[:2, :2] = [[3.0, 1.0], [1.0, 1.0]]
    oracle = oracle_from_dense(h, 'hermitian')
    shifted = trace_shift(oracle)
    assert shifted.alpha == 1.0
    expected = h - np.eye(4)
    assert_allclose(shifted.marginals(np.arange(2), 1, WeightKind.SQUARED_ROW_NORM), [6.0, 2.0])
    assert_allclose(shifted.marginals(np.arange(2), 1, WeightKind.DIAGONAL), [2.0, -2.0])
    assert_allclose(shifted.weights(np.arange(4), WeightKind.SQUARED_ROW_NORM), np.sum(np.abs(expected) ** 2, axis=1))
    assert shifted.frobenius_sq() == 8.0
    assert shifted.row_sq_norm(3) == 1.0


def test_large_offset_keeps_the_remainder():
    offset = 1e7
    oracle = oracle_from_dense(np.diag([offset + 1, offset - 1]), 'hermitian')
    shifted = trace_shift(oracle)
    assert shifted.alpha == offset
    assert shifted.frobenius_sq() == 2.0
    assert_allclose(shifted.weights(np.arange(2), WeightKind.SQUARED_ROW_NORM), [1.0, 1.0])
    assert not is_negligible(shifted, t=1.0, eps=0.1)
    assert is_negligible(shifted, t=1e-6, eps=0.1)


def test_phase_identity_with_exhaustive_sketch():
    h = random_hermitian(16, seed=3) + 1.7 * np.eye(16)
    oracle = oracle_from_dense(h, 'hermitian')
    shifted = trace_shift(oracle)
    psi = SparseState.from_entries(4, [0, 9], [0.8, -0.6j])
    t = 1.2
    sketch = build_sketch_hermitian(shifted, exhaustive_batch(shifted), psi)
    state = evolve_hermitian(sketch, psi, t, 60, shifted, phase=shifted.phase(t))
    assert_allclose(state.to_dense(), exact_evolve(h, psi, t), atol=1e-8)


def test_errors(hermitian_8x8):
    oracle = oracle_from_dense(hermitian_8x8, 'hermitian')
    psi = SparseState.basis(3, 0)
    diagonal_batch = SampleBatch(np.array([0]), np.array([1.0]), 1.0, 0, WeightKind.DIAGONAL)
    with pytest.raises(UsageError):
        build_sketch_hermitian(oracle, diagonal_batch, psi)
    with pytest.raises(UsageError):
        build_sketch_hermitian(oracle, make_batch(oracle, [0]), SparseState.basis(2, 0))
    sketch = build_sketch_hermitian(oracle, make_batch(oracle, [0, 3]), psi)
    with pytest.raises(UsageError):
        evolve_hermitian(sketch, psi, 1.0, -1, oracle)
    with pytest.raises(UsageError):
        TruncatedSeries.build('hK', 3)
    with pytest.raises(UsageError):
        eval_series(TruncatedSeries.f(2), np.eye(3), np.ones(2))
    with pytest.raises(NumericalError) as excinfo:
        eval_series(TruncatedSeries.f(3), np.array([[np.inf]]), np.ones(1))
    assert excinfo.value.stage is not None
    assert excinfo.value.exit_code == 7
