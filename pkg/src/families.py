"""
Built-in Hamiltonian families for testing and benchmarking.

``inverse-diag`` and ``laplacian-path`` are procedural: rows are generated on
demand and weight marginals have closed forms, so they scale to n = 62.
The random families are generated once into explicit sparse storage.
"""
import logging
import math
from typing import Any, Callable, Dict, Optional

import numpy as np
from scipy import sparse, special

from .errors import ResourceError, UsageError
from .hamiltonian import (
    DENSE_MAX_QUBITS,
    RowOracle,
    SparseRow,
    SparseRowOracle,
    WeightKind,
    check_mode,
    check_qubit_count,
    prefix_range,
)

logger = logging.getLogger(__name__)

FAMILIES = ('inverse-diag', 'random-sparse-psd', 'random-sparse-hermitian', 'rank-r-psd', 'laplacian-path')
EXPLICIT_MAX_QUBITS = 20

# Ranges with at most this many terms are summed directly.
DIRECT_SUM_LIMIT = 4096


def make_generator(seed: int) -> np.random.Generator:
    """Counter-based generator used for every random draw in the package."""
    if seed < 0:
        raise UsageError(f"Seed must be nonnegative, got {seed}")
    return np.random.Generator(np.random.Philox(key=int(seed)))


def harmonic_difference(lo: int, hi: int) -> float:
    """Σ_{k=lo+1}^{hi} 1/k for integers 0 ≤ lo ≤ hi."""
    if hi <= lo:
        return 0.0
    if hi - lo <= DIRECT_SUM_LIMIT:
        return math.fsum(1.0 / k for k in range(lo + 1, hi + 1))
    if lo < DIRECT_SUM_LIMIT:
        return float(special.digamma(hi + 1.0) - special.digamma(lo + 1.0))
    # H(m) = ln m + γ + 1/(2m) - 1/(12m²) + 1/(120m⁴) - ...
    a, b, d = float(lo), float(hi), hi - lo
    return (math.log1p(d / a) - d / (2.0 * a * b)
            - (1.0 / (12.0 * b * b) - 1.0 / (12.0 * a * a))
            + (1.0 / (120.0 * b ** 4) - 1.0 / (120.0 * a ** 4)))


def inverse_square_difference(lo: int, hi: int) -> float:
    """Σ_{k=lo+1}^{hi} 1/k² for integers 0 ≤ lo ≤ hi."""
    if hi <= lo:
        return 0.0
    if hi - lo <= DIRECT_SUM_LIMIT:
        return math.fsum(1.0 / (k * k) for k in range(lo + 1, hi + 1))
    if lo < DIRECT_SUM_LIMIT:
        return float(special.polygamma(1, lo + 1.0) - special.polygamma(1, hi + 1.0))
    # Σ_{k>m} 1/k² = 1/m - 1/(2m²) + 1/(6m³) - 1/(30m⁵) + ...
    a, b, d = float(lo), float(hi), hi - lo
    return (d / (a * b)
            - d * (a + b) / (2.0 * a * a * b * b)
            + (1.0 / (6.0 * a ** 3) - 1.0 / (6.0 * b ** 3))
            - (1.0 / (30.0 * a ** 5) - 1.0 / (30.0 * b ** 5)))


class InverseDiagonalOracle(RowOracle):
    """H_ii = scale/(i+1); marginals from harmonic partial sums."""

    def __init__(self, n: int, scale: float = 1.0, mode: str = 'psd'):
        super().__init__(n, mode, name='inverse-diag')
        if scale <= 0 and mode == 'psd':
            raise UsageError(f"inverse-diag needs a positive scale in PSD mode, got {scale}")
        self.scale = float(scale)

    def row(self, i: int) -> SparseRow:
        return SparseRow([i], [self.scale / (i + 1)], validate=False)

    def diag(self, i: int) -> float:
        return self.scale / (i + 1)

    def row_sq_norm(self, i: int) -> float:
        return (self.scale / (i + 1)) ** 2

    def weights(self, indices: np.ndarray, kind: WeightKind) -> np.ndarray:
        base = self.scale / (np.asarray(indices, dtype=np.float64) + 1.0)
        return base if kind == WeightKind.DIAGONAL else base ** 2

    def marginal(self, prefix: int, length: int, kind: WeightKind) -> float:
        lo, hi = prefix_range(self.n, prefix, length)
        if kind == WeightKind.DIAGONAL:
            return self.scale * harmonic_difference(lo, hi)
        return self.scale ** 2 * inverse_square_difference(lo, hi)


class LaplacianPathOracle(RowOracle):
    """
    Graph Laplacian of the path 0 - 1 - ... - (N-1), times ``coupling``.

    Interior rows are (-1, 2, -1), the two end rows (1, -1).
    """

    def __init__(self, n: int, coupling: float = 1.0, mode: str = 'psd'):
        super().__init__(n, mode, name='laplacian-path')
        if coupling <= 0:
            raise UsageError(f"laplacian-path needs a positive coupling, got {coupling}")
        self.coupling = float(coupling)

    def _degree(self, i: int) -> int:
        return 1 if i in (0, self.dim - 1) else 2

    def row(self, i: int) -> SparseRow:
        c = self.coupling
        cols, vals = [], []
        if i > 0:
            cols.append(i - 1)
            vals.append(-c)
        cols.append(i)
        vals.append(c * self._degree(i))
        if i < self.dim - 1:
            cols.append(i + 1)
            vals.append(-c)
        return SparseRow(cols, vals, validate=False)

    def diag(self, i: int) -> float:
        return self.coupling * self._degree(i)

    def row_sq_norm(self, i: int) -> float:
        return self.coupling ** 2 * (2 if self._degree(i) == 1 else 6)

    def _range_sums(self, lo: np.ndarray, hi: np.ndarray, kind: WeightKind) -> np.ndarray:
        size = (hi - lo).astype(np.float64)
        at_start = (lo == 0).astype(np.float64)
        at_end = (hi == self.dim).astype(np.float64)
        if kind == WeightKind.DIAGONAL:
            return self.coupling * (2.0 * size - at_start - at_end)
        return self.coupling ** 2 * (6.0 * size - 4.0 * at_start - 4.0 * at_end)

    def marginal(self, prefix: int, length: int, kind: WeightKind) -> float:
        lo, hi = prefix_range(self.n, prefix, length)
        return float(self._range_sums(np.array([lo], dtype=np.int64), np.array([hi], dtype=np.int64), kind)[0])

    def marginals(self, prefixes: np.ndarray, length: int, kind: WeightKind) -> np.ndarray:
        shift = self.n - length
        prefixes = np.asarray(prefixes, dtype=np.int64)
        lo, hi = prefixes << shift, (prefixes + 1) << shift
        return np.asarray(self._range_sums(lo, hi, kind), dtype=np.float64)


def _random_sparse(n: int, row_nnz: int, rng: np.random.Generator) -> sparse.csr_matrix:
    dim = 1 << n
    rows = np.repeat(np.arange(dim, dtype=np.int64), row_nnz)
    cols = rng.integers(0, dim, size=dim * row_nnz, dtype=np.int64)
    vals = rng.standard_normal(dim * row_nnz) + 1j * rng.standard_normal(dim * row_nnz)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(dim, dim))


def _random_sparse_psd(n: int, seed: int, params: Dict[str, Any], mode: str) -> RowOracle:
    row_nnz = int(params.get('row_nnz', 3))
    trace = float(params.get('trace', 1.0))
    if row_nnz < 1 or trace <= 0:
        raise UsageError("random-sparse-psd needs row_nnz ≥ 1 and trace > 0")
    g = _random_sparse(n, row_nnz, make_generator(seed))
    h = (g.conj().T @ g).tocsr()
    h = (h + h.conj().T) * 0.5
    h = h * (trace / h.diagonal().real.sum())
    return SparseRowOracle.from_sparse(h, mode, name='random-sparse-psd')


def _random_sparse_hermitian(n: int, seed: int, params: Dict[str, Any], mode: str) -> RowOracle:
    row_nnz = int(params.get('row_nnz', 3))
    shift = float(params.get('shift', 0.0))
    if row_nnz < 1:
        raise UsageError("random-sparse-hermitian needs row_nnz ≥ 1")
    g = _random_sparse(n, row_nnz, make_generator(seed))
    h = ((g + g.conj().T) * 0.5).tocsr()
    if 'frobenius_sq' in params:
        target = float(params['frobenius_sq'])
        current = float(np.sum(np.abs(h.data) ** 2))
        h = h * math.sqrt(target / current)
    if shift:
        h = h + shift * sparse.identity(1 << n, dtype=np.complex128, format='csr')
    return SparseRowOracle.from_sparse(h, mode, name='random-sparse-hermitian')


def _rank_r_psd(n: int, seed: int, params: Dict[str, Any], mode: str) -> RowOracle:
    if n > DENSE_MAX_QUBITS:
        raise ResourceError(f"rank-r-psd is generated densely and limited to n ≤ {DENSE_MAX_QUBITS}")
    dim = 1 << n
    rank = int(params.get('rank', params.get('r', 1)))
    scale = float(params.get('scale', 1.0))
    if not 1 <= rank <= dim:
        raise UsageError(f"rank-r-psd needs 1 ≤ rank ≤ {dim}, got {rank}")
    rng = make_generator(seed)
    x = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    vectors, _ = np.linalg.qr(x)
    eigenvalues = scale * rng.uniform(0.5, 1.0, size=rank)
    h = (vectors * eigenvalues) @ vectors.conj().T
    h = (h + h.conj().T) * 0.5
    return SparseRowOracle.from_dense(h, mode, name='rank-r-psd')


_BUILDERS: Dict[str, Callable[[int, int, Dict[str, Any], str], RowOracle]] = {
    'random-sparse-psd': _random_sparse_psd,
    'random-sparse-hermitian': _random_sparse_hermitian,
    'rank-r-psd': _rank_r_psd,
}


def default_mode(family: str) -> str:
    return 'hermitian' if family == 'random-sparse-hermitian' else 'psd'


def builtin_hamiltonian(family: str, n: int, params: Optional[Dict[str, Any]] = None, seed: int = 0,
                        mode: Optional[str] = None) -> RowOracle:
    """Build one of the named Hamiltonian families."""
    if family not in FAMILIES:
        raise UsageError(f"Unknown family {family!r}; expected one of {', '.join(FAMILIES)}")
    n = check_qubit_count(n)
    params = dict(params or {})
    mode = check_mode(mode or default_mode(family))
    if mode == 'psd' and family == 'random-sparse-hermitian':
        raise UsageError("random-sparse-hermitian is not PSD; use --mode hermitian")

    logger.info(f"Building family {family} with n={n}, seed={seed}, params={params}")
    if family == 'inverse-diag':
        return InverseDiagonalOracle(n, scale=float(params.get('scale', 1.0)), mode=mode)
    if family == 'laplacian-path':
        return LaplacianPathOracle(n, coupling=float(params.get('coupling', 1.0)), mode=mode)
    if n > EXPLICIT_MAX_QUBITS:
        raise ResourceError(f"Family {family} is stored explicitly and limited to n ≤ {EXPLICIT_MAX_QUBITS}")
    return _BUILDERS[family](n, seed, params, mode)
