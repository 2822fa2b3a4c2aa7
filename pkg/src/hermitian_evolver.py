"""
Evolution for general Hermitian Hamiltonians from a rescaled-row sketch.

Rows t_j are drawn with probability ‖h_t‖²/‖H‖²_F and stacked, rescaled by
1/√(M p(t_j)), as the rows R_j of A* (so A = R* and E[AA*] = H²). Using

    e^{ix} = 1 + ix + f(x²)x² + i g(x²)x³,
    f(y) = (cos√y - 1)/y,  g(y) = (sin√y - √y)/y^{3/2},

the state is approximated by

    ψ̂ = ψ + itu + t²A f_K(t²B) v + it³A g_K(t²B) z

with B = A*A, u = Hψ, v = A*ψ and z = A*u.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy import sparse

from .approximation import ApproximateState
from .errors import NumericalError, UsageError
from .hamiltonian import (
    RowOracle, SparseRow, SparseRowOracle, SparseState, SparseVector, WeightKind, WeightTree, apply_hamiltonian
)
from .sampler import SampleBatch
from .settings import check_dense_budget

logger = logging.getLogger(__name__)

# Share of ε that dropping the shifted remainder may cost.
NEGLIGIBLE_FRACTION = 1e-3


class ShiftedOracle(RowOracle):
    """H - αI over a base oracle; the phase e^{iαt} is applied to the evolved state."""

    def __init__(self, base: RowOracle, alpha: float):
        super().__init__(base.n, base.mode if alpha <= 0 else 'hermitian', name=f"{base.name}-shifted")
        self.base = base
        self.alpha = float(alpha)
        self._trees: Optional[Dict[WeightKind, WeightTree]] = None
        self._stored: Optional[WeightTree] = None
        if self.alpha != 0 and isinstance(base, SparseRowOracle):
            self._trees, self._stored = base.shifted_trees(self.alpha)

    def __repr__(self) -> str:
        return f"<ShiftedOracle(base={self.base!r}, alpha={self.alpha})>"

    def phase(self, t: float) -> complex:
        return complex(np.exp(1j * self.alpha * t))

    def row(self, i: int) -> SparseRow:
        row = self.base.row(i)
        if self.alpha == 0:
            return row
        pos = int(np.searchsorted(row.columns, i))
        if pos < len(row.columns) and row.columns[pos] == i:
            values = row.values.copy()
            values[pos] -= self.alpha
            if values[pos] == 0:
                return SparseRow(np.delete(row.columns, pos), np.delete(values, pos), validate=False)
            return SparseRow(row.columns, values, validate=False)
        return SparseRow(np.insert(row.columns, pos, i), np.insert(row.values, pos, -self.alpha), validate=False)

    def diag(self, i: int) -> float:
        return self.base.diag(i) - self.alpha

    def row_sq_norm(self, i: int) -> float:
        if self._trees is not None:
            return float(self.weights(np.array([i], dtype=np.int64), WeightKind.SQUARED_ROW_NORM)[0])
        d = self.base.diag(i)
        return max(self.base.row_sq_norm(i) - 2 * self.alpha * d + self.alpha ** 2, 0.0)

    def weights(self, indices: np.ndarray, kind: WeightKind) -> np.ndarray:
        if self._trees is not None:
            return self.marginals(indices, self.n, kind)
        diag = self.base.weights(indices, WeightKind.DIAGONAL)
        if kind == WeightKind.DIAGONAL:
            return diag - self.alpha
        sq = self.base.weights(indices, WeightKind.SQUARED_ROW_NORM)
        return np.maximum(sq - 2 * self.alpha * diag + self.alpha ** 2, 0.0)

    def marginal(self, prefix: int, length: int, kind: WeightKind) -> float:
        return float(self.marginals(np.array([prefix], dtype=np.int64), length, kind)[0])

    def marginals(self, prefixes: np.ndarray, length: int, kind: WeightKind) -> np.ndarray:
        size = float(1 << (self.n - length))
        if self._trees is not None:
            # rows with no stored entries hold only the -α diagonal
            empty = size - self._stored.marginals(prefixes, length)
            shift = -self.alpha if kind == WeightKind.DIAGONAL else self.alpha ** 2
            return self._trees[kind].marginals(prefixes, length) + shift * empty
        diag = np.asarray(self.base.marginals(prefixes, length, WeightKind.DIAGONAL), dtype=np.float64)
        if kind == WeightKind.DIAGONAL:
            return diag - self.alpha * size
        sq = np.asarray(self.base.marginals(prefixes, length, WeightKind.SQUARED_ROW_NORM), dtype=np.float64)
        return np.maximum(sq - 2 * self.alpha * diag + self.alpha ** 2 * size, 0.0)


def trace_shift(oracle: RowOracle) -> ShiftedOracle:
    """Shift by α = tr(H)/2ⁿ, which minimizes ‖H - αI‖_F."""
    if not oracle.has_diagonal_marginals:
        logger.warning(f"{oracle.name} exposes no diagonal marginals; trace shift disabled (alpha = 0)")
        return ShiftedOracle(oracle, 0.0)
    alpha = oracle.trace() / oracle.dim
    logger.info(f"Trace shift alpha = {alpha:.6g}")
    return ShiftedOracle(oracle, alpha)


def is_negligible(shifted: ShiftedOracle, t: float, eps: float) -> bool:
    """
    Whether e^{i(H - αI)t}ψ may be replaced by ψ, leaving the pure phase.

    Dropping the remainder costs at most t·‖H - αI‖ ≤ t·‖H - αI‖_F, which
    must stay below a small fraction of ε.
    """
    mass = shifted.frobenius_sq()
    return mass == 0 or abs(t) * math.sqrt(mass) <= NEGLIGIBLE_FRACTION * eps


@dataclass(frozen=True)
class TruncatedSeries:
    """
    f_K(y) = Σ_{j=0}^K (-1)^{j+1} y^j/(2j+2)!  or  g_K(y) = Σ_{j=0}^K (-1)^{j+1} y^j/(2j+3)!
    """
    which: str
    K: int
    coefficients: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, which: str, K: int) -> 'TruncatedSeries':
        if which not in ('fK', 'gK'):
            raise UsageError(f"Unknown series {which!r}")
        if K < 0:
            raise UsageError(f"Series order must be nonnegative, got {K}")
        offset = 3 if which == 'fK' else 4
        c = -0.5 if which == 'fK' else -1.0 / 6.0
        coefficients = [c]
        for j in range(K):
            c = -c / ((2 * j + offset) * (2 * j + offset + 1))
            coefficients.append(c)
        return cls(which=which, K=K, coefficients=np.array(coefficients))

    @classmethod
    def f(cls, K: int) -> 'TruncatedSeries':
        return cls.build('fK', K)

    @classmethod
    def g(cls, K: int) -> 'TruncatedSeries':
        return cls.build('gK', K)

    def __call__(self, y: complex) -> complex:
        result = self.coefficients[-1]
        for c in self.coefficients[-2::-1]:
            result = result * y + c
        return result


def f_exact(y: float) -> float:
    if y == 0:
        return -0.5
    r = math.sqrt(y)
    return (math.cos(r) - 1.0) / y


def g_exact(y: float) -> float:
    if y == 0:
        return -1.0 / 6.0
    r = math.sqrt(y)
    return (math.sin(r) - r) / (y * r)


def eval_series(series: TruncatedSeries, B_scaled: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Horner: r ← c_K x, then r ← B r + c_j x for j = K-1..0 (K matrix-vector products)."""
    x = np.asarray(x, dtype=np.complex128)
    if B_scaled.ndim != 2 or B_scaled.shape != (len(x), len(x)):
        raise UsageError(f"Matrix of shape {B_scaled.shape} does not match vector of length {len(x)}")
    c = series.coefficients
    result = c[series.K] * x
    for j in range(series.K - 1, -1, -1):
        result = B_scaled @ result + c[j] * x
        if not np.all(np.isfinite(result)):
            raise NumericalError(f"Non-finite {series.which} Horner term", stage=j)
    return result


@dataclass
class SketchHermitian:
    indices: np.ndarray
    probabilities: np.ndarray
    scales: np.ndarray
    scaled_rows: List[SparseRow] = field(repr=False)
    B: np.ndarray = field(repr=False)
    u: SparseVector = field(repr=False)
    v: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)
    nominal_M: int = 0

    @property
    def M(self) -> int:
        return len(self.indices)

    def apply_u(self, i: int) -> complex:
        """(Hψ)_i."""
        return self.u.amplitude(i)

    def to_dense_A(self, dim: int) -> np.ndarray:
        """A as a dim × M matrix (column j is the conjugated scaled row j)."""
        A = np.zeros((dim, self.M), dtype=np.complex128)
        for j, r in enumerate(self.scaled_rows):
            A[r.columns, j] = np.conj(r.values)
        return A


def _rows_matrix(rows: List[SparseRow]) -> sparse.csr_matrix:
    """Rows over the compacted union of their supports."""
    support = np.unique(np.concatenate([r.columns for r in rows])) if rows else np.empty(0, np.int64)
    indptr = np.cumsum([0] + [len(r) for r in rows])
    cols = np.searchsorted(support, np.concatenate([r.columns for r in rows])) if rows else np.empty(0, np.int64)
    vals = np.concatenate([r.values for r in rows]) if rows else np.empty(0, np.complex128)
    return sparse.csr_matrix((vals, cols, indptr), shape=(len(rows), max(len(support), 1)))


def build_sketch_hermitian(oracle: RowOracle, batch: SampleBatch, psi: SparseState,
                           collapse_repeats: bool = False, memory_limit_mb: Optional[int] = None) -> SketchHermitian:
    """
    Rescaled-row sketch from a squared-row-norm batch.

    With ``collapse_repeats`` a row drawn c times is kept once, scaled by √c;
    AA* (and so the evolved state) is unchanged.
    """
    if batch.kind != WeightKind.SQUARED_ROW_NORM:
        raise UsageError("The Hermitian sketch needs a batch drawn with squared-row-norm weights")
    if psi.n != oracle.n:
        raise UsageError(f"State has n={psi.n} but the Hamiltonian has n={oracle.n}")
    nominal = batch.M
    if collapse_repeats:
        indices, counts, probabilities = batch.collapsed()
        scales = np.sqrt(counts / (nominal * probabilities))
    else:
        indices, probabilities = np.asarray(batch.indices, dtype=np.int64), batch.probabilities
        scales = 1.0 / np.sqrt(nominal * probabilities)
    assert np.all(probabilities > 0), "sampled rows must have positive probability"

    M = len(indices)
    check_dense_budget(M, 2 * M, "Hermitian sketch Gram matrix", memory_limit_mb)
    scaled_rows = [oracle.row(int(t)).scaled(s) for t, s in zip(indices, scales)]

    R = _rows_matrix(scaled_rows)
    B = np.asarray((R @ R.conj().T).toarray(), dtype=np.complex128)
    B = (B + B.conj().T) * 0.5

    u = apply_hamiltonian(oracle, psi)
    v = np.array([r.dot(psi) for r in scaled_rows], dtype=np.complex128)
    z = np.array([r.dot(u) for r in scaled_rows], dtype=np.complex128)
    logger.info(f"Built Hermitian sketch with M={M} (nominal {nominal}), |supp Hψ| = {u.q}")
    return SketchHermitian(indices=indices, probabilities=probabilities, scales=scales, scaled_rows=scaled_rows,
                           B=B, u=u, v=v, z=z, nominal_M=nominal)


def evolve_hermitian(sketch: SketchHermitian, psi: SparseState, t: float, K: int, oracle: RowOracle,
                     phase: complex = 1 + 0j) -> ApproximateState:
    """ψ̂ = ψ + itHψ + t²A f_K(t²B) v + it³A g_K(t²B) z, exposed lazily."""
    if K < 0:
        raise UsageError(f"Truncation order K must be nonnegative, got {K}")
    B_scaled = (t * t) * sketch.B
    p1 = eval_series(TruncatedSeries.f(K), B_scaled, sketch.v)
    p2 = eval_series(TruncatedSeries.g(K), B_scaled, sketch.z)
    # (A x)_i = Σ_j H[i, t_j]·scale_j·x_j, so the weights fold the scales in.
    weights = sketch.scales * ((t ** 2) * p1 + 1j * (t ** 3) * p2)
    return ApproximateState(oracle, psi, sketch.indices, weights, linear_coefficient=1j * t, phase=phase,
                            K=K, M=sketch.nominal_M)
