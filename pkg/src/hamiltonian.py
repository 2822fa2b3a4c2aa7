"""
Implicit Hamiltonians accessed one row at a time.

A ``RowOracle`` exposes the sparse rows of a 2ⁿ × 2ⁿ Hermitian matrix
together with prefix-set weight marginals w(S(L)), which is what the
row sampler needs to draw row indices in O(n) marginal evaluations.

Indices are 0-based. A prefix L of length ``length`` is stored as the
integer formed by its bits, most significant bit first, so that
S(L) = {L} × {0,1}^{n-|L|} is the index range
[L << (n-|L|), (L+1) << (n-|L|)).
"""
import logging
import re
from abc import ABC, abstractmethod
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from .errors import DomainError, HamiltonianFileError, ParseError, ResourceError, SymmetryError, UsageError

logger = logging.getLogger(__name__)

MAX_QUBITS = 62
HERMITIAN_TOLERANCE = 1e-12
NORM_TOLERANCE = 1e-12
DENSE_MAX_QUBITS = 12
CSR_MAX_QUBITS = 20

MODES = ('psd', 'hermitian')


class WeightKind(str, Enum):
    """Per-row weight used for marginals and sampling."""
    DIAGONAL = 'diagonal'
    SQUARED_ROW_NORM = 'squared-row-norm'


def check_qubit_count(n: int) -> int:
    """Validate a qubit count (1 ≤ n ≤ 62 keeps every index inside a signed 64-bit integer)."""
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
        raise UsageError(f"Qubit count must be an integer, got {n!r}")
    if not 1 <= int(n) <= MAX_QUBITS:
        raise UsageError(f"Qubit count must be in [1, {MAX_QUBITS}], got {n}")
    return int(n)


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise UsageError(f"Unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    return mode


def prefix_from_bits(bits: str) -> Tuple[int, int]:
    """Convert a bit-string prefix such as '010' into (value, length)."""
    if bits and not set(bits) <= {'0', '1'}:
        raise UsageError(f"Prefix must be a bit-string, got {bits!r}")
    return (int(bits, 2) if bits else 0), len(bits)


def prefix_range(n: int, prefix: int, length: int) -> Tuple[int, int]:
    """Half-open index range [lo, hi) covered by S(L)."""
    shift = n - length
    return prefix << shift, (prefix + 1) << shift


class SparseRow:
    """Nonzero entries of one Hamiltonian row, columns strictly increasing."""
    __slots__ = ('columns', 'values')

    def __init__(self, columns: Sequence[int], values: Sequence[complex], validate: bool = True):
        self.columns = np.asarray(columns, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.complex128)
        if validate:
            if self.columns.shape != self.values.shape or self.columns.ndim != 1:
                raise UsageError("SparseRow columns and values must be 1-D arrays of equal length")
            if len(self.columns) > 1 and np.any(np.diff(self.columns) <= 0):
                raise UsageError("SparseRow columns must be strictly increasing")
            if np.any(self.values == 0):
                raise UsageError("SparseRow must not store exact zeros")
            if len(self.columns) and self.columns[0] < 0:
                raise UsageError("SparseRow columns must be nonnegative")

    @classmethod
    def empty(cls) -> 'SparseRow':
        return cls(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.complex128), validate=False)

    def __len__(self) -> int:
        return len(self.columns)

    def __repr__(self) -> str:
        return f"<SparseRow(nnz={len(self)})>"

    def sq_norm(self) -> float:
        return float(np.sum(self.values.real ** 2 + self.values.imag ** 2))

    def value_at(self, column: int) -> complex:
        pos = int(np.searchsorted(self.columns, column))
        if pos < len(self.columns) and self.columns[pos] == column:
            return complex(self.values[pos])
        return 0j

    def values_at(self, columns: Union[Sequence[int], np.ndarray]) -> np.ndarray:
        """Entries of this row at arbitrary (possibly repeated, unsorted) columns."""
        columns = np.asarray(columns, dtype=np.int64)
        out = np.zeros(columns.shape, dtype=np.complex128)
        if len(self.columns) == 0 or columns.size == 0:
            return out
        pos = np.searchsorted(self.columns, columns)
        clipped = np.minimum(pos, len(self.columns) - 1)
        hit = (pos < len(self.columns)) & (self.columns[clipped] == columns)
        out[hit] = self.values[clipped[hit]]
        return out

    def dot(self, vector: 'SparseVector') -> complex:
        """Σ_j H_ij x_j by searching the shorter sorted list in the longer one."""
        if len(self.columns) <= len(vector.indices):
            return complex(np.dot(self.values, vector.values_at(self.columns)))
        return complex(np.dot(self.values_at(vector.indices), vector.amplitudes))

    def scaled(self, factor: complex) -> 'SparseRow':
        if factor == 0:
            return SparseRow.empty()
        return SparseRow(self.columns, self.values * factor, validate=False)


class SparseVector:
    """Sparse complex vector of dimension 2ⁿ with strictly increasing indices."""

    def __init__(self, n: int, indices: Sequence[int], amplitudes: Sequence[complex], validate: bool = True):
        self.n = check_qubit_count(n)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.amplitudes = np.asarray(amplitudes, dtype=np.complex128)
        if validate:
            if self.indices.shape != self.amplitudes.shape or self.indices.ndim != 1:
                raise UsageError("Vector indices and amplitudes must be 1-D arrays of equal length")
            if len(self.indices) > 1 and np.any(np.diff(self.indices) <= 0):
                raise UsageError("Vector indices must be strictly increasing")
            if len(self.indices) and (self.indices[0] < 0 or self.indices[-1] >= self.dim):
                raise UsageError(f"Vector index out of range [0, {self.dim})")

    @classmethod
    def from_entries(cls, n: int, indices: Iterable[int], values: Iterable[complex]) -> 'SparseVector':
        """Build from unsorted entries; duplicates are summed and exact zeros dropped."""
        indices = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices, dtype=np.int64)
        values = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=np.complex128)
        if indices.size == 0:
            return cls(n, indices, values.reshape(0))
        unique, inverse = np.unique(indices, return_inverse=True)
        sums = np.zeros(len(unique), dtype=np.complex128)
        np.add.at(sums, inverse, values)
        keep = sums != 0
        return cls(n, unique[keep], sums[keep])

    @classmethod
    def from_dense(cls, vector: np.ndarray) -> 'SparseVector':
        vector = np.asarray(vector, dtype=np.complex128).ravel()
        n = int(round(np.log2(len(vector))))
        if 2 ** n != len(vector):
            raise UsageError(f"Dense vector length {len(vector)} is not a power of two")
        nz = np.flatnonzero(vector)
        return cls(n, nz, vector[nz])

    @property
    def dim(self) -> int:
        return 1 << self.n

    @property
    def q(self) -> int:
        return len(self.indices)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def amplitude(self, index: int) -> complex:
        pos = int(np.searchsorted(self.indices, index))
        if pos < len(self.indices) and self.indices[pos] == index:
            return complex(self.amplitudes[pos])
        return 0j

    def values_at(self, indices: Union[Sequence[int], np.ndarray]) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64)
        out = np.zeros(indices.shape, dtype=np.complex128)
        if len(self.indices) == 0 or indices.size == 0:
            return out
        pos = np.searchsorted(self.indices, indices)
        clipped = np.minimum(pos, len(self.indices) - 1)
        hit = (pos < len(self.indices)) & (self.indices[clipped] == indices)
        out[hit] = self.amplitudes[clipped[hit]]
        return out

    def to_dense(self) -> np.ndarray:
        if self.n > 24:
            raise ResourceError(f"Refusing to materialize a dense vector of 2^{self.n} entries (n ≤ 24)")
        out = np.zeros(self.dim, dtype=np.complex128)
        out[self.indices] = self.amplitudes
        return out

    def __repr__(self) -> str:
        return f"<{type(self).__name__}(n={self.n}, q={self.q})>"


class SparseState(SparseVector):
    """Sparse unit-norm state vector."""

    def __init__(self, n: int, indices: Sequence[int], amplitudes: Sequence[complex], validate: bool = True):
        super().__init__(n, indices, amplitudes, validate=validate)
        norm = self.norm()
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise DomainError(f"State must have unit norm (|‖ψ‖ - 1| ≤ {NORM_TOLERANCE}), got ‖ψ‖ = {norm!r}")

    @classmethod
    def basis(cls, n: int, index: int) -> 'SparseState':
        n = check_qubit_count(n)
        if not 0 <= index < (1 << n):
            raise UsageError(f"Basis index {index} out of range [0, 2^{n})")
        return cls(n, [index], [1.0])

    @classmethod
    def from_entries(cls, n: int, indices: Iterable[int], values: Iterable[complex]) -> 'SparseState':
        vector = SparseVector.from_entries(n, indices, values)
        return cls(vector.n, vector.indices, vector.amplitudes, validate=False)

    @classmethod
    def from_dense(cls, vector: np.ndarray) -> 'SparseState':
        sv = SparseVector.from_dense(vector)
        return cls(sv.n, sv.indices, sv.amplitudes, validate=False)


class RowOracle(ABC):
    """
    Read-only access to the rows and weight marginals of an implicit Hamiltonian.

    Subclasses implement ``row`` and ``marginal``; everything else has a
    generic implementation that subclasses may replace with a faster one.
    Instances are immutable after construction.
    """

    def __init__(self, n: int, mode: str, name: str = 'oracle'):
        self.n = check_qubit_count(n)
        self.mode = check_mode(mode)
        self.name = name

    def __repr__(self) -> str:
        return f"<{type(self).__name__}(name='{self.name}', n={self.n}, mode='{self.mode}')>"

    @property
    def dim(self) -> int:
        return 1 << self.n

    @property
    def has_diagonal_marginals(self) -> bool:
        """Whether marginal(·, DIAGONAL) is available (needed for the trace shift)."""
        return True

    @abstractmethod
    def row(self, i: int) -> SparseRow:
        """Nonzero entries of row i."""

    @abstractmethod
    def marginal(self, prefix: int, length: int, kind: WeightKind) -> float:
        """w(S(L)) for the prefix L given as (value, length)."""

    def marginals(self, prefixes: np.ndarray, length: int, kind: WeightKind) -> np.ndarray:
        """Vectorized marginal over an array of prefixes sharing one length."""
        return np.array([self.marginal(int(p), length, kind) for p in prefixes], dtype=np.float64)

    def marginal_bits(self, bits: str, kind: WeightKind) -> float:
        prefix, length = prefix_from_bits(bits)
        if length > self.n:
            raise UsageError(f"Prefix longer than n={self.n}")
        return self.marginal(prefix, length, kind)

    def diag(self, i: int) -> float:
        return float(self.row(i).value_at(i).real)

    def row_sq_norm(self, i: int) -> float:
        return self.row(i).sq_norm()

    def weight(self, i: int, kind: WeightKind) -> float:
        if kind == WeightKind.DIAGONAL:
            return self.diag(i)
        return self.row_sq_norm(i)

    def weights(self, indices: np.ndarray, kind: WeightKind) -> np.ndarray:
        return np.array([self.weight(int(i), kind) for i in indices], dtype=np.float64)

    def trace(self) -> float:
        return self.marginal(0, 0, WeightKind.DIAGONAL)

    def frobenius_sq(self) -> float:
        return self.marginal(0, 0, WeightKind.SQUARED_ROW_NORM)

    def entry(self, i: int, j: int) -> complex:
        return self.row(i).value_at(j)

    def to_dense(self) -> np.ndarray:
        """Assemble the full matrix row by row (n ≤ 12)."""
        if self.n > DENSE_MAX_QUBITS:
            raise ResourceError(f"Dense assembly is limited to n ≤ {DENSE_MAX_QUBITS}, got n={self.n}")
        dense = np.zeros((self.dim, self.dim), dtype=np.complex128)
        for i in range(self.dim):
            r = self.row(i)
            dense[i, r.columns] = r.values
        return dense

    def to_csr(self) -> sparse.csr_matrix:
        """Assemble a scipy CSR matrix row by row (n ≤ 20)."""
        if self.n > CSR_MAX_QUBITS:
            raise ResourceError(f"Sparse assembly is limited to n ≤ {CSR_MAX_QUBITS}, got n={self.n}")
        indptr = [0]
        cols: List[np.ndarray] = []
        vals: List[np.ndarray] = []
        for i in range(self.dim):
            r = self.row(i)
            cols.append(r.columns)
            vals.append(r.values)
            indptr.append(indptr[-1] + len(r))
        return sparse.csr_matrix(
            (np.concatenate(vals) if vals else np.empty(0, np.complex128),
             np.concatenate(cols) if cols else np.empty(0, np.int64),
             np.asarray(indptr, dtype=np.int64)),
            shape=(self.dim, self.dim),
        )


class WeightTree:
    """
    Binary tree of weight sums over the 2ⁿ leaves, stored sparsely.

    Only leaves with nonzero weight are kept; level d holds the sorted
    prefixes of length d that cover at least one of them together with
    their sums. Each parent is the sum of its (at most two) children.
    """

    def __init__(self, n: int, leaf_indices: np.ndarray, leaf_weights: np.ndarray):
        self.n = n
        leaf_indices = np.asarray(leaf_indices, dtype=np.int64)
        leaf_weights = np.asarray(leaf_weights, dtype=np.float64)
        keep = leaf_weights != 0
        keys, sums = leaf_indices[keep], leaf_weights[keep]
        order = np.argsort(keys, kind='stable')
        keys, sums = keys[order], sums[order]
        levels: List[Tuple[np.ndarray, np.ndarray]] = [(keys, sums)]
        for _ in range(n):
            parents = keys >> 1
            if len(parents):
                starts = np.flatnonzero(np.concatenate(([True], parents[1:] != parents[:-1])))
                keys, sums = parents[starts], np.add.reduceat(sums, starts)
            else:
                keys, sums = parents, sums
            levels.append((keys, sums))
        # levels[d] holds prefixes of length d
        self._levels = levels[::-1]

    @property
    def total(self) -> float:
        keys, sums = self._levels[0]
        return float(sums[0]) if len(sums) else 0.0

    def marginal(self, prefix: int, length: int) -> float:
        keys, sums = self._levels[length]
        pos = int(np.searchsorted(keys, prefix))
        if pos < len(keys) and keys[pos] == prefix:
            return float(sums[pos])
        return 0.0

    def marginals(self, prefixes: np.ndarray, length: int) -> np.ndarray:
        keys, sums = self._levels[length]
        prefixes = np.asarray(prefixes, dtype=np.int64)
        out = np.zeros(prefixes.shape, dtype=np.float64)
        if len(keys) == 0:
            return out
        pos = np.searchsorted(keys, prefixes)
        clipped = np.minimum(pos, len(keys) - 1)
        hit = (pos < len(keys)) & (keys[clipped] == prefixes)
        out[hit] = sums[clipped[hit]]
        return out


class SparseRowOracle(RowOracle):
    """
    Explicitly stored Hamiltonian: rows compressed over the nonempty rows only,
    with prebuilt weight trees for both weight kinds.
    """

    def __init__(self, n: int, row_keys: np.ndarray, row_ptr: np.ndarray, cols: np.ndarray,
                 vals: np.ndarray, mode: str, name: str = 'explicit'):
        super().__init__(n, mode, name)
        self._row_keys = np.asarray(row_keys, dtype=np.int64)
        self._row_ptr = np.asarray(row_ptr, dtype=np.int64)
        self._cols = np.asarray(cols, dtype=np.int64)
        self._vals = np.asarray(vals, dtype=np.complex128)

        counts = np.diff(self._row_ptr)
        row_of_entry = np.repeat(self._row_keys, counts)
        diag_mask = self._cols == row_of_entry
        self._diag = np.zeros(len(self._row_keys), dtype=np.float64)
        self._diag[np.searchsorted(self._row_keys, row_of_entry[diag_mask])] = self._vals[diag_mask].real
        mags = self._vals.real ** 2 + self._vals.imag ** 2
        self._sq = np.add.reduceat(mags, self._row_ptr[:-1]) if len(self._vals) else np.zeros(0)
        self._sq[counts == 0] = 0.0
        off_mags = np.where(diag_mask, 0.0, mags)
        self._off_sq = np.add.reduceat(off_mags, self._row_ptr[:-1]) if len(self._vals) else np.zeros(0)
        self._off_sq[counts == 0] = 0.0

        if mode == 'psd' and np.any(self._diag < 0):
            bad = int(self._row_keys[np.argmax(self._diag < 0)])
            raise DomainError(f"PSD mode requires a nonnegative diagonal; H[{bad},{bad}] = {self.diag(bad)}")

        self._trees: Dict[WeightKind, WeightTree] = {
            WeightKind.DIAGONAL: WeightTree(n, self._row_keys, self._diag),
            WeightKind.SQUARED_ROW_NORM: WeightTree(n, self._row_keys, self._sq),
        }
        logger.debug(f"Built weight trees for {name}: {len(self._row_keys)} nonempty rows, {len(self._vals)} nonzeros")

    @property
    def nnz(self) -> int:
        return len(self._vals)

    def _row_position(self, i: int) -> int:
        pos = int(np.searchsorted(self._row_keys, i))
        if pos < len(self._row_keys) and self._row_keys[pos] == i:
            return pos
        return -1

    def row(self, i: int) -> SparseRow:
        pos = self._row_position(i)
        if pos < 0:
            return SparseRow.empty()
        lo, hi = self._row_ptr[pos], self._row_ptr[pos + 1]
        return SparseRow(self._cols[lo:hi], self._vals[lo:hi], validate=False)

    def diag(self, i: int) -> float:
        pos = self._row_position(i)
        return float(self._diag[pos]) if pos >= 0 else 0.0

    def row_sq_norm(self, i: int) -> float:
        pos = self._row_position(i)
        return float(self._sq[pos]) if pos >= 0 else 0.0

    def shifted_trees(self, alpha: float) -> Tuple[Dict[WeightKind, WeightTree], WeightTree]:
        """
        Weight trees of H - αI over the stored rows, plus a tree counting them.

        Squared row norms are built as off-diagonal mass plus (d_i - α)², so a
        large α does not cancel away the remainder. Rows absent from storage
        contribute -α and α² per row; callers add those through the count tree.
        """
        shifted_diag = self._diag - alpha
        trees = {
            WeightKind.DIAGONAL: WeightTree(self.n, self._row_keys, shifted_diag),
            WeightKind.SQUARED_ROW_NORM: WeightTree(self.n, self._row_keys, self._off_sq + shifted_diag ** 2),
        }
        return trees, WeightTree(self.n, self._row_keys, np.ones(len(self._row_keys)))

    def weights(self, indices: np.ndarray, kind: WeightKind) -> np.ndarray:
        return self._trees[kind].marginals(indices, self.n)

    def marginal(self, prefix: int, length: int, kind: WeightKind) -> float:
        return self._trees[kind].marginal(prefix, length)

    def marginals(self, prefixes: np.ndarray, length: int, kind: WeightKind) -> np.ndarray:
        return self._trees[kind].marginals(prefixes, length)

    @classmethod
    def from_entries(cls, n: int, rows: Sequence[int], cols: Sequence[int], values: Sequence[complex],
                     mode: str, name: str = 'explicit', line_numbers: Optional[Sequence[int]] = None,
                     tolerance: float = HERMITIAN_TOLERANCE, path: Optional[str] = None) -> 'SparseRowOracle':
        """
        Build from COO entries, completing missing mirror entries (j, i) = conj(i, j).

        Raises SymmetryError when both (i, j) and (j, i) are given and disagree by
        more than ``tolerance``; explicit zeros are dropped after the check.
        """
        n = check_qubit_count(n)
        dim = 1 << n
        r = np.asarray(rows, dtype=np.int64)
        c = np.asarray(cols, dtype=np.int64)
        v = np.asarray(values, dtype=np.complex128)
        lines = np.asarray(line_numbers if line_numbers is not None else np.arange(1, len(r) + 1), dtype=np.int64)
        if len(r) and (r.min() < 0 or c.min() < 0 or r.max() >= dim or c.max() >= dim):
            bad = int(np.flatnonzero((r < 0) | (c < 0) | (r >= dim) | (c >= dim))[0])
            raise ParseError(f"Index ({r[bad]}, {c[bad]}) out of range [0, {dim})", int(lines[bad]), path)

        R = np.concatenate((r, c))
        C = np.concatenate((c, r))
        V = np.concatenate((v, np.conj(v)))
        mirrored = np.concatenate((np.zeros(len(r), np.int8), np.ones(len(r), np.int8)))
        L = np.concatenate((lines, lines))
        order = np.lexsort((mirrored, C, R))
        R, C, V, mirrored, L = R[order], C[order], V[order], mirrored[order], L[order]

        if len(R) == 0:
            return cls(n, np.empty(0, np.int64), np.zeros(1, np.int64), np.empty(0, np.int64),
                       np.empty(0, np.complex128), mode, name)

        new_key = np.concatenate(([True], (R[1:] != R[:-1]) | (C[1:] != C[:-1])))
        starts = np.flatnonzero(new_key)
        originals = np.add.reduceat((mirrored == 0).astype(np.int64), starts)
        if np.any(originals > 1):
            g = int(np.argmax(originals > 1))
            raise ParseError(f"Duplicate entry ({R[starts[g]]}, {C[starts[g]]})", int(L[starts[g] + 1]), path)

        sizes = np.diff(np.concatenate((starts, [len(R)])))
        paired = sizes == 2
        if np.any(paired):
            first = starts[paired]
            diff = np.abs(V[first] - V[first + 1])
            if np.any(diff > tolerance):
                k = int(np.argmax(diff > tolerance))
                i, j = int(R[first[k]]), int(C[first[k]])
                raise SymmetryError(
                    f"H[{i},{j}] = {V[first[k]]} is not the conjugate of H[{j},{i}] "
                    f"(difference {diff[k]:.3e} > {tolerance})"
                    + (f" at line {int(L[first[k]])}" if line_numbers is not None else "")
                )

        # First element of each group is the original when present, else the derived mirror.
        R, C, V = R[starts], C[starts], V[starts]
        nonzero = V != 0
        R, C, V = R[nonzero], C[nonzero], V[nonzero]

        if len(R):
            row_start = np.flatnonzero(np.concatenate(([True], R[1:] != R[:-1])))
            row_keys = R[row_start]
            row_ptr = np.concatenate((row_start, [len(R)]))
        else:
            row_keys = np.empty(0, np.int64)
            row_ptr = np.zeros(1, np.int64)
        return cls(n, row_keys, row_ptr, C, V, mode, name)

    @classmethod
    def from_dense(cls, matrix: np.ndarray, mode: str, name: str = 'dense',
                   tolerance: float = HERMITIAN_TOLERANCE) -> 'SparseRowOracle':
        matrix = np.asarray(matrix, dtype=np.complex128)
        dim = matrix.shape[0]
        n = int(round(np.log2(dim)))
        if matrix.shape != (dim, dim) or 2 ** n != dim:
            raise UsageError(f"Dense Hamiltonian must be square with power-of-two size, got {matrix.shape}")
        r, c = np.nonzero(matrix)
        return cls.from_entries(n, r, c, matrix[r, c], mode, name=name, tolerance=tolerance)

    @classmethod
    def from_sparse(cls, matrix: sparse.spmatrix, mode: str, name: str = 'sparse',
                    tolerance: float = HERMITIAN_TOLERANCE) -> 'SparseRowOracle':
        coo = sparse.coo_matrix(matrix)
        dim = coo.shape[0]
        n = int(round(np.log2(dim)))
        if coo.shape != (dim, dim) or 2 ** n != dim:
            raise UsageError(f"Sparse Hamiltonian must be square with power-of-two size, got {coo.shape}")
        coo.sum_duplicates()
        return cls.from_entries(n, coo.row, coo.col, coo.data, mode, name=name, tolerance=tolerance)


def apply_row(oracle: RowOracle, psi: SparseVector, i: int) -> complex:
    """(Hψ)_i = Σ_j H_ij ψ_j."""
    return oracle.row(i).dot(psi)


def apply_hamiltonian(oracle: RowOracle, psi: SparseVector) -> SparseVector:
    """
    Hψ as a sparse vector, accumulated from the rows in the support of ψ
    (H Hermitian, so column j of H is the conjugate of row j).
    """
    if psi.q == 0:
        return SparseVector(oracle.n, [], [])
    idx: List[np.ndarray] = []
    vals: List[np.ndarray] = []
    for j, amp in zip(psi.indices, psi.amplitudes):
        r = oracle.row(int(j))
        idx.append(r.columns)
        vals.append(np.conj(r.values) * amp)
    return SparseVector.from_entries(oracle.n, np.concatenate(idx), np.concatenate(vals))


_HEADER_RE = re.compile(r'^n\s+(\d+)(?:\s+mode\s+(\w+))?$', re.IGNORECASE)


def _strip_comment(line: str) -> str:
    return line.split('#', 1)[0].strip()


def _read_lines(path: Union[str, Path]) -> List[Tuple[int, str]]:
    path = Path(path)
    if not path.exists():
        raise HamiltonianFileError(f"File not found: {path}")
    try:
        text = path.read_text(encoding='utf-8')
    except (OSError, UnicodeDecodeError) as e:
        logger.error(f"Could not read {path}: {e}")
        raise HamiltonianFileError(f"Could not read {path}: {e}") from e
    return [(k, _strip_comment(line)) for k, line in enumerate(text.splitlines(), 1) if _strip_comment(line)]


def _parse_header(lines: List[Tuple[int, str]], path: str) -> Tuple[int, Optional[str], List[Tuple[int, str]]]:
    if not lines:
        raise ParseError("Missing header line 'n <qubits> [mode <psd|hermitian>]'", 1, path)
    line_no, header = lines[0]
    match = _HEADER_RE.match(header)
    if not match:
        raise ParseError(f"Malformed header {header!r}", line_no, path)
    try:
        n = check_qubit_count(int(match.group(1)))
    except UsageError as e:
        raise ParseError(str(e), line_no, path) from e
    mode = match.group(2).lower() if match.group(2) else None
    if mode is not None and mode not in MODES + ('density',):
        raise ParseError(f"Unknown mode {mode!r} in header", line_no, path)
    return n, mode, lines[1:]


def load_coo_hamiltonian(path: Union[str, Path], mode: Optional[str] = None) -> SparseRowOracle:
    """
    Load a COO Hamiltonian file.

    Format: header ``n <qubits> mode <psd|hermitian>``, then ``i j re im`` per line;
    ``#`` starts a comment. ``mode`` overrides the header's mode when given.
    """
    path = str(path)
    n, header_mode, body = _parse_header(_read_lines(path), path)
    mode = mode or header_mode or 'hermitian'
    if mode == 'density':
        mode = 'psd'
    check_mode(mode)

    rows, cols, vals, line_numbers = [], [], [], []
    for line_no, line in body:
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(f"Expected 'i j re im', got {line!r}", line_no, path)
        try:
            i, j = int(parts[0]), int(parts[1])
            value = complex(float(parts[2]), float(parts[3]))
        except ValueError as e:
            raise ParseError(f"Could not parse entry {line!r}: {e}", line_no, path) from e
        if not np.isfinite(value.real) or not np.isfinite(value.imag):
            raise ParseError(f"Non-finite value in {line!r}", line_no, path)
        rows.append(i)
        cols.append(j)
        vals.append(value)
        line_numbers.append(line_no)

    oracle = SparseRowOracle.from_entries(n, rows, cols, vals, mode, name=Path(path).name,
                                          line_numbers=line_numbers, path=path)
    logger.info(f"Loaded {path}: n={n}, mode={mode}, {oracle.nnz} nonzeros")
    return oracle


def write_coo_hamiltonian(oracle: RowOracle, path: Union[str, Path], max_rows: Optional[int] = None) -> int:
    """Write every nonzero entry of ``oracle`` in COO format; returns the entry count."""
    limit = oracle.dim if max_rows is None else max_rows
    if oracle.dim > limit:
        raise ResourceError(f"Refusing to enumerate 2^{oracle.n} rows (limit {limit})")
    count = 0
    with open(path, 'w', encoding='utf-8') as f:
        f.write(f"# {oracle.name}\n")
        f.write(f"n {oracle.n} mode {oracle.mode}\n")
        for i in range(oracle.dim):
            r = oracle.row(i)
            for j, value in zip(r.columns, r.values):
                f.write(f"{i} {int(j)} {float(value.real)!r} {float(value.imag)!r}\n")
                count += 1
    logger.info(f"Wrote {count} entries to {path}")
    return count


def load_state(path: Union[str, Path]) -> SparseState:
    """Load a state file: header ``n <qubits>``, then ``i re im`` per line."""
    path = str(path)
    n, _, body = _parse_header(_read_lines(path), path)
    indices, values = [], []
    seen: Dict[int, int] = {}
    for line_no, line in body:
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"Expected 'i re im', got {line!r}", line_no, path)
        try:
            i = int(parts[0])
            value = complex(float(parts[1]), float(parts[2]))
        except ValueError as e:
            raise ParseError(f"Could not parse amplitude {line!r}: {e}", line_no, path) from e
        if not 0 <= i < (1 << n):
            raise ParseError(f"Index {i} out of range [0, 2^{n})", line_no, path)
        if i in seen:
            raise ParseError(f"Duplicate index {i} (first at line {seen[i]})", line_no, path)
        seen[i] = line_no
        indices.append(i)
        values.append(value)
    return SparseState.from_entries(n, indices, values)
