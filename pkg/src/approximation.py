"""
Lazy handle on an approximate evolved state.

Both evolvers produce states of the form

    ψ̂ = phase · (ψ + c·Hψ + Σ_j w_j H[:, t_j])

so a single amplitude costs one row fetch of H plus O(M) work, and the
whole sparse support can be accumulated without touching length-2ⁿ arrays.
"""
import logging
from typing import List, Optional, Sequence

import numpy as np

from .errors import ResourceError
from .hamiltonian import RowOracle, SparseState, SparseVector

logger = logging.getLogger(__name__)

FULL_STATE_MAX_QUBITS = 24


class ApproximateState:
    """Amplitudes of ψ̂ computed on demand."""

    def __init__(self, oracle: RowOracle, psi: SparseState, columns: np.ndarray, weights: np.ndarray,
                 linear_coefficient: complex = 0j, phase: complex = 1 + 0j, K: Optional[int] = None,
                 M: Optional[int] = None):
        self.oracle = oracle
        self.psi = psi
        self.columns = np.asarray(columns, dtype=np.int64)
        self.weights = np.asarray(weights, dtype=np.complex128)
        self.linear_coefficient = complex(linear_coefficient)
        self.phase = complex(phase)
        self.K = K
        self.M = M if M is not None else len(self.columns)

    @property
    def n(self) -> int:
        return self.oracle.n

    def __repr__(self) -> str:
        return f"<ApproximateState(n={self.n}, columns={len(self.columns)}, K={self.K})>"

    def amplitude(self, i: int) -> complex:
        if not 0 <= i < self.oracle.dim:
            raise IndexError(f"Amplitude index {i} out of range [0, 2^{self.n})")
        value = self.psi.amplitude(i)
        if self.linear_coefficient != 0 or len(self.columns):
            row = self.oracle.row(i)
            if self.linear_coefficient != 0:
                value += self.linear_coefficient * row.dot(self.psi)
            if len(self.columns):
                value += complex(np.dot(row.values_at(self.columns), self.weights))
        return self.phase * value

    def amplitudes(self, indices: Sequence[int]) -> np.ndarray:
        return np.array([self.amplitude(int(i)) for i in indices], dtype=np.complex128)

    def to_sparse(self) -> SparseVector:
        """
        Every nonzero amplitude, accumulated from the rows in the support of ψ
        and the sampled rows (column t of H is the conjugate of row t).
        """
        if self.n > FULL_STATE_MAX_QUBITS:
            raise ResourceError(f"Full-state output is limited to n ≤ {FULL_STATE_MAX_QUBITS}, got n={self.n}")
        idx: List[np.ndarray] = [self.psi.indices]
        vals: List[np.ndarray] = [self.psi.amplitudes]
        if self.linear_coefficient != 0:
            for j, amp in zip(self.psi.indices, self.psi.amplitudes):
                row = self.oracle.row(int(j))
                idx.append(row.columns)
                vals.append(self.linear_coefficient * amp * np.conj(row.values))
        for t, w in zip(self.columns, self.weights):
            if w == 0:
                continue
            row = self.oracle.row(int(t))
            idx.append(row.columns)
            vals.append(w * np.conj(row.values))
        accumulated = SparseVector.from_entries(self.n, np.concatenate(idx), np.concatenate(vals))
        return SparseVector(self.n, accumulated.indices, self.phase * accumulated.amplitudes, validate=False)

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().to_dense()

    def norm(self) -> float:
        return self.to_sparse().norm()
