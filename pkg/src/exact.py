"""
Dense reference evolution and dense reconstruction of sketch operators (small n only).
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import linalg

from .errors import DomainError, NumericalError, ResourceError, SymmetryError, UsageError
from .hamiltonian import DENSE_MAX_QUBITS, HERMITIAN_TOLERANCE, RowOracle, SparseVector
from .hermitian_evolver import SketchHermitian
from .psd_evolver import hermitian_pinv

logger = logging.getLogger(__name__)

RECONSTRUCT_MAX_QUBITS = 8
PSD_TOLERANCE = 1e-10


@dataclass
class DenseHermitian:
    n: int
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.n > DENSE_MAX_QUBITS:
            raise ResourceError(f"Dense Hamiltonians are limited to n ≤ {DENSE_MAX_QUBITS}, got n={self.n}")
        self.matrix = np.asarray(self.matrix, dtype=np.complex128)
        dim = 1 << self.n
        if self.matrix.shape != (dim, dim):
            raise UsageError(f"Expected a {dim}x{dim} matrix, got {self.matrix.shape}")
        asym = float(np.max(np.abs(self.matrix - self.matrix.conj().T))) if dim else 0.0
        if asym > HERMITIAN_TOLERANCE:
            raise SymmetryError(f"Dense matrix deviates from Hermitian by {asym:.3e}")
        self._eigh = None

    @classmethod
    def from_oracle(cls, oracle: RowOracle) -> 'DenseHermitian':
        return cls(oracle.n, oracle.to_dense())

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> 'DenseHermitian':
        dim = np.asarray(matrix).shape[0]
        n = int(round(np.log2(dim)))
        if 2 ** n != dim:
            raise UsageError(f"Matrix size {dim} is not a power of two")
        return cls(n, matrix)

    def eigh(self):
        if self._eigh is None:
            try:
                self._eigh = linalg.eigh((self.matrix + self.matrix.conj().T) * 0.5)
            except (linalg.LinAlgError, ValueError) as e:
                logger.error(f"Dense eigendecomposition failed: {e}")
                raise NumericalError(f"Dense eigendecomposition failed: {e}") from e
        return self._eigh

    def spectral_norm(self) -> float:
        eigenvalues, _ = self.eigh()
        return float(np.max(np.abs(eigenvalues)))


def _as_dense_state(psi: Union[np.ndarray, SparseVector], dim: int) -> np.ndarray:
    vector = psi.to_dense() if isinstance(psi, SparseVector) else np.asarray(psi, dtype=np.complex128)
    if vector.shape != (dim,):
        raise UsageError(f"State of shape {vector.shape} does not match dimension {dim}")
    return vector


def exact_evolve(H: Union[DenseHermitian, np.ndarray], psi: Union[np.ndarray, SparseVector], t: float) -> np.ndarray:
    """e^{iHt}ψ = U diag(e^{iλt}) U* ψ."""
    if not isinstance(H, DenseHermitian):
        H = DenseHermitian.from_matrix(H)
    eigenvalues, U = H.eigh()
    vector = _as_dense_state(psi, 1 << H.n)
    return U @ (np.exp(1j * eigenvalues * t) * (U.conj().T @ vector))


def psd_factor(H: np.ndarray) -> np.ndarray:
    """Hermitian square root S with H = SS*; DomainError if H is not PSD."""
    eigenvalues, U = linalg.eigh((H + H.conj().T) * 0.5)
    scale = max(1.0, float(np.max(np.abs(eigenvalues)))) if len(eigenvalues) else 1.0
    if len(eigenvalues) and eigenvalues.min() < -PSD_TOLERANCE * scale:
        raise DomainError(f"Matrix is not PSD (smallest eigenvalue {eigenvalues.min():.3e})")
    return (U * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ U.conj().T


def nystrom_factors(H: np.ndarray, indices: Sequence[int]):
    """A = H[:, t] and B = H[t, t]."""
    idx = np.asarray(indices, dtype=np.int64)
    return H[:, idx], H[np.ix_(idx, idx)]


def dense_reconstruct(kind: str, H: Optional[np.ndarray] = None, indices: Optional[Sequence[int]] = None,
                      sketch: Optional[SketchHermitian] = None) -> np.ndarray:
    """
    Materialize a sketch operator:

    ``hhat-psd``  Ĥ = A B⁺ A*            (needs H, indices)
    ``aastar``    AA* from scaled rows   (needs sketch, H for the dimension)
    ``phat``      P̂ = S*V*(VSS*V*)⁺VS     (needs PSD H, indices)
    """
    if H is not None:
        H = np.asarray(H, dtype=np.complex128)
        dim = H.shape[0]
        if dim > (1 << RECONSTRUCT_MAX_QUBITS):
            raise ResourceError(f"Dense reconstruction is limited to n ≤ {RECONSTRUCT_MAX_QUBITS}")

    if kind == 'hhat-psd':
        if H is None or indices is None:
            raise UsageError("hhat-psd needs H and indices")
        A, B = nystrom_factors(H, indices)
        pinv, _, _ = hermitian_pinv(B)
        return A @ pinv @ A.conj().T
    if kind == 'aastar':
        if sketch is None or H is None:
            raise UsageError("aastar needs a Hermitian sketch and H")
        A = sketch.to_dense_A(H.shape[0])
        return A @ A.conj().T
    if kind == 'phat':
        if H is None or indices is None:
            raise UsageError("phat needs H and indices")
        S = psd_factor(H)
        X = S.conj().T[:, np.asarray(indices, dtype=np.int64)]  # S*V*
        # X (X*X)⁺ X* is the orthogonal projector onto range(X); computed from the SVD of X
        U, sigma, _ = linalg.svd(X, full_matrices=False)
        cutoff = max(X.shape) * np.finfo(float).eps * (sigma[0] if len(sigma) else 0.0)
        Ur = U[:, sigma > cutoff]
        return Ur @ Ur.conj().T
    raise UsageError(f"Unknown reconstruction kind {kind!r}; expected hhat-psd, aastar or phat")
