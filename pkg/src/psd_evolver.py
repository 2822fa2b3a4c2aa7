"""
Nyström evolution for positive semidefinite Hamiltonians.

With sampled indices t_1..t_M, A = H[:, t] and B = H[t, t], the sketch
Ĥ = A B⁺ A* gives

    e^{iĤt}ψ ≈ ψ + A g_K(D) v,   D = B⁺A*A,  v = B⁺A*ψ,

where g_K(x) = Σ_{k=1}^{K} (it)^k x^{k-1}/k! is evaluated by the backward
recurrence b_0 = c_K v, b_j = c_{K-j} v + D b_{j-1} with c_k = (it)^k/k!.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg

from .approximation import ApproximateState
from .errors import DomainError, NumericalError, UsageError
from .hamiltonian import RowOracle, SparseRow, SparseState, WeightKind
from .sampler import SampleBatch
from .settings import DEFAULT_BLOCK_SIZE, check_dense_budget

logger = logging.getLogger(__name__)


@dataclass
class SketchPSD:
    """Everything the PSD recurrence needs."""
    indices: np.ndarray
    B: np.ndarray
    D: np.ndarray
    v: np.ndarray
    pinv_tolerance: float
    dropped_eigenvalues: int = 0
    nominal_M: Optional[int] = None
    gram: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def M(self) -> int:
        return len(self.indices)


def hermitian_pinv(B: np.ndarray) -> Tuple[np.ndarray, float, int]:
    """
    Pseudoinverse of a Hermitian matrix by eigendecomposition.

    Eigenvalues below max(M, 16)·eps·λ_max (and all negative ones) are
    treated as zero. Returns (pinv, cutoff, number of dropped eigenvalues).
    """
    M = B.shape[0]
    B = (B + B.conj().T) * 0.5
    try:
        eigenvalues, vectors = linalg.eigh(B)
    except (linalg.LinAlgError, ValueError) as e:
        logger.error(f"Eigendecomposition of the {M}x{M} sketch failed: {e}")
        raise NumericalError(f"Eigendecomposition of the {M}x{M} sketch failed: {e}") from e
    if not np.all(np.isfinite(eigenvalues)):
        raise NumericalError("Sketch matrix has non-finite eigenvalues")
    lam_max = float(np.max(np.abs(eigenvalues))) if M else 0.0
    cutoff = max(M, 16) * np.finfo(float).eps * lam_max
    keep = eigenvalues > cutoff
    inverse = np.zeros_like(eigenvalues)
    inverse[keep] = 1.0 / eigenvalues[keep]
    pinv = (vectors * inverse) @ vectors.conj().T
    return pinv, cutoff, int(M - np.count_nonzero(keep))


def _support_union(rows: List[SparseRow]) -> np.ndarray:
    if not rows:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate([r.columns for r in rows]))


def _tree_sum(parts: List[np.ndarray]) -> np.ndarray:
    # Pairwise reduction in a fixed order, independent of scheduling.
    while len(parts) > 1:
        parts = [parts[k] + parts[k + 1] if k + 1 < len(parts) else parts[k] for k in range(0, len(parts), 2)]
    return parts[0]


def accumulate_gram(rows: List[SparseRow], psi: SparseState, block_size: int = DEFAULT_BLOCK_SIZE,
                    workers: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """
    A*A and A*ψ for A[k, j] = H[k, t_j] = conj(rows[j][k]), block by block.

    Only rows k in the union of the sampled rows' supports can be nonzero in A,
    so blocks run over that union; each block holds a block_size × M slice.
    """
    if block_size < 1:
        raise UsageError(f"Block size must be positive, got {block_size}")
    M = len(rows)
    support = _support_union(rows)
    blocks = [support[k:k + block_size] for k in range(0, len(support), block_size)]

    def run_block(block: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        E = np.empty((len(block), M), dtype=np.complex128)
        for j, r in enumerate(rows):
            E[:, j] = np.conj(r.values_at(block))
        return E.conj().T @ E, E.conj().T @ psi.values_at(block)

    if not blocks:
        return np.zeros((M, M), dtype=np.complex128), np.zeros(M, dtype=np.complex128)
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(blocks))) as pool:
            results = list(pool.map(run_block, blocks))
    else:
        results = [run_block(b) for b in blocks]
    logger.debug(f"Accumulated A*A over {len(support)} rows in {len(blocks)} blocks")
    return _tree_sum([r[0] for r in results]), _tree_sum([r[1] for r in results])


def build_sketch_psd(oracle: RowOracle, batch: SampleBatch, psi: SparseState,
                     block_size: int = DEFAULT_BLOCK_SIZE, collapse_repeats: bool = False,
                     workers: int = 1, memory_limit_mb: Optional[int] = None,
                     keep_gram: bool = False) -> SketchPSD:
    """
    Build B, D = B⁺A*A and v = B⁺A*ψ from a diagonal-weight batch.

    With ``collapse_repeats`` repeated indices are merged; the operator Ĥ depends
    only on the span of the sampled columns, so the result is unchanged.
    """
    if batch.kind != WeightKind.DIAGONAL:
        raise UsageError("The PSD sketch needs a batch drawn with diagonal weights")
    if oracle.mode != 'psd':
        raise DomainError("The PSD evolver needs a PSD-mode Hamiltonian")
    if psi.n != oracle.n:
        raise UsageError(f"State has n={psi.n} but the Hamiltonian has n={oracle.n}")

    indices = np.unique(batch.indices) if collapse_repeats else np.asarray(batch.indices, dtype=np.int64)
    M = len(indices)
    check_dense_budget(M, 3 * M, "PSD sketch", memory_limit_mb)

    rows = [oracle.row(int(t)) for t in indices]
    B = np.vstack([r.values_at(indices) for r in rows]) if M else np.zeros((0, 0), np.complex128)
    asym = float(np.max(np.abs(B - B.conj().T))) if M else 0.0
    if asym > 1e-12:
        logger.warning(f"Sketch submatrix B deviates from Hermitian by {asym:.3e}")

    gram, projected = accumulate_gram(rows, psi, block_size, workers)
    pinv, cutoff, dropped = hermitian_pinv(B)
    if dropped:
        logger.info(f"Pseudoinverse cutoff {cutoff:.3e} dropped {dropped} of {M} eigenvalues")
    D = pinv @ gram
    v = pinv @ projected
    if not (np.all(np.isfinite(D)) and np.all(np.isfinite(v))):
        raise NumericalError("Non-finite entries in the PSD sketch")

    logger.info(f"Built PSD sketch with M={M} (nominal {batch.M})")
    return SketchPSD(indices=indices, B=B, D=D, v=v, pinv_tolerance=cutoff, dropped_eigenvalues=dropped,
                     nominal_M=batch.M, gram=gram if keep_gram else None)


def taylor_coefficients(t: float, K: int) -> List[complex]:
    """[(it)^k/k! for k = 0..K], by incremental multiplication."""
    coefficients = [1 + 0j]
    for k in range(1, K + 1):
        coefficients.append(coefficients[-1] * (1j * t) / k)
    return coefficients


def recurrence_psd(sketch: SketchPSD, t: float, K: int) -> np.ndarray:
    """b_{K-1} = g_K(D) v."""
    if K < 1:
        raise UsageError(f"Truncation order K must be at least 1 for the PSD evolver, got {K}")
    c = taylor_coefficients(t, K)
    b = c[K] * sketch.v
    for j in range(1, K):
        b = c[K - j] * sketch.v + sketch.D @ b
        if not np.all(np.isfinite(b)):
            raise NumericalError("Non-finite recurrence vector", stage=j)
        logger.debug(f"Recurrence stage {j}: ‖b‖ = {np.linalg.norm(b):.6e}")
    return b


def evolve_psd(sketch: SketchPSD, psi: SparseState, t: float, K: int, oracle: RowOracle,
               phase: complex = 1 + 0j) -> ApproximateState:
    """ψ̂ = ψ + A b_{K-1}, exposed lazily."""
    b = recurrence_psd(sketch, t, K)
    return ApproximateState(oracle, psi, sketch.indices, b, phase=phase, K=K,
                            M=sketch.nominal_M if sketch.nominal_M is not None else sketch.M)
