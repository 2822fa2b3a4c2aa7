"""
Row sampling by binary descent over prefix-set weight marginals.

Each draw takes a uniform q in [0, T) and walks from the root prefix to a
leaf, going right (bit 1) when q ≥ w(L‖0) and subtracting w(L‖0) as it
does. Draws are vectorized: all M descents advance one level at a time,
so a batch costs exactly n·M marginal evaluations.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .errors import DegenerateWeightError, DomainError, OracleFaultError, UsageError
from .hamiltonian import RowOracle, WeightKind

logger = logging.getLogger(__name__)

# Draws per independent random stream; streams are keyed by (seed, chunk).
DRAW_CHUNK = 4096
# Above this depth the running remainder of q is kept with compensated subtraction.
COMPENSATED_DEPTH = 30


@dataclass(frozen=True)
class SampleBatch:
    """M row indices drawn with repetition, with their sampling probabilities."""
    indices: np.ndarray
    probabilities: np.ndarray
    total_weight: float
    seed: int
    kind: WeightKind
    marginal_evaluations: int = 0

    @property
    def M(self) -> int:
        return len(self.indices)

    def collapsed(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Distinct indices (sorted) with their multiplicities and probabilities."""
        unique, first, counts = np.unique(self.indices, return_index=True, return_counts=True)
        return unique, counts, self.probabilities[first]


def check_weight_kind(oracle: RowOracle, kind: WeightKind) -> WeightKind:
    kind = WeightKind(kind)
    if kind == WeightKind.DIAGONAL and oracle.mode != 'psd':
        raise DomainError("Diagonal weights are only valid for PSD-mode Hamiltonians")
    return kind


def _total_weight(oracle: RowOracle, kind: WeightKind) -> float:
    total = oracle.marginal(0, 0, kind)
    if not np.isfinite(total):
        raise OracleFaultError(f"Total {kind.value} weight is not finite: {total}")
    if total <= 0:
        raise DegenerateWeightError(f"Total {kind.value} weight must be positive, got {total}")
    return float(total)


def _descend(oracle: RowOracle, kind: WeightKind, q: np.ndarray, total: float) -> Tuple[np.ndarray, int]:
    """Vectorized descent for uniforms ``q`` in [0, total). Returns leaves and marginal evaluation count."""
    count = len(q)
    q = np.array(q, dtype=np.float64)
    compensation = np.zeros(count) if oracle.n > COMPENSATED_DEPTH else None
    prefixes = np.zeros(count, dtype=np.int64)
    node_weight = np.full(count, total)
    evaluations = 0

    for level in range(oracle.n):
        left = prefixes << 1
        left_weight = np.asarray(oracle.marginals(left, level + 1, kind), dtype=np.float64)
        evaluations += count
        if np.any(~np.isfinite(left_weight)) or np.any(left_weight < 0):
            bad = int(np.flatnonzero(~np.isfinite(left_weight) | (left_weight < 0))[0])
            raise OracleFaultError(
                f"Marginal at prefix {int(left[bad])} (length {level + 1}) returned {left_weight[bad]}"
            )
        right_weight = node_weight - left_weight
        # A right child whose tracked weight is only rounding residue is treated as empty.
        go_right = (q >= left_weight) & (right_weight > 4 * np.finfo(float).eps * node_weight)

        if compensation is None:
            q = np.where(go_right, q - left_weight, q)
        else:
            y = -left_weight - compensation
            t = q + y
            new_comp = (t - q) - y
            q = np.where(go_right, t, q)
            compensation = np.where(go_right, new_comp, compensation)

        node_weight = np.where(go_right, right_weight, left_weight)
        prefixes = left | go_right.astype(np.int64)
        q = np.clip(q, 0.0, np.nextafter(node_weight, 0.0))

    return prefixes, evaluations


def sample_prefix_descent(oracle: RowOracle, kind: WeightKind, rng: Optional[np.random.Generator] = None,
                          q: Optional[float] = None) -> Tuple[int, float]:
    """
    Draw one row index. ``q`` may be given explicitly (in [0, total weight));
    otherwise it is drawn from ``rng``.
    """
    kind = check_weight_kind(oracle, kind)
    total = _total_weight(oracle, kind)
    if q is None:
        if rng is None:
            raise UsageError("sample_prefix_descent needs either rng or q")
        q = float(rng.random()) * total
    elif not 0 <= q < total:
        raise UsageError(f"q must lie in [0, {total}), got {q}")

    leaves, _ = _descend(oracle, kind, np.array([q]), total)
    index = int(leaves[0])
    probability = oracle.weight(index, kind) / total
    if probability <= 0:
        raise OracleFaultError(f"Descent reached row {index} with zero weight")
    return index, probability


def _chunk_uniforms(seed: int, chunk: int, size: int) -> np.ndarray:
    # Streams are separated in the top word of Philox's 256-bit counter.
    bit_generator = np.random.Philox(key=int(seed), counter=int(chunk) << 192)
    return np.random.Generator(bit_generator).random(size)


def draw_batch(oracle: RowOracle, kind: WeightKind, M: int, seed: int, workers: int = 1) -> SampleBatch:
    """Draw M independent row indices; the result depends only on (oracle, kind, M, seed)."""
    if M < 1:
        raise UsageError(f"Sample count M must be at least 1, got {M}")
    if seed < 0:
        raise UsageError(f"Seed must be nonnegative, got {seed}")
    kind = check_weight_kind(oracle, kind)
    total = _total_weight(oracle, kind)

    starts = list(range(0, M, DRAW_CHUNK))

    def run_chunk(k: int) -> Tuple[np.ndarray, int]:
        size = min(DRAW_CHUNK, M - starts[k])
        q = _chunk_uniforms(seed, k, size) * total
        return _descend(oracle, kind, q, total)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(starts))) as pool:
            results: List[Tuple[np.ndarray, int]] = list(pool.map(run_chunk, range(len(starts))))
    else:
        results = [run_chunk(k) for k in range(len(starts))]

    indices = np.concatenate([r[0] for r in results])
    evaluations = sum(r[1] for r in results)
    probabilities = np.asarray(oracle.weights(indices, kind), dtype=np.float64) / total
    if np.any(probabilities <= 0):
        bad = int(indices[np.argmax(probabilities <= 0)])
        raise OracleFaultError(f"Descent reached row {bad} with zero weight")

    logger.debug(f"Drew {M} {kind.value} samples (seed={seed}, {evaluations} marginal evaluations)")
    return SampleBatch(indices=indices, probabilities=probabilities, total_weight=total,
                       seed=int(seed), kind=kind, marginal_evaluations=evaluations)
