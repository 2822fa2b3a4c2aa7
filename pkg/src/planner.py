"""
Parameter planning: truncation order K and sample count M from (t, ε, δ)
and summary statistics of the Hamiltonian.
"""
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .errors import DomainError, ResourceError, UsageError
from .hamiltonian import CSR_MAX_QUBITS, DENSE_MAX_QUBITS, RowOracle
from .families import make_generator

logger = logging.getLogger(__name__)

FORMULA_VERSION = 1
POWER_ITERATION_STEPS = 200
POWER_ITERATION_TOLERANCE = 1e-6
STATS_TOLERANCE = 1e-9


class DegeneratePlanError(DomainError):
    """The statistics admit no meaningful plan (e.g. tr H ≤ 0 in PSD mode)."""
    pass


class StatsSource(str, Enum):
    EXACT_DENSE = 'exact-dense'
    MARGINAL_TREE = 'marginal-tree'
    USER_BOUND = 'user-supplied-bound'


@dataclass(frozen=True)
class HamiltonianStats:
    trace_h: float
    frob_sq: float
    spec_norm: float
    n: int
    source: StatsSource
    spec_norm_is_bound: bool = False

    def __post_init__(self):
        scale = max(1.0, abs(self.frob_sq))
        if self.frob_sq < -STATS_TOLERANCE:
            raise DomainError(f"Squared Frobenius norm must be nonnegative, got {self.frob_sq}")
        if self.spec_norm < 0:
            raise DomainError(f"Spectral norm must be nonnegative, got {self.spec_norm}")
        if self.source != StatsSource.USER_BOUND and \
                self.spec_norm > math.sqrt(max(self.frob_sq, 0.0)) + STATS_TOLERANCE * max(1.0, self.spec_norm):
            raise DomainError(f"Spectral norm {self.spec_norm} exceeds Frobenius norm {math.sqrt(self.frob_sq)}")
        if self.frob_sq < self.trace_h ** 2 / (1 << self.n) - STATS_TOLERANCE * scale:
            raise DomainError("Squared Frobenius norm is below tr(H)²/2ⁿ")

    @property
    def shifted_mass(self) -> float:
        """‖H‖²_F - tr(H)²/2ⁿ, the Frobenius mass left after the trace shift."""
        return max(self.frob_sq - self.trace_h ** 2 / (1 << self.n), 0.0)

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d['source'] = self.source.value
        return d


@dataclass
class EvolutionPlan:
    """Fully determines a run."""
    mode: str
    t: float
    epsilon: float
    delta: float
    K: int
    M: int
    alpha: float = 0.0
    seed: int = 0
    stats: Optional[HamiltonianStats] = None
    raw_K: Optional[float] = None
    raw_M: Optional[float] = None
    overrides: Dict[str, int] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)
    formula_version: int = FORMULA_VERSION

    def __post_init__(self):
        if self.K < 1 or self.M < 1:
            raise UsageError(f"Plan needs K ≥ 1 and M ≥ 1, got K={self.K}, M={self.M}")

    def with_overrides(self, K: Optional[int] = None, M: Optional[int] = None) -> 'EvolutionPlan':
        overrides = dict(self.overrides)
        if K is not None:
            overrides['K'] = int(K)
        if M is not None:
            overrides['M'] = int(M)
        return replace(self, K=int(K) if K is not None else self.K, M=int(M) if M is not None else self.M,
                       overrides=overrides, notes=list(self.notes))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'mode': self.mode,
            't': self.t,
            'eps': self.epsilon,
            'delta': self.delta,
            'K': self.K,
            'M': self.M,
            'alpha': self.alpha,
            'seed': self.seed,
            'stats': self.stats.to_dict() if self.stats else None,
            'rawK': self.raw_K,
            'rawM': self.raw_M,
            'overrides': dict(self.overrides),
            'notes': list(self.notes),
            'formulaVersion': self.formula_version,
        }

    def to_text(self) -> str:
        """Key-value block echoed by the CLI."""
        lines = [f"mode = {self.mode}", f"t = {self.t!r}", f"eps = {self.epsilon!r}", f"delta = {self.delta!r}",
                 f"K = {self.K}", f"M = {self.M}", f"alpha = {self.alpha!r}", f"seed = {self.seed}"]
        if self.stats is not None:
            lines += [f"stats.trace = {self.stats.trace_h!r}", f"stats.frob_sq = {self.stats.frob_sq!r}",
                      f"stats.spec_norm = {self.stats.spec_norm!r}", f"stats.source = {self.stats.source.value}"]
        for key, value in sorted(self.overrides.items()):
            lines.append(f"override.{key} = {value}")
        for note in self.notes:
            lines.append(f"note = {note}")
        lines.append(f"formula-version = {self.formula_version}")
        return "\n".join(lines)


def _check_accuracy(t: float, eps: float, delta: float) -> None:
    if not t > 0:
        raise UsageError(f"Planning needs t > 0, got {t}")
    if not 0 < eps <= 1:
        raise UsageError(f"eps must lie in (0, 1], got {eps}")
    if not 0 < delta <= 1:
        raise UsageError(f"delta must lie in (0, 1], got {delta}")


def psd_bounds(trace_h: float, spec_norm: float, t: float, eps: float, delta: float) -> Tuple[float, float]:
    """Unrounded (K, M) for the PSD algorithm."""
    K = math.e * t * spec_norm + math.log(2.0 / eps)
    M = max(405.0 * trace_h, (72.0 * trace_h * t / eps) * math.log(36.0 * trace_h * t / (eps * delta)))
    return K, M


def hermitian_bounds(frob_sq: float, spec_norm: float, t: float, eps: float, delta: float) -> Tuple[float, float]:
    """Unrounded (K, M) for the Hermitian algorithm."""
    norm_sq = spec_norm ** 2
    K = 4.0 * t * math.sqrt(norm_sq + eps) + math.log(4.0 * (1.0 + t * spec_norm) / eps)
    M = (256.0 * t ** 4 * (1.0 + t * t * norm_sq) * frob_sq * norm_sq / eps ** 2
         * math.log(4.0 * frob_sq / (delta * norm_sq)))
    return K, M


def _warn_large_M(plan: EvolutionPlan, n: int) -> None:
    if plan.M > (1 << n):
        message = f"planned M = {plan.M} exceeds 2^n = {1 << n}; the bound is valid but pessimistic"
        logger.warning(message)
        plan.notes.append(message)


def plan_psd(stats: HamiltonianStats, t: float, eps: float, delta: float, seed: int = 0,
             mode: str = 'psd') -> EvolutionPlan:
    _check_accuracy(t, eps, delta)
    if stats.trace_h <= 0:
        raise DegeneratePlanError(f"PSD planning needs tr H > 0, got {stats.trace_h}")
    raw_K, raw_M = psd_bounds(stats.trace_h, stats.spec_norm, t, eps, delta)
    plan = EvolutionPlan(mode=mode, t=t, epsilon=eps, delta=delta, K=max(1, math.ceil(raw_K)),
                         M=max(1, math.ceil(raw_M)), seed=seed, stats=stats, raw_K=raw_K, raw_M=raw_M)
    _warn_large_M(plan, stats.n)
    logger.info(f"PSD plan: K={plan.K}, M={plan.M}")
    return plan


def plan_hermitian(stats: HamiltonianStats, t: float, eps: float, delta: float, seed: int = 0,
                   alpha: float = 0.0) -> EvolutionPlan:
    """``stats`` describe the shifted Hamiltonian when a trace shift is active."""
    _check_accuracy(t, eps, delta)
    if stats.spec_norm <= 0 or stats.frob_sq <= 0:
        raise DegeneratePlanError("Hermitian planning needs a nonzero Hamiltonian")
    raw_K, raw_M = hermitian_bounds(stats.frob_sq, stats.spec_norm, t, eps, delta)
    plan = EvolutionPlan(mode='hermitian', t=t, epsilon=eps, delta=delta, K=max(1, math.ceil(raw_K)),
                         M=max(1, math.ceil(raw_M)), alpha=alpha, seed=seed, stats=stats, raw_K=raw_K, raw_M=raw_M)

    ratio_log = math.log(stats.frob_sq / stats.spec_norm ** 2)
    cap = stats.n * math.log(2.0)
    if ratio_log > cap + 1e-9:
        plan.notes.append(f"log(‖H‖²_F/‖H‖²) = {ratio_log:.6g} exceeds n·ln 2 = {cap:.6g}; spectral norm "
                          f"is likely underestimated")
        logger.warning(plan.notes[-1])
    _warn_large_M(plan, stats.n)
    logger.info(f"Hermitian plan: K={plan.K}, M={plan.M}, alpha={alpha:.6g}")
    return plan


def cost_estimate(plan: EvolutionPlan, row_nnz: int, state_nnz: int) -> Dict[str, float]:
    """Operation and memory counts of one run, up to constants."""
    s, q, M, K = row_nnz, state_nnz, plan.M, plan.K
    return {
        'time': float(s * q + M * min(s, q) + M * M * (s + K)),
        'memory': float(s * q + M * M),
    }


@dataclass(frozen=True)
class EfficiencyReport:
    shifted_mass: float
    budget: float
    passed: bool

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def default_budget(n: int) -> float:
    """A polylog(2ⁿ) threshold: n²."""
    return float(n * n)


def efficiency_check(stats: HamiltonianStats, budget: Optional[float] = None) -> EfficiencyReport:
    """Informational: is ‖H‖²_F - tr(H)²/2ⁿ within the budget?"""
    budget = default_budget(stats.n) if budget is None else float(budget)
    mass = float(stats.shifted_mass)
    report = EfficiencyReport(shifted_mass=mass, budget=budget, passed=bool(mass <= budget))
    if not report.passed:
        logger.warning(f"Shifted Frobenius mass {report.shifted_mass:.6g} exceeds the budget {budget:.6g}")
    return report


def power_iteration(oracle: RowOracle, max_iterations: int = POWER_ITERATION_STEPS,
                    tolerance: float = POWER_ITERATION_TOLERANCE, seed: int = 0) -> Tuple[float, bool]:
    """‖H‖ by power iteration x ← Hx/‖Hx‖; returns (estimate, converged)."""
    H = oracle.to_csr()
    x = make_generator(seed).standard_normal(oracle.dim) + 0j
    x /= np.linalg.norm(x)
    estimate = 0.0
    for step in range(1, max_iterations + 1):
        y = H @ x
        norm = float(np.linalg.norm(y))
        if norm == 0.0:
            return 0.0, True
        converged = abs(norm - estimate) <= tolerance * norm
        estimate = norm
        x = y / norm
        if converged:
            logger.debug(f"Power iteration converged after {step} steps: {estimate:.9g}")
            return estimate, True
    return estimate, False


def compute_stats(oracle: RowOracle, method: str = 'tree', spec_norm_bound: Optional[float] = None,
                  max_iterations: int = POWER_ITERATION_STEPS, tolerance: float = POWER_ITERATION_TOLERANCE,
                  seed: int = 0) -> HamiltonianStats:
    """Trace, squared Frobenius norm and spectral norm (or a bound) of the Hamiltonian."""
    if method == 'exact-dense':
        if oracle.n > DENSE_MAX_QUBITS:
            raise ResourceError(f"exact-dense statistics need n ≤ {DENSE_MAX_QUBITS}, got n={oracle.n}")
        dense = oracle.to_dense()
        eigenvalues = np.linalg.eigvalsh(dense)
        return HamiltonianStats(trace_h=float(np.sum(eigenvalues)),
                                frob_sq=float(np.sum(np.abs(dense) ** 2)),
                                spec_norm=float(np.max(np.abs(eigenvalues))),
                                n=oracle.n, source=StatsSource.EXACT_DENSE)
    if method != 'tree':
        raise UsageError(f"Unknown statistics method {method!r}; expected 'tree' or 'exact-dense'")

    trace_h = oracle.trace() if oracle.has_diagonal_marginals else 0.0
    frob_sq = oracle.frobenius_sq()
    if spec_norm_bound is not None:
        return HamiltonianStats(trace_h=trace_h, frob_sq=frob_sq, spec_norm=float(spec_norm_bound), n=oracle.n,
                                source=StatsSource.USER_BOUND, spec_norm_is_bound=True)
    if oracle.n > CSR_MAX_QUBITS:
        logger.warning(f"n={oracle.n} is too large for power iteration; using ‖H‖ ≤ ‖H‖_F")
        return HamiltonianStats(trace_h=trace_h, frob_sq=frob_sq, spec_norm=math.sqrt(frob_sq), n=oracle.n,
                                source=StatsSource.MARGINAL_TREE, spec_norm_is_bound=True)
    spec_norm, converged = power_iteration(oracle, max_iterations, tolerance, seed)
    if not converged:
        logger.warning(f"Power iteration did not converge in {max_iterations} steps; using ‖H‖ ≤ ‖H‖_F")
        spec_norm = math.sqrt(frob_sq)
    # rounding can push the estimate a hair above ‖H‖_F
    spec_norm = min(spec_norm, math.sqrt(frob_sq))
    return HamiltonianStats(trace_h=trace_h, frob_sq=frob_sq, spec_norm=spec_norm, n=oracle.n,
                            source=StatsSource.MARGINAL_TREE, spec_norm_is_bound=not converged)

