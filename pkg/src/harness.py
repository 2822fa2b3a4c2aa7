"""
End-to-end pipeline behind the command line: load → plan → sample → sketch →
evolve → query, plus convergence sweeps against the exact oracle.
"""
import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd

from .approximation import FULL_STATE_MAX_QUBITS, ApproximateState
from .errors import DomainError, UsageError
from .exact import DenseHermitian, exact_evolve
from .families import builtin_hamiltonian
from .hamiltonian import (
    DENSE_MAX_QUBITS, RowOracle, SparseState, SparseVector, WeightKind, load_coo_hamiltonian, load_state
)
from .hermitian_evolver import ShiftedOracle, build_sketch_hermitian, evolve_hermitian, is_negligible, trace_shift
from .planner import (
    EfficiencyReport, EvolutionPlan, HamiltonianStats, compute_stats, cost_estimate, efficiency_check, plan_hermitian,
    plan_psd
)
from .psd_evolver import build_sketch_psd, evolve_psd
from .sampler import draw_batch
from .settings import get_runtime_config

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
SWEEP_AXES = ('M', 'K', 't')
SWEEP_MAX_QUBITS = 10
DENSITY_TRACE_TOLERANCE = 1e-9


@dataclass
class RunOptions:
    """Everything one run needs; mirrors the command-line flags."""
    hamiltonian: Optional[str] = None
    family: Optional[str] = None
    n: Optional[int] = None
    params: Dict[str, Any] = field(default_factory=dict)
    state: Optional[str] = None
    basis: Optional[int] = None
    mode: Optional[str] = None
    t: float = 1.0
    eps: float = 0.1
    delta: float = 0.1
    samples: Optional[int] = None
    order: Optional[int] = None
    seed: int = 0
    trace_shift: bool = True
    amplitudes: List[int] = field(default_factory=list)
    amplitude_spec: Optional[str] = None
    full_state: bool = False
    exact: bool = False
    block_size: Optional[int] = None
    collapse_repeats: bool = True
    spec_norm_bound: Optional[float] = None
    stats_method: str = 'tree'
    efficiency_budget: Optional[float] = None
    threads: Optional[int] = None
    memory_limit_mb: Optional[int] = None

    def validate(self) -> None:
        if (self.hamiltonian is None) == (self.family is None):
            raise UsageError("Give exactly one of --hamiltonian or --family")
        if self.family is not None and self.n is None:
            raise UsageError("--family needs --n")
        if self.state is not None and self.basis is not None:
            raise UsageError("Give at most one of --state and --basis")
        if self.mode is not None and self.mode not in ('psd', 'hermitian', 'density'):
            raise UsageError(f"Unknown mode {self.mode!r}")
        if (self.amplitudes or self.amplitude_spec) and self.full_state:
            raise UsageError("Give at most one of --amplitude and --full-state")
        if self.t < 0:
            raise UsageError(f"--t must be nonnegative, got {self.t}")
        if self.samples is not None and self.samples < 1:
            raise UsageError("--samples must be at least 1")
        if self.order is not None and self.order < 1:
            raise UsageError("--order must be at least 1")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise UsageError("--seed must be an unsigned 64-bit integer")

    @property
    def label(self) -> str:
        return Path(self.hamiltonian).name if self.hamiltonian else f"{self.family}(n={self.n})"


@dataclass
class RunRecord:
    plan: EvolutionPlan
    n: int
    label: str
    requested_amplitudes: List[int]
    amplitudes: List[complex]
    error_vs_exact: Optional[float] = None
    wall_times: Dict[str, float] = field(default_factory=dict)
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    efficiency: Optional[EfficiencyReport] = None
    full_state: Optional[SparseVector] = None
    format_version: int = FORMAT_VERSION

    def to_dict(self, include_wall_times: bool = True) -> Dict[str, Any]:
        d: Dict[str, Any] = {
            'formatVersion': self.format_version,
            'label': self.label,
            'n': self.n,
            'plan': self.plan.to_dict(),
            'requestedAmplitudes': [int(i) for i in self.requested_amplitudes],
            'amplitudes': [[float(a.real), float(a.imag)] for a in self.amplitudes],
            'errorVsExact': self.error_vs_exact,
            'diagnostics': self.diagnostics,
            'efficiency': self.efficiency.to_dict() if self.efficiency else None,
        }
        if self.full_state is not None:
            d['fullState'] = [[int(i), float(a.real), float(a.imag)]
                              for i, a in zip(self.full_state.indices, self.full_state.amplitudes)]
        if include_wall_times:
            d['wallTimes'] = {k: round(v, 3) for k, v in self.wall_times.items()}
        return d

    def to_json(self, include_wall_times: bool = True) -> str:
        return json.dumps(self.to_dict(include_wall_times), sort_keys=True, indent=2)

    def determinism_hash(self) -> str:
        """SHA-256 of the JSON record without wall times."""
        return hashlib.sha256(self.to_json(include_wall_times=False).encode('utf-8')).hexdigest()


class PhaseTimer:
    """Wall-clock milliseconds per pipeline phase."""

    def __init__(self):
        self.times: Dict[str, float] = {}

    @contextmanager
    def __call__(self, phase: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = (time.perf_counter() - start) * 1000.0
            self.times[phase] = self.times.get(phase, 0.0) + elapsed
            logger.info(f"{phase} finished in {elapsed:.1f} ms")


def parse_amplitude_indices(text: str, n: int) -> List[int]:
    """Comma-separated decimal indices or bit-strings prefixed with 'b' / '0b' (e.g. b0101)."""
    indices = []
    for token in (tok.strip() for tok in text.split(',')):
        if not token:
            continue
        try:
            if token.lower().startswith(('0b', 'b')):
                bits = token[2:] if token.lower().startswith('0b') else token[1:]
                if len(bits) != n or not set(bits) <= {'0', '1'}:
                    raise ValueError(f"bit-string must have exactly {n} binary digits")
                index = int(bits, 2)
            else:
                index = int(token, 10)
        except ValueError as e:
            raise UsageError(f"Bad amplitude index {token!r}: {e}") from e
        if not 0 <= index < (1 << n):
            raise UsageError(f"Amplitude index {index} out of range [0, 2^{n})")
        indices.append(index)
    return indices


def parse_grid(spec: str, axis: str) -> List[float]:
    """
    'a:b:steps' (geometric for M, linear for K and t) or an explicit comma list.
    M and K values are rounded to distinct integers.
    """
    if axis not in SWEEP_AXES:
        raise UsageError(f"Sweep axis must be one of {', '.join(SWEEP_AXES)}, got {axis!r}")
    try:
        if ':' in spec:
            a, b, steps = spec.split(':')
            lo, hi, count = float(a), float(b), int(steps)
            if count < 1 or lo > hi:
                raise ValueError("need a ≤ b and steps ≥ 1")
            if axis == 'M':
                if lo <= 0:
                    raise ValueError("M grid must be positive")
                values = list(np.geomspace(lo, hi, count))
            else:
                values = list(np.linspace(lo, hi, count))
        else:
            values = [float(v) for v in spec.split(',') if v.strip()]
    except ValueError as e:
        raise UsageError(f"Bad grid {spec!r}: {e}") from e
    if axis in ('M', 'K'):
        rounded: List[float] = []
        for v in values:
            k = max(1, int(round(v)))
            if k not in rounded:
                rounded.append(k)
        return rounded
    return values


def write_record_json(record: RunRecord, path: str) -> None:
    Path(path).write_text(record.to_json() + "\n", encoding='utf-8')
    logger.info(f"Wrote run record to {path}")


def write_sweep_table(table: pd.DataFrame, path: str, summary: Optional[Dict[str, Any]] = None) -> None:
    """CSV, or an Excel workbook with a summary sheet when the suffix is .xlsx."""
    if str(path).lower().endswith('.xlsx'):
        with pd.ExcelWriter(path, engine='xlsxwriter') as writer:
            table.to_excel(writer, index=False, sheet_name='Sweep')
            if summary:
                pd.DataFrame(sorted(summary.items()), columns=['Field', 'Value']).to_excel(
                    writer, index=False, sheet_name='Summary')
    else:
        table.to_csv(path, index=False)
    logger.info(f"Wrote {len(table)} sweep rows to {path}")


class SimulationRunner:
    """Runs evolutions and sweeps; configuration comes from settings unless overridden per run."""

    def __init__(self, config: Optional[Dict[str, Any]] = None):
        self.config = config or get_runtime_config()

    def _threads(self, options: RunOptions) -> int:
        """Requested workers, capped by the configured limit."""
        cap = max(1, self.config['threads'])
        return max(1, min(options.threads, cap)) if options.threads else cap

    def _block_size(self, options: RunOptions) -> int:
        return options.block_size or self.config['block_size']

    def _memory_limit(self, options: RunOptions) -> int:
        return options.memory_limit_mb or self.config['memory_limit_mb']

    def load_hamiltonian(self, options: RunOptions) -> RowOracle:
        mode = 'psd' if options.mode == 'density' else options.mode
        if options.hamiltonian:
            return load_coo_hamiltonian(options.hamiltonian, mode)
        return builtin_hamiltonian(options.family, options.n, options.params, options.seed, mode)

    def load_state(self, options: RunOptions, n: int) -> SparseState:
        if options.state:
            psi = load_state(options.state)
            if psi.n != n:
                raise UsageError(f"State file has n={psi.n} but the Hamiltonian has n={n}")
            return psi
        return SparseState.basis(n, options.basis or 0)

    def resolve_mode(self, options: RunOptions, oracle: RowOracle) -> str:
        mode = options.mode or oracle.mode
        if mode in ('psd', 'density') and oracle.mode != 'psd':
            raise DomainError(f"Mode {mode} needs a PSD Hamiltonian")
        return mode

    def validate_density(self, oracle: RowOracle) -> None:
        trace = oracle.trace()
        if abs(trace - 1.0) > DENSITY_TRACE_TOLERANCE:
            raise DomainError(f"Density mode needs tr ρ = 1, got {trace!r}")
        if oracle.n <= DENSE_MAX_QUBITS:
            smallest = float(np.min(DenseHermitian.from_oracle(oracle).eigh()[0]))
            if smallest < -1e-10:
                raise DomainError(f"Density matrix is not PSD (smallest eigenvalue {smallest:.3e})")
        else:
            logger.info("Density PSD check limited to the diagonal for n > 12")

    def plan(self, options: RunOptions, oracle: RowOracle, mode: str
             ) -> Tuple[EvolutionPlan, RowOracle, complex, Optional[HamiltonianStats]]:
        """Returns (plan, oracle to evolve under, global phase, stats)."""
        phase = 1 + 0j
        evolution_oracle: RowOracle = oracle
        alpha = 0.0
        if mode == 'hermitian':
            shifted = trace_shift(oracle) if options.trace_shift else ShiftedOracle(oracle, 0.0)
            evolution_oracle, alpha, phase = shifted, shifted.alpha, shifted.phase(options.t)
            trivial = is_negligible(shifted, options.t, options.eps)
        else:
            trivial = oracle.frobenius_sq() == 0

        if trivial or options.t == 0:
            note = 't = 0' if options.t == 0 else 'Hamiltonian is negligible after the shift; evolution is a global phase'
            plan = EvolutionPlan(mode=mode, t=options.t, epsilon=options.eps, delta=options.delta, K=1, M=1,
                                 alpha=alpha, seed=options.seed, notes=[note])
            return plan.with_overrides(options.order, options.samples), evolution_oracle, phase, None

        stats = compute_stats(evolution_oracle, method=options.stats_method,
                              spec_norm_bound=options.spec_norm_bound, seed=options.seed)
        if mode == 'hermitian':
            plan = plan_hermitian(stats, options.t, options.eps, options.delta, seed=options.seed, alpha=alpha)
        else:
            plan = plan_psd(stats, options.t, options.eps, options.delta, seed=options.seed, mode=mode)
        return plan.with_overrides(options.order, options.samples), evolution_oracle, phase, stats

    def evolve_once(self, oracle: RowOracle, psi: SparseState, mode: str, t: float, K: int, M: int, seed: int,
                    phase: complex, options: RunOptions, diagnostics: Optional[Dict[str, Any]] = None
                    ) -> ApproximateState:
        """Sample, sketch and evolve for one (K, M, seed)."""
        threads = self._threads(options)
        if mode == 'hermitian':
            batch = draw_batch(oracle, WeightKind.SQUARED_ROW_NORM, M, seed, workers=threads)
            sketch = build_sketch_hermitian(oracle, batch, psi, collapse_repeats=options.collapse_repeats,
                                            memory_limit_mb=self._memory_limit(options))
            state = evolve_hermitian(sketch, psi, t, K, oracle, phase=phase)
        else:
            batch = draw_batch(oracle, WeightKind.DIAGONAL, M, seed, workers=threads)
            sketch = build_sketch_psd(oracle, batch, psi, block_size=self._block_size(options),
                                      collapse_repeats=options.collapse_repeats, workers=threads,
                                      memory_limit_mb=self._memory_limit(options))
            state = evolve_psd(sketch, psi, t, K, oracle, phase=phase)
            if diagnostics is not None:
                diagnostics['pinvDropped'] = sketch.dropped_eigenvalues
        if diagnostics is not None:
            diagnostics['distinctRows'] = int(len(np.unique(batch.indices)))
            diagnostics['sketchRows'] = int(sketch.M)
            diagnostics['marginalEvaluations'] = int(batch.marginal_evaluations)
        return state

    def _trivial_state(self, oracle: RowOracle, psi: SparseState, phase: complex) -> ApproximateState:
        return ApproximateState(oracle, psi, np.empty(0, np.int64), np.empty(0, np.complex128), phase=phase)

    def run_evolve(self, options: RunOptions) -> RunRecord:
        options.validate()
        timer = PhaseTimer()
        with timer('load'):
            oracle = self.load_hamiltonian(options)
            psi = self.load_state(options, oracle.n)
        mode = self.resolve_mode(options, oracle)
        if mode == 'density':
            self.validate_density(oracle)
        if options.full_state and oracle.n > FULL_STATE_MAX_QUBITS:
            raise UsageError(f"--full-state is limited to n ≤ {FULL_STATE_MAX_QUBITS}")
        if options.amplitude_spec:
            options.amplitudes = parse_amplitude_indices(options.amplitude_spec, oracle.n)
        requested = list(options.amplitudes) if options.amplitudes or options.full_state else [int(psi.indices[0])]

        with timer('plan'):
            plan, evolution_oracle, phase, stats = self.plan(options, oracle, mode)
        logger.info("Plan:\n" + plan.to_text())

        diagnostics: Dict[str, Any] = {'K': plan.K, 'nominalM': plan.M}
        with timer('evolve'):
            if stats is not None:
                state = self.evolve_once(evolution_oracle, psi, mode, options.t, plan.K, plan.M, plan.seed, phase,
                                         options, diagnostics)
            else:
                state = self._trivial_state(evolution_oracle, psi, phase)
        if stats is not None:
            row_nnz = max(len(oracle.row(int(i))) for i in psi.indices)
            diagnostics['costEstimate'] = cost_estimate(plan, max(row_nnz, 1), psi.q)

        with timer('query'):
            amplitudes = list(state.amplitudes(requested))
            full = state.to_sparse() if options.full_state else None
        if full is not None:
            diagnostics['stateNorm'] = full.norm()

        error = None
        if options.exact:
            if oracle.n <= DENSE_MAX_QUBITS:
                with timer('exact'):
                    reference = exact_evolve(DenseHermitian.from_oracle(oracle), psi, options.t)
                    error = float(np.linalg.norm(state.to_dense() - reference))
                logger.info(f"Error vs exact evolution: {error:.6e}")
            else:
                logger.warning(f"--exact ignored: the dense oracle is limited to n ≤ {DENSE_MAX_QUBITS}")

        timer.times['total'] = sum(timer.times.values())
        return RunRecord(plan=plan, n=oracle.n, label=options.label, requested_amplitudes=requested,
                         amplitudes=amplitudes, error_vs_exact=error, wall_times=timer.times,
                         diagnostics=diagnostics,
                         efficiency=efficiency_check(stats, options.efficiency_budget) if stats else None,
                         full_state=full)

    def run_plan(self, options: RunOptions) -> Tuple[EvolutionPlan, Optional[EfficiencyReport]]:
        """Plan only; no sampling."""
        options.validate()
        oracle = self.load_hamiltonian(options)
        mode = self.resolve_mode(options, oracle)
        if mode == 'density':
            self.validate_density(oracle)
        plan, _, _, stats = self.plan(options, oracle, mode)
        return plan, (efficiency_check(stats, options.efficiency_budget) if stats else None)

    def run_sweep(self, options: RunOptions, axis: str, grid: str, trials: int
                  ) -> Tuple[pd.DataFrame, EvolutionPlan, int]:
        """Median and 10/90% quantiles of ‖ψ̂ - e^{iHt}ψ‖ over ``trials`` seeds per grid point."""
        options.validate()
        if trials < 1:
            raise UsageError("--trials must be at least 1")
        values = parse_grid(grid, axis)
        oracle = self.load_hamiltonian(options)
        if oracle.n > SWEEP_MAX_QUBITS:
            raise UsageError(f"Sweeps need the exact oracle and are limited to n ≤ {SWEEP_MAX_QUBITS}")
        psi = self.load_state(options, oracle.n)
        mode = self.resolve_mode(options, oracle)
        if mode == 'density':
            self.validate_density(oracle)
        base_plan, evolution_oracle, _, _ = self.plan(options, oracle, mode)
        dense = DenseHermitian.from_oracle(oracle)
        alpha = base_plan.alpha

        def trivial(t: float) -> bool:
            if t == 0:
                return True
            if isinstance(evolution_oracle, ShiftedOracle):
                return is_negligible(evolution_oracle, t, options.eps)
            return evolution_oracle.frobenius_sq() == 0

        def run_point(value: float) -> Dict[str, Any]:
            K, M, t = base_plan.K, base_plan.M, options.t
            if axis == 'M':
                M = int(value)
            elif axis == 'K':
                K = int(value)
            else:
                t = float(value)
            reference = exact_evolve(dense, psi, t)
            phase = complex(np.exp(1j * alpha * t))
            identity = trivial(t)
            start = time.perf_counter()
            errors = []
            for r in range(trials):
                if identity:
                    state = self._trivial_state(evolution_oracle, psi, phase)
                else:
                    state = self.evolve_once(evolution_oracle, psi, mode, t, K, M, options.seed + r, phase, options)
                errors.append(float(np.linalg.norm(state.to_dense() - reference)))
            wall_ms = (time.perf_counter() - start) * 1000.0
            logger.info(f"Sweep {axis}={value}: median error {np.median(errors):.3e}")
            return {
                'axisValue': value,
                'seedCount': trials,
                'medianError': float(np.median(errors)),
                'q10': float(np.quantile(errors, 0.1)),
                'q90': float(np.quantile(errors, 0.9)),
                'wallMs': wall_ms,
            }

        threads = self._threads(options)
        if threads > 1 and len(values) > 1:
            with ThreadPoolExecutor(max_workers=min(threads, len(values))) as pool:
                rows = list(pool.map(run_point, values))
        else:
            rows = [run_point(v) for v in values]
        table = pd.DataFrame(rows, columns=['axisValue', 'seedCount', 'medianError', 'q10', 'q90', 'wallMs'])
        return table, base_plan, oracle.n


def sweep_summary(options: RunOptions, axis: str, plan: EvolutionPlan) -> Dict[str, Any]:
    return {'axis': axis, 'hamiltonian': options.label, 'mode': plan.mode, 'K': plan.K, 'M': plan.M,
            't': options.t, 'seed': options.seed, 'alpha': plan.alpha}
