"""
Command-line front end for approximate Hamiltonian time evolution.

    python main.py evolve --family inverse-diag --n 4 --mode psd --t 1 --eps 0.1 --delta 0.1 --amplitude 0 --exact
    python main.py plan --hamiltonian h.coo --t 2 --eps 0.05 --delta 0.1
    python main.py sweep --family rank-r-psd --n 3 --sweep M --grid 4:1024:5 --trials 20 --out sweep.csv
    python main.py history --database sqlite:///runs.db
"""
import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

from src.errors import HamSimError, UsageError
from src.families import FAMILIES
from src.harness import (
    RunOptions, SimulationRunner, sweep_summary, write_record_json, write_sweep_table
)
from src.settings import get_runtime_config

logger = logging.getLogger(__name__)


def configure_logging(level: str, log_file: str) -> None:
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def parse_params(items: Optional[List[str]]) -> Dict[str, Any]:
    """KEY=VALUE pairs; values become int or float when they parse as such."""
    params: Dict[str, Any] = {}
    for item in items or []:
        if '=' not in item:
            raise UsageError(f"Family parameter must be KEY=VALUE, got {item!r}")
        key, raw = item.split('=', 1)
        value: Any = raw
        for cast in (int, float):
            try:
                value = cast(raw)
                break
            except ValueError:
                continue
        params[key.strip()] = value
    return params


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    source = common.add_argument_group('Hamiltonian and state')
    source.add_argument('--hamiltonian', metavar='PATH', help='COO Hamiltonian file')
    source.add_argument('--family', choices=FAMILIES, help='built-in Hamiltonian family')
    source.add_argument('--n', type=int, help='number of qubits (with --family)')
    source.add_argument('--param', action='append', metavar='KEY=VALUE',
                        help='family parameter, e.g. rank=2 or trace=1.0 (repeatable)')
    source.add_argument('--state', metavar='PATH', help='sparse state file (default: basis state 0)')
    source.add_argument('--basis', type=int, metavar='INDEX', help='start from a computational basis state')
    source.add_argument('--mode', choices=('psd', 'hermitian', 'density'),
                        help='algorithm (default: the Hamiltonian\'s own mode)')

    run = common.add_argument_group('Evolution')
    run.add_argument('--t', type=float, default=1.0, help='evolution time (default: 1)')
    run.add_argument('--eps', type=float, default=0.1, help='target accuracy ε (default: 0.1)')
    run.add_argument('--delta', type=float, default=0.1, help='failure probability δ (default: 0.1)')
    run.add_argument('--samples', type=int, metavar='M', help='override the planned sample count')
    run.add_argument('--order', type=int, metavar='K', help='override the planned truncation order')
    run.add_argument('--seed', type=int, default=0, help='sampling seed (unsigned 64-bit)')
    run.add_argument('--no-trace-shift', action='store_true', help='disable the trace shift in Hermitian mode')
    run.add_argument('--no-collapse', action='store_true',
                     help='keep repeated sampled rows as separate sketch rows')
    run.add_argument('--spec-norm', type=float, metavar='BOUND', help='certified upper bound on ‖H‖')
    run.add_argument('--stats', choices=('tree', 'exact-dense'), default='tree',
                     help='how to compute trace/Frobenius/spectral statistics')
    run.add_argument('--efficiency-budget', type=float, help='threshold for the shifted Frobenius mass (default n²)')
    run.add_argument('--block-size', type=int, help='rows per accumulation block (env HAMSIM_BLOCK_SIZE)')
    run.add_argument('--threads', type=int, help='worker cap (env HAMSIM_THREADS)')

    output = common.add_argument_group('Output')
    output.add_argument('--out', metavar='PATH', help='output file (default: stdout)')
    output.add_argument('--record', action='store_true', help='store the run in the history database')
    output.add_argument('--database', metavar='URL', help='history database URL (env HAMSIM_DATABASE_URL)')
    output.add_argument('--log-level', help='logging level (env HAMSIM_LOG_LEVEL)')

    parser = argparse.ArgumentParser(description='Approximate e^{iHt}ψ for row-searchable Hamiltonians')
    sub = parser.add_subparsers(dest='command', required=True)

    evolve = sub.add_parser('evolve', parents=[common], help='run one evolution and query amplitudes')
    evolve.add_argument('--amplitude', metavar='IDX[,IDX...]',
                        help='amplitudes to report (decimal or b-prefixed bit-strings)')
    evolve.add_argument('--full-state', action='store_true', help='report every nonzero amplitude (n ≤ 24)')
    evolve.add_argument('--exact', action='store_true', help='compare against dense exact evolution (n ≤ 12)')

    sub.add_parser('plan', parents=[common], help='print the parameter plan without evolving')

    sweep = sub.add_parser('sweep', parents=[common], help='convergence sweep against the exact oracle')
    sweep.add_argument('--sweep', dest='axis', choices=('M', 'K', 't'), required=True, help='axis to vary')
    sweep.add_argument('--grid', required=True, metavar='a:b:steps', help='grid (or comma-separated values)')
    sweep.add_argument('--trials', type=int, default=10, help='seeded trials per grid point')

    history = sub.add_parser('history', help='list recorded runs')
    history.add_argument('--database', metavar='URL', help='history database URL (env HAMSIM_DATABASE_URL)')
    history.add_argument('--mode', choices=('psd', 'hermitian', 'density'))
    history.add_argument('--limit', type=int, default=20)
    history.add_argument('--out', metavar='PATH', help='write all runs to CSV')
    history.add_argument('--log-level')
    return parser


def options_from_args(args: argparse.Namespace) -> RunOptions:
    return RunOptions(
        hamiltonian=args.hamiltonian,
        family=args.family,
        n=args.n,
        params=parse_params(args.param),
        state=args.state,
        basis=args.basis,
        mode=args.mode,
        t=args.t,
        eps=args.eps,
        delta=args.delta,
        samples=args.samples,
        order=args.order,
        seed=args.seed,
        trace_shift=not args.no_trace_shift,
        amplitude_spec=getattr(args, 'amplitude', None),
        full_state=getattr(args, 'full_state', False),
        exact=getattr(args, 'exact', False),
        block_size=args.block_size,
        collapse_repeats=not args.no_collapse,
        spec_norm_bound=args.spec_norm,
        stats_method=args.stats,
        efficiency_budget=args.efficiency_budget,
        threads=args.threads,
    )


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        with open(path, 'w', encoding='utf-8') as f:
            f.write(text + "\n")
        logger.info(f"Wrote {path}")
    else:
        print(text)


def _record_enabled(args: argparse.Namespace, config: Dict[str, Any]) -> bool:
    return bool(args.record or args.database or config['database_url'])


def cmd_evolve(args: argparse.Namespace, runner: SimulationRunner) -> None:
    options = options_from_args(args)
    record = runner.run_evolve(options)
    if args.out:
        write_record_json(record, args.out)
    else:
        print(record.to_json())
    if _record_enabled(args, runner.config):
        from src.database import save_run
        save_run(record.to_dict(), args.database)


def cmd_plan(args: argparse.Namespace, runner: SimulationRunner) -> None:
    options = options_from_args(args)
    plan, report = runner.run_plan(options)
    text = plan.to_text()
    if report is not None:
        text += (f"\nefficiency.shifted_mass = {report.shifted_mass!r}\nefficiency.budget = {report.budget!r}"
                 f"\nefficiency.passed = {str(report.passed).lower()}")
    _emit(text, args.out)


def cmd_sweep(args: argparse.Namespace, runner: SimulationRunner) -> None:
    options = options_from_args(args)
    table, plan, n = runner.run_sweep(options, args.axis, args.grid, args.trials)
    if args.out:
        write_sweep_table(table, args.out, sweep_summary(options, args.axis, plan))
    else:
        print(table.to_csv(index=False), end='')
    if _record_enabled(args, runner.config):
        from src.database import save_run, save_sweep
        base = {'label': options.label, 'n': n, 'plan': plan.to_dict(), 'sweep': args.axis}
        run_id = save_run(base, args.database)
        save_sweep(run_id, args.axis, table, args.database)


def cmd_history(args: argparse.Namespace, runner: SimulationRunner) -> None:
    from src.database import list_runs, runs_dataframe
    if args.out:
        runs_dataframe(args.database).to_csv(args.out, index=False)
        logger.info(f"Wrote run history to {args.out}")
        return
    for run in list_runs(args.database, mode=args.mode, limit=args.limit):
        error = f"{run['errorVsExact']:.3e}" if run['errorVsExact'] is not None else '-'
        print(f"{run['id']:>5}  {run['createdAt']}  {run['mode']:<9} n={run['n']:<3} t={run['t']:<8g} "
              f"K={run['K']:<4} M={run['M']:<8} error={error}  {run['label']}")


COMMANDS = {
    'evolve': cmd_evolve,
    'plan': cmd_plan,
    'sweep': cmd_sweep,
    'history': cmd_history,
}


def main(argv: Optional[List[str]] = None) -> int:
    config = get_runtime_config()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    configure_logging(args.log_level or config['log_level'], config['log_file'])
    runner = SimulationRunner(config)
    try:
        COMMANDS[args.command](args, runner)
    except HamSimError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        print(f"unexpected error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
