import argparse
import sys

from src.errors import HamSimError
from src.families import FAMILIES, builtin_hamiltonian
from src.hamiltonian import write_coo_hamiltonian
from src.planner import compute_stats, efficiency_check


def main():
    parser = argparse.ArgumentParser(description="Write a built-in Hamiltonian family to a COO file")
    parser.add_argument('family', choices=FAMILIES)
    parser.add_argument('n', type=int, help='number of qubits')
    parser.add_argument('output', help='COO file to write')
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--mode', choices=('psd', 'hermitian'))
    parser.add_argument('--param', action='append', default=[], metavar='KEY=VALUE')
    args = parser.parse_args()

    params = {}
    for item in args.param:
        key, _, value = item.partition('=')
        params[key] = float(value)

    try:
        oracle = builtin_hamiltonian(args.family, args.n, params, seed=args.seed, mode=args.mode)
        count = write_coo_hamiltonian(oracle, args.output, max_rows=1 << 16)
        stats = compute_stats(oracle)
    except HamSimError as e:
        print(f"Error: {e}")
        return e.exit_code

    print(f"Wrote {count} entries to {args.output}")
    print(f"  tr H      = {stats.trace_h:.6g}")
    print(f"  ||H||_F^2 = {stats.frob_sq:.6g}")
    print(f"  ||H||     = {stats.spec_norm:.6g}" + (" (bound)" if stats.spec_norm_is_bound else ""))

    report = efficiency_check(stats)
    status = "within" if report.passed else "above"
    print(f"  shifted Frobenius mass {report.shifted_mass:.6g} is {status} the budget {report.budget:.6g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
