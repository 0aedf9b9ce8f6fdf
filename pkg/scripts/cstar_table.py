"""Critical constants C*(n) with quadrature error bounds and wall time per value."""
import argparse
import time

from exterior_ma.cli import emit_csv
from exterior_ma.radial import critical_constant_ball, critical_constant_error


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dims", type=int, nargs="+", default=[3, 4, 5, 6, 8])
    ap.add_argument("--out", help="CSV path (stdout if omitted)")
    args = ap.parse_args()
    rows = []
    for n in args.dims:
        t = time.perf_counter()
        val = critical_constant_ball(n)
        rows.append([n, val, critical_constant_error(n), time.perf_counter() - t])
    print(emit_csv(args.out, ["n", "cstar", "error_bound", "seconds"], rows), end="")


if __name__ == "__main__":
    main()
