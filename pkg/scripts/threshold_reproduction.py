"""Bisection estimate of the sharp constant for the unit-ball problem against the radial C*(3)."""
import argparse
import time

import numpy as np

from exterior_ma.cli import emit_csv
from exterior_ma.geometry import Ball, Constant, One, ProblemSpec, QuadraticAsymptote, build_grid
from exterior_ma.radial import nonexistence_bound
from exterior_ma.solver import estimate_threshold


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--h", type=float, default=0.25)
    ap.add_argument("--R", type=float, default=4.0)
    ap.add_argument("--tol-c", type=float, default=0.05)
    ap.add_argument("--mode", choices=["plain", "corrected"], default="corrected")
    ap.add_argument("--richardson", action="store_true")
    ap.add_argument("--out")
    args = ap.parse_args()
    p = ProblemSpec(Ball(np.zeros(3), 1.0), Constant(0.0), One(), QuadraticAsymptote.identity(3, 0.0))
    t = time.perf_counter()
    rep = estimate_threshold(p, build_grid(p.domain, args.R, args.h), tol_c=args.tol_c, mode=args.mode, richardson=args.richardson)
    rows = [[c, cls.value, rb] for c, cls, rb in rep.evaluations]
    footer = [
        f"c_low={rep.c_low:.17g}",
        f"c_high={rep.c_high:.17g}",
        f"reference={rep.reference:.17g}",
        f"estimate_minus_reference={rep.estimate - rep.reference:.6g}",
        f"nonexistence_bound={nonexistence_bound(p):.17g}",
        f"seconds={time.perf_counter() - t:.1f}",
    ]
    if rep.extrapolated is not None:
        footer.append(f"extrapolated={rep.extrapolated:.17g}")
    text = emit_csv(args.out, ["c", "classification", "boundary_residual"], rows, footer)
    if not args.out:
        print(text, end="")


if __name__ == "__main__":
    main()
