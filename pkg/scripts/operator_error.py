"""Consistency error of the wide-stencil operator on rotated unit-determinant quadratics.

For each dictionary width the CSV lists the largest ``MA_h - 1`` over Interior
nodes; the error is nonnegative and shrinks as the width grows.
"""
import argparse

import numpy as np
from scipy.spatial.transform import Rotation

from exterior_ma.cli import emit_csv
from exterior_ma.discrete_op import GridField, StencilDictionary, Trace, ma_operator
from exterior_ma.geometry import Ball, build_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=5)
    ap.add_argument("--widths", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    grid = build_grid(Ball(np.zeros(3), 1.0), 2.5, 0.5)
    rows = []
    for s in range(args.samples):
        Rm = Rotation.random(random_state=rng.integers(2**31)).as_matrix()
        ev = np.exp(rng.uniform(-0.7, 0.7, 3))
        A = Rm @ np.diag(ev / np.prod(ev) ** (1 / 3)) @ Rm.T

        def f(x, A=A):
            x = np.asarray(x, float)
            return 0.5 * np.einsum("...i,ij,...j->...", x, A, x)

        u = GridField.from_function(grid, f, Trace(f, f))
        for w in args.widths:
            d = StencilDictionary.build(3, w)
            err = ma_operator(u, d) - 1.0
            rows.append([s, w, d.angular_resolution(), float(err.min()), float(err.max())])
    print(emit_csv(args.out, ["sample", "width", "angular_resolution", "min_error", "max_error"], rows), end="")


if __name__ == "__main__":
    main()
