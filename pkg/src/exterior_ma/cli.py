"""Command-line front end: ``exterior-ma <command> ...``.

Exit status is 0 on success, 2 when a solve ends ``NotConverged`` and 1 on
any error.  With ``--out DIR`` every command writes its artifacts there
together with ``manifest.txt`` (flat ``key = value`` text, including the
argument vector and a copy of the problem file) so the run can be repeated.
"""
from __future__ import annotations

import argparse
import hashlib
import io
import platform
import shutil
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .discrete_op import (
    GridField,
    StencilDictionary,
    _atomic_write,
    eps_upper_envelope,
    field_from_snapshot,
    is_discrete_subsolution,
    is_discrete_supersolution,
    read_snapshot,
    write_snapshot,
)
from .geometry import build_grid, normalize_affine
from .radial import (
    RadialProfile,
    alpha_from_constant,
    asymptotic_constant,
    critical_constant_ball,
    critical_constant_error,
    radial_value,
    NoSolution,
)
from .specfile import GridSettings, SpecFileError, load_spec

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    spec: str | None = None
    overrides: dict = field(default_factory=dict)
    out: str | None = None
    seed: int = 0
    argv: list = field(default_factory=list)

    def validate(self) -> None:
        o = self.overrides
        for key in ("h", "R", "tol", "tol_c", "eps"):
            if o.get(key) is not None and not o[key] > 0:
                raise ConfigError(f"--{key.replace('_', '-')} must be positive (got {o[key]})")
        if o.get("width") is not None and o["width"] < 1:
            raise ConfigError("--width must be at least 1")
        if o.get("max_sweeps") is not None and o["max_sweeps"] < 1:
            raise ConfigError("--max-sweeps must be at least 1")
        if o.get("dim") is not None and o["dim"] < 3:
            raise ConfigError("--dim must be at least 3")


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def csv_text(header: list, rows: list, footer: list | None = None) -> str:
    """Deterministic CSV: header, rows with 17 significant digits, ``#`` footer lines."""
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(fmt(v) for v in r) + "\n")
    for line in footer or []:
        buf.write(f"# {line}\n")
    return buf.getvalue()


def emit_csv(path, header: list, rows: list, footer: list | None = None) -> str:
    text = csv_text(header, rows, footer)
    if path is not None:
        _atomic_write(path, text.encode())
    return text


def kv_text(d: dict) -> str:
    return "".join(f"{k} = {fmt(v)}\n" for k, v in d.items())


def _versions() -> dict:
    import numba
    import scipy

    return {
        "exterior_ma": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def write_manifest(cfg: RunConfig, wall: float, extra: dict | None = None) -> None:
    out = Path(cfg.out)
    info = {"command": cfg.command, "argv": " ".join(cfg.argv), "seed": cfg.seed}
    if cfg.spec:
        data = Path(cfg.spec).read_bytes()
        info["spec_file"] = cfg.spec
        info["spec_sha256"] = hashlib.sha256(data).hexdigest()
        shutil.copyfile(cfg.spec, out / "problem.ini")
    for k, v in sorted(cfg.overrides.items()):
        if v is not None:
            info[f"override.{k}"] = v
    info.update({f"version.{k}": v for k, v in _versions().items()})
    info["wall_time_s"] = wall
    info.update(extra or {})
    _atomic_write(out / "manifest.txt", kv_text(info).encode())


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _problem(cfg: RunConfig):
    if not cfg.spec:
        raise ConfigError("this command needs --spec FILE")
    p, gs = load_spec(cfg.spec)
    o = cfg.overrides
    gs = GridSettings(o.get("h") or gs.h, o.get("R") or gs.R, o.get("width") or gs.width)
    pn, _ = normalize_affine(p)
    grid = build_grid(pn.domain, gs.R, gs.h)
    d = StencilDictionary.build(pn.n, gs.width)
    return pn, grid, d


def cmd_cstar(cfg, args, out):
    n = args.dim
    t = time.perf_counter()
    val = critical_constant_ball(n)
    err = critical_constant_error(n)
    out.write(f"C*({n}) = {val:.15g}\nquadrature_error_bound = {err:.3g}\ntime_s = {time.perf_counter() - t:.3g}\n")
    if cfg.out:
        emit_csv(Path(cfg.out) / "cstar.csv", ["n", "cstar", "error_bound"], [[n, val, err]])
    return EXIT_OK


def cmd_radial(cfg, args, out):
    n = args.dim
    if args.from_c is not None:
        alpha = alpha_from_constant(args.from_c, n)
        out.write(f"alpha = {alpha:.15g}\n")
    else:
        alpha = args.alpha
        out.write(f"c = {asymptotic_constant(RadialProfile(n, alpha)):.15g}\n")
    rows = []
    if args.r:
        vals = radial_value(RadialProfile(n, alpha), np.asarray(args.r, dtype=float))
        rows = [[r, v] for r, v in zip(args.r, np.atleast_1d(vals))]
        out.write(csv_text(["r", "u"], rows))
    if cfg.out:
        emit_csv(Path(cfg.out) / "radial.csv", ["r", "u"], rows, [f"alpha={fmt(float(alpha))}"])
    return EXIT_OK


def cmd_solve(cfg, args, out):
    from .solver import Classification, solve_truncated

    p, grid, d = _problem(cfg)
    kw = {}
    if args.tol is not None:
        kw["tol"] = args.tol
    if args.max_sweeps is not None:
        kw["max_sweeps"] = args.max_sweeps
    rep = solve_truncated(p, grid, d, mode=args.mode, **kw)
    summary = {"c": p.asymptote.c, **rep.summary()}
    out.write(kv_text(summary))
    if cfg.out:
        o = Path(cfg.out)
        _atomic_write(o / "report.txt", kv_text(summary).encode())
        emit_csv(o / "report.csv", list(summary), [list(summary.values())], ["field snapshot: field.maext" if args.snapshot else "no field snapshot"])
        if args.snapshot:
            write_snapshot(o / "field.maext", rep.field)
    return EXIT_NOT_CONVERGED if rep.classification is Classification.NOT_CONVERGED else EXIT_OK


def cmd_threshold(cfg, args, out):
    from .solver import ProbeNotConverged, estimate_threshold

    p, grid, d = _problem(cfg)
    bracket = tuple(args.bracket) if args.bracket else None
    try:
        rep = estimate_threshold(p, grid, d, bracket, args.tol_c, richardson=args.richardson, mode=args.mode)
    except ProbeNotConverged as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_NOT_CONVERGED
    rows = [[c, cls.value, rb] for c, cls, rb in rep.evaluations]
    footer = [f"c_low={fmt(float(rep.c_low))}", f"c_high={fmt(float(rep.c_high))}"]
    if rep.reference is not None:
        footer.append(f"reference={fmt(float(rep.reference))}")
    if rep.extrapolated is not None:
        footer.append(f"extrapolated={fmt(float(rep.extrapolated))}")
    text = emit_csv(Path(cfg.out) / "threshold.csv" if cfg.out else None, ["c", "classification", "boundary_residual"], rows, footer)
    out.write(text)
    return EXIT_OK


def _traced_field(cfg, path, monopole=0.0):
    from .solver import problem_trace

    p, grid, d = _problem(cfg)
    snap = read_snapshot(path)
    return p, grid, d, field_from_snapshot(snap, grid, problem_trace(p, monopole))


def cmd_perron(cfg, args, out):
    from .perron import perron_iterate

    p, grid, d, seed = _traced_field(cfg, args.seed_snapshot, args.monopole)
    cap = field_from_snapshot(read_snapshot(args.cap), grid, seed.trace)
    res = perron_iterate(seed, cap, p.g, d, tol=args.tol)
    change = float(np.nanmax(res.values - seed.values))
    out.write(kv_text({"max_lift": change}))
    if cfg.out:
        write_snapshot(Path(cfg.out) / "perron.maext", res)
    return EXIT_OK


def cmd_envelope(cfg, args, out):
    p, grid, d, u = _traced_field(cfg, args.snapshot)
    env = eps_upper_envelope(u, args.eps)
    out.write(kv_text({"eps": args.eps, "max_raise": float(np.nanmax(env.values - u.values))}))
    if cfg.out:
        write_snapshot(Path(cfg.out) / "envelope.maext", env)
    return EXIT_OK


def cmd_check(cfg, args, out):
    p, grid, d, u = _traced_field(cfg, args.snapshot, args.monopole)
    fn = is_discrete_subsolution if args.kind == "sub" else is_discrete_supersolution
    v = fn(u, p.g, d, args.tol)
    out.write(kv_text({"kind": args.kind, "ok": v.ok, "margin": v.margin, "node": v.node, "condition": v.kind}))
    return EXIT_OK if v.ok else EXIT_ERROR


def _op(name: str, n: int):
    from .cones import ConeOperator

    name = name.lower()
    if name == "det":
        return ConeOperator.det_root(n)
    if name.startswith("sigma") and name[5:].isdigit():
        return ConeOperator.sigma_k_root(int(name[5:]), n)
    if name.startswith("quotient"):
        k, l = (int(t) for t in name[8:].split("_"))
        return ConeOperator.sigma_quotient(k, l, n)
    raise ConfigError(f"--op: unknown operator {name!r} (det, sigmaK, quotientK_L)")


def cmd_cones(cfg, args, out):
    from .cones import combo_level_check, eigenvalues_sym, f_eval, general_discrete_subsolution

    if args.action == "check":
        p, grid, d, u = _traced_field(cfg, args.snapshot)
        op = _op(args.op, grid.n)
        if args.level is not None:
            op = op.with_level(args.level)
        v = general_discrete_subsolution(u, op, args.tol)
        out.write(kv_text({"operator": str(op), "ok": v.ok, "margin": v.margin, "node": v.node, "checked": v.checked, "skipped": v.skipped}))
        return EXIT_OK if v.ok else EXIT_ERROR
    rng = np.random.default_rng(cfg.seed)
    n = args.dim
    op = _op(args.op, n)
    rows = []
    for trial in range(args.trials):
        mats = []
        for _ in range(2):
            B = rng.standard_normal((n, n))
            M = B @ B.T + 0.1 * np.eye(n)
            lam = eigenvalues_sym(M)
            M = M * (op.level / f_eval(op, lam))  # degree-one homogeneity puts M on the level set
            mats.append(M)
        alpha = float(rng.uniform())
        rows.append([trial, combo_level_check(op, mats[0], mats[1], alpha).margin])
    footer = [f"min_margin={fmt(min(r[1] for r in rows))}", f"operator={op}", f"seed={cfg.seed}"]
    text = emit_csv(Path(cfg.out) / "combo.csv" if cfg.out else None, ["trial", "margin"], rows, footer)
    out.write(text)
    return EXIT_OK


COMMANDS = {
    "cstar": cmd_cstar,
    "radial": cmd_radial,
    "solve": cmd_solve,
    "threshold": cmd_threshold,
    "perron": cmd_perron,
    "envelope": cmd_envelope,
    "check": cmd_check,
    "cones": cmd_cones,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="exterior-ma", description="Exterior Monge-Ampere toolkit")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, spec=False):
        p.add_argument("--out", help="artifact directory (created if missing)")
        p.add_argument("--seed", type=int, default=0)
        if spec:
            p.add_argument("--spec", required=True, help="INI problem file")
            p.add_argument("--h", type=float)
            p.add_argument("--R", type=float)
            p.add_argument("--width", type=int, help="stencil dictionary width")

    p = sub.add_parser("cstar", help="critical constant of the unit-ball problem")
    p.add_argument("--dim", type=int, default=3)
    common(p)

    p = sub.add_parser("radial", help="radial family: alpha from c, or c and values from alpha")
    p.add_argument("--dim", type=int, default=3)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--from-c", type=float)
    g.add_argument("--alpha", type=float)
    p.add_argument("--r", type=float, nargs="*", help="radii at which to print u")
    common(p)

    p = sub.add_parser("solve", help="truncated Dirichlet solve")
    p.add_argument("--mode", choices=["plain", "corrected"], default="plain")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-sweeps", type=int)
    p.add_argument("--snapshot", action="store_true", help="also write the field snapshot")
    common(p, spec=True)

    p = sub.add_parser("threshold", help="bisection for the sharp constant")
    p.add_argument("--tol-c", type=float, default=0.05)
    p.add_argument("--bracket", type=float, nargs=2)
    p.add_argument("--mode", choices=["plain", "corrected"], default="corrected")
    p.add_argument("--richardson", action="store_true")
    common(p, spec=True)

    p = sub.add_parser("perron", help="Perron iteration between a seed and a cap snapshot")
    p.add_argument("--seed-snapshot", "--seed-snap", dest="seed_snapshot", required=True)
    p.add_argument("--cap", required=True)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--monopole", type=float, default=0.0, help="outer data correction used by the snapshots")
    common(p, spec=True)

    p = sub.add_parser("envelope", help="epsilon-upper envelope of a snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--eps", type=float, required=True)
    common(p, spec=True)

    p = sub.add_parser("check", help="discrete sub/supersolution test of a snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--kind", choices=["sub", "super"], default="sub")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--monopole", type=float, default=0.0)
    common(p, spec=True)

    p = sub.add_parser("cones", help="cone-operator property harness")
    csub = p.add_subparsers(dest="action", required=True)
    c = csub.add_parser("check", help="full-Hessian subsolution test of a snapshot")
    c.add_argument("--op", default="det")
    c.add_argument("--snapshot", required=True)
    c.add_argument("--level", type=float)
    c.add_argument("--tol", type=float, default=1e-8)
    common(c, spec=True)
    c = csub.add_parser("combo", help="randomized convex-combination level checks")
    c.add_argument("--op", default="det")
    c.add_argument("--trials", type=int, default=1000)
    c.add_argument("--dim", type=int, default=3)
    common(c)
    return ap


def config_from_args(args, argv) -> RunConfig:
    o = {k: getattr(args, k, None) for k in ("h", "R", "width", "tol", "tol_c", "eps", "max_sweeps", "dim")}
    return RunConfig(args.command, getattr(args, "spec", None), o, getattr(args, "out", None), getattr(args, "seed", 0), list(argv))


def run(cfg: RunConfig, args, out=None) -> int:
    out = sys.stdout if out is None else out
    cfg.validate()
    if cfg.out:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
    t = time.perf_counter()
    status = COMMANDS[cfg.command](cfg, args, out)
    if cfg.out:
        write_manifest(cfg, time.perf_counter() - t, {"exit_status": status})
    return status


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    cfg = config_from_args(args, argv)
    try:
        return run(cfg, args)
    except (ConfigError, SpecFileError, NoSolution, FileNotFoundError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
