"""Truncated exterior Dirichlet solves, existence classification, threshold search.

The exterior problem is truncated to the annulus ``{x outside D, |x| < R}``.
On ``|x| = R`` the asymptote is imposed (``Plain``) or the asymptote plus a
fitted monopole ``d |x|^(2-n)`` (``Corrected``).  Interior values come from
nonlinear Gauss-Seidel on the wide-stencil scheme, started from the
asymptote lifted above all boundary data.

Existence is read off the inner boundary: each axis line that ends on the
domain is extrapolated quadratically from its last three Interior nodes to
the boundary crossing and compared with the data there.  A convex attaching
solution extrapolates onto its data up to the scheme error; below the
threshold the discrete solution detaches by roughly the gap in ``c``.
"""
from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .discrete_op import (
    GridField,
    Stencil,
    StencilDictionary,
    Trace,
    fill_boundary,
    ma_operator,
    stencil_for,
)
from .geometry import (
    AnnularGrid,
    Constant,
    One,
    ProblemSpec,
    QuadraticAsymptote,
    build_grid,
    quadratic_eval,
)
from .radial import (
    DEFAULT_Q,
    NoSolution,
    RadialProfile,
    alpha_from_constant,
    critical_constant_ball,
    nonexistence_bound,
    radial_value,
)

log = logging.getLogger(__name__)

TOL_MA_FACTOR = 10.0


class Classification(str, enum.Enum):
    EXISTS = "Exists"
    FAILS_BOUNDARY = "FailsBoundary"
    NOT_CONVERGED = "NotConverged"


class Mode(str, enum.Enum):
    PLAIN = "plain"
    CORRECTED = "corrected"


@dataclass
class SolveReport:
    field: GridField
    ma_residual: float
    boundary_residual: float
    iterations: int
    classification: Classification
    converged: bool = True
    detachment: Optional[float] = None  # max(data - extrapolated u) over the axis cuts
    history: list = field(default_factory=list, repr=False)  # sup-change per sweep
    monopole: float = 0.0  # fitted d of the corrected outer data
    tol_b: float = 0.0
    tol_ma: float = 0.0
    wall_time: float = 0.0

    def summary(self) -> dict:
        return {
            "classification": self.classification.value,
            "ma_residual": self.ma_residual,
            "boundary_residual": self.boundary_residual,
            "detachment": self.detachment,
            "iterations": self.iterations,
            "converged": self.converged,
            "monopole": self.monopole,
            "tol_b": self.tol_b,
            "tol_ma": self.tol_ma,
            "h": self.field.grid.h,
            "R": self.field.grid.R,
            "wall_time": self.wall_time,
        }


@dataclass
class ThresholdReport:
    c_low: float
    c_high: float
    evaluations: list  # (c, Classification, boundary_residual)
    reference: Optional[float] = None
    extrapolated: Optional[float] = None

    @property
    def estimate(self) -> float:
        return 0.5 * (self.c_low + self.c_high)


class BracketError(ValueError):
    pass


class ProbeNotConverged(RuntimeError):
    pass


def critical_defect(n: int, h: float) -> float:
    """Apparent detachment of the critical ball profile under the residual's extrapolation.

    Near the boundary the critical radial profile behaves like
    ``k x^p`` with ``x = r - 1``, ``p = 1 + 1/n`` and ``k = n^(1/n) / p``.
    Extrapolating it quadratically from ``x = h, 2h, 3h`` to ``x = 0`` lands
    below the true value by ``k h^p (3 2^p - 3 - 3^p)``; this is the worst
    cut position, and the smallest defect a solution at the threshold shows.
    """
    p = 1.0 + 1.0 / n
    k = n ** (1.0 / n) / p
    return k * h**p * (3.0 * 2.0**p - 3.0 - 3.0**p)


def default_tolerances(h: float, n: int = 3) -> tuple[float, float]:
    """``(tol_b, tol_ma)`` for spacing ``h``: the critical defect and ``10 h``."""
    return critical_defect(n, h), TOL_MA_FACTOR * h


# ---------------------------------------------------------------------------
# Boundary data
# ---------------------------------------------------------------------------


def outer_function(Q: QuadraticAsymptote, monopole: float = 0.0):
    """``x -> Q(x) + monopole |x|^(2-n)``."""
    n = Q.n

    def f(x):
        x = np.asarray(x, dtype=float)
        val = quadratic_eval(Q, x)
        if monopole != 0.0:
            val = val + monopole * np.linalg.norm(x, axis=-1) ** (2 - n)
        return val

    return f


def outer_boundary_data(Q: QuadraticAsymptote, grid: AnnularGrid, mode: Mode | str = Mode.PLAIN, monopole: float = 0.0) -> np.ndarray:
    """Values on the OuterBoundary nodes (flat order of ``grid.classes``)."""
    mode = Mode(mode)
    flat = np.flatnonzero(grid.classes.ravel() == 2)
    d = monopole if mode is Mode.CORRECTED else 0.0
    return outer_function(Q, d)(grid.coords(flat))


def problem_trace(p: ProblemSpec, monopole: float = 0.0) -> Trace:
    return Trace(p.phi, outer_function(p.asymptote, monopole))


# ---------------------------------------------------------------------------
# Residuals
# ---------------------------------------------------------------------------


def _axis_directions(st: Stencil) -> list[int]:
    V = st.directions
    return [k for k in range(V.shape[0]) if np.abs(V[k]).sum() == 1]


def boundary_defects(u: GridField, st: Stencil, inner_only: bool = False) -> np.ndarray:
    """Signed ``data - extrapolated u`` at every axis cut.

    Each axis line ending on a cut is extrapolated quadratically through its
    last three Interior nodes (linearly when only two exist).  Positive
    entries mean the field sits below its boundary data.
    """
    if u.trace is None:
        raise ValueError("boundary residual needs a traced field")
    theta, cval = st.cut_values(u)
    ui = u.interior_values
    out = []
    for k in _axis_directions(st):
        for s in (0, 1):
            code = st.nbr[:, k, s].astype(np.int64)
            rows = np.flatnonzero(code < 0)
            cut = -code[rows] - 1
            if inner_only:
                keep = ~st.cut_outer[cut]
                rows, cut = rows[keep], cut[keep]
            if not rows.size:
                continue
            back1 = st.nbr[rows, k, 1 - s].astype(np.int64)
            ok1 = back1 >= 0
            back2 = np.where(ok1, st.nbr[np.where(ok1, back1, 0), k, 1 - s], -1).astype(np.int64)
            ok2 = ok1 & (back2 >= 0)
            t = theta[cut]
            u0 = ui[rows]
            u1 = np.where(ok1, ui[np.where(ok1, back1, 0)], u0)
            u2 = np.where(ok2, ui[np.where(ok2, back2, 0)], u1)
            quad = 0.5 * (t + 1) * (t + 2) * u0 - t * (t + 2) * u1 + 0.5 * t * (t + 1) * u2
            lin = (1 + t) * u0 - t * u1
            ext = np.where(ok2, quad, np.where(ok1, lin, u0))
            out.append(cval[cut] - ext)
    return np.concatenate(out) if out else np.zeros(0)


def boundary_residual(u: GridField, st: Stencil, inner_only: bool = False) -> float:
    """Max over axis cuts of ``|extrapolated u - data|``."""
    e = boundary_defects(u, st, inner_only)
    return float(np.abs(e).max(initial=0.0))


def detachment(u: GridField, st: Stencil) -> float:
    """Largest amount by which the field extrapolates below its data (``>= 0``)."""
    return float(max(0.0, boundary_defects(u, st).max(initial=0.0)))


def ma_residual(u: GridField, g, d: StencilDictionary) -> float:
    gi = np.asarray(g(u.grid.coords(u.grid.interior)), dtype=float)
    return float(np.max(np.abs(ma_operator(u, d) - gi)))


def classify_existence(r: SolveReport, tol_b: float, tol_ma: float) -> Classification:
    """Ternary verdict from the residuals.

    ``Exists`` needs both residuals within tolerance; a converged solve that
    satisfies the equation but misses the boundary data is ``FailsBoundary``;
    anything else (including a sweep limit hit) is ``NotConverged``.  The
    boundary test uses the one-sided ``detachment`` when the report has it,
    since losing the data shows up as the field dropping below it.
    """
    if not r.converged or not r.ma_residual <= tol_ma:
        return Classification.NOT_CONVERGED
    b = r.boundary_residual if r.detachment is None else r.detachment
    if b <= tol_b:
        return Classification.EXISTS
    return Classification.FAILS_BOUNDARY


# ---------------------------------------------------------------------------
# Gauss-Seidel driver
# ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    u: np.ndarray
    history: list
    converged: bool


def gauss_seidel(st: Stencil, u: np.ndarray, cut_theta, cut_val, gvals, tol: float, max_sweeps: int, rows=None) -> SweepResult:
    """Alternating forward/backward nonlinear Gauss-Seidel until sup-change <= tol."""
    fwd = np.arange(st.nbr.shape[0], dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)
    bwd = fwd[::-1].copy()
    frames = np.ascontiguousarray(st.frames)
    hist = []
    for it in range(max_sweeps):
        order = fwd if it % 2 == 0 else bwd
        ch = _kernels.gs_sweep(u, order, st.nbr, frames, cut_theta, cut_val, st.dir_len, st.grid.h, gvals)
        hist.append(float(ch))
        if ch <= tol:
            return SweepResult(u, hist, True)
    return SweepResult(u, hist, False)


def _fit_monopole(u: GridField, Q: QuadraticAsymptote) -> float:
    """Least-squares ``d`` in ``u - Q ~ e + d r^(2-n)`` over the outer half of the annulus."""
    grid = u.grid
    X = grid.coords(grid.interior)
    r = np.linalg.norm(X, axis=1)
    r0 = 0.5 * (grid.domain.circumradius() + grid.R)
    sel = r >= r0
    if sel.sum() < 3:
        return 0.0
    y = u.interior_values[sel] - quadratic_eval(Q, X[sel])
    A = np.stack([np.ones(sel.sum()), r[sel] ** (2 - grid.n)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(coef[1])


def _run(p: ProblemSpec, grid: AnnularGrid, st: Stencil, gvals, mono: float, start, tol: float, max_sweeps: int):
    trace = problem_trace(p, mono)
    theta, cval = st.cut_values(GridField(grid, np.zeros(grid.shape), trace))
    if start is None:
        X = grid.coords(grid.interior)
        lift = float(np.max(cval - outer_function(p.asymptote)(st.cut_points), initial=0.0))
        start = quadratic_eval(p.asymptote, X) + max(0.0, lift)
    u = np.array(start, dtype=float)
    return gauss_seidel(st, u, theta, cval, gvals, tol, max_sweeps), trace


def fit_monopole(p: ProblemSpec, grid: AnnularGrid, d: StencilDictionary, tol: float = 1e-8, max_sweeps: int = 20000) -> tuple[float, list]:
    """Monopole ``d`` for corrected outer data, with the sweep history spent on it.

    The refit map ``d -> fit(solve(d))`` is close to affine, so two evaluations
    (from ``d = 0`` and from its image) give its fixed point.
    """
    st = stencil_for(grid, d)
    gvals = np.asarray(p.g(grid.coords(grid.interior)), dtype=float)
    res, trace = _run(p, grid, st, gvals, 0.0, None, tol, max_sweeps)
    hist = list(res.history)
    f0 = _fit_monopole(GridField(grid, fill_boundary(grid, res.u, trace), trace), p.asymptote)
    if f0 == 0.0:
        return 0.0, hist
    res, trace = _run(p, grid, st, gvals, f0, res.u, tol, max_sweeps)
    hist += res.history
    f1 = _fit_monopole(GridField(grid, fill_boundary(grid, res.u, trace), trace), p.asymptote)
    slope = min(max((f1 - f0) / f0, -0.9), 0.5)
    return f0 / (1.0 - slope), hist


def companion_grid(grid: AnnularGrid, factor: float = 2.0) -> AnnularGrid:
    """Coarser grid on the same annulus, or ``grid`` itself if too few layers remain."""
    try:
        return build_grid(grid.domain, grid.R, factor * grid.h)
    except ValueError:
        return grid


def solve_truncated(
    p: ProblemSpec,
    grid: AnnularGrid,
    d: StencilDictionary | None = None,
    tol: float = 1e-8,
    max_sweeps: int = 20000,
    mode: Mode | str = Mode.PLAIN,
    tol_b: float | None = None,
    tol_ma: float | None = None,
    initial: np.ndarray | None = None,
    monopole: float | None = None,
    fit_grid: AnnularGrid | None = None,
) -> SolveReport:
    """Solve ``MA_h[u] = g`` on ``grid`` with inner data ``phi`` and outer data from ``Q``.

    Parameters
    ----------
    mode
        ``"plain"`` imposes ``Q`` on ``|x| = R``.  ``"corrected"`` imposes
        ``Q + d r^(2-n)``, where ``d`` is ``monopole`` if given and otherwise
        comes from :func:`fit_monopole` on ``fit_grid`` (default: the
        ``2h`` companion grid when it still has three layers, else ``grid``).
    initial
        Interior starting values; defaults to ``Q`` plus the smallest constant
        that puts it above every boundary datum.
    tol
        Stop once a sweep changes no node by more than this.
    """
    t0 = time.perf_counter()
    if not p.asymptote.is_normalized():
        raise ValueError("solve_truncated expects a normalized problem (A = I, b = 0)")
    if grid.domain is not p.domain and not (
        np.allclose(grid.domain.center, p.domain.center) and np.allclose(grid.domain.shape_matrix, p.domain.shape_matrix)
    ):
        raise ValueError("grid was built for a different domain")
    d = d or StencilDictionary.build(grid.n, 2)
    mode = Mode(mode)
    tb, tm = default_tolerances(grid.h, grid.n)
    tol_b = tb if tol_b is None else tol_b
    tol_ma = tm if tol_ma is None else tol_ma
    st = stencil_for(grid, d)
    gvals = np.asarray(p.g(grid.coords(grid.interior)), dtype=float)

    history: list = []
    mono = 0.0
    if mode is Mode.CORRECTED:
        if monopole is None:
            mono, fit_hist = fit_monopole(p, fit_grid or companion_grid(grid), d, tol, max_sweeps)
            log.info("fitted monopole %.6g in %d companion sweeps", mono, len(fit_hist))
        else:
            mono = float(monopole)
    res, trace = _run(p, grid, st, gvals, mono, initial, tol, max_sweeps)
    history += res.history
    u = GridField(grid, fill_boundary(grid, res.u, trace), trace)
    rep = SolveReport(
        field=u,
        ma_residual=ma_residual(u, p.g, d),
        boundary_residual=boundary_residual(u, st),
        detachment=detachment(u, st),
        iterations=len(history),
        classification=Classification.NOT_CONVERGED,
        converged=res.converged,
        history=history,
        monopole=mono,
        tol_b=tol_b,
        tol_ma=tol_ma,
    )
    rep.classification = classify_existence(rep, tol_b, tol_ma)
    rep.wall_time = time.perf_counter() - t0
    log.info("solve c=%.6g: %s (sweeps %d, res_b %.3g, res_ma %.3g)", p.asymptote.c, rep.classification.value, rep.iterations, rep.boundary_residual, rep.ma_residual)
    return rep


# ---------------------------------------------------------------------------
# Threshold search
# ---------------------------------------------------------------------------


def _probe(p, grid, d, c, kw):
    rep = solve_truncated(p.with_c(c), grid, d, **kw)
    return rep.classification, rep.boundary_residual


def _find_exists(probe, lo: float, hi: float, tol_c: float, max_widen: int) -> float:
    """An upper constant classifying ``Exists``.

    Tries ``hi``, then points halving back toward ``lo`` (very large ``c``
    makes the Hessian strongly anisotropic near the boundary, where the
    wide stencil is least accurate), then doubling steps above ``hi``.
    """
    if probe(hi) is Classification.EXISTS:
        return hi
    c = hi
    while c - lo > 4 * tol_c:
        c = lo + 0.5 * (c - lo)
        if probe(c) is Classification.EXISTS:
            return c
    step = hi - lo
    c = hi
    for _ in range(max_widen):
        c += step
        step *= 2
        if probe(c) is Classification.EXISTS:
            return c
    raise BracketError("no Exists verdict found above the lower seed")


def estimate_threshold(
    p: ProblemSpec,
    grid: AnnularGrid,
    d: StencilDictionary | None = None,
    bracket: tuple[float, float] | None = None,
    tol_c: float = 0.05,
    richardson: bool = False,
    max_widen: int = 6,
    mode: Mode | str = Mode.CORRECTED,
    **solve_kw,
) -> ThresholdReport:
    """Bisection in ``c`` for the smallest constant whose solve classifies ``Exists``.

    Without a bracket the lower seed is :func:`nonexistence_bound` and the
    upper seed that bound plus 10.  An upper seed that fails is first halved
    toward the lower one, then pushed upward; a lower seed that classifies
    ``Exists`` is pushed downward by doubling steps.  With ``richardson`` the search is repeated on
    a grid with ``1.5 R`` and the two estimates are extrapolated assuming an
    ``R^(2-n)`` error.
    """
    d = d or StencilDictionary.build(grid.n, 2)
    solve_kw = dict(solve_kw, mode=mode)
    evals: list = []

    def probe(c):
        cls, rb = _probe(p, grid, d, c, solve_kw)
        evals.append((float(c), cls, rb))
        if cls is Classification.NOT_CONVERGED:
            raise ProbeNotConverged(f"probe at c = {c!r} did not converge (boundary residual {rb:.3g})")
        return cls

    if bracket is None:
        lo = nonexistence_bound(p)
        hi = lo + 10.0
    else:
        lo, hi = map(float, bracket)
    if not lo < hi:
        raise BracketError("bracket must satisfy c_lo < c_hi")
    hi = _find_exists(probe, lo, hi, tol_c, max_widen)
    step = max(hi - lo, tol_c)
    for _ in range(max_widen):
        if probe(lo) is not Classification.EXISTS:
            break
        hi, lo = lo, lo - step
        step *= 2
    else:
        raise BracketError("no failing verdict found below the bracket")
    while hi - lo > tol_c:
        mid = 0.5 * (lo + hi)
        if probe(mid) is Classification.EXISTS:
            hi = mid
        else:
            lo = mid
    ref = None
    if p.domain.is_centered_ball() and isinstance(p.g, One) and isinstance(p.phi, Constant):
        if abs(float(p.domain.semi_axes[0]) - 1.0) < 1e-12:
            ref = float(p.phi.value) + critical_constant_ball(grid.n)
    rep = ThresholdReport(lo, hi, evals, reference=ref)
    if richardson:
        g2 = build_grid(grid.domain, 1.5 * grid.R, grid.h)
        rep2 = estimate_threshold(p, g2, d, (lo - 2 * tol_c, hi + 2 * tol_c), tol_c, False, max_widen, **solve_kw)
        k = 1.5 ** (2 - grid.n)
        rep.extrapolated = (rep2.estimate - k * rep.estimate) / (1 - k)
        rep.evaluations += rep2.evaluations
    return rep


# ---------------------------------------------------------------------------
# Radial oracle on the grid
# ---------------------------------------------------------------------------


def solve_exterior_radial(p: ProblemSpec, grid: AnnularGrid | None = None, h: float | None = None, R: float | None = None) -> GridField:
    """Exact radial solution of the unit-ball problem sampled on a grid.

    Needs ``D = B_1`` centred at the origin, constant ``phi``, ``g = One`` and
    the normalized asymptote; ``c - phi`` picks the radial member.
    """
    if not (p.domain.is_centered_ball() and abs(p.domain.semi_axes[0] - 1.0) < 1e-12):
        raise ValueError("radial oracle needs the unit ball centred at the origin")
    if not isinstance(p.phi, Constant) or not isinstance(p.g, One):
        raise ValueError("radial oracle needs constant phi and g = One")
    if not p.asymptote.is_normalized():
        raise ValueError("radial oracle needs a normalized asymptote")
    if grid is None:
        grid = build_grid(p.domain, R, h)
    shift = float(p.phi.value)
    alpha = alpha_from_constant(p.asymptote.c - shift, grid.n)
    prof = RadialProfile(grid.n, alpha)

    def f(x):
        r = np.linalg.norm(np.asarray(x, float), axis=-1)
        out = np.full(r.shape, shift)
        m = r > 1.0
        out[m] = shift + radial_value(prof, r[m], DEFAULT_Q)
        return out

    vals = np.full(grid.shape, np.nan)
    valid = grid.valid()
    X = grid.coords(np.flatnonzero(valid.ravel()))
    vals[valid] = f(X)
    return GridField(grid, vals, problem_trace(p))


__all__ = [
    "Classification",
    "Mode",
    "NoSolution",
    "SolveReport",
    "ThresholdReport",
    "BracketError",
    "ProbeNotConverged",
    "boundary_defects",
    "boundary_residual",
    "critical_defect",
    "detachment",
    "classify_existence",
    "default_tolerances",
    "estimate_threshold",
    "fit_monopole",
    "companion_grid",
    "gauss_seidel",
    "ma_residual",
    "outer_boundary_data",
    "outer_function",
    "problem_trace",
    "solve_exterior_radial",
    "solve_truncated",
]
