"""Lattice operations on discrete subsolutions and a patchwise Perron iteration.

All functions return fresh fields.  Tolerances are passed explicitly; the
closure checks report margins instead of silently absorbing scheme slack.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .discrete_op import (
    GridField,
    StencilDictionary,
    Trace,
    _trace_combo,
    _trace_max,
    fill_boundary,
    is_discrete_subsolution,
    stencil_for,
)
from .geometry import INNER_BOUNDARY, INTERIOR, RhsField


class LatticeError(ValueError):
    """Inputs violate an operation's preconditions."""


class OrderingError(RuntimeError):
    """An iterate left the ``[seed, cap]`` band or a sequence broke monotonicity."""


def _same_grid(u: GridField, v: GridField) -> None:
    if not u.same_grid(v):
        raise LatticeError("fields live on different grids")


def pointwise_max(u: GridField, v: GridField, check: tuple | None = None) -> GridField:
    """Node-wise maximum; traces combine by maximum as well.

    ``check = (g, dictionary, tol)`` asserts that subsolution inputs give a
    subsolution output.
    """
    _same_grid(u, v)
    trace = _trace_max(u.trace, v.trace) if u.trace is not None and v.trace is not None else None
    w = GridField(u.grid, np.fmax(u.values, v.values), trace)
    if check is not None:
        g, d, tol = check
        if is_discrete_subsolution(u, g, d, tol) and is_discrete_subsolution(v, g, d, tol):
            verdict = is_discrete_subsolution(w, g, d, tol)
            if not verdict:
                raise OrderingError(f"max of subsolutions failed at {verdict.node}: margin {verdict.margin:.3g}")
    return w


def convex_combination(u1: GridField, u3: GridField, alpha: float) -> GridField:
    """``alpha u3 + (1 - alpha) u1``; the endpoints return copies of the inputs exactly."""
    _same_grid(u1, u3)
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise LatticeError(f"weight {alpha} outside [0, 1]")
    if alpha == 0.0:
        return u1.copy()
    if alpha == 1.0:
        return u3.copy()
    trace = _trace_combo(u1.trace, u3.trace, alpha) if u1.trace is not None and u3.trace is not None else None
    return GridField(u1.grid, alpha * u3.values + (1.0 - alpha) * u1.values, trace)


# ---------------------------------------------------------------------------
# Perron lifting
# ---------------------------------------------------------------------------

PATCH_RADIUS = 2  # in grid steps


def _offsets(n: int, radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    O = np.stack(np.meshgrid(*([r] * n), indexing="ij"), axis=-1).reshape(-1, n)
    return O[np.einsum("ij,ij->i", O, O) <= radius * radius]


def patch_rows(grid, center, radius: int = PATCH_RADIUS) -> np.ndarray:
    """Compact Interior rows within ``radius`` steps of an Interior ``center`` node.

    The patch is clipped to the Interior; nodes next to the boundary see the
    boundary data through their cut stencils.
    """
    center = np.asarray(center, dtype=np.int64)
    if grid.classes[tuple(center)] != INTERIOR:
        raise LatticeError(f"patch centre {tuple(center)} is not an Interior node")
    J = center + _offsets(grid.n, radius)
    m = grid.shape[0]
    J = J[np.all((J >= 0) & (J < m), axis=1)]
    rows = grid.compact_index[np.ravel_multi_index(tuple(J.T), grid.shape)]
    return np.sort(rows[rows >= 0])


@dataclass
class _Context:
    st: object
    theta: np.ndarray
    cval: np.ndarray
    gvals: np.ndarray
    frames: np.ndarray


def _context(u: GridField, g: RhsField, d: StencilDictionary) -> _Context:
    if u.trace is None:
        raise LatticeError("Perron lifting needs a traced field (boundary data)")
    st = stencil_for(u.grid, d)
    theta, cval = st.cut_values(u)
    gvals = np.asarray(g(u.grid.coords(u.grid.interior)), dtype=float)
    return _Context(st, theta, cval, gvals, np.ascontiguousarray(st.frames))


def perron_lift(u: GridField, center, g: RhsField, d: StencilDictionary, radius: int = PATCH_RADIUS, tol: float = 1e-13, max_iter: int = 500) -> GridField:
    """Local Dirichlet solve on a patch (``u`` outside it as data), then max with ``u``."""
    ctx = _context(u, g, d)
    rows = patch_rows(u.grid, center, radius).astype(np.int64)
    w = u.interior_values.copy()
    ptr = np.array([0, rows.size], dtype=np.int64)
    _kernels.perron_pass(w, ptr, rows, ctx.st.nbr, ctx.frames, ctx.theta, ctx.cval, ctx.st.dir_len, u.grid.h, ctx.gvals, tol, max_iter)
    return u.with_interior(w)


def patch_schedule(grid, radius: int = PATCH_RADIUS) -> tuple[np.ndarray, np.ndarray]:
    """Patches centred on the even sublattice, lexicographic order, CSR layout.

    Every Interior node lies within ``radius`` of some centre; Interior nodes
    with no even centre nearby become centres themselves.
    """
    flat = grid.interior
    I = np.stack(np.unravel_index(flat, grid.shape), axis=-1)
    centres = list(np.flatnonzero(np.all(I % 2 == 0, axis=1)))
    covered = np.zeros(flat.size, bool)
    patches = []
    for c in centres:
        rows = patch_rows(grid, I[c], radius)
        covered[rows] = True
        patches.append(rows)
    for c in np.flatnonzero(~covered):
        if not covered[c]:
            rows = patch_rows(grid, I[c], radius)
            covered[rows] = True
            patches.append(rows)
    ptr = np.zeros(len(patches) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([p.size for p in patches])
    return ptr, np.concatenate(patches).astype(np.int64)


def _reverse(ptr: np.ndarray, nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sizes = np.diff(ptr)[::-1]
    parts = [nodes[ptr[i]:ptr[i + 1]] for i in range(ptr.size - 1)][::-1]
    rptr = np.zeros_like(ptr)
    rptr[1:] = np.cumsum(sizes)
    return rptr, np.concatenate(parts)


def perron_iterate(
    seed: GridField,
    cap: GridField,
    g: RhsField,
    d: StencilDictionary,
    sweeps: int = 10000,
    tol: float = 1e-10,
    radius: int = PATCH_RADIUS,
    band_tol: float = 1e-9,
) -> GridField:
    """Repeated patch lifts (forward then backward schedule) until sup-change ``<= tol``.

    Raises :class:`OrderingError` if ``seed <= cap`` fails at the start or any
    pass pushes the iterate above ``cap + band_tol``.
    """
    _same_grid(seed, cap)
    ctx = _context(seed, g, d)
    grid = seed.grid
    c = cap.interior_values
    w = seed.interior_values.copy()
    if np.any(w > c + band_tol):
        i = int(np.argmax(w - c))
        raise OrderingError(f"seed above cap at {grid.multi_index(grid.interior[i])} by {w[i] - c[i]:.3g}")
    fwd = patch_schedule(grid, radius)
    bwd = _reverse(*fwd)
    for it in range(sweeps):
        ptr, nodes = fwd if it % 2 == 0 else bwd
        ch = _kernels.perron_pass(w, ptr, nodes, ctx.st.nbr, ctx.frames, ctx.theta, ctx.cval, ctx.st.dir_len, grid.h, ctx.gvals, 1e-13, 500)
        if np.any(w > c + band_tol):
            i = int(np.argmax(w - c))
            raise OrderingError(f"pass {it}: iterate above cap at {grid.multi_index(grid.interior[i])} by {w[i] - c[i]:.3g}")
        if ch <= tol:
            break
    return seed.with_interior(w)


# ---------------------------------------------------------------------------
# Monotone limits in c
# ---------------------------------------------------------------------------


def monotone_limit(fields: list, constants: list, c_limit: float | None = None, tol: float = 1e-9) -> GridField:
    """Node-wise limit of fields ``u_j`` at constants ``c_j`` decreasing to ``c_limit``.

    Consecutive fields must satisfy ``0 <= u_i - u_j <= c_i - c_j + tol`` on
    Interior and OuterBoundary nodes (InnerBoundary ghosts are extrapolations
    and need not be ordered).  If the last two fields already agree within
    ``tol`` the last one is returned.  Otherwise the limit is extrapolated
    linearly in ``c`` from the last two fields and clipped into the band
    ``max_j (u_j - (c_j - c)) <= u <= min_j u_j``; ghost values are then rebuilt
    from the extrapolated trace.
    """
    if len(fields) != len(constants) or not fields:
        raise LatticeError("need one constant per field")
    cs = [float(x) for x in constants]
    for i in range(1, len(fields)):
        _same_grid(fields[0], fields[i])
        if not cs[i] < cs[i - 1]:
            raise OrderingError(f"constants not decreasing at index {i}")
        diff = (fields[i - 1].values - fields[i].values)[_ordered_nodes(fields[i].grid)]
        lo, hi = np.nanmin(diff), np.nanmax(diff)
        if lo < -tol:
            raise OrderingError(f"fields {i - 1},{i}: not nonincreasing (min difference {lo:.3g})")
        if hi > cs[i - 1] - cs[i] + tol:
            raise OrderingError(f"fields {i - 1},{i}: Cauchy estimate violated ({hi:.3g} > {cs[i - 1] - cs[i]:.3g})")
    c = cs[-1] if c_limit is None else float(c_limit)
    if c > cs[-1]:
        raise LatticeError("limit constant above the last constant")
    last = fields[-1]
    if len(fields) == 1:
        return last.copy()
    keep = _ordered_nodes(last.grid)
    tail = float(np.nanmax(np.abs(fields[-2].values - last.values)[keep]))
    if tail <= tol or c == cs[-1]:
        return last.copy()
    slope = (last.values - fields[-2].values) / (cs[-1] - cs[-2])
    est = last.values + slope * (c - cs[-1])
    lower = np.max([f.values - (cj - c) for f, cj in zip(fields, cs)], axis=0)
    upper = np.min([f.values for f in fields], axis=0)
    est = np.clip(est, lower, upper)
    trace = last.trace
    if trace is not None and fields[-2].trace is not None:
        w = (c - cs[-1]) / (cs[-1] - cs[-2])
        a, b = fields[-2].trace, last.trace
        trace = Trace(lambda x: b.inner(x) + w * (b.inner(x) - a.inner(x)), lambda x: b.outer(x) + w * (b.outer(x) - a.outer(x)))
    grid = last.grid
    if trace is not None:
        # ghosts from the clipped interior; outer values keep the clipped estimate
        vals = fill_boundary(grid, est.ravel()[grid.interior], trace)
        vals = np.where(grid.classes == INNER_BOUNDARY, vals, est)
        return GridField(grid, vals, trace)
    return GridField(grid, est, trace)


def _ordered_nodes(grid) -> np.ndarray:
    """Nodes whose values are solution or data (not ghost extrapolations)."""
    return grid.valid() & (grid.classes != INNER_BOUNDARY)


def sandwich_margin(fields: list, constants: list, limit: GridField, c_limit: float) -> float:
    """Worst violation of ``u_j >= u_inf >= u_j - (c_j - c)`` (negative means violated).

    InnerBoundary ghosts are skipped, as in :func:`monotone_limit`.
    """
    worst = np.inf
    keep = _ordered_nodes(limit.grid)
    for f, cj in zip(fields, constants):
        upper = (f.values - limit.values)[keep]
        lower = (limit.values - (f.values - (cj - c_limit)))[keep]
        worst = min(worst, np.nanmin(upper), np.nanmin(lower))
    return float(worst)
