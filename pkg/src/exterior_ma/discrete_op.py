"""Wide-stencil discrete Monge-Ampere operator and the grid-field toolkit.

Fields live on an :class:`~exterior_ma.geometry.AnnularGrid` as box arrays
with ``NaN`` at Excluded nodes.  Second differences at nodes next to a
boundary use Shortley-Weller weights toward the point where the stencil
segment leaves the annulus; the value there comes from the field's
:class:`Trace` (boundary data), which keeps the operator monotone.

For a direction ``v`` with one-sided step lengths ``h+`` and ``h-`` the second
difference is ``a+ u+ + a- u- - (a+ + a-) u0`` with
``a+- = 2 / (h+- (h+ + h-))``; it reduces to the centred formula for full steps.
"""
from __future__ import annotations

import functools
import itertools
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .geometry import (
    EXCLUDED,
    INTERIOR,
    AnnularGrid,
    RhsField,
    sphere_points,
)

DELTA = 1e-14
MAGIC = b"MAEXT1"


class StencilError(ValueError):
    """A stencil neighbour cannot be resolved."""


# ---------------------------------------------------------------------------
# Dictionary of orthogonal frames
# ---------------------------------------------------------------------------


def _primitive_directions(n: int, width: int) -> list[tuple[int, ...]]:
    out = []
    for v in itertools.product(range(-width, width + 1), repeat=n):
        if not any(v):
            continue
        first = next(x for x in v if x != 0)
        if first < 0 or math.gcd(*v) != 1:
            continue
        out.append(v)
    return out


def _frames(n: int, width: int) -> list[tuple[tuple[int, ...], ...]]:
    dirs = _primitive_directions(n, width)
    V = np.array(dirs)
    ortho = (V @ V.T) == 0
    frames = []

    def extend(chosen):
        if len(chosen) == n:
            frames.append(tuple(dirs[i] for i in chosen))
            return
        start = chosen[-1] + 1 if chosen else 0
        for j in range(start, len(dirs)):
            if all(ortho[i, j] for i in chosen):
                extend(chosen + [j])

    extend([])
    return frames


@dataclass(frozen=True)
class StencilDictionary:
    """Orthogonal integer frames with entries bounded by ``width``.

    Directions are primitive and sign-normalised (first nonzero entry
    positive); frames are unordered sets of ``n`` mutually orthogonal ones.
    """

    n: int
    width: int
    frames: tuple

    @classmethod
    def build(cls, n: int, width: int = 2) -> "StencilDictionary":
        return _build_dictionary(int(n), int(width))

    @functools.cached_property
    def directions(self) -> np.ndarray:
        seen = sorted({v for f in self.frames for v in f})
        return np.array(seen, dtype=np.int64).reshape(-1, self.n)

    @functools.cached_property
    def frame_index(self) -> np.ndarray:
        lookup = {tuple(v): k for k, v in enumerate(self.directions.tolist())}
        return np.array([[lookup[v] for v in f] for f in self.frames], dtype=np.int64)

    def is_orthogonal(self) -> bool:
        for f in self.frames:
            F = np.array(f)
            G = F @ F.T
            if np.any(G - np.diag(np.diag(G))):
                return False
        return True

    def contains_axis_frame(self) -> bool:
        axis = frozenset(tuple(int(i == j) for j in range(self.n)) for i in range(self.n))
        return any(frozenset(f) == axis for f in self.frames)

    def closed_under_permutation(self) -> bool:
        keys = {frozenset(f) for f in self.frames}
        for perm in itertools.permutations(range(self.n)):
            for f in self.frames:
                g = frozenset(_canon(tuple(v[p] for p in perm)) for v in f)
                if g not in keys:
                    return False
        return True

    def angular_resolution(self, samples: int = 4000) -> float:
        """Covering angle (radians) of the direction set on the unit sphere."""
        U = sphere_points(self.n, samples)
        D = self.directions / np.linalg.norm(self.directions, axis=1, keepdims=True)
        cos = np.abs(U @ D.T).max(axis=1)
        return float(np.arccos(np.clip(cos.min(), -1.0, 1.0)))


def _canon(v: tuple[int, ...]) -> tuple[int, ...]:
    first = next(x for x in v if x != 0)
    return v if first > 0 else tuple(-x for x in v)


@functools.lru_cache(maxsize=None)
def _build_dictionary(n: int, width: int) -> StencilDictionary:
    if n < 2 or width < 1:
        raise ValueError("need n >= 2 and width >= 1")
    return StencilDictionary(n, width, tuple(_frames(n, width)))


# ---------------------------------------------------------------------------
# Fields and traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Trace:
    """Boundary values: ``inner`` on the domain boundary, ``outer`` on ``|x| = R``."""

    inner: Callable
    outer: Callable


def _trace_max(a: Trace, b: Trace) -> Trace:
    return Trace(lambda x: np.maximum(a.inner(x), b.inner(x)), lambda x: np.maximum(a.outer(x), b.outer(x)))


def _trace_combo(a: Trace, b: Trace, alpha: float) -> Trace:
    return Trace(
        lambda x: alpha * b.inner(x) + (1 - alpha) * a.inner(x),
        lambda x: alpha * b.outer(x) + (1 - alpha) * a.outer(x),
    )


@dataclass(eq=False)
class GridField:
    """Values on the non-Excluded nodes of ``grid`` (box array, ``NaN`` elsewhere)."""

    grid: AnnularGrid
    values: np.ndarray
    trace: Optional[Trace] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        valid = self.grid.valid()
        if not np.all(np.isfinite(self.values[valid])):
            raise ValueError("field must be finite at every non-Excluded node")
        self.values[~valid] = np.nan

    @classmethod
    def from_function(cls, grid: AnnularGrid, f: Callable, trace: Trace | None = None) -> "GridField":
        """Sample ``f`` at every valid node; the trace defaults to ``f`` itself."""
        vals = np.full(grid.shape, np.nan)
        valid = grid.valid()
        X = grid.coords(np.flatnonzero(valid.ravel()))
        vals[valid] = f(X)
        return cls(grid, vals, trace if trace is not None else Trace(f, f))

    @property
    def interior_values(self) -> np.ndarray:
        return self.values.ravel()[self.grid.interior]

    def with_interior(self, u: np.ndarray, trace: Trace | None = None) -> "GridField":
        vals = self.values.copy()
        vals.ravel()[self.grid.interior] = u
        return GridField(self.grid, vals, trace if trace is not None else self.trace)

    def copy(self) -> "GridField":
        return GridField(self.grid, self.values.copy(), self.trace)

    def same_grid(self, other: "GridField") -> bool:
        return self.grid is other.grid

    def __call__(self, node) -> float:
        return float(self.values[tuple(node)])


def fill_boundary(grid: AnnularGrid, interior: np.ndarray, trace: Trace) -> np.ndarray:
    """Box array from Interior values plus boundary-node values from ``trace``.

    InnerBoundary nodes use the grid's linear ghost rule; OuterBoundary nodes
    take ``trace.outer`` at the node itself.
    """
    vals = np.full(grid.shape, np.nan)
    flat = vals.ravel()
    flat[grid.interior] = interior
    rule = grid.inner_rule
    if rule.boundary_nodes.size:
        flat[rule.boundary_nodes] = rule.w_cut * trace.inner(rule.cut_points) + rule.w_node * flat[rule.interior_nodes]
    outer = np.flatnonzero(grid.classes.ravel() == 2)
    if outer.size:
        flat[outer] = trace.outer(grid.coords(outer))
    return vals


# ---------------------------------------------------------------------------
# Stencil table
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Stencil:
    """Neighbour table of every Interior node for every dictionary direction."""

    grid: AnnularGrid
    dictionary: StencilDictionary
    directions: np.ndarray  # (D, n)
    frames: np.ndarray  # (F, n) indices into directions
    dir_len: np.ndarray  # (D,)
    nbr: np.ndarray  # (N, D, 2) int32; >=0 Interior compact index, <0 is -(cut+1)
    cut_theta: np.ndarray
    cut_points: np.ndarray
    cut_outer: np.ndarray  # bool
    cut_box: np.ndarray  # flat box index of the full-step node, -1 if outside the box

    @property
    def n_cuts(self) -> int:
        return int(self.cut_theta.size)

    def cut_values(self, u: GridField) -> tuple[np.ndarray, np.ndarray]:
        """``(theta, value)`` at every cut for field ``u``.

        With a trace the value is the boundary datum at the cut point.  Without
        one the full-step box neighbour is used (``theta = 1``); cuts whose
        neighbour is Excluded come back as ``NaN``.
        """
        if u.trace is not None:
            val = np.empty(self.n_cuts)
            o = self.cut_outer
            if np.any(~o):
                val[~o] = u.trace.inner(self.cut_points[~o])
            if np.any(o):
                val[o] = u.trace.outer(self.cut_points[o])
            return self.cut_theta, val
        flat = u.values.ravel()
        box = np.where(self.cut_box >= 0, self.cut_box, 0)
        val = np.where(self.cut_box >= 0, flat[box], np.nan)
        return np.ones(self.n_cuts), val


def stencil_for(grid: AnnularGrid, d: StencilDictionary) -> Stencil:
    """Build (and cache) the stencil table of ``d`` on ``grid``."""
    return _stencil_cached(grid, d)


@functools.lru_cache(maxsize=8)
def _stencil_cached(grid: AnnularGrid, d: StencilDictionary) -> Stencil:
    if d.n != grid.n:
        raise ValueError("dictionary and grid dimensions differ")
    n, h, R = grid.n, grid.h, grid.R
    V = d.directions
    D = V.shape[0]
    flat_int = grid.interior
    N = flat_int.size
    I = np.stack(np.unravel_index(flat_int, grid.shape), axis=-1)
    X = grid.coords(flat_int)
    m = grid.shape[0]
    compact = grid.compact_index
    nbr = np.empty((N, D, 2), dtype=np.int32)
    thetas, points, outers, boxes = [], [], [], []
    ncut = 0
    for k in range(D):
        for s_idx, s in enumerate((1, -1)):
            step = s * V[k]
            J = I + step
            inbox = np.all((J >= 0) & (J < m), axis=1)
            Jc = np.where(inbox[:, None], J, 0)
            jflat = np.ravel_multi_index(tuple(Jc.T), grid.shape)
            c = np.where(inbox, compact[jflat], -1)
            col = c.astype(np.int64)
            miss = np.flatnonzero(c < 0)
            if miss.size:
                x = X[miss]
                dx = np.broadcast_to(h * step.astype(float), x.shape)
                tD = grid.domain.segment_entry(x, dx)
                a = float(h * h * (step @ step))
                b = x @ (h * step)
                q = np.einsum("ij,ij->i", x, x) - R * R
                tR = (-b + np.sqrt(np.maximum(b * b - a * q, 0.0))) / a
                tR = np.where(tR <= 1.0, tR, np.inf)
                th = np.minimum(np.minimum(tD, tR), 1.0)
                th = np.maximum(th, 1e-10)
                thetas.append(th)
                points.append(x + th[:, None] * dx)
                outers.append(tR <= tD)
                boxes.append(np.where(inbox[miss], jflat[miss], -1))
                col[miss] = -(ncut + np.arange(miss.size) + 1)
                ncut += miss.size
            nbr[:, k, s_idx] = col
    cut_theta = np.concatenate(thetas) if thetas else np.empty(0)
    cut_points = np.concatenate(points) if points else np.empty((0, n))
    cut_outer = np.concatenate(outers) if outers else np.empty(0, bool)
    cut_box = np.concatenate(boxes) if boxes else np.empty(0, np.int64)
    dir_len = np.linalg.norm(V, axis=1)
    return Stencil(grid, d, V, d.frame_index, dir_len, nbr, cut_theta, cut_points, cut_outer, cut_box)


# ---------------------------------------------------------------------------
# Second differences and the operator
# ---------------------------------------------------------------------------


def _neighbour(st: Stencil, u_int, theta, cval, rows, k, s_idx):
    code = st.nbr[rows, k, s_idx].astype(np.int64)
    inside = code >= 0
    cut = np.where(inside, 0, -code - 1)
    val = np.where(inside, u_int[np.where(inside, code, 0)], cval[cut] if cval.size else np.nan)
    frac = np.where(inside, 1.0, theta[cut] if theta.size else 1.0)
    return val, frac


def directional_differences(u: GridField, st: Stencil, rows=None) -> np.ndarray:
    """Second differences along every dictionary direction, shape ``(rows, D)``."""
    if rows is None:
        rows = np.arange(st.nbr.shape[0])
    rows = np.asarray(rows)
    u_int = u.interior_values
    theta, cval = st.cut_values(u)
    u0 = u_int[rows]
    out = np.empty((rows.size, st.directions.shape[0]))
    for k in range(st.directions.shape[0]):
        hk = u.grid.h * st.dir_len[k]
        up, fp = _neighbour(st, u_int, theta, cval, rows, k, 0)
        um, fm = _neighbour(st, u_int, theta, cval, rows, k, 1)
        hp, hm = fp * hk, fm * hk
        ap = 2.0 / (hp * (hp + hm))
        am = 2.0 / (hm * (hp + hm))
        out[:, k] = ap * up + am * um - (ap + am) * u0
    return out


def second_difference(u: GridField, node, e, d: StencilDictionary | None = None) -> float:
    """Second difference of ``u`` at a grid node along integer direction ``e``."""
    grid = u.grid
    e = np.asarray(e, dtype=np.int64)
    g = math.gcd(*[int(x) for x in e])
    if g == 0:
        raise StencilError("zero direction")
    node = tuple(int(i) for i in node)
    flat = grid.flat_index(node)
    row = int(grid.compact_index[flat])
    if row < 0:
        raise StencilError(f"node {node} is not Interior")
    if g == 1 and d is not None:
        st = stencil_for(grid, d)
        key = {tuple(v): k for k, v in enumerate(st.directions.tolist())}
        v = tuple(_canon(tuple(int(x) for x in e)))
        if v in key:
            return float(directional_differences(u, st, [row])[0, key[v]])
    # full steps only, neighbours must be valid box nodes
    vals = []
    for s in (1, -1):
        j = np.array(node) + s * e
        if np.any(j < 0) or np.any(j >= grid.shape[0]) or grid.classes[tuple(j)] == EXCLUDED:
            raise StencilError(f"neighbour {tuple(j)} unresolvable")
        vals.append(u.values[tuple(j)])
    h2 = grid.h**2 * float(e @ e)
    return float((vals[0] + vals[1] - 2.0 * u.values[node]) / h2)


def ma_from_differences(delta: np.ndarray, frames: np.ndarray, h: float, floor: float = DELTA) -> np.ndarray:
    """``min_frames prod max(D_j, floor) - (1/h) sum max(-D_j, 0)`` row-wise."""
    Df = delta[:, frames]  # (rows, F, n)
    val = np.prod(np.maximum(Df, floor), axis=2) - np.sum(np.maximum(-Df, 0.0), axis=2) / h
    return val.min(axis=1)


def ma_operator(u: GridField, d: StencilDictionary, floor: float = DELTA, rows=None, chunk: int = 20000) -> np.ndarray:
    """Discrete MA operator at Interior nodes (compact order, or the given rows)."""
    st = stencil_for(u.grid, d)
    if rows is None:
        rows = np.arange(st.nbr.shape[0])
    rows = np.asarray(rows)
    out = np.empty(rows.size)
    for a in range(0, rows.size, chunk):
        r = rows[a:a + chunk]
        out[a:a + chunk] = ma_from_differences(directional_differences(u, st, r), st.frames, u.grid.h, floor)
    return out


def ma_operator_at(u: GridField, node, d: StencilDictionary, floor: float = DELTA) -> float:
    row = int(u.grid.compact_index[u.grid.flat_index(node)])
    if row < 0:
        raise StencilError(f"node {tuple(node)} is not Interior")
    return float(ma_operator(u, d, floor, rows=[row])[0])


# ---------------------------------------------------------------------------
# Sub/supersolution verdicts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    ok: bool
    margin: float  # worst signed margin; negative beyond -tol means failure
    node: Optional[tuple] = None  # multi-index of the worst node
    kind: str = ""  # which condition produced the worst margin

    def __bool__(self) -> bool:
        return self.ok


def _node_of(grid: AnnularGrid, row: int) -> tuple:
    return grid.multi_index(grid.interior[row])


def _g_interior(grid: AnnularGrid, g: RhsField) -> np.ndarray:
    return np.asarray(g(grid.coords(grid.interior)), dtype=float)


def subsolution_margins(u: GridField, g: RhsField, d: StencilDictionary, chunk: int = 20000):
    """Per-node ``(MA - g, min second difference)`` over Interior nodes."""
    st = stencil_for(u.grid, d)
    N = st.nbr.shape[0]
    gi = _g_interior(u.grid, g)
    op = np.empty(N)
    cvx = np.empty(N)
    for a in range(0, N, chunk):
        r = np.arange(a, min(N, a + chunk))
        delta = directional_differences(u, st, r)
        op[r] = ma_from_differences(delta, st.frames, u.grid.h) - gi[r]
        cvx[r] = delta.min(axis=1)
    return op, cvx


def is_discrete_subsolution(u: GridField, g: RhsField, d: StencilDictionary, tol: float) -> Verdict:
    """``MA_h[u] >= g - tol`` and every dictionary second difference ``>= -tol``.

    Nodes whose stencil cannot be resolved (no trace and an Excluded neighbour)
    count as failures.
    """
    op, cvx = subsolution_margins(u, g, d)
    op = np.where(np.isnan(op), -np.inf, op)
    cvx = np.where(np.isnan(cvx), -np.inf, cvx)
    io, ic = int(np.argmin(op)), int(np.argmin(cvx))
    if op[io] <= cvx[ic]:
        worst, row, kind = op[io], io, "operator"
    else:
        worst, row, kind = cvx[ic], ic, "convexity"
    return Verdict(bool(worst >= -tol), float(worst), _node_of(u.grid, row), kind)


def is_discrete_supersolution(u: GridField, g: RhsField, d: StencilDictionary, tol: float) -> Verdict:
    """``MA_h[u] <= g + tol`` at every Interior node (touching from below)."""
    m = ma_operator(u, d) - _g_interior(u.grid, g)
    m = np.where(np.isnan(m), np.inf, m)
    row = int(np.argmax(m))
    return Verdict(bool(m[row] <= tol), float(-m[row]), _node_of(u.grid, row), "operator")


def comparison_check(u: GridField, v: GridField, g: RhsField, d: StencilDictionary, tol: float) -> Verdict:
    """Check ``u <= v + tol`` everywhere for a subsolution ``u`` and supersolution ``v``.

    Precondition failures come back with ``kind`` starting ``"pre:"``.
    """
    if not u.same_grid(v):
        raise ValueError("fields live on different grids")
    sub = is_discrete_subsolution(u, g, d, tol)
    if not sub.ok:
        return Verdict(False, sub.margin, sub.node, "pre:subsolution")
    sup = is_discrete_supersolution(v, g, d, tol)
    if not sup.ok:
        return Verdict(False, sup.margin, sup.node, "pre:supersolution")
    grid = u.grid
    cls = grid.classes
    diff = v.values - u.values
    bnd = (cls != INTERIOR) & (cls != EXCLUDED)
    if np.any(bnd):
        bflat = np.flatnonzero(bnd.ravel())
        j = int(np.argmin(diff.ravel()[bflat]))
        if diff.ravel()[bflat[j]] < -tol:
            return Verdict(False, float(diff.ravel()[bflat[j]]), grid.multi_index(bflat[j]), "pre:boundary")
    flat = np.flatnonzero(grid.valid().ravel())
    j = int(np.argmin(diff.ravel()[flat]))
    worst = float(diff.ravel()[flat[j]])
    return Verdict(worst >= -tol, worst, grid.multi_index(flat[j]), "comparison")


# ---------------------------------------------------------------------------
# epsilon-upper envelope
# ---------------------------------------------------------------------------


def eps_upper_envelope(u: GridField, eps: float) -> GridField:
    """``x -> max_y u(y) - |y - x|^2 / eps`` over valid nodes ``y``.

    Computed as a lower envelope of parabolas applied to ``-u`` one axis at a
    time (last axis first).  The result carries no trace.
    """
    grid = u.grid
    if not eps > 0:
        raise ValueError("eps must be positive")
    if eps < grid.h**2:
        raise ValueError(f"eps = {eps} below h^2 = {grid.h ** 2}: the -2/eps bound is not resolvable")
    a = grid.h**2 / eps
    F = np.where(grid.valid(), -u.values, np.inf)
    for ax in reversed(range(grid.n)):
        moved = np.ascontiguousarray(np.moveaxis(F, ax, -1))
        lines = moved.reshape(-1, moved.shape[-1])
        _kernels.lower_envelope_lines(lines, a)
        F = np.moveaxis(lines.reshape(moved.shape), -1, ax)
    out = np.where(grid.valid(), -F, np.nan)
    return GridField(grid, out, None)


def brute_force_envelope(u: GridField, eps: float) -> GridField:
    """Direct ``O(N^2)`` envelope, summing the axis terms in the transform's order."""
    grid = u.grid
    a = grid.h**2 / eps
    valid = np.flatnonzero(grid.valid().ravel())
    I = np.stack(np.unravel_index(valid, grid.shape), axis=-1)
    f = -u.values.ravel()[valid]
    out = np.full(grid.shape, np.nan)
    res = np.empty(valid.size)
    for p in range(valid.size):
        acc = f.copy()
        for ax in reversed(range(grid.n)):
            dq = (I[p, ax] - I[:, ax]).astype(float)
            acc = acc + a * dq * dq
        res[p] = -acc.min()
    out.ravel()[valid] = res
    return GridField(grid, out, None)


def box_second_differences(u: GridField, d: StencilDictionary) -> np.ndarray:
    """Full-step second differences at Interior nodes, ``NaN`` where a neighbour is Excluded."""
    grid = u.grid
    flat = grid.interior
    I = np.stack(np.unravel_index(flat, grid.shape), axis=-1)
    m = grid.shape[0]
    V = d.directions
    vals = u.values
    out = np.empty((flat.size, V.shape[0]))
    u0 = vals.ravel()[flat]
    for k, v in enumerate(V):
        acc = -2.0 * u0
        for s in (1, -1):
            J = I + s * v
            ok = np.all((J >= 0) & (J < m), axis=1)
            J = np.where(ok[:, None], J, 0)
            w = vals[tuple(J.T)]
            acc = acc + np.where(ok, w, np.nan)
        out[:, k] = acc / (grid.h**2 * float(v @ v))
    return out


def semiconvexity_margin(u: GridField, eps: float, d: StencilDictionary) -> float:
    """``min (D_v u + 2/eps)`` over resolvable Interior nodes and directions."""
    delta = box_second_differences(u, d)
    return float(np.nanmin(delta) + 2.0 / eps)


# ---------------------------------------------------------------------------
# Radialization
# ---------------------------------------------------------------------------


def radial_bins(grid: AnnularGrid, center=None) -> np.ndarray:
    """Bin key per box node: radius bin of width ``h/2`` combined with the node class."""
    c = np.zeros(grid.n) if center is None else np.asarray(center, float)
    r = np.linalg.norm(grid.coords() - c, axis=1)
    b = np.floor(r / (0.5 * grid.h)).astype(np.int64)
    return (b * 4 + grid.classes.ravel()).reshape(grid.shape)


def radialize(u: GridField, center=None, samples: int = 512) -> GridField:
    """Replace each value by the maximum of ``u`` over its radial bin.

    Bins have width ``h/2`` and never mix node classes.  The trace becomes the
    sampled sup of the original trace over spheres about ``center``.
    """
    grid = u.grid
    c = np.zeros(grid.n) if center is None else np.asarray(center, float)
    if not (grid.domain.is_centered_ball() and np.allclose(c, grid.domain.center)):
        raise ValueError("radialize needs a ball domain centred at the given point")
    keys = radial_bins(grid, c).ravel()
    valid = grid.valid().ravel()
    flat = np.flatnonzero(valid)
    k = keys[flat]
    uniq, inv = np.unique(k, return_inverse=True)
    mx = np.full(uniq.size, -np.inf)
    np.maximum.at(mx, inv, u.values.ravel()[flat])
    out = np.full(grid.shape, np.nan)
    out.ravel()[flat] = mx[inv]
    trace = None
    if u.trace is not None:
        dirs = sphere_points(grid.n, samples)
        trace = Trace(_sphere_sup(u.trace.inner, c, dirs), _sphere_sup(u.trace.outer, c, dirs))
    return GridField(grid, out, trace)


def _sphere_sup(f: Callable, c: np.ndarray, dirs: np.ndarray) -> Callable:
    cache: dict[float, float] = {}

    def sup(x):
        x = np.asarray(x, float)
        r = np.round(np.linalg.norm(x - c, axis=-1), 12)
        uniq, inv = np.unique(r.ravel(), return_inverse=True)
        vals = np.empty(uniq.size)
        for i, rr in enumerate(uniq):
            if rr not in cache:
                cache[rr] = float(np.max(f(c + rr * dirs)))
            vals[i] = cache[rr]
        return vals[inv].reshape(r.shape)

    return sup


# ---------------------------------------------------------------------------
# Snapshot and CSV I/O
# ---------------------------------------------------------------------------


def _atomic_write(path, data: bytes) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def snapshot_bytes(u: GridField) -> bytes:
    g = u.grid
    head = MAGIC + struct.pack("<q", g.n) + struct.pack(f"<{g.n}q", *g.shape) + struct.pack("<dd", g.h, g.R)
    return head + np.ascontiguousarray(u.values, dtype="<f8").tobytes()


def write_snapshot(path, u: GridField) -> None:
    """Write the MAEXT1 snapshot (``NaN`` marks Excluded nodes)."""
    _atomic_write(path, snapshot_bytes(u))


@dataclass(frozen=True)
class Snapshot:
    n: int
    shape: tuple
    h: float
    R: float
    values: np.ndarray = field(repr=False)


def read_snapshot(path) -> Snapshot:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:6] != MAGIC:
        raise ValueError(f"{path}: not an MAEXT1 snapshot")
    off = 6
    (n,) = struct.unpack_from("<q", data, off)
    off += 8
    shape = struct.unpack_from(f"<{n}q", data, off)
    off += 8 * n
    h, R = struct.unpack_from("<dd", data, off)
    off += 16
    vals = np.frombuffer(data, dtype="<f8", offset=off)
    if vals.size != int(np.prod(shape)):
        raise ValueError(f"{path}: truncated snapshot")
    return Snapshot(int(n), tuple(int(s) for s in shape), float(h), float(R), vals.reshape(shape).copy())


def field_from_snapshot(snap: Snapshot, grid: AnnularGrid, trace: Trace | None = None) -> GridField:
    if snap.shape != grid.shape or abs(snap.h - grid.h) > 1e-15 or abs(snap.R - grid.R) > 1e-15:
        raise ValueError("snapshot does not match the grid")
    return GridField(grid, snap.values, trace)


def field_csv(u: GridField) -> str:
    grid = u.grid
    flat = np.flatnonzero(grid.valid().ravel())
    X = grid.coords(flat)
    v = u.values.ravel()[flat]
    head = ",".join([f"x{i + 1}" for i in range(grid.n)] + ["value"])
    rows = [",".join("%.17g" % t for t in (*x, val)) for x, val in zip(X, v)]
    return "\n".join([head, *rows]) + "\n"


def export_csv(path, u: GridField) -> None:
    _atomic_write(path, field_csv(u).encode())
