"""Domains, asymptotes, boundary data, right-hand sides and annular grids.

Everything here is immutable after construction.  Points are arrays whose last
axis has length ``n``; all evaluators broadcast over the leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

INTERIOR = 0
INNER_BOUNDARY = 1
OUTER_BOUNDARY = 2
EXCLUDED = 3

CLASS_NAMES = {
    INTERIOR: "Interior",
    INNER_BOUNDARY: "InnerBoundary",
    OUTER_BOUNDARY: "OuterBoundary",
    EXCLUDED: "Excluded",
}


class GeometryError(ValueError):
    pass


def _as_points(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (n,):
        raise GeometryError(f"expected points of dimension {n}, got shape {x.shape}")
    return x


def _check_dimension(n: int, engineering: bool) -> None:
    if n >= 3:
        return
    if n == 2 and engineering:
        return
    raise GeometryError(
        f"dimension {n} not allowed (n >= 3, or n = 2 with engineering=True)"
    )


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Domain:
    """Closed quadric body ``{x : (x - c)' P (x - c) <= 1}`` with ``P`` SPD."""

    center: np.ndarray
    shape_matrix: np.ndarray
    engineering: bool = False

    @property
    def n(self) -> int:
        return int(self.center.shape[0])

    def quadric(self, x) -> np.ndarray:
        d = _as_points(x, self.n) - self.center
        return np.einsum("...i,ij,...j->...", d, self.shape_matrix, d)

    def contains(self, x) -> np.ndarray:
        return self.quadric(x) <= 1.0

    def segment_entry(self, x, dx) -> np.ndarray:
        """Smallest ``t`` in ``[0, 1]`` with ``x + t dx`` in the closed body, else ``inf``."""
        x = _as_points(x, self.n)
        dx = np.broadcast_to(np.asarray(dx, dtype=float), x.shape)
        P = self.shape_matrix
        d = x - self.center
        a = np.einsum("...i,ij,...j->...", dx, P, dx)
        b = np.einsum("...i,ij,...j->...", d, P, dx)
        q = np.einsum("...i,ij,...j->...", d, P, d) - 1.0
        disc = b * b - a * q
        out = np.full(a.shape, np.inf)
        ok = disc >= 0.0
        with np.errstate(invalid="ignore", divide="ignore"):
            root = np.sqrt(np.where(ok, disc, 0.0))
            # numerically stable smaller root of a t^2 + 2 b t + q
            t1 = np.where(b < 0, q / (-b + root), (-b - root) / a)
        t1 = np.where(q <= 0.0, 0.0, t1)
        hit = ok & (t1 >= 0.0) & (t1 <= 1.0)
        out[hit] = t1[hit]
        return out

    def project(self, x) -> np.ndarray:
        """Central projection of points onto the boundary (along rays from the centre)."""
        d = _as_points(x, self.n) - self.center
        q = np.einsum("...i,ij,...j->...", d, self.shape_matrix, d)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(q > 0, 1.0 / np.sqrt(q), 0.0)
        return self.center + d * scale[..., None]

    @property
    def semi_axes(self) -> np.ndarray:
        w = np.linalg.eigvalsh(self.shape_matrix)
        return 1.0 / np.sqrt(w)

    def circumradius(self) -> float:
        """Radius of the smallest origin-centred ball containing the body (upper bound)."""
        return float(np.linalg.norm(self.center) + self.semi_axes.max())

    def circumscribed_ball(self) -> tuple[np.ndarray, float]:
        """A ball containing the body and touching its boundary."""
        return self.center.copy(), float(self.semi_axes.max())

    def boundary_samples(self, count: int = 2048) -> np.ndarray:
        dirs = sphere_points(self.n, count)
        return self.project(self.center + dirs)

    def is_centered_ball(self, tol: float = 1e-12) -> bool:
        ax = self.semi_axes
        return bool(np.all(np.abs(self.center) <= tol) and ax.max() - ax.min() <= tol * ax.max())


class Ball(Domain):
    def __init__(self, center, radius: float, engineering: bool = False):
        center = np.array(center, dtype=float)
        if center.ndim != 1:
            raise GeometryError("center must be a vector")
        _check_dimension(center.shape[0], engineering)
        if not radius > 0:
            raise GeometryError("radius must be positive")
        P = np.eye(center.shape[0]) / float(radius) ** 2
        super().__init__(center, P, engineering)
        object.__setattr__(self, "radius", float(radius))

    def __repr__(self) -> str:
        return f"Ball(center={self.center.tolist()}, radius={self.radius})"


class Ellipsoid(Domain):
    """Ellipsoid with semi-axes ``semi_axes`` along the columns of ``axes``."""

    def __init__(self, center, semi_axes, axes=None, engineering: bool = False):
        center = np.array(center, dtype=float)
        semi = np.array(semi_axes, dtype=float)
        n = center.shape[0]
        _check_dimension(n, engineering)
        if semi.shape != (n,):
            raise GeometryError("need one semi-axis per dimension")
        if np.any(semi <= 0) or not np.all(np.isfinite(semi)):
            raise GeometryError("semi-axes must be strictly positive and finite")
        Q = np.eye(n) if axes is None else np.array(axes, dtype=float)
        if Q.shape != (n, n) or not np.allclose(Q.T @ Q, np.eye(n), atol=1e-12):
            raise GeometryError("axes must be an orthogonal matrix")
        P = Q @ np.diag(semi**-2) @ Q.T
        super().__init__(center, 0.5 * (P + P.T), engineering)
        object.__setattr__(self, "axes", Q)
        object.__setattr__(self, "semi", semi)

    def __repr__(self) -> str:
        return f"Ellipsoid(center={self.center.tolist()}, semi_axes={self.semi.tolist()})"


def domain_from_shape(center, P, engineering: bool = False) -> Domain:
    """Ball if the shape matrix is isotropic, otherwise an Ellipsoid."""
    P = 0.5 * (np.asarray(P, float) + np.asarray(P, float).T)
    w, Q = np.linalg.eigh(P)
    if w.max() - w.min() <= 1e-12 * w.max():
        return Ball(center, 1.0 / np.sqrt(w.mean()), engineering)
    return Ellipsoid(center, 1.0 / np.sqrt(w), Q, engineering)


def sphere_points(n: int, count: int) -> np.ndarray:
    """Deterministic, roughly uniform unit vectors."""
    if n == 2:
        t = 2 * np.pi * (np.arange(count) + 0.5) / count
        return np.stack([np.cos(t), np.sin(t)], axis=-1)
    if n == 3:
        k = np.arange(count) + 0.5
        z = 1 - 2 * k / count
        phi = np.pi * (1 + 5**0.5) * k
        rho = np.sqrt(1 - z * z)
        return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)
    rng = np.random.default_rng(12345)
    v = rng.standard_normal((count, n))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Asymptote
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QuadraticAsymptote:
    """``1/2 x'Ax + b.x + c`` with ``A`` symmetric positive definite, ``det A = 1``."""

    A: np.ndarray
    b: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        b = np.array(self.b, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n) or b.shape != (n,):
            raise GeometryError("A must be n x n and b an n-vector")
        if not np.allclose(A, A.T, atol=1e-12, rtol=0):
            raise GeometryError("A must be symmetric")
        A = 0.5 * (A + A.T)
        if np.linalg.eigvalsh(A).min() <= 0:
            raise GeometryError("A must be positive definite")
        if abs(np.linalg.det(A) - 1.0) > 1e-12:
            raise GeometryError(f"det A = {np.linalg.det(A)!r}, expected 1 (use QuadraticAsymptote.normalized)")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))

    @classmethod
    def normalized(cls, A, b, c=0.0) -> "QuadraticAsymptote":
        """Rescale ``A`` to unit determinant."""
        A = np.asarray(A, dtype=float)
        det = np.linalg.det(A)
        if det <= 0:
            raise GeometryError("A must be positive definite")
        return cls(A * det ** (-1.0 / A.shape[0]), b, c)

    @classmethod
    def identity(cls, n: int, c: float = 0.0) -> "QuadraticAsymptote":
        return cls(np.eye(n), np.zeros(n), c)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def with_c(self, c: float) -> "QuadraticAsymptote":
        return QuadraticAsymptote(self.A, self.b, c)

    def is_normalized(self, tol: float = 1e-12) -> bool:
        return bool(np.abs(self.A - np.eye(self.n)).max() <= tol and np.abs(self.b).max() <= tol)

    def __call__(self, x) -> np.ndarray:
        return quadratic_eval(self, x)


def quadratic_eval(Q: QuadraticAsymptote, x) -> np.ndarray:
    x = _as_points(x, Q.n)
    quad = 0.5 * np.einsum("...i,ij,...j->...", x, Q.A, x)
    return quad + x @ Q.b + Q.c


# ---------------------------------------------------------------------------
# Boundary data phi
# ---------------------------------------------------------------------------


class BoundaryData:
    """Callable closed-form boundary datum; ``phi(points) -> values``."""

    kind = "abstract"

    def __call__(self, x) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Constant(BoundaryData):
    value: float
    kind = "constant"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], float(self.value))


@dataclass(frozen=True, eq=False)
class Affine(BoundaryData):
    p: np.ndarray
    q: float = 0.0
    kind = "affine"

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ np.asarray(self.p, dtype=float) + self.q


@dataclass(frozen=True, eq=False)
class QuadraticTrace(BoundaryData):
    asymptote: QuadraticAsymptote
    kind = "quadratic"

    def __call__(self, x):
        return quadratic_eval(self.asymptote, x)


@dataclass(frozen=True, eq=False)
class SphericalHarmonic(BoundaryData):
    """``c0 + c1.w + w'C2 w`` with ``w`` the unit direction from ``center``."""

    center: np.ndarray
    c0: float
    c1: np.ndarray
    c2: np.ndarray
    kind = "harmonic"

    def __call__(self, x):
        d = np.asarray(x, dtype=float) - np.asarray(self.center, dtype=float)
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        w = d / np.where(r > 0, r, 1.0)
        c2 = np.asarray(self.c2, dtype=float)
        return self.c0 + w @ np.asarray(self.c1, dtype=float) + np.einsum("...i,ij,...j->...", w, c2, w)


@dataclass(frozen=True, eq=False)
class PulledBack(BoundaryData):
    """``y -> base(T y) - shift.y``; what boundary data become under normalization."""

    base: Callable
    T: np.ndarray
    shift: np.ndarray
    kind = "pulled_back"

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return self.base(y @ self.T.T) - y @ self.shift


# ---------------------------------------------------------------------------
# Right-hand side g
# ---------------------------------------------------------------------------


class RhsField:
    kind = "abstract"

    def __call__(self, x) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def profile(self, r) -> np.ndarray:
        """Radial profile ``g(|x| = r)``; only for radial fields."""
        raise GeometryError(f"{type(self).__name__} is not radial")

    @property
    def radial(self) -> bool:
        return False

    def sphere_sup(self, center, radius) -> np.ndarray:
        """Upper bound for ``sup g`` over the sphere ``|x - center| = radius`` (vectorized in radius)."""
        raise GeometryError(f"{type(self).__name__} lacks a radial majorant")

    def excess_profile(self, r) -> np.ndarray:
        """``profile(r) - 1``; subclasses avoid the cancellation where ``g`` is close to 1."""
        return self.profile(r) - 1.0

    def sphere_excess(self, center, radius) -> np.ndarray:
        """``sphere_sup - 1``, accurate when the sup is close to 1."""
        return self.sphere_sup(center, radius) - 1.0


@dataclass(frozen=True, eq=False)
class One(RhsField):
    kind = "one"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1])

    def profile(self, r):
        return np.ones_like(np.asarray(r, dtype=float))

    @property
    def radial(self) -> bool:
        return True

    def sphere_sup(self, center, radius):
        return np.ones_like(np.asarray(radius, dtype=float))

    def excess_profile(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    def sphere_excess(self, center, radius):
        return np.zeros_like(np.asarray(radius, dtype=float))


@dataclass(frozen=True, eq=False)
class RadialPerturb(RhsField):
    """``max(g_min, 1 + a (1 + |x|^2)^(-beta/2))``."""

    a: float
    beta: float = 3.0
    g_min: float = 0.1
    kind = "radial_perturb"

    def __post_init__(self):
        if not self.beta > 2:
            raise GeometryError("decay exponent beta must exceed 2")
        if not 0 < self.g_min <= 1:
            raise GeometryError("floor g_min must lie in (0, 1]")

    def profile(self, r):
        r = np.asarray(r, dtype=float)
        return np.maximum(self.g_min, 1.0 + self.a * (1.0 + r * r) ** (-0.5 * self.beta))

    def __call__(self, x):
        return self.profile(np.linalg.norm(np.asarray(x, dtype=float), axis=-1))

    @property
    def radial(self) -> bool:
        return True

    @property
    def g_max(self) -> float:
        return max(1.0, 1.0 + self.a)

    def sphere_sup(self, center, radius):
        # the profile is monotone in |x|, so the sup sits at the nearest or farthest point
        radius = np.asarray(radius, dtype=float)
        cn = float(np.linalg.norm(center))
        lo = np.abs(radius - cn)
        hi = radius + cn
        return np.maximum(self.profile(lo), self.profile(hi))

    def excess_profile(self, r):
        r = np.asarray(r, dtype=float)
        return np.maximum(self.g_min - 1.0, self.a * (1.0 + r * r) ** (-0.5 * self.beta))

    def sphere_excess(self, center, radius):
        radius = np.asarray(radius, dtype=float)
        cn = float(np.linalg.norm(center))
        return np.maximum(self.excess_profile(np.abs(radius - cn)), self.excess_profile(radius + cn))


@dataclass(frozen=True, eq=False)
class PulledBackRhs(RhsField):
    base: RhsField
    T: np.ndarray
    kind = "pulled_back"

    def __call__(self, y):
        return self.base(np.asarray(y, dtype=float) @ self.T.T)

    def _radii(self, center, radius):
        if not self.base.radial:
            raise GeometryError("base field lacks a radial majorant")
        radius = np.asarray(radius, dtype=float)
        s = np.linalg.svd(self.T, compute_uv=False)
        tc = float(np.linalg.norm(self.T @ np.asarray(center, dtype=float)))
        return np.maximum(0.0, radius * s.min() - tc), radius * s.max() + tc

    # the radial profiles in use are monotone, so the sup over the image
    # ellipsoid's radial range sits at one of its ends
    def sphere_sup(self, center, radius):
        lo, hi = self._radii(center, radius)
        return np.maximum(self.base.profile(lo), self.base.profile(hi))

    def sphere_excess(self, center, radius):
        lo, hi = self._radii(center, radius)
        return np.maximum(self.base.excess_profile(lo), self.base.excess_profile(hi))


# ---------------------------------------------------------------------------
# Problem specification and normalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    domain: Domain
    phi: BoundaryData
    g: RhsField
    asymptote: QuadraticAsymptote

    def __post_init__(self):
        if self.asymptote.n != self.domain.n:
            raise GeometryError("asymptote and domain dimensions differ")

    @property
    def n(self) -> int:
        return self.domain.n

    def with_c(self, c: float) -> "ProblemSpec":
        return ProblemSpec(self.domain, self.phi, self.g, self.asymptote.with_c(c))

    def with_phi(self, phi: BoundaryData) -> "ProblemSpec":
        return ProblemSpec(self.domain, phi, self.g, self.asymptote)

    def with_g(self, g: RhsField) -> "ProblemSpec":
        return ProblemSpec(self.domain, self.phi, g, self.asymptote)


@dataclass(frozen=True, eq=False)
class AffineMap:
    """``x = T y``; a solution maps as ``u_hat(y) = u(T y) - linear.y``."""

    T: np.ndarray
    linear: np.ndarray

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.T))

    def forward(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float) @ self.T.T

    def inverse(self, x) -> np.ndarray:
        return np.linalg.solve(self.T, np.asarray(x, dtype=float).T).T

    def pull(self, u: Callable) -> Callable:
        """Normalized-frame version of a function given in original coordinates."""
        return lambda y: u(self.forward(y)) - np.asarray(y, dtype=float) @ self.linear

    def push(self, u_hat: Callable) -> Callable:
        """Original-frame version of a normalized-frame function."""
        def u(x):
            y = self.inverse(x)
            return u_hat(y) + y @ self.linear
        return u


def normalize_affine(p: ProblemSpec) -> tuple[ProblemSpec, AffineMap]:
    """Map the problem to ``A = I``, ``b = 0`` with a volume-preserving symmetric map."""
    Q = p.asymptote
    n = p.n
    if Q.is_normalized(tol=0.0):
        return p, AffineMap(np.eye(n), np.zeros(n))
    w, V = np.linalg.eigh(Q.A)
    if w.min() <= 0:
        raise GeometryError("A must be positive definite")
    T = V @ np.diag(w**-0.5) @ V.T
    T = T * np.linalg.det(T) ** (-1.0 / n)
    T = 0.5 * (T + T.T)
    shift = T @ Q.b
    D = p.domain
    P_hat = T @ D.shape_matrix @ T
    domain = domain_from_shape(np.linalg.solve(T, D.center), P_hat, D.engineering)
    phi = PulledBack(p.phi, T, shift)
    g = p.g if isinstance(p.g, One) else PulledBackRhs(p.g, T)
    spec = ProblemSpec(domain, phi, g, QuadraticAsymptote.identity(n, Q.c))
    return spec, AffineMap(T, shift)


# ---------------------------------------------------------------------------
# Annular grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InnerRule:
    """Ghost values for InnerBoundary nodes: ``u(b) = w_cut*phi(cut) + w_node*u(node)``.

    One rule per InnerBoundary node, built along an axis toward an Interior
    neighbour; ``w_cut + w_node == 1``.
    """

    boundary_nodes: np.ndarray  # flat indices
    interior_nodes: np.ndarray  # flat indices of the axis neighbour
    theta: np.ndarray  # neighbour-to-cut distance as a fraction of h
    cut_points: np.ndarray
    w_cut: np.ndarray
    w_node: np.ndarray


@dataclass(frozen=True, eq=False)
class AnnularGrid:
    domain: Domain
    h: float
    R: float
    half_width: int
    classes: np.ndarray  # n-D int8 array over the box
    inner_rule: InnerRule
    _flat_interior: np.ndarray = field(repr=False)
    _compact: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def shape(self) -> tuple[int, ...]:
        return self.classes.shape

    @property
    def interior(self) -> np.ndarray:
        """Flat box indices of the Interior nodes (lexicographic order)."""
        return self._flat_interior

    @property
    def compact_index(self) -> np.ndarray:
        """Flat box index -> position among Interior nodes, ``-1`` elsewhere."""
        return self._compact

    def count(self, cls: int) -> int:
        return int(np.count_nonzero(self.classes == cls))

    def coords(self, flat=None) -> np.ndarray:
        """Coordinates of nodes given by flat indices (all nodes by default)."""
        if flat is None:
            flat = np.arange(self.classes.size)
        idx = np.stack(np.unravel_index(flat, self.shape), axis=-1)
        return (idx - self.half_width) * self.h

    def multi_index(self, flat) -> tuple:
        return tuple(int(i) for i in np.unravel_index(int(flat), self.shape))

    def flat_index(self, node) -> int:
        return int(np.ravel_multi_index(tuple(node), self.shape))

    def node_at(self, point) -> tuple:
        idx = np.rint(np.asarray(point, float) / self.h).astype(int) + self.half_width
        return tuple(int(i) for i in idx)

    def valid(self) -> np.ndarray:
        return self.classes != EXCLUDED


def build_grid(d: Domain, R: float, h: float) -> AnnularGrid:
    """Cartesian grid on ``B_R`` minus the closed domain, with cut-cell ghost rules."""
    n = d.n
    h = float(h)
    R = float(R)
    if not h > 0:
        raise GeometryError("spacing must be positive")
    rc = d.circumradius()
    if not R > rc + 2 * h:
        raise GeometryError(f"R = {R} must exceed circumscribed radius {rc:.6g} + 2h")
    # thinnest radial gap between the body and the truncation sphere, in layers of h
    if (R - rc) / h < 3:
        raise GeometryError("h too coarse: fewer than 3 interior layers between the domain and |x| = R")
    M = int(np.ceil(R / h)) + 1
    m = 2 * M + 1
    shape = (m,) * n
    axes = [(np.arange(m) - M) * h] * n
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    r = np.linalg.norm(X, axis=-1)
    inside = d.contains(X)
    interior = (~inside) & (r < R)

    classes = np.full(shape, EXCLUDED, dtype=np.int8)
    classes[interior] = INTERIOR
    near = np.zeros(shape, dtype=bool)
    for ax in range(n):
        for s in (1, -1):
            near |= np.roll(interior, s, axis=ax)
    classes[near & inside] = INNER_BOUNDARY
    classes[near & (~inside) & (r >= R)] = OUTER_BOUNDARY

    flat_int = np.flatnonzero(classes.ravel() == INTERIOR)
    compact = np.full(classes.size, -1, dtype=np.int64)
    compact[flat_int] = np.arange(flat_int.size)

    rule = _inner_rule(d, classes, X, h)
    return AnnularGrid(d, h, R, M, classes, rule, flat_int, compact)


def _inner_rule(d: Domain, classes: np.ndarray, X: np.ndarray, h: float) -> InnerRule:
    n = classes.ndim
    flat_cls = classes.ravel()
    bnodes = np.flatnonzero(flat_cls == INNER_BOUNDARY)
    Xf = X.reshape(-1, n)
    strides = np.array([int(np.prod(classes.shape[ax + 1:])) for ax in range(n)])
    chosen = np.full(bnodes.size, -1, dtype=np.int64)
    for ax in range(n):
        for s in (1, -1):
            nb = bnodes + s * strides[ax]
            ok = (nb >= 0) & (nb < flat_cls.size)
            nb = np.where(ok, nb, 0)
            good = ok & (flat_cls[nb] == INTERIOR) & (chosen < 0)
            chosen[good] = nb[good]
    x_int = Xf[chosen]
    x_b = Xf[bnodes]
    t = d.segment_entry(x_int, x_b - x_int)
    t = np.where(np.isfinite(t), t, 1.0)
    t = np.clip(t, 1e-12, 1.0)
    cut = x_int + t[:, None] * (x_b - x_int)
    # linear extension through (0, u_node) and (t, phi_cut) evaluated at 1
    w_cut = 1.0 / t
    w_node = 1.0 - w_cut
    return InnerRule(bnodes, chosen, t, cut, w_cut, w_node)
