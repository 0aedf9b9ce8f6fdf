"""Concave symmetric eigenvalue operators on convex cones.

Three operator forms, all homogeneous of degree one:

* ``DetRoot``       ``f = (l_1 ... l_n)^(1/n)``           on ``Gamma_n``
* ``SigmaKRoot``    ``f = sigma_k^(1/k)``                 on ``Gamma_k``
* ``SigmaQuotient`` ``f = (sigma_k / sigma_l)^(1/(k-l))`` on ``Gamma_k``

with ``Gamma_k = {l : sigma_j(l) > 0 for j = 1..k}``.  Everything is
vectorized over leading batch axes.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .discrete_op import GridField
from .geometry import EXCLUDED


class ConeError(ValueError):
    pass


class Membership(str, enum.Enum):
    IN = "InGamma"
    ON_BOUNDARY = "OnBoundary"
    OUTSIDE = "Outside"


@dataclass(frozen=True)
class EigenTuple:
    """Eigenvalues sorted in descending order."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise ConeError("eigenvalues must be finite")
        object.__setattr__(self, "values", np.sort(v)[::-1].copy())

    @property
    def n(self) -> int:
        return int(self.values.size)


def _lam(lam) -> np.ndarray:
    return lam.values if isinstance(lam, EigenTuple) else np.asarray(lam, dtype=float)


def _canonical(lam) -> np.ndarray:
    # descending order makes every symmetric function bitwise permutation invariant
    return -np.sort(-_lam(lam), axis=-1)


# ---------------------------------------------------------------------------
# Elementary symmetric polynomials
# ---------------------------------------------------------------------------


def sigma_all(lam) -> np.ndarray:
    """``[sigma_0, ..., sigma_n]`` along a new last axis.

    Built by multiplying out ``prod_i (1 + l_i t)`` one factor at a time,
    largest eigenvalue first.
    """
    lam = _canonical(lam)
    n = lam.shape[-1]
    e = np.zeros(lam.shape[:-1] + (n + 1,))
    e[..., 0] = 1.0
    for i in range(n):
        li = lam[..., i]
        for j in range(i + 1, 0, -1):
            e[..., j] = e[..., j] + li * e[..., j - 1]
    return e


def sigma_k(lam, k: int):
    n = _lam(lam).shape[-1]
    if not 0 <= k <= n:
        raise ConeError(f"k = {k} outside [0, {n}]")
    out = sigma_all(lam)[..., k]
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConeOperator:
    form: str  # "det", "sigma_k" or "quotient"
    n: int
    k: int
    l: int = 0
    level: float = 1.0

    def __post_init__(self):
        if self.form not in ("det", "sigma_k", "quotient"):
            raise ConeError(f"unknown form {self.form!r}")
        if self.n < 1 or not 1 <= self.k <= self.n:
            raise ConeError("need 1 <= k <= n")
        if self.form == "det" and self.k != self.n:
            raise ConeError("DetRoot uses k = n")
        if self.form == "quotient" and not 1 <= self.l < self.k:
            raise ConeError("SigmaQuotient needs 1 <= l < k")

    @classmethod
    def det_root(cls, n: int, level: float = 1.0) -> "ConeOperator":
        return cls("det", n, n, 0, level)

    @classmethod
    def sigma_k_root(cls, k: int, n: int, level: float = 1.0) -> "ConeOperator":
        return cls("sigma_k", n, k, 0, level)

    @classmethod
    def sigma_quotient(cls, k: int, l: int, n: int, level: float = 1.0) -> "ConeOperator":
        return cls("quotient", n, k, l, level)

    @property
    def cone_index(self) -> int:
        return self.k

    def with_level(self, level: float) -> "ConeOperator":
        return ConeOperator(self.form, self.n, self.k, self.l, float(level))

    def __str__(self) -> str:
        if self.form == "det":
            return f"DetRoot(n={self.n})"
        if self.form == "sigma_k":
            return f"SigmaKRoot(k={self.k}, n={self.n})"
        return f"SigmaQuotient(k={self.k}, l={self.l}, n={self.n})"


def cone_margin(op: ConeOperator, lam) -> np.ndarray:
    """``min_{j <= k} sigma_j / scale^j`` with ``scale = max |l_i|`` (scale-free)."""
    lam = _lam(lam)
    s = np.max(np.abs(lam), axis=-1)
    s = np.where(s > 0, s, 1.0)
    # sigma_j(lam / s) = sigma_j(lam) / s^j without overflow or underflow
    e = sigma_all(lam / s[..., None])
    return np.min(e[..., 1:op.k + 1], axis=-1)


def cone_membership(op: ConeOperator, lam, tol: float = 1e-12) -> Membership:
    m = float(cone_margin(op, lam))
    if m > tol:
        return Membership.IN
    if m >= -tol:
        return Membership.ON_BOUNDARY
    return Membership.OUTSIDE


def f_values(op: ConeOperator, lam, tol: float = 1e-12) -> np.ndarray:
    """Batched ``f``: ``NaN`` outside the closed cone, ``0`` on its boundary."""
    lam = _canonical(lam)
    e = sigma_all(lam)
    margin = cone_margin(op, lam)
    with np.errstate(invalid="ignore", divide="ignore"):
        if op.form == "det":
            val = np.prod(np.maximum(lam, 0.0), axis=-1) ** (1.0 / op.n)
            val = np.where(np.all(lam >= 0, axis=-1), val, np.maximum(e[..., op.n], 0.0) ** (1.0 / op.n))
        elif op.form == "sigma_k":
            val = np.maximum(e[..., op.k], 0.0) ** (1.0 / op.k)
        else:
            sk = np.maximum(e[..., op.k], 0.0)
            sl = e[..., op.l]
            val = np.where(sk > 0, (sk / np.where(sl > 0, sl, 1.0)) ** (1.0 / (op.k - op.l)), 0.0)
    val = np.where(margin > tol, val, 0.0)
    return np.where(margin < -tol, np.nan, val)


def f_eval(op: ConeOperator, lam, tol: float = 1e-12) -> float:
    """``f(lam)`` for ``lam`` in the closed cone (``0`` on the boundary)."""
    lam = _lam(lam)
    if lam.shape[-1] != op.n:
        raise ConeError(f"expected {op.n} eigenvalues")
    if cone_membership(op, lam, tol) is Membership.OUTSIDE:
        raise ConeError(f"{lam} lies outside the cone of {op}")
    return float(f_values(op, lam, tol))


# ---------------------------------------------------------------------------
# Symmetric eigenvalues (cyclic Jacobi)
# ---------------------------------------------------------------------------


def jacobi_eigh(M, tol: float = 1e-13, max_sweeps: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi on a batch of symmetric matrices.

    Returns ``(eigenvalues, V)`` with ``M ~ V diag(eigenvalues) V'``; eigenvalues
    sorted descending.  Iterates until the off-diagonal Frobenius norm is at
    most ``tol * ||M||_F`` for every matrix.
    """
    A = np.array(M, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ConeError("need square matrices")
    scale = np.linalg.norm(A, axis=(-2, -1))
    if np.any(np.abs(A - np.swapaxes(A, -1, -2)) > 1e-12 * np.maximum(scale, 1.0)[..., None, None]):
        raise ConeError("matrix is not symmetric")
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    n = A.shape[-1]
    V = np.broadcast_to(np.eye(n), A.shape).copy()
    iu = np.triu_indices(n, 1)
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(A[..., iu[0], iu[1]] ** 2, axis=-1))
        if np.all(off <= tol * scale):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[..., p, q]
                # entries far below the stopping threshold are left alone
                active = np.abs(apq) > 1e-18 * scale
                safe = np.where(active, apq, 1.0)
                tau = (A[..., q, q] - A[..., p, p]) / (2.0 * safe)
                t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
                c = np.where(active, 1.0 / np.sqrt(1.0 + t * t), 1.0)
                s = np.where(active, t * c, 0.0)
                # A <- J' A J with J the (p, q) rotation
                Ap = A[..., :, p].copy()
                Aq = A[..., :, q].copy()
                A[..., :, p] = c[..., None] * Ap - s[..., None] * Aq
                A[..., :, q] = s[..., None] * Ap + c[..., None] * Aq
                Ap = A[..., p, :].copy()
                Aq = A[..., q, :].copy()
                A[..., p, :] = c[..., None] * Ap - s[..., None] * Aq
                A[..., q, :] = s[..., None] * Ap + c[..., None] * Aq
                Vp = V[..., :, p].copy()
                Vq = V[..., :, q].copy()
                V[..., :, p] = c[..., None] * Vp - s[..., None] * Vq
                V[..., :, q] = s[..., None] * Vp + c[..., None] * Vq
    w = np.diagonal(A, axis1=-2, axis2=-1)
    order = np.argsort(-w, axis=-1)
    w = np.take_along_axis(w, order, axis=-1)
    V = np.take_along_axis(V, order[..., None, :], axis=-1)
    return w, V


def eigenvalues_sym(M) -> EigenTuple:
    w, _ = jacobi_eigh(np.asarray(M, dtype=float))
    return EigenTuple(w)


# ---------------------------------------------------------------------------
# Matrix-level and grid-level checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComboVerdict:
    ok: bool
    margin: float

    def __bool__(self) -> bool:
        return self.ok


def combo_level_check(op: ConeOperator, M1, M2, alpha: float, level: float | None = None, tol: float = 1e-10) -> ComboVerdict:
    """Check ``f(lam(alpha M1 + (1 - alpha) M2)) >= level - tol``.

    Both endpoints must already satisfy ``f >= level`` inside the closed cone.
    """
    level = op.level if level is None else float(level)
    if not 0.0 <= alpha <= 1.0:
        raise ConeError("alpha outside [0, 1]")
    M1 = np.asarray(M1, dtype=float)
    M2 = np.asarray(M2, dtype=float)
    for name, M in (("M1", M1), ("M2", M2)):
        lam = eigenvalues_sym(M)
        if cone_membership(op, lam) is Membership.OUTSIDE or f_eval(op, lam) < level - tol:
            raise ConeError(f"{name} does not satisfy f >= {level}")
    C = M2 + alpha * (M1 - M2)
    margin = f_eval(op, eigenvalues_sym(C)) - level
    return ComboVerdict(bool(margin >= -tol), float(margin))


@dataclass(frozen=True)
class FieldVerdict:
    ok: bool
    margin: float
    node: tuple | None
    checked: int
    skipped: int

    def __bool__(self) -> bool:
        return self.ok


def hessians(u: GridField) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference Hessians at Interior nodes with a full 3x3 neighbourhood.

    Returns ``(rows, H)``: compact Interior rows and their symmetric Hessians.
    """
    grid = u.grid
    n, h = grid.n, grid.h
    flat = grid.interior
    I = np.stack(np.unravel_index(flat, grid.shape), axis=-1)
    m = grid.shape[0]
    vals = u.values
    ok = np.ones(flat.size, bool)

    def at(offset):
        J = I + offset
        inb = np.all((J >= 0) & (J < m), axis=1)
        J = np.where(inb[:, None], J, 0)
        v = vals[tuple(J.T)]
        good = inb & (grid.classes[tuple(J.T)] != EXCLUDED)
        return np.where(good, v, np.nan)

    E = np.eye(n, dtype=np.int64)
    u0 = vals.ravel()[flat]
    H = np.empty((flat.size, n, n))
    for i in range(n):
        H[:, i, i] = (at(E[i]) + at(-E[i]) - 2.0 * u0) / h**2
        for j in range(i + 1, n):
            c = (at(E[i] + E[j]) - at(E[i] - E[j]) - at(E[j] - E[i]) + at(-E[i] - E[j])) / (4.0 * h * h)
            H[:, i, j] = H[:, j, i] = c
    ok = np.all(np.isfinite(H), axis=(1, 2))
    return np.flatnonzero(ok), H[ok]


def general_discrete_subsolution(u: GridField, op: ConeOperator, tol: float) -> FieldVerdict:
    """Check ``lam(D^2_h u)`` in the closed cone with ``f >= level - tol`` at every node.

    Nodes whose Hessian stencil reaches an Excluded node are skipped (counted).
    """
    rows, H = hessians(u)
    skipped = u.grid.interior.size - rows.size
    if rows.size == 0:
        return FieldVerdict(True, np.inf, None, 0, skipped)
    lam, _ = jacobi_eigh(H)
    fv = f_values(op, lam, tol)
    margin = np.where(np.isnan(fv), -np.inf, fv - op.level)
    cm = cone_margin(op, lam)
    margin = np.where(cm < -tol, np.minimum(margin, cm), margin)
    j = int(np.argmin(margin))
    node = u.grid.multi_index(u.grid.interior[rows[j]])
    return FieldVerdict(bool(margin[j] >= -tol), float(margin[j]), node, int(rows.size), int(skipped))
