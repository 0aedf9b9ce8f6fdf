"""Closed-form radial solutions of ``det D^2 u = 1`` outside the unit ball.

The family is ``u_alpha(r) = int_1^r (s^n + alpha)^(1/n) ds`` with
``u_alpha(1) = 0``; its asymptotic constant is

    c(alpha) = -1/2 + int_1^inf ((s^n + alpha)^(1/n) - s) ds,

strictly increasing in ``alpha``.  ``c(-1)`` is the sharp constant ``C*(n)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import binom

from .geometry import One, ProblemSpec, RhsField


class NoSolution(ValueError):
    """Requested asymptotic constant lies below the sharp constant."""


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class RadialProfile:
    n: int
    alpha: float

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("radial profiles need n >= 3")
        if not self.alpha >= -1.0:
            raise ValueError("alpha must be >= -1")


@dataclass(frozen=True)
class QuadratureSettings:
    tol: float = 1e-11
    split: float = 10.0
    max_subdivisions: int = 200

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if not self.split >= 2:
            raise ValueError("tail split S must be >= 2")


DEFAULT_Q = QuadratureSettings()


def _quad(f, a, b, q: QuadratureSettings):
    out = integrate.quad(
        f, a, b, epsabs=0.1 * q.tol, epsrel=1e-13, limit=q.max_subdivisions, full_output=1
    )
    val, err = out[0], out[1]
    if len(out) > 3 and err > q.tol:
        raise QuadratureError(f"quadrature on [{a}, {b}] failed: error estimate {err:.3g} > {q.tol:.3g}")
    return val, err


# ---------------------------------------------------------------------------
# profile derivative and value
# ---------------------------------------------------------------------------


def radial_derivative(p: RadialProfile, r):
    """``u'(r) = (r^n + alpha)^(1/n)``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 1.0):
        raise ValueError("radial profile is defined for r >= 1")
    out = np.maximum(r**p.n + p.alpha, 0.0) ** (1.0 / p.n)
    return out if out.ndim else float(out)


def radial_second_derivative(p: RadialProfile, r):
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        out = r ** (p.n - 1) * (r**p.n + p.alpha) ** (1.0 / p.n - 1.0)
    return out if out.ndim else float(out)


def _near_integrand(n: int, alpha: float, subtract_s: bool):
    """Integrand on ``[1, 2]`` after ``s = 1 + t^n`` (removes the alpha = -1 endpoint singularity)."""
    gap = 1.0 + alpha

    def f(t):
        s = 1.0 + t**n
        # s^n - 1 = (s - 1) (1 + s + ... + s^(n-1))
        P = sum(s**k for k in range(n))
        base = t**n * P + gap
        val = max(base, 0.0) ** (1.0 / n)
        if subtract_s:
            val -= s
        return val * n * t ** (n - 1)

    return f


def _far_integrand(n: int, alpha: float):
    # s * ((1 + alpha s^-n)^(1/n) - 1), free of cancellation for large s
    return lambda s: s * math.expm1(math.log1p(alpha * s ** (-n)) / n)


def _value_piece(n: int, alpha: float, a: float, b: float, q: QuadratureSettings) -> tuple[float, float]:
    """``int_a^b (s^n + alpha)^(1/n) ds`` for ``1 <= a <= b``."""
    if b <= a:
        return 0.0, 0.0
    total = err = 0.0
    if a < 2.0:
        hi = min(b, 2.0)
        f = _near_integrand(n, alpha, subtract_s=False)
        v, e = _quad(f, (a - 1.0) ** (1.0 / n), (hi - 1.0) ** (1.0 / n), q)
        total += v
        err += e
        a = hi
    if b > a:
        v, e = _quad(lambda s: (s**n + alpha) ** (1.0 / n), a, b, q)
        total += v
        err += e
    return total, err


def radial_value(p: RadialProfile, r, q: QuadratureSettings = DEFAULT_Q):
    """``u(r) = int_1^r (s^n + alpha)^(1/n) ds``; vectorized over ``r``."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 1.0):
        raise ValueError("radial profile is defined for r >= 1")
    flat = r_arr.ravel()
    uniq, inv = np.unique(flat, return_inverse=True)
    vals = np.empty(uniq.size)
    acc = 0.0
    prev = 1.0
    for i, ri in enumerate(uniq):
        piece, _ = _value_piece(p.n, p.alpha, prev, ri, q)
        acc += piece
        vals[i] = acc
        prev = ri
    out = vals[inv].reshape(r_arr.shape)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# asymptotic constant
# ---------------------------------------------------------------------------


def _tail(n: int, alpha: float, S: float) -> float:
    """``int_S^inf ((s^n + alpha)^(1/n) - s) ds`` from the binomial series (needs |alpha| S^-n < 1)."""
    x = alpha * S ** (-n)
    total = 0.0
    for k in range(1, 200):
        term = binom(1.0 / n, k) * x**k * S**2 / (k * n - 2)
        total += term
        if abs(term) <= 1e-18 * max(1.0, abs(total)):
            break
    return total


def offset_integral(n: int, alpha: float, q: QuadratureSettings = DEFAULT_Q) -> tuple[float, float]:
    """``int_1^inf ((s^n + alpha)^(1/n) - s) ds`` and its error estimate."""
    S = max(q.split, (2.0 * abs(alpha)) ** (1.0 / n))
    v1, e1 = _quad(_near_integrand(n, alpha, subtract_s=True), 0.0, 1.0, q)
    v2, e2 = _quad(_far_integrand(n, alpha), 2.0, S, q)
    return v1 + v2 + _tail(n, alpha, S), e1 + e2


def asymptotic_constant(p: RadialProfile, q: QuadratureSettings = DEFAULT_Q) -> float:
    if p.alpha == 0.0:
        return -0.5
    val, err = offset_integral(p.n, p.alpha, q)
    if err > q.tol:
        raise QuadratureError(f"asymptotic constant error estimate {err:.3g} exceeds {q.tol:.3g}")
    return -0.5 + val


def critical_constant_ball(n: int, q: QuadratureSettings = DEFAULT_Q) -> float:
    """Sharp constant ``C*(n) = -1/2 + int_1^inf s((1 - s^-n)^(1/n) - 1) ds``."""
    if n < 3:
        raise ValueError("n >= 3 required")
    s = np.linspace(1.0, 50.0, 97)
    lhs = s * (1.0 - s ** (-float(n))) ** (1.0 / n)
    rhs = (s**n - 1.0) ** (1.0 / n)
    if not np.allclose(lhs, rhs, rtol=0, atol=1e-12 * s.max()):
        raise AssertionError("integrand identity s(1 - s^-n)^(1/n) = (s^n - 1)^(1/n) failed")
    return asymptotic_constant(RadialProfile(n, -1.0), q)


def critical_constant_error(n: int, q: QuadratureSettings = DEFAULT_Q) -> float:
    return offset_integral(n, -1.0, q)[1]


def alpha_from_constant(c: float, n: int, q: QuadratureSettings = DEFAULT_Q) -> float:
    """Unique ``alpha >= -1`` with ``c(alpha) = c``; raises NoSolution below ``C*(n)``."""
    cstar = critical_constant_ball(n, q)
    if c < cstar - q.tol:
        raise NoSolution(f"c = {c!r} is below C*({n}) = {cstar!r}")
    if c <= cstar:
        return -1.0
    if c == -0.5:
        return 0.0

    def cmap(a):
        return asymptotic_constant(RadialProfile(n, a), q)

    lo, hi = -1.0, 1.0
    while cmap(hi) < c:
        lo, hi = hi, 2.0 * hi + 1.0
        if hi > 1e15:
            raise QuadratureError("failed to bracket alpha")
    if c < -0.5:
        hi = min(hi, 0.0)
    elif lo < 0.0:
        lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if cmap(mid) < c:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# general right-hand sides
# ---------------------------------------------------------------------------


def _excess(g_exc, n: int, q: QuadratureSettings):
    """``E(l) = -1 + int_1^l n s^(n-1) (g1(s) - 1) ds`` so that ``int_1^l n s^(n-1) g1 = l^n + E(l)``.

    ``g_exc(s)`` must return ``g1(s) - 1`` directly.
    """

    def E(l):
        if l <= 1.0:
            return -1.0
        # E enters the outer integrands divided by l^(n-1) or more, so its
        # absolute tolerance may grow like l^(n-2)
        qi = QuadratureSettings(q.tol * max(1.0, l ** (n - 2)), q.split, q.max_subdivisions)
        # s = e^t spreads the slowly decaying integrand evenly over the range
        v, _ = _quad(lambda t: n * math.exp(n * t) * float(g_exc(math.exp(t))), 0.0, math.log(l), qi)
        return -1.0 + v

    return E


def general_rhs_lower_bound(r, g: RhsField, n: int, q: QuadratureSettings = DEFAULT_Q):
    """``(int_1^r n s^(n-1) g1(s) ds)^(1/n)`` with ``g1(s) = sup_{|x|=s} g``."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 1.0):
        raise ValueError("r >= 1 required")
    if isinstance(g, One):
        out = np.maximum(r_arr**n - 1.0, 0.0) ** (1.0 / n)
        return out if out.ndim else float(out)
    center = np.zeros(n)
    E = _excess(lambda s: g.sphere_excess(center, s), n, q)
    out = np.array([max(ri**n + E(ri), 0.0) ** (1.0 / n) for ri in r_arr.ravel()]).reshape(r_arr.shape)
    return out if out.ndim else float(out)


def _lower_profile_offset(g_exc, n: int, q: QuadratureSettings) -> float:
    """``lim_r [int_1^r (int_1^l n s^(n-1) g1)^(1/n) dl - r^2/2]``."""
    E = _excess(g_exc, n, q)

    def integrand(l):
        e = E(l)
        return l * math.expm1(math.log1p(e * l ** (-n)) / n)

    # near l = 1 the inner integral vanishes like (l - 1): substitute l = 1 + t^n
    def near(t):
        l = 1.0 + t**n
        inner = max(l**n + E(l), 0.0) ** (1.0 / n)
        return (inner - l) * n * t ** (n - 1)

    v1, _ = _quad(near, 0.0, 1.0, q)
    v2, _ = _quad(integrand, 2.0, q.split, q)
    v3, _ = _quad(integrand, q.split, np.inf, q)
    return -0.5 + v1 + v2 + v3


def nonexistence_bound(p: ProblemSpec, q: QuadratureSettings = DEFAULT_Q, samples: int = 4096) -> float:
    """Constant ``c2`` such that no subsolution with asymptote ``|x|^2/2 + c``, ``c < c2``, exists.

    The domain is enclosed in a ball ``B_rho(x_c)`` touching its boundary; after
    translating, subtracting the induced linear function and rescaling to the
    unit ball, the radial lower profile gives the bound, which is mapped back.
    The result never exceeds the true threshold (for a centred ball with
    constant data and ``g = 1`` it is sharp).
    """
    if not p.asymptote.is_normalized(tol=1e-12):
        raise ValueError("nonexistence_bound expects a normalized spec (A = I, b = 0)")
    n = p.n
    xc, rho = p.domain.circumscribed_ball()
    pts = p.domain.boundary_samples(samples)
    # data in the rescaled frame: (phi(x) - x_c.(x - x_c)) / rho^2
    phi_w = (p.phi(pts) - (pts - xc) @ xc) / rho**2
    phi_min = float(phi_w.min())
    if isinstance(p.g, One):
        offset = critical_constant_ball(n, q)
    else:
        offset = _lower_profile_offset(lambda s: float(p.g.sphere_excess(xc, rho * s)), n, q)
    c_w = phi_min + offset
    return rho**2 * c_w - 0.5 * float(xc @ xc)
