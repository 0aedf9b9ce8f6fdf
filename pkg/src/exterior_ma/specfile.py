"""INI problem files.

Example::

    [domain]
    kind = ball            ; or ellipsoid
    center = 0 0 0
    radius = 1             ; ellipsoid: semi_axes = a b c, optional axes = 9 numbers (columns)

    [phi]
    kind = constant        ; constant | affine | quadratic | harmonic
    value = 0              ; affine: p = ..., q = ... ; quadratic: trace of the asymptote
                           ; harmonic: c0 = ..., c1 = ..., c2 = n*n numbers
    [g]
    kind = one             ; or radial_perturb with a, beta, g_min

    [asymptote]
    A = 1 0 0 0 1 0 0 0 1  ; rescaled to unit determinant
    b = 0 0 0
    c = -0.5

    [grid]
    h = 0.25
    R = 4
    width = 2
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass

import numpy as np

from .geometry import (
    Affine,
    Ball,
    Constant,
    Ellipsoid,
    One,
    ProblemSpec,
    QuadraticAsymptote,
    QuadraticTrace,
    RadialPerturb,
    SphericalHarmonic,
)


class SpecFileError(ValueError):
    pass


@dataclass(frozen=True)
class GridSettings:
    h: float = 0.25
    R: float = 4.0
    width: int = 2


def _vec(sec, key, n=None, default=None) -> np.ndarray:
    if key not in sec:
        if default is None:
            raise SpecFileError(f"[{sec.name}] missing key '{key}'")
        return np.asarray(default, dtype=float)
    try:
        v = np.array([float(t) for t in sec[key].replace(",", " ").split()])
    except ValueError as exc:
        raise SpecFileError(f"[{sec.name}] {key}: {exc}") from None
    if n is not None and v.size != n:
        raise SpecFileError(f"[{sec.name}] {key}: expected {n} numbers, got {v.size}")
    return v


def _num(sec, key, default=None) -> float:
    if key not in sec:
        if default is None:
            raise SpecFileError(f"[{sec.name}] missing key '{key}'")
        return float(default)
    try:
        return float(sec[key])
    except ValueError:
        raise SpecFileError(f"[{sec.name}] {key}: not a number: {sec[key]!r}") from None


def _section(cp, name):
    if name not in cp:
        raise SpecFileError(f"missing section [{name}]")
    return cp[name]


def parse_spec_text(text: str) -> tuple[ProblemSpec, GridSettings]:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise SpecFileError(str(exc)) from None

    dom = _section(cp, "domain")
    kind = dom.get("kind", "ball").strip().lower()
    center = _vec(dom, "center")
    n = center.size
    try:
        if kind == "ball":
            domain = Ball(center, _num(dom, "radius", 1.0))
        elif kind == "ellipsoid":
            axes = _vec(dom, "axes", n * n).reshape(n, n) if "axes" in dom else None
            domain = Ellipsoid(center, _vec(dom, "semi_axes", n), axes)
        else:
            raise SpecFileError(f"[domain] kind: unknown domain {kind!r}")
    except ValueError as exc:
        if isinstance(exc, SpecFileError):
            raise
        raise SpecFileError(f"[domain] {exc}") from None

    asy = _section(cp, "asymptote")
    try:
        A = _vec(asy, "A", n * n, np.eye(n).ravel()).reshape(n, n)
        Q = QuadraticAsymptote.normalized(A, _vec(asy, "b", n, np.zeros(n)), _num(asy, "c"))
    except ValueError as exc:
        if isinstance(exc, SpecFileError):
            raise
        raise SpecFileError(f"[asymptote] {exc}") from None

    ph = _section(cp, "phi")
    pk = ph.get("kind", "constant").strip().lower()
    if pk == "constant":
        phi = Constant(_num(ph, "value", 0.0))
    elif pk == "affine":
        phi = Affine(_vec(ph, "p", n), _num(ph, "q", 0.0))
    elif pk == "quadratic":
        phi = QuadraticTrace(Q.with_c(_num(ph, "c", Q.c)))
    elif pk == "harmonic":
        phi = SphericalHarmonic(
            _vec(ph, "center", n, domain.center),
            _num(ph, "c0", 0.0),
            _vec(ph, "c1", n, np.zeros(n)),
            _vec(ph, "c2", n * n, np.zeros(n * n)).reshape(n, n),
        )
    else:
        raise SpecFileError(f"[phi] kind: unknown boundary datum {pk!r}")

    gs = cp["g"] if "g" in cp else None
    gk = gs.get("kind", "one").strip().lower() if gs is not None else "one"
    try:
        if gk == "one":
            g = One()
        elif gk == "radial_perturb":
            g = RadialPerturb(_num(gs, "a"), _num(gs, "beta", 3.0), _num(gs, "g_min", 0.1))
        else:
            raise SpecFileError(f"[g] kind: unknown right-hand side {gk!r}")
    except ValueError as exc:
        if isinstance(exc, SpecFileError):
            raise
        raise SpecFileError(f"[g] {exc}") from None

    grid = GridSettings()
    if "grid" in cp:
        gr = cp["grid"]
        grid = GridSettings(_num(gr, "h", grid.h), _num(gr, "R", grid.R), int(_num(gr, "width", grid.width)))
        if not grid.h > 0 or not grid.R > 0 or grid.width < 1:
            raise SpecFileError("[grid] h, R must be positive and width >= 1")
    return ProblemSpec(domain, phi, g, Q), grid


def load_spec(path) -> tuple[ProblemSpec, GridSettings]:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise SpecFileError(f"cannot read spec file {path}: {exc.strerror}") from None
    return parse_spec_text(text)
