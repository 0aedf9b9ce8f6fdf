import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from exterior_ma.discrete_op import (
    GridField,
    StencilDictionary,
    StencilError,
    Trace,
    brute_force_envelope,
    comparison_check,
    eps_upper_envelope,
    export_csv,
    field_from_snapshot,
    is_discrete_subsolution,
    is_discrete_supersolution,
    ma_operator,
    ma_operator_at,
    radialize,
    read_snapshot,
    second_difference,
    semiconvexity_margin,
    snapshot_bytes,
    write_snapshot,
)
from exterior_ma.geometry import INTERIOR, Ball, Ellipsoid, One, build_grid

BALL = Ball(np.zeros(3), 1.0)
GRID = build_grid(BALL, 2.5, 0.5)
D2 = StencilDictionary.build(3, 2)


def quad_field(grid, A, c=0.0):
    def f(x):
        x = np.asarray(x, float)
        return 0.5 * np.einsum("...i,ij,...j->...", x, A, x) + c

    return GridField.from_function(grid, f, Trace(f, f))


@pytest.mark.parametrize("n,w,frames,dirs", [(3, 1, 4, 9), (3, 2, 26, 49), (3, 3, 50, 97), (2, 2, 4, 8)])
def test_dictionary_sizes(n, w, frames, dirs):
    d = StencilDictionary.build(n, w)
    assert len(d.frames) == frames and d.directions.shape[0] == dirs
    assert d.is_orthogonal() and d.contains_axis_frame() and d.closed_under_permutation()
    assert np.abs(d.directions).max() <= w


def test_dictionaries_nested_and_resolution_shrinks():
    sets = [{frozenset(f) for f in StencilDictionary.build(3, w).frames} for w in (1, 2, 3)]
    assert sets[0] <= sets[1] <= sets[2]
    res = [StencilDictionary.build(3, w).angular_resolution() for w in (1, 2, 3)]
    assert res[0] > res[1] > res[2]
    assert res == pytest.approx([0.611, 0.307, 0.222], abs=2e-3)


def test_isotropic_quadratic_is_exact():
    u = quad_field(GRID, np.eye(3))
    assert np.allclose(ma_operator(u, D2), 1.0, atol=1e-11)
    node = GRID.node_at([1.5, 0.5, 0.0])
    assert ma_operator_at(u, node, D2) == pytest.approx(1.0, abs=1e-11)
    assert second_difference(u, node, [1, 1, 0], D2) == pytest.approx(1.0, abs=1e-11)
    assert second_difference(u, node, [1, 0, 0]) == pytest.approx(1.0, abs=1e-11)


def test_second_difference_rejects_excluded_node():
    with pytest.raises(StencilError):
        second_difference(quad_field(GRID, np.eye(3)), GRID.node_at([0, 0, 0]), [1, 0, 0])


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-np.pi, np.pi), min_size=3, max_size=3), st.floats(0.5, 2.0), st.floats(0.5, 2.0))
def test_rotated_quadratic_error_nonnegative_and_shrinks_with_width(angles, l1, l2):
    Rm = Rotation.from_euler("zyx", angles).as_matrix()
    A = Rm @ np.diag([l1, l2, 1.0 / (l1 * l2)]) @ Rm.T
    u = quad_field(GRID, A)
    errs = [ma_operator(u, StencilDictionary.build(3, w)) - 1.0 for w in (1, 2, 3)]
    assert np.all(errs[0] >= -1e-10)
    assert np.all(errs[1] <= errs[0] + 1e-12) and np.all(errs[2] <= errs[1] + 1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.floats(1e-3, 1.0))
def test_operator_monotone_in_neighbours(seed, bump):
    rng = np.random.default_rng(seed)
    base = quad_field(GRID, np.eye(3))
    vals = base.values + np.where(np.isfinite(base.values), 0.05 * rng.standard_normal(GRID.shape), 0.0)
    u = GridField(GRID, vals, base.trace)
    m0 = ma_operator(u, D2)
    k = rng.integers(GRID.interior.size)
    v = u.values.copy()
    v.ravel()[GRID.interior[k]] += bump
    m1 = ma_operator(GridField(GRID, v, base.trace), D2)
    others = np.arange(GRID.interior.size) != k
    assert np.all(m1[others] >= m0[others] - 1e-9)
    assert m1[k] <= m0[k] + 1e-9


def test_sub_and_supersolution_verdicts():
    u = quad_field(GRID, 1.1 * np.eye(3))
    assert is_discrete_subsolution(u, One(), D2, 1e-9)
    assert not is_discrete_supersolution(u, One(), D2, 1e-9)
    v = quad_field(GRID, 0.9 * np.eye(3), c=5.0)
    assert is_discrete_supersolution(v, One(), D2, 1e-9)
    verdict = is_discrete_subsolution(v, One(), D2, 1e-9)
    assert not verdict and verdict.kind == "operator" and verdict.margin < 0


def test_comparison_check_reports_preconditions():
    sub = quad_field(GRID, 1.1 * np.eye(3))
    sup = quad_field(GRID, 0.9 * np.eye(3), c=5.0)
    assert comparison_check(sub, sup, One(), D2, 1e-9)
    assert comparison_check(sup, sub, One(), D2, 1e-9).kind == "pre:subsolution"
    low_sup = quad_field(GRID, 0.9 * np.eye(3), c=-5.0)
    assert comparison_check(sub, low_sup, One(), D2, 1e-9).kind == "pre:boundary"


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.3, 3.0))
def test_envelope_properties(seed, eps):
    rng = np.random.default_rng(seed)
    vals = np.where(GRID.valid(), rng.standard_normal(GRID.shape), np.nan)
    u = GridField(GRID, vals)
    env = eps_upper_envelope(u, eps)
    assert np.array_equal(env.values, brute_force_envelope(u, eps).values, equal_nan=True)
    ok = GRID.valid()
    assert np.all(env.values[ok] >= vals[ok])
    bigger = eps_upper_envelope(u, 2 * eps)
    assert np.all(bigger.values[ok] >= env.values[ok])
    assert semiconvexity_margin(env, eps, D2) >= -1e-9


def test_envelope_rejects_unresolvable_eps():
    u = quad_field(GRID, np.eye(3))
    with pytest.raises(ValueError):
        eps_upper_envelope(u, 0.5 * GRID.h**2)


def test_radialize_needs_centred_ball():
    g = build_grid(Ellipsoid(np.zeros(3), [1.0, 0.8, 0.8]), 2.5, 0.5)
    with pytest.raises(ValueError):
        radialize(quad_field(g, np.eye(3)))


def test_radialize_keeps_radial_fields():
    u = quad_field(GRID, np.eye(3))
    v = radialize(u)
    ok = GRID.valid()
    # a radial field only moves within its bin width of h/2
    assert np.all(v.values[ok] >= u.values[ok])
    r_max = np.linalg.norm(GRID.coords(np.flatnonzero(ok.ravel())), axis=1).max()
    assert np.max(v.values[ok] - u.values[ok]) <= (r_max + 0.25 * GRID.h) * 0.5 * GRID.h


def test_snapshot_round_trip(tmp_path):
    u = quad_field(GRID, np.eye(3))
    path = tmp_path / "f.maext"
    write_snapshot(path, u)
    assert not [p for p in os.listdir(tmp_path) if ".tmp" in p]
    raw = path.read_bytes()
    assert raw[:6] == b"MAEXT1"
    assert int.from_bytes(raw[6:14], "little") == 3
    snap = read_snapshot(path)
    assert snap.shape == GRID.shape and snap.h == GRID.h and snap.R == GRID.R
    back = field_from_snapshot(snap, GRID)
    assert np.array_equal(back.values, u.values, equal_nan=True)
    assert np.isnan(back.values[GRID.classes == 3]).all()
    assert snapshot_bytes(back) == raw
    with pytest.raises(ValueError):
        field_from_snapshot(snap, build_grid(BALL, 3.0, 0.5))


def test_snapshot_rejects_garbage(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"NOTASNAP" + bytes(40))
    with pytest.raises(ValueError):
        read_snapshot(p)
    write_snapshot(p, quad_field(GRID, np.eye(3)))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_snapshot(p)


def test_csv_export(tmp_path):
    u = quad_field(GRID, np.eye(3))
    export_csv(tmp_path / "u.csv", u)
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,x3,value"
    assert len(lines) - 1 == int(GRID.valid().sum())
    x = np.array([float(t) for t in lines[1].split(",")])
    assert x[3] == 0.5 * (x[:3] ** 2).sum()
