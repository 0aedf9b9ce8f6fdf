import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from exterior_ma.cones import (
    ConeError,
    ConeOperator,
    EigenTuple,
    Membership,
    combo_level_check,
    cone_membership,
    eigenvalues_sym,
    f_eval,
    f_values,
    general_discrete_subsolution,
    hessians,
    jacobi_eigh,
    sigma_all,
    sigma_k,
)
from exterior_ma.discrete_op import GridField, Trace
from exterior_ma.geometry import Ball, build_grid

import oracles

finite = st.floats(-5, 5, allow_nan=False)


def test_sigma_known_values():
    assert sigma_k([1, 2, 3], 1) == 6 and sigma_k([1, 2, 3], 2) == 11 and sigma_k([1, 2, 3], 3) == 6
    with pytest.raises(ConeError):
        sigma_k([1, 2, 3], 4)


@settings(max_examples=100, deadline=None)
@given(arrays(float, 4, elements=finite))
def test_sigma_matches_polynomial_oracle(lam):
    assert np.allclose(sigma_all(lam), oracles.elementary_symmetric(lam), atol=1e-9)


def test_quotient_and_boundary_examples():
    op = ConeOperator.sigma_quotient(2, 1, 3)
    assert f_eval(op, [1, 2, 3]) == pytest.approx(11 / 6)
    assert cone_membership(ConeOperator.sigma_k_root(2, 3), [-1, 2, 2]) is Membership.ON_BOUNDARY
    assert f_eval(ConeOperator.sigma_k_root(2, 3), [-1, 2, 2]) == 0.0
    assert cone_membership(ConeOperator.det_root(3), [-1, 2, 2]) is Membership.OUTSIDE
    with pytest.raises(ConeError):
        f_eval(ConeOperator.det_root(3), [-1, 2, 2])


def test_operator_validation():
    with pytest.raises(ConeError):
        ConeOperator("det", 3, 2)
    with pytest.raises(ConeError):
        ConeOperator.sigma_quotient(2, 2, 3)
    with pytest.raises(ConeError):
        ConeOperator.sigma_k_root(4, 3)


def test_eigen_tuple_sorted():
    assert list(EigenTuple(np.array([1.0, 3.0, 2.0])).values) == [3.0, 2.0, 1.0]
    with pytest.raises(ConeError):
        EigenTuple(np.array([np.nan, 1.0]))


def test_jacobi_on_known_matrix():
    Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((3, 3)))
    M = Q @ np.diag([3.0, 2.0, 1.0]) @ Q.T
    w, V = jacobi_eigh(M)
    assert np.allclose(w, [3, 2, 1], atol=1e-13)
    assert np.abs(V @ np.diag(w) @ V.T - M).max() < 1e-13
    with pytest.raises(ConeError):
        jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))


@settings(max_examples=50, deadline=None)
@given(arrays(float, (5, 5), elements=finite))
def test_jacobi_agrees_with_lapack(B):
    M = B + B.T
    w, V = jacobi_eigh(M)
    ref = np.sort(np.linalg.eigvalsh(M))[::-1]
    scale = max(1.0, np.abs(M).max())
    assert np.allclose(w, ref, atol=1e-11 * scale)
    assert np.allclose(V.T @ V, np.eye(5), atol=1e-11)


def test_combo_example_margin():
    op = ConeOperator.det_root(3)
    M1 = np.diag([4.0, 1.0, 0.25])
    M2 = np.diag([0.25, 1.0, 4.0])
    v = combo_level_check(op, M1, M2, 0.5)
    assert v.ok and v.margin == pytest.approx((2.125**2) ** (1 / 3) - 1)
    with pytest.raises(ConeError):
        combo_level_check(op, 0.5 * np.eye(3), M2, 0.5)


def _field(f):
    g = build_grid(Ball(np.zeros(3), 1.0), 2.5, 0.5)
    return GridField.from_function(g, f, Trace(f, f))


def test_hessians_exact_on_quadratic():
    A = np.array([[1.5, 0.2, 0.0], [0.2, 1.0, -0.3], [0.0, -0.3, 0.8]])
    u = _field(lambda x: 0.5 * np.einsum("...i,ij,...j->...", np.asarray(x, float), A, np.asarray(x, float)))
    rows, H = hessians(u)
    assert rows.size > 0 and np.allclose(H, A, atol=1e-11)


@pytest.mark.parametrize("op", [ConeOperator.det_root(3), ConeOperator.sigma_k_root(2, 3), ConeOperator.sigma_quotient(3, 1, 3)])
def test_field_subsolution_check(op):
    u = _field(lambda x: 2.0 * (np.asarray(x, float) ** 2).sum(-1))  # Hessian 4 I
    lam = np.full(3, 4.0)
    level = float(f_values(op, lam))
    assert general_discrete_subsolution(u, op.with_level(level - 1e-6), 1e-9)
    bad = general_discrete_subsolution(u, op.with_level(level + 0.5), 1e-9)
    assert not bad and bad.margin == pytest.approx(-0.5, abs=1e-9) and bad.skipped >= 0


@settings(max_examples=200, deadline=None)
@given(arrays(float, 4, elements=finite), st.permutations(range(4)), st.floats(0.01, 100))
def test_symmetry_and_homogeneity(lam, perm, t):
    for op in (ConeOperator.sigma_k_root(2, 4), ConeOperator.det_root(4), ConeOperator.sigma_quotient(3, 2, 4)):
        f = f_values(op, lam)
        fp = f_values(op, lam[list(perm)])
        assert (np.isnan(f) and np.isnan(fp)) or f == fp
        if np.isfinite(f) and f > 0:
            assert f_values(op, t * lam) == pytest.approx(t * f, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(arrays(float, 3, elements=st.floats(0.01, 5)), arrays(float, 3, elements=st.floats(0.01, 5)), st.floats(0, 1))
def test_concavity_on_positive_cone(a, b, s):
    for op in (ConeOperator.sigma_k_root(2, 3), ConeOperator.det_root(3), ConeOperator.sigma_quotient(2, 1, 3)):
        mid = f_values(op, s * a + (1 - s) * b)
        assert mid >= s * f_values(op, a) + (1 - s) * f_values(op, b) - 1e-10
