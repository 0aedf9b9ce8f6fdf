import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exterior_ma.geometry import Ball, Constant, One, ProblemSpec, QuadraticAsymptote, RadialPerturb
from exterior_ma.radial import (
    NoSolution,
    RadialProfile,
    alpha_from_constant,
    asymptotic_constant,
    critical_constant_ball,
    critical_constant_error,
    general_rhs_lower_bound,
    nonexistence_bound,
    offset_integral,
    radial_derivative,
    radial_value,
)

import oracles

# frozen from the substituted midpoint oracle in oracles.py
CSTAR = {3: -0.883319375142725, 4: -0.65551438857303, 5: -0.5872250803102905}


@pytest.mark.parametrize("n", [3, 4, 5])
def test_cstar_matches_frozen_and_oracle(n):
    assert critical_constant_ball(n) == pytest.approx(CSTAR[n], abs=1e-12)
    assert critical_constant_ball(n) == pytest.approx(oracles.midpoint_cstar(n, 200000), abs=1e-9)
    assert critical_constant_error(n) < 1e-10


def test_c_at_alpha_one_against_oracle():
    c = asymptotic_constant(RadialProfile(3, 1.0))
    assert c == pytest.approx(-0.18830083737607417, abs=1e-12)
    assert c == pytest.approx(-0.5 + oracles.midpoint_offset(3, 1.0), abs=1e-10)


def test_radial_value_against_oracle():
    r = np.array([1.0, 1.5, 2.0, 4.0])
    for alpha in (-1.0, 0.0, 2.0):
        v = radial_value(RadialProfile(3, alpha), r)
        assert np.allclose(v, oracles.radial_profile_oracle(3, alpha, r), atol=1e-8)
    assert radial_value(RadialProfile(3, -1.0), 2.0) == pytest.approx(1.2851566225655902, abs=1e-12)


def test_far_field_expansion():
    n, alpha = 3, 1.5
    p = RadialProfile(n, alpha)
    c = asymptotic_constant(p)
    r = 40.0
    approx = r**2 / 2 + c - alpha / (n * (n - 2)) * r ** (2 - n)
    assert float(radial_value(p, r)) == pytest.approx(approx, abs=1e-5)


def test_derivative_is_root():
    p = RadialProfile(4, 0.7)
    r = np.array([1.2, 3.0])
    assert np.allclose(radial_derivative(p, r), (r**4 + 0.7) ** 0.25)


@settings(max_examples=25, deadline=None)
@given(st.floats(-1.0, 8.0))
def test_constant_monotone_in_alpha(alpha):
    c1 = asymptotic_constant(RadialProfile(3, alpha))
    c2 = asymptotic_constant(RadialProfile(3, alpha + 0.5))
    assert c2 > c1 >= CSTAR[3] - 1e-12


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.999, 6.0), st.sampled_from([3, 4, 5]))
def test_alpha_round_trip(alpha, n):
    c = asymptotic_constant(RadialProfile(n, alpha))
    assert alpha_from_constant(c, n) == pytest.approx(alpha, abs=1e-9)


def test_no_solution_below_threshold():
    with pytest.raises(NoSolution):
        alpha_from_constant(CSTAR[3] - 1e-3, 3)
    assert alpha_from_constant(CSTAR[3], 3) == pytest.approx(-1.0, abs=1e-9)


def test_identity_of_offset_forms():
    val, err = offset_integral(3, -1.0)
    assert val == pytest.approx(oracles.scaled_form_offset(3), abs=1e-8)


def test_nonexistence_bound_for_unit_g_is_cstar():
    p = ProblemSpec(Ball(np.zeros(3), 1.0), Constant(0.0), One(), QuadraticAsymptote.identity(3))
    assert nonexistence_bound(p) == pytest.approx(CSTAR[3], abs=1e-8)


@pytest.mark.parametrize("a", [-0.5, 0.5])
def test_lower_profile_orders_with_g(a):
    r = np.array([1.5, 3.0, 6.0])
    lb = general_rhs_lower_bound(r, RadialPerturb(a), 3)
    unit = (r**3 - 1) ** (1 / 3)
    assert np.all(lb < unit) if a < 0 else np.all(lb > unit)
    p = ProblemSpec(Ball(np.zeros(3), 1.0), Constant(0.0), RadialPerturb(a), QuadraticAsymptote.identity(3))
    bound = nonexistence_bound(p)
    assert bound < CSTAR[3] if a < 0 else bound > CSTAR[3]


def test_zero_perturbation_reproduces_cstar():
    p = ProblemSpec(Ball(np.zeros(3), 1.0), Constant(0.0), RadialPerturb(0.0), QuadraticAsymptote.identity(3))
    assert nonexistence_bound(p) == pytest.approx(CSTAR[3], abs=1e-7)


def test_shifted_ball_bound_transforms():
    # u(x) = w(x - x0) + x0.(x - x0) + |x0|^2/2 turns the shifted problem into a centred one
    # whose data has minimum -|x0| on the unit sphere
    x0 = np.array([0.5, 0.0, 0.0])
    p = ProblemSpec(Ball(x0, 1.0), Constant(0.0), One(), QuadraticAsymptote.identity(3))
    assert nonexistence_bound(p) == pytest.approx(CSTAR[3] - 0.5 - 0.125, abs=1e-3)
