import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from mvcalc.errors import CapabilityError, InputError
from mvcalc.functional import (
    ControlledDynamics,
    CylinderFunctional,
    OperatorSpec,
    Outer,
    SmoothScalarField,
    TimeField,
    check_def3,
    corollary1_drift,
    generator_L,
    generator_script_L,
    ito_drift,
    lin_derivative,
    second_derivative,
)
from mvcalc.measure import FiniteMeasure

from conftest import random_measure

ONE = SmoothScalarField.constant(1.0, name="one")


@pytest.fixture
def mu3():
    return FiniteMeasure.from_atoms([(-0.7, 0.4), (0.2, 1.1), (1.3, 0.6)])


# fields


def test_gaussian_field_derivatives(phi, rng):
    pts = rng.normal(0, 2, 1000)
    assert phi.check_derivatives(pts, step=1e-4, rtol=1e-5) <= 1.0
    assert phi.check_bounds(pts)


def test_expr_field_derivatives(rng):
    f = SmoothScalarField.from_expr("sin(x) exp(-x^2/4)", bounds=(1, 2, 3))
    pts = rng.normal(0, 2, 1000)
    assert f.check_derivatives(pts) <= 1.0
    np.testing.assert_allclose(f.d1(pts), np.cos(pts) * np.exp(-pts**2 / 4)
                               - pts / 2 * np.sin(pts) * np.exp(-pts**2 / 4), rtol=1e-12, atol=1e-15)


def test_expr_field_rejects_unknown_names():
    with pytest.raises(InputError, match="foo"):
        SmoothScalarField.from_expr("foo x")


def test_heat_field_solves_backward_equation(rng):
    w = TimeField.heat_gaussian(1.0, 1.0)
    xs = rng.normal(size=50)
    for t in (0.0, 0.3, 0.9):
        f = w.at(t)
        np.testing.assert_allclose(w.dt_at(t)(xs), -0.5 * f.d2(xs), rtol=1e-14)
        eps = 1e-5
        fd = (w.at(t + eps)(xs) - w.at(t - eps)(xs)) / (2 * eps)
        np.testing.assert_allclose(fd, w.dt_at(t)(xs), rtol=1e-6, atol=1e-10)
    np.testing.assert_allclose(w.at(1.0)(xs), np.exp(-xs**2 / 2), rtol=1e-15)


# outer functions


def test_outer_hessian_symmetric(rng):
    G = Outer("exp(a b) + a^3 c", ["a", "b", "c"])
    v = rng.normal(size=(20, 3))
    H = G.hess(v)
    np.testing.assert_array_equal(H, np.swapaxes(H, -1, -2))


def test_outer_time_dependence_detected():
    assert Outer("t a", ["a"]).time_dependent
    assert not Outer("a^2", ["a"]).time_dependent
    with pytest.raises(InputError):
        Outer("t a", ["a"]).value([1.0])


# derivatives


def test_lin_derivative_examples(phi, mu3, rng):
    xs = rng.normal(size=10)
    lin = CylinderFunctional.build("phi", [phi])
    np.testing.assert_array_equal(lin_derivative(lin, mu3, xs), phi(xs))
    sq = CylinderFunctional.build("phi^2", [phi])
    np.testing.assert_allclose(lin_derivative(sq, mu3, xs), 2 * mu3.integrate(phi) * phi(xs), rtol=1e-15)
    const = CylinderFunctional.build("3 + 0 phi", [phi])
    np.testing.assert_array_equal(lin_derivative(const, mu3, xs), 0.0)


def test_second_derivative_examples(phi, phi2, mu3):
    x, y = 0.3, -1.1
    sq = CylinderFunctional.build("phi^2", [phi])
    assert second_derivative(sq, mu3, x, y) == pytest.approx(2 * phi(x) * phi(y), rel=1e-15)
    lin = CylinderFunctional.build("phi", [phi])
    assert second_derivative(lin, mu3, x, y) == 0.0
    prod = CylinderFunctional.build("phi phi2", [phi, phi2])
    expected = phi(x) * phi2(y) + phi2(x) * phi(y)
    assert second_derivative(prod, mu3, x, y) == pytest.approx(expected, rel=1e-15)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_second_derivative_exactly_symmetric(seed):
    rng = np.random.default_rng(seed)
    p = SmoothScalarField.gaussian(rng.normal(), rng.uniform(0.3, 2), name="p")
    q = SmoothScalarField.gaussian(rng.normal(), rng.uniform(0.3, 2), name="q")
    F = CylinderFunctional.build("exp(-p q) + p^2 q", [p, q])
    mu = random_measure(rng)
    x, y = rng.normal(size=2)
    assert second_derivative(F, mu, x, y) == second_derivative(F, mu, y, x)


def test_check_def3_examples(phi, rng):
    lin = CylinderFunctional.build("phi", [phi])
    sq = CylinderFunctional.build("phi^2", [phi])
    cube = CylinderFunctional.build("phi^3", [phi])
    for _ in range(20):
        mu, lam = random_measure(rng), random_measure(rng)
        assert check_def3(lin, mu, lam, 2) <= 1e-14
        assert check_def3(sq, mu, lam, 2) <= 1e-12
        assert check_def3(cube, mu, lam, 3) <= 1e-12


def test_check_def3_polynomial_exactness(phi, phi2, rng):
    F = CylinderFunctional.build("phi^2 phi2^2 - 3 phi phi2 + 1", [phi, phi2])
    for _ in range(10):
        mu, lam = random_measure(rng), random_measure(rng)
        assert check_def3(F, mu, lam, 4) <= 1e-10


def test_check_def3_needs_two_nodes(phi, mu3):
    with pytest.raises(InputError):
        check_def3(CylinderFunctional.build("phi", [phi]), mu3, mu3, 1)


def test_finite_difference_first_order(phi, phi2, rng):
    for _ in range(10):
        F = CylinderFunctional.build("exp(phi) phi2 + phi^2", [phi, phi2])
        mu = random_measure(rng)
        x = rng.normal()
        exact = lin_derivative(F, mu, x)
        errs = []
        for eps in (1e-2, 1e-3, 1e-4):
            bumped = mu + FiniteMeasure.from_atoms([(x, eps)])
            errs.append(abs((F(bumped) - F(mu)) / eps - exact))
        # first order: each tenfold step reduction cuts the error about tenfold
        assert errs[1] < errs[0] / 5 and errs[2] < errs[1] / 5
        assert errs[2] < 1e-3


# generators


def test_generator_L_examples():
    mu = FiniteMeasure.empty()
    sq = SmoothScalarField.from_expr("x^2")
    ident = SmoothScalarField.from_expr("x")
    heat = ControlledDynamics.constant(0.0, 1.0, 1.0)
    assert generator_L(sq, 0.7, mu, 0.0, heat) == 1.0
    assert generator_L(ident, 0.7, mu, 0.0, ControlledDynamics.constant(1.0, 0.0, 1.0)) == 1.0
    sine = ControlledDynamics(lambda x, m, a: np.sin(x), 0.0, 1.0)
    xs = np.linspace(-3, 3, 7)
    np.testing.assert_array_equal(generator_L(ident, xs, mu, 0.0, sine), np.sin(xs))


def test_generator_L_linear_in_phi(phi, phi2, rng):
    dyn = ControlledDynamics(lambda x, m, a: np.cos(x), lambda x, m, a: 1 + 0.5 * np.sin(x), 1.0)
    comb = SmoothScalarField.from_expr("2 exp(-x^2/2) - 3 exp(-(x-0.5)^2/(2*0.49))")
    xs = rng.normal(size=30)
    mu = FiniteMeasure.empty()
    expected = 2 * generator_L(phi, xs, mu, 0, dyn) - 3 * generator_L(phi2, xs, mu, 0, dyn)
    np.testing.assert_allclose(generator_L(comb, xs, mu, 0, dyn), expected, rtol=1e-12, atol=1e-14)


def test_generator_script_L_examples(phi, mu3, rng):
    dyn = ControlledDynamics(0.3, lambda x, m, a: 1 + x * 0, lambda x, m, a: 1 + 0.1 * x * x)
    xs = rng.normal(size=10)
    ident = Outer("v", ["v"])
    np.testing.assert_allclose(generator_script_L(ident, phi, xs, mu3, 0, dyn),
                               generator_L(phi, xs, mu3, 0, dyn), rtol=1e-15)
    sq = Outer("v^2", ["v"])
    v = mu3.integrate(phi)
    g = 1 + 0.1 * xs * xs
    expected = 2 * v * generator_L(phi, xs, mu3, 0, dyn) + g * phi(xs) ** 2
    np.testing.assert_allclose(generator_script_L(sq, phi, xs, mu3, 0, dyn), expected, rtol=1e-14)
    const = Outer("4 + 0 v", ["v"])
    np.testing.assert_array_equal(generator_script_L(const, phi, xs, mu3, 0, dyn), 0.0)


# drift


def test_ito_drift_examples(phi, mu3):
    lin = CylinderFunctional.build("phi", [phi])
    assert ito_drift(lin, mu3, 0, ControlledDynamics.constant(0.0, 0.0, 3.7)) == 0.0
    mass_sq = CylinderFunctional.build("one^2", [ONE])
    assert ito_drift(mass_sq, mu3, 0, ControlledDynamics.constant(0.0, 0.0, 1.0)) == pytest.approx(
        mu3.total_mass, rel=1e-15)


def test_ito_drift_three_atom_oracle(phi, mu3):
    F = CylinderFunctional.build("phi^2", [phi])
    # term by term: 2 <phi, mu> <phi''/2, mu> + <phi^2, mu>
    xs, ms = mu3.x, mu3.masses
    val = sum(m * np.exp(-x * x / 2) for x, m in zip(xs, ms))
    half_d2 = sum(m * 0.5 * (x * x - 1) * np.exp(-x * x / 2) for x, m in zip(xs, ms))
    sq = sum(m * np.exp(-x * x) for x, m in zip(xs, ms))
    oracle = 2 * val * half_d2 + sq
    got = ito_drift(F, mu3, 0, ControlledDynamics.constant(0.0, 1.0, 1.0))
    assert got == pytest.approx(oracle, rel=1e-13)


def test_ito_drift_linear_in_F(phi, phi2, mu3):
    dyn = ControlledDynamics(lambda x, m, a: 0.2 * x, 0.8, lambda x, m, a: 1 + 0 * x)
    F1 = CylinderFunctional.build("phi^2", [phi])
    F2 = CylinderFunctional.build("phi phi2", [phi, phi2])
    both = CylinderFunctional.build("2 phi^2 - 5 phi phi2", [phi, phi2])
    expected = 2 * ito_drift(F1, mu3, 0, dyn) - 5 * ito_drift(F2, mu3, 0, dyn)
    assert ito_drift(both, mu3, 0, dyn) == pytest.approx(expected, rel=1e-13)


def test_ito_drift_requires_hessian(phi, mu3):
    F = CylinderFunctional((phi,), Outer("phi^2", ["phi"], hessian=False))
    with pytest.raises(CapabilityError):
        ito_drift(F, mu3, 0, ControlledDynamics.constant())


def test_ito_drift_time_dependence(phi, mu3):
    F = CylinderFunctional.build("t phi", [phi])
    with pytest.raises(InputError):
        ito_drift(F, mu3, 0, ControlledDynamics.constant())
    dyn = ControlledDynamics.constant(0.0, 0.0, 1.0)
    assert ito_drift(F, mu3, 0, dyn, t=0.5) == pytest.approx(mu3.integrate(phi), rel=1e-15)


def test_ito_drift_heat_field_cancels(mu3):
    # d/dt P_{T-t} phi + (1/2) (P_{T-t} phi)'' = 0, so a linear functional has zero drift
    w = TimeField.heat_gaussian(1.0, 1.0, name="w")
    F = CylinderFunctional.build("w", [w])
    assert ito_drift(F, mu3, 0, ControlledDynamics.constant(0.0, 1.0, 2.0), t=0.4) == 0.0


# general operators


def test_operator_drift_identity_noise_matches_ito_drift(phi, phi2, mu3):
    F = CylinderFunctional.build("phi^2 + phi phi2", [phi, phi2])
    L1 = OperatorSpec(b1=0.3, b2=0.5)
    L2 = OperatorSpec(b0=1.0)
    dyn = ControlledDynamics.constant(0.3, 1.0, 1.0)
    assert corollary1_drift(F, mu3, L1, L2) == pytest.approx(ito_drift(F, mu3, 0, dyn), rel=1e-13)


def test_operator_drift_sqrt_gamma_noise(phi, mu3):
    gamma = 2.5
    F = CylinderFunctional.build("phi^3", [phi])
    L1 = OperatorSpec(b2=0.5)
    L2 = OperatorSpec(b0=np.sqrt(gamma))
    dyn = ControlledDynamics.constant(0.0, 1.0, gamma)
    assert corollary1_drift(F, mu3, L1, L2) == pytest.approx(ito_drift(F, mu3, 0, dyn), rel=1e-13)


def test_operator_drift_derivative_noise_symbolic_oracle(mu3):
    x = sp.Symbol("x", real=True)
    expr = sp.exp(-x**2 / 2)
    dphi = sp.lambdify(x, sp.diff(expr, x))
    phi = SmoothScalarField.gaussian(0.0, 1.0, name="phi")
    F = CylinderFunctional.build("phi^2", [phi])
    got = corollary1_drift(F, mu3, OperatorSpec(), OperatorSpec(b1=1.0))
    oracle = sum(m * dphi(p) ** 2 for p, m in zip(mu3.x, mu3.masses))
    assert got == pytest.approx(oracle, rel=1e-13)


def test_dynamics_check_flags_violations():
    dyn = ControlledDynamics(lambda x, m, a: 2 * x, 1.0, lambda x, m, a: x, bounds=(1.0, 1.0, 10.0))
    problems = dyn.check(np.linspace(-1, 1, 11), FiniteMeasure.empty(), 0.0)
    assert any("|b|" in p for p in problems)
    assert any("negative" in p for p in problems)
    assert ControlledDynamics.constant(0.5, 1.0, 2.0).check(np.linspace(-1, 1, 11), FiniteMeasure.empty(), 0) == []
