import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvcalc.errors import InputError
from mvcalc.measure import CutoffProfile, FiniteMeasure, TestFamily, cutoff, integrate, metric, norm

from conftest import random_measure


def test_integrate_examples():
    assert integrate(FiniteMeasure.from_atoms([(0.0, 1.0)]), lambda x: x**2) == 0.0
    mu = FiniteMeasure.from_atoms([(1.0, 0.5), (2.0, 0.25)])
    assert integrate(mu, lambda x: x) == 1.0


def test_integrate_total_mass(rng):
    for _ in range(100):
        x0, m0 = rng.normal(0, 5), rng.uniform(0, 10)
        mu = FiniteMeasure.from_atoms([(x0, m0)])
        assert integrate(mu, lambda x: np.ones_like(x)) == m0


def test_integrate_dimension_mismatch(phi):
    mu = FiniteMeasure(np.zeros((2, 2)), [1.0, 1.0])
    with pytest.raises(InputError):
        integrate(mu, phi)


def test_measure_rejects_negative_mass():
    with pytest.raises(InputError):
        FiniteMeasure([0.0, 1.0], [1.0, -0.5])


def test_pruning_keeps_integrals(rng):
    mu = FiniteMeasure([0.0, 1.0, 2.0], [1.0, 0.0, 2.0])
    f = np.cos
    assert mu.pruned().integrate(f) == pytest.approx(mu.integrate(f), abs=0)
    assert len(mu.pruned()) == 2


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_integration_is_linear(a, b, seed):
    mu = random_measure(np.random.default_rng(seed))
    lhs = mu.integrate(lambda x: a * np.sin(x) + b * np.exp(-x * x))
    rhs = a * mu.integrate(np.sin) + b * mu.integrate(lambda x: np.exp(-x * x))
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_text_round_trip(rng):
    mu = FiniteMeasure(rng.normal(size=(4, 2)), rng.uniform(size=4))
    back = FiniteMeasure.from_text(mu.to_text())
    assert back == mu
    assert mu.to_text().splitlines()[0] == "dim=2 atoms=4"


def test_text_rejects_bad_atom_count():
    with pytest.raises(InputError):
        FiniteMeasure.from_text("dim=1 atoms=2\n0.0 1.0\n")


# test family


def test_family_invariants(family):
    assert len(family) == 65
    xs = np.linspace(-20, 20, 20001)
    np.testing.assert_array_equal(family[0](xs), 1.0)
    assert family.q[0] == 1.0
    assert np.all(family.q >= 1.0)
    for f in family.functions:
        assert np.max(np.abs(f(xs))) <= 1.0 + 1e-12


def test_family_weights_match_independent_sup_estimate(family):
    # q_k from a fresh fine grid and finite differences of the value alone
    xs = np.linspace(-40, 40, 400001)
    dx = xs[1] - xs[0]
    for k in range(1, len(family)):
        v = family[k](xs)
        d1 = np.gradient(v, dx)
        d2 = np.gradient(d1, dx)
        q = max(1.0, np.max(np.abs(d1)) ** 2, np.max(np.abs(d2)) ** 2)
        assert family.q[k] == pytest.approx(q, rel=1e-3)


def test_empty_family_rejected():
    with pytest.raises(InputError):
        TestFamily(K=-1)


def test_family_config_round_trip():
    fam = TestFamily(K=10, dim=2)
    again = TestFamily.from_config(fam.to_config())
    np.testing.assert_array_equal(again.q, fam.q)


def test_metric_identity_and_lower_bound(family, rng):
    for _ in range(20):
        mu = random_measure(rng)
        assert metric(mu, mu, family) == 0.0
    for c in (0.1, 1.0, 3.5):
        mu = FiniteMeasure.from_atoms([(0.0, c)])
        assert metric(mu, FiniteMeasure.empty(), family) >= c
        assert norm(mu, family) >= c


def test_metric_oracle(family):
    # straight-line summation over the family, one function at a time
    mu = FiniteMeasure.from_atoms([(0.0, 1.0)])
    lam = FiniteMeasure.from_atoms([(0.5, 1.0)])
    total = 0.0
    for k in range(65):
        f = family.functions[k]
        diff = float(f(np.array([0.0]))[0]) - float(f(np.array([0.5]))[0])
        total += diff * diff / (2.0**k * f.q)
    assert metric(mu, lam, family) == pytest.approx(math.sqrt(total), rel=1e-14)


def test_metric_dimension_mismatch(family):
    with pytest.raises(InputError):
        metric(FiniteMeasure(np.zeros((1, 2)), [1.0]), FiniteMeasure(np.zeros((1, 2)), [1.0]), family)


def test_metric_symmetric_and_triangle(family, rng):
    for _ in range(200):
        a, b, c = (random_measure(rng) for _ in range(3))
        assert metric(a, b, family) == metric(b, a, family)
        assert metric(a, c, family) <= metric(a, b, family) + metric(b, c, family) + 1e-12


def test_metric_zero_means_equal_integrals(family):
    mu = FiniteMeasure.from_atoms([(0.3, 1.0), (0.3, 2.0)])
    lam = FiniteMeasure.from_atoms([(0.3, 3.0)])
    assert metric(mu, lam, family) == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(family.integrals(mu), family.integrals(lam), atol=1e-15)


def test_metric_in_two_dimensions(rng):
    fam = TestFamily(K=20, dim=2)
    a = FiniteMeasure(rng.normal(size=(3, 2)), rng.uniform(size=3))
    b = FiniteMeasure(rng.normal(size=(2, 2)), rng.uniform(size=2))
    assert metric(a, b, fam) == metric(b, a, fam) > 0


# cutoff


def test_cutoff_examples():
    prof = CutoffProfile(1)
    mu = FiniteMeasure.from_atoms([(0.0, 1.0)])
    assert cutoff(mu, prof) == mu
    far = cutoff(FiniteMeasure.from_atoms([(5.0, 1.0)]), prof)
    assert far.masses[0] == 0.0


@pytest.mark.parametrize("N", [1, 2, 5])
def test_cutoff_midpoint_matches_formula(N):
    # h(1/2) / (h(1/2) + h(1/2)) = 1/2 by symmetry of the midpoint
    x = N + 0.5
    h = math.exp(-1.0 / 0.5)
    expected = h / (h + h)
    out = cutoff(FiniteMeasure.from_atoms([(x, 2.0)]), CutoffProfile(N))
    assert out.masses[0] == pytest.approx(2.0 * expected, rel=1e-15)
    y = N + 0.25
    up, down = math.exp(-1 / 0.75), math.exp(-1 / 0.25)
    assert CutoffProfile(N)(np.array([y]))[0] == pytest.approx(up / (up + down), rel=1e-14)


def test_cutoff_profile_properties():
    prof = CutoffProfile(2)
    xs = np.linspace(-5, 5, 10001)
    r = prof(xs)
    assert np.all((r >= 0) & (r <= 1))
    assert np.all(r[np.abs(xs) <= 2] == 1.0)
    assert np.all(r[np.abs(xs) >= 3] == 0.0)
    # second differences stay bounded across the transition
    d2 = np.diff(r, 2) / (xs[1] - xs[0]) ** 2
    assert np.max(np.abs(d2)) < 50


def test_cutoff_profile_product_in_2d():
    prof = CutoffProfile(1)
    x = np.array([[0.0, 1.5], [1.5, 1.5], [0.5, 2.5]])
    np.testing.assert_allclose(prof(x), [0.5, 0.25, 0.0])


def test_cutoff_plateau_idempotent(rng):
    mu = FiniteMeasure(rng.uniform(-3, 3, 20), rng.uniform(size=20))
    assert cutoff(mu, CutoffProfile(3)) == mu


def test_cutoff_integral_identity(rng):
    mu = FiniteMeasure(rng.normal(0, 3, 30), rng.uniform(size=30))
    prof = CutoffProfile(2)
    lhs = cutoff(mu, prof).integrate(np.cos)
    rhs = mu.integrate(lambda x: np.cos(x) * prof(x))
    assert lhs == pytest.approx(rhs, rel=1e-14)


def test_cutoff_monotone_convergence(family, rng):
    mu = FiniteMeasure(rng.normal(0, 3, 30), rng.uniform(size=30))
    dists = [metric(cutoff(mu, CutoffProfile(N)), mu, family) for N in range(1, 15)]
    assert all(b <= a for a, b in zip(dists, dists[1:]))
    top = int(np.max(np.abs(mu.x)))
    assert metric(cutoff(mu, CutoffProfile(top + 1)), mu, family) == 0.0


def test_cutoff_level_must_be_positive():
    with pytest.raises(InputError):
        CutoffProfile(0)
