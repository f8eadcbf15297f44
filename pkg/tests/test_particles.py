import json
import math

import numpy as np
import pytest

from mvcalc.errors import InputError, ResourceError
from mvcalc.functional import ControlledDynamics, SmoothScalarField
from mvcalc.measure import FiniteMeasure, TestFamily
from mvcalc.particles import (
    ONE,
    Policy,
    SimConfig,
    _offspring_exact,
    increment_rows,
    initial_particles,
    martingale_increment,
    path_rng,
    simulate,
    simulate_paths,
    snapshot_records,
    table_policy,
)

IDENT = SmoothScalarField.from_expr("x", name="x")
PURE_BRANCHING = ControlledDynamics.constant(0.0, 0.0, 1.0)


@pytest.fixture
def mu0():
    return FiniteMeasure.from_atoms([(-0.5, 0.25), (0.0, 0.5), (0.75, 0.25)])


def cfg(**kw):
    base = dict(N=40, h=0.125, T=1.0, seed=7)
    base.update(kw)
    return SimConfig(**base)


def test_frozen_dynamics(mu0, phi):
    tr = simulate(mu0, cfg(dynamics=ControlledDynamics.constant(0.0, 0.0, 0.0)), [phi])
    assert np.all(tr.values == tr.values[0])
    assert np.all(tr.increments() == 0.0)
    assert martingale_increment(tr, phi, 0.0, 1.0) == 0.0


def test_translation(mu0):
    tr = simulate(mu0, cfg(dynamics=ControlledDynamics.constant(1.0, 0.0, 0.0), snapshot_stride=1), [IDENT])
    first, last = tr.snapshot_at(0.0), tr.snapshot_at(1.0)
    np.testing.assert_array_equal(np.sort(last.x), np.sort(first.x) + 1.0)
    xv = tr.values[:, tr.field_index("x")]
    np.testing.assert_array_equal(np.diff(xv), 0.125 * mu0.total_mass)
    assert martingale_increment(tr, IDENT, 0.25, 1.0) == 0.0


def test_constant_field_increment_is_mass_change(mu0):
    tr = simulate(mu0, cfg(dynamics=PURE_BRANCHING))
    assert martingale_increment(tr, ONE, 0.25, 0.75) == tr.mass[6] - tr.mass[2]


def test_unregistered_field_rejected(mu0, phi):
    tr = simulate(mu0, cfg())
    with pytest.raises(InputError):
        martingale_increment(tr, phi, 0.0, 1.0)
    with pytest.raises(InputError):
        martingale_increment(tr, ONE, 0.5, 0.5)
    with pytest.raises(InputError):
        tr.snapshot_at(0.5)


def test_no_branching_keeps_particle_count(mu0):
    tr = simulate(mu0, cfg(dynamics=ControlledDynamics.constant(0.3, 1.0, 0.0)))
    assert np.all(tr.particles == tr.particles[0])
    assert tr.mass[-1] == pytest.approx(mu0.total_mass, rel=1e-14)


def test_snapshots(mu0):
    tr = simulate(mu0, cfg(snapshot_stride=3))
    steps = [k for k, _ in tr.snapshots]
    assert steps == [0, 3, 6, 8]
    t = tr.snapshot_times()
    assert np.all(np.diff(t) > 0)
    first = tr.snapshots[0][1]
    assert first.total_mass == pytest.approx(mu0.total_mass, rel=1e-15)
    for x, m in zip(mu0.x, mu0.masses):
        assert first.masses[first.x == x].sum() == pytest.approx(m, rel=1e-15)


def test_initial_particles_split_atoms():
    mu = FiniteMeasure.from_atoms([(0.0, 0.3), (1.0, 1.0), (2.0, 0.0)])
    pos, w, cnt = initial_particles(mu, 10)
    np.testing.assert_array_equal(cnt, [3, 10])
    np.testing.assert_allclose(w * cnt, [0.3, 1.0])


def test_determinism_and_stream_independence(mu0, phi):
    c = cfg(dynamics=ControlledDynamics.constant(0.0, 1.0, 1.0))
    a = simulate_paths(mu0, c, [phi], paths=3)
    b = simulate_paths(mu0, c, [phi], paths=5, threads=3)
    for ta, tb in zip(a, b):
        np.testing.assert_array_equal(ta.values, tb.values)
        np.testing.assert_array_equal(ta.gram, tb.gram)
        assert ta.snapshots[-1][1] == tb.snapshots[-1][1]
    other = simulate(mu0, SimConfig(**{**c.__dict__, "seed": 8}), [phi])
    assert not np.array_equal(other.values, a[0].values)


def test_path_rng_independent_of_count():
    x = path_rng(3, 5, 0).random(4)
    np.testing.assert_array_equal(x, path_rng(3, 5, 0).random(4))
    assert not np.array_equal(x, path_rng(3, 5, 1).random(4))
    with pytest.raises(InputError):
        path_rng(-1, 0, 0)


@pytest.mark.parametrize("count", [1, 4])
def test_offspring_law_moments(count):
    rng = np.random.default_rng(99)
    rate, h, n = 20.0, 0.1, 200_000
    q = rate * h / 2
    z = _offspring_exact(rng, np.full(n, count), np.full(n, rate), h)
    # critical: mean c, variance c * rate * h, extinction ((q/(1+q))^c)
    assert abs(z.mean() - count) < 4 * math.sqrt(count * rate * h / n)
    assert z.var() == pytest.approx(count * rate * h, rel=0.05)
    p0 = (q / (1 + q)) ** count
    assert abs(np.mean(z == 0) - p0) < 4 * math.sqrt(p0 * (1 - p0) / n)


def test_config_validation():
    with pytest.raises(InputError):
        SimConfig(N=0, h=0.1)
    with pytest.raises(InputError):
        SimConfig(N=10, h=0.3)
    with pytest.raises(InputError):
        SimConfig(N=10, h=0.1, T=0.0)
    with pytest.raises(InputError):
        SimConfig(N=100, h=0.1, branching="bernoulli")
    with pytest.raises(InputError):
        SimConfig(N=10, h=0.1, seed=2**64)
    SimConfig(N=5, h=0.1, branching="bernoulli")


def test_bernoulli_mode_runs(mu0):
    tr = simulate(mu0, SimConfig(N=5, h=0.125, seed=1, branching="bernoulli",
                                 dynamics=ControlledDynamics.constant(0.0, 1.0, 1.0)))
    assert np.all(tr.particles >= 0)


def test_population_cap(mu0):
    with pytest.raises(ResourceError):
        simulate(mu0, cfg(N=1000, max_particles=500))
    with pytest.raises(ResourceError):
        simulate(FiniteMeasure.dirac(0.0, 5.0), cfg(N=50, h=0.0625, max_particles=300,
                                                    dynamics=ControlledDynamics.constant(0.0, 1.0, 1.0)))


def test_policy_grid_enforced(mu0):
    bad = Policy(lambda t, x, mu: 0.5, (0.0, 1.0), "bad")
    with pytest.raises(InputError):
        simulate(mu0, cfg(policy=bad))
    with pytest.raises(InputError):
        Policy.constant(2.0, actions=(0.0, 1.0))


def test_table_policy_bins(mu0):
    pol = table_policy([[[0.0], [1.0]], [[1.0], [1.0]]], (0.0, 1.0), t_edges=[0.5], x_edges=[0.0])
    np.testing.assert_array_equal(pol.actions_at(0.0, mu0.x, mu0), [0.0, 1.0, 1.0])
    np.testing.assert_array_equal(pol.actions_at(0.7, mu0.x, mu0), [1.0, 1.0, 1.0])
    with pytest.raises(InputError):
        table_policy([[[2.0]]], (0.0, 1.0))


def test_controlled_branching_uses_policy(mu0):
    dyn = ControlledDynamics(0.0, 0.0, lambda x, m, a: a, bounds=(0, 0, 1))
    still = simulate(mu0, cfg(dynamics=dyn, policy=Policy.constant(0.0, (0.0, 1.0))))
    assert np.all(still.particles == still.particles[0])
    moving = simulate(mu0, cfg(dynamics=dyn, policy=Policy.constant(1.0, (0.0, 1.0))))
    assert not np.all(moving.particles == moving.particles[0])


def test_mass_is_martingale_small_scale():
    c = SimConfig(N=100, h=0.05, T=1.0, seed=2024, dynamics=PURE_BRANCHING)
    masses = np.array([tr.mass[-1] for tr in simulate_paths(FiniteMeasure.dirac(0.0), c, paths=400)])
    se = masses.std(ddof=1) / math.sqrt(len(masses))
    assert abs(masses.mean() - 1.0) <= 3 * se


def test_two_dimensional_simulation(rng):
    mu = FiniteMeasure(rng.normal(size=(3, 2)), [0.2, 0.3, 0.5])
    tr = simulate(mu, cfg(N=20, dynamics=ControlledDynamics.constant(0.0, 1.0, 0.5)))
    assert tr.snapshots[-1][1].dim == 2


def test_records(mu0, family):
    trs = simulate_paths(mu0, cfg(), paths=2)
    lines = snapshot_records(trs)
    rec = json.loads(lines[0])
    assert rec["path"] == 0 and rec["time"] == 0.0 and len(rec["masses"]) == len(rec["positions"])
    summ = json.loads(snapshot_records(trs, summary=TestFamily(K=5))[-1])
    assert len(summ["integrals"]) == 6
    rows = increment_rows(trs)
    assert len(rows) == 2 * 8 * 1
    assert rows[0][:3] == (0, 0, ONE)
