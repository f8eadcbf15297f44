"""Branching Euler-Maruyama particle approximation of a controlled super-diffusion.

Particles carry a fixed mass ``w`` (``1/N`` up to the initial atom split).
Per step of size ``h`` they move by ``b h + sigma sqrt(h) Z`` and undergo
critical binary branching at per-particle rate ``gamma / w``.  All
coefficients and actions are evaluated against the pre-step empirical
measure.

Particles sharing a position are stored as one group ``(x, w, count)``.
Groups are expanded into individual particles only when they have to move
randomly, so pure-branching runs stay cheap at any population size.

For every registered test field the simulator records, at each step, the
integrals needed by the Ito harness:

* ``values[k, i]  = <phi_i(t_k), mu_k>``
* ``gens[k, i]    = <L phi_i, mu_k>`` (with the step's actions)
* ``gram[k, i, j] = <gamma phi_i phi_j, mu_k>``
* ``dtv[k, i]     = <d phi_i / dt (t_k), mu_k>`` for time-dependent fields
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from mvcalc.errors import InputError, ResourceError
from mvcalc.functional import (
    ControlledDynamics,
    SmoothScalarField,
    TimeField,
    _apply_L,
)
from mvcalc.measure import FiniteMeasure

ONE = "one"

# stream purposes for SeedSequence([seed, path, purpose])
_MOTION, _BRANCHING = 0, 1


def path_rng(seed: int, path: int, purpose: int) -> np.random.Generator:
    """Counter-based stream for one (seed, path, purpose); independent of path count."""
    if seed < 0 or path < 0:
        raise InputError("seed and path index must be nonnegative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(path), purpose])))


# ---------------------------------------------------------------------------
# policies


@dataclass(frozen=True)
class Policy:
    """Markov feedback ``rule(t, x, mu) -> a`` with values in a finite grid ``actions``."""

    rule: Callable
    actions: tuple
    name: str = ""
    constant_action: float | None = None

    def __post_init__(self):
        acts = tuple(float(a) for a in self.actions)
        if not acts or not all(math.isfinite(a) for a in acts):
            raise InputError("action grid must be a nonempty set of finite numbers")
        object.__setattr__(self, "actions", acts)
        if self.constant_action is not None and float(self.constant_action) not in acts:
            raise InputError(f"action {self.constant_action} is not in the grid {acts}")

    @classmethod
    def constant(cls, a: float = 0.0, actions: Sequence[float] | None = None, name: str = "") -> "Policy":
        a = float(a)
        return cls(lambda t, x, mu: a, tuple(actions) if actions is not None else (a,),
                   name or f"const({a:g})", constant_action=a)

    def actions_at(self, t: float, x, mu: FiniteMeasure) -> np.ndarray:
        n = np.shape(x)[0]
        if self.constant_action is not None:
            return np.full(n, self.constant_action)
        a = np.broadcast_to(np.asarray(self.rule(t, x, mu), dtype=float), (n,))
        if not np.all(np.isin(a, self.actions)):
            bad = a[~np.isin(a, self.actions)][0]
            raise InputError(f"policy {self.name!r} returned {bad!r}, outside its action grid {self.actions}")
        return a


def table_policy(table, actions: Sequence[float], t_edges: Sequence[float] = (),
                 x_edges: Sequence[float] = (), mass_edges: Sequence[float] = (), name: str = "") -> Policy:
    """Lookup-table policy over (time bin, position bin, total-mass bin).

    ``table`` has shape ``(len(t_edges)+1, len(x_edges)+1, len(mass_edges)+1)``;
    bins follow ``numpy.digitize`` (edge values belong to the upper bin).
    """
    tab = np.asarray(table, dtype=float)
    te, xe, me = (np.asarray(e, dtype=float) for e in (t_edges, x_edges, mass_edges))
    if tab.shape != (len(te) + 1, len(xe) + 1, len(me) + 1):
        raise InputError(f"table shape {tab.shape} does not match the bin edges")
    if not np.all(np.isin(tab, np.asarray(actions, dtype=float))):
        raise InputError("table entries must lie in the action grid")

    def rule(t, x, mu):
        xs = np.asarray(x, dtype=float)
        xs = xs if xs.ndim == 1 else xs[:, 0]
        return tab[np.digitize(t, te), np.digitize(xs, xe), np.digitize(mu.total_mass, me)]

    return Policy(rule, tuple(actions), name or "table")


# ---------------------------------------------------------------------------
# configuration


def _default_dynamics() -> ControlledDynamics:
    return ControlledDynamics.constant(0.0, 1.0, 1.0)


def _default_policy() -> Policy:
    return Policy.constant(0.0)


BRANCHING_MODES = ("exact", "bernoulli")


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``branching="exact"`` draws each particle's offspring count over a step
    from the exact law of critical binary branching run for time ``h``; it is
    valid for any step size.  ``"bernoulli"`` branches at most once per step
    with probability ``h gamma / w`` and therefore requires
    ``h N sup(gamma) < 1``.
    """

    N: int
    h: float
    t0: float = 0.0
    T: float = 1.0
    seed: int = 0
    dynamics: ControlledDynamics = field(default_factory=_default_dynamics)
    policy: Policy = field(default_factory=_default_policy)
    snapshot_stride: int = 0
    branching: str = "exact"
    max_particles: int = 10_000_000

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise InputError("N (particles per unit mass) must be a positive integer")
        if not (self.h > 0 and math.isfinite(self.h)):
            raise InputError("step h must be positive")
        if not self.T > self.t0:
            raise InputError("horizon needs T > t0")
        steps = (self.T - self.t0) / self.h
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise InputError(f"horizon length {self.T - self.t0} is not a multiple of h={self.h}")
        if self.snapshot_stride < 0:
            raise InputError("snapshot_stride must be >= 0")
        if self.branching not in BRANCHING_MODES:
            raise InputError(f"branching must be one of {BRANCHING_MODES}")
        if self.branching == "bernoulli":
            p = self.h * self.N * self.dynamics.bounds[2]
            if not p < 1:
                raise InputError(f"bernoulli branching needs h*N*sup(gamma) < 1, got {p:g}")
        if self.seed < 0 or self.seed >= 2**64:
            raise InputError("seed must be an unsigned 64-bit integer")

    @property
    def n_steps(self) -> int:
        return int(round((self.T - self.t0) / self.h))

    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.n_steps + 1)

    def snapshot_steps(self) -> np.ndarray:
        n = self.n_steps
        stride = self.snapshot_stride or n
        return np.unique(np.append(np.arange(0, n + 1, stride), n))


# ---------------------------------------------------------------------------
# traces


@dataclass(frozen=True)
class Trace:
    """One simulated path with per-step records for the registered fields."""

    path: int
    h: float
    times: np.ndarray                 # (n+1,)
    snapshots: tuple                  # ((step, FiniteMeasure), ...)
    field_names: tuple
    values: np.ndarray                # (n+1, m)
    gens: np.ndarray                  # (n, m)
    gram: np.ndarray                  # (n, m, m)
    dtv: np.ndarray                   # (n, m)
    observables: dict                 # name -> (n,) per-step integrals
    particles: np.ndarray             # (n+1,) particle counts

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def snapshot_times(self) -> np.ndarray:
        return np.array([self.times[k] for k, _ in self.snapshots])

    def step_index(self, t: float) -> int:
        k = int(round((t - self.times[0]) / self.h))
        if not 0 <= k <= self.n_steps or abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise InputError(f"time {t} is not on the simulation grid")
        return k

    def snapshot_at(self, t: float) -> FiniteMeasure:
        k = self.step_index(t)
        for step, mu in self.snapshots:
            if step == k:
                return mu
        raise InputError(f"no snapshot stored at time {t}")

    def field_index(self, f) -> int:
        name = f if isinstance(f, str) else f.name
        try:
            return self.field_names.index(name)
        except ValueError:
            raise InputError(f"test function {name!r} was not registered for this trace") from None

    @property
    def mass(self) -> np.ndarray:
        return self.values[:, self.field_index(ONE)]

    def increments(self) -> np.ndarray:
        """Per-step compensated increments ``(n, m)``."""
        return np.diff(self.values, axis=0) - self.h * (self.gens + self.dtv)


def compensated_sum(fvals: np.ndarray, drift: np.ndarray, h: float, i: int, j: int) -> float:
    """``f_j - f_i - sum_{k=i}^{j-1} h drift_k``; the one summation used for every residual."""
    return float((fvals[j] - fvals[i]) - math.fsum(h * drift[i:j]))


def martingale_increment(trace: Trace, f, s: float, t: float) -> float:
    """Discrete martingale-measure integral of ``f`` over ``[s, t]``."""
    i, j = trace.step_index(s), trace.step_index(t)
    if not i < j:
        raise InputError("need s < t")
    col = trace.field_index(f)
    return compensated_sum(trace.values[:, col], trace.gens[:, col] + trace.dtv[:, col], trace.h, i, j)


# ---------------------------------------------------------------------------
# simulation


def _offspring_exact(rng: np.random.Generator, counts: np.ndarray, rate: np.ndarray, h: float) -> np.ndarray:
    """Population after time ``h`` of ``counts`` independent critical binary branchers.

    A single particle leaves 0 with probability ``q/(1+q)``, ``q = rate h / 2``,
    and otherwise a geometric number on {1, 2, ...} with parameter ``p = 1/(1+q)``,
    i.e. ``P(Z >= k) = p (1-p)^(k-1)``.  Single particles are drawn by inversion
    from one uniform; larger groups via binomial survivors plus a negative
    binomial number of extra offspring.
    """
    p = 1.0 / (1.0 + 0.5 * rate * h)
    out = np.empty_like(counts)
    single = counts == 1
    if np.any(single):
        ps = p[single]
        u = 1.0 - rng.random(ps.shape[0])  # (0, 1]
        z = np.zeros(ps.shape[0], dtype=counts.dtype)
        live = u <= ps
        with np.errstate(divide="ignore"):
            z[live] = 1 + np.floor(np.log(u[live] / ps[live]) / np.log1p(-ps[live])).astype(counts.dtype)
        out[single] = z
    group = ~single
    if np.any(group):
        pg = p[group]
        alive = rng.binomial(counts[group], pg)
        extra = np.zeros_like(alive)
        many = alive > 0
        extra[many] = rng.negative_binomial(alive[many], pg[many])
        out[group] = alive + extra
    return out


def _offspring_bernoulli(rng: np.random.Generator, counts: np.ndarray, rate: np.ndarray, h: float) -> np.ndarray:
    events = rng.binomial(counts, np.minimum(rate * h, 1.0))
    births = rng.binomial(events, 0.5)
    return counts - events + 2 * births


def _as_fields(registered: Sequence, dim: int = 1) -> list:
    fields: list = [SmoothScalarField.constant(1.0, name=ONE, dim=dim)]
    seen = {ONE}
    for f in registered:
        if f.name in seen:
            continue
        seen.add(f.name)
        fields.append(f)
    return fields


def _moments(fields, t, x, w, b, s, g):
    m = len(fields)
    vals = np.empty((m, len(w)))
    lvals = np.empty((m, len(w)))
    dts = np.zeros(m)
    for i, f in enumerate(fields):
        if isinstance(f, TimeField):
            vals[i], d1, d2 = f.at(t).all(x)
            dts[i] = f.dt_at(t)(x) @ w
        else:
            vals[i], d1, d2 = f.all(x)
        lvals[i] = _apply_L(d1, d2, b, s)
    return vals @ w, lvals @ w, (vals * (w * g)) @ vals.T, dts


def _values(fields, t, x, w):
    out = np.empty(len(fields))
    for i, f in enumerate(fields):
        ff = f.at(t) if isinstance(f, TimeField) else f
        out[i] = ff(x) @ w if len(w) else 0.0
    return out


def initial_particles(mu0: FiniteMeasure, N: int):
    """Split atom ``(x, m)`` into ``ceil(N m)`` particles of mass ``m / ceil(N m)``."""
    keep = mu0.masses > 0
    pos = mu0.positions[keep]
    m = mu0.masses[keep]
    counts = np.ceil(N * m).astype(np.int64)
    return pos.copy(), m / counts, counts


def simulate(mu0: FiniteMeasure, cfg: SimConfig, registered_tests: Sequence = (), path: int = 0,
             observables: dict | None = None) -> Trace:
    """Simulate one path.

    ``registered_tests`` are SmoothScalarField or TimeField objects (the
    constant field ``"one"`` is always registered first).  ``observables``
    maps names to per-atom callables ``(x, mu, a)`` whose integrals against
    ``mu_k`` are recorded at every step (e.g. a running cost).
    """
    dim = mu0.dim
    fields = _as_fields(registered_tests, dim)
    for f in fields:
        if getattr(f, "dim", 1) != dim:
            raise InputError(f"field {f.name!r} has dimension {f.dim}, measure has {dim}")
    observables = dict(observables or {})
    dyn, pol = cfg.dynamics, cfg.policy
    n, h = cfg.n_steps, cfg.h
    times = cfg.times()
    snap_steps = set(cfg.snapshot_steps().tolist())
    motion_rng = path_rng(cfg.seed, path, _MOTION)
    branch_rng = path_rng(cfg.seed, path, _BRANCHING)
    offspring = _offspring_exact if cfg.branching == "exact" else _offspring_bernoulli

    pos, w, cnt = initial_particles(mu0, cfg.N)
    if dim == 1:
        pos = pos.reshape(-1)
    if cnt.sum() > cfg.max_particles:
        raise ResourceError(f"initial population {int(cnt.sum())} exceeds the cap {cfg.max_particles}")
    m = len(fields)
    values = np.empty((n + 1, m))
    gens = np.empty((n, m))
    gram = np.empty((n, m, m))
    dtv = np.zeros((n, m))
    obs = {k: np.empty(n) for k in observables}
    particles = np.empty(n + 1, dtype=np.int64)
    snapshots = []
    sqrt_h = math.sqrt(h)

    def measure():
        return FiniteMeasure._trusted(pos if dim > 1 else pos.reshape(-1, 1), w * cnt)

    for k in range(n):
        t = times[k]
        mu = measure()
        if k in snap_steps:
            snapshots.append((k, mu))
        particles[k] = cnt.sum()
        xs = mu.x
        wc = mu.masses
        a = pol.actions_at(t, xs, mu)
        b, s, g = dyn.coefficients(xs, mu, a)
        if len(wc):
            values[k], gens[k], gram[k], dtv[k] = _moments(fields, t, xs, wc, b, s, g)
        else:
            values[k] = gens[k] = dtv[k] = 0.0
            gram[k] = 0.0
        for name, fn in observables.items():
            obs[name][k] = float(np.broadcast_to(np.asarray(fn(xs, mu, a), dtype=float), wc.shape) @ wc) if len(wc) else 0.0
        if not len(wc):
            continue

        # motion
        moving = bool(np.any(s != 0))
        if moving and np.any(cnt > 1):
            pos, w, b, s, g = (np.repeat(arr, cnt, axis=0) for arr in (pos, w, b, s, g))
            cnt = np.ones(len(w), dtype=np.int64)
        step = b * h
        if moving:
            step = step + s * sqrt_h * motion_rng.standard_normal(pos.shape)
        pos = pos + step

        # branching, evaluated with pre-step gamma
        active = g > 0
        if np.all(active):
            new = offspring(branch_rng, cnt, g / w, h)
        elif np.any(active):
            new = cnt.copy()
            new[active] = offspring(branch_rng, cnt[active], g[active] / w[active], h)
        if np.any(active):
            alive = new > 0
            pos, w, cnt = pos[alive], w[alive], new[alive]
            total = int(cnt.sum())
            if total > cfg.max_particles:
                raise ResourceError(
                    f"population {total} exceeds the cap {cfg.max_particles} at t={times[k + 1]:g} (path {path})"
                )

    mu = measure()
    snapshots.append((n, mu))
    particles[n] = cnt.sum()
    values[n] = _values(fields, times[n], mu.x, mu.masses)
    return Trace(
        path=path,
        h=h,
        times=times,
        snapshots=tuple(snapshots),
        field_names=tuple(f.name for f in fields),
        values=values,
        gens=gens,
        gram=gram,
        dtv=dtv,
        observables=obs,
        particles=particles,
    )


def simulate_paths(mu0: FiniteMeasure, cfg: SimConfig, registered_tests: Sequence = (), paths: int = 1,
                   observables: dict | None = None, first_path: int = 0, threads: int = 1) -> list[Trace]:
    """Independent paths ``first_path .. first_path + paths - 1``, returned in path order."""
    ids = range(first_path, first_path + paths)
    if threads <= 1:
        return [simulate(mu0, cfg, registered_tests, p, observables) for p in ids]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda p: simulate(mu0, cfg, registered_tests, p, observables), ids))


# ---------------------------------------------------------------------------
# records


def snapshot_records(traces: Sequence[Trace], summary=None) -> list[str]:
    """One JSON line per snapshot.  ``summary`` (a TestFamily) replaces the
    full measure by its integrals ``<phi_k, mu>``."""
    lines = []
    for tr in traces:
        for step, mu in tr.snapshots:
            rec = {"path": tr.path, "step": int(step), "time": float(tr.times[step])}
            if summary is None:
                rec["dim"] = mu.dim
                rec["positions"] = mu.positions.tolist()
                rec["masses"] = mu.masses.tolist()
            else:
                rec["integrals"] = summary.integrals(mu).tolist()
            lines.append(json.dumps(rec, separators=(",", ":")))
    return lines


def increment_rows(traces: Sequence[Trace]) -> list[tuple]:
    """``(path, step, test, value)`` for every registered field and step."""
    rows = []
    for tr in traces:
        inc = tr.increments()
        for k in range(tr.n_steps):
            for i, name in enumerate(tr.field_names):
                rows.append((tr.path, k, name, float(inc[k, i])))
    return rows
