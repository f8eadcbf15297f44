"""Costs, value estimates, Hamiltonian and HJB residuals for the controlled superprocess.

The value of a policy is ``J = E[ sum_k h <f(., mu_k, a_k), mu_k> + g(mu_T) ]``
estimated over simulated paths; policies are compared on common random
numbers (identical seeds), so differences between policies are not blurred
by independent sampling noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from mvcalc.errors import InputError
from mvcalc.functional import ControlledDynamics, CylinderFunctional, ito_drift
from mvcalc.measure import FiniteMeasure, TestFamily, norm
from mvcalc.particles import Policy, SimConfig, Trace, simulate

RUNNING = "running_cost"


def _zero_running(x, mu, a):
    return 0.0


def _zero_terminal(mu):
    return 0.0


@dataclass(frozen=True)
class CostSpec:
    """Running cost ``f(x, mu, a)`` (vectorised over atoms) and terminal cost ``g(mu)``.

    ``C`` and ``p`` certify ``|f|, g <= C (1 + |mu|^p)`` with ``|mu|`` the
    test-family norm; ``check_growth`` spot-checks the claim.
    """

    running: Callable = _zero_running
    terminal: Callable = _zero_terminal
    C: float = math.inf
    p: float = 1.0
    description: str = ""

    def running_at(self, x, mu: FiniteMeasure, a) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.running(x, mu, a), dtype=float), np.shape(a)).astype(float)

    def check_growth(self, samples: Sequence[tuple], family: TestFamily) -> list[str]:
        """``samples`` of ``(x, mu, a)``; returns a message per violated bound."""
        problems = []
        for x, mu, a in samples:
            bound = self.C * (1.0 + norm(mu, family) ** self.p)
            fx = float(np.max(np.abs(self.running_at(np.atleast_1d(x), mu, np.atleast_1d(a)))))
            if fx > bound:
                problems.append(f"|f({x!r}, mu, {a!r})| = {fx:g} exceeds {bound:g}")
            g = float(self.terminal(mu))
            if g > bound:
                problems.append(f"g(mu) = {g:g} exceeds {bound:g} (mass {mu.total_mass:g})")
        return problems


def cost_observables(cost: CostSpec) -> dict:
    return {RUNNING: cost.running}


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    std_error: float
    samples: np.ndarray


def path_cost(trace: Trace, cost: CostSpec, t: float | None = None) -> float:
    """``sum_{k >= i} h <f, mu_k> + g(mu_T)`` on one path, ``i`` the step of ``t``."""
    if RUNNING not in trace.observables:
        raise InputError("trace was simulated without the running-cost observable")
    i = 0 if t is None else trace.step_index(t)
    run = trace.observables[RUNNING]
    return math.fsum(trace.h * run[i:]) + float(cost.terminal(trace.snapshots[-1][1]))


def cost_J(traces: Sequence[Trace], cost: CostSpec, policy: Policy | None = None, t: float | None = None) -> CostEstimate:
    """Monte-Carlo mean and standard error of the cost over ``traces``.

    ``policy`` is informational: the actions were fixed at simulation time.
    """
    if not traces:
        raise InputError("cost_J needs at least one trace")
    samples = np.array([path_cost(tr, cost, t) for tr in traces])
    se = float(np.std(samples, ddof=1) / math.sqrt(len(samples))) if len(samples) > 1 else math.inf
    return CostEstimate(float(np.mean(samples)), se, samples)


cost_J.__test__ = False


def simulate_cost(mu0: FiniteMeasure, cfg: SimConfig, cost: CostSpec, paths: int, first_path: int = 0,
                  registered_tests: Sequence = ()) -> list[Trace]:
    obs = cost_observables(cost)
    return [simulate(mu0, cfg, registered_tests, p, obs) for p in range(first_path, first_path + paths)]


@dataclass(frozen=True)
class ValueEstimate:
    value: float
    std_error: float
    argmin: int
    policy: Policy
    table: tuple  # ((name, mean, se), ...) in policy order

    def rows(self) -> list[str]:
        return [f"{name:<24} {m:>14.6e} {se:>12.4e}" for name, m, se in self.table]


def _policy_config(cfg: SimConfig, t: float, pol: Policy) -> SimConfig:
    if not t < cfg.T:
        raise InputError(f"start time {t} is not before the horizon {cfg.T}")
    return replace(cfg, t0=t, policy=pol)


def value_estimate(mu0: FiniteMeasure, t: float, policies: Sequence[Policy], cfg: SimConfig, cost: CostSpec,
                   paths: int = 100) -> ValueEstimate:
    """Minimum estimated cost over a finite policy list (common random numbers)."""
    if not policies:
        raise InputError("value_estimate needs at least one policy")
    table = []
    for pol in policies:
        est = cost_J(simulate_cost(mu0, _policy_config(cfg, t, pol), cost, paths), cost, pol)
        table.append((pol.name, est.mean, est.std_error))
    means = [m for _, m, _ in table]
    best = int(np.argmin(means))
    return ValueEstimate(means[best], table[best][2], best, policies[best], tuple(table))


@dataclass(frozen=True)
class DPPCheck:
    direct: float
    direct_se: float
    two_stage: float
    two_stage_se: float
    tau: float
    argmin: int
    passed: bool


def dpp_check(mu0: FiniteMeasure, t: float, tau: float, policies: Sequence[Policy], cfg: SimConfig,
              cost: CostSpec, paths: int = 100, inner_paths: int = 20) -> DPPCheck:
    """Direct value at ``t`` vs ``min_pi E[cost on [t, tau] + V(tau, mu_tau)]``.

    The inner value at each ``mu_tau`` is itself a policy-list estimate with
    ``inner_paths`` paths on a seed derived from the outer path index.
    Agreement is judged within three combined standard errors.
    """
    if not t < tau < cfg.T:
        raise InputError("need t < tau < T")
    direct = value_estimate(mu0, t, policies, cfg, cost, paths)
    stride = int(round((tau - t) / cfg.h))
    best_mean, best_se, best_k = math.inf, math.inf, 0
    for k, pol in enumerate(policies):
        c1 = replace(_policy_config(cfg, t, pol), snapshot_stride=stride)
        totals = []
        for p in range(paths):
            tr = simulate(mu0, c1, (), p, cost_observables(cost))
            i_tau = tr.step_index(tau)
            first = math.fsum(tr.h * tr.observables[RUNNING][:i_tau])
            mu_tau = tr.snapshot_at(tau)
            seed = int(np.random.SeedSequence([cfg.seed, p, 7]).generate_state(1, np.uint64)[0])
            inner = value_estimate(mu_tau, tau, policies, replace(cfg, seed=seed), cost, inner_paths)
            totals.append(first + inner.value)
        m = float(np.mean(totals))
        se = float(np.std(totals, ddof=1) / math.sqrt(paths)) if paths > 1 else math.inf
        if m < best_mean:
            best_mean, best_se, best_k = m, se, k
    combined = math.hypot(direct.std_error, best_se)
    passed = abs(direct.value - best_mean) <= 3.0 * combined
    return DPPCheck(direct.value, direct.std_error, best_mean, best_se, tau, best_k, bool(passed))


# ---------------------------------------------------------------------------
# Hamiltonian and HJB


def _sum_axes(v):
    v = np.asarray(v, dtype=float)
    return v if v.ndim == 1 else v.sum(axis=1)


def integrands(mu: FiniteMeasure, p, M, r, cost: CostSpec, dyn: ControlledDynamics, grid: Sequence[float]) -> np.ndarray:
    """``b p + (1/2) sigma^2 M + (1/2) gamma r + f`` per action (rows) and atom (columns)."""
    x = mu.x
    out = np.empty((len(grid), len(mu)))
    for k, a in enumerate(grid):
        acts = np.full(len(mu), float(a))
        b, s, g = dyn.coefficients(x, mu, acts)
        out[k] = _sum_axes(b * p + 0.5 * (s * s) * M) + 0.5 * g * r + cost.running_at(x, mu, acts)
    return out


def hamiltonian(mu: FiniteMeasure, p_fn: Callable, M_fn: Callable, r_fn: Callable, cost: CostSpec,
                dyn: ControlledDynamics, grid: Sequence[float]) -> float:
    """``int min_a [b p + (1/2) sigma^2 M + (1/2) gamma r + f] dmu`` with the min over ``grid``."""
    if len(grid) == 0:
        raise InputError("action grid is empty")
    if len(mu) == 0:
        return 0.0
    x = mu.x
    vals = integrands(mu, p_fn(x), M_fn(x), r_fn(x), cost, dyn, grid)
    return float(mu.masses @ vals.min(axis=0))


ValueCandidate = CylinderFunctional


def candidate_parts(W: CylinderFunctional, mu: FiniteMeasure, t: float):
    """Spatial data of ``W`` at the atoms: ``p = d/dx dW/dmu``, ``M = d2/dx2 dW/dmu``,
    ``r = d2W/dmu2(x, x)``."""
    fields = W.fields_at(t)
    td = t if W.outer.time_dependent else None
    v = np.array([mu.integrate(f) for f in fields])
    g = W.outer.grad(v, td)
    H = W.outer.hess(v, td)
    x = mu.x
    parts = [f.all(x) for f in fields]
    p = sum(g[i] * parts[i][1] for i in range(len(fields)))
    M = sum(g[i] * parts[i][2] for i in range(len(fields)))
    r = np.zeros(len(mu))
    for i in range(len(fields)):
        for j in range(len(fields)):
            if H[i, j] != 0.0:
                r = r + H[i, j] * parts[i][0] * parts[j][0]
    zeros = np.zeros(np.shape(x))
    return p + zeros, M + zeros, r


def _is_terminal(t: float, T: float) -> bool:
    return abs(t - T) <= 1e-12 * max(1.0, abs(T))


def hjb_residual(W: CylinderFunctional, t: float, mu: FiniteMeasure, dyn: ControlledDynamics, cost: CostSpec,
                 grid: Sequence[float], T: float, beta: float = 0.0, beta_sign: int = -1) -> float:
    """``dW/dt + H(mu, DW, D2W)`` for ``t < T`` (plus ``beta_sign * beta * W``); ``W - g`` at ``t = T``."""
    if _is_terminal(t, T):
        return float(W(mu, T)) - float(cost.terminal(mu))
    if t > T:
        raise InputError(f"t={t} is past the horizon T={T}")
    dt = W.dt(mu, t) if (W.time_dependent or W.has_time_fields) else 0.0
    if len(mu) == 0:
        ham = 0.0
    else:
        p, M, r = candidate_parts(W, mu, t)
        ham = float(mu.masses @ integrands(mu, p, M, r, cost, dyn, grid).min(axis=0))
    out = dt + ham
    if beta:
        out += beta_sign * beta * float(W(mu, t))
    return out


def hjb_uncontrolled_identity(W: CylinderFunctional, t: float, mu: FiniteMeasure, dyn: ControlledDynamics) -> float:
    """Ito drift of ``W`` (including ``dW/dt``): the HJB residual when neither dynamics nor cost depend on ``a``."""
    return ito_drift(W, mu, 0.0, dyn, t)


@dataclass(frozen=True)
class SampleCheck:
    t: float
    mass: float
    kind: str          # "interior" or "terminal"
    margin: float      # interior: HJB residual (>= -tol); terminal: W - g (<= tol)
    minimizer_gap: float
    passed: bool


@dataclass(frozen=True)
class VerificationReport:
    samples: tuple
    tol: float
    passed: bool

    def failing(self) -> list[int]:
        return [i for i, s in enumerate(self.samples) if not s.passed]

    @staticmethod
    def header() -> str:
        return f"{'#':>4} {'t':>8} {'mass':>10} {'kind':<9} {'margin':>13} {'min_gap':>11}  ok"

    def rows(self) -> list[str]:
        return [f"{i:>4d} {s.t:>8.4f} {s.mass:>10.4f} {s.kind:<9} {s.margin:>13.4e} {s.minimizer_gap:>11.3e}  "
                f"{'yes' if s.passed else 'NO'}" for i, s in enumerate(self.samples)]


def verify_candidate(W: CylinderFunctional, alpha_star: Policy | None, samples: Sequence[tuple],
                     dyn: ControlledDynamics, cost: CostSpec, grid: Sequence[float], T: float,
                     tol: float = 1e-6) -> VerificationReport:
    """Check the verification conditions at sample points ``(t, mu)``.

    (i) interior samples: HJB residual ``>= -tol``; terminal samples:
    ``W(T, mu) <= g(mu) + tol``.  (ii) with ``alpha_star``: its integrand is
    within ``tol`` of the grid minimum at every atom, and ``|W(T) - g| <= tol``
    at terminal samples.
    """
    if not samples:
        raise InputError("verify_candidate needs at least one sample")
    out = []
    for t, mu in samples:
        t = float(t)
        gap = 0.0
        if _is_terminal(t, T):
            margin = float(W(mu, T)) - float(cost.terminal(mu))
            ok = margin <= tol
            if alpha_star is not None:
                ok = ok and abs(margin) <= tol
            out.append(SampleCheck(t, mu.total_mass, "terminal", margin, 0.0, bool(ok)))
            continue
        margin = hjb_residual(W, t, mu, dyn, cost, grid, T)
        ok = margin >= -tol
        if alpha_star is not None and len(mu):
            p, M, r = candidate_parts(W, mu, t)
            vals = integrands(mu, p, M, r, cost, dyn, grid)
            a = alpha_star.actions_at(t, mu.x, mu)
            cols = np.arange(len(mu))
            rows = np.array([list(map(float, grid)).index(float(v)) if float(v) in grid else -1 for v in a])
            if np.any(rows < 0):
                raise InputError("alpha_star returned an action outside the verification grid")
            gap = float(np.max(vals[rows, cols] - vals.min(axis=0)))
            ok = ok and gap <= tol
        out.append(SampleCheck(t, mu.total_mass, "interior", margin, gap, bool(ok)))
    return VerificationReport(tuple(out), tol, all(s.passed for s in out))


# ---------------------------------------------------------------------------
# growth function


@dataclass(frozen=True)
class GrowthFunction:
    """``psi(mu) = 1 + |mu|^(2p)`` and ``phi(t, mu) = exp(-theta t) psi(mu)``."""

    p: int
    family: TestFamily
    theta: float = 0.0

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 1:
            raise InputError("p must be an integer >= 1")

    def psi(self, mu: FiniteMeasure) -> float:
        return 1.0 + norm(mu, self.family) ** (2 * self.p)

    def phi(self, t: float, mu: FiniteMeasure) -> float:
        return math.exp(-self.theta * t) * self.psi(mu)


@dataclass(frozen=True)
class GrowthCheck:
    lhs_first: float
    lhs_second: float
    rhs: float
    passed_first: bool
    passed_second: bool

    @property
    def passed(self) -> bool:
        return self.passed_first and self.passed_second


def psi_growth_check(mu: FiniteMeasure, gf: GrowthFunction) -> GrowthCheck:
    """``int d/dx [dpsi/dmu](mu, x) mu(dx)`` (and the ``d2/dx2`` analogue) against ``4 p psi(mu)``.

    ``dpsi/dmu(mu, x) = 2p |mu|^(2p-2) sum_k w_k <phi_k, mu> phi_k(x)`` with the
    family weights ``w_k``; in d > 1 the derivative is summed over axes.
    """
    fam, p = gf.family, gf.p
    v0 = fam.integrals(mu, 0)
    v1 = fam.integrals(mu, 1)
    v2 = fam.integrals(mu, 2)
    if v1.ndim > 1:
        v1, v2 = v1.sum(axis=1), v2.sum(axis=1)
    nrm2 = float(np.sum(fam.weights * v0 * v0))
    coef = 2 * p * (nrm2 ** (p - 1) if p > 1 else 1.0)
    lhs1 = coef * float(np.sum(fam.weights * v0 * v1))
    lhs2 = coef * float(np.sum(fam.weights * v0 * v2))
    rhs = 4 * p * (1.0 + nrm2 ** p)
    return GrowthCheck(lhs1, lhs2, rhs, bool(lhs1 <= rhs), bool(lhs2 <= rhs))
