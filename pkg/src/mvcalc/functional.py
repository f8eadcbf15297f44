"""Cylinder functionals on measures, their linear functional derivatives, and
the generators of a controlled super-diffusion.

A cylinder functional is ``F(mu) = G(<phi_1, mu>, ..., <phi_m, mu>)``.  Its
derivatives are closed form:

    dF/dmu(mu, x)        = sum_i  d_i G(v) phi_i(x)
    d2F/dmu2(mu, x, y)   = sum_ij d_ij G(v) phi_i(x) phi_j(y)

with ``v_i = <phi_i, mu>``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import sympy as sp

from mvcalc import expr as ex
from mvcalc.errors import CapabilityError, InputError
from mvcalc.measure import FiniteMeasure


# ---------------------------------------------------------------------------
# inner fields


class SmoothScalarField:
    """A C^2_b function on R^d with its derivatives and declared sup bounds.

    ``value``, ``d1``, ``d2`` are vectorised callables.  In one dimension they
    map ``(n,)`` to ``(n,)``; for d > 1 they take ``(n, d)`` and ``d1``/``d2``
    return the gradient and the Hessian diagonal, each ``(n, d)``.
    """

    def __init__(
        self,
        value: Callable,
        d1: Callable,
        d2: Callable,
        bounds: Sequence[float] = (np.inf, np.inf, np.inf),
        *,
        name: str | None = None,
        dim: int = 1,
        combined: Callable | None = None,
    ):
        self.value = value
        self.d1 = d1
        self.d2 = d2
        self.bounds = tuple(float(b) for b in bounds)
        if len(self.bounds) != 3 or not all(b >= 0 for b in self.bounds):
            raise InputError("bounds must be three nonnegative numbers")
        self.name = name if name is not None else f"field{id(self):x}"
        self.dim = dim
        self._combined = combined

    def __call__(self, x):
        return self.value(x)

    def all(self, x):
        """``(value, d1, d2)`` at ``x``, sharing work when a combined evaluator exists."""
        if self._combined is not None:
            return self._combined(x)
        return self.value(x), self.d1(x), self.d2(x)

    def __repr__(self) -> str:
        return f"SmoothScalarField({self.name!r})"

    @classmethod
    def constant(cls, c: float = 1.0, name: str | None = None, dim: int = 1) -> "SmoothScalarField":
        def val(x):
            return np.full(np.shape(x) if dim == 1 else np.shape(x)[:-1], float(c))

        def zero(x):
            return np.zeros(np.shape(x))

        return cls(val, zero, zero, (abs(c), 0.0, 0.0), name=name or f"const({c:g})", dim=dim,
                   combined=lambda x: (val(x), zero(x), zero(x)))

    @classmethod
    def gaussian(cls, center: float = 0.0, scale: float = 1.0, amplitude: float = 1.0,
                 name: str | None = None) -> "SmoothScalarField":
        """``amplitude * exp(-(x - center)^2 / (2 scale^2))``."""
        c, s, a = float(center), float(scale), float(amplitude)
        s2 = s * s

        def combined(x):
            z = np.asarray(x, dtype=float) - c
            e = a * np.exp(-0.5 * z * z / s2)
            return e, -z / s2 * e, (z * z / s2 - 1.0) / s2 * e

        bounds = (abs(a), abs(a) * np.exp(-0.5) / s, abs(a) / s2)
        return cls(lambda x: combined(x)[0], lambda x: combined(x)[1], lambda x: combined(x)[2],
                   bounds, name=name or f"gauss({c:g},{s:g})", combined=combined)

    @classmethod
    def from_expr(cls, text: str, name: str | None = None, bounds: Sequence[float] | None = None,
                  constants: dict | None = None) -> "SmoothScalarField":
        """One-dimensional field from an expression in ``x``; derivatives symbolic."""
        e0 = ex.parse(text, ["x"], constants)
        x = ex.symbol("x")
        e1 = sp.diff(e0, x)
        e2 = sp.diff(e1, x)
        f0, f1, f2 = (ex.compile_expr(e, ["x"]) for e in (e0, e1, e2))
        both = sp.lambdify([x], [e0, e1, e2], modules="numpy", cse=True)

        def combined(xv):
            xv = np.asarray(xv, dtype=float)
            return tuple(np.broadcast_to(np.asarray(r, dtype=float), xv.shape) for r in both(xv))

        field_ = cls(lambda v: combined(v)[0], lambda v: combined(v)[1], lambda v: combined(v)[2],
                     bounds if bounds is not None else (np.inf, np.inf, np.inf),
                     name=name or text, combined=combined)
        field_.expression = e0
        return field_

    def check_derivatives(self, points, step: float = 1e-4, rtol: float = 1e-5) -> float:
        """Largest central-difference mismatch, relative to ``|derivative| + sup bound``.

        Returns the worst ratio ``|fd - d| / (rtol * (|d| + bound))``; values
        ``<= 1`` mean the derivatives agree with the value at tolerance ``rtol``.
        """
        x = np.asarray(points, dtype=float)
        if self.dim != 1:
            raise CapabilityError("finite-difference check implemented for d = 1 fields")
        fp, f0, fm = self.value(x + step), self.value(x), self.value(x - step)
        fd1 = (fp - fm) / (2 * step)
        fd2 = (fp - 2 * f0 + fm) / step**2
        _, d1, d2 = self.all(x)
        s1 = np.abs(d1) + min(self.bounds[1], 1e300) if np.isfinite(self.bounds[1]) else np.abs(d1) + 1.0
        s2 = np.abs(d2) + min(self.bounds[2], 1e300) if np.isfinite(self.bounds[2]) else np.abs(d2) + 1.0
        r1 = np.abs(fd1 - d1) / (rtol * s1)
        r2 = np.abs(fd2 - d2) / (rtol * s2)
        return float(max(r1.max(initial=0.0), r2.max(initial=0.0)))

    def check_bounds(self, points) -> bool:
        v, d1, d2 = self.all(np.asarray(points, dtype=float))
        tol = 1e-12
        return bool(
            np.all(np.abs(v) <= self.bounds[0] + tol)
            and np.all(np.abs(d1) <= self.bounds[1] + tol)
            and np.all(np.abs(d2) <= self.bounds[2] + tol)
        )


class TimeField:
    """A field ``phi(t, x)`` with ``d/dt`` available; ``at(t)`` freezes time."""

    def __init__(self, value: Callable, d1: Callable, d2: Callable, dt: Callable, *,
                 name: str | None = None, bounds: Sequence[float] = (np.inf, np.inf, np.inf)):
        self._value, self._d1, self._d2, self._dt = value, d1, d2, dt
        self.name = name if name is not None else f"tfield{id(self):x}"
        self.bounds = tuple(bounds)
        self.dim = 1

    def at(self, t: float) -> SmoothScalarField:
        return SmoothScalarField(lambda x: self._value(x, t), lambda x: self._d1(x, t),
                                 lambda x: self._d2(x, t), self.bounds, name=f"{self.name}@{t:g}")

    def dt_at(self, t: float) -> Callable:
        return lambda x: self._dt(x, t)

    @classmethod
    def from_expr(cls, text: str, name: str | None = None, constants: dict | None = None) -> "TimeField":
        e0 = ex.parse(text, ["x", "t"], constants)
        x, t = ex.symbol("x"), ex.symbol("t")
        e1 = sp.diff(e0, x)
        fns = [ex.compile_expr(e, ["x", "t"]) for e in (e0, e1, sp.diff(e1, x), sp.diff(e0, t))]

        def wrap(fn):
            return lambda xv, tv: np.broadcast_to(np.asarray(fn(np.asarray(xv, dtype=float), tv), dtype=float),
                                                  np.shape(xv))

        tf = cls(*(wrap(f) for f in fns), name=name or text)
        tf.expression = e0
        return tf

    @classmethod
    def heat_gaussian(cls, scale: float, horizon: float, diffusivity: float = 1.0,
                      name: str | None = None) -> "TimeField":
        """``P_{T-t} phi`` for ``phi = exp(-x^2 / (2 s^2))`` under ``(sigma^2 / 2) d^2/dx^2``.

        Closed form: ``s / sqrt(s^2 + sigma^2 (T-t)) * exp(-x^2 / (2 (s^2 + sigma^2 (T-t))))``.
        """
        s2 = float(scale) ** 2
        T = float(horizon)
        k = float(diffusivity) ** 2

        def parts(x, t):
            x = np.asarray(x, dtype=float)
            v = s2 + k * (T - t)
            e = np.sqrt(s2 / v) * np.exp(-0.5 * x * x / v)
            return x, v, e

        def value(x, t):
            return parts(x, t)[2]

        def d1(x, t):
            x, v, e = parts(x, t)
            return -x / v * e

        def d2(x, t):
            x, v, e = parts(x, t)
            return (x * x / v - 1.0) / v * e

        def dt(x, t):
            # d/dt = -(sigma^2/2) d^2/dx^2 along the backward heat flow
            return -0.5 * k * d2(x, t)

        return cls(value, d1, d2, dt, name=name or f"heat({scale:g},T={T:g})",
                   bounds=(1.0, np.exp(-0.5) / np.sqrt(s2), 1.0 / s2))


# ---------------------------------------------------------------------------
# outer functions


class Outer:
    """Outer function ``G(v_1, ..., v_m)`` (optionally ``G(t, v)``) with closed-form
    gradient and Hessian.

    Built from an expression in the variables ``names`` (and ``t``); all
    derivatives are symbolic.  Evaluation accepts ``v`` of shape ``(..., m)``.
    """

    def __init__(self, text: str, names: Sequence[str], *, time_dependent: bool | None = None,
                 hessian: bool = True, constants: dict | None = None):
        self.names = tuple(names)
        self.text = text
        allowed = list(self.names) + ["t"]
        e = ex.parse(text, allowed, constants)
        t = ex.symbol("t")
        if time_dependent is None:
            time_dependent = t in e.free_symbols
        elif not time_dependent and t in e.free_symbols:
            raise InputError(f"outer function {text!r} depends on t")
        self.time_dependent = bool(time_dependent)
        self.expression = e
        syms = [ex.symbol(n) for n in self.names]
        args = ["t", *self.names]
        self._value = ex.compile_expr(e, args)
        grads = [sp.diff(e, s) for s in syms]
        self._grad = [ex.compile_expr(g, args) for g in grads]
        self._hess = None
        if hessian:
            # upper triangle only: H_ij and H_ji share one callable
            m = len(syms)
            self._hess = {(i, j): ex.compile_expr(sp.diff(grads[i], syms[j]), args)
                          for i in range(m) for j in range(i, m)}
            self._hess_zero = {(i, j): sp.diff(grads[i], syms[j]) == 0 for i in range(m) for j in range(i, m)}
        self._dt = ex.compile_expr(sp.diff(e, t), args)

    @property
    def arity(self) -> int:
        return len(self.names)

    @property
    def has_hessian(self) -> bool:
        return self._hess is not None

    def _args(self, v, t):
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.arity:
            raise InputError(f"outer function takes {self.arity} arguments, got {v.shape[-1]}")
        tt = np.zeros(v.shape[:-1]) if t is None else np.broadcast_to(np.asarray(t, dtype=float), v.shape[:-1])
        return v, [tt, *(v[..., i] for i in range(self.arity))]

    def _need_t(self, t):
        if self.time_dependent and t is None:
            raise InputError("time-dependent functional needs a time argument")

    def value(self, v, t=None):
        self._need_t(t)
        v, args = self._args(v, t)
        return np.broadcast_to(np.asarray(self._value(*args), dtype=float), v.shape[:-1]).copy()

    def grad(self, v, t=None):
        self._need_t(t)
        v, args = self._args(v, t)
        out = np.empty(v.shape)
        for i, g in enumerate(self._grad):
            out[..., i] = g(*args)
        return out

    def hess(self, v, t=None):
        """Hessian with ``H[..., j, i]`` set from the same value as ``H[..., i, j]``."""
        if self._hess is None:
            raise CapabilityError(f"outer function {self.text!r} has no Hessian")
        self._need_t(t)
        v, args = self._args(v, t)
        m = self.arity
        out = np.zeros(v.shape + (m,))
        for (i, j), h in self._hess.items():
            if self._hess_zero[(i, j)]:
                continue
            hv = h(*args)
            out[..., i, j] = hv
            out[..., j, i] = hv
        return out

    def dt(self, v, t):
        v, args = self._args(v, t)
        return np.broadcast_to(np.asarray(self._dt(*args), dtype=float), v.shape[:-1]).copy()

    def __repr__(self) -> str:
        return f"Outer({self.text!r}, names={self.names})"


# ---------------------------------------------------------------------------
# cylinder functionals


@dataclass(frozen=True)
class CylinderFunctional:
    """``F(t, mu) = G(t, <phi_1(t), mu>, ..., <phi_m(t), mu>)``."""

    inner: tuple
    outer: Outer
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "inner", tuple(self.inner))
        if len(self.inner) != self.outer.arity:
            raise InputError(f"{len(self.inner)} inner fields but outer takes {self.outer.arity}")
        if not self.name:
            object.__setattr__(self, "name", self.outer.text)

    @classmethod
    def build(cls, text: str, fields: Sequence, name: str = "", **kw) -> "CylinderFunctional":
        """``build("phi^2", [phi])``: names in ``text`` are the fields' names."""
        return cls(tuple(fields), Outer(text, [f.name for f in fields], **kw), name)

    @property
    def time_dependent(self) -> bool:
        return self.outer.time_dependent or any(isinstance(f, TimeField) for f in self.inner)

    @property
    def has_time_fields(self) -> bool:
        return any(isinstance(f, TimeField) for f in self.inner)

    def fields_at(self, t: float | None) -> tuple[SmoothScalarField, ...]:
        if self.has_time_fields and t is None:
            raise InputError(f"functional {self.name!r} needs a time argument")
        return tuple(f.at(t) if isinstance(f, TimeField) else f for f in self.inner)

    def integrals(self, mu: FiniteMeasure, t: float | None = None) -> np.ndarray:
        return np.array([mu.integrate(f) for f in self.fields_at(t)])

    def __call__(self, mu: FiniteMeasure, t: float | None = None) -> float:
        return float(self.outer.value(self.integrals(mu, t), t))

    def dt(self, mu: FiniteMeasure, t: float) -> float:
        """Explicit time derivative: ``dG/dt + sum_i d_i G <d phi_i / dt, mu>``."""
        v = self.integrals(mu, t)
        out = float(self.outer.dt(v, t)) if self.outer.time_dependent else 0.0
        if self.has_time_fields:
            g = self.outer.grad(v, t)
            for i, f in enumerate(self.inner):
                if isinstance(f, TimeField):
                    out += g[i] * mu.integrate(f.dt_at(t))
        return out


def lin_derivative(F: CylinderFunctional, mu: FiniteMeasure, x, t: float | None = None):
    """``dF/dmu(mu, x) = sum_i d_i G(<phi, mu>) phi_i(x)``."""
    fields = F.fields_at(t)
    g = F.outer.grad(np.array([mu.integrate(f) for f in fields]), t)
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape if fields[0].dim == 1 else x.shape[:-1])
    for gi, f in zip(g, fields):
        out = out + gi * f(x)
    return out if out.ndim else float(out)


def second_derivative(F: CylinderFunctional, mu: FiniteMeasure, x, y, t: float | None = None):
    """``d2F/dmu2(mu, x, y) = sum_ij d_ij G phi_i(x) phi_j(y)``, symmetric in (x, y) bit-for-bit."""
    fields = F.fields_at(t)
    H = F.outer.hess(np.array([mu.integrate(f) for f in fields]), t)
    px = [f(np.asarray(x, dtype=float)) for f in fields]
    py = [f(np.asarray(y, dtype=float)) for f in fields]
    out = 0.0
    m = len(fields)
    for i in range(m):
        if H[i, i] != 0.0:
            out = out + H[i, i] * (px[i] * py[i])
        for j in range(i + 1, m):
            if H[i, j] != 0.0:
                out = out + H[i, j] * (px[i] * py[j] + px[j] * py[i])
    out = np.asarray(out, dtype=float)
    return out if out.ndim else float(out)


def check_def3(F: CylinderFunctional, mu: FiniteMeasure, lam: FiniteMeasure, quad_points: int,
               t: float | None = None) -> float:
    """``|F(mu) - F(lam) - int_0^1 <dF/dmu(lam + s(mu - lam), .), mu - lam> ds|``.

    The s-integral uses Gauss-Legendre with ``quad_points`` nodes.  The mixture
    ``lam + s(mu - lam)`` is the concatenation of ``lam``'s atoms scaled by
    ``1 - s`` and ``mu``'s atoms scaled by ``s``; atoms shared by both are kept
    as two separate entries, so every mass stays nonnegative.
    """
    if quad_points < 2:
        raise InputError("quad_points must be >= 2")
    if mu.dim != lam.dim:
        raise InputError("measures of different dimension")
    nodes, weights = np.polynomial.legendre.leggauss(quad_points)
    s_nodes = 0.5 * (nodes + 1.0)
    s_weights = 0.5 * weights
    fields = F.fields_at(t)
    # the integrand only needs <phi_i, .> of the mixture, which is linear in s
    a_mu = np.array([mu.integrate(f) for f in fields])
    a_lam = np.array([lam.integrate(f) for f in fields])
    integral = 0.0
    for s, w in zip(s_nodes, s_weights):
        mix = FiniteMeasure(np.concatenate([lam.positions, mu.positions]),
                            np.concatenate([lam.masses * (1.0 - s), mu.masses * s]))
        v = np.array([mix.integrate(f) for f in fields])
        g = F.outer.grad(v, t)
        integral += w * float(np.dot(g, a_mu - a_lam))
    return abs(F(mu, t) - F(lam, t) - integral)


# ---------------------------------------------------------------------------
# dynamics and generators


def _as_callable(c) -> Callable:
    if callable(c):
        return c
    val = float(c)
    return lambda x, mu, a: val


@dataclass(frozen=True)
class ControlledDynamics:
    """Coefficients ``(b, sigma, gamma)(x, mu, a)`` of the controlled super-diffusion.

    Callables are vectorised over particles: ``x`` is ``(n,)`` (or ``(n, d)``),
    ``a`` is ``(n,)``; scalar returns broadcast.  ``bounds`` are declared sup
    bounds on ``|b|``, ``|sigma|``, ``gamma``; ``lipschitz`` likewise.
    """

    b: Callable
    sigma: Callable
    gamma: Callable
    bounds: tuple = (np.inf, np.inf, np.inf)
    lipschitz: tuple = (np.inf, np.inf, np.inf)
    dim: int = 1
    control_free: bool = False
    description: str = ""

    def __post_init__(self):
        for name in ("b", "sigma", "gamma"):
            object.__setattr__(self, name, _as_callable(getattr(self, name)))

    @classmethod
    def constant(cls, b: float = 0.0, sigma: float = 1.0, gamma: float = 1.0) -> "ControlledDynamics":
        if gamma < 0:
            raise InputError("gamma must be nonnegative")
        return cls(b, sigma, gamma, bounds=(abs(b), abs(sigma), gamma), lipschitz=(0.0, 0.0, 0.0),
                   control_free=True, description=f"b={b:g} sigma={sigma:g} gamma={gamma:g}")

    def coefficients(self, x, mu: FiniteMeasure, a):
        x = np.asarray(x, dtype=float)
        shape = x.shape
        a = np.broadcast_to(np.asarray(a, dtype=float), shape[:1])
        b = np.broadcast_to(np.asarray(self.b(x, mu, a), dtype=float), shape)
        s = np.broadcast_to(np.asarray(self.sigma(x, mu, a), dtype=float), shape)
        g = np.broadcast_to(np.asarray(self.gamma(x, mu, a), dtype=float), shape[:1])
        return b, s, g

    def check(self, x, mu: FiniteMeasure, a) -> list[str]:
        """Spot-check declared bounds and ``gamma >= 0``; returns violation messages."""
        b, s, g = self.coefficients(x, mu, a)
        tol = 1e-12
        problems = []
        if np.any(np.abs(b) > self.bounds[0] + tol):
            problems.append(f"|b| exceeds declared bound {self.bounds[0]}")
        if np.any(np.abs(s) > self.bounds[1] + tol):
            problems.append(f"|sigma| exceeds declared bound {self.bounds[1]}")
        if np.any(g > self.bounds[2] + tol):
            problems.append(f"gamma exceeds declared bound {self.bounds[2]}")
        if np.any(g < 0):
            problems.append("gamma is negative somewhere")
        return problems


def _apply_L(d1, d2, b, s):
    """``b phi' + (1/2) sigma^2 phi''``; in d > 1 summed over axes (diagonal sigma)."""
    out = b * d1 + 0.5 * (s * s) * d2
    return out if out.ndim == 1 else out.sum(axis=1)


def generator_L(phi: SmoothScalarField, x, mu: FiniteMeasure, a, dyn: ControlledDynamics):
    """``L phi(x, mu, a) = b phi'(x) + (1/2) sigma^2 phi''(x)``."""
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    b, s, _ = dyn.coefficients(xa, mu, a)
    _, d1, d2 = phi.all(xa)
    out = _apply_L(d1, d2, b, s)
    return float(out[0]) if np.ndim(x) == 0 else out


def generator_script_L(outer: Outer, phi: SmoothScalarField, x, lam: FiniteMeasure, a,
                       dyn: ControlledDynamics):
    """``F'(<phi, lam>) L phi(x, lam, a) + (1/2) F''(<phi, lam>) gamma(x, lam, a) phi(x)^2``."""
    if outer.arity != 1:
        raise InputError("generator_script_L takes a one-argument outer function")
    v = np.array([lam.integrate(phi)])
    f1 = float(outer.grad(v)[0])
    f2 = float(outer.hess(v)[0, 0])
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    b, s, g = dyn.coefficients(xa, lam, a)
    val, d1, d2 = phi.all(xa)
    out = f1 * _apply_L(d1, d2, b, s) + 0.5 * f2 * g * val * val
    return float(out[0]) if np.ndim(x) == 0 else out


def resolve_actions(policy_action, x, mu: FiniteMeasure, t: float | None):
    """Accept a Policy, a callable ``x -> a`` or a constant action."""
    n = np.shape(x)[0]
    if hasattr(policy_action, "actions_at"):
        return policy_action.actions_at(0.0 if t is None else t, x, mu)
    if callable(policy_action):
        return np.broadcast_to(np.asarray(policy_action(x), dtype=float), (n,))
    return np.full(n, 0.0 if policy_action is None else float(policy_action))


def field_moments(fields: Sequence[SmoothScalarField], mu: FiniteMeasure, b, s, g):
    """Per-field integrals needed by every drift/variation formula.

    Returns ``v_i = <phi_i, mu>``, ``l_i = <L phi_i, mu>`` and the
    gamma-weighted Gram matrix ``c_ij = <gamma phi_i phi_j, mu>``; the
    coefficients ``b, s, g`` are already evaluated at the atoms.
    """
    m = len(fields)
    if len(mu) == 0:
        return np.zeros(m), np.zeros(m), np.zeros((m, m))
    x = mu.x
    w = mu.masses
    vals = np.empty((m, len(mu)))
    lvals = np.empty((m, len(mu)))
    for i, f in enumerate(fields):
        v, d1, d2 = f.all(x)
        vals[i] = v
        lvals[i] = _apply_L(d1, d2, b, s)
    v = vals @ w
    lv = lvals @ w
    c = (vals * (w * g)) @ vals.T
    return v, lv, c


def drift_from_moments(outer: Outer, v, lv, c, t=None):
    """``sum_i d_i G l_i + (1/2) sum_ij d_ij G c_ij`` (plus ``dG/dt``), vectorised over rows.

    The summation order is fixed: gradient terms in field order, then Hessian
    terms; a zero Hessian contributes exact zeros, so for linear ``G`` the
    drift is bit-identical to ``sum_i d_i G l_i``.
    """
    g = outer.grad(v, t)
    out = np.zeros(np.shape(v)[:-1])
    for i in range(outer.arity):
        out = out + g[..., i] * lv[..., i]
    if outer.time_dependent:
        out = out + outer.dt(v, t)
    if outer._hess is None:
        raise CapabilityError(f"functional {outer.text!r} lacks second-derivative data")
    H = outer.hess(v, t)
    for i in range(outer.arity):
        for j in range(outer.arity):
            if not outer._hess_zero[(min(i, j), max(i, j))]:
                out = out + 0.5 * H[..., i, j] * c[..., i, j]
    return out


def variation_from_moments(outer: Outer, v, c, t=None):
    """``<gamma (dF/dmu)^2, mu> = sum_ij d_i G d_j G c_ij``."""
    g = outer.grad(v, t)
    return np.einsum("...i,...ij,...j->...", g, c, g)


def ito_drift(F: CylinderFunctional, mu: FiniteMeasure, policy_action, dyn: ControlledDynamics,
              t: float | None = None) -> float:
    """Drift of ``F(mu_t)``: ``dF/dt + <L dF/dmu, mu> + (1/2) <gamma d2F/dmu2(., .), mu>``."""
    if F.time_dependent and t is None:
        raise InputError(f"functional {F.name!r} is time dependent: pass t")
    if not F.outer.has_hessian:
        raise CapabilityError(f"functional {F.name!r} lacks second-derivative data")
    fields = F.fields_at(t)
    a = resolve_actions(policy_action, mu.x, mu, t)
    b, s, g = dyn.coefficients(mu.x, mu, a)
    v, lv, c = field_moments(fields, mu, b, s, g)
    out = float(drift_from_moments(F.outer, v, lv, c, t))
    if F.has_time_fields:
        gr = F.outer.grad(v, t)
        for i, f in enumerate(F.inner):
            if isinstance(f, TimeField):
                out += gr[i] * mu.integrate(f.dt_at(t))
    return out


@dataclass(frozen=True)
class OperatorSpec:
    """Second-order operator ``f -> b0 f + b1 f' + b2 f''`` with ``b_k(x, mu)``."""

    b0: Callable | float = 0.0
    b1: Callable | float = 0.0
    b2: Callable | float = 0.0

    def coefficient(self, k: int, x, mu):
        c = (self.b0, self.b1, self.b2)[k]
        if callable(c):
            return np.broadcast_to(np.asarray(c(x, mu), dtype=float), np.shape(x))
        return np.full(np.shape(x), float(c))

    def apply(self, field_: SmoothScalarField, x, mu):
        v, d1, d2 = field_.all(x)
        return self.coefficient(0, x, mu) * v + self.coefficient(1, x, mu) * d1 + self.coefficient(2, x, mu) * d2


def corollary1_drift(F: CylinderFunctional, mu: FiniteMeasure, L1: OperatorSpec, L2: OperatorSpec,
                     t: float | None = None) -> float:
    """Drift for a measure process driven by general operators ``L1`` (drift) and ``L2`` (noise).

    ``<L1 dF/dmu, mu> + (1/2) int G(mu, x, x) mu(dx)`` with
    ``G(mu, x, y) = sum_ij d_ij G (L2 phi_i)(x) (L2 phi_j)(y)``: ``L2`` applied
    to each spatial slot of the second derivative.
    """
    if not F.outer.has_hessian:
        raise CapabilityError(f"functional {F.name!r} is not twice differentiable")
    fields = F.fields_at(t)
    if any(f.dim != 1 for f in fields):
        raise CapabilityError("general-operator drift implemented for d = 1")
    if len(mu) == 0:
        return 0.0
    x, w = mu.x, mu.masses
    v = np.array([mu.integrate(f) for f in fields])
    g = F.outer.grad(v, t)
    H = F.outer.hess(v, t)
    l1 = [L1.apply(f, x, mu) for f in fields]
    l2 = [L2.apply(f, x, mu) for f in fields]
    first = sum(g[i] * float(w @ l1[i]) for i in range(len(fields)))
    diag = np.zeros(len(mu))
    for i in range(len(fields)):
        for j in range(len(fields)):
            if H[i, j] != 0.0:
                diag = diag + H[i, j] * l2[i] * l2[j]
    out = first + 0.5 * float(w @ diag)
    if F.outer.time_dependent:
        out += float(F.outer.dt(v, t))
    return out
