"""Finite atomic measures on R^d, the weighted test-function metric, and cutoffs.

A measure is a particle cloud: positions with nonnegative masses.  Every
integral is an exact finite sum over atoms.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np

from mvcalc.errors import InputError

# sup-norms of derivatives of the Gaussian-windowed monomials are maximised on
# this many points per axis over |u| <= _SUPPORT_HALF_WIDTH (u = (x - c) / s).
SUP_GRID_POINTS = 4096
_SUPPORT_HALF_WIDTH = 14.0


class FiniteMeasure:
    """Immutable weighted particle cloud ``sum_i m_i delta_{x_i}`` on R^d."""

    __slots__ = ("_pos", "_mass")

    def __init__(self, positions, masses, dim: int | None = None):
        masses = np.array(masses, dtype=float).reshape(-1)
        pos = np.array(positions, dtype=float)
        if pos.ndim == 1:
            if dim is None or dim == 1:
                pos = pos.reshape(-1, 1)
            else:
                pos = pos.reshape(-1, dim)
        if pos.ndim != 2:
            raise InputError(f"positions must be 1-d or 2-d, got shape {pos.shape}")
        if dim is not None and pos.shape[1] != dim:
            raise InputError(f"positions have dimension {pos.shape[1]}, expected {dim}")
        if pos.shape[1] < 1:
            raise InputError("dimension must be positive")
        if pos.shape[0] != masses.shape[0]:
            raise InputError(f"{pos.shape[0]} positions but {masses.shape[0]} masses")
        if not np.all(np.isfinite(pos)) or not np.all(np.isfinite(masses)):
            raise InputError("positions and masses must be finite")
        if np.any(masses < 0):
            i = int(np.argmax(masses < 0))
            raise InputError(f"atom {i} has negative mass {masses[i]!r}")
        pos.flags.writeable = False
        masses.flags.writeable = False
        self._pos = pos
        self._mass = masses

    @classmethod
    def _trusted(cls, pos: np.ndarray, masses: np.ndarray) -> "FiniteMeasure":
        # hot path for the simulator: arrays already validated and owned
        obj = cls.__new__(cls)
        obj._pos = pos
        obj._mass = masses
        return obj

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple], dim: int = 1) -> "FiniteMeasure":
        """Build from ``[(position, mass), ...]``; positions scalars or d-vectors."""
        atoms = list(atoms)
        if not atoms:
            return cls.empty(dim)
        pos = np.array([np.atleast_1d(np.asarray(p, dtype=float)) for p, _ in atoms])
        return cls(pos, [m for _, m in atoms], dim=dim)

    @classmethod
    def empty(cls, dim: int = 1) -> "FiniteMeasure":
        return cls(np.zeros((0, dim)), np.zeros(0), dim=dim)

    @classmethod
    def dirac(cls, position, mass: float = 1.0) -> "FiniteMeasure":
        p = np.atleast_1d(np.asarray(position, dtype=float))
        return cls(p.reshape(1, -1), [mass], dim=p.shape[0])

    @property
    def dim(self) -> int:
        return self._pos.shape[1]

    @property
    def positions(self) -> np.ndarray:
        """Atom positions, shape ``(n, d)``."""
        return self._pos

    @property
    def masses(self) -> np.ndarray:
        return self._mass

    @property
    def x(self) -> np.ndarray:
        """Positions in the shape scalar fields consume: ``(n,)`` if d == 1."""
        return self._pos[:, 0] if self._pos.shape[1] == 1 else self._pos

    def __len__(self) -> int:
        return self._mass.shape[0]

    @property
    def total_mass(self) -> float:
        return float(self._mass.sum())

    def integrate(self, f: Callable) -> float:
        return integrate(self, f)

    def scaled(self, c: float) -> "FiniteMeasure":
        return FiniteMeasure(self._pos, self._mass * c)

    def pruned(self) -> "FiniteMeasure":
        keep = self._mass > 0
        return FiniteMeasure(self._pos[keep], self._mass[keep])

    def __add__(self, other: "FiniteMeasure") -> "FiniteMeasure":
        if other.dim != self.dim:
            raise InputError(f"cannot add measures of dimension {self.dim} and {other.dim}")
        return FiniteMeasure(
            np.concatenate([self._pos, other._pos]), np.concatenate([self._mass, other._mass])
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, FiniteMeasure):
            return NotImplemented
        return (
            self._pos.shape == other._pos.shape
            and bool(np.array_equal(self._pos, other._pos))
            and bool(np.array_equal(self._mass, other._mass))
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"FiniteMeasure(dim={self.dim}, atoms={len(self)}, mass={self.total_mass:.6g})"

    def to_text(self) -> str:
        lines = [f"dim={self.dim} atoms={len(self)}"]
        for p, m in zip(self._pos, self._mass):
            lines.append(" ".join(repr(float(v)) for v in (*p, m)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FiniteMeasure":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise InputError("empty measure text")
        header = dict(tok.split("=", 1) for tok in lines[0].split())
        try:
            dim, n = int(header["dim"]), int(header["atoms"])
        except (KeyError, ValueError) as exc:
            raise InputError(f"bad measure header {lines[0]!r}") from exc
        rows = [ln.split() for ln in lines[1:]]
        if len(rows) != n:
            raise InputError(f"header declares {n} atoms, found {len(rows)}")
        if any(len(r) != dim + 1 for r in rows):
            raise InputError(f"every atom line needs {dim} coordinates and a mass")
        data = np.array([[float(v) for v in r] for r in rows]).reshape(n, dim + 1)
        return cls(data[:, :dim], data[:, dim], dim=dim)


def integrate(mu: FiniteMeasure, f: Callable) -> float:
    """Return ``<f, mu> = sum_i m_i f(x_i)``."""
    fdim = getattr(f, "dim", None)
    if fdim is not None and fdim != mu.dim:
        raise InputError(f"function is defined on R^{fdim}, measure lives on R^{mu.dim}")
    if len(mu) == 0:
        return 0.0
    vals = np.broadcast_to(np.asarray(f(mu.x), dtype=float), (len(mu),))
    return float(np.dot(mu.masses, vals))


# ---------------------------------------------------------------------------
# test family


def _window_poly(u: np.ndarray, p: int):
    """u^p exp(-u^2/2) and its first two u-derivatives."""
    e = np.exp(-0.5 * u * u)
    up = u**p
    g = up * e
    # d/du: (p u^{p-1} - u^{p+1}) e
    g1 = ((p * u ** (p - 1) if p >= 1 else 0.0) - up * u) * e
    # d2/du2: (p(p-1) u^{p-2} - (2p+1) u^p + u^{p+2}) e
    g2 = ((p * (p - 1) * u ** (p - 2) if p >= 2 else 0.0) - (2 * p + 1) * up + up * u * u) * e
    return g, g1, g2


def _window_sups(p: int) -> tuple[float, float, float]:
    u = np.linspace(-_SUPPORT_HALF_WIDTH, _SUPPORT_HALF_WIDTH, SUP_GRID_POINTS)
    g, g1, g2 = _window_poly(u, p)
    # the value sup has a closed form at u = sqrt(p)
    gsup = 1.0 if p == 0 else float(p ** (p / 2) * math.exp(-p / 2))
    return gsup, float(np.max(np.abs(g1))), float(np.max(np.abs(g2)))


@dataclass(frozen=True)
class GaussMonomial:
    """``A ((x-c)/s)^p exp(-(x-c)^2 / (2 s^2))`` with A chosen so the sup-norm is 1."""

    center: float
    scale: float
    degree: int

    @cached_property
    def _sups(self):
        return _window_sups(self.degree)

    @property
    def amplitude(self) -> float:
        return 1.0 / self._sups[0]

    @property
    def sup_d1(self) -> float:
        return self._sups[1] * self.amplitude / self.scale

    @property
    def sup_d2(self) -> float:
        return self._sups[2] * self.amplitude / self.scale**2

    def all(self, x):
        u = (np.asarray(x, dtype=float) - self.center) / self.scale
        g, g1, g2 = _window_poly(u, self.degree)
        a = self.amplitude
        return a * g, a * g1 / self.scale, a * g2 / self.scale**2

    def __call__(self, x):
        return self.all(x)[0]


class _Const1:
    center = 0.0
    sup_d1 = 0.0
    sup_d2 = 0.0

    def all(self, x):
        x = np.asarray(x, dtype=float)
        return np.ones_like(x), np.zeros_like(x), np.zeros_like(x)


@dataclass(frozen=True)
class TensorTestFunction:
    """Product ``prod_j g_j(x_j)`` of 1-d window functions (constant factors allowed)."""

    factors: tuple
    q: float
    dim: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "dim", len(self.factors))

    def all(self, x):
        """Value, gradient and Hessian diagonal; 1-d inputs give ``(n,)`` arrays."""
        x = np.asarray(x, dtype=float)
        if self.dim == 1:
            return self.factors[0].all(x)
        x = np.atleast_2d(x)
        parts = [f.all(x[:, j]) for j, f in enumerate(self.factors)]
        vals = np.stack([p[0] for p in parts], axis=1)
        value = np.prod(vals, axis=1)
        grad = np.empty_like(x)
        hdiag = np.empty_like(x)
        for j in range(self.dim):
            others = np.prod(np.delete(vals, j, axis=1), axis=1)
            grad[:, j] = parts[j][1] * others
            hdiag[:, j] = parts[j][2] * others
        return value, grad, hdiag

    def __call__(self, x):
        return self.all(x)[0]

    def d1(self, x):
        return self.all(x)[1]

    def d2(self, x):
        return self.all(x)[2]


def _q_weight(factors: Sequence) -> float:
    # Product bounds for tensor products: |d_j phi| <= sup|g_j'| prod_{i!=j} sup|g_i|
    # with every sup|g_i| <= 1; Hessian bounded in Frobenius norm the same way.
    d1 = [f.sup_d1 for f in factors]
    d2 = [f.sup_d2 for f in factors]
    if len(factors) == 1:
        dsup, hsup = d1[0], d2[0]
    else:
        dsup = math.sqrt(sum(v * v for v in d1))
        hsq = sum(v * v for v in d2)
        hsq += sum(2 * (d1[i] * d1[j]) ** 2 for i in range(len(factors)) for j in range(i + 1, len(factors)))
        hsup = math.sqrt(hsq)
    return max(1.0, dsup**2, hsup**2)


DEFAULT_CENTERS = (0.0, 0.5, -0.5, 1.0, -1.0, 1.5, -1.5, 2.0, -2.0, 3.0, -3.0, 4.0, -4.0)
DEFAULT_SCALES = (1.0, 0.5, 2.0)
DEFAULT_DEGREES = (0, 1, 2, 3)


class TestFamily:
    """The weighted sequence ``(phi_k)_{k=0..K}`` behind the metric on measures.

    ``phi_0 = 1``; for ``k >= 1`` Gaussian-windowed monomials enumerated over a
    grid of centres, scales and degrees (tensor products in d > 1), ordered so
    that low indices cover the central region at every degree first.  Weights
    are ``1 / (2^k q_k)`` with ``q_k = max(1, |D phi_k|^2, |D^2 phi_k|^2)``.
    """

    __test__ = False  # keep pytest from collecting the class

    def __init__(
        self,
        K: int = 64,
        dim: int = 1,
        centers: Sequence[float] = DEFAULT_CENTERS,
        scales: Sequence[float] = DEFAULT_SCALES,
        degrees: Sequence[int] = DEFAULT_DEGREES,
    ):
        if K < 0:
            raise InputError("empty test family: K must be >= 0")
        if dim < 1:
            raise InputError("dimension must be positive")
        self.K = int(K)
        self.dim = int(dim)
        self.centers = tuple(float(c) for c in centers)
        self.scales = tuple(float(s) for s in scales)
        self.degrees = tuple(int(p) for p in degrees)
        if any(s <= 0 for s in self.scales) or any(p < 0 for p in self.degrees):
            raise InputError("scales must be positive and degrees nonnegative")
        blocks = sorted(
            itertools.product(range(len(self.centers)), self.degrees, range(len(self.scales))),
            key=lambda t: (abs(self.centers[t[0]]), t[1], t[2], self.centers[t[0]] < 0),
        )
        one_d = [_Const1()] + [
            GaussMonomial(self.centers[ci], self.scales[si], p) for ci, p, si in blocks
        ]
        self.functions: tuple[TensorTestFunction, ...] = tuple(
            TensorTestFunction(tuple(one_d[i] for i in idx), _q_weight([one_d[i] for i in idx]))
            for idx in self._indices(len(one_d))
        )
        self.q = np.array([f.q for f in self.functions])
        self.weights = 1.0 / (2.0 ** np.arange(self.K + 1) * self.q)

    def _indices(self, n1: int) -> list[tuple[int, ...]]:
        # multi-indices ordered by total degree, then lexicographically: the
        # d-dimensional generalisation of Cantor diagonal enumeration
        out = []
        total = 0
        while len(out) < self.K + 1:
            level = [
                idx
                for idx in itertools.product(range(min(total, n1 - 1) + 1), repeat=self.dim)
                if sum(idx) == total
            ]
            if not level:
                raise InputError(f"grid too small for K={self.K}")
            out.extend(sorted(level, reverse=True))
            total += 1
        return out[: self.K + 1]

    def __len__(self) -> int:
        return self.K + 1

    def __getitem__(self, k: int) -> TensorTestFunction:
        return self.functions[k]

    def integrals(self, mu: FiniteMeasure, which: int = 0) -> np.ndarray:
        """``<phi_k, mu>`` (``which=0``), ``<D phi_k, mu>`` (1) or ``<D^2 phi_k, mu>`` (2)."""
        if mu.dim != self.dim:
            raise InputError(f"family on R^{self.dim}, measure on R^{mu.dim}")
        if len(mu) == 0:
            return np.zeros(self.K + 1) if (which == 0 or self.dim == 1) else np.zeros((self.K + 1, self.dim))
        out = []
        for f in self.functions:
            v = f.all(mu.x)[which]
            out.append(mu.masses @ v)
        return np.array(out)

    def to_config(self) -> dict:
        return {
            "kind": "gaussian_monomials",
            "K": self.K,
            "dim": self.dim,
            "centers": list(self.centers),
            "scales": list(self.scales),
            "degrees": list(self.degrees),
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "TestFamily":
        cfg = dict(cfg)
        kind = cfg.pop("kind", "gaussian_monomials")
        if kind != "gaussian_monomials":
            raise InputError(f"unknown test family kind {kind!r}")
        unknown = set(cfg) - {"K", "dim", "centers", "scales", "degrees"}
        if unknown:
            raise InputError(f"unknown test family key {sorted(unknown)[0]!r}")
        return cls(**cfg)


def metric(mu: FiniteMeasure, lam: FiniteMeasure, fam: TestFamily) -> float:
    """K-truncated ``d(mu, lam) = (sum_k <phi_k, mu - lam>^2 / (2^k q_k))^(1/2)``."""
    if len(fam) == 0:
        raise InputError("empty test family")
    if mu.dim != lam.dim or mu.dim != fam.dim:
        raise InputError(f"dimension mismatch: {mu.dim}, {lam.dim}, family {fam.dim}")
    diff = fam.integrals(mu) - fam.integrals(lam)
    return math.sqrt(float(np.sum(fam.weights * diff * diff)))


def norm(mu: FiniteMeasure, fam: TestFamily) -> float:
    """``|mu| = d(mu, 0)``."""
    return metric(mu, FiniteMeasure.empty(mu.dim), fam)


# ---------------------------------------------------------------------------
# cutoff


def _h(t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


@dataclass(frozen=True)
class CutoffProfile:
    """Smooth ``rho^N``: 1 on ``[-N, N]^d``, 0 outside ``[-(N+1), N+1]^d``.

    Per coordinate ``r(t) = h(N+1-|t|) / (h(N+1-|t|) + h(|t|-N))`` with
    ``h(s) = exp(-1/s)`` for ``s > 0``; the profile is the product over axes.
    """

    level: int

    def __post_init__(self):
        if self.level < 1:
            raise InputError("cutoff level must be a positive integer")

    def axis(self, t) -> np.ndarray:
        a = np.abs(np.asarray(t, dtype=float))
        up = _h(self.level + 1.0 - a)
        down = _h(a - self.level)
        return up / (up + down)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r = self.axis(x)
        return r if r.ndim <= 1 else np.prod(r, axis=-1)


def cutoff(mu: FiniteMeasure, prof: CutoffProfile) -> FiniteMeasure:
    """``mu^N(dx) = rho^N(x) mu(dx)``: each atom's mass times the profile."""
    if len(mu) == 0:
        return mu
    rho = prof(mu.x)
    return FiniteMeasure(mu.positions, mu.masses * rho)
