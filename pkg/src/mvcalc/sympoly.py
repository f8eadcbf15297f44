"""Symmetric polynomials in (u, x, y) and their product decompositions.

A symmetric kernel ``f(u, x, y) = f(u, y, x)`` that is polynomial can be
written as ``sum_j lam_j(u) g_j(x) g_j(y)``; this module constructs such a
decomposition exactly (rational arithmetic), in one and d dimensions, and
fits symmetric polynomials to continuous kernels.

Variables are ordered ``u, x1..xd, y1..yd``; a monomial is an exponent tuple
of length ``1 + 2d``.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable

import numpy as np
from numpy.polynomial import Polynomial, chebyshev

from mvcalc.errors import InputError

Coeff = Fraction | float


def _canon_key(e: tuple) -> tuple:
    return (-sum(e), tuple(-v for v in e))


def _fmt_coeff(c: Coeff) -> str:
    if isinstance(c, Fraction):
        return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"
    return repr(float(c))


class MultiPoly:
    """Sparse polynomial in ``(u, x1..xd, y1..yd)``; immutable, canonical term order."""

    __slots__ = ("d", "_terms")

    def __init__(self, terms: dict | Iterable = (), d: int = 1):
        self.d = int(d)
        nvar = 1 + 2 * self.d
        acc: dict[tuple, Coeff] = {}
        items = terms.items() if isinstance(terms, dict) else terms
        for e, c in items:
            e = tuple(int(v) for v in e)
            if len(e) != nvar or any(v < 0 for v in e):
                raise InputError(f"bad exponent tuple {e} for d={self.d}")
            if isinstance(c, int):
                c = Fraction(c)
            acc[e] = acc.get(e, 0) + c
        self._terms = {e: acc[e] for e in sorted(acc, key=_canon_key) if acc[e] != 0}

    # -- constructors -------------------------------------------------------

    @classmethod
    def zero(cls, d: int = 1) -> "MultiPoly":
        return cls({}, d)

    @classmethod
    def const(cls, c, d: int = 1) -> "MultiPoly":
        return cls({(0,) * (1 + 2 * d): c}, d)

    @classmethod
    def var(cls, name: str, d: int = 1) -> "MultiPoly":
        e = [0] * (1 + 2 * d)
        e[_var_index(name, d)] = 1
        return cls({tuple(e): Fraction(1)}, d)

    # -- structure ----------------------------------------------------------

    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def __iter__(self):
        return iter(self._terms.items())

    def __len__(self) -> int:
        return len(self._terms)

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self._terms), default=0)

    @property
    def is_rational(self) -> bool:
        return all(isinstance(c, Fraction) for c in self._terms.values())

    def coeff(self, e: tuple) -> Coeff:
        return self._terms.get(tuple(e), Fraction(0))

    def swap(self) -> "MultiPoly":
        """Exchange the x- and y-blocks."""
        d = self.d
        return MultiPoly({(e[0], *e[1 + d:], *e[1:1 + d]): c for e, c in self._terms.items()}, d)

    def is_symmetric(self) -> bool:
        return self == self.swap()

    def first_asymmetry(self):
        for e, c in self._terms.items():
            mirror = (e[0], *e[1 + self.d:], *e[1:1 + self.d])
            if self.coeff(mirror) != c:
                return e, mirror
        return None

    # -- arithmetic ---------------------------------------------------------

    def _check(self, other: "MultiPoly"):
        if other.d != self.d:
            raise InputError(f"dimension mismatch {self.d} vs {other.d}")

    def __add__(self, other):
        if not isinstance(other, MultiPoly):
            other = MultiPoly.const(other, self.d)
        self._check(other)
        return MultiPoly(itertools.chain(self._terms.items(), other._terms.items()), self.d)

    __radd__ = __add__

    def __neg__(self):
        return MultiPoly({e: -c for e, c in self._terms.items()}, self.d)

    def __sub__(self, other):
        if not isinstance(other, MultiPoly):
            other = MultiPoly.const(other, self.d)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, MultiPoly):
            if isinstance(other, int):
                other = Fraction(other)
            return MultiPoly({e: c * other for e, c in self._terms.items()}, self.d)
        self._check(other)
        out: dict[tuple, Coeff] = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0) + c1 * c2
        return MultiPoly(out, self.d)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        out = MultiPoly.const(Fraction(1), self.d)
        for _ in range(int(n)):
            out = out * self
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, MultiPoly):
            return NotImplemented
        return self.d == other.d and self._terms == other._terms

    __hash__ = None

    def max_abs_diff(self, other: "MultiPoly") -> float:
        keys = set(self._terms) | set(other._terms)
        return max((abs(float(self.coeff(k) - other.coeff(k))) for k in keys), default=0.0)

    # -- evaluation ---------------------------------------------------------

    def __call__(self, u, x, y):
        """Evaluate; in d > 1 ``x`` and ``y`` carry a trailing axis of length d."""
        u = np.asarray(u, dtype=float)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        cols = [u]
        if self.d == 1:
            cols += [x, y]
        else:
            cols += [x[..., i] for i in range(self.d)] + [y[..., i] for i in range(self.d)]
        shape = np.broadcast_shapes(*(np.shape(c) for c in cols))
        out = np.zeros(shape)
        for e, c in self._terms.items():
            term = np.full(shape, float(c))
            for col, k in zip(cols, e):
                if k:
                    term = term * col**k
            out = out + term
        return out if out.ndim else float(out)

    # -- text ---------------------------------------------------------------

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        names = variable_names(self.d)
        parts = []
        for e, c in self._terms.items():
            factors = [f"{n}^{k}" for n, k in zip(names, e) if k]
            parts.append(" ".join([_fmt_coeff(c), *factors]))
        return " + ".join(parts)

    def __repr__(self) -> str:
        return f"MultiPoly({str(self)!r}, d={self.d})"

    @classmethod
    def parse(cls, text: str, d: int | None = None) -> "MultiPoly":
        return parse_poly(text, d)


def variable_names(d: int) -> list[str]:
    return ["u"] + [f"x{i}" for i in range(1, d + 1)] + [f"y{i}" for i in range(1, d + 1)]


def _var_index(name: str, d: int) -> int:
    if name == "u":
        return 0
    if d == 1 and name in ("x", "y"):
        name += "1"
    m = re.fullmatch(r"([xy])(\d+)", name)
    if not m or not 1 <= int(m.group(2)) <= d:
        raise InputError(f"unknown variable {name!r} for d={d}")
    i = int(m.group(2))
    return i if m.group(1) == "x" else d + i


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+/\d+|(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?|inf|nan)"
    r"|(?P<name>[A-Za-z]\w*)|(?P<op>[\^*+\-]))"
)


def _tokens(text: str):
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise InputError(f"unexpected character at column {pos + 1} in {text!r}")
        pos = m.end()
        kind = m.lastgroup
        yield kind, m.group(kind), m.start(kind) + 1


def parse_poly(text: str, d: int | None = None) -> "MultiPoly":
    """Parse ``"3 u^2 x1^1 y1^1 + -1/2 x1^1 - y1"``-style text.

    Juxtaposition or ``*`` multiplies, ``^`` takes a nonnegative integer
    exponent, coefficients are integers, ``p/q`` fractions (exact) or
    decimals (float).  ``x``/``y`` alias ``x1``/``y1`` in one dimension.
    """
    toks = list(_tokens(text))
    if d is None:
        idx = [int(m.group(1)) for k, v, _ in toks if k == "name" and (m := re.fullmatch(r"[xy](\d+)", v))]
        d = max(idx, default=1)
    nvar = 1 + 2 * d
    terms: list[tuple[tuple, Coeff]] = []
    i = 0
    n = len(toks)
    while i < n:
        sign = 1
        seen_sign = False
        while i < n and toks[i][0] == "op" and toks[i][1] in "+-":
            sign = -sign if toks[i][1] == "-" else sign
            seen_sign = True
            i += 1
        if terms and not seen_sign:
            raise InputError(f"expected '+' or '-' at column {toks[i][2]} in {text!r}")
        coeff: Coeff = Fraction(1)
        exps = [0] * nvar
        got_factor = False
        while i < n and not (toks[i][0] == "op" and toks[i][1] in "+-"):
            kind, val, col = toks[i]
            if kind == "op" and val == "*":
                i += 1
                continue
            if kind == "num":
                c = Fraction(val) if ("/" in val or re.fullmatch(r"\d+", val)) else float(val)
                coeff = coeff * c
                i += 1
            elif kind == "name":
                k = _var_index(val, d)
                i += 1
                power = 1
                if i < n and toks[i][1] == "^":
                    if i + 1 >= n or toks[i + 1][0] != "num" or not re.fullmatch(r"\d+", toks[i + 1][1]):
                        raise InputError(f"exponent must be a nonnegative integer at column {col} in {text!r}")
                    power = int(toks[i + 1][1])
                    i += 2
                exps[k] += power
            else:
                raise InputError(f"unexpected {val!r} at column {col} in {text!r}")
            got_factor = True
        if not got_factor:
            raise InputError(f"empty term in {text!r}")
        terms.append((tuple(exps), coeff * sign if isinstance(coeff, Fraction) else sign * coeff))
    if not terms:
        raise InputError("empty polynomial text")
    return MultiPoly(terms, d)


# ---------------------------------------------------------------------------
# symmetrisation and decomposition


def symmetrize(g: MultiPoly) -> MultiPoly:
    """``(g(u, x, y) + g(u, y, x)) / 2``."""
    half = Fraction(1, 2) if g.is_rational else 0.5
    return (g + g.swap()) * half


@dataclass(frozen=True)
class Decomposition:
    """Terms ``(lam_j(u), g_j(x))`` with ``f = sum_j lam_j(u) g_j(x) g_j(y)``.

    ``lam_j`` only involves ``u`` and ``g_j`` only the x-block.
    """

    terms: tuple
    d: int = 1

    def __len__(self) -> int:
        return len(self.terms)

    def reconstruct(self) -> MultiPoly:
        out = MultiPoly.zero(self.d)
        for lam, g in self.terms:
            out = out + lam * g * g.swap()
        return out

    def __str__(self) -> str:
        return "\n".join(f"({lam}) * [{g}]" for lam, g in self.terms)


def _require_symmetric(f: MultiPoly):
    bad = f.first_asymmetry()
    if bad is not None:
        e, mirror = bad
        names = variable_names(f.d)

        def mono(ex):
            return " ".join(f"{n}^{k}" for n, k in zip(names, ex) if k) or "1"

        raise InputError(
            f"polynomial is not symmetric: coefficient of {mono(e)} is {f.coeff(e)} "
            f"but coefficient of {mono(mirror)} is {f.coeff(mirror)}"
        )


class _TermBuilder:
    """Accumulate ``lam`` per distinct ``g`` (keyed by canonical text)."""

    def __init__(self, d: int):
        self.d = d
        self.order: list[str] = []
        self.g: dict[str, MultiPoly] = {}
        self.lam: dict[str, MultiPoly] = {}

    def add(self, lam: MultiPoly, g: MultiPoly):
        key = str(g)
        if key not in self.g:
            self.order.append(key)
            self.g[key] = g
            self.lam[key] = MultiPoly.zero(self.d)
        self.lam[key] = self.lam[key] + lam

    def build(self) -> Decomposition:
        return Decomposition(
            tuple((self.lam[k], self.g[k]) for k in self.order if len(self.lam[k]) and len(self.g[k])), self.d
        )


def decompose_1d(f: MultiPoly) -> Decomposition:
    """Induction on degree for a symmetric ``f(u, x, y)`` in one dimension.

    At each level the pure powers ``P_e(x) = sum_{i>=1} c_{e,i,0} x^i`` (one per
    power ``u^e``) are peeled with
    ``P(x) + P(y) = (P(x) + 1)(P(y) + 1) - P(x) P(y) - 1``, the constant joins
    the ``g = 1`` term, and the rest is divisible by ``xy``; dividing it out
    and recursing multiplies every deeper ``g`` by ``x``.  A level without pure
    powers goes straight to the ``xy`` step.  For ``u``-free input of degree
    ``n`` this emits at most three terms per level and ``floor(n/2) + 1`` levels.
    """
    if f.d != 1:
        raise InputError("decompose_1d needs d = 1; use decompose_dd")
    _require_symmetric(f)
    one = Fraction(1) if f.is_rational else 1.0
    out = _TermBuilder(1)
    cur = dict(f.terms)
    level = 0
    while cur:
        shift = MultiPoly({(0, level, 0): one}, 1)  # x^level
        pure: dict[int, dict[int, Coeff]] = {}
        const: dict[int, Coeff] = {}
        rest: dict[tuple, Coeff] = {}
        for (e, i, j), c in cur.items():
            if i == 0 and j == 0:
                const[e] = c
            elif j == 0:
                pure.setdefault(e, {})[i] = c
            elif i >= 1:
                rest[(e, i - 1, j - 1)] = c
            # i == 0, j >= 1 is the mirror of a pure power, handled with it
        for e in sorted(set(pure) | set(const)):
            ue = MultiPoly({(e, 0, 0): one}, 1)
            if e in pure:
                P = MultiPoly({(0, i, 0): c for i, c in pure[e].items()}, 1)
                out.add(ue, shift * (P + one))
                out.add(-ue, shift * P)
                out.add(-ue, shift)
            if e in const:
                out.add(ue * const[e], shift)
        cur = rest
        level += 1
    return out.build()


def decompose_dd(f: MultiPoly) -> Decomposition:
    """Pair each monomial ``x^r y^s`` with its mirror ``x^s y^r`` and use

    ``x^r y^s + x^s y^r = (x^r + x^s)(y^r + y^s) - x^r y^r - x^s y^s``;

    self-paired monomials ``x^r y^r`` are already products.
    """
    _require_symmetric(f)
    d = f.d
    one = Fraction(1) if f.is_rational else 1.0
    out = _TermBuilder(d)
    zero_y = (0,) * d
    for e, c in f:
        u, r, s = e[0], e[1:1 + d], e[1 + d:]
        if r < s:
            continue  # visited from its mirror
        lam = MultiPoly({(u,) + (0,) * (2 * d): c}, d)
        xr = MultiPoly({(0, *r, *zero_y): one}, d)
        if r == s:
            out.add(lam, xr)
            continue
        xs = MultiPoly({(0, *s, *zero_y): one}, d)
        out.add(lam, xr + xs)
        out.add(-lam, xr)
        out.add(-lam, xs)
    return out.build()


def decompose(f: MultiPoly) -> Decomposition:
    return decompose_1d(f) if f.d == 1 else decompose_dd(f)


# ---------------------------------------------------------------------------
# least-squares symmetric approximation


def _monomial_exponents(nvar: int, degree: int) -> list[tuple]:
    return [e for e in itertools.product(range(degree + 1), repeat=nvar) if sum(e) <= degree]


def _cheb_nodes(n: int, lo: float, hi: float) -> np.ndarray:
    # Chebyshev-Gauss-Lobatto points
    k = np.arange(n)
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.cos(np.pi * k / (n - 1))[::-1]


@dataclass(frozen=True)
class Approximation:
    poly: MultiPoly
    sup_error: float
    validation_points: int


def approximate_symmetric(
    f: Callable,
    degree: int,
    grid: int,
    box: tuple[float, float] = (-1.0, 1.0),
    horizon: float = 1.0,
    d: int = 1,
    validation_grid: int | None = None,
) -> Approximation:
    """Least-squares fit of ``f(u, x, y)`` on ``[0, horizon] x box^d x box^d``,
    then symmetrised.

    The fit uses a tensor grid of ``grid`` Chebyshev-Lobatto points per axis
    and a tensor Chebyshev basis of total degree ``<= degree``; the result is
    expanded to monomials in the original variables.  ``sup_error`` is the
    largest ``|f - p|`` on a uniform validation grid (``2 grid + 1`` points per
    axis by default).
    """
    if degree < 0:
        raise InputError("degree must be >= 0")
    lo, hi = map(float, box)
    if not hi > lo or horizon <= 0:
        raise InputError("empty domain")
    nvar = 1 + 2 * d
    basis = _monomial_exponents(nvar, degree)
    if grid < degree + 1 or grid**nvar < len(basis) or grid < 2:
        raise InputError(
            f"grid of {grid} points per axis cannot determine a degree-{degree} fit "
            f"({len(basis)} coefficients, needs >= {degree + 1} points per axis)"
        )
    ranges = [(0.0, float(horizon))] + [(lo, hi)] * (2 * d)
    axes = [_cheb_nodes(grid, a, b) for a, b in ranges]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, nvar)
    vals = _call_kernel(f, pts, d)

    scaled = [(pts[:, k] - 0.5 * (a + b)) / (0.5 * (b - a)) for k, (a, b) in enumerate(ranges)]
    cheb_cols = [[chebyshev.chebval(s, [0] * j + [1]) for j in range(degree + 1)] for s in scaled]
    A = np.empty((pts.shape[0], len(basis)))
    for col, e in enumerate(basis):
        v = np.ones(pts.shape[0])
        for k, j in enumerate(e):
            if j:
                v = v * cheb_cols[k][j]
        A[:, col] = v
    coef, *_ = np.linalg.lstsq(A, vals, rcond=None)

    # expand T_j((z - mid)/half) into monomials of z, per variable
    uni = []
    for a, b in ranges:
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        lin = Polynomial([-mid / half, 1.0 / half])
        uni.append([Polynomial(chebyshev.cheb2poly([0] * j + [1]))(lin).coef for j in range(degree + 1)])
    acc: dict[tuple, float] = {}
    for c, e in zip(coef, basis):
        if c == 0.0:
            continue
        factors = [uni[k][j] for k, j in enumerate(e)]
        for powers in itertools.product(*(range(len(fc)) for fc in factors)):
            w = c
            for fc, p in zip(factors, powers):
                w *= fc[p]
            if w != 0.0:
                acc[powers] = acc.get(powers, 0.0) + float(w)
    poly = symmetrize(MultiPoly({e: c for e, c in acc.items() if abs(c) > 1e-15}, d))

    nv = validation_grid or (2 * grid + 1)
    vaxes = [np.linspace(a, b, nv) for a, b in ranges]
    vpts = np.stack(np.meshgrid(*vaxes, indexing="ij"), axis=-1).reshape(-1, nvar)
    fv = _call_kernel(f, vpts, d)
    pv = poly(vpts[:, 0], *_split_xy(vpts, d))
    err = float(np.max(np.abs(fv - pv))) if len(fv) else 0.0
    return Approximation(poly, err, vpts.shape[0])


def _split_xy(pts: np.ndarray, d: int):
    if d == 1:
        return pts[:, 1], pts[:, 2]
    return pts[:, 1:1 + d], pts[:, 1 + d:]


def _call_kernel(f: Callable, pts: np.ndarray, d: int) -> np.ndarray:
    x, y = _split_xy(pts, d)
    out = np.asarray(f(pts[:, 0], x, y), dtype=float)
    return np.broadcast_to(out, (pts.shape[0],)).astype(float)


def chebyshev_tail_bound(coeffs_x: np.ndarray, coeffs_y: np.ndarray, degree: int) -> float:
    """Sum of ``|a_i b_j|`` over ``i + j > degree``: bounds the truncation error of
    ``sum a_i b_j T_i(x) T_j(y)`` on ``[-1, 1]^2``."""
    total = 0.0
    for i, a in enumerate(coeffs_x):
        for j, b in enumerate(coeffs_y):
            if i + j > degree:
                total += abs(a * b)
    return total


def random_symmetric(rng: np.random.Generator, degree: int, d: int = 1, u_degree: int = 2,
                     density: float = 0.5, max_num: int = 9, max_den: int = 6) -> MultiPoly:
    """Random symmetric polynomial with small rational coefficients (test helper)."""
    nxy = 2 * d
    out: dict[tuple, Fraction] = {}
    for exy in itertools.product(range(degree + 1), repeat=nxy):
        if sum(exy) > degree or rng.random() > density:
            continue
        e = (int(rng.integers(0, u_degree + 1)), *exy)
        c = Fraction(int(rng.integers(-max_num, max_num + 1)), int(rng.integers(1, max_den + 1)))
        if c == 0:
            continue
        mirror = (e[0], *exy[d:], *exy[:d])
        out[e] = out.get(e, 0) + c
        if mirror != e:
            out[mirror] = out.get(mirror, 0) + c
    return MultiPoly(out, d)


def terms_bound_1d(f: MultiPoly) -> int:
    """Three terms per level and per distinct ``u`` power present at that level."""
    levels = math.floor(max((e[1] + e[2] for e in f.terms), default=0) / 2) + 1
    upowers = max(1, len({e[0] for e in f.terms}))
    return 3 * levels * upowers
