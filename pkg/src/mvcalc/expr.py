"""Plain-text expression grammar shared by configs, fields and outer functions.

``3 u^2 x1 y1``, ``exp(-x^2/2)``, ``phi1 * phi2``: ``^`` is power and
juxtaposition is multiplication.  Parsed with sympy, which also supplies
closed-form derivatives; evaluation goes through numpy via ``lambdify``.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import (
    convert_xor,
    function_exponentiation,
    implicit_application,
    implicit_multiplication,
    parse_expr,
    standard_transformations,
)

from mvcalc.errors import InputError

# no symbol splitting: an unknown multi-letter name is reported whole
_TRANSFORMS = standard_transformations + (implicit_multiplication, implicit_application,
                                          function_exponentiation, convert_xor)

_FUNCTIONS = {
    name: getattr(sp, name)
    for name in ("exp", "log", "sqrt", "sin", "cos", "tan", "tanh", "sinh", "cosh", "atan", "Abs", "Min", "Max")
}
_FUNCTIONS["abs"] = sp.Abs
_FUNCTIONS["min"] = sp.Min
_FUNCTIONS["max"] = sp.Max
_FUNCTIONS["pi"] = sp.pi
_FUNCTIONS["E"] = sp.E


def parse(text: str | float | int, variables: Sequence[str], constants: dict | None = None) -> sp.Expr:
    """Parse ``text`` allowing only ``variables`` (plus ``constants``) as free names."""
    if isinstance(text, (int, float)):
        return sp.nsimplify(text) if float(text).is_integer() else sp.Float(text)
    if not isinstance(text, str) or not text.strip():
        raise InputError(f"expected an expression string, got {text!r}")
    local = dict(_FUNCTIONS)
    symbols = {v: sp.Symbol(v, real=True) for v in variables}
    local.update(symbols)
    for k, v in (constants or {}).items():
        local[k] = sp.nsimplify(v) if isinstance(v, int) else sp.Float(v)
    try:
        expr = parse_expr(text, local_dict=local, global_dict={"__builtins__": {}, **_sympy_core()},
                          transformations=_TRANSFORMS, evaluate=True)
    except Exception as exc:  # sympy raises a zoo of exception types
        raise InputError(f"cannot parse expression {text!r}: {exc}") from exc
    if not isinstance(expr, sp.Expr):
        raise InputError(f"expression {text!r} is not scalar")
    unknown = sorted(str(s) for s in expr.free_symbols if str(s) not in symbols)
    if unknown:
        raise InputError(f"unknown name {unknown[0]!r} in expression {text!r}")
    return expr


@lru_cache(maxsize=1)
def _sympy_core() -> dict:
    return {"Integer": sp.Integer, "Float": sp.Float, "Rational": sp.Rational, "Symbol": sp.Symbol}


def symbol(name: str) -> sp.Symbol:
    return sp.Symbol(name, real=True)


def compile_expr(expr: sp.Expr, args: Sequence[str]) -> Callable:
    """numpy callable of ``args``; constant expressions still broadcast against the first arg."""
    syms = [symbol(a) for a in args]
    fn = sp.lambdify(syms, expr, modules="numpy")
    if expr.free_symbols:
        return fn
    c = float(expr)

    def const(*vals):
        if vals:
            return np.full(np.shape(vals[0]), c)
        return c

    return const
