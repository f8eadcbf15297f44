"""Scenario files: one YAML document describing dynamics, initial measure,
fields, functionals, policies, costs and check selections.

Coefficient, cost and field expressions use the plain-text grammar of
``mvcalc.expr``.  Parsing normalises every section (defaults filled in,
numbers coerced), so ``Scenario.from_dict(s.to_dict()) == s``.

Expression variables:

* dynamics ``b``, ``sigma``, ``gamma`` and running cost: ``x``, ``a``, ``m`` (total mass), ``t``
* fields: ``x``
* terminal cost: ``m`` and the declared field names (meaning ``<phi, mu>``)
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml

from mvcalc import expr as ex
from mvcalc.errors import InputError
from mvcalc.functional import ControlledDynamics, CylinderFunctional, SmoothScalarField, TimeField
from mvcalc.measure import FiniteMeasure, TestFamily
from mvcalc.particles import BRANCHING_MODES, Policy, SimConfig, table_policy


class ScenarioError(InputError):
    """Config problem located at a key path (and line/column when known)."""

    def __init__(self, message: str, path: tuple = (), line: int | None = None, column: int | None = None):
        self.message = message
        self.path = tuple(path)
        self.line = line
        self.column = column
        where = ".".join(str(p) for p in self.path)
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{where}: {message}{loc}" if where else f"{message}{loc}")


# ---------------------------------------------------------------------------
# schema


def _num(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float, str)):
        raise ScenarioError(f"expected a number, got {v!r}", path)
    try:
        return float(v)
    except ValueError:
        raise ScenarioError(f"expected a number, got {v!r}", path) from None


def _int(v, path):
    if isinstance(v, bool):
        raise ScenarioError(f"expected an integer, got {v!r}", path)
    if isinstance(v, float) and v.is_integer():
        v = int(v)
    if not isinstance(v, int):
        raise ScenarioError(f"expected an integer, got {v!r}", path)
    return v


def _str(v, path):
    if isinstance(v, bool) or not isinstance(v, (str, int, float)):
        raise ScenarioError(f"expected an expression string, got {v!r}", path)
    return str(v)


def _nums(v, path):
    if not isinstance(v, list):
        raise ScenarioError(f"expected a list of numbers, got {v!r}", path)
    return [_num(x, path + (i,)) for i, x in enumerate(v)]


def _strs(v, path):
    if not isinstance(v, list):
        raise ScenarioError(f"expected a list, got {v!r}", path)
    return [_str(x, path + (i,)) for i, x in enumerate(v)]


INF = math.inf

SECTIONS: dict[str, dict[str, tuple]] = {
    "dynamics": {"b": (_str, "0"), "sigma": (_str, "1"), "gamma": (_str, "1"),
                 "bounds": (_nums, [INF, INF, INF])},
    "simulation": {"N": (_int, 1000), "h": (_num, 0.01), "t0": (_num, 0.0), "T": (_num, 1.0),
                   "snapshot_stride": (_int, 0), "branching": (_str, "exact"), "max_particles": (_int, 10_000_000)},
    "cost": {"running": (_str, "0"), "terminal": (_str, "0"), "C": (_num, INF), "p": (_num, 1.0)},
    "family": {"K": (_int, 64), "centers": (_nums, None), "scales": (_nums, None), "degrees": (_nums, None)},
    "ito": {"significance_sigmas": (_num, 3.0), "qv_tolerance": (_num, 0.15), "s": (_num, None), "t": (_num, None)},
    "mass": {"variance_tolerance": (_num, 0.10)},
    "hjb": {"candidate": (_str, None), "T": (_num, 1.0), "samples": (_int, 100), "tol": (_num, 1e-6),
            "atoms": (_int, 5), "spread": (_num, 2.0), "max_mass": (_num, 2.0), "grid": (_nums, None),
            "alpha_star": (_str, None), "terminal_samples": (_int, 0), "beta": (_num, 0.0), "beta_sign": (_int, -1)},
    "value": {"t": (_num, None), "tau": (_num, None), "inner_paths": (_int, 20), "expected_policy": (_str, None)},
    "metric": {"triples": (_int, 1000), "atoms": (_int, 4), "spread": (_num, 3.0), "max_mass": (_num, 2.0),
               "growth_measures": (_int, 0), "growth_powers": (_nums, [1, 2, 3]), "growth_max_mass": (_num, 10.0)},
    "sympoly": {"polys": (_strs, []), "d": (_int, None), "random": (_int, 0), "random_degree": (_int, 6),
                "approximate": (_str, None), "degree": (_int, 6), "grid": (_int, 10), "box": (_nums, [-1.0, 1.0]),
                "horizon": (_num, 1.0), "error_bound": (_num, None)},
}

TOP_LEVEL = {"name", "seed", "paths", "initial", "fields", "functionals", "actions", "policies", "checks",
             *SECTIONS}

CHECKS = {
    "simulate": ("mass_martingale", "mass_variance", "increment_mean"),
    "ito-check": ("mean_zero", "qv", "linear_identity"),
    "sympoly": ("reconstruction", "term_bound", "approximation"),
    "hjb": ("hjb_zero", "terminal"),
    "verify": ("verification",),
    "value": ("argmin", "value_zero", "dpp"),
    "metric": ("symmetry", "identity", "triangle", "psi_growth"),
}
ALL_CHECKS = {c for cs in CHECKS.values() for c in cs}


def _section(raw, name):
    schema = SECTIONS[name]
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ScenarioError("expected a mapping", (name,))
    for k in raw:
        if k not in schema:
            raise ScenarioError(f"unknown key {k!r}", (name, k))
    out = {}
    for k, (conv, default) in schema.items():
        v = raw.get(k, default)
        out[k] = None if v is None else conv(v, (name, k))
        if isinstance(default, list) and out[k] is default:
            out[k] = list(default)
    return out


def _fields(raw):
    if raw is None:
        return []
    if not isinstance(raw, dict):
        raise ScenarioError("expected a mapping of name -> definition", ("fields",))
    out = []
    for name, spec in raw.items():
        path = ("fields", name)
        if not isinstance(name, str) or not name.isidentifier() or name in {"x", "t", "a", "m", "u"}:
            raise ScenarioError(f"invalid field name {name!r}", path)
        if isinstance(spec, (str, int, float)) and not isinstance(spec, bool):
            out.append({"name": name, "kind": "expr", "expr": str(spec)})
            continue
        if not isinstance(spec, dict) or len(spec) != 1:
            raise ScenarioError("expected an expression or one of {gaussian: ..., heat: ...}", path)
        (kind, params), = spec.items()
        if kind == "gaussian":
            keys = {"center": 0.0, "scale": 1.0, "amplitude": 1.0}
        elif kind == "heat":
            keys = {"scale": 1.0, "horizon": 1.0, "diffusivity": 1.0}
        else:
            raise ScenarioError(f"unknown field kind {kind!r}", path + (kind,))
        params = params or {}
        if not isinstance(params, dict):
            raise ScenarioError("expected a mapping", path + (kind,))
        for k in params:
            if k not in keys:
                raise ScenarioError(f"unknown key {k!r}", path + (kind, k))
        out.append({"name": name, "kind": kind, **{k: _num(params.get(k, d), path + (kind, k)) for k, d in keys.items()}})
    return out


def _functionals(raw, field_names):
    if raw is None:
        return []
    if not isinstance(raw, list):
        raise ScenarioError("expected a list", ("functionals",))
    out = []
    for i, spec in enumerate(raw):
        path = ("functionals", i)
        if isinstance(spec, str):
            spec = {"outer": spec}
        if not isinstance(spec, dict):
            raise ScenarioError("expected a mapping with 'outer'", path)
        for k in spec:
            if k not in ("name", "outer", "fields"):
                raise ScenarioError(f"unknown key {k!r}", path + (k,))
        if "outer" not in spec:
            raise ScenarioError("missing key 'outer'", path)
        outer = _str(spec["outer"], path + ("outer",))
        if "fields" in spec:
            names = _strs(spec["fields"], path + ("fields",))
        else:
            try:
                e = ex.parse(outer, list(field_names) + ["t"])
            except InputError as exc:
                raise ScenarioError(str(exc), path + ("outer",)) from None
            used = {str(s) for s in e.free_symbols}
            names = [n for n in field_names if n in used]
        for n in names:
            if n not in field_names:
                raise ScenarioError(f"unknown field {n!r}", path + ("fields",))
        out.append({"name": _str(spec.get("name", outer), path + ("name",)), "outer": outer, "fields": names})
    return out


def _initial(raw):
    path = ("initial",)
    if raw is None:
        return {"atoms": [[0.0, 1.0]]}
    if not isinstance(raw, dict):
        raise ScenarioError("expected a mapping with 'atoms'", path)
    for k in raw:
        if k != "atoms":
            raise ScenarioError(f"unknown key {k!r}", path + (k,))
    atoms = raw.get("atoms", [[0.0, 1.0]])
    if not isinstance(atoms, list):
        raise ScenarioError("expected a list of [position, mass]", path + ("atoms",))
    out = []
    for i, a in enumerate(atoms):
        if not isinstance(a, list) or len(a) != 2:
            raise ScenarioError("expected [position, mass]", path + ("atoms", i))
        pos, m = _num(a[0], path + ("atoms", i, 0)), _num(a[1], path + ("atoms", i, 1))
        if m < 0:
            raise ScenarioError("mass must be nonnegative", path + ("atoms", i, 1))
        out.append([pos, m])
    return {"atoms": out}


def _policies(raw, actions):
    if raw is None:
        return [{"name": f"const({actions[0]:g})", "constant": actions[0]}]
    if not isinstance(raw, list) or not raw:
        raise ScenarioError("expected a nonempty list", ("policies",))
    out = []
    for i, spec in enumerate(raw):
        path = ("policies", i)
        if not isinstance(spec, dict):
            raise ScenarioError("expected a mapping", path)
        for k in spec:
            if k not in ("name", "constant", "table"):
                raise ScenarioError(f"unknown key {k!r}", path + (k,))
        if ("constant" in spec) == ("table" in spec):
            raise ScenarioError("give exactly one of 'constant' or 'table'", path)
        if "constant" in spec:
            a = _num(spec["constant"], path + ("constant",))
            if a not in actions:
                raise ScenarioError(f"action {a:g} is not in the action grid", path + ("constant",))
            out.append({"name": _str(spec.get("name", f"const({a:g})"), path + ("name",)), "constant": a})
        else:
            tab = spec["table"]
            tpath = path + ("table",)
            if not isinstance(tab, dict):
                raise ScenarioError("expected a mapping", tpath)
            for k in tab:
                if k not in ("t_edges", "x_edges", "mass_edges", "values"):
                    raise ScenarioError(f"unknown key {k!r}", tpath + (k,))
            norm = {k: _nums(tab.get(k, []), tpath + (k,)) for k in ("t_edges", "x_edges", "mass_edges")}
            vals = np.asarray(tab.get("values"), dtype=object)
            try:
                vals = np.asarray(vals.tolist(), dtype=float)
            except (TypeError, ValueError):
                raise ScenarioError("values must be a nested list of numbers", tpath + ("values",)) from None
            shape = (len(norm["t_edges"]) + 1, len(norm["x_edges"]) + 1, len(norm["mass_edges"]) + 1)
            if vals.size != math.prod(shape):
                raise ScenarioError(f"values need {math.prod(shape)} entries for bins {shape}", tpath + ("values",))
            norm["values"] = vals.reshape(-1).tolist()
            out.append({"name": _str(spec.get("name", f"table{i}"), path + ("name",)), "table": norm})
    return out


# ---------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    paths: int
    initial: dict
    fields: list
    functionals: list
    actions: list
    policies: list
    checks: list
    sections: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "Scenario":
        if not isinstance(raw, dict):
            raise ScenarioError("scenario must be a mapping at top level")
        for k in raw:
            if k not in TOP_LEVEL:
                raise ScenarioError(f"unknown key {k!r}", (k,))
        seed = _int(raw.get("seed", 0), ("seed",))
        if not 0 <= seed < 2**64:
            raise ScenarioError("seed must be an unsigned 64-bit integer", ("seed",))
        paths = _int(raw.get("paths", 100), ("paths",))
        if paths < 1:
            raise ScenarioError("paths must be >= 1", ("paths",))
        fields_ = _fields(raw.get("fields"))
        names = [f["name"] for f in fields_]
        actions = _nums(raw.get("actions", [0.0]), ("actions",))
        if not actions:
            raise ScenarioError("action grid is empty", ("actions",))
        checks = _strs(raw.get("checks", []), ("checks",))
        for i, c in enumerate(checks):
            if c not in ALL_CHECKS:
                raise ScenarioError(f"unknown check {c!r}", ("checks", i))
        sections = {s: _section(raw.get(s), s) for s in SECTIONS}
        if sections["simulation"]["branching"] not in BRANCHING_MODES:
            raise ScenarioError(f"must be one of {BRANCHING_MODES}", ("simulation", "branching"))
        if len(sections["dynamics"]["bounds"]) != 3:
            raise ScenarioError("expected three bounds (b, sigma, gamma)", ("dynamics", "bounds"))
        sc = cls(
            name=_str(raw.get("name", "scenario"), ("name",)),
            seed=seed,
            paths=paths,
            initial=_initial(raw.get("initial")),
            fields=fields_,
            functionals=_functionals(raw.get("functionals"), names),
            actions=actions,
            policies=_policies(raw.get("policies"), actions),
            checks=checks,
            sections=sections,
        )
        sc.validate_expressions()
        return sc

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"name": self.name, "seed": self.seed, "paths": self.paths,
                               "initial": copy.deepcopy(self.initial)}
        out["fields"] = {}
        for f in self.fields:
            if f["kind"] == "expr":
                out["fields"][f["name"]] = f["expr"]
            else:
                out["fields"][f["name"]] = {f["kind"]: {k: v for k, v in f.items() if k not in ("name", "kind")}}
        out["functionals"] = copy.deepcopy(self.functionals)
        out["actions"] = list(self.actions)
        out["policies"] = copy.deepcopy(self.policies)
        out["checks"] = list(self.checks)
        for s, vals in self.sections.items():
            out[s] = {k: v for k, v in vals.items() if v is not None}
        return out

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    # -- builders -----------------------------------------------------------

    def section(self, name: str) -> dict:
        return self.sections[name]

    def validate_expressions(self):
        self.dynamics()
        self.field_objects()
        self.functional_objects()
        self.cost_functions()

    def _dyn_fn(self, key: str):
        path = ("dynamics", key)
        try:
            e = ex.parse(self.sections["dynamics"][key], ["x", "a", "m", "t"])
        except InputError as exc:
            raise ScenarioError(str(exc), path) from None
        fn = ex.compile_expr(e, ["x", "a", "m"])
        if e.free_symbols & {ex.symbol("t")}:
            raise ScenarioError("time-dependent coefficients are not supported", path)
        const = not e.free_symbols

        def call(x, mu, a):
            return fn(np.asarray(x, dtype=float), np.asarray(a, dtype=float), mu.total_mass)

        return (float(e) if const else call), (e.free_symbols.isdisjoint({ex.symbol("a")}))

    def dynamics(self) -> ControlledDynamics:
        (b, fb), (s, fs), (g, fg) = (self._dyn_fn(k) for k in ("b", "sigma", "gamma"))
        d = self.sections["dynamics"]
        return ControlledDynamics(b, s, g, bounds=tuple(d["bounds"]), control_free=fb and fs and fg,
                                  description=f"b={d['b']} sigma={d['sigma']} gamma={d['gamma']}")

    def initial_measure(self) -> FiniteMeasure:
        return FiniteMeasure.from_atoms([(p, m) for p, m in self.initial["atoms"]])

    def field_objects(self) -> dict:
        out = {}
        for f in self.fields:
            try:
                if f["kind"] == "expr":
                    out[f["name"]] = SmoothScalarField.from_expr(f["expr"], name=f["name"])
                elif f["kind"] == "gaussian":
                    out[f["name"]] = SmoothScalarField.gaussian(f["center"], f["scale"], f["amplitude"], name=f["name"])
                else:
                    out[f["name"]] = TimeField.heat_gaussian(f["scale"], f["horizon"], f["diffusivity"], name=f["name"])
            except InputError as exc:
                raise ScenarioError(str(exc), ("fields", f["name"])) from None
        return out

    def functional_objects(self) -> list[CylinderFunctional]:
        fo = self.field_objects()
        out = []
        for i, spec in enumerate(self.functionals):
            try:
                out.append(CylinderFunctional.build(spec["outer"], [fo[n] for n in spec["fields"]], name=spec["name"]))
            except InputError as exc:
                raise ScenarioError(str(exc), ("functionals", i, "outer")) from None
        return out

    def functional_by_name(self, text: str) -> CylinderFunctional:
        fo = self.field_objects()
        spec = _functionals([{"outer": text}], list(fo))[0]
        return CylinderFunctional.build(spec["outer"], [fo[n] for n in spec["fields"]], name=text)

    def policy_objects(self) -> list[Policy]:
        out = []
        for p in self.policies:
            if "constant" in p:
                out.append(Policy.constant(p["constant"], self.actions, p["name"]))
            else:
                t = p["table"]
                shape = (len(t["t_edges"]) + 1, len(t["x_edges"]) + 1, len(t["mass_edges"]) + 1)
                out.append(table_policy(np.reshape(t["values"], shape), self.actions, t["t_edges"], t["x_edges"],
                                        t["mass_edges"], p["name"]))
        return out

    def cost_functions(self):
        c = self.sections["cost"]
        names = [f["name"] for f in self.fields]
        try:
            run = ex.parse(c["running"], ["x", "a", "m"])
        except InputError as exc:
            raise ScenarioError(str(exc), ("cost", "running")) from None
        try:
            term = ex.parse(c["terminal"], ["m", *names])
        except InputError as exc:
            raise ScenarioError(str(exc), ("cost", "terminal")) from None
        run_fn = ex.compile_expr(run, ["x", "a", "m"])
        used = [n for n in names if ex.symbol(n) in term.free_symbols]
        term_fn = ex.compile_expr(term, ["m", *used])

        def running(x, mu, a):
            return run_fn(np.asarray(x, dtype=float), np.asarray(a, dtype=float), mu.total_mass)

        fo = None

        def terminal(mu):
            nonlocal fo
            if fo is None:
                fo = self.field_objects()
            vals = []
            for n in used:
                f = fo[n]
                vals.append(mu.integrate(f.at(self.sections["simulation"]["T"]) if isinstance(f, TimeField) else f))
            return float(term_fn(mu.total_mass, *vals))

        return running, terminal

    def sim_config(self, seed: int | None = None, resolution: tuple | None = None, policy: Policy | None = None,
                   snapshot_stride: int | None = None) -> SimConfig:
        s = self.sections["simulation"]
        h, N = (resolution if resolution is not None else (s["h"], s["N"]))
        try:
            return SimConfig(N=int(N), h=float(h), t0=s["t0"], T=s["T"],
                             seed=self.seed if seed is None else seed, dynamics=self.dynamics(),
                             policy=policy or self.policy_objects()[0],
                             snapshot_stride=s["snapshot_stride"] if snapshot_stride is None else snapshot_stride,
                             branching=s["branching"], max_particles=s["max_particles"])
        except InputError as exc:
            raise ScenarioError(str(exc), ("simulation",)) from None

    def family(self) -> TestFamily:
        f = {k: v for k, v in self.sections["family"].items() if v is not None}
        for k in ("centers", "scales"):
            if k in f:
                f[k] = tuple(f[k])
        if "degrees" in f:
            f["degrees"] = tuple(int(d) for d in f["degrees"])
        return TestFamily(**f)


# ---------------------------------------------------------------------------
# loading


def _key_marks(text: str) -> dict:
    """Key path -> (line, column) of each mapping key / sequence item, 1-based."""
    marks: dict[tuple, tuple] = {}
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return marks

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (k.value,)
                marks[p] = (k.start_mark.line + 1, k.start_mark.column + 1)
                walk(v, p)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                p = path + (i,)
                marks[p] = (v.start_mark.line + 1, v.start_mark.column + 1)
                walk(v, p)

    if root is not None:
        walk(root, ())
    return marks


def parse_scenario(text: str) -> Scenario:
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line, col = (mark.line + 1, mark.column + 1) if mark else (None, None)
        raise ScenarioError(f"YAML syntax error: {exc.problem}", (), line, col) from None
    try:
        return Scenario.from_dict(raw if raw is not None else {})
    except ScenarioError as exc:
        marks = _key_marks(text)
        path = exc.path
        while path and path not in marks:
            path = path[:-1]
        if path and exc.line is None:
            line, col = marks[path]
            raise ScenarioError(exc.message, exc.path, line, col) from None
        raise


def load_scenario(path: str) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())
