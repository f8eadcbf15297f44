"""Command-line front end: ``mvcalc <command> --config scenario.yaml``.

Every command writes ``records.csv`` (long format, one number per row with
the operation that produced it) and ``summary.txt`` into the output
directory; some also write data files (snapshots, increments,
decompositions).  Record files are deterministic for a given scenario and
seed; only the summary carries a timestamp.

Exit status: 0 when every selected check passes (or none are selected),
1 when a check fails, 2 on configuration or input errors, 3 when a resource
limit is hit.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import norm as normal

from mvcalc import __version__
from mvcalc import expr as ex
from mvcalc import sympoly as spoly
from mvcalc.control import (
    CostSpec,
    GrowthFunction,
    dpp_check,
    hjb_residual,
    psi_growth_check,
    value_estimate,
    verify_candidate,
)
from mvcalc.errors import CapabilityError, InputError, ResourceError
from mvcalc.ito import ito_report, ito_residual, predicted_variation, qv_compare, test_mean_zero
from mvcalc.measure import FiniteMeasure, metric
from mvcalc.particles import (
    increment_rows,
    martingale_increment,
    simulate_paths,
    snapshot_records,
)
from mvcalc.scenario import CHECKS, Scenario, ScenarioError, load_scenario

COMMANDS = tuple(CHECKS)
OUT_ENV = "MVCALC_OUT"


@dataclass
class CheckResult:
    name: str
    subject: str
    passed: bool
    detail: str

    @property
    def label(self) -> str:
        return f"{self.name}[{self.subject}]" if self.subject else self.name


class Records:
    """Long-format rows ``(record, operation, subject, quantity, value)``."""

    def __init__(self):
        self.rows: list[tuple] = []

    def add(self, operation: str, subject, quantity: str, value):
        if isinstance(value, (bool, np.bool_)):
            value = int(value)
        if isinstance(value, (float, np.floating)):
            value = repr(float(value))
        self.rows.append((len(self.rows), operation, str(subject), quantity, value))

    def write(self, path: Path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("record", "operation", "subject", "quantity", "value"))
            w.writerows(self.rows)


@dataclass
class RunContext:
    sc: Scenario
    seed: int
    paths: int
    out: Path
    threads: int
    resolution: tuple | None
    increments: bool
    records: Records
    checks: list
    selected: set


def _selected(ctx: RunContext, name: str) -> bool:
    return name in ctx.selected


def _z_threshold(sigmas: float) -> float:
    return float(2 * normal.sf(sigmas))


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(ctx: RunContext):
    sc, rec = ctx.sc, ctx.records
    cfg = sc.sim_config(ctx.seed, ctx.resolution)
    fields = list(sc.field_objects().values())
    mu0 = sc.initial_measure()
    traces = simulate_paths(mu0, cfg, fields, ctx.paths, threads=ctx.threads)
    with open(ctx.out / "snapshots.jsonl", "w", encoding="utf-8") as fh:
        for line in snapshot_records(traces):
            fh.write(line + "\n")
    if ctx.increments:
        with open(ctx.out / "increments.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("path", "step", "test", "value", "operation"))
            for row in increment_rows(traces):
                w.writerow((*row[:3], repr(row[3]), "simulate"))
    masses = np.array([tr.mass[-1] for tr in traces])
    for tr in traces:
        rec.add("simulate", f"path{tr.path}", "mass_T", tr.mass[-1])
        rec.add("simulate", f"path{tr.path}", "particles_T", int(tr.particles[-1]))
    m0 = mu0.total_mass
    mean = float(np.mean(masses))
    var = float(np.var(masses, ddof=1)) if len(masses) > 1 else math.nan
    rec.add("simulate", "mass", "mean_T", mean)
    rec.add("simulate", "mass", "var_T", var)
    sig = sc.section("ito")["significance_sigmas"]
    if _selected(ctx, "mass_martingale"):
        _mean_zero_check(ctx, "mass_martingale", "mass", masses - m0, sig)
    if _selected(ctx, "mass_variance"):
        g = cfg.dynamics.gamma
        if callable(g) and not _is_constant(sc, "gamma"):
            ctx.checks.append(CheckResult("mass_variance", "mass", False, "needs a constant gamma"))
        else:
            gamma = float(ex.parse(sc.section("dynamics")["gamma"], []))
            target = gamma * (cfg.T - cfg.t0) * m0
            tol = sc.section("mass")["variance_tolerance"]
            ok = abs(var - target) <= tol
            rec.add("mass_variance", "mass", "target", target)
            ctx.checks.append(CheckResult("mass_variance", "mass", bool(ok),
                                          f"var {var:.4g} vs {target:.4g} (tolerance {tol:g})"))
    if _selected(ctx, "increment_mean"):
        for name in traces[0].field_names:
            inc = [martingale_increment(tr, name, cfg.t0, cfg.T) for tr in traces]
            _mean_zero_check(ctx, "increment_mean", name, inc, sig)


def _is_constant(sc: Scenario, key: str) -> bool:
    try:
        ex.parse(sc.section("dynamics")[key], [])
        return True
    except InputError:
        return False


def _mean_zero_check(ctx: RunContext, name: str, subject: str, values, sigmas: float):
    try:
        res = test_mean_zero(values, _z_threshold(sigmas))
    except InputError as exc:
        ctx.checks.append(CheckResult(name, subject, False, str(exc)))
        return None
    ctx.records.add(name, subject, "mean", res.mean)
    ctx.records.add(name, subject, "std_error", res.std_error)
    ctx.records.add(name, subject, "z_score", res.z_score)
    ctx.checks.append(CheckResult(name, subject, res.passed, f"z = {res.z_score:.3f} (threshold {res.threshold:.3f})"))
    return res


def cmd_ito_check(ctx: RunContext):
    sc, rec = ctx.sc, ctx.records
    cfg = sc.sim_config(ctx.seed, ctx.resolution)
    Fs = sc.functional_objects()
    if not Fs:
        raise ScenarioError("ito-check needs at least one functional", ("functionals",))
    registered = {}
    for F in Fs:
        for f in F.inner:
            registered.setdefault(f.name, f)
    traces = simulate_paths(sc.initial_measure(), cfg, list(registered.values()), ctx.paths, threads=ctx.threads)
    ito = sc.section("ito")
    s, t = ito["s"], ito["t"]
    thr = _z_threshold(ito["significance_sigmas"])
    table = []
    for F in Fs:
        res = [ito_residual(tr, F, cfg.dynamics, cfg.policy, s, t) for tr in traces]
        for k, r in enumerate(res):
            rec.add("ito_residual", f"{F.name}|path{k}", "M_F", r)
        rep = ito_report(traces, F, cfg.dynamics, cfg.policy, s, t, thr) if len(traces) >= 30 else None
        if rep is not None:
            table.append(rep)
            for k, v in rep.record().items():
                if k not in ("functional", "verdict"):
                    rec.add("ito_report", F.name, k, v)
        if _selected(ctx, "mean_zero"):
            _mean_zero_check(ctx, "mean_zero", F.name, res, ito["significance_sigmas"])
        if _selected(ctx, "qv"):
            if len(traces) < 100:
                ctx.checks.append(CheckResult("qv", F.name, False, f"needs >= 100 paths, got {len(traces)}"))
            else:
                pred = [predicted_variation(tr, F, cfg.dynamics, cfg.policy, s, t) for tr in traces]
                q = qv_compare(res, pred, ito["qv_tolerance"])
                rec.add("qv", F.name, "lhs", q.lhs)
                rec.add("qv", F.name, "rhs", q.rhs)
                rec.add("qv", F.name, "rel_gap", q.rel_gap)
                ctx.checks.append(CheckResult("qv", F.name, q.passed,
                                              f"gap {q.rel_gap:.3f} (tolerance {q.tolerance:g})"
                                              + (" vacuous" if q.vacuous else "")))
        if _selected(ctx, "linear_identity") and F.outer.arity == 1 and F.outer.text.strip() == F.inner[0].name:
            same = all(ito_residual(tr, F, cfg.dynamics, cfg.policy, s, t)
                       == martingale_increment(tr, F.inner[0], s if s is not None else cfg.t0,
                                               t if t is not None else cfg.T) for tr in traces)
            ctx.checks.append(CheckResult("linear_identity", F.name, same, "bit-identical" if same else "differs"))
    if table:
        with open(ctx.out / "ito_table.txt", "w", encoding="utf-8") as fh:
            fh.write(table[0].header() + "\n")
            for r in table:
                fh.write(r.row() + "\n")


def cmd_sympoly(ctx: RunContext):
    sc, rec = ctx.sc, ctx.records
    sp_cfg = sc.section("sympoly")
    d = sp_cfg["d"]
    polys = []
    for i, text in enumerate(sp_cfg["polys"]):
        try:
            polys.append((text, spoly.parse_poly(text, d)))
        except InputError as exc:
            raise ScenarioError(str(exc), ("sympoly", "polys", i)) from None
    rng = np.random.default_rng(np.random.SeedSequence([ctx.seed, 11]))
    for k in range(sp_cfg["random"]):
        p = spoly.random_symmetric(rng, sp_cfg["random_degree"], d or 1)
        polys.append((f"random{k}", p))
    lines = []
    for label, p in polys:
        try:
            dec = spoly.decompose(p)
        except InputError as exc:
            rec.add("decompose", label, "error", str(exc))
            if _selected(ctx, "reconstruction"):
                ctx.checks.append(CheckResult("reconstruction", label, False, str(exc)))
            continue
        rec.add("decompose", label, "terms", len(dec))
        lines.append(f"# {label}: {p}")
        for lam, g in dec.terms:
            lines.append(f"{lam} | {g}")
        if _selected(ctx, "reconstruction"):
            ok = dec.reconstruct() == p
            ctx.checks.append(CheckResult("reconstruction", label, ok, "exact" if ok else "mismatch"))
        if _selected(ctx, "term_bound") and p.d == 1:
            n = max((e[1] + e[2] for e in p.terms), default=0)
            bound = 3 * (n + 1) if all(e[0] == 0 for e in p.terms) else spoly.terms_bound_1d(p)
            ctx.checks.append(CheckResult("term_bound", label, len(dec) <= bound, f"{len(dec)} terms, bound {bound}"))
    with open(ctx.out / "decompositions.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
    if sp_cfg["approximate"] is not None:
        dd = d or 1
        names = spoly.variable_names(dd)
        try:
            e = ex.parse(sp_cfg["approximate"], names + (["x", "y"] if dd == 1 else []))
        except InputError as exc:
            raise ScenarioError(str(exc), ("sympoly", "approximate")) from None
        if dd == 1:
            e = e.subs({ex.symbol("x"): ex.symbol("x1"), ex.symbol("y"): ex.symbol("y1")})
        fn = ex.compile_expr(e, names)

        def kernel(u, x, y):
            if dd == 1:
                return fn(u, x, y)
            return fn(u, *(x[:, i] for i in range(dd)), *(y[:, i] for i in range(dd)))

        approx = spoly.approximate_symmetric(kernel, sp_cfg["degree"], sp_cfg["grid"], tuple(sp_cfg["box"]),
                                             sp_cfg["horizon"], dd)
        rec.add("approximate_symmetric", sp_cfg["approximate"], "sup_error", approx.sup_error)
        rec.add("approximate_symmetric", sp_cfg["approximate"], "terms", len(approx.poly))
        with open(ctx.out / "approximation.txt", "w", encoding="utf-8") as fh:
            fh.write(str(approx.poly) + "\n")
        if _selected(ctx, "approximation"):
            bound = sp_cfg["error_bound"]
            ok = bound is None or approx.sup_error <= bound
            ctx.checks.append(CheckResult("approximation", sp_cfg["approximate"], ok,
                                          f"sup error {approx.sup_error:.3e}" + (f" vs {bound:.3e}" if bound else "")))


def _cost(sc: Scenario) -> CostSpec:
    running, terminal = sc.cost_functions()
    c = sc.section("cost")
    return CostSpec(running, terminal, c["C"], c["p"], f"f={c['running']} g={c['terminal']}")


def _random_measure(rng: np.random.Generator, atoms: int, spread: float, max_mass: float) -> FiniteMeasure:
    n = int(rng.integers(1, atoms + 1))
    return FiniteMeasure(rng.normal(0.0, spread, n), rng.uniform(0.0, max_mass / n, n))


def _hjb_samples(ctx: RunContext):
    sc = ctx.sc
    h = sc.section("hjb")
    t0 = sc.section("simulation")["t0"]
    rng = np.random.default_rng(np.random.SeedSequence([ctx.seed, 13]))
    out = []
    for _ in range(h["samples"]):
        t = float(rng.uniform(t0, h["T"]))
        out.append((t, _random_measure(rng, h["atoms"], h["spread"], h["max_mass"])))
    for _ in range(h["terminal_samples"]):
        out.append((h["T"], _random_measure(rng, h["atoms"], h["spread"], h["max_mass"])))
    return out


def _candidate(ctx: RunContext):
    h = ctx.sc.section("hjb")
    if h["candidate"] is None:
        raise ScenarioError("missing candidate functional", ("hjb", "candidate"))
    try:
        return ctx.sc.functional_by_name(h["candidate"])
    except InputError as exc:
        raise ScenarioError(str(exc), ("hjb", "candidate")) from None


def cmd_hjb(ctx: RunContext):
    sc, rec = ctx.sc, ctx.records
    h = sc.section("hjb")
    W = _candidate(ctx)
    dyn, cost = sc.dynamics(), _cost(sc)
    grid = h["grid"] or sc.actions
    worst_i, worst_t = 0.0, 0.0
    for k, (t, mu) in enumerate(_hjb_samples(ctx)):
        r = hjb_residual(W, t, mu, dyn, cost, grid, h["T"], h["beta"], h["beta_sign"])
        scaled = abs(r) / (1.0 + mu.total_mass)
        rec.add("hjb_residual", f"sample{k}", "t", t)
        rec.add("hjb_residual", f"sample{k}", "mass", mu.total_mass)
        rec.add("hjb_residual", f"sample{k}", "residual", r)
        if t >= h["T"]:
            worst_t = max(worst_t, scaled)
        else:
            worst_i = max(worst_i, scaled)
    if _selected(ctx, "hjb_zero"):
        ctx.checks.append(CheckResult("hjb_zero", W.name, worst_i <= h["tol"],
                                      f"max |residual|/(1+mass) = {worst_i:.3e} (tol {h['tol']:g})"))
    if _selected(ctx, "terminal") and h["terminal_samples"]:
        ctx.checks.append(CheckResult("terminal", W.name, worst_t <= h["tol"],
                                      f"max |W - g|/(1+mass) = {worst_t:.3e}"))


def cmd_verify(ctx: RunContext):
    sc, rec = ctx.sc, ctx.records
    h = sc.section("hjb")
    W = _candidate(ctx)
    alpha = None
    if h["alpha_star"] is not None:
        pols = {p.name: p for p in sc.policy_objects()}
        if h["alpha_star"] not in pols:
            raise ScenarioError(f"unknown policy {h['alpha_star']!r}", ("hjb", "alpha_star"))
        alpha = pols[h["alpha_star"]]
    rep = verify_candidate(W, alpha, _hjb_samples(ctx), sc.dynamics(), _cost(sc), h["grid"] or sc.actions,
                           h["T"], h["tol"])
    for k, s in enumerate(rep.samples):
        rec.add("verify_candidate", f"sample{k}", "t", s.t)
        rec.add("verify_candidate", f"sample{k}", "margin", s.margin)
        rec.add("verify_candidate", f"sample{k}", "minimizer_gap", s.minimizer_gap)
        rec.add("verify_candidate", f"sample{k}", "passed", s.passed)
    with open(ctx.out / "verification.txt", "w", encoding="utf-8") as fh:
        fh.write(rep.header() + "\n" + "\n".join(rep.rows()) + "\n")
    if _selected(ctx, "verification"):
        bad = rep.failing()
        ctx.checks.append(CheckResult("verification", W.name, rep.passed,
                                      "all samples pass" if not bad else f"failing samples {bad[:10]}"))


def cmd_value(ctx: RunContext):
    sc, rec = ctx.sc, ctx.records
    v = sc.section("value")
    cfg = sc.sim_config(ctx.seed, ctx.resolution)
    t = cfg.t0 if v["t"] is None else v["t"]
    pols = sc.policy_objects()
    cost = _cost(sc)
    mu0 = sc.initial_measure()
    est = value_estimate(mu0, t, pols, cfg, cost, ctx.paths)
    for name, m, se in est.table:
        rec.add("value_estimate", name, "mean", m)
        rec.add("value_estimate", name, "std_error", se)
    rec.add("value_estimate", "min", "value", est.value)
    rec.add("value_estimate", "min", "argmin", est.argmin)
    if _selected(ctx, "argmin"):
        want = v["expected_policy"]
        ok = want is None or est.policy.name == want
        ctx.checks.append(CheckResult("argmin", est.policy.name, ok, f"argmin {est.policy.name!r}, expected {want!r}"))
    if _selected(ctx, "value_zero"):
        ok = abs(est.value) <= 3.0 * est.std_error
        ctx.checks.append(CheckResult("value_zero", est.policy.name, ok,
                                      f"value {est.value:.4g} +- {est.std_error:.3g}"))
    if _selected(ctx, "dpp"):
        tau = v["tau"] if v["tau"] is not None else t + cfg.h * round((cfg.T - t) / (2 * cfg.h))
        chk = dpp_check(mu0, t, tau, pols, cfg, cost, ctx.paths, v["inner_paths"])
        rec.add("dpp_check", f"tau={tau:g}", "direct", chk.direct)
        rec.add("dpp_check", f"tau={tau:g}", "two_stage", chk.two_stage)
        rec.add("dpp_check", f"tau={tau:g}", "two_stage_se", chk.two_stage_se)
        ctx.checks.append(CheckResult("dpp", f"tau={tau:g}", chk.passed,
                                      f"direct {chk.direct:.4g} vs two-stage {chk.two_stage:.4g}"))


def cmd_metric(ctx: RunContext):
    sc, rec = ctx.sc, ctx.records
    m = sc.section("metric")
    fam = sc.family()
    rng = np.random.default_rng(np.random.SeedSequence([ctx.seed, 17]))
    sym_ok = ident_ok = True
    worst = math.inf
    for k in range(m["triples"]):
        a, b, c = (_random_measure(rng, m["atoms"], m["spread"], m["max_mass"]) for _ in range(3))
        dab, dba = metric(a, b, fam), metric(b, a, fam)
        dbc, dac = metric(b, c, fam), metric(a, c, fam)
        sym_ok &= dab == dba
        ident_ok &= metric(a, a, fam) == 0.0
        worst = min(worst, dab + dbc - dac)
    if m["triples"]:
        rec.add("metric", "triples", "count", m["triples"])
        rec.add("metric", "triples", "min_triangle_slack", worst)
        if _selected(ctx, "symmetry"):
            ctx.checks.append(CheckResult("symmetry", "metric", bool(sym_ok), "exact" if sym_ok else "asymmetric"))
        if _selected(ctx, "identity"):
            ctx.checks.append(CheckResult("identity", "metric", bool(ident_ok), "d(mu, mu) == 0"))
        if _selected(ctx, "triangle"):
            ctx.checks.append(CheckResult("triangle", "metric", worst >= -1e-12, f"min slack {worst:.3e}"))
    if m["growth_measures"]:
        violations = []
        for p in m["growth_powers"]:
            gf = GrowthFunction(int(p), fam)
            for k in range(m["growth_measures"]):
                mu = _random_measure(rng, m["atoms"], m["spread"], m["growth_max_mass"])
                res = psi_growth_check(mu, gf)
                if not res.passed:
                    violations.append((int(p), mu, res))
            rec.add("psi_growth", f"p={int(p)}", "violations", sum(1 for v in violations if v[0] == int(p)))
        if violations:
            with open(ctx.out / "psi_violations.txt", "w", encoding="utf-8") as fh:
                for p, mu, res in violations:
                    fh.write(f"p={p} lhs1={res.lhs_first!r} lhs2={res.lhs_second!r} rhs={res.rhs!r}\n{mu.to_text()}\n")
        if _selected(ctx, "psi_growth"):
            ctx.checks.append(CheckResult("psi_growth", "psi", not violations,
                                          f"{len(violations)} violations" if violations else "no violations"))


HANDLERS = {
    "simulate": cmd_simulate,
    "ito-check": cmd_ito_check,
    "sympoly": cmd_sympoly,
    "hjb": cmd_hjb,
    "verify": cmd_verify,
    "value": cmd_value,
    "metric": cmd_metric,
}


# ---------------------------------------------------------------------------
# entry point


def _resolution(text: str) -> tuple:
    try:
        h, n = text.split(",")
        return float(h), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'h,N', got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvcalc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mvcalc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--config", required=True, help="scenario YAML file")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--paths", type=int, default=None, help="override the number of paths")
        p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV}/<name> or ./mvcalc-out/<name>)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for path simulation")
        p.add_argument("--resolution", type=_resolution, default=None, metavar="h,N",
                       help="override the step size and particles per unit mass")
        p.add_argument("--no-increments", action="store_true", help="skip increments.csv (simulate)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _write_summary(ctx: RunContext, command: str, status: int, note: str = ""):
    lines = [
        f"mvcalc {__version__} {command}",
        f"scenario: {ctx.sc.name}",
        f"seed: {ctx.seed}",
        f"paths: {ctx.paths}",
        f"written: {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}",
        "",
    ]
    if not ctx.checks:
        lines.append("no checks")
    else:
        width = max(len(c.label) for c in ctx.checks)
        for c in ctx.checks:
            lines.append(f"{c.label:<{width}}  {'PASS' if c.passed else 'FAIL'}  {c.detail}")
    if note:
        lines += ["", note]
    lines += ["", "result: " + ("PASS" if status == 0 else "FAIL")]
    (ctx.out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        sc = load_scenario(args.config)
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc.strerror}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return 2
    if args.paths is not None and args.paths < 1:
        print("error: --paths must be >= 1", file=sys.stderr)
        return 2
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    out = Path(args.out or Path(os.environ.get(OUT_ENV, "mvcalc-out")) / sc.name)
    out.mkdir(parents=True, exist_ok=True)
    selected = {c for c in sc.checks if c in CHECKS[args.command]}
    ctx = RunContext(sc, sc.seed if args.seed is None else args.seed, args.paths or sc.paths, out,
                     max(1, args.threads), args.resolution, not args.no_increments, Records(), [], selected)
    try:
        HANDLERS[args.command](ctx)
    except ResourceError as exc:
        print(f"error: resource limit: {exc}", file=sys.stderr)
        _write_summary(ctx, args.command, 3, f"resource error: {exc}")
        return 3
    except (InputError, CapabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        _write_summary(ctx, args.command, 2, f"input error: {exc}")
        return 2
    ctx.records.write(out / "records.csv")
    failing = [c.label for c in ctx.checks if not c.passed]
    status = 1 if failing else 0
    _write_summary(ctx, args.command, status)
    if failing:
        print("failed checks: " + ", ".join(failing), file=sys.stderr)
    elif not ctx.checks:
        print("no checks selected")
    else:
        print(f"{len(ctx.checks)} checks passed")
    return status


if __name__ == "__main__":
    sys.exit(main())
