"""Statistical checks of the Ito formula for cylinder functionals on simulated traces.

For ``F(t, mu) = G(t, <phi_1, mu>, ...)`` the discrete martingale part over
``[s, t]`` is

    M_F = F(t, mu_t) - F(s, mu_s) - sum_k h * drift_k

with left-endpoint drift ``dF/dt + <L dF/dmu, mu> + (1/2) <gamma d2F/dmu2(x, x), mu>``.
Its predicted quadratic variation is ``sum_k h <gamma (dF/dmu)^2, mu_k>``.

When every inner field of ``F`` was registered with the simulator both
quantities come straight from the per-step records; otherwise they are
recomputed from stored snapshots (which then must exist at every step).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from mvcalc.errors import InputError
from mvcalc.functional import (
    ControlledDynamics,
    CylinderFunctional,
    TimeField,
    drift_from_moments,
    field_moments,
    resolve_actions,
    variation_from_moments,
)
from mvcalc.particles import Trace, compensated_sum

THREE_SIGMA = float(2 * norm.sf(3.0))
MIN_MEAN_SAMPLES = 30
MIN_QV_PATHS = 100
QV_TOLERANCE = 0.15
QV_EPS = 1e-12


def _registered(trace: Trace, F: CylinderFunctional):
    try:
        return [trace.field_index(f) for f in F.inner]
    except InputError:
        return None


def _series_from_records(trace: Trace, F: CylinderFunctional, idx: list[int]):
    times = trace.times
    tl = times[:-1] if F.outer.time_dependent else None
    v = trace.values[:, idx]
    fvals = F.outer.value(v, times if F.outer.time_dependent else None)
    vl = v[:-1]
    c = trace.gram[:, idx][:, :, idx]
    drift = drift_from_moments(F.outer, vl, trace.gens[:, idx], c, tl)
    if F.has_time_fields:
        g = F.outer.grad(vl, tl)
        for i, f in enumerate(F.inner):
            if isinstance(f, TimeField):
                drift = drift + g[:, i] * trace.dtv[:, idx[i]]
    qv = variation_from_moments(F.outer, vl, c, tl)
    return fvals, drift, qv


def _series_from_snapshots(trace: Trace, F: CylinderFunctional, dyn: ControlledDynamics, policy,
                           i: int, j: int, transform: Callable | None):
    if dyn is None:
        raise InputError(f"functional {F.name!r} is not registered on the trace: pass the dynamics")
    snaps = dict(trace.snapshots)
    missing = [k for k in range(i, j + 1) if k not in snaps]
    if missing:
        raise InputError(
            f"functional {F.name!r} is not registered and no snapshot exists at step {missing[0]}; "
            "register its fields or simulate with snapshot_stride=1"
        )
    n = trace.n_steps
    fvals = np.zeros(n + 1)
    drift = np.zeros(n)
    qv = np.zeros(n)
    for k in range(i, j + 1):
        t = float(trace.times[k])
        mu = snaps[k] if transform is None else transform(snaps[k])
        fields = F.fields_at(t)
        tt = t if (F.time_dependent or F.has_time_fields) else None
        if len(mu):
            a = resolve_actions(policy, mu.x, mu, t)
            b, s, g = dyn.coefficients(mu.x, mu, a)
            v, lv, c = field_moments(fields, mu, b, s, g)
        else:
            m = len(fields)
            v, lv, c = np.zeros(m), np.zeros(m), np.zeros((m, m))
        td = t if F.outer.time_dependent else None
        fvals[k] = float(F.outer.value(v, td))
        if k == j:
            break
        d = float(drift_from_moments(F.outer, v, lv, c, td))
        if F.has_time_fields:
            gr = F.outer.grad(v, td)
            for q, f in enumerate(F.inner):
                if isinstance(f, TimeField):
                    d += gr[q] * mu.integrate(f.dt_at(tt))
        drift[k] = d
        qv[k] = float(variation_from_moments(F.outer, v, c, td))
    return fvals, drift, qv


def _interval(trace: Trace, s, t):
    s = trace.times[0] if s is None else s
    t = trace.times[-1] if t is None else t
    i, j = trace.step_index(s), trace.step_index(t)
    if not i < j:
        raise InputError("need s < t")
    return i, j


def functional_series(trace: Trace, F: CylinderFunctional, dyn: ControlledDynamics | None = None,
                      policy=None, s: float | None = None, t: float | None = None,
                      transform: Callable | None = None):
    """``(F values, drift, predicted QV density)`` along the step grid, plus ``(i, j)``."""
    i, j = _interval(trace, s, t)
    idx = _registered(trace, F)
    if idx is not None and transform is None:
        return (*_series_from_records(trace, F, idx), i, j)
    return (*_series_from_snapshots(trace, F, dyn, policy, i, j, transform), i, j)


def ito_residual(trace: Trace, F: CylinderFunctional, dyn: ControlledDynamics | None = None, policy=None,
                 s: float | None = None, t: float | None = None, transform: Callable | None = None) -> float:
    """Discrete martingale part ``M_F`` over ``[s, t]`` (defaults: the whole horizon).

    ``transform`` maps each snapshot before evaluation (e.g. a cutoff) and
    forces the snapshot route.
    """
    fvals, drift, _, i, j = functional_series(trace, F, dyn, policy, s, t, transform)
    return compensated_sum(fvals, drift, trace.h, i, j)


def predicted_variation(trace: Trace, F: CylinderFunctional, dyn: ControlledDynamics | None = None,
                        policy=None, s: float | None = None, t: float | None = None) -> float:
    """``sum_k h <gamma (dF/dmu)^2, mu_k>`` over ``[s, t]``."""
    _, _, qv, i, j = functional_series(trace, F, dyn, policy, s, t)
    return math.fsum(trace.h * qv[i:j])


# ---------------------------------------------------------------------------
# tests


@dataclass(frozen=True)
class MeanZeroResult:
    n: int
    mean: float
    std_error: float
    z_score: float
    threshold: float
    passed: bool


def test_mean_zero(residuals: Sequence[float], significance: float = THREE_SIGMA) -> MeanZeroResult:
    """Two-sided z-test of ``E[M] = 0``; ``significance`` is the two-sided tail mass."""
    r = np.asarray(residuals, dtype=float)
    if r.ndim != 1 or len(r) < MIN_MEAN_SAMPLES:
        raise InputError(f"need at least {MIN_MEAN_SAMPLES} residuals, got {r.size}")
    if not 0 < significance < 1:
        raise InputError("significance must lie in (0, 1)")
    n = len(r)
    mean = float(np.mean(r))
    se = float(np.std(r, ddof=1) / math.sqrt(n))
    thr = float(norm.isf(significance / 2))
    if se == 0.0:
        z = 0.0 if mean == 0.0 else math.copysign(math.inf, mean)
    else:
        z = mean / se
    return MeanZeroResult(n, mean, se, z, thr, bool(abs(z) <= thr))


test_mean_zero.__test__ = False


@dataclass(frozen=True)
class QVResult:
    n: int
    lhs: float
    rhs: float
    rel_gap: float
    tolerance: float
    vacuous: bool
    passed: bool


def qv_compare(residuals: Sequence[float], predicted: Sequence[float], tolerance: float = QV_TOLERANCE,
               eps: float = QV_EPS) -> QVResult:
    """Compare ``mean(M^2)`` with the mean predicted variation."""
    r = np.asarray(residuals, dtype=float)
    p = np.asarray(predicted, dtype=float)
    lhs = float(np.mean(r * r))
    rhs = float(np.mean(p))
    if abs(lhs) < eps and abs(rhs) < eps:
        return QVResult(len(r), lhs, rhs, 0.0, tolerance, True, True)
    gap = abs(lhs - rhs) / max(abs(rhs), eps)
    return QVResult(len(r), lhs, rhs, gap, tolerance, False, bool(gap <= tolerance))


def test_quadratic_variation(traces: Sequence[Trace], F: CylinderFunctional, dyn=None, policy=None,
                             s: float | None = None, t: float | None = None,
                             tolerance: float = QV_TOLERANCE, eps: float = QV_EPS) -> QVResult:
    if len(traces) < MIN_QV_PATHS:
        raise InputError(f"need at least {MIN_QV_PATHS} traces, got {len(traces)}")
    res, pred = [], []
    for tr in traces:
        fvals, drift, qv, i, j = functional_series(tr, F, dyn, policy, s, t)
        res.append(compensated_sum(fvals, drift, tr.h, i, j))
        pred.append(math.fsum(tr.h * qv[i:j]))
    return qv_compare(res, pred, tolerance, eps)


test_quadratic_variation.__test__ = False


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class ItoReport:
    functional: str
    s: float
    t: float
    paths: int
    mean_residual: float
    std_error: float
    z_score: float
    threshold: float
    qv_lhs: float
    qv_rhs: float
    qv_rel_gap: float
    verdict: str

    def record(self) -> dict:
        return asdict(self)

    @staticmethod
    def header() -> str:
        return f"{'functional':<28} {'paths':>6} {'mean':>12} {'se':>11} {'z':>8} {'qv_lhs':>11} {'qv_rhs':>11} {'gap':>7}  verdict"

    def row(self) -> str:
        return (f"{self.functional[:28]:<28} {self.paths:>6d} {self.mean_residual:>12.4e} {self.std_error:>11.4e} "
                f"{self.z_score:>8.3f} {self.qv_lhs:>11.4e} {self.qv_rhs:>11.4e} {self.qv_rel_gap:>7.3f}  {self.verdict}")


def ito_report(traces: Sequence[Trace], F: CylinderFunctional, dyn=None, policy=None,
               s: float | None = None, t: float | None = None, significance: float = THREE_SIGMA) -> ItoReport:
    """Mean-zero test plus QV comparison; the verdict follows the mean-zero test."""
    res, pred = [], []
    for tr in traces:
        fvals, drift, qv, i, j = functional_series(tr, F, dyn, policy, s, t)
        res.append(compensated_sum(fvals, drift, tr.h, i, j))
        pred.append(math.fsum(tr.h * qv[i:j]))
    mz = test_mean_zero(res, significance)
    qv = qv_compare(res, pred)
    tr0 = traces[0]
    return ItoReport(
        functional=F.name,
        s=float(tr0.times[i]),
        t=float(tr0.times[j]),
        paths=len(traces),
        mean_residual=mz.mean,
        std_error=mz.std_error,
        z_score=mz.z_score,
        threshold=mz.threshold,
        qv_lhs=qv.lhs,
        qv_rhs=qv.rhs,
        qv_rel_gap=qv.rel_gap,
        verdict="pass" if mz.passed else "fail",
    )
