"""Two independent evaluations of the torus quasi-state.

``evaluate_reeb`` uses the cycle/tree decomposition of the Reeb graph:
the mean of ``H`` plus, for each tree, the integral of ``alpha_j - H`` over
its region.  ``evaluate_aarnes`` integrates the sublevel curve
``b(t) = tau({H <= t})``, computed from the disk-eliminating regularization
alone, as ``max H - int b dt``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .reeb_graph import CycleTreeDecomposition, build_reeb, decompose
from .surface_topology import sublevel, tau
from .torus_field import TorusField, critical_values, integrate

DEFAULT_TOL = 5e-3
DEFAULT_T_REFINE = 8
# grid size at which each critical interval gets exactly ``t_refine`` samples;
# finer grids get proportionally more so quadrature error tracks the mesh
REFERENCE_N = 256


@dataclass(frozen=True, eq=False)
class BCurve:
    t: np.ndarray
    b: np.ndarray
    critical_values: np.ndarray
    min_value: float
    max_value: float

    def to_csv(self) -> str:
        rows = ["t,b"] + [f"{t:.17g},{b:.17g}" for t, b in zip(self.t, self.b)]
        return "\n".join(rows) + "\n"


@dataclass
class QuasiStateReport:
    zeta_reeb: float | None = None
    zeta_aarnes: float | None = None
    mean: float | None = None
    tree_terms: list = field(default_factory=list)  # (alpha, term, region_measure)
    n: int | None = None
    mode: str = "reeb"
    seed: int | None = None
    tol: float = DEFAULT_TOL

    @property
    def discrepancy(self) -> float | None:
        if self.zeta_reeb is None or self.zeta_aarnes is None:
            return None
        return abs(self.zeta_reeb - self.zeta_aarnes)

    @property
    def flagged(self) -> bool:
        d = self.discrepancy
        return d is not None and d > self.tol

    @property
    def zeta(self) -> float:
        return self.zeta_reeb if self.zeta_reeb is not None else self.zeta_aarnes

    def to_json(self) -> dict:
        return {
            "zeta_reeb": self.zeta_reeb,
            "zeta_aarnes": self.zeta_aarnes,
            "mean": self.mean,
            "trees": [
                {"alpha": a, "term": term, "region_measure": m} for a, term, m in self.tree_terms
            ],
            "discrepancy": self.discrepancy,
            "n": self.n,
            "seed": self.seed,
            "mode": self.mode,
        }


def reeb_decomposition(field_: TorusField) -> CycleTreeDecomposition:
    return decompose(build_reeb(field_))


def evaluate_reeb(field_: TorusField, decomposition: CycleTreeDecomposition | None = None):
    dec = decomposition or reeb_decomposition(field_)
    mean = integrate(field_)
    terms = [(tr.alpha, tr.term, tr.measure) for tr in dec.trees]
    zeta = mean + math.fsum(term for _, term, _ in terms)
    return QuasiStateReport(zeta_reeb=zeta, mean=mean, tree_terms=terms, n=field_.n)


def _off_vertex(t: float, u: np.ndarray, toward: float) -> float:
    """Step ``t`` one float at a time toward ``toward`` until it is no vertex value."""
    k = np.searchsorted(u, t)
    while k < u.size and u[k] == t:
        t = float(np.nextafter(t, toward))
        k = np.searchsorted(u, t)
    return t


def sample_levels(
    field_: TorusField,
    t_refine: int = DEFAULT_T_REFINE,
    scale_with_n: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Regular sample levels and the critical values partitioning them.

    Every open interval between consecutive distinct critical values gets
    ``t_refine`` evenly spaced interior levels (times ``n / 256`` on finer
    grids) plus one level hugging each end, so the one-sided limits at the
    jumps are captured.
    """
    crit = np.unique(critical_values(field_))
    u = np.unique(field_.values)
    span = float(u[-1] - u[0])
    eps = 1e-9 * span
    ts = []
    for a, b in zip(crit[:-1], crit[1:]):
        count = int(t_refine)
        if scale_with_n:
            count = max(count, math.ceil(t_refine * field_.n / REFERENCE_N))
        inner = a + (b - a) * np.arange(1, count + 1) / (count + 1)
        mid = 0.5 * (a + b)
        lo = _off_vertex(a + min(eps, 0.25 * (b - a)), u, mid)
        hi = _off_vertex(b - min(eps, 0.25 * (b - a)), u, mid)
        inner = [_off_vertex(float(x), u, b) for x in inner]
        ts.append(np.concatenate([[lo], inner, [hi]]))
    if not ts:
        return np.empty(0), crit
    return np.sort(np.concatenate(ts)), crit


def b_curve_tau(field_: TorusField, ts=None, **sampling) -> BCurve:
    """``b(t) = tau({H <= t})`` via regularized sublevel sets; no Reeb graph."""
    if ts is None:
        ts, crit = sample_levels(field_, **sampling)
    else:
        crit = np.unique(critical_values(field_))
    b = np.array([tau(sublevel(field_, t)) for t in ts])
    return BCurve(np.asarray(ts), b, crit, field_.min_value, field_.max_value)


def b_curve_reeb(field_: TorusField, ts=None, decomposition=None, **sampling) -> BCurve:
    """``b(t) = |X^t cap S| + sum of |D_j| over trees with alpha_j < t``."""
    dec = decomposition or reeb_decomposition(field_)
    if ts is None:
        ts, crit = sample_levels(field_, **sampling)
    else:
        crit = np.unique(critical_values(field_))
    alphas = np.array([tr.alpha for tr in dec.trees])
    measures = np.array([tr.measure for tr in dec.trees])
    b = np.array(
        [dec.sublevel_cycle_measure(t) + measures[alphas < t].sum() for t in ts]
    )
    return BCurve(np.asarray(ts), b, crit, field_.min_value, field_.max_value)


class CurveError(ValueError):
    """The sampled curve is not a valid sublevel-measure curve."""


def evaluate_aarnes(curve: BCurve) -> float:
    """``max - int_min^max b(t) dt``; trapezoid inside each critical interval.

    ``b`` may jump at critical values only, so each interval is integrated
    on its own with the end samples held flat up to the interval ends.
    """
    t, b = curve.t, curve.b
    if np.any(np.diff(b) < -1e-9):
        k = int(np.argmin(np.diff(b)))
        raise CurveError(f"b decreases between t={t[k]!r} and t={t[k + 1]!r}")
    crit = curve.critical_values
    total = 0.0
    for a, c in zip(crit[:-1], crit[1:]):
        sel = (t > a) & (t < c)
        ts, bs = t[sel], b[sel]
        if ts.size == 0:
            raise CurveError(f"no samples in critical interval ({a}, {c})")
        total += bs[0] * (ts[0] - a) + bs[-1] * (c - ts[-1])
        total += float(np.sum(0.5 * (bs[1:] + bs[:-1]) * np.diff(ts)))
    return curve.max_value - total


def quasi_state(
    field_: TorusField,
    mode: str = "both",
    tol: float = DEFAULT_TOL,
    t_refine: int = DEFAULT_T_REFINE,
    refine_rtol: float | None = None,
    max_rounds: int = 4,
) -> QuasiStateReport:
    """Run the requested path(s); ``both`` also fills the discrepancy.

    With ``refine_rtol`` the Aarnes quadrature doubles its sampling until
    successive values change by less than that amount.
    """
    if mode not in ("reeb", "aarnes", "both"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode in ("reeb", "both"):
        rep = evaluate_reeb(field_)
    else:
        rep = QuasiStateReport(mean=integrate(field_), n=field_.n)
    rep.mode, rep.tol = mode, tol
    if mode in ("aarnes", "both"):
        z = evaluate_aarnes(b_curve_tau(field_, t_refine=t_refine))
        if refine_rtol is not None:
            for _ in range(max_rounds):
                t_refine = 2 * t_refine
                z_new = evaluate_aarnes(b_curve_tau(field_, t_refine=t_refine))
                done = abs(z_new - z) < refine_rtol
                z = z_new
                if done:
                    break
        rep.zeta_aarnes = z
    return rep


def zeta(field_: TorusField) -> float:
    """Quasi-state value via the Reeb formula."""
    return evaluate_reeb(field_).zeta_reeb
