"""Optimal facility, prediction accuracy, PoA, and the inequality checkers.

Every checker asserts one explicit inequality that must hold at a certified
equilibrium.  A failing report falsifies either the certificate or the
implementation, so sweep drivers abort on any failure.  Checkers whose
preconditions do not apply return skipped reports instead of guessing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateInstanceError,
    NotStrictlyConvexError,
    UnsupportedDecompositionError,
)
from .equilibrium import EquilibriumCertificate
from .instance import Instance
from .mechanism import harmonic_distribution, rd_distribution, sc_decomposition, social_cost
from .metric import AnchorPoint, Circle, CirclePoint, EuclideanLp, EuclideanPoint, MetricSpace, Point, SegmentExtension

CHECK_RTOL = 1e-9


@dataclass
class OptResult:
    facility: Point
    value: float
    method: str  # "exact-median" | "breakpoint-exhaustive" | "weiszfeld" | "candidate-restricted"
    exact: bool
    iterations: int = 0
    residual: float = 0.0


@dataclass
class CheckReport:
    name: str
    rule: str
    left: float
    right: float
    passed: bool
    slack: float
    skipped: bool = False
    note: str = ""

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "rule": self.rule,
            "left": self.left,
            "right": self.right,
            "passed": self.passed,
            "slack": self.slack,
            "skipped": self.skipped,
            "note": self.note,
        }


def _report(name: str, rule: str, left: float, right: float, note: str = "") -> CheckReport:
    tol = CHECK_RTOL * max(1.0, abs(left), abs(right))
    return CheckReport(name, rule, float(left), float(right), left <= right + tol, float(right - left), note=note)


def _skip(name: str, rule: str, note: str) -> CheckReport:
    return CheckReport(name, rule, 0.0, 0.0, True, 0.0, skipped=True, note=note)


class CheckFailure(Exception):
    def __init__(self, reports: list[CheckReport]):
        self.reports = reports
        failing = [r for r in reports if not r.passed]
        super().__init__("; ".join(f"{r.name}: {r.left} > {r.right}" for r in failing))


# ---------------------------------------------------------------------------
# optimal facility


def _weiszfeld(points: np.ndarray, tol: float = 1e-10, max_iters: int = 10_000):
    """Geometric median via reweighted averaging with the standard correction
    when an iterate lands on a data point."""
    scale = max(1.0, float(np.max(np.abs(points))))
    z = points.mean(axis=0)
    resid = math.inf
    for it in range(1, max_iters + 1):
        diff = points - z
        d = np.sqrt(np.sum(diff * diff, axis=1))
        on_point = d < 1e-14 * scale
        if on_point.any():
            rest = ~on_point
            if not rest.any():
                return z, it, 0.0
            r_vec = np.sum(diff[rest] / d[rest, None], axis=0)
            r = float(np.linalg.norm(r_vec))
            eta = float(on_point.sum())
            if r <= eta:
                return z, it, 0.0  # data point satisfies the optimality condition
            w = 1.0 / d[rest]
            t_point = np.sum(points[rest] * w[:, None], axis=0) / w.sum()
            lam = max(0.0, 1.0 - eta / r)
            z_new = lam * t_point + (1.0 - lam) * z
        else:
            w = 1.0 / d
            z_new = np.sum(points * w[:, None], axis=0) / w.sum()
        resid = float(np.linalg.norm(z_new - z))
        z = z_new
        if resid <= tol * scale:
            break
    return z, it, resid


def one_median(space: MetricSpace, locations, extra_candidates=()) -> OptResult:
    """Best facility location for a set of points, exact where the geometry
    allows and candidate-restricted otherwise."""
    locations = [space.canonical(p) for p in locations]
    if isinstance(space, EuclideanLp):
        if space.dim == 1:
            vals = sorted(p.coords[0] for p in locations)
            med = EuclideanPoint((vals[(len(vals) - 1) // 2],))
            return OptResult(med, social_cost(med, locations, space), "exact-median", True)
        if space.p == 2.0:
            pts = np.array([p.coords for p in locations])
            z, iters, resid = _weiszfeld(pts)
            fac = EuclideanPoint(tuple(z))
            return OptResult(fac, social_cost(fac, locations, space), "weiszfeld", True, iters, resid)
        candidates = list(locations) + [space.canonical(p) for p in extra_candidates]
    elif isinstance(space, Circle):
        # Social cost is piecewise linear in arc position with breakpoints
        # only at agent positions and their antipodes.
        L = space.circumference
        arcs = [p.arc for p in locations]  # type: ignore[union-attr]
        breaks = arcs + [(a + L / 2.0) % L for a in arcs]
        best = None
        for b in breaks:
            cand = CirclePoint(b)
            sc = social_cost(cand, locations, space)
            if best is None or sc < best[1]:
                best = (cand, sc)
        return OptResult(best[0], best[1], "breakpoint-exhaustive", True)
    elif isinstance(space, SegmentExtension):
        anchors = [AnchorPoint(i) for i in range(space.anchor_count)]
        candidates = list(locations) + anchors + [space.canonical(p) for p in extra_candidates]
    else:
        candidates = list(locations) + [space.canonical(p) for p in extra_candidates]
    best = None
    for cand in candidates:
        sc = social_cost(cand, locations, space)
        if best is None or sc < best[1]:
            best = (cand, sc)
    return OptResult(best[0], best[1], "candidate-restricted", False)


def optimal_facility(instance: Instance) -> OptResult:
    return one_median(instance.space, instance.locations, extra_candidates=(instance.prediction,))


def gamma_accuracy(instance: Instance, opt: OptResult | None = None) -> float:
    """Prediction cost over the optimal cost."""
    if opt is None:
        opt = optimal_facility(instance)
    pred_sc = instance.prediction_cost()
    if opt.value == 0.0:
        if pred_sc == 0.0:
            return 1.0
        raise DegenerateInstanceError("opt = 0 with a nonzero prediction cost")
    return pred_sc / opt.value


def poa(instance: Instance, delta: float, certificates, opt: OptResult | None = None) -> float:
    """Worst certified equilibrium cost over the optimal cost."""
    if not certificates:
        raise ValueError("need at least one certificate")
    if opt is None:
        opt = optimal_facility(instance)
    if opt.value <= 0.0:
        raise DegenerateInstanceError("PoA undefined at opt = 0")
    return max(c.expected_social_cost() for c in certificates) / opt.value


def pairwise_average(instance: Instance) -> float:
    """(1/n) sum of all ordered pairwise distances between true locations."""
    return float(instance.dij.sum()) / instance.n


# ---------------------------------------------------------------------------
# checkers


def check_consistency_bound(
    instance: Instance,
    delta: float,
    certificates,
    opt: OptResult | None = None,
) -> CheckReport:
    rule = "poa <= gamma*(1+2c)"
    if opt is None:
        opt = optimal_facility(instance)
    gamma = gamma_accuracy(instance, opt)
    pred_sc = instance.prediction_cost()
    if pred_sc == 0.0:
        return _skip("consistency_bound", rule, "prediction cost 0; c undefined")
    c = delta / (pred_sc / instance.n)
    value = poa(instance, delta, certificates, opt)
    return _report("consistency_bound", rule, value, gamma * (1.0 + 2.0 * c))


def check_prob_tu(cert: EquilibriumCertificate) -> list[CheckReport]:
    """Selection probability of every non-prediction reporter is at most
    (2/n) * (t_i + delta) / (d_i + delta)."""
    rule = "p_i <= (2/n)*(t_i+delta)/(d_i+delta)"
    n = cert.n
    if cert.delta == 0.0 and np.any(cert.d == 0.0):
        return [_skip("prob_tu", rule, "zero-distance rule active at delta = 0")]
    dist = cert.distribution()
    out = []
    for i in sorted(set(cert.T) | set(cert.U)):
        bound = (2.0 / n) * (cert.t[i] + cert.delta) / (cert.d[i] + cert.delta)
        out.append(_report("prob_tu", rule, dist.probs[i], bound, note=f"agent {i}"))
    return out


def check_delta_d(cert: EquilibriumCertificate, c: float) -> CheckReport:
    """1/(delta*D) is bounded by max{(1/c+1)/n, (1/c+1)/(n/c)} under the
    binding delta = (c/n) * sum_i t_i."""
    rule = "1/(delta*D) <= max((1/c+1)/n, (1/c+1)/(n/c))"
    if cert.delta == 0.0:
        return _skip("delta_d", rule, "delta = 0")
    n = cert.n
    expected = (c / n) * float(cert.t.sum())
    if abs(expected - cert.delta) > 1e-9 * max(1.0, cert.delta):
        raise ValueError(f"delta binding violated: delta={cert.delta}, (c/n)*sum(t)={expected}")
    D = float(np.sum(1.0 / (cert.d + cert.delta)))
    bound = max((1.0 / c + 1.0) / n, (1.0 / c + 1.0) / (n / c))
    return _report("delta_d", rule, 1.0 / (cert.delta * D), bound)


def check_convex_cij(cert: EquilibriumCertificate, space: MetricSpace) -> list[CheckReport]:
    """Interior reports in strictly convex spaces satisfy
    c_ij <= ((t_j-d_j)/t_j)*t_i + (d_j/t_j)*d_ij."""
    rule = "c_ij <= ((t_j-d_j)/t_j)*t_i + (d_j/t_j)*d_ij"
    if not space.strictly_convex:
        raise NotStrictlyConvexError(
            "convex-combination bound only holds in strictly convex spaces"
        )
    out = []
    for j in cert.U:
        t_j, d_j = cert.t[j], cert.d[j]
        if t_j == 0.0:
            continue
        for i in range(cert.n):
            bound = ((t_j - d_j) / t_j) * cert.t[i] + (d_j / t_j) * cert.dij[i, j]
            out.append(_report("convex_cij", rule, cert.c[i, j], bound, note=f"i={i}, j={j}"))
    if not out:
        out.append(_skip("convex_cij", rule, "no interior reports"))
    return out


def check_metric_cij(cert: EquilibriumCertificate) -> list[CheckReport]:
    """Interior reports in any metric satisfy
    c_ij <= 2*t_i + 2*(d_j+delta)/(t_j+delta)*d_ij."""
    rule = "c_ij <= 2*t_i + 2*((d_j+delta)/(t_j+delta))*d_ij"
    out = []
    for j in cert.U:
        denom = cert.t[j] + cert.delta
        if denom == 0.0:
            continue
        ratio = (cert.d[j] + cert.delta) / denom
        for i in range(cert.n):
            bound = 2.0 * cert.t[i] + 2.0 * ratio * cert.dij[i, j]
            out.append(_report("metric_cij", rule, cert.c[i, j], bound, note=f"i={i}, j={j}"))
    if not out:
        out.append(_skip("metric_cij", rule, "no interior reports"))
    return out


def check_obs_large_dj(cert: EquilibriumCertificate) -> list[CheckReport]:
    """Whenever d_j >= 2*d_ij the report of j cannot be farther from i's true
    location than the prediction is: c_ij <= t_i."""
    rule = "d_j >= 2*d_ij  =>  c_ij <= t_i"
    out = []
    for i in range(cert.n):
        for j in range(cert.n):
            if cert.d[j] >= 2.0 * cert.dij[i, j]:
                out.append(_report("obs_large_dj", rule, cert.c[i, j], cert.t[i], note=f"i={i}, j={j}"))
    if not out:
        out.append(_skip("obs_large_dj", rule, "no qualifying pairs"))
    return out


def check_su_delta(cert: EquilibriumCertificate, space: MetricSpace) -> CheckReport:
    """Total mass of non-truthful agents times delta is bounded by pairwise
    distance sums; the strictly convex form is tighter than the general one."""
    su = len(cert.S) + len(cert.U)
    pair_sum = float(cert.dij.sum())
    n = cert.n
    if space.strictly_convex:
        rule = "(|S|+|U|)*delta <= (2/n)*sum_ij d_ij"
        return _report("su_delta", rule, su * cert.delta, (2.0 / n) * pair_sum)
    rule = "(1/2)*(|S|+|U|)*delta <= (4n/(delta*D)+2)*(1/n)*sum_ij d_ij"
    if cert.delta == 0.0:
        return _skip("su_delta", rule, "general form needs delta > 0")
    D = float(np.sum(1.0 / (cert.d + cert.delta)))
    bound = (4.0 * n / (cert.delta * D) + 2.0) * pair_sum / n
    return _report("su_delta", rule, 0.5 * su * cert.delta, bound)


def check_rd_approx(instance: Instance, opt: OptResult | None = None) -> CheckReport:
    """Uniform selection over truthful reports costs at most twice optimum."""
    rule = "rd_sc <= 2*opt"
    if opt is None:
        opt = optimal_facility(instance)
    dist = rd_distribution(instance.n)
    rd_sc = float(
        sum(
            p * social_cost(loc, instance.locations, instance.space)
            for p, loc in zip(dist.probs, instance.locations)
        )
    )
    if opt.value == 0.0:
        return CheckReport("rd_approx", rule, rd_sc, 0.0, rd_sc == 0.0, 0.0,
                           note="degenerate opt = 0")
    sharper = 2.0 * (1.0 - 1.0 / instance.n) if instance.n > 1 else 0.0
    return _report("rd_approx", rule, rd_sc, 2.0 * opt.value,
                   note=f"ratio={rd_sc / opt.value:.6f}, sharper bound 2(1-1/n)={sharper:.6f}")


def check_decomposition(cert: EquilibriumCertificate, instance: Instance,
                        opt: OptResult | None = None) -> list[CheckReport]:
    """Sum identity of the three-term cost split, and the truthful term
    against four times the optimum."""
    rule_sum = "|termS+termT+termU - SC| <= 1e-9*scale"
    rule_t = "termT <= 4*opt"
    if cert.delta == 0.0 and np.any(cert.d == 0.0):
        reason = "zero-distance rule active at delta = 0"
        return [_skip("decomposition_sum", rule_sum, reason), _skip("t_term_4opt", rule_t, reason)]
    try:
        term_s, term_t, term_u = sc_decomposition(cert, instance)
    except UnsupportedDecompositionError as exc:
        return [_skip("decomposition_sum", rule_sum, str(exc)), _skip("t_term_4opt", rule_t, str(exc))]
    sc = cert.expected_social_cost()
    total = term_s + term_t + term_u
    out = [_report("decomposition_sum", rule_sum, abs(total - sc), CHECK_RTOL * max(1.0, sc))]
    if opt is None:
        opt = optimal_facility(instance)
    out.append(_report("t_term_4opt", rule_t, term_t, 4.0 * opt.value))
    return out


def run_battery(
    instance: Instance,
    cert: EquilibriumCertificate,
    c: float | None = None,
    opt: OptResult | None = None,
) -> list[CheckReport]:
    """All checkers applicable to one certificate.  Failures are data here;
    sweep drivers raise CheckFailure on any non-passing report."""
    if opt is None:
        opt = optimal_facility(instance)
    reports: list[CheckReport] = []
    reports.extend(check_prob_tu(cert))
    if c is not None:
        reports.append(check_delta_d(cert, c))
    if instance.space.strictly_convex:
        reports.extend(check_convex_cij(cert, instance.space))
    reports.extend(check_metric_cij(cert))
    reports.extend(check_obs_large_dj(cert))
    reports.append(check_su_delta(cert, instance.space))
    reports.extend(check_decomposition(cert, instance, opt))
    return reports
