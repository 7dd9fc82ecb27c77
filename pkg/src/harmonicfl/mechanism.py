"""Selection distributions and expected social costs.

The harmonic rule picks report i with probability proportional to
1 / (d_i + delta), where d_i is the distance from the report to the
prediction.  With delta = 0 and some reports exactly at the prediction the
weights blow up; we take the limit delta -> 0+, which splits all mass
uniformly over the zero-distance reports.  Random dictatorship is the uniform
baseline.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import UnsupportedDecompositionError
from .instance import Instance
from .metric import MetricSpace, Point


@dataclass
class HarmonicDistribution:
    probs: np.ndarray
    weights: np.ndarray
    denominator: float  # sum of weights; +inf sentinel when the zero rule fires
    zero_set: tuple[int, ...]
    delta: float | None

    @property
    def zero_rule_triggered(self) -> bool:
        return bool(self.zero_set)


def harmonic_distribution(d: Sequence[float], delta: float) -> HarmonicDistribution:
    d = np.asarray(d, dtype=float)
    if d.size == 0:
        raise ValueError("need at least one agent")
    if delta < 0 or np.any(d < 0):
        raise ValueError("distances and delta must be nonnegative")
    if delta == 0.0 and np.any(d == 0.0):
        zero = d == 0.0
        probs = zero / zero.sum()
        weights = np.where(zero, np.inf, np.divide(1.0, d, out=np.full_like(d, np.inf), where=d > 0))
        return HarmonicDistribution(probs, weights, math.inf, tuple(np.flatnonzero(zero)), 0.0)
    weights = 1.0 / (d + delta)
    denom = float(weights.sum())
    return HarmonicDistribution(weights / denom, weights, denom, (), float(delta))


def rd_distribution(n: int) -> HarmonicDistribution:
    if n < 1:
        raise ValueError("need at least one agent")
    probs = np.full(n, 1.0 / n)
    return HarmonicDistribution(probs, np.ones(n), float(n), (), None)


def social_cost(f: Point, locations: Sequence[Point], space: MetricSpace) -> float:
    return float(sum(space.distance(f, p) for p in locations))


def expected_agent_cost(
    i: int,
    true_loc: Point,
    reports: Sequence[Point],
    dist: HarmonicDistribution,
    space: MetricSpace,
) -> float:
    if not 0 <= i < len(reports):
        raise IndexError(f"agent index {i} out of range")
    if len(dist.probs) != len(reports):
        raise ValueError("distribution does not match report count")
    return float(sum(p * space.distance(true_loc, r) for p, r in zip(dist.probs, reports) if p > 0))


def expected_social_cost(instance: Instance, reports: Sequence[Point], dist: HarmonicDistribution) -> float:
    if len(reports) != instance.n:
        raise ValueError("report count does not match instance")
    return float(
        sum(
            expected_agent_cost(i, loc, reports, dist, instance.space)
            for i, loc in enumerate(instance.locations)
        )
    )


def sample_facility(dist: HarmonicDistribution, reports: Sequence[Point], rng: np.random.Generator) -> Point:
    """Realized outcome; analysis code always works with exact expectations."""
    idx = rng.choice(len(reports), p=dist.probs)
    return reports[int(idx)]


def sc_decomposition(certificate, instance: Instance) -> tuple[float, float, float]:
    """Split the expected social cost at a certified equilibrium into the
    prediction-reporters term, truthful term, and interior term.

    Requires delta > 0 whenever any report sits exactly at the prediction
    (the first term divides by delta and the weight mass degenerates).
    """
    delta = certificate.delta
    d = certificate.d
    if delta == 0.0 and np.any(d == 0.0):
        raise UnsupportedDecompositionError(
            "decomposition undefined at delta = 0 with reports at the prediction"
        )
    t = certificate.t
    c = certificate.c
    n = instance.n
    D = float(np.sum(1.0 / (d + delta)))
    term_s = 0.0
    if certificate.S:
        term_s = (len(certificate.S) / delta) / D * float(t.sum())
    term_t = 0.0
    for j in certificate.T:
        term_t += (1.0 / (t[j] + delta)) / D * float(instance.dij[:, j].sum())
    term_u = 0.0
    for j in certificate.U:
        term_u += (1.0 / (d[j] + delta)) / D * float(c[:, j].sum())
    return term_s, term_t, term_u


@dataclass
class MechanismConfig:
    """Mechanism selection plus the delta parameter, either given directly or
    derived from a target ratio c via delta = c * SC(prediction) / n."""

    kind: str  # "harmonic" | "rd"
    delta: float | None = None
    c: float | None = None
    rho_bar: float | None = None

    def __post_init__(self):
        if self.kind not in ("harmonic", "rd"):
            raise ValueError(f"unknown mechanism kind {self.kind!r}")
        if self.kind == "harmonic" and self.delta is None and self.c is None:
            raise ValueError("harmonic mechanism needs delta or c")
        if self.delta is not None and self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.c is not None and self.c < 0:
            raise ValueError("c must be nonnegative")

    def resolve_delta(self, instance: Instance) -> float:
        """Pin delta for a given instance, applying the c binding if needed."""
        if self.kind == "rd":
            return 0.0
        if self.delta is not None:
            return float(self.delta)
        rho = instance.prediction_cost() / instance.n
        object.__setattr__(self, "rho_bar", rho)
        return float(self.c) * rho

    @classmethod
    def harmonic_from_c(cls, instance: Instance, c: float) -> "MechanismConfig":
        rho = instance.prediction_cost() / instance.n
        return cls("harmonic", delta=c * rho, c=c, rho_bar=rho)

    def distribution(self, reports: Sequence[Point], prediction: Point, space: MetricSpace) -> HarmonicDistribution:
        if self.kind == "rd":
            return rd_distribution(len(reports))
        if self.delta is None:
            raise ValueError("delta unresolved; call resolve_delta or harmonic_from_c first")
        d = [space.distance(prediction, r) for r in reports]
        return harmonic_distribution(d, self.delta)

    def to_json(self) -> dict:
        if self.kind == "rd":
            return {"kind": "rd"}
        if self.c is not None and self.delta is None:
            return {"kind": "harmonic", "c": self.c}
        return {"kind": "harmonic", "delta": self.delta}

    @classmethod
    def from_json(cls, obj: dict | str) -> "MechanismConfig":
        if isinstance(obj, str):
            obj = json.loads(obj)
        kind = obj.get("kind")
        if kind == "rd":
            return cls("rd")
        if kind == "harmonic":
            return cls("harmonic", delta=obj.get("delta"), c=obj.get("c"))
        raise ValueError(f"unknown mechanism kind {kind!r}")
