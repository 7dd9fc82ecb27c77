"""Continuous metric spaces with distance and shortest-path interpolation.

Three space kinds are supported:

* ``EuclideanLp`` -- R^dim under the p-norm, p in [1, inf).  The canonical
  shortest path between two points is the straight segment, which realizes
  every intermediate distance for any p >= 1.
* ``Circle`` -- arc positions in [0, L) with the shorter-arc distance.  At
  exact antipodes the counterclockwise (increasing position) arc is canonical.
* ``SegmentExtension`` -- a discrete metric made continuous by gluing a
  segment of length d(p, q) between every anchor pair p < q.  Travel between
  two interior points either stays on a shared segment or exits through one
  endpoint, rides a direct anchor-to-anchor segment, and enters through an
  endpoint of the target segment.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidSpaceError, PathRangeError, SpaceMismatchError

# Relative tolerance for the metric axioms and snapping of path endpoints.
AXIOM_RTOL = 1e-9
_SNAP = 1e-12


@dataclass(frozen=True)
class EuclideanPoint:
    coords: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(float(x) for x in self.coords))


@dataclass(frozen=True)
class CirclePoint:
    arc: float


@dataclass(frozen=True)
class SegmentPoint:
    seg: tuple[int, int]
    offset: float


@dataclass(frozen=True)
class AnchorPoint:
    index: int


Point = EuclideanPoint | CirclePoint | SegmentPoint | AnchorPoint


def euclidean(*coords: float) -> EuclideanPoint:
    return EuclideanPoint(tuple(coords))


class MetricSpace:
    """Interface shared by all space kinds.  Instances are immutable."""

    strictly_convex: bool = False
    kind: str = "abstract"

    def distance(self, a: Point, b: Point) -> float:
        raise NotImplementedError

    def point_on_path(self, a: Point, b: Point, s: float) -> Point:
        raise NotImplementedError

    def canonical(self, p: Point) -> Point:
        raise NotImplementedError

    def check_point(self, p: Point) -> None:
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError

    def _path_span(self, a: Point, b: Point, s: float) -> float:
        d = self.distance(a, b)
        if s < -_SNAP * max(1.0, d) or s > d + _SNAP * max(1.0, d):
            raise PathRangeError(f"arc length {s} outside [0, {d}]")
        return d


class EuclideanLp(MetricSpace):
    kind = "euclidean"

    def __init__(self, dim: int, p: float = 2.0):
        if dim < 1:
            raise InvalidSpaceError("dimension must be >= 1")
        if not (1.0 <= p < math.inf):
            raise InvalidSpaceError("exponent must satisfy 1 <= p < inf")
        self.dim = int(dim)
        self.p = float(p)
        # p = 1 is the only non-strictly-convex exponent we admit.
        self.strictly_convex = self.p > 1.0

    def check_point(self, p: Point) -> None:
        if not isinstance(p, EuclideanPoint) or len(p.coords) != self.dim:
            raise SpaceMismatchError(f"expected {self.dim}-dim euclidean point, got {p!r}")

    def canonical(self, p: Point) -> Point:
        self.check_point(p)
        return p

    def distance(self, a: Point, b: Point) -> float:
        self.check_point(a)
        self.check_point(b)
        assert isinstance(a, EuclideanPoint) and isinstance(b, EuclideanPoint)
        if self.p == 2.0:
            return math.dist(a.coords, b.coords)
        if self.p == 1.0:
            return float(sum(abs(x - y) for x, y in zip(a.coords, b.coords)))
        return float(sum(abs(x - y) ** self.p for x, y in zip(a.coords, b.coords)) ** (1.0 / self.p))

    def point_on_path(self, a: Point, b: Point, s: float) -> Point:
        d = self._path_span(a, b, s)
        assert isinstance(a, EuclideanPoint) and isinstance(b, EuclideanPoint)
        if d == 0.0 or s <= 0.0:
            return a
        if s >= d:
            return b
        f = s / d
        return EuclideanPoint(tuple(x + f * (y - x) for x, y in zip(a.coords, b.coords)))

    def to_json(self) -> dict:
        return {"kind": "euclidean", "dim": self.dim, "p": self.p}


class Circle(MetricSpace):
    kind = "circle"

    def __init__(self, circumference: float):
        if not circumference > 0:
            raise InvalidSpaceError("circumference must be positive")
        self.circumference = float(circumference)
        self.strictly_convex = False

    def check_point(self, p: Point) -> None:
        if not isinstance(p, CirclePoint):
            raise SpaceMismatchError(f"expected circle point, got {p!r}")

    def canonical(self, p: Point) -> Point:
        self.check_point(p)
        assert isinstance(p, CirclePoint)
        arc = float(p.arc) % self.circumference
        if arc != p.arc:
            return CirclePoint(arc)
        return p

    def distance(self, a: Point, b: Point) -> float:
        self.check_point(a)
        self.check_point(b)
        assert isinstance(a, CirclePoint) and isinstance(b, CirclePoint)
        L = self.circumference
        diff = abs(a.arc - b.arc) % L
        return min(diff, L - diff)

    def point_on_path(self, a: Point, b: Point, s: float) -> Point:
        d = self._path_span(a, b, s)
        assert isinstance(a, CirclePoint) and isinstance(b, CirclePoint)
        if s <= 0.0:
            return self.canonical(a)
        if s >= d:
            return self.canonical(b)
        L = self.circumference
        forward = (b.arc - a.arc) % L
        # Forward means counterclockwise; ties at exact antipodes go forward.
        if forward <= L / 2.0:
            return CirclePoint((a.arc + s) % L)
        return CirclePoint((a.arc - s) % L)

    def to_json(self) -> dict:
        return {"kind": "circle", "L": self.circumference}


class SegmentExtension(MetricSpace):
    kind = "segment_extension"

    def __init__(self, matrix):
        mat = np.asarray(matrix, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] < 2:
            raise InvalidSpaceError("distance matrix must be square with >= 2 anchors")
        m = mat.shape[0]
        scale = max(1.0, float(np.max(np.abs(mat))))
        if np.max(np.abs(mat - mat.T)) > AXIOM_RTOL * scale:
            raise InvalidSpaceError("distance matrix must be symmetric")
        if np.max(np.abs(np.diag(mat))) > 0:
            raise InvalidSpaceError("diagonal must be zero")
        off = mat[~np.eye(m, dtype=bool)]
        if np.any(off <= 0):
            raise InvalidSpaceError("off-diagonal distances must be strictly positive")
        for j in range(m):
            through = mat[:, j][:, None] + mat[j, :][None, :]
            if np.min(through - mat) < -AXIOM_RTOL * scale:
                raise InvalidSpaceError("triangle inequality violated in distance matrix")
        self.matrix = 0.5 * (mat + mat.T)
        np.fill_diagonal(self.matrix, 0.0)
        self.matrix.setflags(write=False)
        self.anchor_count = m
        self.strictly_convex = False

    def check_point(self, p: Point) -> None:
        m = self.anchor_count
        if isinstance(p, AnchorPoint):
            if not (0 <= p.index < m):
                raise SpaceMismatchError(f"anchor index {p.index} out of range")
            return
        if isinstance(p, SegmentPoint):
            i, j = p.seg
            if not (0 <= i < j < m):
                raise SpaceMismatchError(f"segment pair {p.seg} invalid (need 0 <= p < q < {m})")
            length = self.matrix[i, j]
            if p.offset < -_SNAP * max(1.0, length) or p.offset > length + _SNAP * max(1.0, length):
                raise SpaceMismatchError(f"offset {p.offset} outside [0, {length}]")
            return
        raise SpaceMismatchError(f"expected segment or anchor point, got {p!r}")

    def canonical(self, p: Point) -> Point:
        self.check_point(p)
        if isinstance(p, AnchorPoint):
            return p
        assert isinstance(p, SegmentPoint)
        i, j = p.seg
        length = self.matrix[i, j]
        snap = _SNAP * max(1.0, length)
        if p.offset <= snap:
            return AnchorPoint(i)
        if p.offset >= length - snap:
            return AnchorPoint(j)
        return p

    def _ends(self, p: Point) -> list[tuple[int, float]]:
        """Exit options of a point: (anchor index, cost to reach it)."""
        if isinstance(p, AnchorPoint):
            return [(p.index, 0.0)]
        assert isinstance(p, SegmentPoint)
        i, j = p.seg
        return [(i, p.offset), (j, self.matrix[i, j] - p.offset)]

    def _routes(self, a: Point, b: Point):
        """Candidate travels from a to b in deterministic order.

        Yields (cost, tag) where tag is either ("direct",) for same-segment
        travel or ("via", e1, e2) for an endpoint routing.
        """
        if (
            isinstance(a, SegmentPoint)
            and isinstance(b, SegmentPoint)
            and a.seg == b.seg
        ):
            yield abs(a.offset - b.offset), ("direct",)
        ends_a = self._ends(a)
        ends_b = self._ends(b)
        for e1, o1 in ends_a:
            for e2, o2 in ends_b:
                yield o1 + self.matrix[e1, e2] + o2, ("via", e1, e2, o1, o2)

    def distance(self, a: Point, b: Point) -> float:
        a = self.canonical(a)
        b = self.canonical(b)
        if a == b:
            return 0.0
        return min(cost for cost, _ in self._routes(a, b))

    def point_on_path(self, a: Point, b: Point, s: float) -> Point:
        a = self.canonical(a)
        b = self.canonical(b)
        d = self._path_span(a, b, s)
        if s <= 0.0 or d == 0.0:
            return a
        if s >= d:
            return b
        routes = list(self._routes(a, b))
        best_cost = min(cost for cost, _ in routes)
        # First minimizing route wins; _routes orders direct travel first and
        # endpoint routings by (e1, e2), which fixes the lowest-index tie-break.
        tag = next(t for cost, t in routes if cost <= best_cost + _SNAP * max(1.0, best_cost))
        if tag[0] == "direct":
            assert isinstance(a, SegmentPoint)
            sign = 1.0 if b.offset >= a.offset else -1.0  # type: ignore[union-attr]
            return self.canonical(SegmentPoint(a.seg, a.offset + sign * s))
        _, e1, e2, o1, o2 = tag
        if s <= o1:
            return self.canonical(self._walk_within(a, e1, s))
        mid = self.matrix[e1, e2]
        if s <= o1 + mid and e1 != e2:
            return self.canonical(self._between_anchors(e1, e2, s - o1))
        return self.canonical(self._walk_within(b, e2, d - s))

    def _walk_within(self, p: Point, end: int, dist: float) -> Point:
        """Point at distance `dist` from p toward anchor `end` on p's segment."""
        assert isinstance(p, SegmentPoint)
        i, j = p.seg
        if end == i:
            return SegmentPoint(p.seg, p.offset - dist)
        return SegmentPoint(p.seg, p.offset + dist)

    def _between_anchors(self, e1: int, e2: int, dist: float) -> Point:
        lo, hi = (e1, e2) if e1 < e2 else (e2, e1)
        if e1 == lo:
            return SegmentPoint((lo, hi), dist)
        return SegmentPoint((lo, hi), self.matrix[lo, hi] - dist)

    def to_json(self) -> dict:
        return {"kind": "segment_extension", "matrix": self.matrix.tolist()}


def space_from_json(obj: dict | str) -> MetricSpace:
    if isinstance(obj, str):
        obj = json.loads(obj)
    kind = obj.get("kind")
    if kind == "euclidean":
        return EuclideanLp(obj["dim"], obj.get("p", 2.0))
    if kind == "circle":
        return Circle(obj["L"])
    if kind == "segment_extension":
        return SegmentExtension(obj["matrix"])
    raise InvalidSpaceError(f"unknown space kind {kind!r}")


def point_to_json(p: Point) -> dict:
    if isinstance(p, EuclideanPoint):
        return {"coords": list(p.coords)}
    if isinstance(p, CirclePoint):
        return {"arc": p.arc}
    if isinstance(p, SegmentPoint):
        return {"segment": list(p.seg), "offset": p.offset}
    if isinstance(p, AnchorPoint):
        return {"anchor": p.index}
    raise TypeError(f"not a point: {p!r}")


def point_from_json(obj: dict) -> Point:
    if "coords" in obj:
        return EuclideanPoint(tuple(obj["coords"]))
    if "arc" in obj:
        return CirclePoint(float(obj["arc"]))
    if "segment" in obj:
        i, j = obj["segment"]
        return SegmentPoint((int(i), int(j)), float(obj["offset"]))
    if "anchor" in obj:
        return AnchorPoint(int(obj["anchor"]))
    raise ValueError(f"unrecognized point payload {obj!r}")


def path_convexity_gap(space: MetricSpace, a: Point, p1: Point, p2: Point, p: Point) -> float:
    """d(a, p) minus the convex-combination bound along the p1 -> p2 path.

    Strictly convex spaces keep this <= 0 for any p on a shortest path; a
    positive value certifies the space is not strictly convex.
    """
    base = space.distance(p1, p2)
    if base == 0.0:
        return space.distance(a, p) - space.distance(a, p1)
    lam = space.distance(p, p2) / base
    mu = space.distance(p, p1) / base
    return space.distance(a, p) - (lam * space.distance(a, p1) + mu * space.distance(a, p2))


@dataclass
class ValidationReport:
    n_triples: int
    max_symmetry_violation: float
    max_triangle_violation: float
    max_path_violation: float
    passed: bool

    def to_json(self) -> dict:
        return {
            "n_triples": self.n_triples,
            "max_symmetry_violation": self.max_symmetry_violation,
            "max_triangle_violation": self.max_triangle_violation,
            "max_path_violation": self.max_path_violation,
            "passed": self.passed,
        }


def validate_metric(
    space: MetricSpace,
    triples: Sequence[tuple[Point, Point, Point]],
    path_fractions: Sequence[float] = (0.25, 0.5, 0.75),
) -> ValidationReport:
    """Report worst relative violations of symmetry, the triangle inequality,
    and the path property d(a,P) = s, d(P,b) = d(a,b) - s over sample triples."""
    max_sym = 0.0
    max_tri = 0.0
    max_path = 0.0
    for a, b, c in triples:
        dab = space.distance(a, b)
        dba = space.distance(b, a)
        dac = space.distance(a, c)
        dbc = space.distance(b, c)
        max_sym = max(max_sym, abs(dab - dba) / max(1.0, dab))
        max_tri = max(max_tri, (dac - dab - dbc) / max(1.0, dac))
        for f in path_fractions:
            s = f * dab
            p = space.point_on_path(a, b, s)
            dap = space.distance(a, p)
            dpb = space.distance(p, b)
            rel = max(1.0, dab)
            max_path = max(max_path, abs(dap - s) / rel, abs(dap + dpb - dab) / rel)
    passed = max(max_sym, max_tri, max_path) <= AXIOM_RTOL
    return ValidationReport(len(triples), max_sym, max_tri, max_path, passed)
