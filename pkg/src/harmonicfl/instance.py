"""Problem instances: true agent locations plus a predicted facility location."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .metric import MetricSpace, Point, point_from_json, point_to_json, space_from_json

# epsilon-PNE tolerance is this factor times the instance scale max(1, max t_i).
EPS_FACTOR = 1e-7


@dataclass(frozen=True)
class Instance:
    space: MetricSpace
    locations: tuple[Point, ...]
    prediction: Point
    label: str = ""
    _t: np.ndarray = field(init=False, repr=False, compare=False)
    _dij: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        locs = tuple(self.space.canonical(p) for p in self.locations)
        if not locs:
            raise ValueError("instance needs at least one agent")
        pred = self.space.canonical(self.prediction)
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "prediction", pred)
        n = len(locs)
        t = np.array([self.space.distance(pred, p) for p in locs])
        dij = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                dij[i, j] = dij[j, i] = self.space.distance(locs[i], locs[j])
        t.setflags(write=False)
        dij.setflags(write=False)
        object.__setattr__(self, "_t", t)
        object.__setattr__(self, "_dij", dij)

    @property
    def n(self) -> int:
        return len(self.locations)

    @property
    def t(self) -> np.ndarray:
        """Distances from the prediction to each true location."""
        return self._t

    @property
    def dij(self) -> np.ndarray:
        """Pairwise distances between true locations."""
        return self._dij

    @property
    def scale(self) -> float:
        return max(1.0, float(self._t.max()))

    @property
    def eps(self) -> float:
        """Default epsilon-PNE tolerance for this instance."""
        return EPS_FACTOR * self.scale

    def prediction_cost(self) -> float:
        """Social cost of placing the facility at the prediction."""
        return float(self._t.sum())

    def to_json(self) -> dict:
        return {
            "space": self.space.to_json(),
            "locations": [point_to_json(p) for p in self.locations],
            "prediction": point_to_json(self.prediction),
            "label": self.label,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Instance":
        space = space_from_json(obj["space"])
        locs = tuple(point_from_json(p) for p in obj["locations"])
        pred = point_from_json(obj["prediction"])
        return cls(space, locs, pred, obj.get("label", ""))


def make_instance(space: MetricSpace, locations: Sequence[Point], prediction: Point, label: str = "") -> Instance:
    return Instance(space, tuple(locations), prediction, label)
