"""Instance generation, reference counterexamples, experiment sweeps, CLI.

Sweeps are deterministic: trial k uses a generator seeded with seed ^ k, rows
are ordered by trial index, and the CSV payload carries no timestamps, so the
same command line reproduces byte-identical output.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import (
    CheckFailure,
    CheckReport,
    check_consistency_bound,
    gamma_accuracy,
    one_median,
    optimal_facility,
    poa,
    run_battery,
)
from .equilibrium import (
    EquilibriumCertificate,
    NonConvergence,
    ReportProfile,
    brute_force_epsilon_pne,
    find_pne_dynamics,
    find_pne_enumerative,
    verify_pne,
)
from .errors import HarmonicflError, NoEquilibriumFoundError
from .instance import Instance
from .mechanism import MechanismConfig
from .metric import (
    AnchorPoint,
    Circle,
    CirclePoint,
    EuclideanLp,
    EuclideanPoint,
    MetricSpace,
    Point,
    SegmentExtension,
    SegmentPoint,
    path_convexity_gap,
    point_from_json,
    point_to_json,
)

ENUM_MAX_N = 8

CSV_COLUMNS = [
    "instance_id",
    "space",
    "n",
    "c",
    "gamma",
    "delta",
    "n_equilibria",
    "poa",
    "bound_consistency",
    "checks_passed",
]


@dataclass
class InstanceSpec:
    space: MetricSpace
    locations: tuple[Point, ...]
    prediction: Point
    delta: float | None = None
    c: float | None = None
    seed: int | None = None
    label: str = ""

    def build(self) -> Instance:
        return Instance(self.space, self.locations, self.prediction, self.label)

    def resolve_delta(self) -> float:
        if self.delta is not None:
            return float(self.delta)
        if self.c is not None:
            return MechanismConfig.harmonic_from_c(self.build(), self.c).delta
        raise ValueError("instance spec has neither delta nor c")

    def to_json(self) -> dict:
        out = {
            "space": self.space.to_json(),
            "locations": [point_to_json(p) for p in self.locations],
            "prediction": point_to_json(self.prediction),
            "label": self.label,
        }
        if self.delta is not None:
            out["delta"] = self.delta
        if self.c is not None:
            out["c"] = self.c
        if self.seed is not None:
            out["seed"] = self.seed
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "InstanceSpec":
        from .metric import space_from_json

        return cls(
            space=space_from_json(obj["space"]),
            locations=tuple(point_from_json(p) for p in obj["locations"]),
            prediction=point_from_json(obj["prediction"]),
            delta=obj.get("delta"),
            c=obj.get("c"),
            seed=obj.get("seed"),
            label=obj.get("label", ""),
        )


@dataclass
class ExperimentRecord:
    instance_id: str
    space: str
    n: int
    c: float
    gamma: float
    delta: float
    n_equilibria: int
    poa: float
    bound_consistency: float
    checks_passed: int
    runtime: float = 0.0
    finder: str = ""
    check_reports: list[CheckReport] = field(default_factory=list)

    def csv_row(self) -> list:
        return [
            self.instance_id,
            self.space,
            self.n,
            repr(self.c),
            repr(self.gamma),
            repr(self.delta),
            self.n_equilibria,
            repr(self.poa),
            repr(self.bound_consistency),
            self.checks_passed,
        ]


# ---------------------------------------------------------------------------
# generation


def random_point(space: MetricSpace, rng: np.random.Generator, low: float = 0.0, high: float = 1.0) -> Point:
    if isinstance(space, EuclideanLp):
        return EuclideanPoint(tuple(rng.uniform(low, high, space.dim)))
    if isinstance(space, Circle):
        return CirclePoint(float(rng.uniform(0.0, space.circumference)))
    if isinstance(space, SegmentExtension):
        m = space.anchor_count
        i = int(rng.integers(0, m - 1))
        j = int(rng.integers(i + 1, m))
        off = float(rng.uniform(0.0, space.matrix[i, j]))
        return space.canonical(SegmentPoint((i, j), off))
    raise ValueError(f"cannot sample from {space!r}")


def random_segment_space(rng: np.random.Generator, anchors: int = 5, side: float = 1.0) -> SegmentExtension:
    """Anchored metric from points in the plane; guarantees the triangle
    inequality and strictly positive segment lengths."""
    while True:
        pts = rng.uniform(0.0, side, (anchors, 2))
        mat = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
        off = mat[~np.eye(anchors, dtype=bool)]
        if off.min() > 0.05 * side:
            return SegmentExtension(mat)


def _space_for_kind(space_kind: str, rng: np.random.Generator, params: dict) -> MetricSpace:
    if space_kind == "euclidean":
        return EuclideanLp(int(params.get("dim", 2)), float(params.get("p", 2.0)))
    if space_kind == "circle":
        return Circle(float(params.get("L", 10.0)))
    if space_kind == "segment":
        return random_segment_space(rng, int(params.get("anchors", 5)), float(params.get("side", 1.0)))
    raise ValueError(f"unknown space kind {space_kind!r}")


def generate_instance(kind: str, params: dict, seed: int) -> InstanceSpec:
    rng = np.random.default_rng(seed)
    params = dict(params or {})
    if kind == "uniform-box":
        n = int(params["n"])
        side = float(params.get("side", 1.0))
        space = EuclideanLp(int(params.get("dim", 2)), float(params.get("p", 2.0)))
        locs = tuple(random_point(space, rng, 0.0, side) for _ in range(n))
        pred = random_point(space, rng, 0.0, side)
        return InstanceSpec(space, locs, pred, seed=seed, label=f"uniform-box-{seed}")
    if kind == "uniform-circle":
        n = int(params["n"])
        space = Circle(float(params.get("L", 10.0)))
        locs = tuple(random_point(space, rng) for _ in range(n))
        pred = random_point(space, rng)
        return InstanceSpec(space, locs, pred, seed=seed, label=f"uniform-circle-{seed}")
    if kind == "uniform-segment":
        n = int(params["n"])
        space = random_segment_space(rng, int(params.get("anchors", 5)), float(params.get("side", 1.0)))
        locs = tuple(random_point(space, rng) for _ in range(n))
        pred = random_point(space, rng)
        return InstanceSpec(space, locs, pred, seed=seed, label=f"uniform-segment-{seed}")
    if kind == "clustered":
        n = int(params["n"])
        k = int(params.get("k", 2))
        spread = float(params.get("spread", 0.1))
        side = float(params.get("side", 1.0))
        space = EuclideanLp(int(params.get("dim", 2)), float(params.get("p", 2.0)))
        centers = rng.uniform(0.0, side, (k, space.dim))
        locs = []
        for _ in range(n):
            c = centers[rng.integers(0, k)]
            locs.append(EuclideanPoint(tuple(c + rng.normal(0.0, spread, space.dim))))
        pred = random_point(space, rng, 0.0, side)
        return InstanceSpec(space, tuple(locs), pred, seed=seed, label=f"clustered-{seed}")
    if kind == "adversarial-omega-n":
        n = int(params["n"])
        R = float(params.get("R", 1000.0))
        space = EuclideanLp(1)
        locs = (EuclideanPoint((0.0,)),) + tuple(EuclideanPoint((R,)) for _ in range(n - 1))
        return InstanceSpec(space, locs, EuclideanPoint((0.0,)), delta=0.0, seed=seed,
                            label=f"omega-n-{n}")
    if kind == "circle-counterexample":
        M = float(params.get("M", 100.0))
        space = Circle(2.0 * M + 1.0)
        locs = (CirclePoint(M), CirclePoint(M + 1.0))
        return InstanceSpec(space, locs, CirclePoint(0.0), delta=0.0, seed=seed,
                            label=f"circle-M{M:g}")
    if kind == "custom":
        return InstanceSpec.from_json(params["instance"])
    raise ValueError(f"unknown instance kind {kind!r}")


# ---------------------------------------------------------------------------
# finders with the default policy


def find_equilibria(instance: Instance, delta: float, finder: str = "auto"):
    """Default policy: exhaustive enumeration for small n, best-response
    dynamics beyond that (flagged, since dynamics yields one representative)."""
    if finder == "auto":
        finder = "enum" if instance.n <= ENUM_MAX_N else "dyn"
    if finder == "enum":
        return find_pne_enumerative(instance, delta), "enum"
    if finder == "dyn":
        result = find_pne_dynamics(instance, delta)
        if isinstance(result, EquilibriumCertificate):
            return [result], "dyn"
        if instance.n <= 10:
            return find_pne_enumerative(instance, delta), "dyn+enum"
        raise NoEquilibriumFoundError("dynamics did not converge and n is too large to enumerate")
    raise ValueError(f"unknown finder {finder!r}")


def find_any_equilibrium(instance: Instance, delta: float):
    """Cheapest-first existence probe: dynamics, then enumeration."""
    result = find_pne_dynamics(instance, delta)
    if isinstance(result, EquilibriumCertificate):
        return result
    return find_pne_enumerative(instance, delta)[0]


# ---------------------------------------------------------------------------
# reference examples


@dataclass
class ExampleResult:
    name: str
    passed: bool
    details: dict


def reproduce_paper_examples() -> list[ExampleResult]:
    """Replay the three known worst-case constructions and assert their
    published outcome values."""
    results = []

    # Two agents on a circle, prediction antipodal: interior equilibrium with
    # cost 2M against an optimum of 1.
    M = 100.0
    spec = generate_instance("circle-counterexample", {"M": M}, seed=0)
    inst = spec.build()
    res = verify_pne(inst, ReportProfile.from_y(inst, [0.5, 0.5]), delta=0.0)
    ok = isinstance(res, EquilibriumCertificate)
    details: dict = {}
    if ok:
        sc = res.expected_social_cost()
        opt = optimal_facility(inst)
        ratio = poa(inst, 0.0, [res], opt)
        details = {"U": list(res.U), "sc": sc, "opt": opt.value, "poa": ratio}
        ok = (
            res.U == (0, 1)
            and abs(sc - 2.0 * M) <= 1e-6
            and abs(opt.value - 1.0) <= 1e-9
            and abs(ratio - 2.0 * M) <= 1e-6
        )
    results.append(ExampleResult("circle-counterexample", ok, details))

    # One agent pinned at the prediction, the rest far away, delta = 0: the
    # zero-distance rule parks the facility at the prediction, cost (n-1)*R.
    n, R = 10, 1000.0
    spec = generate_instance("adversarial-omega-n", {"n": n, "R": R}, seed=0)
    inst = spec.build()
    certs, _ = find_equilibria(inst, 0.0, finder="dyn")
    ratio = poa(inst, 0.0, certs)
    ok = abs(ratio - (n - 1)) <= 1e-9
    results.append(ExampleResult("adversarial-omega-n", ok, {"n": n, "poa": ratio}))

    # L1 witness: the path convex-combination bound fails off strict convexity.
    space = EuclideanLp(2, p=1.0)
    gap_lhs = space.distance(EuclideanPoint((1.0, 0.0)), EuclideanPoint((0.0, 1.0)))
    gap = path_convexity_gap(
        space,
        EuclideanPoint((1.0, 0.0)),
        EuclideanPoint((0.0, 0.0)),
        EuclideanPoint((1.0, 1.0)),
        EuclideanPoint((0.0, 1.0)),
    )
    rhs = gap_lhs - gap
    ok = abs(gap_lhs - 2.0) <= 1e-12 and abs(rhs - 1.0) <= 1e-12 and gap > 0
    results.append(ExampleResult("l1-convexity-witness", ok, {"lhs": gap_lhs, "rhs": rhs}))
    return results


# ---------------------------------------------------------------------------
# sweeps


def _adversarial_prediction(space: MetricSpace, locations, policy: str, rng: np.random.Generator) -> Point:
    if isinstance(space, EuclideanLp):
        if policy == "far":
            direction = rng.uniform(-1.0, 1.0, space.dim)
            direction /= max(1e-12, float(np.linalg.norm(direction)))
            center = np.mean([p.coords for p in locations], axis=0)
            return EuclideanPoint(tuple(center + direction * rng.uniform(5.0, 10.0)))
        return EuclideanPoint(tuple(rng.uniform(-10.0, 10.0, space.dim)))
    if isinstance(space, Circle):
        if policy == "far":
            ref = locations[0].arc  # type: ignore[union-attr]
            return CirclePoint((ref + space.circumference / 2.0) % space.circumference)
        return random_point(space, rng)
    if isinstance(space, SegmentExtension):
        return random_point(space, rng)
    raise ValueError(f"no adversarial policy for {space!r}")


def _perturbed_prediction(space: MetricSpace, opt_point: Point, radius: float, rng: np.random.Generator) -> Point:
    if radius <= 0.0:
        return opt_point
    target = random_point(space, rng, 0.0, 2.0)
    reach = space.distance(opt_point, target)
    if reach == 0.0:
        return opt_point
    return space.point_on_path(opt_point, target, min(radius, reach))


def run_consistency_sweep(
    space_kind: str,
    n_range,
    c_list,
    trials: int,
    seed: int,
    out_path: str | None = None,
    perturb: float = 0.0,
    params: dict | None = None,
) -> tuple[list[ExperimentRecord], bool]:
    """Prediction set to the computed optimum (optionally perturbed); asserts
    the gamma*(1+2c) bound row by row."""
    records = []
    all_pass = True
    n_choices = list(n_range)
    for trial in range(trials):
        rng = np.random.default_rng(seed ^ trial)
        n = int(n_choices[rng.integers(0, len(n_choices))])
        space = _space_for_kind(space_kind, rng, params or {})
        locs = tuple(random_point(space, rng) for _ in range(n))
        opt0 = one_median(space, locs)
        pred = _perturbed_prediction(space, opt0.facility, perturb, rng)
        inst = Instance(space, locs, pred)
        opt = optimal_facility(inst)
        gamma = gamma_accuracy(inst, opt)
        for c in c_list:
            start = time.perf_counter()
            delta = MechanismConfig.harmonic_from_c(inst, c).delta
            certs, finder = find_equilibria(inst, delta)
            report = check_consistency_bound(inst, delta, certs, opt)
            value = poa(inst, delta, certs, opt)
            all_pass &= report.passed
            records.append(
                ExperimentRecord(
                    instance_id=f"cons-{space_kind}-{seed}-{trial}-c{c:g}",
                    space=space_kind,
                    n=n,
                    c=float(c),
                    gamma=gamma,
                    delta=float(delta),
                    n_equilibria=len(certs),
                    poa=value,
                    bound_consistency=report.right,
                    checks_passed=int(report.passed),
                    runtime=time.perf_counter() - start,
                    finder=finder,
                    check_reports=[report],
                )
            )
    if out_path:
        write_records_csv(out_path, records)
    return records, all_pass


def run_robustness_sweep(
    space_kind: str,
    n_range,
    c_list,
    trials: int,
    seed: int,
    policies=("far", "random-distant"),
    out_path: str | None = None,
    params: dict | None = None,
) -> tuple[list[ExperimentRecord], dict]:
    """Adversarial predictions; the full checker battery runs on every
    certificate and any failure aborts the sweep."""
    records = []
    n_choices = list(n_range)
    envelope: dict[str, float] = {}
    strictly_convex = None
    for trial in range(trials):
        rng = np.random.default_rng(seed ^ trial)
        n = int(n_choices[rng.integers(0, len(n_choices))])
        space = _space_for_kind(space_kind, rng, params or {})
        strictly_convex = space.strictly_convex
        locs = tuple(random_point(space, rng) for _ in range(n))
        policy = policies[trial % len(policies)]
        pred = _adversarial_prediction(space, locs, policy, rng)
        inst = Instance(space, locs, pred)
        opt = optimal_facility(inst)
        gamma = gamma_accuracy(inst, opt)
        for c in c_list:
            start = time.perf_counter()
            delta = MechanismConfig.harmonic_from_c(inst, c).delta
            certs, finder = find_equilibria(inst, delta)
            reports: list[CheckReport] = []
            for cert in certs:
                battery = run_battery(inst, cert, c=c, opt=opt)
                failing = [r for r in battery if not r.passed]
                if failing:
                    raise CheckFailure(battery)
                reports.extend(battery)
            value = poa(inst, delta, certs, opt)
            key = "K2" if strictly_convex else "K3"
            base = 1.0 + (1.0 / c**2 if strictly_convex else 1.0 / c**3)
            envelope[key] = max(envelope.get(key, 0.0), value / base)
            records.append(
                ExperimentRecord(
                    instance_id=f"rob-{space_kind}-{seed}-{trial}-c{c:g}",
                    space=space_kind,
                    n=n,
                    c=float(c),
                    gamma=gamma,
                    delta=float(delta),
                    n_equilibria=len(certs),
                    poa=value,
                    bound_consistency=gamma * (1.0 + 2.0 * c),
                    checks_passed=len([r for r in reports if r.passed]),
                    runtime=time.perf_counter() - start,
                    finder=finder,
                    check_reports=reports,
                )
            )
    if out_path:
        write_records_csv(out_path, records)
        write_check_log(out_path + ".checks.jsonl", records)
    return records, envelope


def write_records_csv(path: str, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.csv_row())


def write_check_log(path: str, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            for rep in rec.check_reports:
                fh.write(json.dumps({"instance_id": rec.instance_id, **rep.to_json()}) + "\n")


# ---------------------------------------------------------------------------
# CLI


def _parse_n_range(text: str):
    if ".." in text:
        lo, hi = text.split("..")
        return range(int(lo), int(hi) + 1)
    return [int(x) for x in text.split(",")]


def _parse_c_list(text: str):
    return [float(x) for x in text.split(",")]


def _load_instance(path: str) -> InstanceSpec:
    with open(path) as fh:
        return InstanceSpec.from_json(json.load(fh))


def _resolve_delta(spec: InstanceSpec, args) -> float:
    if getattr(args, "delta", None) is not None:
        return float(args.delta)
    if getattr(args, "c", None) is not None:
        return MechanismConfig.harmonic_from_c(spec.build(), float(args.c)).delta
    return spec.resolve_delta()


def _cmd_find_pne(args) -> int:
    spec = _load_instance(args.instance)
    inst = spec.build()
    delta = _resolve_delta(spec, args)
    if args.finder == "grid":
        profiles = brute_force_epsilon_pne(inst, delta, grid_k=args.grid_k, eps=inst.eps)
        payload = [p.to_json(inst) for p in profiles]
        out = {"finder": "grid", "delta": delta, "profiles": payload}
    else:
        certs, finder = find_equilibria(inst, delta, finder=args.finder)
        out = {
            "finder": finder,
            "delta": delta,
            "certificates": [c.to_json() for c in certs],
            "zero_rule_triggered": any(c.distribution().zero_rule_triggered for c in certs),
        }
    text = json.dumps(out, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def _cmd_verify(args) -> int:
    spec = _load_instance(args.instance)
    inst = spec.build()
    delta = _resolve_delta(spec, args)
    with open(args.profile) as fh:
        raw = json.load(fh)
    if "y" in raw:
        profile = ReportProfile.from_y(inst, raw["y"])
    else:
        profile = ReportProfile.from_points([point_from_json(p) for p in raw["points"]])
    result = verify_pne(inst, profile, delta)
    if isinstance(result, EquilibriumCertificate):
        print(json.dumps(result.to_json(), indent=2))
        return 0
    for v in result:
        print(str(v), file=sys.stderr)
    return 1


def _cmd_opt(args) -> int:
    spec = _load_instance(args.instance)
    inst = spec.build()
    opt = optimal_facility(inst)
    print(
        json.dumps(
            {
                "facility": point_to_json(opt.facility),
                "opt": opt.value,
                "method": opt.method,
                "exact": opt.exact,
                "gamma": gamma_accuracy(inst, opt),
            },
            indent=2,
        )
    )
    return 0


def _cmd_sweep(args) -> int:
    n_range = _parse_n_range(args.n)
    c_list = _parse_c_list(args.c)
    if args.mode == "consistency":
        records, all_pass = run_consistency_sweep(
            args.space, n_range, c_list, args.trials, args.seed,
            out_path=args.out, perturb=args.perturb,
        )
        print(f"{len(records)} rows, consistency bound {'pass' if all_pass else 'FAIL'}")
        return 0 if all_pass else 1
    records, envelope = run_robustness_sweep(
        args.space, n_range, c_list, args.trials, args.seed, out_path=args.out
    )
    print(f"{len(records)} rows, envelope {envelope}")
    return 0


def _cmd_paper_examples(_args) -> int:
    results = reproduce_paper_examples()
    ok = True
    for res in results:
        print(f"{'PASS' if res.passed else 'FAIL'}  {res.name}  {res.details}")
        ok &= res.passed
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="harmonicfl")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("find-pne", help="find and certify pure equilibria")
    p.add_argument("instance")
    p.add_argument("--delta", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--finder", choices=["auto", "enum", "dyn", "grid"], default="auto")
    p.add_argument("--grid-k", type=int, default=64)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_find_pne)

    p = sub.add_parser("verify", help="verify a report profile")
    p.add_argument("instance")
    p.add_argument("profile")
    p.add_argument("--delta", type=float)
    p.add_argument("--c", type=float)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("opt", help="optimal facility for an instance")
    p.add_argument("instance")
    p.set_defaults(func=_cmd_opt)

    p = sub.add_parser("sweep", help="run an experiment sweep")
    p.add_argument("mode", choices=["consistency", "robustness"])
    p.add_argument("--space", choices=["euclidean", "circle", "segment"], default="euclidean")
    p.add_argument("--n", default="3..6")
    p.add_argument("--c", default="0.1,0.5,1.0")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perturb", type=float, default=0.0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("paper-examples", help="replay the reference counterexamples")
    p.set_defaults(func=_cmd_paper_examples)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CheckFailure as exc:
        print(f"check failure: {exc}", file=sys.stderr)
        return 1
    except NoEquilibriumFoundError as exc:
        print(f"no equilibrium: {exc}", file=sys.stderr)
        return 1
    except (HarmonicflError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
