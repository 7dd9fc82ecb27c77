"""Best responses, pure Nash equilibria, and certificates.

Strategies live on the canonical shortest path from the prediction to each
agent's true location, parameterized by y = distance from the report to the
prediction.  y = 0 reports the prediction (set S), y = t_i reports truthfully
(set T), interior y is set U.

The central quantity is the slack

    kappa_i = cost_i(truthful own report; others fixed) - (t_i + delta).

Sign structure: kappa_i < 0 means truthful is the unique best response,
kappa_i > 0 means reporting the prediction is, and kappa_i = 0 makes every
point of the path a best response.  A profile is an eps-certified equilibrium
when every agent's class is consistent with its slack.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NoEquilibriumFoundError, SizeGuardError
from .instance import Instance
from .mechanism import expected_social_cost, harmonic_distribution
from .metric import Circle, CirclePoint, EuclideanLp, Point

CLASS_TRUTHFUL = "truthful"
CLASS_PREDICTION = "prediction"
CLASS_INDIFFERENT = "indifferent"

_Y_SNAP = 1e-12
_DEDUPE_RTOL = 1e-6


@dataclass(frozen=True)
class PathStrategy:
    """Report of one agent as arc position y in [0, t_i] from the prediction."""

    agent: int
    y: float

    def x(self, instance: Instance) -> float:
        return float(instance.t[self.agent]) - self.y

    def realize(self, instance: Instance) -> Point:
        return instance.space.point_on_path(
            instance.prediction, instance.locations[self.agent], self.y
        )


@dataclass
class ReportProfile:
    """Either path-constrained strategies or arbitrary reported points."""

    strategies: tuple[PathStrategy, ...] | None = None
    points: tuple[Point, ...] | None = None

    def __post_init__(self):
        if (self.strategies is None) == (self.points is None):
            raise ValueError("profile needs exactly one of strategies or points")

    @classmethod
    def from_y(cls, instance: Instance, y: Sequence[float]) -> "ReportProfile":
        y = np.asarray(y, dtype=float)
        if y.shape != (instance.n,):
            raise ValueError("y vector length does not match instance")
        t = instance.t
        snap = _Y_SNAP * instance.scale
        fixed = np.clip(y, 0.0, t)
        fixed[np.abs(fixed) <= snap] = 0.0
        at_t = np.abs(fixed - t) <= snap
        fixed[at_t] = t[at_t]
        if np.any(y < -snap) or np.any(y > t + snap):
            raise ValueError("y values outside [0, t_i]")
        return cls(strategies=tuple(PathStrategy(i, float(v)) for i, v in enumerate(fixed)))

    @classmethod
    def from_points(cls, points: Sequence[Point]) -> "ReportProfile":
        return cls(points=tuple(points))

    def y_vector(self, instance: Instance) -> np.ndarray:
        if self.strategies is not None:
            return np.array([s.y for s in self.strategies])
        return np.array(
            [instance.space.distance(instance.prediction, p) for p in self.points]
        )

    def as_path(self, instance: Instance, rtol: float = 1e-9) -> "ReportProfile":
        """Reinterpret free points as path strategies; fails off the path."""
        if self.strategies is not None:
            return self
        t = instance.t
        ys = []
        for i, p in enumerate(self.points):
            p = instance.space.canonical(p)
            y = instance.space.distance(instance.prediction, p)
            x = instance.space.distance(instance.locations[i], p)
            if abs(x - (t[i] - y)) > rtol * instance.scale:
                raise ValueError(f"report of agent {i} is not on its shortest path")
            ys.append(y)
        return ReportProfile.from_y(instance, ys)

    def realize(self, instance: Instance) -> tuple[Point, ...]:
        if self.points is not None:
            return tuple(instance.space.canonical(p) for p in self.points)
        return tuple(s.realize(instance) for s in self.strategies)

    def to_json(self, instance: Instance) -> dict:
        return {"y": self.y_vector(instance).tolist()}


@dataclass
class BestResponseDiagnostic:
    """Partial sums of the expected-cost ratio with agent i's term removed."""

    c1: float
    c2: float
    kappa: float
    recommended: str


@dataclass
class PneViolation:
    agent: int
    assigned_class: str
    kappa: float
    better_class: str

    def __str__(self):
        return (
            f"agent {self.agent}: class {self.assigned_class} inconsistent "
            f"(kappa={self.kappa:.3e}, best response {self.better_class})"
        )


@dataclass
class EquilibriumCertificate:
    S: tuple[int, ...]
    T: tuple[int, ...]
    U: tuple[int, ...]
    y: np.ndarray
    t: np.ndarray
    d: np.ndarray
    c: np.ndarray
    dij: np.ndarray
    kappa: np.ndarray
    eps: float
    delta: float
    reports: tuple[Point, ...]

    @property
    def n(self) -> int:
        return len(self.y)

    def distribution(self):
        return harmonic_distribution(self.d, self.delta)

    def expected_social_cost(self) -> float:
        dist = self.distribution()
        return float(np.dot(dist.probs, self.c.sum(axis=0)))

    def to_json(self) -> dict:
        return {
            "S": list(self.S),
            "T": list(self.T),
            "U": list(self.U),
            "y": self.y.tolist(),
            "kappa": self.kappa.tolist(),
            "eps": self.eps,
        }


@dataclass
class NonConvergence:
    profile: ReportProfile
    iterations: int
    kappa: np.ndarray
    violations: list[PneViolation] = field(default_factory=list)


@dataclass
class DominanceRecord:
    agent: int
    y: float
    x_off: float
    cost_off: float
    cost_reference: float
    mode: str  # "beyond_prediction" | "on_path_projection"
    holds: bool


def _insert(others: Sequence, i: int, own) -> list:
    out = list(others)
    out.insert(i, own)
    return out


def _cost_given(d_vec: np.ndarray, c_vec: np.ndarray, delta: float) -> float:
    dist = harmonic_distribution(d_vec, delta)
    return float(np.dot(dist.probs, c_vec))


def profile_kappas(
    instance: Instance, reports: Sequence[Point], y: np.ndarray, delta: float
) -> tuple[np.ndarray, np.ndarray]:
    """Slack vector and report-distance matrix c[i, j] = d(loc_i, report_j)."""
    n = instance.n
    space = instance.space
    c = np.empty((n, n))
    for i, loc in enumerate(instance.locations):
        for j, r in enumerate(reports):
            c[i, j] = space.distance(loc, r)
    t = instance.t
    kappa = np.empty(n)
    for i in range(n):
        d_mod = y.copy()
        d_mod[i] = t[i]
        c_mod = c[i].copy()
        c_mod[i] = 0.0
        kappa[i] = _cost_given(d_mod, c_mod, delta) - (t[i] + delta)
    return kappa, c


def best_response_class(
    i: int,
    instance: Instance,
    others_reports: Sequence[Point],
    delta: float,
    eps: float | None = None,
) -> tuple[str, BestResponseDiagnostic]:
    """Classify agent i's best response given the other agents' reports.

    others_reports lists the reports of agents j != i in ascending j.
    """
    n = instance.n
    if not 0 <= i < n:
        raise IndexError(f"agent index {i} out of range")
    if len(others_reports) != n - 1:
        raise ValueError("expected one report per other agent")
    if eps is None:
        eps = instance.eps
    t_i = float(instance.t[i])
    space = instance.space
    d_others = np.array([space.distance(instance.prediction, r) for r in others_reports])
    c_others = np.array([space.distance(instance.locations[i], r) for r in others_reports])
    d_vec = np.array(_insert(d_others, i, t_i))
    c_vec = np.array(_insert(c_others, i, 0.0))
    kappa = _cost_given(d_vec, c_vec, delta) - (t_i + delta)
    with np.errstate(divide="ignore"):
        denom = d_others + delta
        c1 = float(np.sum(np.divide(c_others, denom, out=np.full_like(c_others, np.inf), where=denom > 0)))
        c2 = float(np.sum(np.divide(1.0, denom, out=np.full_like(denom, np.inf), where=denom > 0)))
    if t_i == 0.0:
        cls = CLASS_TRUTHFUL  # the path degenerates; all classes coincide
    elif kappa < -eps:
        cls = CLASS_TRUTHFUL
    elif kappa > eps:
        cls = CLASS_PREDICTION
    else:
        cls = CLASS_INDIFFERENT
    return cls, BestResponseDiagnostic(c1, c2, float(kappa), cls)


def _classify(y: np.ndarray, t: np.ndarray, scale: float) -> np.ndarray:
    """Class codes per agent: 0 = S (at prediction), 1 = T (truthful), 2 = U."""
    snap = _Y_SNAP * scale
    codes = np.full(len(y), 2, dtype=int)
    codes[np.abs(y - t) <= snap] = 1  # includes degenerate t_i = 0 agents
    codes[(np.abs(y) <= snap) & (codes != 1)] = 0
    return codes


def verify_pne(
    instance: Instance,
    profile: ReportProfile,
    delta: float,
    eps: float | None = None,
):
    """Certify a path profile as an eps equilibrium or list the violations."""
    if eps is None:
        eps = instance.eps
    profile = profile.as_path(instance)
    y = profile.y_vector(instance)
    reports = profile.realize(instance)
    kappa, c = profile_kappas(instance, reports, y, delta)
    t = instance.t
    codes = _classify(y, t, instance.scale)
    violations: list[PneViolation] = []
    names = {0: "S", 1: "T", 2: "U"}
    for i in range(instance.n):
        k = kappa[i]
        better = (
            CLASS_TRUTHFUL if k < -eps else CLASS_PREDICTION if k > eps else CLASS_INDIFFERENT
        )
        ok = (
            (codes[i] == 0 and k >= -eps)
            or (codes[i] == 1 and k <= eps)
            or (codes[i] == 2 and abs(k) <= eps)
        )
        if not ok:
            violations.append(PneViolation(i, names[codes[i]], float(k), better))
    if violations:
        return violations
    return EquilibriumCertificate(
        S=tuple(int(v) for v in np.flatnonzero(codes == 0)),
        T=tuple(int(v) for v in np.flatnonzero(codes == 1)),
        U=tuple(int(v) for v in np.flatnonzero(codes == 2)),
        y=y,
        t=t.copy(),
        d=y.copy(),
        c=c,
        dij=instance.dij.copy(),
        kappa=kappa,
        eps=float(eps),
        delta=float(delta),
        reports=reports,
    )


# ---------------------------------------------------------------------------
# vectorized kernels


class _Kernel:
    """Batched geometry for one instance: distances from every true location
    to a report sliding along agent j's path."""

    def __init__(self, instance: Instance):
        self.inst = instance
        self.t = instance.t
        self.dij = instance.dij
        n = instance.n
        space = instance.space
        if isinstance(space, EuclideanLp):
            self.mode = "lp"
            P = np.array([p.coords for p in instance.locations], dtype=float)
            o = np.array(instance.prediction.coords, dtype=float)
            A = P - o
            with np.errstate(invalid="ignore", divide="ignore"):
                U = np.where(self.t[:, None] > 0, A / np.where(self.t[:, None] > 0, self.t[:, None], 1.0), 0.0)
            self.A, self.U, self.p = A, U, space.p
            if space.p == 2.0:
                self.a2 = np.sum(A * A, axis=1)
                self.S = A @ U.T  # S[i, j] = A_i . u_j
        elif isinstance(space, Circle):
            self.mode = "circle"
            self.L = space.circumference
            self.theta = np.array([p.arc for p in instance.locations], dtype=float)
            o = instance.prediction.arc  # type: ignore[union-attr]
            self.o_arc = o
            fwd = (self.theta - o) % self.L
            self.dir = np.where(fwd <= self.L / 2.0, 1.0, -1.0)
        else:
            self.mode = "generic"

    def col(self, j: int, y: np.ndarray) -> np.ndarray:
        """(B,) y values -> (B, n) distances d(loc_i, report_j(y))."""
        t_j = self.t[j]
        if t_j == 0.0:
            return np.broadcast_to(self.t, (len(y), len(self.t))).copy()
        if self.mode == "lp" and self.p == 2.0:
            d2 = self.a2[None, :] - 2.0 * y[:, None] * self.S[None, :, j] + (y**2)[:, None]
            return np.sqrt(np.maximum(d2, 0.0))
        if self.mode == "lp":
            reports = y[:, None] * self.U[j][None, :]  # relative to prediction
            diff = np.abs(self.A[None, :, :] - reports[:, None, :])
            return np.sum(diff**self.p, axis=2) ** (1.0 / self.p)
        if self.mode == "circle":
            rep = (self.o_arc + self.dir[j] * y) % self.L
            diff = np.abs(self.theta[None, :] - rep[:, None]) % self.L
            return np.minimum(diff, self.L - diff)
        inst = self.inst
        out = np.empty((len(y), inst.n))
        for b, yv in enumerate(y):
            p = inst.space.point_on_path(inst.prediction, inst.locations[j], float(yv))
            out[b] = [inst.space.distance(loc, p) for loc in inst.locations]
        return out

    def kappas(self, Y: np.ndarray, delta: float, chunk: int = 2048) -> np.ndarray:
        out = np.empty_like(Y)
        for lo in range(0, len(Y), chunk):
            out[lo : lo + chunk] = self._kappas_chunk(Y[lo : lo + chunk], delta)
        return out

    def _kappas_chunk(self, Y: np.ndarray, delta: float) -> np.ndarray:
        B, n = Y.shape
        t = self.t
        C = np.empty((B, n, n))
        for j in range(n):
            yj = Y[:, j]
            col = np.empty((B, n))
            at0 = yj == 0.0
            att = yj == t[j]
            mid = ~(at0 | att)
            if at0.any():
                col[at0] = t[None, :]
            if att.any():
                col[att] = self.dij[:, j][None, :]
            if mid.any():
                col[mid] = self.col(j, yj[mid])
            C[:, :, j] = col
        idx = np.arange(n)
        C[:, idx, idx] = 0.0  # own report replaced by the true location
        Dmod = np.repeat(Y[:, None, :], n, axis=1)
        Dmod[:, idx, idx] = t[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            if delta == 0.0:
                zero = Dmod == 0.0
                anyz = zero.any(axis=2)
                W = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, Dmod))
                num = np.sum(W * C, axis=2)
                den = np.sum(W, axis=2)
                cost = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
                if anyz.any():
                    zc = np.sum(np.where(zero, C, 0.0), axis=2)
                    zn = zero.sum(axis=2)
                    cost = np.where(anyz, zc / np.maximum(zn, 1), cost)
            else:
                W = 1.0 / (Dmod + delta)
                cost = np.sum(W * C, axis=2) / np.sum(W, axis=2)
        return cost - (t[None, :] + delta)

    def path_bound(self) -> np.ndarray:
        """Upper bound on d(loc_i, report_j(y)) over the whole path of j:
        max_y min(t_i + y, d_ij + t_j - y) = (t_i + t_j + d_ij) / 2."""
        return 0.5 * (self.t[:, None] + self.t[None, :] + self.dij)


# ---------------------------------------------------------------------------
# finders


def _dedupe_key(y: np.ndarray, scale: float) -> tuple:
    return tuple(np.round(y / (_DEDUPE_RTOL * scale)).astype(np.int64).tolist())


def find_pne_enumerative(
    instance: Instance,
    delta: float,
    tol: float = 1e-9,
    eps: float | None = None,
    max_starts: int = 27,
    max_iters: int = 10_000,
    task_budget: int = 24_576,
) -> list[EquilibriumCertificate]:
    """Enumerate S/T/U class assignments and certify the equilibria they admit.

    For a class assignment with interior agents, the indifference system
    kappa_u = 0 (u interior) is solved by a damped fixed point
    y <- clip(y + 0.5 * kappa, 0, t) from a grid of multi-start corners.
    Solutions are certified with verify_pne; the returned set is deduplicated
    on y (1e-6 relative).  Completeness for two or more interior agents is
    heuristic: the iteration may miss roots, so the result is a certified
    subset of all equilibria.
    """
    n = instance.n
    if n > 10:
        raise SizeGuardError(f"enumerative finder limited to n <= 10, got {n}")
    if eps is None:
        eps = instance.eps
    scale = instance.scale
    t = instance.t
    kern = _Kernel(instance)
    conv_tol = tol * scale

    # Agents that can never prefer the prediction are pinned truthful:
    # achievable cost is at most max_j (t_i + t_j + d_ij)/2.
    chi = kern.path_bound().copy()
    np.fill_diagonal(chi, -np.inf)
    eligible = chi.max(axis=1) >= t + delta - eps
    options = []
    for i in range(n):
        if t[i] == 0.0 or not eligible[i]:
            options.append((1,))
        else:
            options.append((0, 1, 2))
    codes_all = np.array(list(itertools.product(*options)), dtype=int)

    certs: list[EquilibriumCertificate] = []
    seen: set[tuple] = set()

    def _try_certify(y: np.ndarray):
        key = _dedupe_key(y, scale)
        if key in seen:
            return
        seen.add(key)
        result = verify_pne(instance, ReportProfile.from_y(instance, y), delta, eps)
        if isinstance(result, EquilibriumCertificate):
            certs.append(result)

    has_u = (codes_all == 2).any(axis=1)

    # Class assignments without interior agents: batched slack check.
    codes_a = codes_all[~has_u]
    if len(codes_a):
        Y = np.where(codes_a == 1, t[None, :], 0.0)
        K = kern.kappas(Y, delta)
        ok_s = np.all((codes_a != 0) | (K >= -eps), axis=1)
        ok_t = np.all((codes_a != 1) | (K <= eps), axis=1)
        for row in np.flatnonzero(ok_s & ok_t):
            _try_certify(Y[row])

    # Interior assignments: prune, then damped multi-start solves.
    codes_b = codes_all[has_u]
    if len(codes_b):
        stacked = np.stack(
            [np.broadcast_to(t[:, None], (n, n)), instance.dij, kern.path_bound()]
        )
        ii = np.arange(n)[None, :, None]
        jj = np.arange(n)[None, None, :]
        sel = stacked[codes_b[:, None, :], ii, jj]
        sel[:, np.arange(n), np.arange(n)] = -np.inf
        reachable = sel.max(axis=2)
        need = codes_b != 1
        feasible = np.all(~need | (reachable >= t[None, :] + delta - eps), axis=1)
        codes_b = codes_b[feasible]

        rng = np.random.default_rng(7)
        task_y = []
        task_mask = []
        fracs = (0.25, 0.5, 0.75)
        u_sizes = (codes_b == 2).sum(axis=1)
        total = int(np.minimum(3**u_sizes, max_starts).sum())
        starts_cap = max_starts
        if total > task_budget and len(codes_b):
            starts_cap = max(1, task_budget // len(codes_b))
        for code in codes_b:
            umask = code == 2
            k = int(umask.sum())
            base = np.where(code == 1, t, 0.0)
            if 3**k <= starts_cap:
                corner_list = list(itertools.product(fracs, repeat=k))
            else:
                corner_list = [tuple([0.5] * k)]
                picks = rng.integers(0, 3, size=(starts_cap - 1, k))
                corner_list += [tuple(fracs[p] for p in row) for row in picks]
            for corner in corner_list:
                y = base.copy()
                y[umask] = np.array(corner) * t[umask]
                task_y.append(y)
                task_mask.append(umask)
        if task_y:
            Y = np.array(task_y)
            M = np.array(task_mask)
            alive = np.ones(len(Y), dtype=bool)
            best = np.full(len(Y), np.inf)
            stale = np.zeros(len(Y), dtype=int)

            def _candidate(row: int, resid_row: float):
                yv = Y[row]
                um = M[row]
                if resid_row <= eps and np.all((yv[um] > 0.0) & (yv[um] < t[um])):
                    _try_certify(yv)

            for _ in range(max_iters):
                if not alive.any():
                    break
                idx = np.flatnonzero(alive)
                K = kern.kappas(Y[idx], delta, chunk=8192)
                resid = np.max(np.abs(K) * M[idx], axis=1)
                done = resid <= conv_tol
                for row, r in zip(idx[done], resid[done]):
                    _candidate(row, r)
                alive[idx[done]] = False
                live = idx[~done]
                if len(live) == 0:
                    continue
                improved = resid[~done] < 0.99 * best[live]
                best[live] = np.minimum(best[live], resid[~done])
                stale[live] = np.where(improved, 0, stale[live] + 1)
                step = 0.5 * K[~done] * M[live]
                y_new = np.clip(Y[live] + step, 0.0, t[None, :])
                moved = np.max(np.abs(y_new - Y[live]), axis=1)
                Y[live] = y_new
                # Stalled or pinned tasks die, but a corpse whose residual is
                # already inside the certificate tolerance still gets verified.
                dead = live[(stale[live] > 25) | (moved < 1e-13 * scale)]
                for row, r in zip(dead, resid[~done][np.isin(live, dead)]):
                    _candidate(row, r)
                alive[dead] = False

    if not certs:
        raise NoEquilibriumFoundError(
            "exhaustive class enumeration certified no equilibrium; "
            "on a continuous space at least one should exist"
        )
    return certs


def find_pne_dynamics(
    instance: Instance,
    delta: float,
    max_iters: int = 1000,
    step: float = 1.0,
    y0: Sequence[float] | None = None,
    eps: float | None = None,
):
    """Damped simultaneous best-response moves on the path parameterization.

    Each sweep moves every non-indifferent agent toward its best-response
    endpoint (truthful for negative slack, prediction for positive) by
    step * t_i, halving an agent's step when its direction flips.  Returns a
    certificate when the terminal profile verifies, else NonConvergence.
    """
    if eps is None:
        eps = instance.eps
    t = instance.t
    n = instance.n
    scale = instance.scale
    y = 0.5 * t if y0 is None else np.asarray(y0, dtype=float).copy()
    y = np.clip(y, 0.0, t)
    steps = np.full(n, float(step))
    prev_move = np.zeros(n)
    iterations = 0
    kappa = np.zeros(n)
    for iterations in range(1, max_iters + 1):
        profile = ReportProfile.from_y(instance, y)
        reports = profile.realize(instance)
        kappa, _ = profile_kappas(instance, reports, profile.y_vector(instance), delta)
        direction = np.where(kappa < -eps, 1.0, np.where(kappa > eps, -1.0, 0.0))
        flip = direction * prev_move < 0
        steps[flip] *= 0.5
        move = direction * steps * t
        y_new = np.clip(y + move, 0.0, t)
        actual = y_new - y
        y = y_new
        prev_move = np.where(actual != 0.0, actual, prev_move)
        if np.max(np.abs(actual)) <= 1e-12 * scale:
            break
    snap = 1e-9 * scale
    y[np.abs(y) <= snap] = 0.0
    att = np.abs(y - t) <= snap
    y[att] = t[att]
    profile = ReportProfile.from_y(instance, y)
    result = verify_pne(instance, profile, delta, eps)
    if isinstance(result, EquilibriumCertificate):
        return result
    return NonConvergence(profile, iterations, kappa, result)


# ---------------------------------------------------------------------------
# grid oracle


def _grid_tables(instance: Instance, delta: float, grid_k: int):
    n = instance.n
    t = instance.t
    kern = _Kernel(instance)
    g = np.arange(grid_k + 1) / grid_k
    y_tab = t[:, None] * g[None, :]  # (n, K+1)
    x_tab = t[:, None] - y_tab
    c_tab = np.empty((n, n, grid_k + 1))  # c_tab[i, j, g] = d(loc_i, report_j(y))
    for j in range(n):
        c_tab[:, j, :] = kern.col(j, y_tab[j]).T
    with np.errstate(divide="ignore"):
        w_tab = 1.0 / (y_tab + delta)
    return y_tab, x_tab, c_tab, w_tab


def brute_force_epsilon_pne(
    instance: Instance,
    delta: float,
    grid_k: int,
    eps: float,
    chunk: int = 65536,
) -> list[ReportProfile]:
    """Exhaustive grid oracle: profiles where no agent can improve its cost by
    more than eps deviating to any grid point of its own path."""
    n = instance.n
    if n > 4:
        raise SizeGuardError(f"grid oracle limited to n <= 4, got {n}")
    if grid_k > 256 or (grid_k + 1) ** n > 20_000_000:
        raise SizeGuardError("grid too fine for exhaustive enumeration")
    t = instance.t
    y_tab, x_tab, c_tab, w_tab = _grid_tables(instance, delta, grid_k)
    K1 = grid_k + 1
    total = K1**n
    keep: list[np.ndarray] = []
    for lo in range(0, total, chunk):
        nums = np.arange(lo, min(lo + chunk, total))
        G = np.empty((len(nums), n), dtype=int)
        rem = nums.copy()
        for j in range(n - 1, -1, -1):
            G[:, j] = rem % K1
            rem //= K1
        ok = np.ones(len(nums), dtype=bool)
        for i in range(n):
            cur, dev_min = _grid_agent_costs(instance, delta, G, i, y_tab, x_tab, c_tab, w_tab)
            ok &= cur - dev_min <= eps
            if not ok.any():
                break
        for row in G[ok]:
            keep.append(y_tab[np.arange(n), row])
    return [ReportProfile.from_y(instance, y) for y in keep]


def _grid_agent_costs(instance, delta, G, i, y_tab, x_tab, c_tab, w_tab):
    """Current cost of agent i and its best grid-deviation cost, per profile."""
    n = instance.n
    P = len(G)
    t_i = float(instance.t[i])
    others = [j for j in range(n) if j != i]
    if delta > 0.0:
        c1 = np.zeros(P)
        c2 = np.zeros(P)
        for j in others:
            wj = w_tab[j, G[:, j]]
            c1 += c_tab[i, j, G[:, j]] * wj
            c2 += wj
        dev = (c1[:, None] + x_tab[i][None, :] * w_tab[i][None, :]) / (
            c2[:, None] + w_tab[i][None, :]
        )
        cur = dev[np.arange(P), G[:, i]]
        return cur, dev.min(axis=1)
    # delta = 0: reports at the prediction absorb all selection mass.
    zc = G == 0
    sz = np.zeros(P)
    nz = np.zeros(P)
    c1 = np.zeros(P)
    c2 = np.zeros(P)
    for j in others:
        zj = zc[:, j]
        sz += np.where(zj, c_tab[i, j, 0], 0.0)
        nz += zj
        with np.errstate(divide="ignore"):
            wj = np.where(zj, 0.0, w_tab[j, G[:, j]])
        c1 += np.where(zj, 0.0, c_tab[i, j, G[:, j]] * wj)
        c2 += wj
    has_zero = nz > 0
    join = (sz + t_i) / (nz + 1.0)  # cost when i also reports the prediction
    stay = np.where(has_zero, sz / np.maximum(nz, 1.0), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        finite = (c1[:, None] + x_tab[i][None, 1:] * w_tab[i][None, 1:]) / (
            c2[:, None] + w_tab[i][None, 1:]
        )
    dev_pos = np.where(has_zero[:, None], stay[:, None], finite)
    dev = np.concatenate([join[:, None], dev_pos], axis=1)
    cur = dev[np.arange(P), G[:, i]]
    return cur, dev.min(axis=1)


def grid_best_improvement(
    instance: Instance, delta: float, y: np.ndarray, grid_k: int
) -> float:
    """Max over agents of (current cost - best grid deviation cost) at a
    possibly off-grid path profile; the oracle-side epsilon-PNE test."""
    n = instance.n
    t = instance.t
    profile = ReportProfile.from_y(instance, y)
    reports = profile.realize(instance)
    space = instance.space
    worst = -np.inf
    g = np.arange(grid_k + 1) / grid_k
    for i in range(n):
        d_base = y.copy()
        c_base = np.array([space.distance(instance.locations[i], r) for r in reports])
        cur = _cost_given(
            _own_replaced(d_base, i, y[i]), _own_replaced(c_base, i, t[i] - y[i]), delta
        )
        best = cur
        for yv in g * t[i]:
            cost = _cost_given(
                _own_replaced(d_base, i, yv), _own_replaced(c_base, i, t[i] - yv), delta
            )
            best = min(best, cost)
        worst = max(worst, cur - best)
    return float(worst)


def _own_replaced(vec: np.ndarray, i: int, value: float) -> np.ndarray:
    out = vec.copy()
    out[i] = value
    return out


def dominance_check(
    i: int,
    instance: Instance,
    off_path_report: Point,
    others: Sequence[Point],
    delta: float,
) -> DominanceRecord:
    """Compare an arbitrary report against its dominating path strategy.

    Reports beyond the prediction (y > t_i) must lose strictly to the truthful
    report; any other report is weakly beaten by the path point at the same y,
    which attains the minimal own-report distance x = t_i - y.
    """
    n = instance.n
    if len(others) != n - 1:
        raise ValueError("expected one report per other agent")
    space = instance.space
    off = space.canonical(off_path_report)
    t_i = float(instance.t[i])
    y = space.distance(instance.prediction, off)
    x_off = space.distance(instance.locations[i], off)
    d_others = [space.distance(instance.prediction, r) for r in others]
    c_others = [space.distance(instance.locations[i], r) for r in others]

    def cost_of(own_d: float, own_c: float) -> float:
        return _cost_given(
            np.array(_insert(d_others, i, own_d)),
            np.array(_insert(c_others, i, own_c)),
            delta,
        )

    cost_off = cost_of(y, x_off)
    snap = _Y_SNAP * instance.scale
    if y > t_i + snap:
        cost_ref = cost_of(t_i, 0.0)
        holds = cost_ref < cost_off + snap
        return DominanceRecord(i, y, x_off, cost_off, cost_ref, "beyond_prediction", holds)
    y_clamped = min(y, t_i)
    on_path = space.point_on_path(instance.prediction, instance.locations[i], y_clamped)
    x_on = space.distance(instance.locations[i], on_path)
    cost_on = cost_of(y_clamped, x_on)
    holds = cost_on <= cost_off + 1e-9 * instance.scale
    return DominanceRecord(i, y, x_off, cost_off, cost_on, "on_path_projection", holds)


def certificate_poa_cost(instance: Instance, cert: EquilibriumCertificate) -> float:
    """Expected social cost of a certificate, recomputed from first principles."""
    dist = cert.distribution()
    return expected_social_cost(instance, cert.reports, dist)
