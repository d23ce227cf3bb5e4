"""Output-stability diagnostics for autonomous inclusions with an output map.

Every verdict here is empirical: it holds on a finite sampled bundle of
trajectories (initial points times selection policies), not on the full
solution set.  Regions are described by a level function ``g`` with the
region being ``g <= 0`` (closed) or ``g < 0`` (open); crossing times are
refined by linear interpolation of ``g`` inside the bracketing step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .expr import parse_expr, parse_output_map
from .inclusion import unit_directions
from .integrate import (
    R_MAX,
    Chatter,
    ConstantAtom,
    DivergenceError,
    RandomAtom,
    TimeGrid,
    Trajectory,
    integrate,
)

INF = math.inf


@dataclass(frozen=True)
class OutputSystem:
    F: object
    h: Callable[[np.ndarray], np.ndarray]
    h_source: Optional[tuple] = None

    def __post_init__(self):
        if not self.F.autonomous:
            raise ValueError("output-stability diagnostics need an autonomous right-hand side")

    @classmethod
    def from_spec(cls, F, spec=None):
        """``spec`` is ``None``/``"id"`` or expressions in ``x1..xn`` separated by ``;``."""
        h, src = parse_output_map(spec, F.dim)
        return cls(F, h, None if src is None else tuple(src))


def output_of(x, h):
    """Apply ``h`` at every node; the grid is shared and velocities are difference quotients."""
    Y = np.array([np.atleast_1d(np.asarray(h(s), dtype=float)) for s in x.states])
    V = np.diff(Y, axis=0) / x.steps[:, None] if len(x) > 1 else np.zeros((0, Y.shape[1]))
    return Trajectory(x.times.copy(), Y, V, scheme=x.scheme)


# -- regions -------------------------------------------------------------------


@dataclass(frozen=True)
class Ball:
    """``|p - center| <= radius`` (or ``<`` when ``closed`` is false)."""

    radius: float
    center: Optional[tuple] = None
    closed: bool = True

    def level(self, p):
        c = 0.0 if self.center is None else np.asarray(self.center, dtype=float)
        return float(np.linalg.norm(np.asarray(p, dtype=float) - c)) - self.radius

    def contains(self, p):
        g = self.level(p)
        return g <= 0.0 if self.closed else g < 0.0


@dataclass(frozen=True)
class Sublevel:
    """``g(p) <= 0`` for an expression ``g`` in ``{var}1..{var}n``."""

    expr: str
    closed: bool = True
    var: str = "x"
    _g: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_g", parse_expr(self.expr))
        bad = [n for n in self._g.names if not (n.startswith(self.var) and n[len(self.var):].isdigit())]
        if bad:
            raise ValueError(f"region expression uses unknown names {sorted(bad)}")

    def level(self, p):
        env = {f"{self.var}{i + 1}": float(v) for i, v in enumerate(np.atleast_1d(p))}
        return float(self._g(env))

    def contains(self, p):
        g = self.level(p)
        return g <= 0.0 if self.closed else g < 0.0


def first_crossing(S, x):
    """Earliest time ``x`` enters ``S``; ``inf`` if it never does on the grid."""
    prev = None
    for k, p in enumerate(x.states):
        g = S.level(p)
        if S.contains(p):
            if k == 0:
                return float(x.times[0])
            t0, t1 = x.times[k - 1], x.times[k]
            frac = prev / (prev - g) if prev != g else 1.0
            return float(t0 + min(max(frac, 0.0), 1.0) * (t1 - t0))
        prev = g
    return INF


def first_output_crossing(S, x, h):
    return first_crossing(S, output_of(x, h))


# -- bundles -------------------------------------------------------------------


def make_policy(text):
    """``"const:i"``, ``"random:seed"`` or ``"chatter[:substeps]"`` (towards velocity 0)."""
    kind, _, arg = str(text).partition(":")
    if kind == "const":
        return ConstantAtom(int(arg or 0))
    if kind == "random":
        return RandomAtom(int(arg or 0))
    if kind == "chatter":
        return Chatter(substeps=int(arg or 1))
    raise ValueError(f"unknown policy {text!r}")


@dataclass(frozen=True)
class BundleSpec:
    """Sampling plan for the solution set started in ``C``.

    ``C`` is the ball ``B(0, radius)`` sampled as the origin plus ``shells``
    spheres of radii ``radius*j/shells`` along the axis directions and
    ``extra_dirs`` quasi-random ones, unless explicit ``points`` are given.
    """

    radius: float = 1.0
    shells: int = 4
    extra_dirs: int = 0
    policies: tuple = ("const:0",)
    horizon: float = 10.0
    step: float = 1e-2
    seed: int = 0
    points: Optional[tuple] = None
    r_max: float = R_MAX

    def refined(self):
        """Doubled density; its sample set contains this one's."""
        return replace(self, shells=2 * self.shells, extra_dirs=2 * self.extra_dirs)

    def directions(self, dim):
        return unit_directions(dim, self.extra_dirs, self.seed)

    def initial_points(self, dim, radius=None):
        if self.points is not None:
            return np.array(self.points, dtype=float).reshape(-1, dim)
        R = self.radius if radius is None else radius
        pts = [np.zeros(dim)]
        for j in range(1, self.shells + 1):
            pts.extend(R * j / self.shells * d for d in self.directions(dim))
        return np.array(pts)

    def to_dict(self):
        d = dict(self.__dict__)
        d["policies"] = list(self.policies)
        d["points"] = None if self.points is None else [list(map(float, p)) for p in self.points]
        return d


@dataclass
class Bundle:
    initials: np.ndarray
    policies: tuple
    trajectories: list
    labels: list
    incomplete: list

    def __len__(self):
        return len(self.trajectories)


def _run(F, x0, policy, spec):
    grid = TimeGrid.uniform(0.0, spec.horizon, spec.step)
    try:
        return integrate(F, make_policy(policy), x0, grid, r_max=spec.r_max), False
    except DivergenceError as exc:
        return exc.trajectory, True


def build_bundle(sys, spec, initials=None):
    """Integrate every (initial point, policy) pair; guard trips are flagged, not raised."""
    X0 = spec.initial_points(sys.F.dim) if initials is None else np.asarray(initials, dtype=float)
    trajs, labels, bad = [], [], []
    for i, x0 in enumerate(X0):
        for pol in spec.policies:
            x, diverged = _run(sys.F, x0, pol, spec)
            trajs.append(x)
            labels.append(f"{i}:{pol}")
            if diverged:
                bad.append(labels[-1])
    return Bundle(X0, tuple(spec.policies), trajs, labels, bad)


def _output_norms(sys, x):
    return np.array([np.linalg.norm(np.atleast_1d(sys.h(s))) for s in x.states])


# -- margin --------------------------------------------------------------------


@dataclass(frozen=True)
class MarginReport:
    eps: float
    delta_hat: Optional[float]
    found: bool
    resolution: float
    r_init: float
    levels: int
    incomplete: tuple
    note: str = "empirical over sampled bundle; initial points restricted to |xi| <= r_init"

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def _radial_extent(h, d, delta, r_init, scan=64, bisect=40):
    # largest s <= r_init with |h(s' d)| <= delta for all sampled s' <= s
    def ok(s):
        return np.linalg.norm(np.atleast_1d(h(s * d))) <= delta

    grid = r_init * np.arange(1, scan + 1) / scan
    lo = 0.0
    for s in grid:
        if not ok(s):
            hi = s
            for _ in range(bisect):
                mid = 0.5 * (lo + hi)
                if ok(mid):
                    lo = mid
                else:
                    hi = mid
            return lo
        lo = s
    return r_init


def _candidates(sys, spec, delta, r_init):
    dim = sys.F.dim
    pts = [np.zeros(dim)]
    for d in spec.directions(dim):
        s = _radial_extent(sys.h, d, delta, r_init)
        if s > 0:
            pts.extend(s * j / spec.shells * d for j in range(1, spec.shells + 1))
    return np.array(pts)


def estimate_stability_margin(sys, eps, spec, delta_max=None, levels=12, tol=1e-9):
    """Largest sampled ``delta`` such that ``|h(x(0))| <= delta`` keeps ``|y| <= eps`` on the bundle.

    Candidates for a given ``delta`` are found by scanning each sample
    direction outward up to ``spec.radius`` and bisecting to the boundary of
    ``{|h| <= delta}``.  ``delta_max`` (default ``spec.radius``) is the upper
    search limit; bisection runs ``levels`` times below it.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    r_init = spec.radius
    top = float(r_init if delta_max is None else delta_max)
    incomplete = set()

    def holds(delta):
        for x0 in _candidates(sys, spec, delta, r_init):
            for pol in spec.policies:
                x, diverged = _run(sys.F, x0, pol, spec)
                if diverged:
                    incomplete.add(f"{pol}@{np.round(x0, 12).tolist()}")
                if _output_norms(sys, x).max() > eps + tol:
                    return False
        return True

    res = top / 2**levels
    if holds(top):
        return MarginReport(eps, top, True, res, r_init, levels, tuple(sorted(incomplete)))
    lo, hi = 0.0, top
    for _ in range(levels):
        mid = 0.5 * (lo + hi)
        if holds(mid):
            lo = mid
        else:
            hi = mid
    found = lo > 0.0
    return MarginReport(eps, lo if found else None, found, res, r_init, levels, tuple(sorted(incomplete)))


# -- uniform attraction --------------------------------------------------------


def last_exit_time(norms, times, eps):
    """Interpolated time after which ``norms <= eps`` for good; ``inf`` if violated at the end."""
    above = np.flatnonzero(norms > eps)
    if above.size == 0:
        return 0.0
    k = int(above[-1])
    if k == len(norms) - 1:
        return INF
    a, b = norms[k], norms[k + 1]
    return float(times[k] + (a - eps) / (a - b) * (times[k + 1] - times[k]))


def _attraction_time(sys, trajs, eps):
    worst = 0.0
    for x in trajs:
        worst = max(worst, last_exit_time(_output_norms(sys, x), x.times, eps))
    return worst


def estimate_uniform_attraction(sys, kappa, eps, spec):
    """Smallest ``T`` with ``|y(t)| <= eps`` on ``[T, horizon]`` for the bundle started in ``B(0, kappa)``."""
    if not (kappa > 0 and eps > 0):
        raise ValueError("kappa and eps must be positive")
    b = build_bundle(sys, spec, spec.initial_points(sys.F.dim, radius=kappa))
    return _attraction_time(sys, b.trajectories, eps)


@dataclass
class GainTable:
    rows: list  # (kappa, eps, T_hat)
    incomplete: list
    note: str = "empirical over sampled bundle"

    def value(self, kappa, eps):
        for k, e, T in self.rows:
            if k == kappa and e == eps:
                return T
        raise KeyError((kappa, eps))

    def is_monotone(self):
        ks = sorted({r[0] for r in self.rows})
        es = sorted({r[1] for r in self.rows})
        for k in ks:
            col = [self.value(k, e) for e in es]
            if any(b > a for a, b in zip(col, col[1:])):
                return False
        for e in es:
            row = [self.value(k, e) for k in ks]
            if any(b < a for a, b in zip(row, row[1:])):
                return False
        return True

    def to_dict(self):
        return {"rows": [[k, e, T] for k, e, T in self.rows], "incomplete": self.incomplete, "note": self.note}


def gain_table(sys, kappas, epsilons, spec):
    """``T_hat(eps, kappa)`` on one shared sample pool.

    The pool is the union of the shells for every ``kappa``; each ``kappa``
    uses the pool points inside ``B(0, kappa)``, so larger ``kappa`` sees a
    superset of trajectories.
    """
    kappas = sorted(float(k) for k in kappas)
    epsilons = sorted(float(e) for e in epsilons)
    pool = np.unique(
        np.concatenate([spec.initial_points(sys.F.dim, radius=k) for k in kappas]), axis=0
    )
    b = build_bundle(sys, spec, pool)
    npol = len(spec.policies)
    radii = np.repeat(np.linalg.norm(pool, axis=1), npol)
    rows = []
    for k in kappas:
        sub = [x for x, r in zip(b.trajectories, radii) if r <= k * (1 + 1e-12)]
        for e in epsilons:
            rows.append((k, e, _attraction_time(sys, sub, e)))
    return GainTable(rows, b.incomplete)


# -- bounded first-crossing times ----------------------------------------------


@dataclass
class SupReport:
    sup_hat: float
    attained_by: Optional[str]
    attained_initial: Optional[list]
    hypothesis_ok: bool
    offenders: list
    refined_sup: Optional[float]
    refinement_stable: Optional[bool]
    sample_count: int
    incomplete: list
    note: str = "empirical over sampled bundle"

    def to_dict(self):
        return dict(self.__dict__)


def _sup_over(sys, bundle, Phi, J):
    best, who, x0best, offenders = -INF, None, None, []
    npol = len(bundle.policies)
    for n, (x, lab) in enumerate(zip(bundle.trajectories, bundle.labels)):
        y = output_of(x, sys.h)
        if not any(J.contains(p) for p in y.states):
            offenders.append(lab)
        tau = first_crossing(Phi, y)
        if tau > best:
            best, who, x0best = tau, lab, bundle.initials[n // npol].tolist()
    return best, who, x0best, offenders


def lemma54_sup(sys, Phi, J, spec, refine=True):
    """Max over the bundle of the first time the output enters the open region ``Phi``.

    Every trajectory must visit the compact set ``J`` (inside ``Phi``); those
    that do not are listed as offenders and invalidate the estimate.  With
    ``refine`` the value under the doubled-density bundle is reported too.
    """
    b = build_bundle(sys, spec)
    best, who, x0, offenders = _sup_over(sys, b, Phi, J)
    refined = stable = None
    incomplete = list(b.incomplete)
    if refine and spec.points is None:
        rb = build_bundle(sys, spec.refined())
        refined, _, _, _ = _sup_over(sys, rb, Phi, J)
        incomplete += [f"refined:{lab}" for lab in rb.incomplete]
        stable = bool(abs(refined - best) <= max(spec.step, 1e-9) or (math.isinf(refined) and math.isinf(best)))
    return SupReport(
        sup_hat=best,
        attained_by=who,
        attained_initial=x0,
        hypothesis_ok=not offenders,
        offenders=offenders,
        refined_sup=refined,
        refinement_stable=stable,
        sample_count=len(b),
        incomplete=incomplete,
    )


@dataclass(frozen=True)
class AttractivityReport:
    ok: bool
    eps_attr: float
    tail_start: float
    worst_tail: float
    incomplete: tuple


def check_attractivity(sys, spec, eps_attr):
    """``|y(t)| <= eps_attr`` on the tail ``[0.9*horizon, horizon]`` of every bundle trajectory."""
    b = build_bundle(sys, spec)
    start = 0.9 * spec.horizon
    worst = 0.0
    for x in b.trajectories:
        mask = x.times >= start - 1e-12
        if not mask.any():
            worst = INF
            continue
        worst = max(worst, float(_output_norms(sys, x)[mask].max()))
    return AttractivityReport(worst <= eps_attr, eps_attr, start, worst, tuple(b.incomplete))


__all__ = [
    "OutputSystem",
    "output_of",
    "Ball",
    "Sublevel",
    "first_crossing",
    "first_output_crossing",
    "BundleSpec",
    "Bundle",
    "build_bundle",
    "make_policy",
    "estimate_stability_margin",
    "MarginReport",
    "estimate_uniform_attraction",
    "gain_table",
    "GainTable",
    "lemma54_sup",
    "SupReport",
    "check_attractivity",
    "last_exit_time",
]
