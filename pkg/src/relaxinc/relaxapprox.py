"""Approximating relaxed trajectories by genuine ones on an unbounded horizon.

The construction runs segment by segment in backward time.  For segment
``k`` (covering ``[T_{k-1}, T_k]``) a deterministic procedure ``phi_k`` maps
a point ``eta`` near ``z(T_k)`` to the start of a genuine trajectory that ends
at ``eta`` and stays within ``eps_k`` of ``z``.  Pulling ``z(T_i)`` back through
``phi_i, ..., phi_1`` for growing truncation levels ``i`` gives the iterates
``zeta_i^k``; the last level's chain is stitched into the output trajectory.

Backward steps are solved implicitly so that, read forward, every piece is an
explicit-Euler trajectory of ``F``: the forward velocity on each step is an
atom of ``F`` at the step's left node.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .expr import parse_expr
from .inclusion import estimate_bound, estimate_lipschitz, unit_directions
from .integrate import TAU_SEL, TAU_TUBE, Trajectory, chatter_schedule, concatenate, recommended_step, tube_check


class ApproximationError(RuntimeError):
    pass


class RadiusFloorError(ApproximationError):
    def __init__(self, message, segment, value):
        super().__init__(message)
        self.segment = segment
        self.value = value


class SegmentFailure(ApproximationError):
    def __init__(self, message, exit_time):
        super().__init__(message)
        self.exit_time = exit_time


class ConstructionFailure(ApproximationError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NonConvergenceError(ApproximationError):
    def __init__(self, message, residuals):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class Partition:
    times: np.ndarray
    rule: str = "explicit"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2 or t[0] != 0.0:
            raise ValueError("a partition starts at 0 and has at least two times")
        if not np.all(np.diff(t) > 0):
            raise ValueError("partition times must be strictly increasing")
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, dt, horizon):
        n = int(np.ceil(horizon / dt - 1e-9))
        t = dt * np.arange(n + 1)
        t[-1] = horizon
        return cls(t, f"uniform({dt})")

    @classmethod
    def geometric(cls, dt0, ratio, horizon=None, k_max=None):
        """``T_k - T_{k-1} = dt0 * ratio**(k-1)``, truncated by horizon or ``k_max``."""
        if horizon is None and k_max is None:
            raise ValueError("geometric partition needs a horizon or k_max")
        t = [0.0]
        k = 0
        while True:
            if k_max is not None and k >= k_max:
                break
            nxt = t[-1] + dt0 * ratio**k
            if horizon is not None and nxt > horizon + 1e-12:
                break
            t.append(nxt)
            k += 1
        return cls(np.array(t), f"geometric({dt0},{ratio})")

    @classmethod
    def explicit(cls, times):
        return cls(np.asarray(times, dtype=float), "explicit")

    @property
    def n_segments(self):
        return len(self.times) - 1

    def truncate(self, horizon):
        keep = self.times[self.times <= horizon + 1e-9 * max(1.0, horizon)]
        return Partition(keep, self.rule)


@dataclass(frozen=True)
class RadiusProfile:
    func: Callable[[float], float]
    r_min: float = 1e-4
    expr: Optional[str] = None

    @classmethod
    def constant(cls, value, r_min=1e-4):
        value = float(value)
        return cls(lambda t: value, r_min, repr(value))

    @classmethod
    def from_expr(cls, text, r_min=1e-4):
        e = parse_expr(text, {"t"})
        return cls(lambda t: float(e({"t": t})), r_min, text)

    def __call__(self, t):
        return float(self.func(t))


def segment_radii(r, partition, density=64):
    """Running minimum of ``min r`` over each ``[T_k, T_{k+1}]``."""
    out = []
    running = np.inf
    for k in range(partition.n_segments):
        ts = np.linspace(partition.times[k], partition.times[k + 1], density + 1)
        m = min(r(t) for t in ts)
        running = min(running, m)
        if running < r.r_min:
            raise RadiusFloorError(
                f"segment {k}: radius {running:.3g} below floor {r.r_min:g}", segment=k, value=running
            )
        out.append(running)
    return np.array(out)


@dataclass
class SegmentResult:
    backward: Trajectory
    forward: Trajectory
    endpoint: np.ndarray
    sup_error: float


def _implicit_substep(F, idx, t_new, y, dt):
    # solve y_new = y - dt * f_idx(t_new, y_new)
    y_new = y - dt * F.values(t_new, y)[idx]
    for _ in range(200):
        y2 = y - dt * F.values(t_new, y_new)[idx]
        if np.array_equal(y2, y_new) or np.linalg.norm(y2 - y_new) <= 1e-15 * (1.0 + np.linalg.norm(y2)):
            return y2
        y_new = y2
    raise SegmentFailure(f"implicit step at t={t_new:.6g} did not converge", exit_time=t_new)


class SegmentApproximator:
    """The backward map for one partition segment.

    Calling it with a point ``eta`` near ``z(T_k)`` runs tracking chattering
    for ``-F(T_k - s, x)`` along the reversed reference and returns a
    SegmentResult; ``endpoint`` is the value ``phi_k(eta)``.
    """

    def __init__(self, F, z, partition, k, eps, gain=1.0, refine=1):
        if not 1 <= k <= partition.n_segments:
            raise ValueError(f"segment index {k} out of range")
        self.F, self.z, self.k, self.eps = F, z, k, float(eps)
        self.gain, self.refine = float(gain), int(refine)
        t_a, t_b = partition.times[k - 1], partition.times[k]
        self.i0 = self._node(t_a)
        self.i1 = self._node(t_b)
        self.T_start, self.T_end = float(z.times[self.i0]), float(z.times[self.i1])
        self._endpoints = {}

    def _node(self, t):
        j = int(np.argmin(np.abs(self.z.times - t)))
        if abs(self.z.times[j] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"partition time {t} is not a node of the reference trajectory")
        return j

    def endpoint(self, eta):
        key = np.asarray(eta, dtype=float).tobytes()
        if key not in self._endpoints:
            self._endpoints[key] = self(eta).endpoint
        return self._endpoints[key]

    def __call__(self, eta):
        F, z = self.F, self.z
        y = np.asarray(eta, dtype=float).copy()
        tol = TAU_TUBE
        err0 = float(np.linalg.norm(y - z.states[self.i1]))
        if err0 > self.eps + tol:
            raise SegmentFailure(f"start point is {err0:.3g} from the reference (eps={self.eps:.3g})", exit_time=0.0)
        t_nodes, states, fvel, atoms = [self.T_end], [y.copy()], [], []
        on_ref = np.array_equal(y, z.states[self.i1])
        sup_err = err0
        for j in range(self.i1, self.i0, -1):
            t_lo, t_hi = z.times[j - 1], z.times[j]
            if on_ref and self.refine == 1:
                zlo = z.states[j - 1]
                P = F.values(t_lo, zlo)
                c = int(np.argmin(np.linalg.norm(P - z.velocities[j - 1], axis=1)))
                scale = 1.0 + np.linalg.norm(z.states[j])
                if (
                    np.linalg.norm(P[c] - z.velocities[j - 1]) <= TAU_SEL
                    and np.linalg.norm(zlo + (t_hi - t_lo) * P[c] - z.states[j]) <= TAU_SEL * scale
                ):
                    y = zlo.copy()
                    t_nodes.append(t_lo)
                    states.append(y.copy())
                    fvel.append(P[c])
                    atoms.append(c)
                    continue
            wdot = -z.velocities[j - 1]
            span = t_hi - t_lo
            z_lo, z_hi = z.states[j - 1], z.states[j]

            def ref(t):
                if t == t_hi:
                    return z_hi
                if t == t_lo:
                    return z_lo
                return z_lo + ((t - t_lo) / span) * (z_hi - z_lo)

            for q in range(self.refine):
                a_hi = t_hi if q == 0 else t_hi - q * span / self.refine
                a_lo = t_lo if q == self.refine - 1 else t_hi - (q + 1) * span / self.refine
                delta = a_hi - a_lo
                e = ref(a_hi) - y
                target = wdot + self.gain * e
                PG = -F.values(a_hi, y)
                sched = [(i, w) for i, w in chatter_schedule(PG, target) if w * delta > 0]
                sched.sort(key=lambda iw: (-float(PG[iw[0]] @ e), iw[0]))
                cur = a_hi
                for p, (idx, w) in enumerate(sched):
                    nxt = a_lo if p == len(sched) - 1 else cur - w * delta
                    y = _implicit_substep(F, idx, nxt, y, cur - nxt)
                    err = float(np.linalg.norm(y - ref(nxt)))
                    sup_err = max(sup_err, err)
                    if err > self.eps + tol:
                        raise SegmentFailure(
                            f"segment {self.k}: left the {self.eps:.3g}-tube at t={nxt:.6g}",
                            exit_time=self.T_end - nxt,
                        )
                    t_nodes.append(nxt)
                    states.append(y.copy())
                    fvel.append(F.values(nxt, y)[idx])
                    atoms.append(idx)
                    cur = nxt
            on_ref = np.array_equal(y, z.states[j - 1])
        t_nodes = np.array(t_nodes)
        states = np.array(states)
        fvel = np.array(fvel).reshape(-1, F.dim)
        atoms = np.array(atoms, dtype=int)
        backward = Trajectory(self.T_end - t_nodes, states, -fvel, atoms, scheme="implicit")
        forward = Trajectory(t_nodes[::-1], states[::-1], fvel[::-1], atoms[::-1])
        return SegmentResult(backward=backward, forward=forward, endpoint=states[-1].copy(), sup_error=sup_err)


def approximate_segment(F, z, k, eps, eta, partition, gain=1.0, refine=1):
    """One application of the backward map of segment ``k`` (see SegmentApproximator)."""
    return SegmentApproximator(F, z, partition, k, eps, gain, refine)(eta)


def _probe_points(center, dirs, delta):
    pts = [center.copy()]
    for frac in (1.0, 0.5):
        pts.extend(center + frac * delta * d for d in dirs)
    return pts


def find_delta(
    F, z, k, eps, probes=4, *, partition, gain=1.0, refine=1, levels=8, bisect=8, r_cap=None, seed=0, approximator=None
):
    """Largest probed radius ``delta`` whose ball maps into the ``eps``-tube.

    Halves from ``eps`` until every probe point (centre, sphere and half-sphere
    along fixed directions) succeeds, then bisects between the first success
    and the last failure.
    """
    if not eps > TAU_TUBE:
        raise ConstructionFailure(f"tube radius {eps:g} is below the tube tolerance")
    A = approximator or SegmentApproximator(F, z, partition, k, eps, gain, refine)
    center = z.states[A.i1]
    dirs = unit_directions(F.dim, probes, seed)

    def ok(delta):
        for p in _probe_points(center, dirs, delta):
            try:
                A.endpoint(p)
            except SegmentFailure:
                return False
        return True

    lo = hi = None
    for j in range(levels):
        d = eps * 0.5**j
        if ok(d):
            lo = d
            break
        hi = d
    if lo is None:
        raise ConstructionFailure(f"segment {k}: no admissible delta down to {eps * 0.5 ** (levels - 1):.3g}")
    if hi is not None:
        for _ in range(bisect):
            mid = 0.5 * (lo + hi)
            if ok(mid):
                lo = mid
            else:
                hi = mid
    if r_cap is not None:
        lo = min(lo, float(r_cap))
    return lo


@dataclass
class ApproxReport:
    partition: list
    r_k: list
    delta_k: list
    eps_k: list
    sup_errors: list
    zeta_residuals: list
    level_max_residuals: list
    eta0: list
    sup_weighted_error: float
    tube_ok: bool
    first_violation: Optional[float]
    covered_horizon: list
    converged: bool
    hypotheses: dict = field(default_factory=dict)
    zeta: list = field(default_factory=list)

    def to_dict(self):
        return {
            "partition": self.partition,
            "r_k": self.r_k,
            "delta_k": self.delta_k,
            "eps_k": self.eps_k,
            "sup_errors": self.sup_errors,
            "zeta_residuals": self.zeta_residuals,
            "level_max_residuals": self.level_max_residuals,
            "eta0": self.eta0,
            "sup_weighted_error": self.sup_weighted_error,
            "tube_ok": self.tube_ok,
            "first_violation": self.first_violation,
            "covered_horizon": self.covered_horizon,
            "converged": self.converged,
            "hypotheses": self.hypotheses,
        }


def _check_hypotheses(F, z, r_max, margin, density):
    R = float(np.linalg.norm(z.states, axis=1).max()) + r_max + margin
    lip = estimate_lipschitz(F, R, grid_density=density, t_max=z.t_end)
    bnd = estimate_bound(F, R, grid_density=density, t_max=z.t_end)
    steps = np.diff(z.times)
    h_rec = recommended_step(lip.k_hat, h_max=float(steps.max()))
    return {
        "radius": R,
        "k_hat": lip.k_hat,
        "alpha_hat": bnd.alpha_hat,
        "sample_count": lip.sample_count + bnd.sample_count,
        "recommended_step": h_rec,
        "reference_step": float(steps.max()),
        "step_ok": bool(steps.max() <= h_rec * (1 + 1e-9)),
        "margin": margin,
        "note": "sampled estimates over B(0, R); lower bounds on the true constants",
    }


def stitch_infinite(
    F,
    z,
    r,
    partition,
    tol_zeta=1e-3,
    *,
    gain=1.0,
    refine=1,
    probes=4,
    levels=8,
    margin=1.0,
    density=64,
    check_hypotheses=True,
    seed=0,
):
    """Genuine trajectory ``gamma`` with ``|gamma(t) - z(t)| <= r(t)`` on the covered horizon.

    Returns ``(gamma, report)``.  Raises ConstructionFailure when the final
    tube check fails and NonConvergenceError when the level residuals grow
    for three consecutive levels while above ``tol_zeta``.
    """
    P = partition.truncate(z.t_end)
    if P.n_segments < 1:
        raise ValueError("partition does not cover any segment of the reference trajectory")
    K = P.n_segments
    r_k = segment_radii(r, P, density)
    r_caps = list(r_k) + [min(r_k[-1], r(P.times[-1]))]
    hyp = _check_hypotheses(F, z, float(max(r_caps)), margin, 4) if check_hypotheses else {}

    deltas = [float(r_caps[0])]
    approx = []
    for k in range(1, K + 1):
        A = SegmentApproximator(F, z, P, k, deltas[k - 1], gain, refine)
        deltas.append(find_delta(F, z, k, deltas[k - 1], probes, partition=P, levels=levels, r_cap=r_caps[k], seed=seed, approximator=A))
        approx.append(A)

    node = [approx[0].i0] + [A.i1 for A in approx]
    prev = None
    residuals, maxima, zeta = [], [], []
    for i in range(1, K + 1):
        chain = [None] * (i + 1)
        chain[i] = z.states[node[i]].copy()
        for k in range(i, 0, -1):
            chain[k - 1] = approx[k - 1].endpoint(chain[k])
        zeta.append([c.tolist() for c in chain])
        if prev is not None:
            row = [float(np.linalg.norm(chain[k] - prev[k])) for k in range(i)]
            residuals.append(row)
            maxima.append(max(row))
            if len(maxima) >= 3 and maxima[-3] < maxima[-2] < maxima[-1] and maxima[-1] > tol_zeta:
                raise NonConvergenceError(f"zeta residuals grew for three levels (last {maxima[-1]:.3g})", residuals)
        prev = chain

    pieces = [approx[k - 1](prev[k]) for k in range(1, K + 1)]
    gamma = concatenate([p.forward for p in pieces])
    tube = tube_check(gamma, z, r)
    sup_errors = []
    for k in range(1, K + 1):
        seg = gamma.restrict(P.times[k - 1], P.times[k])
        sup_errors.append(float(np.linalg.norm(seg.states - z(seg.times), axis=1).max()))
    report = ApproxReport(
        partition=P.times.tolist(),
        r_k=[float(v) for v in r_caps],
        delta_k=deltas,
        eps_k=deltas[:-1],
        sup_errors=sup_errors,
        zeta_residuals=residuals,
        level_max_residuals=maxima,
        eta0=prev[0].tolist(),
        sup_weighted_error=tube.sup_weighted_error,
        tube_ok=tube.ok,
        first_violation=tube.first_violation,
        covered_horizon=[float(P.times[0]), float(P.times[-1])],
        converged=not maxima or maxima[-1] < tol_zeta,
        hypotheses=hyp,
        zeta=zeta,
    )
    if not tube.ok:
        raise ConstructionFailure(f"stitched trajectory leaves the tube at t={tube.first_violation}", report)
    return gamma, report
