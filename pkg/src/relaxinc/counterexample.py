"""The three-state system ``x1' = x2^2, x2' = x3^2, x3' = u``, ``u in {-1, 1}``.

Two facts are checked numerically.

Escape from the origin.  Any genuine trajectory from 0 has ``|x3'| = 1``, so
``sigma = x2(1) = int_0^1 x3^2 > 0``; since ``x2`` is nondecreasing,
``x1(t) >= sigma^2 (t - 1)`` and the state leaves ``B(0, eps)`` no later than
``1 + eps / sigma^2``.

A bounded trajectory from an offset start.  ``x3`` runs triangle teeth of
amplitudes ``a_k = a / (k + 1)`` (tooth ``k`` lasts ``2 a_k``).  The tooth
lengths have a divergent sum, so the schedule covers ``[0, inf)``, while
``c2 = int x3^2 = (2/3) a^3 zeta(3)`` and ``c1 = int x2^2`` are finite.
Starting at ``(-c1, -c2, 0)`` gives ``x2 = -(tail of int x3^2)`` and
``x1 = -(tail of int x2^2)``, both nondecreasing to 0, and
``|x(t)| <= sqrt(a^2 + c2^2 + c1^2)`` for all ``t >= 0``.

The witness needs about ``exp(t / (2a))`` teeth to reach time ``t``, far too
many to integrate, so it is evaluated in closed form: the first ``n_teeth``
teeth exactly (piecewise polynomials, Gauss-Legendre quadrature that is exact
at this degree), the rest through Hurwitz-zeta tail sums.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.special import digamma, zeta

from .integrate import ConstantAtom, Switching, TimeGrid, Trajectory, integrate
from .systems import builtin

EULER_GAMMA = 0.5772156649015329

_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)


class VerificationFailure(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


# -- escape --------------------------------------------------------------------


def escape_policy(name):
    """``"plus"`` (u = +1), ``"minus"`` (u = -1) or ``"square:P"`` (+1 then -1, period P)."""
    if name == "plus":
        return ConstantAtom(1)
    if name == "minus":
        return ConstantAtom(0)
    kind, _, arg = name.partition(":")
    if kind == "square":
        period = float(arg)
        if not period > 0:
            raise ValueError("square-wave period must be positive")

        def rule(t):
            phase = (t / period) % 1.0
            return 1 if phase < 0.5 - 1e-12 else 0

        return Switching(rule)
    raise ValueError(f"unknown escape policy {name!r}")


@dataclass
class EscapeResult:
    policy: str
    eps: float
    step: float
    horizon: float
    sigma_hat: float
    certified_escape_time: float
    first_violation: Optional[float]
    extrapolated: bool
    observed_first_violation: Optional[float]
    observed_first_violation_x1: Optional[float]
    bound_check: bool
    x2_check: bool
    max_bound_deficit: float
    euler_slack: float

    def to_dict(self):
        return asdict(self)


def _first_time(mask, times):
    idx = np.flatnonzero(mask)
    return float(times[idx[0]]) if idx.size else None


def counterexample_escape(eps=0.1, policy="plus", step=1e-3, horizon=None):
    """Run a genuine trajectory from the origin and certify its escape time.

    ``first_violation`` is the certified time ``1 + eps / sigma^2`` when it
    lies on the horizon (default: just past it); otherwise it is ``None`` and
    ``extrapolated`` is set.  The first node where ``|x| > eps`` (and where
    ``x1 > eps``) is reported alongside.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    F = builtin("example41")
    pol = escape_policy(policy)
    if horizon is None:
        # the escape bound is below 1 + 9 eps for u = +1; other schedules need
        # sigma first, so use a short probe run
        probe = integrate(F, pol, np.zeros(3), TimeGrid.uniform(0.0, 1.0, step), r_max=np.inf)
        sig = probe.states[-1, 1]
        horizon = min(1.0 + eps / max(sig, 1e-12) ** 2, 1e4) * 1.05 if sig > 0 else 2.0
    if horizon < 1.0:
        raise ValueError("horizon must reach t = 1")
    x = integrate(F, pol, np.zeros(3), TimeGrid.uniform(0.0, horizon, step), r_max=np.inf)
    t, X = x.times, x.states
    j1 = int(np.argmin(np.abs(t - 1.0)))
    sigma = float(np.interp(1.0, t, X[:, 1]))
    after = t >= t[j1]
    slack = sigma**2 * float(x.steps.max())
    deficit = X[after, 0] - sigma**2 * (t[after] - 1.0)
    bound_ok = bool(np.all(deficit >= -slack))
    x2_ok = bool(np.all(X[after, 1] >= sigma - 1e-12 * max(1.0, sigma)))
    t_star = 1.0 + eps / sigma**2 if sigma > 0 else math.inf
    on_horizon = t_star <= t[-1]
    return EscapeResult(
        policy=policy,
        eps=eps,
        step=step,
        horizon=float(t[-1]),
        sigma_hat=sigma,
        certified_escape_time=t_star,
        first_violation=t_star if on_horizon else None,
        extrapolated=not on_horizon,
        observed_first_violation=_first_time(np.linalg.norm(X, axis=1) > eps, t),
        observed_first_violation_x1=_first_time(X[:, 0] > eps, t),
        bound_check=bound_ok,
        x2_check=x2_ok,
        max_bound_deficit=float(max(0.0, -deficit.min())) if deficit.size else 0.0,
        euler_slack=slack,
    )


# -- bounded witness -----------------------------------------------------------


def _gl(f, lo, hi):
    """4-point Gauss-Legendre on [lo, hi] (vectorized over the interval arrays)."""
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    nodes = mid[..., None] + half[..., None] * _GL_X
    return half * (f(nodes) @ _GL_W)


class HarmonicWitness:
    """Closed-form evaluation of the harmonic-tooth trajectory for amplitude ``a``."""

    def __init__(self, a, n_teeth=200_000):
        if not a > 0:
            raise ValueError("amplitude must be positive")
        self.a = float(a)
        self.n = int(n_teeth)
        m = np.arange(1, self.n + 1, dtype=float)
        self.alpha = self.a / m
        self.start = 2.0 * self.a * np.concatenate([[0.0], np.cumsum(1.0 / m)])[:-1]
        self.end_explicit = 2.0 * self.a * float(np.sum(1.0 / m))
        self.c2 = (2.0 / 3.0) * self.a**3 * float(zeta(3.0, 1.0))
        # x2 at each tooth start: minus the remaining integral of x3^2
        self.base2 = -(2.0 / 3.0) * self.a**3 * zeta(3.0, m)
        full1 = self._partial(np.arange(self.n), 2.0 * self.alpha, power=2)
        full0 = self._partial(np.arange(self.n), 2.0 * self.alpha, power=1)
        a7, a4 = self.a**7, self.a**4
        tail1 = (2.0 / 9.0) * a7 * float(zeta(5.0, self.n + 1.0))
        tail0 = -(2.0 / 3.0) * a4 * float(zeta(3.0, self.n + 1.0))
        # remaining integrals from each tooth start
        self.rest1 = np.cumsum(full1[::-1])[::-1] + tail1
        self.rest0 = np.cumsum(full0[::-1])[::-1] + tail0
        self.c1 = float(self.rest1[0])
        self.c0 = float(-self.rest0[0])

    @property
    def sup_bound(self):
        return math.sqrt(self.a**2 + self.c2**2 + self.c1**2)

    @property
    def initial(self):
        return np.array([-self.c1, -self.c2, 0.0])

    def _x2_local(self, k, s):
        al = self.alpha[k][..., None] if np.ndim(s) > np.ndim(k) else self.alpha[k]
        b = self.base2[k][..., None] if np.ndim(s) > np.ndim(k) else self.base2[k]
        up = s**3 / 3.0
        down = (2.0 * al**3 - np.clip(2.0 * al - s, 0.0, None) ** 3) / 3.0
        return b + np.where(s <= al, up, down)

    def _partial(self, k, s, power):
        """``int_0^s x2^power`` over tooth ``k`` (exact: the pieces are polynomials)."""
        al = self.alpha[k]
        f = lambda u: self._x2_local(k, u) ** power  # noqa: E731
        s1 = np.minimum(s, al)
        s2 = np.maximum(s, al)
        zero = np.zeros_like(s1)
        return _gl(f, zero, s1) + _gl(f, al + zero, s2)

    def state(self, times):
        """States, velocities and controls at ``times`` (free variable offset start)."""
        t = np.asarray(times, dtype=float)
        X = np.zeros((t.size, 3))
        V = np.zeros((t.size, 3))
        U = np.ones(t.size, dtype=int)
        inner = t < self.end_explicit
        ti = t[inner]
        k = np.searchsorted(self.start, ti, side="right") - 1
        s = ti - self.start[k]
        al = self.alpha[k]
        x3 = np.where(s <= al, s, 2.0 * al - s)
        x2 = self._x2_local(k, s)
        x1 = -(self.rest1[k] - self._partial(k, s, power=2))
        X[inner] = np.column_stack([x1, x2, x3])
        U[inner] = np.where(s < al, 1, 0)
        to = t[~inner]
        if to.size:
            # tooth index from H_K = ln K + gamma (+ O(1/K)); x3 is below a/K
            with np.errstate(over="ignore"):
                K = np.minimum(np.exp(to / (2.0 * self.a) - EULER_GAMMA), 1e300)
            X[~inner, 1] = -(2.0 / 3.0) * self.a**3 * zeta(3.0, K + 1.0)
            X[~inner, 0] = -(2.0 / 9.0) * self.a**7 * zeta(5.0, K + 1.0)
        V[:, 0] = X[:, 1] ** 2
        V[:, 1] = X[:, 2] ** 2
        V[:, 2] = np.where(U == 1, 1.0, -1.0)
        return X, V, U

    def integrals_from_zero(self, times):
        """``int_0^t x2`` at ``times`` (used for the run started at the origin)."""
        t = np.asarray(times, dtype=float)
        out = np.empty(t.size)
        inner = t < self.end_explicit
        ti = t[inner]
        k = np.searchsorted(self.start, ti, side="right") - 1
        s = ti - self.start[k]
        out[inner] = -self.c0 - (self.rest0[k] - self._partial(k, s, power=1))
        to = t[~inner]
        if to.size:
            with np.errstate(over="ignore"):
                K = np.minimum(np.exp(to / (2.0 * self.a) - EULER_GAMMA), 1e300)
            out[~inner] = -self.c0 + (2.0 / 3.0) * self.a**4 * zeta(3.0, K + 1.0)
        return out


def tooth_count_log10(a, t):
    """``log10`` of the smallest K with ``2 a H_K >= t`` (teeth needed to reach ``t``)."""
    H = lambda L: digamma(10.0**L + 1.0) + EULER_GAMMA  # noqa: E731
    lo, hi = 0.0, max(1.0, (t / (2.0 * a)) / math.log(10.0) + 1.0)
    if hi > 300:
        # beyond float range: H_K = ln K + gamma to far below rounding
        return (t / (2.0 * a) - EULER_GAMMA) / math.log(10.0)
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if 2.0 * a * H(mid) >= t:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class BoundedResult:
    eps: float
    horizon: float
    step: float
    a: float
    c1: float
    c2: float
    initial: list
    initial_norm: float
    sup_bound: float
    sup_norm_nodes: float
    within_tube: bool
    initial_within: bool
    x1_monotone: bool
    x2_monotone: bool
    explicit_teeth: int
    explicit_until: float
    teeth_to_horizon_log10: float
    origin_violation: Optional[float]
    origin_sup_norm: float
    origin_sigma: float
    origin_certified_escape_time: float
    ok: bool

    def to_dict(self):
        return asdict(self)


def _tune_amplitude(eps, margin, n_teeth, iters=60):
    target = (1.0 - margin) * eps
    lo, hi = 0.0, target
    if HarmonicWitness(hi, n_teeth=1000).sup_bound <= target:
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if HarmonicWitness(mid, n_teeth=1000).sup_bound <= target:
            lo = mid
        else:
            hi = mid
    if lo <= 0.0:
        raise VerificationFailure("amplitude search collapsed to zero")
    return lo


def counterexample_bounded(eps=0.1, horizon=100.0, step=1e-2, margin=0.1, n_teeth=200_000):
    """Build the harmonic witness, verify it on the node grid and rerun its schedule from 0.

    Returns ``(result, trajectory, origin_trajectory)``; both trajectories are
    exact solutions read off at the nodes (``scheme="sampled"``).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    a = _tune_amplitude(eps, margin, n_teeth)
    W = HarmonicWitness(a, n_teeth)
    grid = TimeGrid.uniform(0.0, horizon, step).nodes
    X, V, U = W.state(grid)
    traj = Trajectory(grid, X, V[:-1], U[:-1], scheme="sampled")
    norms = np.linalg.norm(X, axis=1)
    tol = 1e-12

    # same schedule from x(0) = 0: x3 unchanged, x2 shifted by c2,
    # x1 = int (x2 + c2)^2 = (x1 + c1) + 2 c2 int x2 + c2^2 t
    Y = X.copy()
    Y[:, 1] = X[:, 1] + W.c2
    Y[:, 0] = (X[:, 0] + W.c1) + 2.0 * W.c2 * W.integrals_from_zero(grid) + W.c2**2 * grid
    VY = V.copy()
    VY[:, 0] = Y[:, 1] ** 2
    origin = Trajectory(grid, Y, VY[:-1], U[:-1], scheme="sampled")
    onorm = np.linalg.norm(Y, axis=1)
    bad = np.flatnonzero(onorm > eps)
    sig = float(W.state(np.array([1.0]))[0][0, 1] + W.c2)

    res = BoundedResult(
        eps=eps,
        horizon=float(grid[-1]),
        step=step,
        a=a,
        c1=W.c1,
        c2=W.c2,
        initial=W.initial.tolist(),
        initial_norm=float(np.linalg.norm(W.initial)),
        sup_bound=W.sup_bound,
        sup_norm_nodes=float(norms.max()),
        within_tube=bool(np.all(norms <= eps + tol)),
        initial_within=bool(np.linalg.norm(W.initial) <= eps),
        x1_monotone=bool(np.all(np.diff(X[:, 0]) >= -tol * W.c1) and X[:, 0].max() <= 0.0),
        x2_monotone=bool(np.all(np.diff(X[:, 1]) >= -tol * W.c2) and X[:, 1].max() <= 0.0),
        explicit_teeth=W.n,
        explicit_until=W.end_explicit,
        teeth_to_horizon_log10=tooth_count_log10(a, horizon),
        origin_violation=float(grid[bad[0]]) if bad.size else None,
        origin_sup_norm=float(onorm.max()),
        origin_sigma=sig,
        origin_certified_escape_time=1.0 + eps / sig**2 if sig > 0 else math.inf,
        ok=False,
    )
    res.ok = res.within_tube and res.initial_within and res.x1_monotone and res.x2_monotone
    return res, traj, origin
