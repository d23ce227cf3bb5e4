"""Explicit-Euler solution of differential inclusions under selection policies.

Every step stores the velocity it used, so a trajectory can be replayed and
audited: ``states[k+1] = states[k] + h_k * velocities[k]`` and each velocity
is a point of ``F(t_k, states[k])`` (of its hull for relaxed runs).
Chattering writes its sub-steps as ordinary nodes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .setgeom import PointSet, as_point, dist_point_set, nearest_combination

R_MAX = 1e6
TAU_SEL = 1e-9
TAU_TUBE = 1e-9


class DivergenceError(RuntimeError):
    def __init__(self, message, escape_time, trajectory=None):
        super().__init__(message)
        self.escape_time = escape_time
        self.trajectory = trajectory


@dataclass(frozen=True)
class TimeGrid:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a time grid needs at least two nodes")
        if not np.all(np.diff(nodes) > 0):
            raise ValueError("grid nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, t0, t_end, h, h_max=None):
        if not t_end > t0:
            raise ValueError("t_end must exceed t0")
        if not h > 0:
            raise ValueError("step must be positive")
        if h_max is not None and h > h_max:
            raise ValueError(f"step {h} exceeds h_max {h_max}")
        n = int(np.ceil((t_end - t0) / h - 1e-9))
        nodes = t0 + h * np.arange(n + 1)
        nodes[-1] = t_end
        if n >= 2 and nodes[-1] - nodes[-2] <= 1e-12 * h:
            nodes = np.delete(nodes, -2)
        return cls(nodes)

    @property
    def t0(self):
        return float(self.nodes[0])

    @property
    def t_end(self):
        return float(self.nodes[-1])

    @property
    def steps(self):
        return np.diff(self.nodes)


@dataclass(eq=False)
class Trajectory:
    """Sampled path with per-step velocities and linear interpolation.

    ``scheme`` says where the stored velocity was evaluated: ``"explicit"``
    (left node, the default), ``"implicit"`` (right node) or ``"sampled"``
    (an exact solution read off at nodes; velocities are right derivatives).
    ``atoms[k]`` is the row index of the realised velocity in ``F.values`` or
    -1 for hull velocities.
    """

    times: np.ndarray
    states: np.ndarray
    velocities: np.ndarray
    atoms: Optional[np.ndarray] = None
    weights: Optional[list] = None
    scheme: str = "explicit"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float).reshape(-1, self.states.shape[1])
        if self.states.shape[0] != self.times.shape[0]:
            raise ValueError("one state per node required")
        if self.velocities.shape[0] != self.times.shape[0] - 1:
            raise ValueError("one velocity per step required")
        if self.atoms is None:
            self.atoms = np.full(len(self.velocities), -1, dtype=int)

    @property
    def dim(self):
        return self.states.shape[1]

    @property
    def t0(self):
        return float(self.times[0])

    @property
    def t_end(self):
        return float(self.times[-1])

    @property
    def steps(self):
        return np.diff(self.times)

    def __len__(self):
        return len(self.times)

    def __call__(self, t):
        """Piecewise-linear interpolation (scalar or array ``t``)."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.column_stack([np.interp(t_arr, self.times, self.states[:, i]) for i in range(self.dim)])
        return out[0] if np.ndim(t) == 0 else out

    def step_index(self, t, side="left"):
        """Index of the step ``[t_j, t_{j+1}]`` containing ``t``.

        ``side="left"`` picks the step ending at ``t`` when ``t`` is a node.
        """
        if side == "left":
            j = int(np.searchsorted(self.times, t, side="left")) - 1
        else:
            j = int(np.searchsorted(self.times, t, side="right")) - 1
        return min(max(j, 0), len(self.velocities) - 1)

    def velocity_at(self, t, side="right"):
        return self.velocities[self.step_index(t, side)]

    def euler_residual(self):
        if len(self.velocities) == 0:
            return 0.0
        pred = self.states[:-1] + self.steps[:, None] * self.velocities
        return float(np.abs(pred - self.states[1:]).max())

    def selection_residual(self, F):
        """Largest distance of a stored velocity from the set it must lie in."""
        worst = 0.0
        for k, v in enumerate(self.velocities):
            node = k + 1 if self.scheme == "implicit" else k
            P = F.eval(self.times[node], self.states[node])
            worst = max(worst, dist_point_set(v, P))
        return worst

    def restrict(self, t_a, t_b):
        """Sub-trajectory on the nodes within ``[t_a, t_b]``."""
        tol = 1e-12 * max(1.0, abs(t_b))
        mask = (self.times >= t_a - tol) & (self.times <= t_b + tol)
        idx = np.flatnonzero(mask)
        i0, i1 = idx[0], idx[-1]
        return Trajectory(
            self.times[i0 : i1 + 1],
            self.states[i0 : i1 + 1],
            self.velocities[i0:i1],
            self.atoms[i0:i1],
            None if self.weights is None else self.weights[i0:i1],
            self.scheme,
        )

    def to_csv(self):
        """CSV text: header ``t, x1..xn, v1..vn``; the last row has empty v fields."""
        n = self.dim
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"v{i + 1}" for i in range(n)])
        for k in range(len(self.times)):
            row = [repr(float(self.times[k]))] + [repr(float(s)) for s in self.states[k]]
            if k < len(self.velocities):
                row += [repr(float(v)) for v in self.velocities[k]]
            else:
                row += [""] * n
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        n = (len(header) - 1) // 2
        times = np.array([float(r[0]) for r in body])
        states = np.array([[float(v) for v in r[1 : n + 1]] for r in body])
        vels = np.array([[float(v) for v in r[n + 1 :]] for r in body[:-1]]).reshape(-1, n)
        return cls(times, states, vels)


def concatenate(parts):
    """Join trajectories whose junction nodes coincide exactly."""
    times, states, vels, atoms = [parts[0].times], [parts[0].states], [parts[0].velocities], [parts[0].atoms]
    for prev, nxt in zip(parts, parts[1:]):
        if prev.times[-1] != nxt.times[0] or not np.array_equal(prev.states[-1], nxt.states[0]):
            raise ValueError("trajectories do not share their junction node")
        times.append(nxt.times[1:])
        states.append(nxt.states[1:])
        vels.append(nxt.velocities)
        atoms.append(nxt.atoms)
    return Trajectory(
        np.concatenate(times), np.concatenate(states), np.concatenate(vels), np.concatenate(atoms), None, parts[0].scheme
    )


# -- selection policies ------------------------------------------------------


@dataclass(frozen=True)
class ConstantAtom:
    index: int


@dataclass(frozen=True)
class RandomAtom:
    seed: int = 0


@dataclass(frozen=True)
class Tracking:
    reference: Trajectory
    gain: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.gain) and self.gain >= 0):
            raise ValueError("tracking gain must be finite and nonnegative")


@dataclass(frozen=True)
class Chatter:
    """Carathéodory chattering towards a hull velocity.

    Each grid step is one chatter period: the target velocity (projected to
    the hull if needed) is decomposed and atom ``i`` runs for ``w_i * h`` in
    index order, using ``substeps`` Euler sub-steps per atom.  ``target``
    defaults to the zero velocity.
    """

    target: Optional[Callable] = None
    substeps: int = 1


@dataclass(frozen=True)
class Switching:
    """Open-loop schedule: ``rule(t)`` gives the atom index used on the step starting at ``t``."""

    rule: Callable[[float], int]


def zero_target(t, x):
    return np.zeros_like(x)


def chatter_schedule(P, v):
    """(atom index, weight) pairs realising ``v`` over the cloud ``P``."""
    _, cc = nearest_combination(v, PointSet(P))
    return list(zip(cc.indices, cc.weights))


def _guard(x, t, r_max, times, states, vels, atoms, scheme="explicit"):
    n = float(np.linalg.norm(x))
    if not np.isfinite(n) or n > r_max:
        traj = Trajectory(np.array(times), np.array(states), np.array(vels).reshape(-1, len(x)), np.array(atoms, dtype=int), scheme=scheme)
        raise DivergenceError(f"state norm exceeded {r_max:g} at t={t:.6g}", escape_time=t, trajectory=traj)


def integrate(F, policy, x0, grid, r_max=R_MAX):
    """Explicit Euler along ``grid`` with velocities chosen by ``policy``."""
    x = as_point(x0, F.dim).copy()
    nodes = grid.nodes
    times, states, vels, atoms = [nodes[0]], [x.copy()], [], []
    rng = np.random.default_rng(policy.seed) if isinstance(policy, RandomAtom) else None
    for k in range(len(nodes) - 1):
        t, t_next = nodes[k], nodes[k + 1]
        h = t_next - t
        if isinstance(policy, Chatter):
            target = policy.target or zero_target
            sched = chatter_schedule(F.values(t, x), np.asarray(target(t, x), dtype=float))
            s = t
            pieces = [(i, w * h) for i, w in sched if w * h > 0]
            for p, (idx, dur) in enumerate(pieces):
                for q in range(policy.substeps):
                    last = p == len(pieces) - 1 and q == policy.substeps - 1
                    s_next = t_next if last else s + dur / policy.substeps
                    v = F.values(s, x)[idx]
                    x = x + (s_next - s) * v
                    times.append(s_next)
                    states.append(x.copy())
                    vels.append(v)
                    atoms.append(idx)
                    s = s_next
                    _guard(x, s, r_max, times, states, vels, atoms)
            continue
        P = F.values(t, x)
        if isinstance(policy, ConstantAtom):
            idx = policy.index
        elif isinstance(policy, RandomAtom):
            idx = int(rng.integers(len(P)))
        elif isinstance(policy, Switching):
            idx = int(policy.rule(t))
        elif isinstance(policy, Tracking):
            ref = policy.reference
            target = ref.velocity_at(t, "right") + policy.gain * (ref(t) - x)
            idx = int(np.argmin(np.linalg.norm(P - target, axis=1)))
        else:
            raise TypeError(f"unknown selection policy {policy!r}")
        v = P[idx]
        x = x + h * v
        times.append(t_next)
        states.append(x.copy())
        vels.append(v)
        atoms.append(idx)
        _guard(x, t_next, r_max, times, states, vels, atoms)
    return Trajectory(np.array(times), np.array(states), np.array(vels), np.array(atoms, dtype=int))


def integrate_relaxed(F, target_velocity, x0, grid, r_max=R_MAX, record_weights=True):
    """Euler trajectory of ``clco F`` following ``target_velocity`` (projected)."""
    x = as_point(x0, F.dim).copy()
    nodes = grid.nodes
    times, states, vels, weights = [nodes[0]], [x.copy()], [], []
    for k in range(len(nodes) - 1):
        t, t_next = nodes[k], nodes[k + 1]
        P = PointSet(F.values(t, x))
        v, cc = nearest_combination(np.asarray(target_velocity(t, x), dtype=float), P)
        if record_weights:
            weights.append(dict(zip(cc.indices, cc.weights.tolist())))
        x = x + (t_next - t) * v
        times.append(t_next)
        states.append(x.copy())
        vels.append(v)
        _guard(x, t_next, r_max, times, states, vels, [-1] * len(vels))
    return Trajectory(
        np.array(times), np.array(states), np.array(vels), None, weights if record_weights else None
    )


def ac_norm(x):
    """``|x(t0)| + sum_k h_k |v_k|``."""
    return float(np.linalg.norm(x.states[0]) + np.sum(x.steps * np.linalg.norm(x.velocities, axis=1)))


@dataclass(frozen=True)
class TubeReport:
    ok: bool
    sup_weighted_error: float
    first_violation: Optional[float]
    sup_error: float


def _radius_values(r, t):
    if callable(r):
        return np.array([float(r(s)) for s in t])
    return np.full(len(t), float(r))


def tube_check(x, z, r, tol=TAU_TUBE, slack=0.0):
    """Check ``|x(t) - z(t)| <= r(t)`` at the nodes of ``x`` inside ``z``'s span."""
    span = (x.times >= z.t0 - 1e-12) & (x.times <= z.t_end + 1e-12)
    t = x.times[span]
    err = np.linalg.norm(x.states[span] - z(t), axis=1)
    rad = _radius_values(r, t)
    bad = np.flatnonzero(err > rad + tol + slack)
    return TubeReport(
        ok=bad.size == 0,
        sup_weighted_error=float(np.max(err / rad)) if err.size else 0.0,
        first_violation=float(t[bad[0]]) if bad.size else None,
        sup_error=float(err.max()) if err.size else 0.0,
    )


def recommended_step(k_hat, h_max=0.1):
    """Step-size guidance ``min(h_max, 0.1 / k_hat)``."""
    return float(h_max if k_hat <= 0 else min(h_max, 0.1 / k_hat))
