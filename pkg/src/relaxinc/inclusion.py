"""Set-valued right-hand sides and sampled estimates of their regularity."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from .expr import ParseError, parse_system_text
from .setgeom import PointSet, as_point, hausdorff


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class SetMap:
    """``(t, x) -> F(t, x)`` with values given as finite clouds.

    ``values(t, x)`` returns an ``(m, dim)`` array with a fixed row order (one
    row per control sample); ``eval`` wraps it as a PointSet.  ``convex``
    marks the relaxed map ``clco F``.
    """

    dim: int
    values: Callable[[float, np.ndarray], np.ndarray]
    autonomous: bool = False
    convex: bool = False
    description: str = ""
    source: Optional[str] = None
    system: object = None
    reversed_from: object = None
    reverse_end: Optional[float] = None

    def eval(self, t, x):
        x = as_point(x, self.dim)
        return PointSet(self.values(t, x), convex=self.convex)

    __call__ = eval

    def atom(self, t, x, index):
        return self.values(t, x)[index]


def parse_system(text, description=""):
    """Build a SetMap from the text format documented in :mod:`relaxinc.expr`."""
    sysm = parse_system_text(text)
    uses_t = any("t" in e.names for eq in sysm.equations for e in eq.exprs)
    return SetMap(
        dim=sysm.dim,
        values=sysm.values,
        autonomous=not uses_t,
        description=description or " ; ".join(line.strip() for line in text.strip().splitlines()),
        source=text,
        system=sysm,
    )


def relax(F):
    return F if F.convex else replace(F, convex=True, description=f"clco[{F.description}]")


def reverse_time(F, T_end):
    """The backward map ``(t, x) -> -F(T_end - t, x)`` on ``[0, T_end]``.

    Reversing a reversed map with the same end time returns the original map.
    """
    if not T_end > 0:
        raise ValueError(f"T_end must be positive, got {T_end}")
    if F.reversed_from is not None and F.reverse_end == T_end:
        return F.reversed_from
    slack = 1e-12 * max(1.0, T_end)

    def values(t, x):
        if t < -slack or t > T_end + slack:
            raise DomainError(f"time {t} outside [0, {T_end}]")
        return -F.values(T_end - t, x)

    return SetMap(
        dim=F.dim,
        values=values,
        autonomous=F.autonomous,
        convex=F.convex,
        description=f"reverse[{F.description}; T={T_end}]",
        reversed_from=F,
        reverse_end=T_end,
    )


@dataclass(frozen=True)
class LipschitzEstimate:
    radius: float
    k_hat: float
    sample_count: int
    max_witness: tuple
    seed: int
    grid_density: int


@dataclass(frozen=True)
class BoundEstimate:
    radius: float
    alpha_hat: float
    sample_count: int
    seed: int
    grid_density: int


def unit_directions(dim, extra, seed=0):
    """Axis directions ``±e_i`` followed by ``extra`` scrambled-Sobol directions.

    The first ``k`` extra directions do not depend on ``extra``, so larger
    requests extend smaller ones.
    """
    dirs = [s * e for e in np.eye(dim) for s in (1.0, -1.0)]
    if extra > 0:
        if dim == 1:
            pass
        else:
            m = int(np.ceil(np.log2(max(extra, 2))))
            raw = qmc.Sobol(d=dim, scramble=True, seed=seed).random_base2(m + 1)
            count = 0
            for row in raw:
                v = 2.0 * row - 1.0
                nv = np.linalg.norm(v)
                if nv < 1e-6:
                    continue
                dirs.append(v / nv)
                count += 1
                if count == extra:
                    break
    return np.array(dirs)


def ball_samples(dim, R, density, extra_dirs=16, seed=0):
    """Shells of radii ``R*j/density`` times fixed unit directions, plus 0.

    Samples for ``(R, d)`` are contained in those for ``(c*R, c*d)`` for any
    positive integer ``c``.
    """
    dirs = unit_directions(dim, extra_dirs, seed)
    radii = R * np.arange(1, density + 1) / density
    pts = [np.zeros(dim)] + [r * d for r in radii for d in dirs]
    return np.array(pts)


def _time_samples(F, t_max, density):
    if F.autonomous:
        return np.zeros(1)
    return np.linspace(0.0, t_max, density + 1)


def estimate_lipschitz(F, R, grid_density=8, seed=0, t_max=1.0, extra_dirs=16, step=1e-6):
    """Sampled lower bound for the Hausdorff-Lipschitz constant on ``B(0, R)``.

    Ratios are taken over all pairs of shell samples and over short pairs
    ``(xi, xi(1 - step))`` / axis-shifted pairs that resolve local slopes.
    """
    if not R > 0:
        raise ValueError("R must be positive")
    if grid_density < 2:
        raise ValueError("grid_density must be at least 2")
    pool = ball_samples(F.dim, R, grid_density, extra_dirs, seed)
    near = []
    for p in pool:
        n = np.linalg.norm(p)
        if n > 0:
            near.append((p, p * (1.0 - step)))
        for e in np.eye(F.dim):
            q = p + step * R * e
            if np.linalg.norm(q) > R:
                q = p - step * R * e
            near.append((p, q))
    best, witness, count = 0.0, (None, None), 0
    for t in _time_samples(F, t_max, grid_density):
        sets = [F.eval(t, p) for p in pool]
        clouds = not F.convex and len({len(s) for s in sets}) == 1
        if clouds:
            A = np.stack([s.points for s in sets])  # (N, m, n)
            N = len(sets)
            for a in range(N):
                D = np.linalg.norm(A[a][None, :, None, :] - A[:, None, :, :], axis=3)  # (N, m, m)
                dh = np.maximum(D.min(axis=2).max(axis=1), D.min(axis=1).max(axis=1))
                dist = np.linalg.norm(pool - pool[a], axis=1)
                ok = dist > 0
                ratios = np.where(ok, dh / np.where(ok, dist, 1.0), 0.0)
                b = int(np.argmax(ratios))
                count += int(ok.sum())
                if ratios[b] > best:
                    best, witness = float(ratios[b]), (pool[a].copy(), pool[b].copy())
        else:
            for a in range(len(sets)):
                for b in range(a + 1, len(sets)):
                    dist = np.linalg.norm(pool[a] - pool[b])
                    r = hausdorff(sets[a], sets[b]) / dist
                    count += 1
                    if r > best:
                        best, witness = float(r), (pool[a].copy(), pool[b].copy())
        for p, q in near:
            dist = np.linalg.norm(p - q)
            if dist == 0:
                continue
            r = hausdorff(F.eval(t, p), F.eval(t, q)) / dist
            count += 1
            if r > best:
                best, witness = float(r), (p.copy(), q.copy())
    return LipschitzEstimate(
        radius=float(R), k_hat=best, sample_count=count, max_witness=witness, seed=seed, grid_density=grid_density
    )


def estimate_bound(F, R, grid_density=8, seed=0, t_max=1.0, extra_dirs=16):
    """Sampled max of ``|v|`` over ``v`` in ``F(t, xi)``, ``xi`` in ``B(0, R)``."""
    if not R > 0:
        raise ValueError("R must be positive")
    pool = ball_samples(F.dim, R, grid_density, extra_dirs, seed)
    best, count = 0.0, 0
    for t in _time_samples(F, t_max, grid_density):
        for p in pool:
            v = F.values(t, p)
            best = max(best, float(np.linalg.norm(v, axis=1).max()))
            count += 1
    return BoundEstimate(radius=float(R), alpha_hat=best, sample_count=count, seed=seed, grid_density=grid_density)


__all__ = [
    "SetMap",
    "ParseError",
    "DomainError",
    "parse_system",
    "relax",
    "reverse_time",
    "estimate_lipschitz",
    "estimate_bound",
    "LipschitzEstimate",
    "BoundEstimate",
]
