"""Independent reference computations used to cross-check the library.

Nothing here imports the code under test except plain data containers.
"""

import itertools

import numpy as np
from scipy.optimize import nnls


def cloud_hausdorff(A, B):
    """Exhaustive directed-distance enumeration for finite clouds."""
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    D = np.array([[np.sqrt(np.sum((a - b) ** 2)) for b in B] for a in A])
    return max(D.min(axis=1).max(), D.min(axis=0).max())


def cloud_distance(x, A):
    return min(np.sqrt(np.sum((np.asarray(x) - a) ** 2)) for a in np.atleast_2d(A))


def hull_projection(v, P, big=1e4):
    """Nearest hull point via NNLS with a heavily weighted sum-to-one row."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    A = np.vstack([P.T, big * np.ones(len(P))])
    b = np.concatenate([np.asarray(v, dtype=float), [big]])
    w, _ = nnls(A, b, maxiter=10_000)
    w = w / w.sum()
    return w @ P


def simplex_lattice(m, level):
    """All weight vectors with entries in {0, 1/level, ...} summing to 1."""
    out = []
    for c in itertools.product(range(level + 1), repeat=m - 1):
        if sum(c) <= level:
            out.append(list(c) + [level - sum(c)])
    return np.array(out, dtype=float) / level


def hull_to_cloud_sampled(P, L, level=24):
    """Lower bound for sup over conv(P) of the distance to the cloud L, plus the mesh width."""
    P = np.atleast_2d(P)
    W = simplex_lattice(len(P), level)
    Y = W @ P
    d = np.sqrt(((Y[:, None, :] - np.atleast_2d(L)[None]) ** 2).sum(axis=2)).min(axis=1)
    diam = max(np.linalg.norm(a - b) for a in P for b in P)
    return d.max(), diam / level


def euler_scalar(f, x0, h, n):
    x = x0
    xs = [x]
    for k in range(n):
        x = x + h * f(k * h, x)
        xs.append(x)
    return np.array(xs)


def triangle_wave(t, period):
    """Symmetric triangle wave starting at 0 going up, height period/2."""
    s = np.mod(t, period)
    return np.where(s <= period / 2, s, period - s)
