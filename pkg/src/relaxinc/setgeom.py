"""Finite point-set geometry in R^n.

A compact velocity set is stored as a finite cloud of points; the same cloud
with ``convex=True`` stands for its closed convex hull.  Distances use the
Euclidean norm throughout.

Hull projection and Caratheodory decomposition share one solver: Wolfe's
minimum-norm-point active-set method applied to the shifted cloud ``P - v``.
It keeps an affinely independent support, so a point of the hull is always
returned as a combination of at most ``n + 1`` cloud points.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

TAU_HULL = 1e-9
QP_TOL = 1e-10
QP_MAX_ITER = 1000
# above this many hyperplane subsets the hull-to-cloud sup goes cell by cell
_ENUM_LIMIT = 20_000


class GeometryError(ValueError):
    """Invalid geometric input (dimension mismatch, non-finite coordinates)."""


class NotInHullError(GeometryError):
    """Raised when a point lies outside a hull by more than the tolerance."""

    def __init__(self, message, projection, distance):
        super().__init__(message)
        self.projection = projection
        self.distance = distance


def as_point(xi, dim=None):
    p = np.atleast_1d(np.asarray(xi, dtype=float))
    if p.ndim != 1:
        raise GeometryError(f"a point must be one-dimensional, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise GeometryError("point has non-finite coordinates")
    if dim is not None and p.shape[0] != dim:
        raise GeometryError(f"dimension mismatch: expected {dim}, got {p.shape[0]}")
    return p


@dataclass(frozen=True, eq=False)
class PointSet:
    """Nonempty finite set of points, optionally standing for its convex hull.

    Duplicates are removed on construction; first occurrences are kept in
    their original order and ``index`` records where each surviving point
    came from in the input array.
    """

    points: np.ndarray
    convex: bool = False
    index: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise GeometryError("PointSet needs a nonempty (m, n) array of points")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("PointSet has non-finite coordinates")
        src = np.arange(pts.shape[0]) if self.index is None else np.asarray(self.index)
        if pts.shape[0] > 1:
            _, first = np.unique(pts, axis=0, return_index=True)
            keep = np.sort(first)
            pts, src = pts[keep], src[keep]
        pts = pts + 0.0  # normalise -0.0
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "index", np.asarray(src, dtype=int))

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]

    def hull(self):
        return PointSet(self.points, convex=True, index=self.index)

    def cloud(self):
        return PointSet(self.points, convex=False, index=self.index)

    def same_as(self, other):
        """Exact equality as sets (order-insensitive), convex flag included."""
        if self.convex != other.convex or self.points.shape != other.points.shape:
            return False
        a = self.points[np.lexsort(self.points.T[::-1])]
        b = other.points[np.lexsort(other.points.T[::-1])]
        return bool(np.array_equal(a, b))


@dataclass(frozen=True)
class ConvexCombination:
    """Convex combination of cloud points; ``indices`` refer to the source cloud."""

    indices: tuple
    points: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.indices)

    def point(self):
        return self.weights @ self.points


def _check_dims(xi, K):
    return as_point(xi, K.dim)


def _affine_min(Q):
    # min |sum a_i Q_i| subject to sum a_i = 1
    if Q.shape[0] == 1:
        return np.ones(1)
    D = (Q[1:] - Q[0]).T
    b, *_ = np.linalg.lstsq(D, -Q[0], rcond=None)
    return np.concatenate([[1.0 - b.sum()], b])


def _min_norm_point(Q, tol=QP_TOL, max_iter=QP_MAX_ITER):
    """Wolfe's method: nearest point of conv(Q) to the origin.

    Returns ``(support, weights, x)`` with ``x = weights @ Q[support]``.
    Ties are broken by the lowest point index.
    """
    norms = np.einsum("ij,ij->i", Q, Q)
    scale = max(float(norms.max()), 1e-300)
    j = int(np.argmin(norms))
    S = [j]
    w = np.ones(1)
    x = Q[j].copy()
    for _ in range(max_iter):
        xx = float(x @ x)
        if xx <= (tol * tol) * scale * 1e-6:
            break
        dots = Q @ x
        j = int(np.argmin(dots))
        if xx - dots[j] <= tol * scale or j in S:
            break
        S.append(j)
        w = np.append(w, 0.0)
        for _minor in range(max_iter):
            a = _affine_min(Q[S])
            if np.all(a > 1e-15):
                w = a
                break
            neg = a <= 1e-15
            denom = w[neg] - a[neg]
            ratios = np.where(denom > 0, w[neg] / np.where(denom > 0, denom, 1.0), np.inf)
            theta = float(min(1.0, ratios.min()))
            w = w + theta * (a - w)
            drop = np.flatnonzero(neg)[int(np.argmin(ratios))]
            w[drop] = 0.0
            keep = w > 1e-15
            S = [s for s, k in zip(S, keep) if k]
            w = w[keep]
            w = w / w.sum()
        x = w @ Q[S]
    return S, w, x


def _hull_solve(v, K):
    P = K.points
    if P.shape[0] == 1:
        return [0], np.ones(1), P[0] - v
    if P.shape[1] == 1:
        lo, hi = int(np.argmin(P[:, 0])), int(np.argmax(P[:, 0]))
        a, b, s = P[lo, 0], P[hi, 0], v[0]
        if s <= a:
            return [lo], np.ones(1), P[lo] - v
        if s >= b:
            return [hi], np.ones(1), P[hi] - v
        lam = (s - a) / (b - a)
        pairs = sorted([(lo, 1.0 - lam), (hi, lam)])
        return [i for i, _ in pairs], np.array([q for _, q in pairs]), np.zeros(1)
    if P.shape[0] == 2:
        d = P[1] - P[0]
        dd = float(d @ d)
        if not dd > 0.0:
            # points closer than the square root of the smallest float
            j = int(np.linalg.norm(P[1] - v) < np.linalg.norm(P[0] - v))
            return [j], np.ones(1), P[j] - v
        lam = float(np.clip((v - P[0]) @ d / dd, 0.0, 1.0))
        if lam == 0.0:
            return [0], np.ones(1), P[0] - v
        if lam == 1.0:
            return [1], np.ones(1), P[1] - v
        w = np.array([1.0 - lam, lam])
        return [0, 1], w, w @ P - v
    return _min_norm_point(P - v)


def project_to_hull(v, K):
    """Nearest point of the convex hull of ``K`` to ``v``.

    Points already in the hull (to round-off) are returned unchanged.
    """
    v = _check_dims(v, K)
    _, _, x = _hull_solve(v, K)
    scale = max(1.0, float(np.abs(K.points).max()), float(np.abs(v).max()))
    if float(np.linalg.norm(x)) <= 1e-12 * scale:
        return v.copy()
    return v + x


def dist_point_set(xi, K):
    """Distance from ``xi`` to ``K`` (to its hull when ``K.convex``)."""
    xi = _check_dims(xi, K)
    if not K.convex:
        return float(np.min(np.linalg.norm(K.points - xi, axis=1)))
    return float(np.linalg.norm(project_to_hull(xi, K) - xi))


def in_ball(A, r, xi, tol=TAU_HULL):
    if r < 0:
        raise GeometryError(f"ball radius must be nonnegative, got {r}")
    return dist_point_set(xi, A) <= r + tol


def scale_set(c, K):
    return PointSet(float(c) * K.points, convex=K.convex, index=K.index)


def caratheodory_decompose(v, K, tol=TAU_HULL):
    """Write ``v`` as a convex combination of at most ``n + 1`` points of ``K``.

    Raises NotInHullError (carrying the projection) when ``v`` is farther than
    ``tol`` from the hull.
    """
    v = _check_dims(v, K)
    S, w, x = _hull_solve(v, K)
    dist = float(np.linalg.norm(x))
    if dist > tol:
        raise NotInHullError(
            f"point is {dist:.3e} outside the hull", projection=v + x, distance=dist
        )
    return _polished(v, K, S, w)


def nearest_combination(v, K):
    """Projection of ``v`` onto the hull of ``K`` together with its decomposition.

    One solver pass; equivalent to ``project_to_hull`` followed by
    ``caratheodory_decompose`` of the projection.
    """
    v = _check_dims(v, K)
    S, w, x = _hull_solve(v, K)
    scale = max(1.0, float(np.abs(K.points).max()), float(np.abs(v).max()))
    if float(np.linalg.norm(x)) <= 1e-12 * scale:
        return v.copy(), _polished(v, K, S, w)
    proj = v + x
    return proj, _polished(proj, K, S, w)


def _polished(v, K, S, w):
    order = np.argsort(S)
    S = [S[i] for i in order]
    w = np.asarray(w)[order]
    P = K.points[S]
    if len(S) > 1:
        # polish barycentric weights on the (affinely independent) support
        A = np.vstack([P.T, np.ones(len(S))])
        rhs = np.concatenate([v, [1.0]])
        w2, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        if np.all(w2 >= -1e-14):
            w2 = np.clip(w2, 0.0, None)
            w2 = w2 / w2.sum()
            if np.linalg.norm(w2 @ P - v) <= np.linalg.norm(w @ P - v):
                w = w2
    keep = w > 0.0
    S = [s for s, k in zip(S, keep) if k]
    w = w[keep]
    w = w / w.sum()
    return ConvexCombination(
        indices=tuple(int(K.index[s]) for s in S), points=K.points[S].copy(), weights=w
    )


def _directed(K, L):
    """sup over K of the distance to L, respecting both convex flags."""
    if not K.convex:
        if not L.convex:
            d = np.linalg.norm(K.points[:, None, :] - L.points[None, :, :], axis=2)
            return float(d.min(axis=1).max())
        return max(dist_point_set(p, L) for p in K.points)
    if L.convex:
        # distance to a convex set is convex, so the sup sits at a vertex
        return max(dist_point_set(p, L) for p in K.points)
    return _sup_hull_to_cloud(K.points, L.points)


def _sup_hull_to_cloud(P, L):
    """max over conv(P) of min_j |y - L_j|, computed exactly.

    Work in affine coordinates of conv(P).  Restricted to that flat, the
    nearest-site regions of L form a power diagram; on each cell the distance
    to its site is convex, so the maximum is attained at a vertex of some
    (cell intersected with hull).
    """
    c = P[0]
    D = P - c
    _, sv, vt = np.linalg.svd(D, full_matrices=False)
    scale = max(1.0, float(np.abs(P).max()))
    d = int(np.sum(sv > 1e-12 * scale))

    def g(ys, B):
        pts = c + ys @ B
        return float(np.linalg.norm(pts[:, None, :] - L[None, :, :], axis=2).min(axis=1).max())

    if d == 0:
        return float(np.linalg.norm(L - c, axis=1).min())
    B = vt[:d]
    Y = D @ B.T
    A = (L - c) @ B.T
    perp = np.einsum("ij,ij->i", L - c, L - c) - np.einsum("ij,ij->i", A, A)
    weight = np.einsum("ij,ij->i", A, A) + perp
    if d == 1:
        lo, hi = Y[:, 0].min(), Y[:, 0].max()
        cands = [lo, hi]
        a = A[:, 0]
        for i in range(len(a)):
            for j in range(i + 1, len(a)):
                if a[i] != a[j]:
                    y = (weight[i] - weight[j]) / (2.0 * (a[i] - a[j]))
                    if lo <= y <= hi:
                        cands.append(y)
        return g(np.array(cands)[:, None], B)
    hull = ConvexHull(Y)
    best = g(Y, B)
    # every cell vertex lies on d of the hull facets and pairwise bisectors
    pairs = np.array(list(itertools.combinations(range(len(A)), 2)), dtype=int).reshape(-1, 2)
    N = np.vstack([hull.equations[:, :-1], 2.0 * (A[pairs[:, 0]] - A[pairs[:, 1]])])
    rhs = np.concatenate([-hull.equations[:, -1], weight[pairs[:, 0]] - weight[pairs[:, 1]]])
    if math.comb(len(N), d) <= _ENUM_LIMIT:
        idx = np.array(list(itertools.combinations(range(len(N)), d)), dtype=int)
        M = N[idx]
        det = np.abs(np.linalg.det(M))
        ok = det > 1e-12 * np.prod(np.linalg.norm(M, axis=2), axis=1)
        if ok.any():
            ys = np.linalg.solve(M[ok], rhs[idx[ok]][..., None])[..., 0]
            inside = np.all(ys @ hull.equations[:, :-1].T + hull.equations[:, -1] <= 1e-10 * scale, axis=1)
            if inside.any():
                best = max(best, g(ys[inside], B))
        return best
    for j in range(len(A)):
        others = [i for i in range(len(A)) if i != j]
        hs = [hull.equations]
        if others:
            Ai = A[others]
            normal = 2.0 * (Ai - A[j])
            offset = -(weight[others] - weight[j])
            hs.append(np.column_stack([normal, offset]))
        H = np.vstack(hs)
        norms = np.linalg.norm(H[:, :-1], axis=1)
        if np.any(norms == 0):
            H = H[norms > 0]
            norms = norms[norms > 0]
        # Chebyshev centre of the cell
        res = linprog(
            np.r_[np.zeros(d), -1.0],
            A_ub=np.column_stack([H[:, :-1], norms]),
            b_ub=-H[:, -1],
            bounds=[(None, None)] * d + [(0, None)],
            method="highs",
        )
        if not res.success or res.x[-1] <= 1e-12 * scale:
            continue
        try:
            hsi = HalfspaceIntersection(H, res.x[:-1])
        except QhullError:
            continue
        verts = hsi.intersections
        verts = verts[np.all(np.isfinite(verts), axis=1)]
        if len(verts):
            best = max(best, g(verts, B))
    return best


def hausdorff(K, L):
    """Hausdorff distance; each side is read as a cloud or a hull per its flag."""
    if K.dim != L.dim:
        raise GeometryError(f"dimension mismatch: {K.dim} vs {L.dim}")
    return max(_directed(K, L), _directed(L, K))
