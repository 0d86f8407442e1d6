"""Lines, prisms, direction nets, covering numbers and the prism rescaling map."""
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .config import TOL
from .errors import InvalidArgument

E1 = np.array([1.0, 0.0, 0.0, 0.0])


def canonicalize_direction(v):
    """Return the representative of +-v/|v| whose first nonzero entry among
    v1, v2, v3 is positive (v4 = 1 when those vanish)."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0.0:
        raise InvalidArgument("cannot canonicalize the zero vector")
    u = v / n
    for k in range(3):
        if u[k] != 0.0:
            return u if u[k] > 0 else -u
    return u if u[3] > 0 else -u


def canonicalize_many(V):
    V = np.asarray(V, dtype=np.float64).reshape(-1, 4)
    n = np.linalg.norm(V, axis=1)
    if np.any(n == 0):
        raise InvalidArgument("cannot canonicalize the zero vector")
    U = V / n[:, None]
    sign = np.ones(len(U))
    decided = np.zeros(len(U), dtype=bool)
    for k in range(4):
        nz = (U[:, k] != 0) & ~decided
        sign[nz] = np.sign(U[nz, k])
        decided |= nz
    return U * sign[:, None]


def line_angle(u, v):
    """Angle between the lines spanned by unit vectors (in [0, pi/2])."""
    c = np.clip(np.abs(np.sum(np.asarray(u) * np.asarray(v), axis=-1)), 0.0, 1.0)
    return np.arccos(c)


@dataclass(frozen=True)
class Line:
    """Affine line; ``anchor`` is the foot of the perpendicular from 0 unless
    built with ``keep_anchor``. Points are ``anchor + t dir``."""
    anchor: np.ndarray
    dir: np.ndarray

    @classmethod
    def through(cls, point, direction, keep_anchor=False):
        d = canonicalize_direction(direction)
        p = np.asarray(point, dtype=np.float64)
        a = p if keep_anchor else p - (p @ d) * d
        return cls(a, d)

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        return self.anchor + t[..., None] * self.dir

    def to_json(self):
        return {"anchor": [float(x) for x in self.anchor], "dir": [float(x) for x in self.dir]}

    @classmethod
    def from_json(cls, obj):
        return cls(np.asarray(obj["anchor"], float), np.asarray(obj["dir"], float))

    def angle_to_e1(self):
        return float(line_angle(self.dir, E1))


def line_feet(anchors, dirs):
    """Feet of perpendiculars from the origin, vectorized."""
    return anchors - np.sum(anchors * dirs, axis=1)[:, None] * dirs


def line_distance(l1, l2):
    """Symmetric line metric: separation of the two feet measured after
    removing the common-direction component, plus the angle between them."""
    ang = float(line_angle(l1.dir, l2.dir))
    m = l1.dir + (l2.dir if l1.dir @ l2.dir >= 0 else -l2.dir)
    m /= np.linalg.norm(m)
    f1 = l1.anchor - (l1.anchor @ m) * m
    f2 = l2.anchor - (l2.anchor @ m) * m
    return float(np.linalg.norm(f1 - f2)) + ang


@dataclass
class Prism:
    """Rectangular box: ``axes`` rows are orthonormal, ``half_lengths``
    sorted descending."""
    center: np.ndarray
    axes: np.ndarray
    half_lengths: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.axes = np.asarray(self.axes, dtype=np.float64).reshape(4, 4)
        self.half_lengths = np.asarray(self.half_lengths, dtype=np.float64)
        if np.any(self.half_lengths <= 0):
            raise InvalidArgument("half lengths must be positive")
        if np.any(np.diff(self.half_lengths) > 1e-12):
            raise InvalidArgument("half lengths must be sorted descending")
        if np.abs(self.axes @ self.axes.T - np.eye(4)).max() > 1e-10:
            raise InvalidArgument("prism axes must be orthonormal")

    def to_json(self):
        return {"center": self.center.tolist(), "axes": self.axes.tolist(),
                "half_lengths": self.half_lengths.tolist()}

    def contains(self, X, tol=1e-12):
        Y = (np.asarray(X).reshape(-1, 4) - self.center) @ self.axes.T
        return np.all(np.abs(Y) <= self.half_lengths + tol, axis=1)


def chord_lengths(anchors, dirs, prism):
    """Length of each line's intersection with ``prism`` (vectorized)."""
    c = (anchors - prism.center) @ prism.axes.T
    d = dirs @ prism.axes.T
    h = prism.half_lengths
    lo = np.full(len(anchors), -np.inf)
    hi = np.full(len(anchors), np.inf)
    for k in range(4):
        dk, ck = d[:, k], c[:, k]
        par = np.abs(dk) < 1e-15
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-h[k] - ck) / dk
            t2 = (h[k] - ck) / dk
        a = np.where(par, np.where(np.abs(ck) <= h[k], -np.inf, np.inf), np.minimum(t1, t2))
        b = np.where(par, np.where(np.abs(ck) <= h[k], np.inf, -np.inf), np.maximum(t1, t2))
        lo = np.maximum(lo, a)
        hi = np.minimum(hi, b)
    return np.maximum(hi - lo, 0.0)


def line_covered_by_prism(line, prism, tol_cover=None):
    tol_cover = TOL.tol_cover if tol_cover is None else tol_cover
    L = chord_lengths(line.anchor[None], line.dir[None], prism)[0]
    return bool(L >= 2.0 - tol_cover)


# -- covering numbers ------------------------------------------------------------

def covering_number(points, delta, metric="euclidean"):
    """Size of the greedy delta-net of ``points`` (kept iff >= delta from every
    kept point). ``metric``: 'euclidean', 'sphere' (geodesic) or 'projective'
    (geodesic modulo +-)."""
    if delta <= 0:
        raise InvalidArgument("delta must be positive")
    return int(np.count_nonzero(greedy_net(points, delta, metric)))


def greedy_net(points, delta, metric="euclidean"):
    P = np.asarray(points, dtype=np.float64)
    if P.size == 0:
        return np.zeros(0, dtype=bool)
    if P.ndim == 1:
        P = P[:, None]
    if metric == "euclidean":
        return _kernels.greedy_thin(P, delta)
    # geodesic angle delta <-> chord 2 sin(delta/2)
    r = 2.0 * np.sin(min(delta, np.pi) / 2.0)
    return _kernels.greedy_thin(P, r, projective=(metric == "projective"))


# -- direction nets ------------------------------------------------------------------

def _cap_lattice(cap, h):
    """Lattice points of the tangent ball of radius sin(cap) at e1, lifted to S^3."""
    R = np.sin(cap)
    g = np.arange(-R, R + h / 2, h)
    Y = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
    Y = Y[np.sum(Y * Y, axis=1) <= R * R]
    # stratify: order by radius so the net grows outward from e1
    Y = Y[np.lexsort((Y[:, 2], Y[:, 1], Y[:, 0], np.round(np.sum(Y * Y, axis=1), 12)))]
    return np.column_stack([np.sqrt(1 - np.sum(Y * Y, axis=1)), Y])


def _sphere_lattice(h):
    """Points of the 4-cube surface grid projected radially to S^3."""
    g = np.arange(-1.0, 1.0 + h / 2, h)
    F = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
    pts = []
    for k in range(4):
        Q = np.insert(F, k, 1.0, axis=1)
        pts.append(Q)
    V = np.concatenate(pts)
    V /= np.linalg.norm(V, axis=1)[:, None]
    return canonicalize_many(V)


@dataclass
class DirectionNet:
    """Greedy angular delta-net of canonical directions.

    ``cap`` is the angular radius around e1 (None means all directions)."""
    delta: float
    points: np.ndarray
    cap: float | None = None
    _tree: cKDTree = field(default=None, repr=False)

    @classmethod
    def build(cls, delta, cap=None):
        if delta <= 0:
            raise InvalidArgument("delta must be positive")
        cap = TOL.cap_angle if cap == "default" else cap
        h = delta / 8.0
        if cap is not None:
            V = _cap_lattice(cap, h)
            keep = greedy_net(V, 0.875 * delta, "sphere")
        else:
            # coarser seed lattice off the cap: separation is what matters there
            V = _sphere_lattice(delta / 3.0)
            keep = greedy_net(V, 0.875 * delta, "projective")
        return cls(float(delta), canonicalize_many(V[keep]), cap)

    def __len__(self):
        return len(self.points)

    @property
    def tree(self):
        if self._tree is None:
            self._tree = cKDTree(self.points)
        return self._tree

    def nearest(self, v):
        """Index of the nearest net direction (modulo sign)."""
        V = np.asarray(v, dtype=np.float64).reshape(-1, 4)
        d1, i1 = self.tree.query(V)
        d2, i2 = self.tree.query(-V)
        out = np.where(d1 <= d2, i1, i2)
        return int(out[0]) if np.ndim(v) == 1 else out


# -- prism covers --------------------------------------------------------------------

def _complete_basis(A):
    """Orthonormal 4x4 whose leading rows span the rows of A (assumed orthonormal)."""
    k = A.shape[0]
    _, _, vt = np.linalg.svd(A, full_matrices=True)
    Q = np.vstack([A, vt[k:]])
    q, _ = np.linalg.qr(Q.T)
    q = q.T
    for i in range(k):  # keep the given orientation of the long axes
        if q[i] @ A[i] < 0:
            q[i] = -q[i]
    return q


def _prism_from(center, long_axes, k, t):
    axes = _complete_basis(np.asarray(long_axes, dtype=np.float64)[:k])
    half = np.array([1.0] * k + [t] * (4 - k))
    return Prism(center, axes, half)


def _long_axes(seed_dir, feet, dirs, k):
    """Seed direction plus the top principal directions of the neighbour
    point cloud orthogonal to it."""
    if k == 1:
        return seed_dir[None]
    pts = np.concatenate([feet, feet + 0.5 * dirs, feet - 0.5 * dirs])
    pts = pts - pts.mean(axis=0)
    pts = pts - np.outer(pts @ seed_dir, seed_dir)
    if len(pts) < 2 or np.allclose(pts, 0):
        basis = _complete_basis(seed_dir[None])
        return basis[:k]
    _, _, vt = np.linalg.svd(pts, full_matrices=False)
    axes = [seed_dir]
    for v in vt:
        v = v - sum((v @ a) * a for a in axes)
        n = np.linalg.norm(v)
        if n > 1e-8:
            axes.append(v / n)
        if len(axes) == k:
            break
    if len(axes) < k:
        basis = _complete_basis(np.array(axes))
        axes = list(basis[:k])
    return np.array(axes)


def greedy_prism_cover(lines, k, t, tol_cover=None, max_candidates=64):
    """Cover every line by prisms with ``k`` long axes (half-length 1) and
    4-k short axes of half-length ``t``.

    Candidate prisms are seeded at uncovered lines and refined toward the
    centroid of what they cover; the candidate covering most remaining lines
    is taken each round. Returns (prisms, assignment) where assignment[i] is
    the index of a prism covering line i.
    """
    if k not in (1, 2, 3):
        raise InvalidArgument("k must be 1, 2 or 3")
    if not (0 < t < 1):
        raise InvalidArgument("t must lie in (0, 1)")
    tol_cover = TOL.tol_cover if tol_cover is None else tol_cover
    if len(lines) == 0:
        return [], np.zeros(0, dtype=np.int64)
    A = np.array([l.anchor for l in lines])
    D = np.array([l.dir for l in lines])
    F = line_feet(A, D)
    n = len(lines)
    assign = -np.ones(n, dtype=np.int64)
    prisms = []

    def covered_by(pr):
        return chord_lengths(A, D, pr) >= 2.0 - tol_cover

    rng = np.random.default_rng(12345)
    while True:
        open_idx = np.nonzero(assign < 0)[0]
        if open_idx.size == 0:
            break
        seeds = open_idx if open_idx.size <= max_candidates else np.sort(
            rng.choice(open_idx, max_candidates, replace=False))
        best = None
        for s in seeds:
            # neighbours: lines roughly aligned and nearby
            near = open_idx[(np.abs(D[open_idx] @ D[s]) >= np.cos(max(2 * t, 0.05)))]
            near = near[np.linalg.norm(F[near] - F[s], axis=1) <= 2.0]
            cand = _prism_from(F[s], _long_axes(D[s], F[near], D[near], k), k, t)
            cov = covered_by(cand) & (assign < 0)
            # recenter on what it covers, keeping the seed covered
            for _ in range(2):
                if cov.sum() < 2:
                    break
                ctr = F[cov].mean(axis=0)
                md = D[cov].mean(axis=0)
                md /= np.linalg.norm(md)
                trial = _prism_from(ctr, _long_axes(md, F[cov], D[cov], k), k, t)
                tc = covered_by(trial) & (assign < 0)
                if tc[s] and tc.sum() > cov.sum():
                    cand, cov = trial, tc
                else:
                    break
            score = int(cov.sum())
            if best is None or score > best[0]:
                best = (score, cand, cov)
        _, pr, cov = best
        assign[cov] = len(prisms)
        prisms.append(pr)
    return prisms, assign


# -- anisotropic rescaling -----------------------------------------------------------

@dataclass
class AffineMap:
    """x -> M (x - c)."""
    M: np.ndarray
    c: np.ndarray

    def __call__(self, X):
        return (np.asarray(X, dtype=np.float64) - self.c) @ self.M.T

    def inverse(self, Y):
        return np.asarray(Y, dtype=np.float64) @ np.linalg.inv(self.M).T + self.c

    def linear(self, V):
        return np.asarray(V, dtype=np.float64) @ self.M.T


def prism_rescale_map(prism):
    """Rotate the prism axes onto the standard frame, then dilate short
    coordinates by 1/t."""
    h = prism.half_lengths
    if np.any(h <= 0):
        raise InvalidArgument("degenerate half length")
    longs = h >= 1 - 1e-9
    d = int(longs.sum())
    if d == 0 or not np.all(longs[:d]):
        raise InvalidArgument("prism must have leading long axes")
    short = h[d:]
    if d < 4 and np.ptp(short) > 1e-12:
        raise InvalidArgument("short half lengths must agree")
    t = float(short[0]) if d < 4 else 1.0
    scale = np.array([1.0] * d + [1.0 / t] * (4 - d))
    return AffineMap(np.diag(scale) @ prism.axes, prism.center.copy())
