"""Tube families on a voxel grid: shadings, union volumes, the L^{p'} norm
of sum chi_T, the two-ends / transversality / linear Wolff checkers and
hairbrushes."""
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .curvature import QuadraticCone
from .errors import EmptyShading, InvalidArgument
from .geometry import Line, canonicalize_many, greedy_net
from .poly import gradient, hessian

P_KAKEYA = 3 + 1 / 28


@dataclass(frozen=True)
class VoxelGrid:
    """Cubic voxels of side h; voxel i has centre origin + (i + 1/2) h in
    every coordinate; key = ((i1 n + i2) n + i3) n + i4."""
    origin: float
    h: float
    n: int

    @classmethod
    def for_delta(cls, delta, h=None, radius=1.0):
        h = delta / 2 if h is None else h
        origin = -radius - delta
        n = int(math.ceil((2 * radius + 2 * delta) / h)) + 1
        return cls(origin, h, n)

    @property
    def voxel_volume(self):
        return self.h ** 4

    def centers(self, keys):
        keys = np.asarray(keys, dtype=np.int64)
        idx = np.empty((len(keys), 4), dtype=np.int64)
        k = keys.copy()
        for j in range(3, -1, -1):
            idx[:, j] = k % self.n
            k //= self.n
        return self.origin + (idx + 0.5) * self.h

    def to_json(self):
        return {"origin": self.origin, "spacing": self.h, "extent": self.n}


@dataclass
class Tube:
    core: Line            # anchor = segment midpoint, |t| <= 1/2
    delta: float
    shading: np.ndarray   # sorted voxel keys
    full: np.ndarray

    @property
    def lam(self):
        return len(self.shading) / max(1, len(self.full))


class TubeSet:
    """Tubes stored as arrays: midpoints, unit directions, and CSR voxel
    lists for the full tubes and their shadings."""

    def __init__(self, mids, dirs, delta, grid=None, shading=None):
        self.mids = np.ascontiguousarray(mids, dtype=np.float64).reshape(-1, 4)
        d = np.asarray(dirs, dtype=np.float64).reshape(-1, 4)
        self.dirs = np.ascontiguousarray(d / np.linalg.norm(d, axis=1)[:, None]) if len(d) else d
        self.delta = float(delta)
        self.grid = grid or VoxelGrid.for_delta(delta)
        g = self.grid
        self.keys, self.ptr = _kernels.tube_voxels(self.mids, self.dirs, delta, g.h, g.origin, g.n)
        self.skeys, self.sptr = self.keys, self.ptr
        if shading is not None:
            self.set_shading(shading)

    def __len__(self):
        return len(self.mids)

    def full_voxels(self, i):
        return self.keys[self.ptr[i]:self.ptr[i + 1]]

    def shading(self, i):
        return self.skeys[self.sptr[i]:self.sptr[i + 1]]

    def tube(self, i):
        return Tube(Line(self.mids[i].copy(), self.dirs[i].copy()), self.delta,
                    self.shading(i).copy(), self.full_voxels(i).copy())

    def pairs(self, use_shading=True):
        """(tube id, voxel key) for every shaded (or full) voxel."""
        keys, ptr = (self.skeys, self.sptr) if use_shading else (self.keys, self.ptr)
        ids = np.repeat(np.arange(len(self)), np.diff(ptr))
        return ids, keys

    def set_shading(self, rule):
        """``rule`` is 'full', a boolean mask over the full voxel pairs, or a
        callable (tube id array, voxel centre array) -> mask."""
        if isinstance(rule, str):
            if rule != "full":
                raise InvalidArgument(f"unknown shading rule {rule!r}")
            self.skeys, self.sptr = self.keys, self.ptr
            return self
        ids = np.repeat(np.arange(len(self)), np.diff(self.ptr))
        if callable(rule):
            mask = np.asarray(rule(ids, self.grid.centers(self.keys)), dtype=bool)
        else:
            mask = np.asarray(rule, dtype=bool)
        if mask.shape != self.keys.shape:
            raise InvalidArgument("shading mask must match the full voxel list")
        self.skeys = self.keys[mask]
        self.sptr = np.concatenate([[0], np.cumsum(np.bincount(ids[mask], minlength=len(self)))])
        return self

    def lam(self):
        return np.diff(self.sptr) / np.maximum(1, np.diff(self.ptr))

    def essentially_distinct(self):
        """No two cores within (delta, delta) in (direction, midpoint)."""
        if len(self) < 2:
            return True
        D = canonicalize_many(self.dirs)
        X = np.hstack([D, self.mids])
        pairs = cKDTree(X).query_pairs(self.delta * math.sqrt(2) * 0.999)
        for i, j in pairs:
            ang = math.acos(min(1.0, abs(self.dirs[i] @ self.dirs[j])))
            if ang < self.delta and np.linalg.norm(self.mids[i] - self.mids[j]) < self.delta:
                return False
        return True

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        out = TubeSet.__new__(TubeSet)
        out.mids, out.dirs, out.delta, out.grid = self.mids[idx], self.dirs[idx], self.delta, self.grid
        out.keys, out.ptr = _csr_take(self.keys, self.ptr, idx)
        out.skeys, out.sptr = _csr_take(self.skeys, self.sptr, idx)
        return out


def _csr_take(keys, ptr, idx):
    parts = [keys[ptr[i]:ptr[i + 1]] for i in idx]
    lens = np.array([len(p) for p in parts], dtype=np.int64)
    return (np.concatenate(parts) if parts else np.zeros(0, np.int64),
            np.concatenate([[0], np.cumsum(lens)]).astype(np.int64))


# -- families --------------------------------------------------------------------------------

def build_direction_separated(net, rule, delta, seed=0, offset_radius=None, stem=None, grid=None):
    """One tube per net direction.

    rule 'bush': every core is centred at the origin. 'translated': cores
    centred at uniform random points of B(0, offset_radius) (default 0.4).
    'hairbrush': tube 0 is the stem (anchor, direction) and every other core
    is centred at a random point of the stem segment."""
    V = net.points if hasattr(net, "points") else np.asarray(net, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if rule == "bush":
        mids = np.zeros((len(V), 4))
        dirs = V
    elif rule == "translated":
        r0 = 0.4 if offset_radius is None else offset_radius
        X = rng.normal(size=(len(V), 4))
        X /= np.linalg.norm(X, axis=1)[:, None]
        mids = X * (r0 * rng.uniform(size=len(V)) ** 0.25)[:, None]
        dirs = V
    elif rule == "hairbrush":
        a, v = (np.zeros(4), np.eye(4)[0]) if stem is None else stem
        a, v = np.asarray(a, float), np.asarray(v, float) / np.linalg.norm(v)
        keep = np.arccos(np.clip(np.abs(V @ v), 0, 1)) >= delta / 2
        ts = rng.uniform(-0.4, 0.4, size=int(keep.sum()))
        mids = np.vstack([a, a + ts[:, None] * v])
        dirs = np.vstack([v, V[keep]])
    else:
        raise InvalidArgument(f"unknown anchor rule {rule!r}")
    return TubeSet(mids, dirs, delta, grid=grid)


def hairbrush_family(P, stem_point, stem_dir, delta, n_stem=None, n_dir=None, mode="cone", plane=None):
    """Tubes through points of a stem line: cores along directions of the
    quadratic cone of Z(P) at each stem point ('cone'), or along directions of
    one 2-plane containing the stem ('planar'). Tube 0 is the stem."""
    a = np.asarray(stem_point, dtype=np.float64)
    v0 = np.asarray(stem_dir, dtype=np.float64)
    v0 = v0 / np.linalg.norm(v0)
    n_stem = n_stem or int(math.ceil(0.8 / delta))
    n_dir = n_dir or int(math.ceil(1.0 / delta))
    ss = np.linspace(-0.4, 0.4, n_stem)
    mids, dirs = [a.copy()], [v0.copy()]
    if mode == "planar":
        w = np.asarray(plane if plane is not None else np.eye(4)[1], dtype=np.float64)
        w = w - (w @ v0) * v0
        w /= np.linalg.norm(w)
    for k, s in enumerate(ss):
        z = a + s * v0
        if mode == "cone":
            cone = QuadraticCone(z, gradient(P, z), hessian(P, z))
            S = cone.sample(4 * n_dir, canonical=True)
            if len(S) == 0:
                continue
            S = S[greedy_net(S, math.pi / n_dir, "projective")]
        elif mode == "planar":
            # stagger angles between stem points so hairs stay distinct
            th = (np.arange(n_dir) + (k % 2) * 0.5) * math.pi / n_dir
            S = np.cos(th)[:, None] * v0 + np.sin(th)[:, None] * w
        else:
            raise InvalidArgument(f"unknown hairbrush mode {mode!r}")
        S = S[np.arccos(np.clip(np.abs(S @ v0), 0, 1)) >= delta]
        mids.extend([z] * len(S))
        dirs.extend(S)
    return TubeSet(np.array(mids), np.array(dirs), delta)


# -- volumes and norms ----------------------------------------------------------------------------

def union_volume(ts, use_shading=True):
    _, keys = ts.pairs(use_shading)
    return len(np.unique(keys)) * ts.grid.voxel_volume


def multiplicity(ts, use_shading=False):
    """(voxel keys, number of tubes through each)."""
    _, keys = ts.pairs(use_shading)
    return np.unique(keys, return_counts=True)


def kakeya_norm(ts, p=P_KAKEYA, use_shading=False):
    """|| sum_T chi_T ||_{p'} by voxel quadrature, p' = p / (p - 1)
    (p = inf gives p' = 1)."""
    if p <= 1:
        raise InvalidArgument("p must exceed 1")
    pp = 1.0 if math.isinf(p) else p / (p - 1)
    _, cnt = multiplicity(ts, use_shading)
    return float((np.sum(cnt.astype(np.float64) ** pp) * ts.grid.voxel_volume) ** (1 / pp))


def tube_volume_constant():
    """|T| / delta^3 for the delta-neighbourhood of a unit segment, leading
    term (a 3-ball cross-section times length 1)."""
    return 4 * math.pi / 3


# -- conditions --------------------------------------------------------------------------------------

def two_ends_check(tube, rho, alpha, grid, radii=None):
    """|Y(T) cap B(x, r)| <= alpha r^rho |Y(T)| for x on the core at spacing
    delta and r in ``radii`` (default 2^-1 .. 2^-6)."""
    Y = tube.shading
    if len(Y) == 0:
        raise EmptyShading("tube has an empty shading")
    radii = [2.0 ** -k for k in range(1, 7)] if radii is None else radii
    C = grid.centers(Y)
    tree = cKDTree(C)
    n_x = int(math.floor(1.0 / tube.delta)) + 1
    xs = tube.core.anchor + np.linspace(-0.5, 0.5, n_x)[:, None] * tube.core.dir
    total = len(Y)
    for r in radii:
        cnt = np.array([len(c) for c in tree.query_ball_point(xs, r)])
        if np.any(cnt > alpha * r ** rho * total):
            return False
    return True


def _voxel_groups(ts, use_shading=True):
    ids, keys = ts.pairs(use_shading)
    order = np.argsort(keys, kind="stable")
    ks, ids = keys[order], ids[order]
    uk, start, cnt = np.unique(ks, return_index=True, return_counts=True)
    return uk, start, cnt, ids


def _max_cap_count(D, beta):
    """Largest number of directions within angle beta of one of them."""
    if len(D) <= 600:
        A = np.abs(D @ D.T) >= math.cos(beta)
        return int(A.sum(axis=1).max())
    both = np.vstack([D, -D])
    tree = cKDTree(both)
    r = 2 * math.sin(beta / 2)
    return int(max(len(x) for x in tree.query_ball_point(D, r)))


def transversal_voxels(ts, beta, use_shading=True):
    """Voxel keys where the cap condition holds, and where it fails."""
    uk, start, cnt, ids = _voxel_groups(ts, use_shading)
    ok = np.zeros(len(uk), dtype=bool)
    # a voxel crossed by fewer than 100 tubes always fails (the tube itself
    # is in its own cap)
    for g in np.nonzero(cnt >= 100)[0]:
        D = ts.dirs[ids[start[g]:start[g] + cnt[g]]]
        ok[g] = _max_cap_count(D, beta) <= cnt[g] / 100.0
    return uk[ok], uk[~ok]


def robust_transversality_check(ts, beta, use_shading=True):
    """Through each shaded voxel, no beta-cap of directions holds more than
    1/100 of the shaded tubes through it. Caps are centred at the tube
    directions present at the voxel."""
    if len(ts) == 0:
        return True
    _, bad = transversal_voxels(ts, beta, use_shading)
    return len(bad) == 0


def refine_transversal(ts, beta):
    """Restrict every shading to the voxels where the cap condition holds.
    Per-voxel counts do not depend on other voxels, so one pass is a
    fixed point."""
    good, _ = transversal_voxels(ts, beta, use_shading=False)
    ts.set_shading(np.isin(ts.keys, good))
    return ts


def _prism_count(ts, center, axes, half):
    """Tubes whose core segment lies in the prism (endpoints inside)."""
    E0 = ts.mids - 0.5 * ts.dirs - center
    E1 = ts.mids + 0.5 * ts.dirs - center
    inside = np.all(np.abs(E0 @ axes.T) <= half + 1e-12, axis=1) & \
        np.all(np.abs(E1 @ axes.T) <= half + 1e-12, axis=1)
    return int(inside.sum())


def _orth_from(v, rng, extra=None):
    M = [v]
    if extra is not None:
        M.extend(extra)
    M = np.array(M, dtype=np.float64)
    q, _ = np.linalg.qr(np.vstack([M, rng.normal(size=(4, 4))]).T)
    q = q[:, :4].T
    if q[0] @ v < 0:
        q[0] = -q[0]
    return q


def linear_wolff_check(ts, n_prisms=200, seed=0, return_worst=False):
    """Randomized falsifier: no sampled prism of dimensions 1 x t1 x t2 x t3
    holds more than 100 t1 t2 t3 delta^-3 cores. A true verdict only means no
    violation was found."""
    rng = np.random.default_rng(seed)
    d = ts.delta
    n = len(ts)
    worst = 0.0
    if n == 0:
        return (True, 0.0) if return_worst else True
    dy = [2.0 ** -k for k in range(0, 40) if 2.0 ** -k >= d]
    trials = []
    for _ in range(n_prisms):
        i = int(rng.integers(n))
        t = np.sort(rng.choice(dy, size=3))[::-1]
        axes = _orth_from(ts.dirs[i], rng)
        ctr = ts.mids[i] + (rng.uniform(-0.5, 0.5, size=4) * np.r_[0, t]) @ axes
        trials.append((ctr, axes, t))
    for _ in range(n_prisms):
        # circumscribe a random triple of cores
        sel = rng.choice(n, size=min(3, n), replace=False)
        E = np.vstack([ts.mids[sel] - 0.5 * ts.dirs[sel], ts.mids[sel] + 0.5 * ts.dirs[sel]])
        v = ts.dirs[sel[0]]
        v = np.sum(ts.dirs[sel] * np.sign(ts.dirs[sel] @ v)[:, None], axis=0)
        v /= np.linalg.norm(v)
        ctr = E.mean(axis=0)
        R = E - ctr
        R -= np.outer(R @ v, v)
        _, _, vt = np.linalg.svd(R, full_matrices=True)
        axes = _orth_from(v, rng, [vt[0], vt[1]])
        ext = np.abs(R @ axes[1:].T).max(axis=0)
        t = np.maximum(2 * ext * (1 + 1e-9), d)
        trials.append((ctr, axes, t))
    for ctr, axes, t in trials:
        half = np.r_[0.5 + d, t / 2]
        cnt = _prism_count(ts, ctr, axes, half)
        limit = 100 * np.prod(t) / d ** 3
        worst = max(worst, cnt / limit)
        if cnt > limit:
            return (False, worst) if return_worst else False
    return (True, worst) if return_worst else True


# -- hairbrush -------------------------------------------------------------------------------------

def hairbrush(ts, i0):
    """Tubes whose shading meets the shading of tube ``i0``, and the union
    volume of their shadings."""
    Y0 = ts.shading(i0)
    ids, keys = ts.pairs(True)
    hit = np.isin(keys, Y0)
    H = np.unique(ids[hit])
    if i0 not in H:
        H = np.sort(np.append(H, i0))
    sub = ts.subset(H)
    return H, union_volume(sub, True)


def fit_exponent(deltas, values):
    """Slope a of log(value) against log(delta), so value ~ delta^a."""
    x = np.log(np.asarray(deltas, dtype=np.float64))
    y = np.log(np.asarray(values, dtype=np.float64))
    a, _ = np.polyfit(x, y, 1)
    return float(a)
