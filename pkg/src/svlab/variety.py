"""Sampling Z(P) in the unit ball, nearest points, the line set and its
incidences, and gradient-dyadic normalization."""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .config import TOL
from .errors import InvalidArgument, NotNearVariety
from .geometry import DirectionNet, Line, canonicalize_many, line_feet
from .poly import Polynomial4, gradient, hessian, evaluate


@dataclass
class SurfaceSample:
    points: np.ndarray
    grads: np.ndarray
    delta: float
    spacing: float
    _tree: cKDTree = field(default=None, repr=False)

    def __len__(self):
        return len(self.points)

    @property
    def tree(self):
        if self._tree is None:
            self._tree = cKDTree(self.points if len(self.points) else np.zeros((0, 4)))
        return self._tree

    def frames(self):
        """Orthonormal tangent bases, shape (N, 3, 4)."""
        from .curvature import tangent_frames
        return tangent_frames(self.grads)

    def subset(self, idx):
        return SurfaceSample(self.points[idx], self.grads[idx], self.delta, self.spacing)


@dataclass(frozen=True)
class IncidencePair:
    x: np.ndarray
    line_id: int


def _hessian_bound(P):
    """Upper bound for the Hessian operator norm on [-1, 1]^4."""
    deg = P.exps.sum(axis=1)
    return float(np.sum(np.abs(P.coef) * deg * np.maximum(deg - 1, 0)))


def _seed_cells(P, spacing):
    """Centres of a dyadic grid in [-1, 1]^4 whose cells may meet Z(P).

    A cell of side h (half-diagonal h) is dropped once a Taylor bound shows
    |P| > 0 on it."""
    Hb = _hessian_bound(P)
    rows = P.bank[:5]
    h = 0.5
    g = np.arange(-1 + h / 2, 1, h)
    C = np.stack(np.meshgrid(g, g, g, g, indexing="ij"), -1).reshape(-1, 4)
    kids = np.stack(np.meshgrid(*([[-0.25, 0.25]] * 4), indexing="ij"), -1).reshape(-1, 4)
    while True:
        C = C[np.linalg.norm(C, axis=1) <= 1 + h]
        v = _kernels.bank_eval(C, P.exps, rows)
        gn = np.linalg.norm(v[:, 1:5], axis=1)
        C = C[np.abs(v[:, 0]) <= gn * h + 0.5 * Hb * h * h + 1e-12]
        if h <= spacing * (1 + 1e-12) or len(C) == 0:
            return C
        C = (C[:, None, :] + h * kids[None]).reshape(-1, 4)
        h /= 2


def sample_surface(P, delta, spacing=None, tol=None):
    """Newton-projected, greedily thinned sample of Z(P) in B(0,1).

    Seeds come from a dyadic grid of spacing <= ``spacing`` (default
    delta/2); the result is thinned to ``spacing`` separation.
    """
    tol = tol or TOL
    spacing = delta / 2 if spacing is None else spacing
    scale = P.scale()
    if scale == 0:
        raise InvalidArgument("zero polynomial")
    seeds = _seed_cells(P, spacing)
    if len(seeds) == 0:
        return SurfaceSample(np.zeros((0, 4)), np.zeros((0, 4)), delta, spacing)
    Z, ok = _kernels.newton_project(seeds, P.exps, P.bank[:5], tol.newton_tol * scale, tol.newton_maxit,
                                    max_move=4 * spacing + delta, gfloor=tol.grad_floor)
    Z = Z[ok]
    Z = Z[np.linalg.norm(Z, axis=1) <= 1.0]
    G = gradient(P, Z) if len(Z) else np.zeros((0, 4))
    good = np.linalg.norm(G, axis=1) >= tol.grad_floor
    Z, G = Z[good], G[good]
    keep = _kernels.greedy_thin(Z, spacing) if len(Z) else np.zeros(0, bool)
    return SurfaceSample(Z[keep], G[keep], delta, spacing)


def nearest_point(P, sample, x, max_factor=10.0):
    """Sample point nearest to x; exact ties go to the lexicographically
    smallest point."""
    x = np.asarray(x, dtype=np.float64)
    if len(sample) == 0:
        raise NotNearVariety("empty sample")
    k = min(16, len(sample))
    d, i = sample.tree.query(x, k=k)
    d, i = np.atleast_1d(d), np.atleast_1d(i)
    if d[0] > max_factor * sample.delta:
        raise NotNearVariety(f"point is {d[0]:.3g} from the sample (> {max_factor} delta)")
    ties = i[d <= d[0] * (1 + 1e-12) + 1e-300]
    pts = sample.points[ties]
    j = np.lexsort(pts.T[::-1])[0]
    return sample.points[ties[j]].copy()


def t_grid(n_t):
    return -1.0 + (2.0 * np.arange(n_t) + 1.0) / n_t


def line_neighborhood_measure(P, line, delta, n_t=None, tol=None):
    """Estimate |{t in [-1,1] : dist(l(t), Z) <= delta}| by t-sampling."""
    tol = tol or TOL
    n_t = tol.n_t if n_t is None else n_t
    if n_t < 256:
        raise InvalidArgument("n_t must be at least 256")
    hits = _kernels.line_hits(line.anchor[None], line.dir[None], t_grid(n_t), P.exps, P.bank[:5], delta,
                              tol.newton_tol * P.scale(), tol.newton_maxit, tol.grad_floor * 1e-2, 1.0)
    return 2.0 * int(hits[0]) / n_t


def neighborhood_volume(P, delta, n=20000, rng=None, tol=None):
    """Monte-Carlo |N_delta(Z) cap B(0,1)| via Newton distance. Returns (vol, se)."""
    tol = tol or TOL
    rng = np.random.default_rng(rng)
    X = rng.normal(size=(n, 4))
    X *= (rng.random(n) ** 0.25 / np.linalg.norm(X, axis=1))[:, None]
    Z, ok = _kernels.newton_project(X, P.exps, P.bank[:5], tol.newton_tol * P.scale(), tol.newton_maxit,
                                    max_move=2 * delta, gfloor=1e-300)
    inside = ok & (np.linalg.norm(Z - X, axis=1) <= delta) & (np.linalg.norm(Z, axis=1) <= 1.0)
    vol_ball = math.pi ** 2 / 2
    f = inside.mean()
    return vol_ball * f, vol_ball * math.sqrt(f * (1 - f) / n)


# -- line enumeration --------------------------------------------------------------

_NET_CACHE = {}


def direction_net(delta, cap=None):
    cap = TOL.cap_angle if cap is None else cap
    key = (float(delta), float(cap))
    if key not in _NET_CACHE:
        _NET_CACHE[key] = DirectionNet.build(delta, cap=cap)
    return _NET_CACHE[key]


@dataclass
class LineSet:
    """Enumerated lines with their incidence masks over ``t_grid(n_t)``."""
    anchors: np.ndarray
    dirs: np.ndarray
    dir_index: np.ndarray
    hits: np.ndarray          # (L, n_t) bool, or None in directions-only mode
    delta: float
    c: float
    n_t: int
    net: DirectionNet = None

    def __len__(self):
        return len(self.anchors)

    def lines(self):
        return [Line(a.copy(), d.copy()) for a, d in zip(self.anchors, self.dirs)]

    def measures(self):
        return 2.0 * self.hits.sum(axis=1) / self.n_t

    def incidences(self):
        """Gamma-hat as a flat list of IncidencePair."""
        ts = t_grid(self.n_t)
        out = []
        for i in range(len(self)):
            for t in ts[self.hits[i]]:
                out.append(IncidencePair(self.anchors[i] + t * self.dirs[i], i))
        return out

    def incidence_arrays(self, per_line=None):
        """(line_id, x) arrays; ``per_line`` keeps that many evenly spread hits."""
        ts = t_grid(self.n_t)
        ids, xs = [], []
        for i in range(len(self)):
            h = np.nonzero(self.hits[i])[0]
            if per_line is not None and h.size > per_line:
                h = h[np.linspace(0, h.size - 1, per_line).round().astype(int)]
            ids.append(np.full(h.size, i))
            xs.append(self.anchors[i] + ts[h][:, None] * self.dirs[i])
        if not ids:
            return np.zeros(0, np.int64), np.zeros((0, 4))
        return np.concatenate(ids), np.concatenate(xs)

    def to_json(self):
        return [{"anchor": a.tolist(), "dir": d.tolist()} for a, d in zip(self.anchors, self.dirs)]


def _quad_monomials(V):
    """Per-direction products v_i v_j (i<=j) weighted so that
    sum_r H_r * out_r = v^T H v for Hessian upper-triangle entries H_r."""
    cols = []
    for i in range(4):
        for j in range(i, 4):
            cols.append((1.0 if i == j else 2.0) * V[:, i] * V[:, j])
    return np.stack(cols, axis=1)


def candidate_lines(P, anchors, delta, net, tol=None, dedup=True):
    """Pairs (anchor, direction) passing the quadratic-cone prefilter.

    Returns (feet, dirs, dir_idx, score) where score = |v.grad P| + |v^T H v|
    ranks candidates by how closely the line osculates Z at the anchor. With
    ``dedup`` lines are merged at (delta, delta) granularity in (direction
    cell, foot cell)."""
    tol = tol or TOL
    V = net.points
    QV = _quad_monomials(V)
    feet_all, idx_all, score_all = [], [], []
    step = max(1, 2_000_000 // max(1, len(V)))
    for s in range(0, len(anchors), step):
        Z = anchors[s:s + step]
        vals = _kernels.bank_eval(Z, P.exps, P.bank[:15])
        g, h = vals[:, 1:5], vals[:, 5:15]
        first = np.abs(g @ V.T)
        second = np.abs(h @ QV.T)
        ok = (first <= tol.k1 * delta) & (second <= tol.k2 * delta)
        ai, vi = np.nonzero(ok)
        if ai.size == 0:
            continue
        Zs, Vs = Z[ai], V[vi]
        feet_all.append(Zs - np.sum(Zs * Vs, axis=1)[:, None] * Vs)
        idx_all.append(vi)
        score_all.append(first[ai, vi] + second[ai, vi])
    if not feet_all:
        return np.zeros((0, 4)), np.zeros((0, 4)), np.zeros(0, np.int64), np.zeros(0)
    F = np.concatenate(feet_all)
    I = np.concatenate(idx_all)
    S = np.concatenate(score_all)
    if dedup:
        cells = np.floor(F / delta).astype(np.int64) + 4096
        key = I * (8192 ** 4) + (((cells[:, 0] * 8192 + cells[:, 1]) * 8192 + cells[:, 2]) * 8192 + cells[:, 3])
        _, first = np.unique(key, return_index=True)
        first = np.sort(first)
        F, I, S = F[first], I[first], S[first]
    return F, V[I], I, S


def enumerate_lines(P, sample, delta, c, anchor_spacing=None, directions_only=False, tol=None, net=None):
    """The line set: candidate (anchor, net direction) lines kept when
    |l cap N_delta(Z)| >= c.

    ``anchor_spacing`` thins the anchors drawn from ``sample`` (default: use
    every sample point). With ``directions_only`` one witness line is kept per
    direction and incidences are not recorded.
    """
    tol = tol or TOL
    if not (0 < delta < c <= 2):
        raise InvalidArgument("need 0 < delta < c <= 2")
    net = net or direction_net(delta)
    n_t = tol.n_t
    empty = LineSet(np.zeros((0, 4)), np.zeros((0, 4)), np.zeros(0, np.int64),
                    np.zeros((0, n_t), bool), delta, c, n_t, net)
    if len(sample) == 0:
        return empty
    anchors = sample.points
    if anchor_spacing is not None and anchor_spacing > sample.spacing:
        anchors = anchors[_kernels.greedy_thin(anchors, anchor_spacing)]
    F, D, I, score = candidate_lines(P, anchors, delta, net, tol, dedup=not directions_only)
    if len(F) == 0:
        return empty
    need = int(math.ceil(c * n_t / 2.0 - 1e-9))
    ts = t_grid(n_t)
    ntol = tol.newton_tol * P.scale()
    gfl = tol.grad_floor * 1e-2
    slack = 2 * P.total_degree + 2
    if directions_only:
        # per direction, try the best-osculating candidates first and at
        # most ``direction_tries`` of them
        # score quantized at delta, ties broken toward feet near the origin
        # whose chords through the ball are longest
        order = np.lexsort((np.linalg.norm(F, axis=1), np.floor(score / delta), I))
        F, D, I = F[order], D[order], I[order]
        uniq, starts, counts = np.unique(I, return_index=True, return_counts=True)
        rank = np.arange(len(I)) - np.repeat(starts, counts)
        sel = rank < tol.direction_tries
        F, D, I = F[sel], D[sel], I[sel]
        uniq, starts = np.unique(I, return_index=True)
        starts = np.append(starts, len(I))
        found = _kernels.first_success(F, D, starts, ts, P.exps, P.bank[:5], delta, ntol, tol.newton_maxit,
                                       gfl, 1.0, need, tol.screen_stride, slack)
        sel = found[found >= 0]
        return LineSet(F[sel], D[sel], I[sel], None, delta, c, n_t, net)
    hits = _kernels.line_hits(F, D, ts, P.exps, P.bank[:5], delta, ntol, tol.newton_maxit, gfl, 1.0,
                              need=need, early=1, stride=tol.screen_stride, slack=slack)
    keep = hits >= need
    F, D, I = F[keep], D[keep], I[keep]
    mask, _ = _kernels.line_mask(F, D, ts, P.exps, P.bank[:5], delta, ntol, tol.newton_maxit, gfl, 1.0)
    return LineSet(F, D, I, mask, delta, c, n_t, net)


# -- gradient-dyadic decomposition --------------------------------------------------------

@dataclass
class DyadicPiece:
    P_j: Polynomial4
    region: np.ndarray      # indices into the sample
    scale_m: float
    offset_w: float
    k: int


def gradient_dyadic_decomposition(P, sample, delta):
    """Split the sample by dyadic |grad P| and renormalize each bin.

    Points with |grad P| < delta are left out (they form the singular
    residue). Each piece is P_j = (P - w_j) / 2^k with w_j the median of P on
    a symmetric delta-stencil around the bin's points."""
    if len(sample) == 0:
        raise InvalidArgument("sample is empty")
    gn = np.linalg.norm(sample.grads, axis=1)
    valid = gn >= delta
    k = np.full(len(gn), np.iinfo(np.int64).min, dtype=np.int64)
    k[valid] = np.floor(np.log2(gn[valid])).astype(np.int64)
    stencil = np.vstack([np.zeros(4), delta * np.eye(4), -delta * np.eye(4)])
    pieces = []
    for kk in np.unique(k[valid]):
        idx = np.nonzero(k == kk)[0]
        pts = (sample.points[idx][:, None, :] + stencil[None]).reshape(-1, 4)
        w = float(np.median(evaluate(P, pts)))
        m = float(2.0 ** kk)
        pieces.append(DyadicPiece((P - w) / m, idx, m, w, int(kk)))
    return pieces
