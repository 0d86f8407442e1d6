"""Narrow / broad classification of per-point direction sets.

Directions are lines through the origin, so every angle here is
projective: angle(u, v) = arccos |u . v|.
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .config import TOL
from .curvature import second_fundamental_form
from .errors import InvalidArgument


@dataclass
class DirectionSet:
    base: np.ndarray
    dirs: np.ndarray
    delta: float

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=np.float64)
        d = np.asarray(self.dirs, dtype=np.float64).reshape(-1, 4)
        self.dirs = d / np.linalg.norm(d, axis=1)[:, None] if len(d) else d

    def __len__(self):
        return len(self.dirs)


@dataclass
class BroadLabel:
    label: str  # Flat | Narrow1 | Narrow22 | Broad
    params: dict
    ii_norm: float = 0.0
    component_diameter: float = 0.0
    A: int | None = None
    spheres: list | None = field(default=None, repr=False)

    def to_json(self):
        out = {"label": self.label, "params": dict(self.params),
               "II_inf_norm": self.ii_norm, "component_diameter": self.component_diameter}
        if self.A is not None:
            out["A"] = self.A
        if self.spheres is not None:
            out["spheres"] = [np.asarray(s).tolist() for s in self.spheres]
        return out


def _angles(X, Y):
    return np.arccos(np.clip(np.abs(X @ Y.T), 0.0, 1.0))


def sphere_distance(V, basis):
    """Angle from each direction to the great sphere spanned by ``basis`` rows."""
    r = np.linalg.norm(V @ basis.T, axis=1)
    return np.arccos(np.clip(r, 0.0, 1.0))


# -- (m, A) subsphere fitting -------------------------------------------------------------------

def _top_subspace(X, k):
    if len(X) == 0:
        return None
    _, _, vt = np.linalg.svd(X, full_matrices=True)
    return vt[:k]


def _complete(B, k, rng):
    """Extend orthonormal rows B to k rows."""
    while len(B) < k:
        r = rng.normal(size=4)
        r -= B.T @ (B @ r)
        B = np.vstack([B, r / np.linalg.norm(r)])
    return B


def _alternate(V, bases, k, iters=50):
    bases = list(bases)
    lab = None
    for _ in range(iters):
        D = np.stack([sphere_distance(V, B) for B in bases], axis=1)
        new = np.argmin(D, axis=1)
        if lab is not None and np.array_equal(new, lab):
            break
        lab = new
        for a in range(len(bases)):
            sel = V[lab == a]
            if len(sel) >= 1:
                B = _top_subspace(sel, k)
                bases[a] = B if len(B) == k else bases[a]
    D = np.stack([sphere_distance(V, B) for B in bases], axis=1)
    return bases, float(D.min(axis=1).max())


def _farthest_seeds(V, n, rng):
    idx = [int(rng.integers(len(V)))]
    d = _angles(V, V[idx[0]][None])[:, 0]
    for _ in range(n - 1):
        i = int(np.argmax(d))
        idx.append(i)
        d = np.minimum(d, _angles(V, V[i][None])[:, 0])
    return idx


def _search(V, m, A, seed, restarts):
    k = m + 1
    rng = np.random.default_rng(seed)
    if len(V) == 0:
        return [np.eye(4)[:k]] * A, 0.0
    best = None
    nn = min(len(V), max(k + 1, 8))
    for r in range(restarts + 1):
        if r == 0:
            # local-PCA seeds at spread-out directions
            seeds = _farthest_seeds(V, A, rng)
        else:
            seeds = rng.choice(len(V), size=min(A, len(V)), replace=False).tolist()
        bases = []
        for i in seeds:
            near = np.argsort(_angles(V, V[i][None])[:, 0])[:nn]
            bases.append(_complete(_top_subspace(V[near], k), k, rng))
        while len(bases) < A:
            bases.append(bases[-1])
        if r > restarts // 2:
            # fully random subspaces for diversity
            bases = [np.linalg.qr(rng.normal(size=(4, k)))[0].T for _ in range(A)]
        bases, res = _alternate(V, bases, k)
        if best is None or res < best[1] - 1e-15:
            best = (bases, res)
    return best


def best_narrow_fit(V, m, A, seed=0, restarts=None):
    """Best (spheres, max residual angle) found for A great m-spheres.

    The result for (m, A) is never worse than that for (m-1, A) or (m, A-1):
    smaller fits are extended and kept if they beat the direct search."""
    restarts = TOL.restarts if restarts is None else restarts
    dirs = V.dirs if isinstance(V, DirectionSet) else np.asarray(V, dtype=np.float64)
    key = (dirs.tobytes(), dirs.shape)
    return _best_cached(key, m, A, seed, restarts)


@lru_cache(maxsize=4096)
def _best_cached(key, m, A, seed, restarts):
    dirs = np.frombuffer(key[0]).reshape(key[1])
    if m not in (1, 2) or A not in (1, 2, 3):
        raise InvalidArgument("m must be 1 or 2 and A in 1..3")
    spheres, res = _search(dirs, m, A, seed, restarts)
    rng = np.random.default_rng(seed + 7919)
    if A > 1:
        s2, r2 = _best_cached(key, m, A - 1, seed, restarts)
        if r2 < res:
            spheres, res = list(s2) + [s2[-1]], r2
    if m > 1:
        s2, r2 = _best_cached(key, m - 1, A, seed, restarts)
        if r2 < res:
            spheres, res = [_complete(B, m + 1, rng) for B in s2], r2
    return [np.array(B) for B in spheres], res


def narrow_fit(V, m, A, u, seed=0, restarts=None):
    """A great m-spheres (as orthonormal bases, (m+1) x 4) within angle u of
    every direction of V, or None."""
    spheres, res = best_narrow_fit(V, m, A, seed, restarts)
    return spheres if res <= u else None


# -- strong 1-broadness ------------------------------------------------------------------------

def components(V, radius=None):
    """Connected components of the adjacency graph (edges at angle <= radius)
    and the angular diameter of each."""
    dirs = V.dirs
    radius = TOL.adjacency_factor * V.delta if radius is None else radius
    n = len(dirs)
    if n == 0:
        return np.zeros(0, dtype=int), np.zeros(0)
    G = _angles(dirs, dirs)
    i, j = np.nonzero(np.triu(G <= radius, 1))
    adj = coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
    nc, lab = connected_components(adj, directed=False)
    diam = np.array([G[np.ix_(lab == c, lab == c)].max() for c in range(nc)])
    return lab, diam


def sbroad_test(V, s, return_diameter=False):
    _, diam = components(V)
    d = float(diam.max()) if len(diam) else 0.0
    out = d >= s
    return (out, d) if return_diameter else out


# -- per-point classification ------------------------------------------------------------------

def classify_point(P, z, V, params, seed=0):
    """Flat, Narrow1, Narrow22 or Broad, tested in that order.

    params needs kappa, s and w (u is recorded but unused here). Narrow22
    means the directions sit near two great circles."""
    if len(V) == 0:
        raise InvalidArgument("empty direction set")
    kappa, s, w = params["kappa"], params["s"], params["w"]
    ii = second_fundamental_form(P, z).inf_norm
    rec = {k: float(v) for k, v in params.items()}
    if ii <= kappa:
        return BroadLabel("Flat", rec, ii)
    lab, diam = components(V)
    dmax = float(diam.max())
    if dmax < s:
        centers = []
        for c in range(len(diam)):
            X = V.dirs[lab == c]
            centers.append(_top_subspace(X, 1)[0])
        return BroadLabel("Narrow1", rec, ii, dmax, A=len(diam), spheres=centers)
    circ = narrow_fit(V, 1, 2, w, seed=seed)
    if circ is not None:
        return BroadLabel("Narrow22", rec, ii, dmax, A=2, spheres=circ)
    return BroadLabel("Broad", rec, ii, dmax)
