"""Hot loops with a numba backend and a pure-numpy fallback.

The backend is chosen at import from ``SVLAB_BACKEND`` (``numba`` or
``numpy``); ``use_backend`` switches it temporarily. Both paths return
identical results up to floating-point summation order.
"""
import os
from contextlib import contextmanager

import numpy as np
from scipy.spatial import cKDTree

try:
    from numba import njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f


def _initial_backend():
    want = os.environ.get("SVLAB_BACKEND", "numba").strip().lower()
    if want not in ("numba", "numpy"):
        raise ValueError(f"SVLAB_BACKEND must be 'numba' or 'numpy', got {want!r}")
    return "numba" if (want == "numba" and HAS_NUMBA) else "numpy"


_STATE = {"backend": _initial_backend()}


def backend():
    return _STATE["backend"]


def set_backend(name):
    if name not in ("numba", "numpy"):
        raise ValueError(name)
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    _STATE["backend"] = name


@contextmanager
def use_backend(name):
    old = backend()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(old)


def _numba():
    return _STATE["backend"] == "numba"


# ---------------------------------------------------------------------------
# polynomial banks: C[r] holds coefficients of the r-th polynomial over a
# shared monomial list ``exps``

@njit(cache=True)
def _bank_point(x, exps, C, deg, out, pw):
    for k in range(4):
        pw[k, 0] = 1.0
        for e in range(1, deg + 1):
            pw[k, e] = pw[k, e - 1] * x[k]
    R = C.shape[0]
    for r in range(R):
        out[r] = 0.0
    for m in range(exps.shape[0]):
        mono = pw[0, exps[m, 0]] * pw[1, exps[m, 1]] * pw[2, exps[m, 2]] * pw[3, exps[m, 3]]
        for r in range(R):
            c = C[r, m]
            if c != 0.0:
                out[r] += c * mono


@njit(cache=True)
def _bank_eval_nb(X, exps, C, deg):
    N = X.shape[0]
    out = np.empty((N, C.shape[0]))
    buf = np.empty(C.shape[0])
    pw = np.empty((4, deg + 1))
    for i in range(N):
        _bank_point(X[i], exps, C, deg, buf, pw)
        out[i, :] = buf
    return out


def _monomials_np(X, exps):
    return np.prod(X[:, None, :] ** exps[None, :, :], axis=2)


def bank_eval(X, exps, C):
    X = np.ascontiguousarray(X, dtype=np.float64).reshape(-1, 4)
    C = np.ascontiguousarray(C, dtype=np.float64)
    exps = np.ascontiguousarray(exps, dtype=np.int64)
    deg = int(exps.sum(axis=1).max()) if len(exps) else 0
    if _numba():
        return _bank_eval_nb(X, exps, C, deg)
    out = np.empty((X.shape[0], C.shape[0]))
    step = 20000
    for s in range(0, X.shape[0], step):
        out[s:s + step] = _monomials_np(X[s:s + step], exps) @ C.T
    return out


# ---------------------------------------------------------------------------
# Newton projection onto Z(P): x <- x - P(x) grad P(x) / |grad P(x)|^2

@njit(cache=True)
def _newton_one(x0, exps, C5, deg, tol, maxit, max_move, gfloor, z, buf, pw):
    for k in range(4):
        z[k] = x0[k]
    for it in range(maxit + 1):
        _bank_point(z, exps, C5, deg, buf, pw)
        p = buf[0]
        if abs(p) <= tol:
            return True
        if it == maxit:
            return False
        gg = buf[1] * buf[1] + buf[2] * buf[2] + buf[3] * buf[3] + buf[4] * buf[4]
        if gg < gfloor * gfloor:
            return False
        s = p / gg
        d2 = 0.0
        for k in range(4):
            z[k] -= s * buf[k + 1]
            d2 += (z[k] - x0[k]) ** 2
        if d2 > max_move * max_move:
            return False
    return False


@njit(cache=True)
def _newton_nb(X, exps, C5, deg, tol, maxit, max_move, gfloor):
    N = X.shape[0]
    Z = np.empty((N, 4))
    ok = np.zeros(N, dtype=np.bool_)
    buf = np.empty(5)
    z = np.empty(4)
    pw = np.empty((4, deg + 1))
    for i in range(N):
        ok[i] = _newton_one(X[i], exps, C5, deg, tol, maxit, max_move, gfloor, z, buf, pw)
        Z[i, :] = z
    return Z, ok


def _newton_np(X, exps, C5, tol, maxit, max_move, gfloor):
    Z = X.copy()
    ok = np.zeros(len(X), dtype=bool)
    active = np.arange(len(X))
    for it in range(maxit + 1):
        if active.size == 0:
            break
        v = bank_eval(Z[active], exps, C5)
        p = v[:, 0]
        done = np.abs(p) <= tol
        ok[active[done]] = True
        keep = ~done
        if it == maxit:
            break
        g = v[:, 1:5]
        gg = np.einsum("ij,ij->i", g, g)
        keep &= gg >= gfloor * gfloor
        idx = active[keep]
        step = (p[keep] / gg[keep])[:, None] * g[keep]
        Z[idx] -= step
        moved = np.linalg.norm(Z[idx] - X[idx], axis=1) <= max_move
        active = idx[moved]
    return Z, ok


def newton_project(X, exps, C5, tol, maxit, max_move=np.inf, gfloor=1e-300):
    X = np.ascontiguousarray(X, dtype=np.float64).reshape(-1, 4)
    exps = np.ascontiguousarray(exps, dtype=np.int64)
    C5 = np.ascontiguousarray(C5, dtype=np.float64)
    deg = int(exps.sum(axis=1).max()) if len(exps) else 0
    if _numba():
        return _newton_nb(X, exps, C5, deg, float(tol), int(maxit), float(max_move), float(gfloor))
    with use_backend("numpy"):
        return _newton_np(X, exps, C5, tol, maxit, max_move, gfloor)


# ---------------------------------------------------------------------------
# line neighbourhood hits: ts in [-1, 1], hit iff Newton from l(t) lands on
# Z within distance delta and inside the ball of radius ``ball_r``

@njit(cache=True)
def _hit_at(anchor, dirv, t, exps, C5, deg, delta, tol, maxit, gfloor, ball_r, z, y, buf, pw):
    for k in range(4):
        y[k] = anchor[k] + t * dirv[k]
    good = _newton_one(y, exps, C5, deg, tol, maxit, 1.5 * delta, gfloor, z, buf, pw)
    if good:
        d2 = 0.0
        r2 = 0.0
        for k in range(4):
            d2 += (z[k] - y[k]) ** 2
            r2 += z[k] * z[k]
        good = d2 <= delta * delta and r2 <= ball_r * ball_r
    return good


@njit(cache=True)
def _line_hits_nb(anchors, dirs, ts, exps, C5, deg, delta, tol, maxit, gfloor, ball_r, need, early,
                  stride, slack):
    L = anchors.shape[0]
    nt = ts.shape[0]
    hits = np.zeros(L, dtype=np.int64)
    buf = np.empty(5)
    z = np.empty(4)
    y = np.empty(4)
    pw = np.empty((4, deg + 1))
    for i in range(L):
        h = 0
        miss = 0
        if stride > 1:
            # coarse screen on every stride-th sample: a hit set of measure
            # >= need made of at most ``slack`` intervals leaves at least
            # need/stride - slack coarse hits
            ch = 0
            cm = 0
            cneed = need // stride - slack
            ncoarse = (nt - stride // 2 + stride - 1) // stride
            for j in range(stride // 2, nt, stride):
                if _hit_at(anchors[i], dirs[i], ts[j], exps, C5, deg, delta, tol, maxit, gfloor, ball_r,
                           z, y, buf, pw):
                    ch += 1
                else:
                    cm += 1
                    if cm > ncoarse - cneed:
                        break
            if ch < cneed:
                hits[i] = ch
                continue
        for j in range(nt):
            good = _hit_at(anchors[i], dirs[i], ts[j], exps, C5, deg, delta, tol, maxit, gfloor, ball_r,
                           z, y, buf, pw)
            if good:
                h += 1
                if early == 2 and h >= need:
                    break
            else:
                miss += 1
                if early >= 1 and miss > nt - need:
                    break
        hits[i] = h
    return hits


@njit(cache=True)
def _line_mask_nb(anchors, dirs, ts, exps, C5, deg, delta, tol, maxit, gfloor, ball_r):
    L = anchors.shape[0]
    nt = ts.shape[0]
    mask = np.zeros((L, nt), dtype=np.bool_)
    proj = np.empty((L, nt, 4))
    buf = np.empty(5)
    z = np.empty(4)
    y = np.empty(4)
    pw = np.empty((4, deg + 1))
    for i in range(L):
        for j in range(nt):
            mask[i, j] = _hit_at(anchors[i], dirs[i], ts[j], exps, C5, deg, delta, tol, maxit, gfloor,
                                 ball_r, z, y, buf, pw)
            proj[i, j, :] = z
    return mask, proj


def _line_mask_np(anchors, dirs, ts, exps, C5, delta, tol, maxit, gfloor, ball_r):
    L, nt = anchors.shape[0], ts.shape[0]
    Y = (anchors[:, None, :] + ts[None, :, None] * dirs[:, None, :]).reshape(-1, 4)
    Z, ok = _newton_np(Y, exps, C5, tol, maxit, 1.5 * delta, gfloor)
    d2 = np.einsum("ij,ij->i", Z - Y, Z - Y)
    r2 = np.einsum("ij,ij->i", Z, Z)
    good = ok & (d2 <= delta * delta) & (r2 <= ball_r * ball_r)
    return good.reshape(L, nt), Z.reshape(L, nt, 4)


def line_hits(anchors, dirs, ts, exps, C5, delta, tol, maxit, gfloor, ball_r, need=0, early=0,
              stride=0, slack=0):
    """Hit counts per line. ``early``: 0 exact, 1 stop once failure is
    certain, 2 also stop once success is certain (counts then saturate).
    ``stride`` > 1 enables a coarse pre-screen that rejects lines whose
    coarse hit count is below need/stride - slack."""
    anchors = np.ascontiguousarray(anchors, dtype=np.float64).reshape(-1, 4)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 4)
    ts = np.ascontiguousarray(ts, dtype=np.float64)
    exps = np.ascontiguousarray(exps, dtype=np.int64)
    C5 = np.ascontiguousarray(C5, dtype=np.float64)
    deg = int(exps.sum(axis=1).max()) if len(exps) else 0
    if _numba():
        return _line_hits_nb(anchors, dirs, ts, exps, C5, deg, float(delta), float(tol), int(maxit),
                             float(gfloor), float(ball_r), int(need), int(early), int(stride), int(slack))
    out = np.empty(len(anchors), dtype=np.int64)
    step = max(1, 20000 // max(1, len(ts)))
    with use_backend("numpy"):
        for s in range(0, len(anchors), step):
            a, d = anchors[s:s + step], dirs[s:s + step]
            if stride > 1:
                sub = ts[stride // 2::stride]
                m, _ = _line_mask_np(a, d, sub, exps, C5, delta, tol, maxit, gfloor, ball_r)
                ch = m.sum(axis=1)
                passed = ch >= need // stride - slack
                out[s:s + step] = ch
                if not passed.any():
                    continue
                a, d = a[passed], d[passed]
                m, _ = _line_mask_np(a, d, ts, exps, C5, delta, tol, maxit, gfloor, ball_r)
                out[s + np.nonzero(passed)[0]] = m.sum(axis=1)
            else:
                m, _ = _line_mask_np(a, d, ts, exps, C5, delta, tol, maxit, gfloor, ball_r)
                out[s:s + step] = m.sum(axis=1)
    return out


def line_mask(anchors, dirs, ts, exps, C5, delta, tol, maxit, gfloor, ball_r):
    anchors = np.ascontiguousarray(anchors, dtype=np.float64).reshape(-1, 4)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 4)
    ts = np.ascontiguousarray(ts, dtype=np.float64)
    exps = np.ascontiguousarray(exps, dtype=np.int64)
    C5 = np.ascontiguousarray(C5, dtype=np.float64)
    deg = int(exps.sum(axis=1).max()) if len(exps) else 0
    if _numba():
        return _line_mask_nb(anchors, dirs, ts, exps, C5, deg, float(delta), float(tol), int(maxit),
                             float(gfloor), float(ball_r))
    with use_backend("numpy"):
        return _line_mask_np(anchors, dirs, ts, exps, C5, delta, tol, maxit, gfloor, ball_r)


@njit(cache=True)
def _first_success_nb(anchors, dirs, starts, ts, exps, C5, deg, delta, tol, maxit, gfloor, ball_r, need,
                      stride, slack):
    G = starts.shape[0] - 1
    found = -np.ones(G, dtype=np.int64)
    one_a = np.empty((1, 4))
    one_d = np.empty((1, 4))
    for g in range(G):
        for i in range(starts[g], starts[g + 1]):
            one_a[0, :] = anchors[i]
            one_d[0, :] = dirs[i]
            h = _line_hits_nb(one_a, one_d, ts, exps, C5, deg, delta, tol, maxit, gfloor, ball_r, need, 2,
                             stride, slack)
            if h[0] >= need:
                found[g] = i
                break
    return found


def first_success(anchors, dirs, starts, ts, exps, C5, delta, tol, maxit, gfloor, ball_r, need,
                  stride=0, slack=0):
    """For candidate groups ``[starts[g], starts[g+1])`` return the index of
    the first line reaching ``need`` hits, or -1."""
    anchors = np.ascontiguousarray(anchors, dtype=np.float64).reshape(-1, 4)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 4)
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    ts = np.ascontiguousarray(ts, dtype=np.float64)
    exps = np.ascontiguousarray(exps, dtype=np.int64)
    C5 = np.ascontiguousarray(C5, dtype=np.float64)
    deg = int(exps.sum(axis=1).max()) if len(exps) else 0
    if _numba():
        return _first_success_nb(anchors, dirs, starts, ts, exps, C5, deg, float(delta), float(tol),
                                 int(maxit), float(gfloor), float(ball_r), int(need), int(stride),
                                 int(slack))
    found = -np.ones(len(starts) - 1, dtype=np.int64)
    for g in range(len(starts) - 1):
        a, b = starts[g], starts[g + 1]
        # test in small batches so the vectorised path can still stop early
        for s in range(a, b, 16):
            e = min(b, s + 16)
            h = line_hits(anchors[s:e], dirs[s:e], ts, exps, C5, delta, tol, maxit, gfloor, ball_r,
                              need=need, early=1, stride=stride, slack=slack)
            ok = np.nonzero(h >= need)[0]
            if ok.size:
                found[g] = s + ok[0]
                break
    return found


# ---------------------------------------------------------------------------
# greedy thinning: keep point i iff it is >= r from every kept point, in order

@njit(cache=True)
def _greedy_thin_nb(P, r, projective):
    n, dim = P.shape
    keep = np.zeros(n, dtype=np.bool_)
    if n == 0:
        return keep
    lo = np.empty(dim)
    for k in range(dim):
        lo[k] = P[:, k].min() - 2.0
        if projective:
            lo[k] = min(lo[k], -P[:, k].max() - 2.0)
    base = 1 << 15
    cells = np.empty((n, dim), dtype=np.int64)
    keys = np.empty(n, dtype=np.int64)
    for i in range(n):
        key = 0
        for k in range(dim):
            c = int(np.floor((P[i, k] - lo[k]) / r))
            cells[i, k] = c
            key = key * base + c
        keys[i] = key
    order = np.argsort(keys)
    skeys = keys[order]
    r2 = r * r
    # neighbour cells differing only in the last coordinate are adjacent in
    # key order: one binary search per 3^(dim-1) prefix
    nb = 3 ** (dim - 1)
    q = np.empty(dim)
    for i in range(n):
        ok = True
        for sgn in range(2 if projective else 1):
            s = 1.0 if sgn == 0 else -1.0
            for k in range(dim):
                q[k] = s * P[i, k]
            for off in range(nb):
                t = off
                key = 0
                for k in range(dim - 1):
                    dk = t % 3 - 1
                    t //= 3
                    c = int(np.floor((q[k] - lo[k]) / r)) + dk
                    key = key * base + c
                c = int(np.floor((q[dim - 1] - lo[dim - 1]) / r))
                k0 = key * base + c - 1
                k1 = k0 + 2
                a = np.searchsorted(skeys, k0)
                while a < n and skeys[a] <= k1:
                    j = order[a]
                    if keep[j]:
                        d2 = 0.0
                        for k in range(dim):
                            d2 += (P[j, k] - q[k]) ** 2
                        if d2 < r2:
                            ok = False
                            break
                    a += 1
                if not ok:
                    break
            if not ok:
                break
        keep[i] = ok
    return keep


def _greedy_thin_np(P, r, projective):
    n = len(P)
    keep = np.zeros(n, dtype=bool)
    if n == 0:
        return keep
    tree = cKDTree(P)
    kept_idx = []
    for i in range(n):
        cand = tree.query_ball_point(P[i], r - 1e-15 * r, return_sorted=False)
        if projective:
            cand = cand + tree.query_ball_point(-P[i], r - 1e-15 * r, return_sorted=False)
        if not any(keep[j] for j in cand):
            keep[i] = True
            kept_idx.append(i)
    return keep


def greedy_thin(P, r, projective=False):
    P = np.ascontiguousarray(P, dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    if _numba():
        return _greedy_thin_nb(P, float(r), bool(projective))
    return _greedy_thin_np(P, float(r), bool(projective))


# ---------------------------------------------------------------------------
# tube voxelisation on a global grid

@njit(cache=True)
def _seg_dist2(c, a, d):
    t = 0.0
    for k in range(4):
        t += (c[k] - a[k]) * d[k]
    if t < -0.5:
        t = -0.5
    elif t > 0.5:
        t = 0.5
    s = 0.0
    for k in range(4):
        s += (c[k] - a[k] - t * d[k]) ** 2
    return s


@njit(cache=True)
def _tube_voxels_nb(mids, dirs, delta, h, origin, n):
    # sweep voxel slabs along the dominant axis k of each tube; the section
    # of the tube by {x_k = c} spans delta*sqrt(1 + (d_j/d_k)^2) in x_j
    T = mids.shape[0]
    counts = np.zeros(T, dtype=np.int64)
    chunks = []
    c = np.empty(4)
    lo = np.empty(4, dtype=np.int64)
    hi = np.empty(4, dtype=np.int64)
    for i in range(T):
        d = dirs[i]
        a = mids[i]
        k = 0
        for j in range(1, 4):
            if abs(d[j]) > abs(d[k]):
                k = j
        dk = abs(d[k])
        e0 = a[k] - 0.5 * d[k]
        e1 = a[k] + 0.5 * d[k]
        s0 = int(np.floor((min(e0, e1) - delta - origin) / h))
        s1 = int(np.floor((max(e0, e1) + delta - origin) / h))
        if s0 < 0:
            s0 = 0
        if s1 > n - 1:
            s1 = n - 1
        cap = 64
        buf = np.empty(cap, dtype=np.int64)
        m = 0
        for sk in range(s0, s1 + 1):
            ck = origin + (sk + 0.5) * h
            t = (ck - a[k]) / d[k]
            if t < -0.5:
                t = -0.5
            elif t > 0.5:
                t = 0.5
            tot = 1
            for j in range(4):
                if j == k:
                    lo[j] = sk
                    hi[j] = sk
                else:
                    p = a[j] + t * d[j]
                    span = delta * np.sqrt(1.0 + (d[j] / dk) ** 2) * (1 + 1e-9)
                    lo[j] = max(0, int(np.floor((p - span - origin) / h)))
                    hi[j] = min(n - 1, int(np.floor((p + span - origin) / h)))
                    if hi[j] < lo[j]:
                        tot = 0
                    else:
                        tot *= hi[j] - lo[j] + 1
            for off in range(tot):
                o = off
                key = 0
                for j in range(4):
                    span = hi[j] - lo[j] + 1
                    ij = lo[j] + o % span
                    o //= span
                    c[j] = origin + (ij + 0.5) * h
                    key = key * n + ij
                if _seg_dist2(c, a, d) <= delta * delta * (1 + 1e-12):
                    if m == cap:
                        nb = np.empty(2 * cap, dtype=np.int64)
                        nb[:m] = buf[:m]
                        buf = nb
                        cap *= 2
                    buf[m] = key
                    m += 1
        u = np.unique(buf[:m])
        counts[i] = u.shape[0]
        chunks.append(u)
    ptr = np.zeros(T + 1, dtype=np.int64)
    for i in range(T):
        ptr[i + 1] = ptr[i] + counts[i]
    keys = np.empty(ptr[T], dtype=np.int64)
    for i in range(T):
        keys[ptr[i]:ptr[i + 1]] = chunks[i]
    return keys, ptr


def _tube_voxels_np(mids, dirs, delta, h, origin, n):
    rad = int(np.ceil(delta / h)) + 1
    side = 2 * rad + 1
    offs = np.stack(np.meshgrid(*([np.arange(side) - rad] * 4), indexing="ij"), -1).reshape(-1, 4)
    nsteps = int(np.ceil(1.0 / h)) + 1
    tt = np.linspace(-0.5, 0.5, nsteps)
    mult = n ** np.arange(3, -1, -1, dtype=np.int64)
    keys, ptr = [], [0]
    for i in range(len(mids)):
        base = np.floor((mids[i] + tt[:, None] * dirs[i] - origin) / h).astype(np.int64)
        cand = np.unique((base[:, None, :] + offs[None]).reshape(-1, 4), axis=0)
        cand = cand[np.all((cand >= 0) & (cand < n), axis=1)]
        ctr = origin + (cand + 0.5) * h
        rel = ctr - mids[i]
        t = np.clip(rel @ dirs[i], -0.5, 0.5)
        d2 = np.sum((rel - t[:, None] * dirs[i]) ** 2, axis=1)
        u = np.sort(cand[d2 <= delta * delta * (1 + 1e-12)] @ mult)
        keys.append(u)
        ptr.append(ptr[-1] + len(u))
    return (np.concatenate(keys) if keys else np.zeros(0, np.int64)), np.asarray(ptr, dtype=np.int64)


def tube_voxels(mids, dirs, delta, h, origin, n):
    """Voxel keys (sorted per tube, CSR by ``ptr``) whose centres lie within
    ``delta`` of the unit segment ``mid + t dir``, |t| <= 1/2."""
    mids = np.ascontiguousarray(mids, dtype=np.float64).reshape(-1, 4)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 4)
    if _numba():
        return _tube_voxels_nb(mids, dirs, float(delta), float(h), float(origin), int(n))
    return _tube_voxels_np(mids, dirs, float(delta), float(h), float(origin), int(n))
