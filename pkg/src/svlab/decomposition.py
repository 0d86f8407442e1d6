"""Split an enumerated line set into four classes, cover three of them by
anisotropic prisms and fit a quadric to the fourth."""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from . import _kernels
from .broadness import DirectionSet, classify_point
from .config import TOL
from .curvature import QuadraticCone
from .errors import DegenerateQuadric, InsufficientPoints, InvalidArgument, SingularPoint
from .geometry import Line, chord_lengths, covering_number, greedy_prism_cover, line_distance
from .poly import Polynomial4, evaluate, gradient, hessian, monomial_basis, restrict_to_line
from .variety import (LineSet, enumerate_lines, gradient_dyadic_decomposition, sample_surface,
                      t_grid)

LABEL_CLASS = {"Narrow1": 1, "Narrow22": 2, "Flat": 3, "Broad": 4}
# k long axes per class
COVER_AXES = {1: 1, 2: 2, 3: 3}


def check_params(delta, s, u, kappa):
    if not (0 < delta < u < s < 1):
        raise InvalidArgument(f"need 0 < delta < u < s < 1, got delta={delta}, u={u}, s={s}")
    if not (delta < kappa < 1):
        raise InvalidArgument(f"need delta < kappa < 1, got kappa={kappa}")


# -- quadric fitting ----------------------------------------------------------------------------

@dataclass
class QuadricFit:
    Q: Polynomial4
    residual: float
    rank: int
    singular_values: np.ndarray = field(repr=False)

    @property
    def unique(self):
        return self.rank == 14


def _design(X):
    E = monomial_basis(2)
    return np.prod(X[:, None, :] ** E[None, :, :], axis=2)


def fit_quadric(points, rank_rtol=1e-9):
    """Least-squares degree-2 hypersurface through the points."""
    X = np.asarray(points, dtype=np.float64).reshape(-1, 4)
    if len(X) < 14:
        raise InsufficientPoints(f"need at least 14 points, got {len(X)}")
    M = _design(X)
    # column scaling keeps the SVD well conditioned on small clouds
    cs = np.linalg.norm(M, axis=0)
    cs[cs == 0] = 1.0
    _, sv, vt = np.linalg.svd(M / cs, full_matrices=len(X) < 15)
    rank = int(np.sum(sv > rank_rtol * sv[0]))
    q = vt[-1] / cs
    q /= q[np.argmax(np.abs(q))]
    Q = Polynomial4._from_arrays(2, q)
    res = float(np.abs(M @ q).max())
    return QuadricFit(Q, res, rank, sv)


# -- quadric line matching ----------------------------------------------------------------------

@dataclass
class Sigma4Match:
    line_id: int
    distance: float
    passed: bool
    found: bool
    match: Line | None = None


def _line_in_zero_set(Q, line, tol=1e-12):
    return np.abs(restrict_to_line(Q, line).coeffs).max() <= tol * max(1.0, Q.scale())


def _newton_to(Q, z):
    Z, ok = _kernels.newton_project(np.atleast_2d(z), Q.exps, Q.bank[:5], 1e-14, 60)
    return Z[0], bool(ok[0])


def nearest_quadric_line(Q, line, multistarts=None, feas_tol=1e-8):
    """Closest line of Z(Q) to ``line`` (anchor offset + angle), or None."""
    multistarts = TOL.sigma4_multistarts if multistarts is None else multistarts
    if _line_in_zero_set(Q, line):
        return line, 0.0
    a0, v0 = line.anchor, line.dir
    # Q(z) = q0 + b.z + z^T H z / 2 exactly
    q0 = float(evaluate(Q, np.zeros(4)))
    b = gradient(Q, np.zeros(4))
    H = hessian(Q, np.zeros(4))

    def cons(x):
        z, v = x[:4], x[4:]
        g = b + H @ z
        return np.array([q0 + b @ z + 0.5 * z @ H @ z, g @ v, v @ H @ v, v @ v - 1.0])

    def cons_jac(x):
        z, v = x[:4], x[4:]
        g = b + H @ z
        J = np.zeros((4, 8))
        J[0, :4] = g
        J[1, :4] = H @ v
        J[1, 4:] = g
        J[2, 4:] = 2 * H @ v
        J[3, 4:] = 2 * v
        return J

    best = None
    for t0 in np.linspace(-0.7, 0.7, multistarts):
        z, ok = _newton_to(Q, a0 + t0 * v0)
        if not ok:
            continue
        g = b + H @ z
        if np.linalg.norm(g) < 1e-10:
            continue
        S = QuadraticCone(z, g, H).sample(720, canonical=False)
        if len(S) == 0:
            continue
        i = int(np.argmax(np.abs(S @ v0)))
        sgn = 1.0 if S[i] @ v0 >= 0 else -1.0

        def obj(x, sgn=sgn):
            d = x[:4] - a0
            dv = d @ v0
            perp = d - dv * v0
            e = x[4:] - sgn * v0
            f = perp @ perp + e @ e + 1e-3 * dv * dv
            return f, np.concatenate([2 * perp + 2e-3 * dv * v0, 2 * e])

        r = minimize(obj, np.concatenate([z, S[i]]), jac=True, method="SLSQP",
                     constraints=[{"type": "eq", "fun": cons, "jac": cons_jac}],
                     options={"ftol": 1e-15, "maxiter": 200})
        x = r.x
        if np.abs(cons(x)).max() > feas_tol:
            continue
        cand = Line.through(x[:4], x[4:] / np.linalg.norm(x[4:]))
        d = line_distance(cand, line)
        if best is None or d < best[1]:
            best = (cand, d)
    return best if best is not None else (None, math.inf)


def verify_sigma4(lines, Q, tol_factor, delta, rank=None, multistarts=None):
    """Per-line distance from each line to the nearest line of Z(Q)."""
    if rank is not None and rank < 14:
        raise DegenerateQuadric(f"quadric fit has rank {rank} < 14")
    out = []
    for i, ln in enumerate(lines):
        m, d = nearest_quadric_line(Q, ln, multistarts)
        out.append(Sigma4Match(i, float(d), bool(d <= tol_factor * delta), m is not None, m))
    return out


# -- direction count ------------------------------------------------------------------------------

def direction_count(lines, delta):
    if isinstance(lines, LineSet):
        D = lines.dirs
    else:
        D = np.array([l.dir for l in lines]).reshape(-1, 4)
    return covering_number(D, delta, "sphere")


# -- the pipeline ---------------------------------------------------------------------------------

@dataclass
class DecompositionReport:
    lines: LineSet
    class_of: np.ndarray
    covers: dict
    assignment: dict
    quadric: QuadricFit | None
    sigma4_source: str | None
    sigma4_matched: list
    params: dict
    site_labels: list
    counts: dict
    piece_count: int

    def class_counts(self):
        return {k: int(np.sum(self.class_of == k)) for k in (1, 2, 3, 4)}

    def cover_sound(self, tol_cover=None):
        """Every class-1/2/3 line is covered by its assigned prism."""
        tol_cover = TOL.tol_cover if tol_cover is None else tol_cover
        for k in (1, 2, 3):
            idx = np.nonzero(self.class_of == k)[0]
            if idx.size == 0:
                continue
            a = self.assignment[k]
            if np.any(a < 0):
                return False
            for p, pr in enumerate(self.covers[k]):
                sel = idx[a == p]
                if sel.size and np.any(chord_lengths(self.lines.anchors[sel], self.lines.dirs[sel], pr)
                                       < 2.0 - tol_cover):
                    return False
        return True

    def matched_fraction(self):
        if not self.sigma4_matched:
            return None
        return float(np.mean([m.passed for m in self.sigma4_matched]))

    def to_json(self):
        q = self.quadric
        return {
            "params": self.params,
            "n_lines": len(self.lines),
            "class_counts": {str(k): v for k, v in self.class_counts().items()},
            "cover_counts": {str(k): len(self.covers[k]) for k in (1, 2, 3)},
            "covers": {str(k): [p.to_json() for p in self.covers[k]] for k in (1, 2, 3)},
            "quadric": None if q is None else {
                "coeffs": q.Q.to_json(), "residual": q.residual, "rank": q.rank},
            "sigma4_source": self.sigma4_source,
            "sigma4_matched_fraction": self.matched_fraction(),
            "sigma4_distances": [m.distance for m in self.sigma4_matched],
            "piece_count": self.piece_count,
            "counts": self.counts,
        }


def _merge_linesets(parts, delta, c, n_t, net):
    if not parts:
        return LineSet(np.zeros((0, 4)), np.zeros((0, 4)), np.zeros(0, np.int64),
                       np.zeros((0, n_t), bool), delta, c, n_t, net), np.zeros(0, np.int64)
    A = np.concatenate([p.anchors for p in parts])
    D = np.concatenate([p.dirs for p in parts])
    I = np.concatenate([p.dir_index for p in parts])
    Hh = np.concatenate([p.hits for p in parts])
    piece = np.concatenate([np.full(len(p), j) for j, p in enumerate(parts)])
    cells = np.floor(A / delta).astype(np.int64) + 4096
    key = I * (8192 ** 4) + (((cells[:, 0] * 8192 + cells[:, 1]) * 8192 + cells[:, 2]) * 8192 + cells[:, 3])
    _, first = np.unique(key, return_index=True)
    first = np.sort(first)
    return LineSet(A[first], D[first], I[first], Hh[first], delta, c, n_t, net), piece[first]


def severi_decompose(P, delta, s, u, kappa, c, w=None, anchor_spacing=None, site_spacing=None,
                     votes_per_line=16, sample=None, tol=None, seed=0, verify=True, tol_factor=10.0):
    """Run the four-way split on the lines of Z(P) at scale delta."""
    check_params(delta, s, u, kappa)
    tol = tol or TOL
    w = u if w is None else w
    anchor_spacing = max(1 / 8, 2 * delta) if anchor_spacing is None else anchor_spacing
    site_spacing = max(1 / 8, 2 * delta) if site_spacing is None else site_spacing
    params = {"delta": delta, "s": s, "u": u, "kappa": kappa, "c": c, "w": w}
    sample = sample_surface(P, delta) if sample is None else sample
    n_t = tol.n_t
    if len(sample) == 0:
        pieces = []
    else:
        pieces = gradient_dyadic_decomposition(P, sample, delta)

    # (b) lines per piece, anchored on the piece's region
    parts, site_pts, site_piece = [], [], []
    for j, pc in enumerate(pieces):
        sub = sample.subset(pc.region)
        ls = enumerate_lines(pc.P_j, sub, delta, c, anchor_spacing=anchor_spacing, tol=tol)
        parts.append(ls)
        keep = _kernels.greedy_thin(sub.points, site_spacing) if site_spacing > sample.spacing \
            else np.arange(len(sub))
        site_pts.append(sub.points[keep])
        site_piece.append(np.full(len(keep), j))
    net = parts[0].net if parts else None
    lines, _ = _merge_linesets([p for p in parts if len(p)], delta, c, n_t, net)
    L = len(lines)
    sites = np.concatenate(site_pts) if site_pts else np.zeros((0, 4))
    spiece = np.concatenate(site_piece) if site_piece else np.zeros(0, np.int64)

    class_of = np.zeros(L, dtype=np.int64)
    labels = []
    if L:
        # (c) incidences vote through their nearest classification site
        ids, xs = lines.incidence_arrays(per_line=votes_per_line)
        _, near = cKDTree(sites).query(xs)
        dirsets = {}
        for sidx in np.unique(near):
            lid = np.unique(ids[near == sidx])
            di = np.unique(lines.dir_index[lid])
            dirsets[sidx] = lines.net.points[di]
        site_label = {}
        for sidx in sorted(dirsets):
            z = sites[sidx]
            Pj = pieces[spiece[sidx]].P_j
            V = DirectionSet(z, dirsets[sidx], delta)
            try:
                lab = classify_point(Pj, z, V, {"kappa": kappa, "s": s, "u": u, "w": w}, seed=seed)
            except SingularPoint:
                continue
            site_label[sidx] = lab
            labels.append((z, lab))
        votes = np.zeros((L, 5))
        for lid, sidx in zip(ids, near):
            lab = site_label.get(sidx)
            if lab is not None:
                votes[lid, LABEL_CLASS[lab.label]] += 1
        tot = votes.sum(axis=1)
        for i in range(L):
            if tot[i] == 0:
                class_of[i] = 3 if len(site_label) == 0 else 4
                continue
            frac = votes[i] / tot[i]
            # cascade Flat > Narrow1 > Narrow22 > Broad at one third
            for k in (3, 1, 2, 4):
                if frac[k] >= 1 / 3 - 1e-12:
                    class_of[i] = k
                    break
            else:
                order = [3, 1, 2, 4]
                class_of[i] = max(order, key=lambda k: (frac[k], -order.index(k)))

    # (d) covers
    t_of = {1: s, 2: u, 3: kappa}
    covers, assignment = {}, {}
    all_lines = lines.lines() if L else []
    for k in (1, 2, 3):
        idx = np.nonzero(class_of == k)[0]
        pr, a = greedy_prism_cover([all_lines[i] for i in idx], COVER_AXES[k], t_of[k],
                                   tol_cover=tol.tol_cover)
        covers[k], assignment[k] = pr, a

    # (e) quadric on class-4 incidences; without class 4, on the curved classes
    quadric, source, matched = None, None, []
    cls4 = np.nonzero(class_of == 4)[0]
    curved = np.nonzero((class_of == 1) | (class_of == 2))[0]
    fit_ids = cls4 if cls4.size else curved
    if fit_ids.size:
        source = "class4" if cls4.size else "curved"
        ids, xs = lines.incidence_arrays(per_line=votes_per_line)
        sel = np.isin(ids, fit_ids)
        Zp, ok = _kernels.newton_project(xs[sel], P.exps, P.bank[:5], tol.newton_tol * P.scale(),
                                         tol.newton_maxit)
        pts = Zp[ok]
        if len(pts) >= 14:
            quadric = fit_quadric(pts)
            if verify and quadric.rank == 14:
                check = fit_ids if fit_ids.size <= 200 else fit_ids[
                    np.linspace(0, fit_ids.size - 1, 200).round().astype(int)]
                matched = verify_sigma4([all_lines[i] for i in check], quadric.Q, tol_factor, delta,
                                        rank=quadric.rank)
                for m, i in zip(matched, check):
                    m.line_id = int(i)

    counts = {"lines": L, "sites": int(len(sites)), "labelled_sites": len(labels),
              "E_delta_dir": direction_count(lines, delta) if L else 0}
    return DecompositionReport(lines, class_of, covers, assignment, quadric, source, matched, params,
                               labels, counts, len(pieces))


def scenario_params(delta):
    """Default (s, u, kappa, c) for a scale, satisfying the ordering."""
    s = max(0.15, 2.5 * delta)
    u = max(0.1, 1.5 * delta)
    kappa = max(0.25, 2 * delta)
    return {"s": s, "u": u, "kappa": kappa, "c": 1.0}


def cover_constants(report):
    """|covers_i| over its shape bound: s^-2, u^-1 and 1, each times log2(1/delta)."""
    p = report.params
    lg = math.log2(1 / p["delta"])
    shape = {1: p["s"] ** -2 * lg, 2: p["u"] ** -1 * lg, 3: lg}
    return {k: len(report.covers[k]) / shape[k] for k in (1, 2, 3)}
