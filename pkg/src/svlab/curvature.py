"""The phi-frame, second fundamental forms, quadratic cones and the
degeneracy dichotomy for ternary quadratic forms."""
from dataclasses import dataclass

import numpy as np

from .config import TOL
from .errors import InvalidArgument, SingularPoint
from .geometry import canonicalize_many, greedy_net
from .poly import gradient, hessian

# rows: phi_1, phi_2, phi_3 as signed permutation matrices acting on g
_PHI = np.array([
    [[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]],
    [[0, 0, -1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, -1, 0, 0]],
    [[0, 0, 0, -1], [0, 0, -1, 0], [0, 1, 0, 0], [1, 0, 0, 0]],
], dtype=np.float64)


def phi_frame(g):
    """(phi_0, phi_1, phi_2, phi_3) of g: pairwise orthogonal, each of norm |g|."""
    g = np.asarray(g, dtype=np.float64)
    if not np.any(g):
        raise InvalidArgument("phi frame of the zero vector")
    return (g.copy(),) + tuple(M @ g for M in _PHI)


def tangent_frames(G):
    """Normalized (phi_1, phi_2, phi_3) for each row of G; shape (N, 3, 4)."""
    G = np.asarray(G, dtype=np.float64).reshape(-1, 4)
    n = np.linalg.norm(G, axis=1)
    F = np.einsum("kij,nj->nki", _PHI, G)
    return F / n[:, None, None]


@dataclass
class SecondForm:
    base: np.ndarray
    matrix: np.ndarray
    frame: np.ndarray

    @property
    def inf_norm(self):
        return float(np.max(np.abs(self.matrix)))


def second_fundamental_form(P, z, grad_floor=None):
    """[a_ij] / |grad P|^3 with a_ij = (phi_i . grad)(phi_j . grad) P at z."""
    grad_floor = TOL.grad_floor if grad_floor is None else grad_floor
    z = np.asarray(z, dtype=np.float64)
    g = gradient(P, z)
    gn = np.linalg.norm(g)
    if gn < grad_floor:
        raise SingularPoint(f"|grad P| = {gn:.3g} below floor at {z}")
    F = np.array(phi_frame(g)[1:])
    H = hessian(P, z)
    A = F @ H @ F.T / gn ** 3
    A = 0.5 * (A + A.T)
    return SecondForm(z.copy(), A, F / gn)


def second_forms(P, Z):
    """Vectorized second fundamental form matrices, shape (N, 3, 3).
    Rows with vanishing gradient come back as NaN."""
    Z = np.asarray(Z, dtype=np.float64).reshape(-1, 4)
    G = gradient(P, Z).reshape(-1, 4)
    H = hessian(P, Z).reshape(-1, 4, 4)
    gn = np.linalg.norm(G, axis=1)
    F = np.einsum("kij,nj->nki", _PHI, G)
    with np.errstate(divide="ignore", invalid="ignore"):
        A = np.einsum("nki,nij,nlj->nkl", F, H, F) / gn[:, None, None] ** 3
    return 0.5 * (A + np.transpose(A, (0, 2, 1)))


# -- ternary quadratic forms -------------------------------------------------------------

def quad_coeff_scale(A):
    """Largest coefficient magnitude of x^T A x written as a polynomial."""
    A = np.asarray(A, dtype=np.float64)
    off = 2 * np.abs(A[np.triu_indices(len(A), 1)])
    return float(max(np.abs(np.diag(A)).max(), off.max() if off.size else 0.0))


def normalize_form(A):
    s = quad_coeff_scale(A)
    if s == 0:
        raise InvalidArgument("zero quadratic form")
    return np.asarray(A, dtype=np.float64) / s


def form_from_coeffs(a11=0.0, a22=0.0, a33=0.0, a12=0.0, a13=0.0, a23=0.0):
    """Symmetric matrix of a11 x1^2 + ... + a12 x1 x2 + ..."""
    return np.array([[a11, a12 / 2, a13 / 2], [a12 / 2, a22, a23 / 2], [a13 / 2, a23 / 2, a33]])


def cone_points(A, n=512, rng=None):
    """Points of {y in S^{k-1} : y^T A y = 0} for symmetric 3x3 A, by an
    explicit parametrization in the eigenbasis (exact up to rounding)."""
    A = 0.5 * (np.asarray(A, dtype=np.float64) + np.asarray(A, dtype=np.float64).T)
    lam, U = np.linalg.eigh(A)
    scale = np.abs(lam).max()
    if scale == 0:
        rng = np.random.default_rng(rng)
        Y = rng.normal(size=(n, 3))
        return Y / np.linalg.norm(Y, axis=1)[:, None]
    lam = np.where(np.abs(lam) <= 1e-14 * scale, 0.0, lam)
    pos, neg = np.sum(lam > 0), np.sum(lam < 0)
    if pos == 0 or neg == 0:
        if pos + neg == 3:
            return np.zeros((0, 3))
    # pick the pivot: a nonzero eigenvalue of the minority sign
    if pos == 0 or neg == 0:
        piv = int(np.argmax(np.abs(lam)))
    else:
        minority = 1.0 if pos <= neg else -1.0
        cand = np.nonzero(np.sign(lam) == minority)[0]
        piv = int(cand[np.argmax(np.abs(lam[cand]))])
    others = [i for i in range(3) if i != piv]
    th = np.linspace(0, np.pi, n, endpoint=False)
    c, s = np.cos(th), np.sin(th)
    q = lam[others[0]] * c * c + lam[others[1]] * s * s
    s2 = -q / lam[piv]
    ok = s2 >= -1e-15
    r = np.sqrt(np.clip(s2[ok], 0, None))
    base = np.zeros((ok.sum(), 3))
    base[:, others[0]] = c[ok]
    base[:, others[1]] = s[ok]
    Y = []
    for sign in (1.0, -1.0):
        b = base.copy()
        b[:, piv] = sign * r
        Y.append(b)
    Y = np.concatenate(Y)
    Y /= np.linalg.norm(Y, axis=1)[:, None]
    Y = Y @ U.T
    # one Newton polish step on the form along the sphere
    for _ in range(2):
        qv = np.einsum("ni,ij,nj->n", Y, A, Y)
        g = 2 * Y @ A
        g -= np.sum(g * Y, axis=1)[:, None] * Y
        gg = np.sum(g * g, axis=1)
        safe = gg > 1e-24
        Y[safe] -= (qv[safe] / gg[safe])[:, None] * g[safe]
        Y /= np.linalg.norm(Y, axis=1)[:, None]
    return Y


@dataclass
class QuadraticCone:
    base: np.ndarray
    linear: np.ndarray
    quad: np.ndarray

    @property
    def tangent_basis(self):
        return tangent_frames(self.linear)[0]

    @property
    def tangent_form(self):
        T = self.tangent_basis
        return T @ self.quad @ T.T

    def residuals(self, V):
        V = np.asarray(V, dtype=np.float64).reshape(-1, 4)
        return V @ self.linear, np.einsum("ni,ij,nj->n", V, self.quad, V)

    def contains(self, v, tol=None):
        tol = TOL.tol_cone if tol is None else tol
        a, b = self.residuals(v)
        out = (np.abs(a) <= tol) & (np.abs(b) <= tol)
        return bool(out[0]) if np.ndim(v) == 1 else out

    def sample(self, n=512, rng=None, canonical=True):
        """Unit directions v with v . grad = 0 and v^T H v = 0."""
        Y = cone_points(self.tangent_form, n, rng)
        V = Y @ self.tangent_basis
        return canonicalize_many(V) if (canonical and len(V)) else V

    def angle_to(self, v, n=4096):
        """Angle from the line through v to the nearest cone direction."""
        S = self.sample(n, canonical=False)
        if len(S) == 0:
            return np.inf
        V = np.asarray(v, dtype=np.float64).reshape(-1, 4)
        V = V / np.linalg.norm(V, axis=1)[:, None]
        c = np.abs(V @ S.T).max(axis=1)
        out = np.arccos(np.clip(c, 0, 1))
        return float(out[0]) if np.ndim(v) == 1 else out

    def degeneracy(self, w, seed=0):
        return degeneracy_test(normalize_form(self.tangent_form), w, seed=seed)


def quadratic_cone(P, z, grad_floor=None):
    grad_floor = TOL.grad_floor if grad_floor is None else grad_floor
    z = np.asarray(z, dtype=np.float64)
    g = gradient(P, z)
    if np.linalg.norm(g) < grad_floor:
        raise SingularPoint("cone at a singular point")
    return QuadraticCone(z.copy(), g, hessian(P, z))


# -- two-variable quadratics ---------------------------------------------------------------

def quadratic_curve_neighborhood(a11, a12, a22, t=None):
    """Normals (in the x1,x2 plane) of the two lines of
    a11 x1^2 + a12 x1 x2 + a22 x2^2 from the real parts of its root formula.

    Where that formula collapses to a zero linear form (a22 = 0) the lines
    come from the roots of Q(1, y) instead, with x1 = 0 standing for the
    root at infinity."""
    co = np.array([a11, a12, a22], dtype=np.float64)
    if not np.any(co):
        raise InvalidArgument("Q is identically zero")
    if abs(np.abs(co).max() - 1.0) > 1e-12:
        raise InvalidArgument("Q must have unit largest coefficient")
    root = np.sqrt(complex(a12 * a12 - 4 * a11 * a22)).real
    forms = [np.array([a12 + root, 2 * a22]), np.array([a12 - root, 2 * a22])]
    if any(np.linalg.norm(f) <= 1e-12 for f in forms):
        forms = _factor_lines(a11, a12, a22)
    return tuple(f / np.linalg.norm(f) for f in forms)


def _factor_lines(a11, a12, a22):
    if abs(a22) > 1e-12:
        rts = np.roots([a22, a12, a11])
        return [np.array([r.real, -1.0]) for r in rts]
    if abs(a12) > 1e-12:
        # x1 (a11 x1 + a12 x2)
        return [np.array([1.0, 0.0]), np.array([a11, a12])]
    return [np.array([1.0, 0.0]), np.array([1.0, 0.0])]


# -- degeneracy ---------------------------------------------------------------------------------

@dataclass
class DegeneracyVerdict:
    degenerate: bool
    witness_w: float
    circles: np.ndarray | None  # 2x3 unit normals

    @property
    def kind(self):
        return "Degenerate" if self.degenerate else "NonDegenerate"

    def to_json(self):
        out = {"kind": self.kind, "witness_w": float(self.witness_w)}
        if self.circles is not None:
            out["circles"] = np.asarray(self.circles).tolist()
        return out


def zero_set_sample(A, resolution):
    """Z(x^T A x) on S^2 thinned to ``resolution``."""
    n = int(np.ceil(8 * np.pi / resolution)) + 64
    Y = cone_points(A, n, rng=0)
    if len(Y) == 0:
        return Y
    return Y[greedy_net(Y, resolution, "projective")]


def circle_distance(X, normals):
    """Angular distance from each point to the union of great circles."""
    d = np.abs(np.asarray(X) @ np.asarray(normals).T)
    return np.arcsin(np.clip(d.min(axis=1), 0, 1))


def fit_two_circles(X, restarts=None, seed=0, iters=40):
    """Best pair of great circles for points X on S^2 (min of max distance).

    Alternating assignment + smallest-singular-vector refits, seeded
    restarts. Ties go to the smaller witness (first found wins)."""
    restarts = TOL.restarts if restarts is None else restarts
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(seed)

    def fit_normal(Y):
        if len(Y) < 2:
            base = Y[0] if len(Y) else np.array([0, 0, 1.0])
            _, _, vt = np.linalg.svd(base[None])
            return vt[-1]
        return np.linalg.svd(Y, full_matrices=False)[2][-1]

    best = None
    single = fit_normal(X)
    inits = [np.array([single, single])]
    for _ in range(restarts):
        N = rng.normal(size=(2, 3))
        inits.append(N / np.linalg.norm(N, axis=1)[:, None])
    for N in inits:
        N = N.copy()
        for _ in range(iters):
            lab = np.argmin(np.abs(X @ N.T), axis=1)
            newN = np.array([fit_normal(X[lab == k]) if np.any(lab == k) else N[k] for k in range(2)])
            if np.allclose(np.abs(np.sum(newN * N, axis=1)), 1.0, atol=1e-13):
                N = newN
                break
            N = newN
        wit = float(circle_distance(X, N).max())
        if best is None or wit < best[0] - 1e-15:
            best = (wit, N)
    return best[1], best[0]


def degeneracy_test(A, w, seed=0, restarts=None):
    """Is Z(Q) on S^2 within w of two great circles? ``A`` is the symmetric
    matrix of Q with unit largest coefficient."""
    A = np.asarray(A, dtype=np.float64)
    if not (0 < w < 0.5):
        raise InvalidArgument("w must lie in (0, 1/2)")
    if abs(quad_coeff_scale(A) - 1.0) > 1e-9:
        raise InvalidArgument("Q3 must have unit largest coefficient")
    X = zero_set_sample(A, w / 8)
    if len(X) == 0:
        return DegeneracyVerdict(True, 0.0, np.array([[0, 0, 1.0], [0, 0, 1.0]]))
    N, wit = fit_two_circles(X, restarts=restarts, seed=seed)
    if wit <= w:
        return DegeneracyVerdict(True, wit, N)
    return DegeneracyVerdict(False, wit, None)


def dichotomy_check(A, w, c, n=4000, ts=(1e-3, 1e-2, 1e-1), seed=0):
    """Empirical check of the degenerate / non-degenerate dichotomy for Q.

    Returns (branch, holds, detail)."""
    rng = np.random.default_rng(seed)
    verdict = degeneracy_test(A, w, seed=seed)
    X = rng.normal(size=(n, 3))
    X /= np.linalg.norm(X, axis=1)[:, None]
    q = np.einsum("ni,ij,nj->n", X, A, X)
    if verdict.degenerate:
        sub = X[np.abs(q) <= c * w * w]
        # enrich with points pushed onto the sublevel boundary region
        worst = float(circle_distance(sub, verdict.circles).max()) if len(sub) else 0.0
        return "degenerate", worst <= w, {"worst": worst, "witness": verdict.witness_w}
    Zs = zero_set_sample(A, min(w / 8, 1e-2))
    worst_ratio = 0.0
    for t in ts:
        sub = X[np.abs(q) <= c * t]
        if len(sub) == 0 or len(Zs) == 0:
            continue
        d = np.arccos(np.clip(np.abs(sub @ Zs.T).max(axis=1), 0, 1))
        # sample of Z(Q) has spacing <= resolution; subtract it as slack
        worst_ratio = max(worst_ratio, float(d.max() - min(w / 8, 1e-2)) / (t / w ** 2))
    return "nondegenerate", worst_ratio <= 1.0, {"worst_ratio": worst_ratio, "witness": verdict.witness_w}


# -- flat and curved pieces --------------------------------------------------------------------

def hyperplane_fit(points):
    """Total-least-squares hyperplane: (normal, offset, max |residual|)."""
    X = np.asarray(points, dtype=np.float64)
    mu = X.mean(axis=0)
    _, _, vt = np.linalg.svd(X - mu, full_matrices=False)
    n = vt[-1]
    r = (X - mu) @ n
    return n, float(n @ mu), float(np.abs(r).max())
