"""Dense real polynomials in four variables.

A :class:`Polynomial4` stores one coefficient per multi-index of total degree
at most ``degree``. Derivatives are taken symbolically on the coefficient
table, so directional derivatives of any order are exact contractions rather
than difference quotients.
"""
import ast
import json
import math
from functools import cached_property
from itertools import product

import numpy as np
from numpy.polynomial import polynomial as npoly

from . import _kernels
from .errors import InvalidArgument


def monomial_basis(D):
    """All multi-indices with total degree <= D, graded then lexicographic."""
    idx = [a for a in product(range(D + 1), repeat=4) if sum(a) <= D]
    idx.sort(key=lambda a: (sum(a), tuple(-x for x in a)))
    return np.array(idx, dtype=np.int64).reshape(-1, 4)


_HESS_PAIRS = [(i, j) for i in range(4) for j in range(i, 4)]


class Polynomial4:
    """Real polynomial in x1..x4 with a total-degree bound."""

    __slots__ = ("degree", "exps", "coef", "__dict__")

    def __init__(self, coeffs=None, degree=None):
        coeffs = dict(coeffs or {})
        clean = {}
        for idx, c in coeffs.items():
            idx = tuple(int(i) for i in idx)
            if len(idx) != 4 or min(idx) < 0:
                raise InvalidArgument(f"bad multi-index {idx}")
            c = float(c)
            if c != 0.0:
                clean[idx] = clean.get(idx, 0.0) + c
        top = max((sum(i) for i in clean), default=0)
        if degree is None:
            degree = max(top, 1)
        degree = int(degree)
        if degree < 1:
            raise InvalidArgument("degree bound must be >= 1")
        if top > degree:
            raise InvalidArgument(f"term of degree {top} exceeds bound {degree}")
        self.degree = degree
        basis = monomial_basis(degree)
        self.exps = basis
        self.coef = np.array([clean.get(tuple(a), 0.0) for a in basis], dtype=np.float64)

    # -- construction -----------------------------------------------------
    @classmethod
    def _from_arrays(cls, degree, coef):
        p = cls.__new__(cls)
        p.degree = int(degree)
        p.exps = monomial_basis(degree)
        p.coef = np.asarray(coef, dtype=np.float64).copy()
        return p

    @classmethod
    def constant(cls, c, degree=1):
        return cls({(0, 0, 0, 0): c}, degree)

    @classmethod
    def var(cls, k, degree=1):
        idx = [0, 0, 0, 0]
        idx[k] = 1
        return cls({tuple(idx): 1.0}, degree)

    @classmethod
    def from_json(cls, obj):
        if isinstance(obj, str):
            obj = json.loads(obj)
        try:
            terms = {tuple(t["idx"]): t["c"] for t in obj["terms"]}
            return cls(terms, obj["degree"])
        except (KeyError, TypeError) as e:
            raise InvalidArgument(f"malformed polynomial JSON: {e}") from None

    @classmethod
    def parse(cls, text, degree=None):
        """Parse an arithmetic expression in x1..x4, e.g. ``"x1*x2 - x3*x4"``."""
        try:
            tree = ast.parse(text.strip(), mode="eval")
        except SyntaxError as e:
            raise InvalidArgument(f"cannot parse polynomial {text!r}: {e.msg}") from None
        p = _eval_ast(tree.body)
        if not isinstance(p, Polynomial4):
            p = cls.constant(p)
        if degree is not None:
            p = p.with_degree(degree)
        return p

    def to_json(self):
        terms = [{"idx": [int(i) for i in a], "c": float(c)}
                 for a, c in zip(self.exps, self.coef) if c != 0.0]
        return {"degree": self.degree, "terms": terms}

    @property
    def coeffs(self):
        return {tuple(int(i) for i in a): float(c) for a, c in zip(self.exps, self.coef) if c != 0.0}

    def with_degree(self, D):
        return Polynomial4(self.coeffs, D)

    @property
    def total_degree(self):
        nz = self.coef != 0
        return int(self.exps[nz].sum(axis=1).max()) if nz.any() else 0

    def scale(self):
        return float(np.max(np.abs(self.coef))) if self.coef.size else 0.0

    # -- arithmetic -------------------------------------------------------
    def _lift(self, other):
        if isinstance(other, Polynomial4):
            return other
        return Polynomial4.constant(float(other), self.degree)

    def __add__(self, other):
        o = self._lift(other)
        d = dict(self.coeffs)
        for k, v in o.coeffs.items():
            d[k] = d.get(k, 0.0) + v
        return Polynomial4(d, max(self.degree, o.degree))

    __radd__ = __add__

    def __neg__(self):
        return Polynomial4._from_arrays(self.degree, -self.coef)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, Polynomial4):
            return Polynomial4._from_arrays(self.degree, self.coef * float(other))
        d = {}
        for a, ca in self.coeffs.items():
            for b, cb in other.coeffs.items():
                k = tuple(x + y for x, y in zip(a, b))
                d[k] = d.get(k, 0.0) + ca * cb
        return Polynomial4(d, max(1, self.total_degree + other.total_degree))

    __rmul__ = __mul__

    def __truediv__(self, t):
        return self * (1.0 / float(t))

    def __pow__(self, n):
        n = int(n)
        if n < 0:
            raise InvalidArgument("negative power")
        out = Polynomial4.constant(1.0, 1)
        for _ in range(n):
            out = out * self
        return out

    def __eq__(self, other):
        return isinstance(other, Polynomial4) and self.coeffs == other.coeffs

    def __hash__(self):
        return hash(tuple(sorted(self.coeffs.items())))

    def __repr__(self):
        parts = []
        for a, c in self.coeffs.items():
            mono = "*".join(f"x{k + 1}" + (f"**{e}" if e > 1 else "") for k, e in enumerate(a) if e)
            parts.append(f"{c:+g}" + (f"*{mono}" if mono else ""))
        return f"Polynomial4({' '.join(parts) or '0'}; D={self.degree})"

    # -- calculus -----------------------------------------------------------
    def derivative(self, k):
        """Partial derivative in x_{k+1}; keeps the degree bound."""
        c = np.zeros_like(self.coef)
        lookup = self._index
        for m, (a, ca) in enumerate(zip(self.exps, self.coef)):
            if ca == 0.0 or a[k] == 0:
                continue
            b = a.copy()
            b[k] -= 1
            c[lookup[tuple(b)]] += ca * a[k]
        return Polynomial4._from_arrays(self.degree, c)

    def directional(self, v):
        """The polynomial (v . grad) P."""
        v = np.asarray(v, dtype=np.float64)
        c = sum(v[k] * self._grad_polys[k].coef for k in range(4))
        return Polynomial4._from_arrays(self.degree, c)

    @cached_property
    def _index(self):
        return {tuple(a): i for i, a in enumerate(self.exps)}

    @cached_property
    def _grad_polys(self):
        return [self.derivative(k) for k in range(4)]

    @cached_property
    def bank(self):
        """Coefficient matrix of (P, dP/dx_k, d2P/dx_i dx_j for i<=j)."""
        rows = [self.coef] + [g.coef for g in self._grad_polys]
        rows += [self._grad_polys[i].derivative(j).coef for i, j in _HESS_PAIRS]
        return np.ascontiguousarray(np.array(rows))

    def normalize(self):
        s = self.scale()
        if s == 0.0:
            raise InvalidArgument("cannot normalize the zero polynomial")
        out = Polynomial4._from_arrays(self.degree, self.coef / s)
        # clamp the extremal coefficient so max |c| is exactly one
        i = int(np.argmax(np.abs(out.coef)))
        out.coef[i] = math.copysign(1.0, out.coef[i])
        return out

    def __call__(self, x):
        return evaluate(self, x)


def _eval_ast(node):
    if isinstance(node, ast.BinOp):
        a, b = _eval_ast(node.left), _eval_ast(node.right)
        if isinstance(node.op, ast.Add):
            return a + b
        if isinstance(node.op, ast.Sub):
            return a - b
        if isinstance(node.op, ast.Mult):
            return a * b
        if isinstance(node.op, ast.Div):
            if isinstance(b, Polynomial4):
                raise InvalidArgument("division by a polynomial")
            return a / b
        if isinstance(node.op, ast.Pow):
            if isinstance(b, Polynomial4):
                raise InvalidArgument("polynomial exponent")
            if isinstance(a, Polynomial4):
                return a ** int(b)
            return a ** b
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _eval_ast(node.operand)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return float(node.value)
    if isinstance(node, ast.Name) and node.id in ("x1", "x2", "x3", "x4"):
        return Polynomial4.var(int(node.id[1]) - 1)
    raise InvalidArgument(f"unsupported expression element: {ast.dump(node)[:60]}")


class UniPoly:
    """Univariate polynomial, ascending coefficients, length D+1."""

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=np.float64)

    def __call__(self, t):
        return npoly.polyval(t, self.coeffs)

    @property
    def degree(self):
        nz = np.nonzero(self.coeffs)[0]
        return int(nz[-1]) if nz.size else 0

    def __repr__(self):
        return f"UniPoly({self.coeffs.tolist()})"


# -- operations --------------------------------------------------------------

def _points(x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    return x.reshape(-1, 4), single


def evaluate(P, x):
    X, single = _points(x)
    v = _kernels.bank_eval(X, P.exps, P.coef[None, :])[:, 0]
    return float(v[0]) if single else v


def gradient(P, x):
    X, single = _points(x)
    g = _kernels.bank_eval(X, P.exps, P.bank[1:5])
    return g[0] if single else g


def hessian(P, x):
    X, single = _points(x)
    h = _kernels.bank_eval(X, P.exps, P.bank[5:15])
    H = np.empty((len(X), 4, 4))
    for r, (i, j) in enumerate(_HESS_PAIRS):
        H[:, i, j] = h[:, r]
        H[:, j, i] = h[:, r]
    return H[0] if single else H


def directional_derivative(P, x, v, j):
    """(v . grad)^j P at x for j in {1, 2, 3}."""
    if j not in (1, 2, 3) or isinstance(j, bool):
        raise InvalidArgument(f"derivative order must be 1, 2 or 3, got {j!r}")
    v = np.asarray(v, dtype=np.float64)
    if abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise InvalidArgument("direction must be a unit vector")
    Q = P
    for _ in range(j):
        Q = Q.directional(v)
    return evaluate(Q, x)


def restrict_to_line(P, line):
    """Coefficients of t -> P(anchor + t dir)."""
    a = np.asarray(line.anchor, dtype=np.float64)
    d = np.asarray(line.dir, dtype=np.float64)
    D = P.degree
    # powers of each affine coordinate a_k + t d_k
    pw = [[np.array([1.0])] for _ in range(4)]
    for k in range(4):
        for e in range(1, D + 1):
            pw[k].append(npoly.polymul(pw[k][-1], [a[k], d[k]]))
    out = np.zeros(D + 1)
    for idx, c in zip(P.exps, P.coef):
        if c == 0.0:
            continue
        term = np.array([c])
        for k in range(4):
            if idx[k]:
                term = npoly.polymul(term, pw[k][idx[k]])
        out[:len(term)] += term
    return UniPoly(out)


def sublevel_measure(P, box, lam, n_samples=10_000, rng=None):
    """Monte-Carlo estimate of |{x in box : |P(x)| <= lam sup_box |P|}|.

    ``box`` is a pair (lo, hi) of 4-vectors. Returns (estimate, std_error).
    """
    if not (0.0 < lam < 1.0):
        raise InvalidArgument("lambda must lie in (0, 1)")
    if n_samples < 10_000:
        raise InvalidArgument("need at least 1e4 samples")
    lo, hi = (np.asarray(b, dtype=np.float64) for b in box)
    if np.any(hi <= lo):
        raise InvalidArgument("empty box")
    rng = np.random.default_rng(rng)
    vol = float(np.prod(hi - lo))
    X = lo + (hi - lo) * rng.random((n_samples, 4))
    vals = np.abs(evaluate(P, X))
    frac = np.mean(vals <= lam * vals.max())
    se = vol * math.sqrt(frac * (1 - frac) / n_samples)
    return vol * float(frac), se


def remez_bound(D, box, lam, d=4):
    lo, hi = (np.asarray(b, dtype=np.float64) for b in box)
    return 4 * d * float(np.prod(hi - lo)) * lam ** (1.0 / D)


def random_polynomial(D, rng, dense=True):
    """Uniform(-1, 1) coefficients on every monomial of degree <= D, normalized."""
    rng = np.random.default_rng(rng)
    basis = monomial_basis(D)
    c = rng.uniform(-1, 1, len(basis))
    if not dense:
        c[rng.random(len(basis)) < 0.5] = 0.0
    top = basis.sum(axis=1) == D
    if not np.any(c[top] != 0):
        c[np.nonzero(top)[0][0]] = 1.0
    return Polynomial4._from_arrays(D, c).normalize()


X1, X2, X3, X4 = (Polynomial4.var(k) for k in range(4))
