import math

import numpy as np
import pytest

from svlab.decomposition import (cover_constants, direction_count, fit_quadric, scenario_params,
                                 severi_decompose, verify_sigma4)
from svlab.errors import DegenerateQuadric, InsufficientPoints, InvalidArgument
from svlab.geometry import Line, chord_lengths, covering_number, prism_rescale_map, canonicalize_many
from svlab.poly import X1, X2, X3, X4, evaluate

SADDLE = X1 * X2 - X3 * X4


def saddle_points(n, rng):
    # x3 = 1 when x1 x2 = x4, so points (a, b, c, ab/c) for c away from 0
    a, b = rng.uniform(-1, 1, (2, n))
    c = rng.uniform(0.5, 1, n) * rng.choice([-1, 1], n)
    return np.stack([a, b, c, a * b / c], axis=1)


def coeff_vector(Q, keys):
    v = np.array([Q.coeffs.get(e, 0.0) for e in keys])
    return v / v[np.argmax(np.abs(v))]


# -- fit_quadric ---------------------------------------------------------------------------------------

def test_fit_exact_saddle(rng):
    fit = fit_quadric(saddle_points(200, rng))
    assert fit.residual <= 1e-10
    assert fit.rank == 14 and fit.unique
    X = saddle_points(50, rng)
    assert np.abs(evaluate(fit.Q, X)).max() <= 1e-9


def test_fit_hyperplane_not_unique(rng):
    X = rng.uniform(-1, 1, (14, 4))
    X[:, 3] = 0
    fit = fit_quadric(X)
    assert fit.rank <= 13
    assert not fit.unique


def test_fit_noise_residual(rng):
    eta = 1e-6
    X = saddle_points(200, rng)
    X = X + eta * rng.normal(size=X.shape) / 2
    fit = fit_quadric(X)
    assert fit.residual <= 10 * eta


def test_fit_too_few(rng):
    with pytest.raises(InsufficientPoints):
        fit_quadric(rng.normal(size=(13, 4)))


# -- verify_sigma4 ---------------------------------------------------------------------------------------

def test_sigma4_ruling_and_translate():
    d = 1 / 16
    # the 2-plane x1 = x3 = 0 lies in the saddle
    ruling = Line.through(np.zeros(4), np.array([0, 1, 0, 1]) / math.sqrt(2))
    shifted = Line.through(np.array([3 * d, 0, 0, 0]), ruling.dir)
    m = verify_sigma4([ruling, shifted], SADDLE, 10, d, rank=14)
    assert m[0].distance == 0.0 and m[0].passed
    assert 2 * d <= m[1].distance <= 4 * d
    assert m[1].passed


def test_sigma4_sphere_has_no_lines():
    sphere = X1 ** 2 + X2 ** 2 + X3 ** 2 + X4 ** 2 - 1
    m = verify_sigma4([Line.through(np.zeros(4), np.eye(4)[0])], sphere, 10, 1 / 16)
    assert not m[0].found and not m[0].passed and math.isinf(m[0].distance)


def test_sigma4_rank_guard():
    with pytest.raises(DegenerateQuadric):
        verify_sigma4([], SADDLE, 10, 1 / 16, rank=13)


# -- small helpers -----------------------------------------------------------------------------------------

def test_direction_count_single_line():
    assert direction_count([Line.through(np.zeros(4), np.eye(4)[0])], 1 / 16) == 1


@pytest.mark.parametrize("args", [(1 / 16, 0.05, 0.15, 0.25), (1 / 16, 0.2, 0.15, 0.25),
                                  (1 / 16, 0.1, 0.15, 0.05), (0.2, 0.1, 0.15, 0.25)])
def test_param_ordering(args):
    d, u, s, k = args
    with pytest.raises(InvalidArgument):
        severi_decompose(X4, d, s, u, k, 1.0)


def test_scenario_params_ordered():
    for d in (1 / 8, 1 / 16, 1 / 32, 1 / 64):
        p = scenario_params(d)
        assert d < p["u"] < p["s"] < 1 and d < p["kappa"] < 1


# -- full pipeline -----------------------------------------------------------------------------------------

@pytest.mark.slow
def test_hyperplane_all_flat(decomposed):
    r = decomposed("hyperplane", 1 / 16)
    cc = r.class_counts()
    assert cc[3] == len(r.lines) > 0
    assert len(r.covers[3]) <= 4
    assert r.quadric is None
    assert r.cover_sound()


@pytest.mark.slow
def test_ruled_quadric_recovered(decomposed):
    r = decomposed("ruled-quadric", 1 / 16)
    assert sum(r.class_counts().values()) == len(r.lines)
    assert r.quadric.rank == 14
    assert r.quadric.residual <= 1e-8
    keys = sorted(set(SADDLE.coeffs) | set(r.quadric.Q.coeffs))
    q = coeff_vector(r.quadric.Q, keys)
    ref = coeff_vector(SADDLE, keys)
    if q @ ref < 0:
        q = -q
    assert np.abs(q - ref).max() <= 1e-6
    assert r.matched_fraction() >= 0.9
    assert r.cover_sound()


@pytest.mark.slow
def test_rotated_product_two_flat_prisms():
    d = 1 / 16
    P = (X2 + X3) * (X2 - X3) + d ** 100
    p = scenario_params(d)
    r = severi_decompose(P, d, p["s"], p["u"], p["kappa"], p["c"])
    assert r.class_counts()[3] == len(r.lines)
    # one flat 3-prism per hyperplane x2 = +-x3
    assert len(r.covers[3]) == 2
    assert r.cover_sound()


@pytest.mark.slow
def test_rescaled_direction_counts(decomposed):
    # frozen: inside each curved prism the rescaled directions need at most
    # C t^(3-k) delta^-2 caps of radius delta/t, with C = 1
    d = 1 / 16
    r = decomposed("ruled-quadric", d)
    for k in (1, 2):
        idx = np.nonzero(r.class_of == k)[0]
        for p, pr in enumerate(r.covers[k]):
            sel = idx[r.assignment[k] == p]
            if not sel.size:
                continue
            t = pr.half_lengths[-1]
            V = prism_rescale_map(pr).linear(r.lines.dirs[sel])
            V /= np.linalg.norm(V, axis=1)[:, None]
            n = covering_number(canonicalize_many(V), d / t, "sphere")
            assert n <= 1.0 * t ** (3 - k) * d ** -2


@pytest.mark.slow
def test_cover_constants_finite(decomposed):
    for name in ("hyperplane", "ruled-quadric"):
        cc = cover_constants(decomposed(name, 1 / 16))
        assert all(0 <= v < 5 for v in cc.values())
