import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from svlab.errors import EmptyShading, InvalidArgument
from svlab.geometry import DirectionNet, line_angle
from svlab.kakeya import (P_KAKEYA, TubeSet, VoxelGrid, build_direction_separated, fit_exponent,
                          hairbrush, hairbrush_family, kakeya_norm, linear_wolff_check,
                          refine_transversal, robust_transversality_check, tube_volume_constant,
                          two_ends_check, union_volume)
from svlab.poly import X1, X2, X3, X4

E = np.eye(4)
CONE_SURFACE = X4 - (X1 ** 2 + X2 ** 2 - X3 ** 2)


def one_tube(delta, mid=None, d=None, grid=None):
    return TubeSet(np.zeros((1, 4)) if mid is None else np.atleast_2d(mid),
                   E[:1] if d is None else np.atleast_2d(d), delta, grid=grid)


def fine_volume(delta, factor=16):
    g = VoxelGrid.for_delta(delta, h=delta / factor)
    return union_volume(one_tube(delta, grid=g), use_shading=False)


@pytest.fixture(scope="module")
def cap_net8():
    return DirectionNet.build(1 / 8, cap=0.15)


# -- grid and tubes ----------------------------------------------------------------------------

def test_voxel_centres_within_tube():
    d = 1 / 16
    v = np.array([1.0, 0.3, -0.2, 0.1])
    v /= np.linalg.norm(v)
    ts = one_tube(d, mid=[0.1, 0, 0.05, 0], d=v)
    C = ts.grid.centers(ts.full_voxels(0))
    r = C - ts.mids[0]
    t = np.clip(r @ v, -0.5, 0.5)
    dist = np.linalg.norm(r - t[:, None] * v, axis=1)
    assert dist.max() <= d * (1 + 1e-6)


def test_voxel_list_complete():
    # brute force over a box around the tube
    d = 1 / 8
    v = np.array([0.9, 0.4, 0.1, -0.1])
    v /= np.linalg.norm(v)
    ts = one_tube(d, mid=[0.05, -0.1, 0, 0.02], d=v)
    g = ts.grid
    ax = np.arange(g.n)
    lo = np.floor((ts.mids[0] - 0.5 * np.abs(v) - d - g.origin) / g.h).astype(int) - 1
    hi = np.ceil((ts.mids[0] + 0.5 * np.abs(v) + d - g.origin) / g.h).astype(int) + 1
    I = np.stack(np.meshgrid(*[ax[max(0, l):min(g.n, h)] for l, h in zip(lo, hi)], indexing="ij"), -1)
    I = I.reshape(-1, 4)
    C = g.origin + (I + 0.5) * g.h
    r = C - ts.mids[0]
    t = np.clip(r @ v, -0.5, 0.5)
    inside = np.linalg.norm(r - t[:, None] * v, axis=1) <= d
    keys = ((I[:, 0] * g.n + I[:, 1]) * g.n + I[:, 2]) * g.n + I[:, 3]
    assert np.array_equal(np.sort(keys[inside]), np.sort(ts.full_voxels(0)))


# -- families ----------------------------------------------------------------------------------------

def test_bush_shares_origin(cap_net8):
    ts = build_direction_separated(cap_net8, "bush", 1 / 8)
    assert len(ts) == len(cap_net8)
    g = ts.grid
    k0 = int(np.floor((0 - g.origin) / g.h))
    key = ((k0 * g.n + k0) * g.n + k0) * g.n + k0
    assert all(key in set(ts.full_voxels(i).tolist()) for i in range(len(ts)))


def test_translated_separated(cap_net8):
    ts = build_direction_separated(cap_net8, "translated", 1 / 8, seed=3)
    G = line_angle(ts.dirs[:, None, :], ts.dirs[None, :, :])
    np.fill_diagonal(G, np.inf)
    assert G.min() >= 1 / 16
    assert ts.essentially_distinct()


def test_hairbrush_rule_meets_stem():
    d = 1 / 8
    net = DirectionNet.build(d)
    ts = build_direction_separated(net, "hairbrush", d, seed=1)
    v = E[0]
    for m in ts.mids[1:]:
        off = m - (m @ v) * v
        assert np.linalg.norm(off) <= d


def test_unknown_rule(cap_net8):
    with pytest.raises(InvalidArgument):
        build_direction_separated(cap_net8, "spiral", 1 / 8)


# -- volumes and norms -------------------------------------------------------------------------------

def test_single_tube_volume():
    d = 1 / 8
    ref = fine_volume(d)
    assert union_volume(one_tube(d), use_shading=False) == pytest.approx(ref, rel=0.15)
    # leading term plus the two half-ball end caps
    exact = tube_volume_constant() * d ** 3 + math.pi ** 2 / 2 * d ** 4
    assert ref == pytest.approx(exact, rel=0.05)


def test_disjoint_and_identical():
    d = 1 / 8
    one = union_volume(one_tube(d), False)
    two = TubeSet(np.array([[0, 0, 0, 0], [0, 0.5, 0, 0.0]]), E[[0, 0]], d)
    assert union_volume(two, False) == pytest.approx(2 * one, rel=0.15)
    same = TubeSet(np.zeros((2, 4)), E[[0, 0]], d)
    assert union_volume(same, False) == one


def test_norm_examples():
    d = 1 / 8
    pp = P_KAKEYA / (P_KAKEYA - 1)
    one = one_tube(d)
    vol = union_volume(one, False)
    assert kakeya_norm(one) == pytest.approx(vol ** (1 / pp), rel=1e-12)
    mids = np.array([[0, y, 0, 0] for y in (-0.6, 0, 0.6)])
    three = TubeSet(mids, E[[0, 0, 0]], d)
    assert kakeya_norm(three) == pytest.approx((union_volume(three, False)) ** (1 / pp), rel=1e-12)
    with pytest.raises(InvalidArgument):
        kakeya_norm(one, p=1.0)


def test_norm_grid_convergence(cap_net8):
    d = 1 / 8
    coarse = kakeya_norm(build_direction_separated(cap_net8, "bush", d))
    g = VoxelGrid.for_delta(d, h=d / 8)
    fine = kakeya_norm(build_direction_separated(cap_net8, "bush", d, grid=g))
    assert coarse == pytest.approx(fine, rel=0.25)


def test_norm_mass_identity_and_lyapunov(cap_net8):
    ts = build_direction_separated(cap_net8, "translated", 1 / 8, seed=0)
    mass = sum(len(ts.full_voxels(i)) for i in range(len(ts))) * ts.grid.voxel_volume
    assert kakeya_norm(ts, p=math.inf) == pytest.approx(mass, rel=1e-12)
    # on the probability measure of the union, L^q norms grow with q
    U = union_volume(ts, False)
    qs = [1.0, 1.2, 1.5, 2.0, 3.0]
    vals = [kakeya_norm(ts, p=(math.inf if q == 1 else q / (q - 1))) / U ** (1 / q) for q in qs]
    assert all(b >= a * (1 - 1e-12) for a, b in zip(vals, vals[1:]))


# -- two ends -------------------------------------------------------------------------------------------

def test_two_ends_examples():
    d = 1 / 64
    ts = one_tube(d)
    T = ts.tube(0)
    assert two_ends_check(T, 0.1, 2.0, ts.grid)
    C = ts.grid.centers(ts.full_voxels(0))
    ts.set_shading(lambda ids, X: np.linalg.norm(X, axis=1) <= d)
    T = ts.tube(0)
    assert not two_ends_check(T, 0.1, 1.0, ts.grid)
    assert two_ends_check(T, 0.1, 1e6, ts.grid)


def test_two_ends_empty():
    ts = one_tube(1 / 8).set_shading(lambda ids, X: np.zeros(len(ids), bool))
    with pytest.raises(EmptyShading):
        two_ends_check(ts.tube(0), 0.1, 2.0, ts.grid)


# -- transversality ---------------------------------------------------------------------------------------

def test_transversality_bush_core():
    d = 1 / 8
    net = DirectionNet.build(d)
    ts = build_direction_separated(net, "bush", d)
    assert len(ts) >= 200
    ts.set_shading(lambda ids, X: np.linalg.norm(X, axis=1) <= d)
    assert robust_transversality_check(ts, d)


def test_transversality_violators():
    rng = np.random.default_rng(0)
    D = E[0] + 0.01 * rng.normal(size=(10, 4))
    ts = TubeSet(np.zeros((10, 4)), D, 1 / 16)
    assert not robust_transversality_check(ts, 0.1)
    assert not robust_transversality_check(one_tube(1 / 16), 0.1)


def test_refine_is_fixed_point():
    d = 1 / 8
    net = DirectionNet.build(d)
    ts = build_direction_separated(net, "bush", d)
    refine_transversal(ts, d)
    assert robust_transversality_check(ts, d)
    assert ts.lam().max() > 0
    before = ts.skeys.copy()
    refine_transversal(ts, d)
    assert np.array_equal(before, ts.skeys)


# -- linear Wolff ------------------------------------------------------------------------------------------

def test_wolff_examples(cap_net8):
    assert linear_wolff_check(build_direction_separated(cap_net8, "translated", 1 / 8))
    assert linear_wolff_check(one_tube(1 / 8))
    d = 1 / 16
    rng = np.random.default_rng(1)
    n = 200  # 200 delta^-3 t1 t2 t3 with t = (delta, delta, delta)
    mids = np.zeros((n, 4))
    mids[:, 1:] = rng.uniform(-d / 4, d / 4, (n, 3))
    packed = TubeSet(mids, np.tile(E[0], (n, 1)), d)
    assert not linear_wolff_check(packed)


@given(st.integers(0, 10_000))
def test_wolff_direction_separated(seed):
    d = 1 / 16
    net = DirectionNet.build(d, cap=0.15)
    ts = build_direction_separated(net, "translated", d, seed=seed)
    assert linear_wolff_check(ts, n_prisms=50, seed=seed)


# -- hairbrush ---------------------------------------------------------------------------------------------------

def test_hairbrush_examples(cap_net8):
    ts = build_direction_separated(cap_net8, "bush", 1 / 8)
    H, _ = hairbrush(ts, 3)
    assert len(H) == len(ts)
    far = TubeSet(np.array([[0, y, 0, 0] for y in (-0.6, 0, 0.6)]), E[[0, 0, 0]], 1 / 8)
    H, vol = hairbrush(far, 1)
    assert list(H) == [1]
    assert vol == union_volume(far.subset([1]))


def cone_vs_planar(d):
    stem = np.array([1.0, 0, 1.0, 0]) / math.sqrt(2)
    cone = hairbrush_family(CONE_SURFACE, np.zeros(4), stem, d, mode="cone")
    plan = hairbrush_family(CONE_SURFACE, np.zeros(4), stem, d, mode="planar", plane=E[1])
    return hairbrush(cone, 0)[1], hairbrush(plan, 0)[1]


def test_hairbrush_cone_volume_linear_in_delta():
    # frozen c_hb: vol / delta in [1.0, 1.6] at delta = 1/16 and 1/32
    for d in (1 / 16, 1 / 32):
        vol, _ = cone_vs_planar(d)
        assert 1.0 <= vol / d <= 1.6


def test_fit_exponent():
    ds = [1 / 8, 1 / 16, 1 / 32]
    assert fit_exponent(ds, [3 * x ** 0.5 for x in ds]) == pytest.approx(0.5)
