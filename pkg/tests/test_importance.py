import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from conftest import front_camera, random_source
from splatzip.importance import (TAU_PRESETS, ImportanceConfigError, approx_neighbors, base_importance,
                                 final_importance, importance_report, local_distinctiveness, morton_keys,
                                 morton_order, prune_cdf, quantize_to_grid, validate_tau)
from splatzip.rasterizer import RenderStats, render_with_stats

scores = arrays(np.float64, st.integers(1, 60), elements=st.floats(0, 100))
taus = st.floats(0.01, 1.0)


# base importance

def test_flagged_keeps_weight_sum():
    st_ = RenderStats(np.array([3.2, 5.0]), np.array([True, False]))
    assert base_importance(st_).tolist() == [3.2, 0.0]


def test_base_importance_from_brute_force(rng):
    g = random_source(rng, 10, spread=0.8, scale=(-2.5, -1.0))
    cam = front_camera(8, 8)
    _, stats = render_with_stats(g, [cam], exact=True)
    _, _, _, w, f = oracles.brute_render(g, cam)
    np.testing.assert_allclose(base_importance(stats), np.where(f, w, 0.0), rtol=1e-12, atol=1e-15)
    assert np.array_equal(base_importance(stats) == 0, ~stats.is_max_contributor | (stats.weight_sum == 0))


# Morton order

def test_eight_corners_in_curve_order():
    corners = np.array([[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], dtype=float)
    assert morton_order(corners, [[0, 0, 0], [1, 1, 1]]).tolist() == list(range(8))
    shuffled = corners[[5, 2, 7, 0, 3, 6, 1, 4]]
    assert shuffled[morton_order(shuffled, [[0, 0, 0], [1, 1, 1]])].tolist() == corners.tolist()


def test_duplicates_stable():
    p = np.array([[0.5, 0.5, 0.5], [0.1, 0.1, 0.1], [0.5, 0.5, 0.5], [0.5, 0.5, 0.5]])
    assert morton_order(p, [[0, 0, 0], [1, 1, 1]]).tolist() == [1, 0, 2, 3]


def test_keys_match_bit_loop(rng):
    g = rng.integers(0, 1 << 21, size=(1000, 3)).astype(np.uint64)
    keys = morton_keys(g)
    for i in range(1000):
        assert int(keys[i]) == oracles.interleave(int(g[i, 0]), int(g[i, 1]), int(g[i, 2]))


def test_grid_extremes():
    g = quantize_to_grid([[0, 0, 0], [2, 4, 8]], [[0, 0, 0], [2, 4, 8]])
    assert g.tolist() == [[0, 0, 0], [(1 << 21) - 1] * 3]


def test_degenerate_aabb():
    order = morton_order(np.array([[1.0, 0, 0], [1.0, 0, 0], [1.0, 1, 0]]), [[1, 0, 0], [1, 1, 0]])
    assert sorted(order.tolist()) == [0, 1, 2]


@given(st.integers(1, 50).flatmap(lambda n: arrays(np.float64, (n, 3), elements=st.floats(-10, 10))))
def test_morton_order_is_permutation(p):
    order = morton_order(p, [p.min(0), p.max(0)])
    assert sorted(order.tolist()) == list(range(len(p)))


# neighbors

def test_neighbors_middle():
    nb = approx_neighbors(np.arange(5), 2)
    assert sorted(nb[2].tolist()) == [1, 3]


def test_neighbors_first_and_last():
    nb = approx_neighbors(np.arange(6), 3)
    assert sorted(nb[0].tolist()) == [1, 2, 3]
    assert sorted(nb[5].tolist()) == [2, 3, 4]


def test_neighbors_follow_order():
    order = np.array([4, 0, 3, 1, 2])
    nb = approx_neighbors(order, 2)
    assert sorted(nb[3].tolist()) == [0, 1]  # rank 2 sits between ranks 1 and 3


def test_neighbors_k_too_large():
    with pytest.raises(ImportanceConfigError):
        approx_neighbors(np.arange(4), 4)


@given(st.integers(2, 80), st.data())
def test_neighbor_lists_valid(n, data):
    k = data.draw(st.integers(1, n - 1))
    order = np.random.default_rng(n).permutation(n)
    nb = approx_neighbors(order, k)
    assert nb.shape == (n, k)
    for i in range(n):
        assert len(set(nb[i].tolist())) == k and i not in nb[i]


def test_neighbor_overlap_with_exact_knn(rng):
    """Morton adjacency against brute-force Euclidean K-NN; the overlap is only reported."""
    p = rng.uniform(0, 1, (10_000, 3))
    k = 8
    nb = approx_neighbors(morton_order(p, [[0] * 3, [1] * 3]), k)
    sample = rng.choice(len(p), 300, replace=False)
    overlap = []
    for i in sample:
        d = np.sum((p - p[i]) ** 2, axis=1)
        d[i] = np.inf
        exact = set(np.argsort(d, kind="stable")[:k].tolist())
        overlap.append(len(exact & set(nb[i].tolist())) / k)
    print(f"mean Morton/KNN overlap at K={k}: {np.mean(overlap):.3f}")
    assert 0.0 <= np.mean(overlap) <= 1.0


# distinctiveness and final importance

def test_identical_features_zero_distinct(rng):
    T = np.tile([0.3, 0.1, 0.2], (6, 1))
    assert np.all(local_distinctiveness(T, approx_neighbors(np.arange(6), 3)) == 0)


def test_single_l1_term():
    T = np.array([[1.0, 0, 0], [0, 0, 0]])
    d = local_distinctiveness(T, np.array([[1], [0]]))
    assert d.tolist() == [1.0, 1.0]


def test_distinctiveness_matches_loop(rng):
    T = rng.normal(size=(40, 3))
    nb = approx_neighbors(rng.permutation(40), 4)
    np.testing.assert_allclose(local_distinctiveness(T, nb), oracles.distinctiveness(T, nb), rtol=1e-14)


def test_lambda_zero_is_base(rng):
    b = rng.uniform(size=10)
    out = final_importance(b, rng.uniform(size=10), 0.0)
    assert np.array_equal(out, b) and out is not b


def test_zero_distinct_zero_importance():
    assert final_importance([2.0, 3.0], [0.0, 1.0], 0.5).tolist() == [0.0, 3.0]


def test_final_importance_matches_loop(rng):
    b, d = rng.uniform(size=30), rng.uniform(size=30)
    lam = 0.7
    ref = [b[i] * d[i] ** lam for i in range(30)]
    np.testing.assert_allclose(final_importance(b, d, lam), ref, rtol=1e-15)


def test_negative_lambda():
    with pytest.raises(ImportanceConfigError):
        final_importance([1.0], [1.0], -0.1)


# CDF pruning

def test_cdf_hand_example():
    assert np.flatnonzero(prune_cdf(np.array([4.0, 3, 2, 1]), 0.6)).tolist() == [0, 1]


def test_cdf_full_mass():
    assert prune_cdf(np.array([0.0, 2.0, 0.0, 1.0]), 1.0).tolist() == [False, True, False, True]


def test_presets_validate():
    assert sorted(TAU_PRESETS.values()) == [0.96, 0.98, 0.99, 0.999, 0.9999]
    for t in TAU_PRESETS.values():
        assert validate_tau(t) == t


@pytest.mark.parametrize("bad", [0.0, -0.1, 1.01])
def test_bad_tau(bad):
    with pytest.raises(ImportanceConfigError):
        validate_tau(bad)


def test_all_zero_importance():
    with pytest.raises(ValueError):
        prune_cdf(np.zeros(4), 0.9)


def test_ties_by_index():
    assert prune_cdf(np.array([1.0, 1.0, 1.0, 1.0]), 0.5).tolist() == [True, True, False, False]


@given(scores, taus)
def test_cdf_matches_enumeration(I, tau):
    assume(I.sum() > 0)
    keep = prune_cdf(I, tau)
    assert set(np.flatnonzero(keep).tolist()) == oracles.cdf_keep(I.tolist(), tau)


@given(scores, taus, taus)
def test_prune_monotone_in_tau(I, t1, t2):
    assume(I.sum() > 0)
    lo, hi = sorted([t1, t2])
    a, b = prune_cdf(I, lo), prune_cdf(I, hi)
    assert np.all(b[a])


@given(scores, taus, st.floats(1e-3, 1e3))
def test_prune_scale_invariant(I, tau, c):
    assume(I.sum() > 0)
    # powers of two scale exactly; other factors may shift a boundary by rounding
    c = 2.0 ** np.round(np.log2(c))
    assert np.array_equal(prune_cdf(I, tau), prune_cdf(I * c, tau))


@given(scores, taus)
def test_prefix_closed(I, tau):
    assume(I.sum() > 0)
    keep = prune_cdf(I, tau)
    assert keep.sum() >= 1
    if (~keep).any():
        assert I[keep].min() >= I[~keep].max()


def test_report_lambda_zero_regression(rng):
    g = random_source(rng, 30, spread=0.8, scale=(-2.5, -1.0))
    _, stats = render_with_stats(g, [front_camera(16, 16)])
    rep = importance_report(stats, g.positions, g.sh_dc, [[-1] * 3, [1] * 3], lam=0.0, tau=0.9)
    assert np.array_equal(rep.importance, rep.base)
    assert np.array_equal(rep.keep_mask, prune_cdf(base_importance(stats), 0.9))
    assert "keep" in rep.to_json()
