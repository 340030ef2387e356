import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenerec.graph import Adjacency, BipartiteGraph, EntityMaps, GraphBundle, SceneGraph
from scenerec.model import (ParameterSet, SceneRec, Variant, category_attention, category_attention_score,
                            category_repr, cosine, item_attention, item_attention_score, item_embed,
                            item_scene_embed, item_user_embed, scene_sum, score, segment_softmax,
                            softmax, user_embed)

from conftest import random_bundle, random_params


def bundle_from(n_users, n_items, ui, item_cat, ii, cc, scene_cats, n_categories=None):
    n_categories = n_categories or (max(item_cat) + 1)
    n_scenes = len(scene_cats)
    maps = EntityMaps(tuple(f"u{k}" for k in range(n_users)), tuple(f"i{k}" for k in range(n_items)),
                      tuple(f"c{k}" for k in range(n_categories)), tuple(f"s{k}" for k in range(n_scenes)))
    cs = [[s for s, cats in enumerate(scene_cats) if c in cats] for c in range(n_categories)]
    sg = SceneGraph(Adjacency.from_lists(ii), np.array(item_cat), Adjacency.from_lists(cc),
                    Adjacency.from_lists(cs), Adjacency.from_lists(scene_cats))
    return GraphBundle(maps, BipartiteGraph.from_edges(n_users, n_items, ui), sg)


@pytest.fixture
def pair_bundle():
    # u0 -> {i0, i1}; i0 <- {u0}; 2 categories, 2 scenes
    return bundle_from(2, 2, [(0, 0), (0, 1)], [0, 1], [[1], [0]], [[1], [0]], [[0], [0, 1]])


def zero_params(bundle, d=2):
    m = bundle.maps
    return ParameterSet.zeros(m.n_users, m.n_items, m.n_categories, m.n_scenes, d)


# -- user / item aggregation -------------------------------------------------

def test_user_embed_hand_values(pair_bundle):
    p = zero_params(pair_bundle)
    p.W_u[...] = np.eye(2)
    p.E_i[0], p.E_i[1] = (1, 0), (0, 1)
    assert user_embed(0, p, pair_bundle).tolist() == [1.0, 1.0]
    assert user_embed(1, p, pair_bundle).tolist() == [0.0, 0.0]
    p.b_u[...] = -5
    assert user_embed(0, p, pair_bundle).tolist() == [0.0, 0.0]


def test_item_user_embed_hand_values():
    g = bundle_from(2, 2, [(0, 0), (1, 0)], [0, 0], [[], []], [[]], [[0]])
    p = zero_params(g)
    p.W_iu[...] = np.eye(2)
    p.E_u[0], p.E_u[1] = (1, 0), (0, 1)
    assert item_user_embed(0, p, g).tolist() == [1.0, 1.0]
    p.b_iu[...] = (0.3, -0.2)
    assert item_user_embed(1, p, g).tolist() == [0.3, 0.0]  # cold item: act(b)
    p.E_u[...] = 0
    assert item_user_embed(0, p, g).tolist() == [0.3, 0.0]


# -- scene sums and attention ------------------------------------------------

def test_scene_sum(pair_bundle):
    p = zero_params(pair_bundle)
    p.E_s[0], p.E_s[1] = (1, 0), (0, 1)
    assert scene_sum(0, p, pair_bundle).tolist() == [1.0, 1.0]
    assert scene_sum(1, p, pair_bundle).tolist() == [0.0, 1.0]
    g = bundle_from(1, 1, [], [0], [[]], [[]], [[]], n_categories=1)
    assert scene_sum(0, zero_params(g), g).tolist() == [0.0, 0.0]


def test_category_attention_identical_scene_sets():
    g = bundle_from(1, 2, [], [0, 1], [[], []], [[1], [0]], [[0, 1]])
    p = random_params(g, d=3, seed=1)
    assert category_attention_score(0, 1, p, g) == pytest.approx(1.0, abs=1e-15)
    assert category_attention(0, p, g).tolist() == [1.0]


def test_equal_scores_split_evenly():
    g = bundle_from(1, 3, [], [0, 1, 2], [[], [], []], [[1, 2], [0], [0]], [[0, 1, 2]])
    p = random_params(g, d=3, seed=2)
    np.testing.assert_allclose(category_attention(0, p, g), [0.5, 0.5], rtol=0, atol=1e-15)


def test_item_attention_three_neighbours():
    # i0 shares its scene set with i1, i2; i3 belongs to a category in no scene
    g = bundle_from(1, 4, [], [0, 0, 0, 1], [[1, 2, 3], [0], [0], [0]], [[], []], [[0]], n_categories=2)
    p = random_params(g, d=3, seed=3)
    assert item_attention_score(0, 1, p, g) == pytest.approx(1.0, abs=1e-15)
    assert item_attention_score(0, 3, p, g) == 0.0
    e = math.e
    np.testing.assert_allclose(item_attention(0, p, g), [e / (2 * e + 1), e / (2 * e + 1), 1 / (2 * e + 1)],
                               rtol=1e-14)
    assert item_attention(1, p, g).tolist() == [1.0]


def test_cosine_zero_vector_rule():
    assert cosine(np.zeros(3), np.ones(3)) == 0.0
    assert cosine(np.array([1.0, 0]), np.array([2.0, 0])) == 1.0


# -- category and item representations --------------------------------------

def test_category_repr_hand_values():
    g = bundle_from(1, 2, [], [0, 1], [[], []], [[1], [0]], [[0]])
    p = zero_params(g)
    assert category_repr(1, p, g).tolist() == [0.0, 0.0]
    p.E_c[1] = (2, 0)
    p.W_ic[:, 2:] = np.eye(2)  # select the category-neighbour half
    assert category_repr(0, p, g).tolist() == [2.0, 0.0]


def test_category_repr_empty_everything():
    g = bundle_from(1, 1, [], [0], [[]], [[]], [[]], n_categories=1)
    p = random_params(g, d=2, seed=0)
    p.b_ic[...] = 0
    assert category_repr(0, p, g).tolist() == [0.0, 0.0]


def test_noatt_uniform_weights_regardless_of_scenes():
    g = bundle_from(1, 3, [], [0, 1, 2], [[], [], []], [[1, 2], [0], [0]], [[0, 1], [2]])
    p = random_params(g, d=3, seed=4)
    assert category_attention(0, p, g, Variant.NOATT).tolist() == [0.5, 0.5]
    assert not np.allclose(category_attention(0, p, g, Variant.FULL), 0.5)


def test_item_scene_embed_no_item_neighbours():
    g = bundle_from(1, 1, [], [0], [[]], [[]], [[0]])
    p = random_params(g, d=3, seed=5)
    expected = np.maximum(p.W_ii @ np.concatenate([category_repr(0, p, g), np.zeros(3)]) + p.b_ii, 0)
    np.testing.assert_array_equal(item_scene_embed(0, p, g), expected)


def test_item_scene_embed_one_neighbour_selector():
    g = bundle_from(1, 2, [], [0, 0], [[1], [0]], [[]], [[0]])
    p = zero_params(g)
    p.E_i[1] = (0.4, 0.9)
    p.W_ii[:, 2:] = np.eye(2)
    # single neighbour, so beta = 1 and the output is beta * e_neighbour
    np.testing.assert_array_equal(item_scene_embed(0, p, g), [0.4, 0.9])


def test_noitem_equals_full_without_item_edges():
    g = random_bundle(7)
    stripped = GraphBundle(g.maps, g.bipartite, SceneGraph(
        Adjacency.from_lists([[] for _ in range(g.maps.n_items)]), g.scene.item_cat, g.scene.cc,
        g.scene.cat_scenes, g.scene.scene_cats))
    p = random_params(g, seed=7)
    for i in range(g.maps.n_items):
        np.testing.assert_array_equal(item_scene_embed(i, p, g, Variant.NOITEM),
                                      item_scene_embed(i, p, stripped, Variant.FULL))


def test_item_embed_cases():
    g = random_bundle(8)
    p = zero_params(g, d=4)
    assert item_embed(0, p, g).tolist() == [0.0] * 4
    p = random_params(g, d=4, seed=8)
    p.W_i1[...] = 0
    p.W_i1[:, :4] = np.eye(4)
    p.b_i1[...] = 0
    p.W_i2[...] = np.eye(4)
    p.b_i2[...] = 0
    for i in range(g.maps.n_items):  # m^U is already nonnegative, so relu passes it through
        np.testing.assert_array_equal(item_embed(i, p, g), item_user_embed(i, p, g))
    assert np.all(np.isfinite(item_embed(3, random_params(g, seed=1), g)))


def test_score_cases(pair_bundle):
    p = zero_params(pair_bundle)
    assert score(0, 0, p, pair_bundle) == 0.0
    p = random_params(pair_bundle, d=2, seed=3)
    p.W_r2[...] = 0
    p.b_r2[...] = 0.7
    assert {score(u, i, p, pair_bundle) for u in range(2) for i in range(2)} == {0.7}


def test_score_scalar_recomputation(pair_bundle):
    """d=2 toy with hand-set weights, recomputed with plain Python floats."""
    g = pair_bundle
    p = zero_params(g)
    p.E_u[:] = [[0.5, -1.0], [1.0, 2.0]]
    p.E_i[:] = [[1.0, 0.5], [-0.5, 1.5]]
    p.E_c[:] = [[0.2, 0.1], [-0.3, 0.4]]
    p.E_s[:] = [[1.0, 0.0], [0.6, 0.8]]
    p.W_u[:] = [[1.0, 0.5], [-0.5, 1.0]]
    p.b_u[:] = [0.1, -0.1]
    p.W_iu[:] = [[0.5, 0.0], [0.0, 1.0]]
    p.b_iu[:] = [0.2, 0.2]
    p.W_ic[:] = [[0.5, 0.5, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]]
    p.W_ii[:] = [[1.0, 0.0, 0.5, 0.5], [0.0, 1.0, 1.0, -1.0]]
    p.b_ii[:] = [0.0, 0.1]
    p.W_i1[:] = [[1.0, 0.0, 0.0, 1.0], [0.0, 1.0, 1.0, 0.0]]
    p.W_i2[:] = [[1.0, -1.0], [0.5, 0.5]]
    p.b_i2[:] = [0.05, 0.0]
    p.W_r1[:] = [[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, -1.0]]
    p.b_r1[:] = [0.0, 0.3]
    p.W_r2[:] = [[1.0, 2.0]]
    p.b_r2[:] = [-0.25]

    relu = lambda x: x if x > 0 else 0.0
    def aff(W, x, b):
        return [sum(W[r][k] * x[k] for k in range(len(x))) + b[r] for r in range(len(W))]
    L = lambda a: a.tolist()
    # user 0 aggregates items 0 and 1
    s = [1.0 - 0.5, 0.5 + 1.5]
    m_u = [relu(v) for v in aff(L(p.W_u), s, L(p.b_u))]
    # item 0: one user (u0)
    m_iU = [relu(v) for v in aff(L(p.W_iu), [0.5, -1.0], L(p.b_iu))]
    # category 0: scenes {s0, s1}; neighbour c1 with scenes {s1} -> single neighbour, alpha = 1
    h_s = [1.0 + 0.6, 0.0 + 0.8]
    m_c = [relu(v) for v in aff(L(p.W_ic), h_s + [-0.3, 0.4], [0.0, 0.0])]
    # item 0: one item neighbour (i1), beta = 1
    m_iS = [relu(v) for v in aff(L(p.W_ii), m_c + [-0.5, 1.5], L(p.b_ii))]
    h = [relu(v) for v in aff(L(p.W_i1), m_iU + m_iS, [0.0, 0.0])]
    m_i = aff(L(p.W_i2), h, L(p.b_i2))
    hr = [relu(v) for v in aff(L(p.W_r1), m_u + m_i, L(p.b_r1))]
    expected = hr[0] * 1.0 + hr[1] * 2.0 - 0.25
    assert score(0, 0, p, g) == pytest.approx(expected, rel=1e-14)
    batch, _ = SceneRec(g).forward_batch(p, [0], [0])
    assert batch[0] == pytest.approx(expected, rel=1e-14)


# -- batch engine vs per-entity route ----------------------------------------

@pytest.mark.parametrize("variant", list(Variant))
def test_batch_matches_loop(variant):
    g = random_bundle(11, n_users=7, n_items=12, n_categories=4, n_scenes=3)
    p = random_params(g, d=5, seed=11)
    rng = np.random.default_rng(0)
    users, items = rng.integers(0, 7, 20), rng.integers(0, 12, 20)
    scores, trace = SceneRec(g, variant).forward_batch(p, users, items)
    loop = [score(int(u), int(i), p, g, variant) for u, i in zip(users, items)]
    np.testing.assert_allclose(scores, loop, rtol=1e-12, atol=1e-14)
    for k, i in enumerate(trace.items):
        np.testing.assert_allclose(trace.m_iS[k], item_scene_embed(int(i), p, g, variant), rtol=1e-12, atol=1e-14)


def test_batch_of_one_and_permutation():
    g = random_bundle(12)
    p = random_params(g, seed=12)
    model = SceneRec(g)
    users, items = np.array([0, 1, 2, 3, 4]), np.array([7, 0, 3, 3, 5])
    scores, _ = model.forward_batch(p, users, items)
    single, _ = model.forward_batch(p, users[:1], items[:1])
    assert single[0] == pytest.approx(scores[0], rel=1e-13)
    perm = np.array([3, 0, 4, 1, 2])
    permuted, _ = model.forward_batch(p, users[perm], items[perm])
    np.testing.assert_array_equal(permuted, scores[perm])


def test_forward_is_bitwise_deterministic():
    g = random_bundle(13)
    p = random_params(g, seed=13)
    a, _ = SceneRec(g).forward_batch(p, [0, 1, 2], [3, 4, 5])
    b, _ = SceneRec(g).forward_batch(p, [0, 1, 2], [3, 4, 5])
    assert a.tobytes() == b.tobytes()


def test_trace_attention_rows_normalised():
    g = random_bundle(14, n_items=10)
    p = random_params(g, seed=14)
    _, tr = SceneRec(g).forward_batch(p, np.zeros(10, int), np.arange(10))
    cc = g.scene.cc
    for c in range(len(cc)):
        w = tr.alpha[cc.indptr[c]:cc.indptr[c + 1]]
        if len(w):
            assert abs(w.sum() - 1.0) <= 1e-12
            np.testing.assert_allclose(w, category_attention(c, p, g), rtol=1e-12)
    for k in range(len(tr.items)):
        w = tr.beta[tr.beta_indptr[k]:tr.beta_indptr[k + 1]]
        if len(w):
            assert abs(w.sum() - 1.0) <= 1e-12 and (w >= 0).all()


# -- invariants over random instances ----------------------------------------

seeds = st.integers(0, 10_000)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_attention_invariants(seed):
    g = random_bundle(seed, n_items=9, n_categories=4, n_scenes=3)
    p = random_params(g, seed=seed)
    for c in range(g.maps.n_categories):
        w = category_attention(c, p, g)
        if len(w):
            assert (w >= 0).all() and abs(w.sum() - 1) <= 1e-12
        for q in range(g.maps.n_categories):
            assert category_attention_score(c, q, p, g) == category_attention_score(q, c, p, g)
        nbrs = g.scene.cc[c]
        if len(nbrs):
            assert category_attention(c, p, g, Variant.NOATT).tolist() == [1 / len(nbrs)] * len(nbrs)
    for i in range(g.maps.n_items):
        w = item_attention(i, p, g)
        if len(w):
            assert (w >= 0).all() and abs(w.sum() - 1) <= 1e-12
            assert item_attention(i, p, g, Variant.NOATT).tolist() == [1 / len(w)] * len(w)
        for q in range(g.maps.n_items):
            assert item_attention_score(i, q, p, g) == item_attention_score(q, i, p, g)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12), st.floats(-1e3, 1e3))
def test_softmax_shift_invariance(scores, shift):
    base = softmax(scores)
    np.testing.assert_allclose(softmax(np.asarray(scores) + shift), base, rtol=1e-12, atol=1e-15)
    indptr = np.array([0, len(scores)])
    np.testing.assert_allclose(segment_softmax(np.asarray(scores) + shift, indptr), base, rtol=1e-12, atol=1e-15)


def test_same_scene_sets_make_attention_irrelevant():
    # all items share one category, so every cosine is 1 and softmax is uniform
    g = bundle_from(2, 5, [(0, 1), (1, 2)], [0] * 5,
                    [[1, 2, 3], [0, 4], [0], [0, 4], [1, 3]], [[]], [[0]])
    p = random_params(g, d=4, seed=21)
    for i in range(5):
        np.testing.assert_allclose(item_scene_embed(i, p, g, Variant.FULL),
                                   item_scene_embed(i, p, g, Variant.NOATT), rtol=1e-12, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seeds, st.sampled_from(list(Variant)))
def test_outputs_finite(seed, variant):
    g = random_bundle(seed)
    p = random_params(g, seed=seed)
    scores, _ = SceneRec(g, variant).forward_batch(p, np.arange(5), np.arange(5))
    assert np.all(np.isfinite(scores))


def test_parameter_shapes_and_init():
    p = ParameterSet.init(3, 4, 2, 2, 8, np.random.default_rng(0))
    p.check()
    bound = 1 / np.sqrt(8)
    for name, arr in p.items():
        if name.startswith("b_"):
            assert not arr.any()
        else:
            assert np.abs(arr).max() <= bound
    assert p.W_ic.shape == (8, 16) and p.W_r2.shape == (1, 8) and p.b_r2.shape == (1,)


def test_check_params_rejects_wrong_counts():
    g = random_bundle(0)
    with pytest.raises(ValueError, match="do not match"):
        SceneRec(g).check_params(ParameterSet.zeros(1, 1, 1, 1, 2))
