import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from revolt.config import GeneratorConfig, ObjectEmbedConfig
from revolt.house import Door, HouseSpec, ObjectGraph, Room, SceneObject, extract_object_graph, generate_house
from revolt.numeric import check_gradient, median_decile_drop
from revolt.object_embed import (
    aggregate, build_table, graph_loss, init_params, loss_unsup, pool_by_category, prepare, sample_negatives,
    train_object_embedder,
)


def _graph(n, edges, weights=None, cats=None, seed=0, dim=4):
    rng = np.random.default_rng(seed)
    edges = np.array(edges, dtype=int).reshape(-1, 2)
    w = np.ones(len(edges)) if weights is None else np.asarray(weights, float)
    cats = np.arange(n) if cats is None else np.asarray(cats)
    return ObjectGraph(cats, np.zeros(n, int), edges, w, rng.standard_normal((n, dim)))


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def test_isolated_node_uses_only_itself():
    g = _graph(1, [])
    p = {"W1": np.eye(4)}
    assert np.allclose(aggregate(g, p, activation="sigmoid"), _sig(g.features))
    assert np.allclose(aggregate(g, p), np.tanh(g.features))


def test_two_identical_nodes_stay_equal():
    g = _graph(2, [(0, 1)])
    g.features[1] = g.features[0]
    h = aggregate(g, init_params(ObjectEmbedConfig(dim=4)))
    assert np.allclose(h[0], h[1])


def test_path_graph_matches_naive_oracle():
    rng = np.random.default_rng(3)
    g = _graph(3, [(0, 1), (1, 2)], weights=rng.uniform(0.2, 1.0, 2), seed=3)
    w = rng.standard_normal((4, 4))
    nb = {0: [(1, g.weights[0])], 1: [(0, g.weights[0]), (2, g.weights[1])], 2: [(1, g.weights[1])]}
    for act, fn in (("tanh", np.tanh), ("sigmoid", _sig)):
        got = aggregate(g, {"W1": w}, activation=act)
        for v in range(3):
            vecs = [g.features[v]] + [wt * g.features[u] for u, wt in nb[v]]
            mean = sum(vecs) / len(vecs)
            assert np.allclose(got[v], fn(w @ mean), atol=1e-12)


def test_loss_positive_term_limits():
    # two nodes, one edge; the only negative available is the other node
    z = np.array([[1.0, 0.0], [0.0, 1.0]])
    g = _graph(2, [(0, 1)], cats=[0, 0], dim=2)
    negs = np.array([[1]])
    # orthogonal pair: positive term ln 2 and the negative term, also ln 2
    assert loss_unsup(z, g, 1, negatives=negs) == pytest.approx(2 * np.log(2))
    big = np.array([[30.0, 0.0], [30.0, 0.0]])
    pos_only = loss_unsup(big, g, 1, negatives=negs) - np.logaddexp(0, big[0] @ big[1])
    assert pos_only == pytest.approx(0.0, abs=1e-12)


def test_loss_matches_hand_oracle_on_four_nodes():
    g = _graph(4, [(0, 1), (1, 2), (0, 3)], weights=[0.9, 0.5, 0.7], cats=[0, 1, 2, 3], seed=9)
    z = np.random.default_rng(9).standard_normal((4, 3))
    negs = sample_negatives(g, 2, 9)
    nb = g.neighbors()
    expected = 0.0
    for e, (u, v) in enumerate(g.edges):
        expected += -np.log(_sig(g.weights[e] * z[u] @ z[v]))
        for n in negs[e]:
            assert n != u and n not in nb[u]
            expected += -np.log(_sig(-(z[u] @ z[n])))
    assert loss_unsup(z, g, 2, neg_seed=9) == pytest.approx(expected, rel=1e-12)


def test_negatives_fall_back_to_all_nodes():
    g = _graph(3, [(0, 1), (1, 2), (0, 2)])
    negs = sample_negatives(g, 4, 0)
    for e, (u, _) in enumerate(g.edges):
        assert all(n != u for n in negs[e])
    with pytest.raises(ValueError):
        loss_unsup(np.zeros((3, 4)), g, 0)


def test_pool_examples():
    e = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 9.0], [7.0, 7.0]])
    t = pool_by_category(e, [0, 1, 1, 1])
    assert np.array_equal(t[0], e[0])
    assert np.allclose(t[1], [(3 + 5 + 7) / 3, (4 + 9 + 7) / 3])
    same = pool_by_category(np.array([[2.0, 1.0], [2.0, 1.0]]), [4, 4])
    assert np.array_equal(same[4], [2.0, 1.0])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=12), st.integers(0, 99))
def test_pooling_is_idempotent(cats, seed):
    e = np.random.default_rng(seed).standard_normal((len(cats), 3))
    t = pool_by_category(e, cats)
    again = pool_by_category(t.matrix(t.categories), t.categories)
    for c in t.categories:
        assert np.array_equal(again[c], t[c])


@pytest.mark.parametrize("seed", range(20))
def test_graph_loss_gradient(seed):
    rng = np.random.default_rng(seed)
    g = _graph(4, [(0, 1), (1, 2), (2, 3), (0, 2)], weights=rng.uniform(0.3, 1, 4),
               cats=rng.integers(0, 3, 4), seed=seed, dim=5)
    for depth, act in ((1, "tanh"), (2, "tanh"), (2, "sigmoid")):
        params = init_params(ObjectEmbedConfig(dim=5, depth=depth, init_scale=1.0), seed)
        cache = prepare(g, 2, seed)
        err = check_gradient(lambda p: graph_loss(p, g, 2, seed, cache, act), params)
        assert err < 1e-4


def _two_room_houses(n):
    cfg = GeneratorConfig()
    out = []
    rng = np.random.default_rng(0)
    for _ in range(n):
        rooms = [Room(0, 0, (0.0, 0.0, 4.0, 4.0)), Room(1, 1, (4.0, 0.0, 8.0, 4.0))]
        objs = []
        for k, (room, cats) in enumerate(((0, (0, 1)), (1, (2, 3)))):
            for c in cats:
                x0 = 4.0 * room
                objs.append(SceneObject(len(objs), c, (x0 + rng.uniform(0.5, 3.5), rng.uniform(0.5, 3.5)), room, 0.2))
        out.append(HouseSpec(rooms, [Door((0, 1), (4.0, 2.0), "x")], objs, tuple(cfg.labels), tuple(cfg.categories)))
    return out


def test_co_located_categories_end_up_closer():
    houses = _two_room_houses(60)
    res = train_object_embedder(houses, ObjectEmbedConfig(epochs=30))
    t = res.table
    intra = np.mean([t[0] @ t[1], t[2] @ t[3]])
    cross = np.mean([t[a] @ t[b] for a in (0, 1) for b in (2, 3)])
    assert intra > cross
    assert median_decile_drop(res.losses)


def test_zero_epochs_table_is_pooled_initial_embedding():
    houses = [generate_house(s) for s in range(5)]
    cfg = ObjectEmbedConfig(epochs=0)
    res = train_object_embedder(houses, cfg)
    ref = build_table(houses, init_params(cfg), cfg)
    assert res.losses == []
    for c in ref.categories:
        assert np.array_equal(res.table[c], ref[c])


def test_training_is_deterministic():
    houses = [generate_house(s) for s in range(8)]
    cfg = ObjectEmbedConfig(epochs=3)
    a, b = train_object_embedder(houses, cfg), train_object_embedder(houses, cfg)
    assert a.losses == b.losses
    assert all(np.array_equal(a.table[c], b.table[c]) for c in a.table.categories)


def test_table_covers_training_categories():
    houses = [generate_house(s) for s in range(10)]
    res = train_object_embedder(houses, ObjectEmbedConfig(epochs=1))
    seen = {o.category for h in houses for o in h.objects}
    assert set(res.table.categories) == seen


def test_empty_training_split_rejected():
    with pytest.raises(ValueError):
        train_object_embedder([], ObjectEmbedConfig())


def test_real_house_gradient():
    h = generate_house(11, dataclasses.replace(GeneratorConfig(), room_count=(2, 2)))
    g = extract_object_graph(h, dim=6)
    params = init_params(ObjectEmbedConfig(dim=6, init_scale=1.0))
    cache = prepare(g, 3, 1)
    assert check_gradient(lambda p: graph_loss(p, g, 3, 1, cache), params, max_entries=12) < 1e-4
