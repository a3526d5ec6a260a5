import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from revolt.config import RegionEmbedConfig, RolloutConfig, TopoConfig
from revolt.numeric import sigmoid
from revolt.object_embed import CategoryEmbeddingTable
from revolt.region_embed import init_params as region_init
from revolt.rollout import init_params as rollout_init, rollout_enumerate
from revolt.topo import (
    CLIQUE, FRONTIER, LINK, OBJECT, VERTEX, RelationPriors, TopoTree, integrate_object, integrate_observation,
    label_chain, node_bias,
)

CFG = TopoConfig()


def _priors(enabled=True, samples=8, n_labels=3, seed=0):
    rng = np.random.default_rng(seed)
    table = CategoryEmbeddingTable({c: rng.standard_normal(4) for c in range(6)})
    labels = {l: rng.standard_normal(4) for l in range(n_labels)}
    region = region_init(n_labels, RegionEmbedConfig(hidden=5), dim=4, seed=seed)
    roll = rollout_init(RolloutConfig(n_max=6, hidden=6), dim=4, seed=seed)
    roll["bo"] = rng.standard_normal(4)
    return RelationPriors(table, region, labels, roll, n_labels=n_labels, n_max=6, depth=2, samples=samples,
                          enabled=enabled)


def test_integration_example():
    t = TopoTree()
    v = integrate_observation(t, [(1, (1.0, 0.0)), (2, (1.2, 0.3))], (0.0, 0.0), t.root, CFG)
    assert v == t.root
    objs = t.of_kind(OBJECT)
    assert len(objs) == 2 and len(t.of_kind(CLIQUE)) == 1
    cid = t.nodes[objs[0]].parent
    assert np.allclose(t.nodes[cid].pos, [1.1, 0.15])
    # same category within the merge radius is the same object
    integrate_observation(t, [(1, (1.3, 0.1))], (0.2, 0.0), v, CFG)
    assert len(t.of_kind(OBJECT)) == 2
    # a different category at the same spot is a new object
    integrate_observation(t, [(3, (1.0, 0.0))], (0.2, 0.0), v, CFG)
    assert len(t.of_kind(OBJECT)) == 3
    # moving farther than the vertex merge radius makes a new vertex through a ghost-link
    v2 = integrate_observation(t, [], (4.0, 0.0), v, CFG)
    assert v2 != v and t.nodes[t.nodes[v2].parent].kind == LINK
    assert np.allclose(t.nodes[t.nodes[v2].parent].link, [4.0, 0.0])
    t.validate()


def test_dedupe_boundary():
    t = TopoTree()
    a = integrate_object(t, 1, (2.0, 0.0), t.root, CFG)
    assert integrate_object(t, 1, (2.0 + 0.49, 0.0), t.root, CFG) == a
    assert integrate_object(t, 1, (2.0 + 0.51, 0.0), t.root, CFG) != a


def test_clique_cap_spawns_vertex():
    t = TopoTree()
    # four objects farther apart than the clique radius all seen from the root
    for k in range(4):
        ang = k * np.pi / 2
        integrate_object(t, k, (3.5 * np.cos(ang), 3.5 * np.sin(ang)), t.root, CFG)
    assert len(t.cliques_of(t.root)) == 3
    assert len(t.of_kind(CLIQUE)) == 4 and len(t.of_kind(VERTEX)) == 2
    t.validate()


def test_record_visit_examples():
    t = TopoTree()
    c = t.add_clique((1.0, 0.0), t.root)
    o = t.add_object(2, (1.0, 0.0), c)
    t.record_visit(o)
    t.record_visit(o)
    t.record_visit(c)
    assert (t.nodes[o].n, t.nodes[o].N) == (2, 2)
    assert (t.nodes[c].n, t.nodes[c].N) == (1, 3)
    assert (t.nodes[t.root].n, t.nodes[t.root].N) == (0, 3)
    t.validate()


def _random_tree(seed, steps=25):
    rng = np.random.default_rng(seed)
    t = TopoTree()
    v = t.root
    for _ in range(steps):
        pos = rng.uniform(-8, 8, 2)
        dets = [(int(rng.integers(0, 6)), pos + rng.normal(0, 1.5, 2)) for _ in range(rng.integers(0, 4))]
        fr = [pos + rng.normal(0, 3, 2)] if rng.random() < 0.4 else []
        v = integrate_observation(t, dets, pos, v, CFG, frontiers=fr)
        if rng.random() < 0.5:
            t.record_visit(int(rng.choice(list(t.nodes))))
    return t


def _floyd_warshall(w):
    d = w.copy()
    for k in range(len(d)):
        d = np.minimum(d, d[:, k:k + 1] + d[k:k + 1, :])
    return d


@pytest.mark.parametrize("seed", range(10))
def test_graph_distance_matches_floyd_warshall(seed):
    t = _random_tree(seed)
    ids = sorted(t.nodes)
    idx = {i: k for k, i in enumerate(ids)}
    w = np.full((len(ids), len(ids)), np.inf)
    for i, node in t.nodes.items():
        if node.parent is not None:
            d = np.linalg.norm(node.pos - t.nodes[node.parent].pos)
            w[idx[i], idx[node.parent]] = w[idx[node.parent], idx[i]] = d
    np.fill_diagonal(w, 0.0)
    fw = _floyd_warshall(w)
    rng = np.random.default_rng(seed)
    for _ in range(30):
        a, b = rng.choice(ids, 2)
        assert t.graph_distance(a, b) == pytest.approx(fw[idx[a], idx[b]], abs=1e-9)


def test_validator_catches_breakage():
    t = _random_tree(3)
    t.validate()
    bad = TopoTree.from_dict(t.to_dict())
    some = next(i for i, n in bad.nodes.items() if n.kind == OBJECT)
    bad.nodes[some].N += 1
    with pytest.raises(AssertionError):
        bad.validate()
    over = TopoTree()
    for k in range(4):
        over.add_clique((k, 0.0), over.root)
    with pytest.raises(AssertionError):
        over.validate()
    with pytest.raises(ValueError):
        over.add_object(1, (0, 0), over.root)


def test_serialization_round_trip():
    t = _random_tree(5)
    again = TopoTree.from_dict(json.loads(t.dumps()))
    assert again.dumps() == t.dumps()
    again.validate()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_node_count_never_shrinks(seed):
    rng = np.random.default_rng(seed)
    t = TopoTree()
    v, last = t.root, 1
    for _ in range(40):
        pos = rng.uniform(-6, 6, 2)
        v = integrate_observation(t, [(int(rng.integers(0, 6)), pos + rng.normal(0, 1, 2))], pos, v, CFG,
                                  frontiers=[pos + rng.normal(0, 2, 2)])
        assert len(t.nodes) >= last
        last = len(t.nodes)
    t.validate()


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 500))
def test_node_bias_in_open_unit_interval(seed):
    t = _random_tree(seed, steps=12)
    on, off = _priors(seed=seed % 7), _priors(enabled=False)
    for i, node in t.nodes.items():
        if node.kind == LINK:
            with pytest.raises(ValueError):
                node_bias(t, i, 1, on)
            continue
        assert 0 < node_bias(t, i, 1, on) < 1
        assert node_bias(t, i, 1, off) == 0.5


def test_object_bias_is_sigmoid_of_dot():
    p = _priors()
    assert p.object_bias(2, 4) == pytest.approx(float(sigmoid(p.table[2] @ p.table[4])))
    assert p.object_bias(99, 4) == 0.5


def test_ghost_bias_matches_enumeration():
    p = _priors(samples=4000)
    exact = rollout_enumerate([(0, -1), (2, 0)], 2, p.table[3], p.rollout_params, p.label_table, 3, n_max=6)
    assert abs(p.ghost_bias([0, 2], 3) - exact) < 0.02


def test_frontier_bias_uses_room_chain():
    p = _priors()
    t = TopoTree()
    integrate_observation(t, [(1, (0.5, 0.5)), (2, (0.8, 0.2))], (0.0, 0.0), t.root, CFG, frontiers=[(3.0, 0.0)])
    f = t.of_kind(FRONTIER)[0]
    chain = label_chain(t, t.root, p)
    assert len(chain) == 1
    assert node_bias(t, f, 4, p) == p.ghost_bias(chain, 4)
