import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from revolt.config import ReasonerConfig, TopoConfig
from revolt.reasoner import (
    bonus_term, candidates, check_termination, exploration_value, revolt_backtrack, select_subgoal,
)
from revolt.topo import FRONTIER, LINK, TopoTree, integrate_observation

RC = ReasonerConfig()


def test_hand_example():
    t = TopoTree()
    c = t.add_clique((6.0, 0.0), t.root)
    t.nodes[c].n, t.nodes[c].N = 2, 10
    cfg = ReasonerConfig(diameter=15.0)
    e = exploration_value(t, c, 0, cfg, t.root, biases={t.root: 0.5, c: 0.8})
    assert e.distance == pytest.approx(0.4)
    assert e.total == pytest.approx(1.6730, abs=5e-5)
    assert e.total == pytest.approx(0.8 + math.sqrt(math.log(10) / 2) - 0.5 * 0.4, abs=1e-12)


def _star(n, biases, visits=None):
    t = TopoTree()
    ids = [t.add_clique((1.0 + k, 0.5 * k), t.root) for k in range(n)]
    b = {t.root: 0.5}
    for i, v in zip(ids, biases):
        b[i] = v
    for i, v in zip(ids, visits or [1] * n):
        for _ in range(v):
            t.record_visit(i)
    return t, ids, b


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=2, max_size=3), st.floats(0.1, 5.0))
def test_degenerate_constants_rank_by_bias_and_scale_invariant(biases, scale):
    cfg = ReasonerConfig(c1=0.0, c2=0.0)
    # bonus stays +inf for unvisited nodes, so every candidate is visited once
    t, ids, b = _star(len(biases), biases)
    t.record_visit(t.root)
    node, entries = select_subgoal(t, 0, cfg, t.root, biases=b)
    cand_bias = {e.node: e.bias for e in entries}
    assert cand_bias[node] == max(cand_bias.values())
    scaled = {k: v * scale for k, v in b.items()}
    assert select_subgoal(t, 0, cfg, t.root, biases=scaled)[0] == node


def test_unvisited_dominates_equal_visited():
    t = TopoTree()
    a = t.add_clique((2.0, 0.0), t.root)
    c = t.add_clique((-2.0, 0.0), t.root)
    t.record_visit(a)
    b = {t.root: 0.5, a: 0.7, c: 0.7}
    node, entries = select_subgoal(t, 0, RC, a, biases=b)
    assert node in (c, t.root) and entries[0].bonus == math.inf
    t.record_visit(t.root)
    assert select_subgoal(t, 0, RC, t.root, biases=b)[0] == c


def test_single_candidate_and_lower_visits_win():
    t = TopoTree()
    assert select_subgoal(t, 0, RC, t.root, biases={t.root: 0.5})[0] == t.root
    # same N_i, same bias and distance; only n_i differs
    t2 = TopoTree()
    a = t2.add_clique((2.0, 1.0), t2.root)
    c = t2.add_clique((2.0, -1.0), t2.root)
    oa = t2.add_object(1, (2.0, 1.0), a)
    oc = t2.add_object(1, (2.0, -1.0), c)
    for node, k in ((a, 3), (oa, 3), (c, 1), (oc, 5)):
        for _ in range(k):
            t2.record_visit(node)
    b = {t2.root: 0.5, a: 0.6, c: 0.6, oa: 0.6, oc: 0.6}
    assert t2.nodes[a].N == t2.nodes[c].N == 6
    ea = exploration_value(t2, a, 0, RC, t2.root, biases=b)
    ec = exploration_value(t2, c, 0, RC, t2.root, biases=b)
    assert ec.total > ea.total
    assert select_subgoal(t2, 0, RC, t2.root, biases=b, exclude=(t2.root, oa, oc))[0] == c


def _random_tree(seed, steps=15):
    rng = np.random.default_rng(seed)
    t = TopoTree()
    v = t.root
    cfg = TopoConfig()
    for _ in range(steps):
        pos = rng.uniform(-6, 6, 2)
        dets = [(int(rng.integers(0, 6)), pos + rng.normal(0, 1.5, 2)) for _ in range(rng.integers(0, 3))]
        v = integrate_observation(t, dets, pos, v, cfg, frontiers=[pos + rng.normal(0, 3, 2)])
    return t, rng


def _hand_value(t, i, biases, robot, cfg):
    """Direct evaluation from the tree's raw fields."""
    members, todo = [], [i]
    while todo:
        j = todo.pop()
        members.append(j)
        todo.extend(t.nodes[j].children)
    ws = [biases[j] for j in members if j in biases]
    mean = sum(ws) / len(ws)
    # plain BFS over the undirected tree with Euclidean edge lengths
    nb = {j: [] for j in t.nodes}
    for j, node in t.nodes.items():
        if node.parent is not None:
            d = float(np.linalg.norm(node.pos - t.nodes[node.parent].pos))
            nb[j].append((node.parent, d))
            nb[node.parent].append((j, d))
    dist, q = {robot: 0.0}, deque([robot])
    while q:
        u = q.popleft()
        for w, d in nb[u]:
            if w not in dist:
                dist[w] = dist[u] + d
                q.append(w)
    n, N = t.nodes[i].n, t.nodes[i].N
    rest = mean - cfg.c2 * dist[i] / cfg.diameter
    return rest if n == 0 else rest + cfg.c1 * math.sqrt(math.log(N) / n)


@pytest.mark.parametrize("seed", range(10))
def test_value_matches_hand_evaluation(seed):
    t, rng = _random_tree(seed)
    ids = list(t.nodes)
    for _ in range(40):
        t.record_visit(int(rng.choice(ids)))
    biases = {j: float(rng.uniform(0.01, 0.99)) for j, n in t.nodes.items()
              if n.kind != LINK and not (n.kind == FRONTIER and not n.active)}
    robot = int(rng.choice(t.of_kind("vertex")))
    cfg = ReasonerConfig(c1=1.0, c2=0.5)
    _, entries = select_subgoal(t, 0, cfg, robot, biases=biases)
    assert entries
    for e in entries:
        got = e.finite_part
        assert got == pytest.approx(_hand_value(t, e.node, biases, robot, cfg), abs=1e-9)


def test_count_invariant_after_many_visits():
    t, rng = _random_tree(99, steps=30)
    ids = list(t.nodes)
    for _ in range(10_000):
        t.record_visit(int(rng.choice(ids)))
    for i, node in t.nodes.items():
        assert node.N == node.n + sum(t.nodes[c].N for c in node.children)
    t.validate()


def test_bonus_shrinks_with_visits():
    vals = [bonus_term(n, 50, 1.0) for n in range(1, 20)]
    assert bonus_term(0, 50, 1.0) == math.inf
    assert all(a > b for a, b in zip(vals, vals[1:]))


def _simulate(t, b, rounds, cfg=RC, exclude=()):
    chosen = []
    for _ in range(rounds):
        node, _ = select_subgoal(t, 0, cfg, t.root, biases=b, exclude=exclude)
        chosen.append(node)
        t.record_visit(node)
    return chosen


@pytest.mark.parametrize("seed", range(5))
def test_no_starvation_on_toy_trees(seed):
    rng = np.random.default_rng(seed)
    t = TopoTree()
    b = {t.root: float(rng.uniform(0.01, 0.99))}
    for k in range(9):
        parent = int(rng.choice(t.of_kind("vertex")))
        c = t.add_clique(rng.uniform(-5, 5, 2), parent) if len(t.cliques_of(parent)) < 3 else None
        if c is not None:
            b[c] = float(rng.uniform(0.01, 0.99))
    assert len(t.nodes) <= 10
    chosen = _simulate(t, b, 200)
    assert set(chosen) == set(candidates(t, RC))


def test_failures_switch_branch():
    # two symmetric branches, each a vertex with one clique, all visited once
    t = TopoTree()
    va = t.add_vertex((3.0, 0.0), t.root)
    vb = t.add_vertex((-3.0, 0.0), t.root)
    ca = t.add_clique((4.0, 0.0), va)
    cb = t.add_clique((-4.0, 0.0), vb)
    for i in (va, vb, ca, cb):
        t.record_visit(i)
    b = {t.root: 0.5, va: 0.6, vb: 0.6, ca: 0.6, cb: 0.6}
    branch = {va: "a", ca: "a", vb: "b", cb: "b"}
    # every selection is a failed trip: it only adds a visit where the robot went
    chosen = _simulate(t, b, 5, exclude=(t.root,))
    first = branch[chosen[0]]
    assert any(branch[c] != first for c in chosen[1:])


def _bfs_path(t, a, b):
    nb = {j: [] for j in t.nodes}
    for j, node in t.nodes.items():
        if node.parent is not None:
            nb[j].append(node.parent)
            nb[node.parent].append(j)
    prev, q = {a: None}, deque([a])
    while q:
        u = q.popleft()
        for w in nb[u]:
            if w not in prev:
                prev[w] = u
                q.append(w)
    out = [b]
    while out[-1] != a:
        out.append(prev[out[-1]])
    return out[::-1]


def test_backtrack_examples_and_oracle():
    t = TopoTree()
    a = t.add_clique((1.0, 0.0), t.root)
    c = t.add_clique((-1.0, 0.0), t.root)
    assert revolt_backtrack(t, t.root, a) == [t.root, a]
    assert revolt_backtrack(t, a, c) == [a, t.root, c]
    for seed in range(10):
        tr, rng = _random_tree(seed)
        ids = list(tr.nodes)
        for _ in range(20):
            x, y = (int(v) for v in rng.choice(ids, 2))
            assert revolt_backtrack(tr, x, y) == _bfs_path(tr, x, y)


def test_check_termination_examples():
    pose = (0.0, 0.0, 0.0)
    assert check_termination([(3, (0.8, 0.0))], 3, pose)
    assert not check_termination([(3, (1.2, 0.0))], 3, pose)
    assert not check_termination([(4, (0.3, 0.0))], 3, pose)


def test_bonus_ablation_excludes_over_visited():
    t, ids, b = _star(2, [0.9, 0.1], visits=[3, 1])
    cfg = ReasonerConfig(ablate=("bonus",))
    cands = candidates(t, cfg)
    assert ids[0] not in cands and ids[1] in cands
    e = exploration_value(t, ids[1], 0, cfg, t.root, biases=b)
    assert e.bonus == 0.0
