"""Sub-goal choice over the topological tree with an upper-confidence rule.

    V(t | i) = mean bias over i and its descendants
               + c1 * sqrt(ln N_i / n_i)
               - c2 * (tree distance from the robot's vertex / house diameter)

An unvisited candidate has an unbounded bonus: it outranks every visited
one, and unvisited candidates are ordered by the rest of V.  Remaining
ties go to the higher bias, then the lower node id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ReasonerConfig
from .topo import CLIQUE, FRONTIER, LINK, VERTEX, TopoTree, node_bias

CANDIDATE_KINDS = (CLIQUE, VERTEX, FRONTIER)


@dataclass
class ValueEntry:
    node: int
    bias: float  # mean over the node and its descendants
    bonus: float  # inf when unvisited
    distance: float  # normalized tree distance
    total: float  # inf when unvisited
    distance_term: float = 0.0  # c2 * distance

    @property
    def finite_part(self) -> float:
        return self.bias - self.distance_term if math.isinf(self.bonus) else self.total

    def sort_key(self):
        return (math.isinf(self.bonus), self.finite_part, self.bias, -self.node)


def counted(tree: TopoTree, i: int) -> bool:
    """Nodes that carry an inductive bias (ghost-links and explored ghosts do not)."""
    node = tree.nodes[i]
    return node.kind != LINK and not (node.kind == FRONTIER and not node.active)


def mean_bias(tree: TopoTree, i: int, biases: dict, stats: dict | None = None) -> float:
    if stats is not None:
        s, c = stats[i]
        return s / c if c else 0.5
    members = [j for j in [i] + tree.descendants(i) if counted(tree, j)]
    if not members:
        return 0.5
    return float(np.mean([biases[j] for j in members]))


def bonus_term(n: int, N: int, c1: float) -> float:
    if n == 0:
        return math.inf
    return c1 * math.sqrt(math.log(N) / n)


def exploration_value(tree: TopoTree, i: int, target: int, config: ReasonerConfig, robot_node: int,
                      priors=None, biases: dict | None = None, stats: dict | None = None,
                      distances: dict | None = None) -> ValueEntry:
    """Value entry of candidate ``i``.

    ``biases``, subtree ``stats`` (sum, count) and tree ``distances`` from
    the robot's node may be precomputed for a whole selection round.
    """
    if biases is None:
        biases = {j: node_bias(tree, j, target, priors) for j in [i] + tree.descendants(i) if counted(tree, j)}
    node = tree.nodes[i]
    bias = mean_bias(tree, i, biases, stats)
    c1 = 0.0 if "bonus" in config.ablate else config.c1
    c2 = 0.0 if "distance" in config.ablate else config.c2
    bonus = 0.0 if "bonus" in config.ablate else bonus_term(node.n, node.N, c1)
    raw = distances[i] if distances is not None else tree.graph_distance(robot_node, i)
    dist = raw / config.diameter
    dterm = c2 * dist
    total = math.inf if math.isinf(bonus) else bias + bonus - dterm
    return ValueEntry(i, bias, bonus, dist, total, dterm)


def candidates(tree: TopoTree, config: ReasonerConfig, exclude=()) -> list:
    out = []
    for i, node in tree.nodes.items():
        if node.kind not in CANDIDATE_KINDS or i in exclude:
            continue
        if node.kind == FRONTIER and not node.active:
            continue
        if "bonus" in config.ablate and node.n > config.visit_cap:
            continue
        out.append(i)
    return sorted(out)


def all_biases(tree: TopoTree, target: int, priors) -> dict:
    return {j: node_bias(tree, j, target, priors) for j in tree.nodes if counted(tree, j)}


def select_subgoal(tree: TopoTree, target: int, config: ReasonerConfig, robot_node: int, priors=None,
                   exclude=(), biases: dict | None = None):
    """(chosen node id or None, value entries of every candidate, best first)."""
    cands = candidates(tree, config, exclude)
    if not cands:
        return None, []
    if biases is None:
        biases = all_biases(tree, target, priors)
    stats = subtree_stats(tree, biases)
    dist = tree_distances(tree, robot_node)
    entries = [exploration_value(tree, i, target, config, robot_node, priors, biases, stats, dist) for i in cands]
    entries.sort(key=lambda e: e.sort_key(), reverse=True)
    return entries[0].node, entries


def subtree_stats(tree: TopoTree, biases: dict) -> dict:
    """node -> (sum of biases, count) over the node and its descendants."""
    out = {}
    order = []
    stack = [tree.root]
    while stack:
        i = stack.pop()
        order.append(i)
        stack.extend(tree.nodes[i].children)
    for i in reversed(order):
        s, c = (biases[i], 1) if i in biases else (0.0, 0)
        for ch in tree.nodes[i].children:
            cs, cc = out[ch]
            s += cs
            c += cc
        out[i] = (s, c)
    return out


def tree_distances(tree: TopoTree, source: int) -> dict:
    """Tree distance from ``source`` to every node."""
    adj = {i: [] for i in tree.nodes}
    for i, node in tree.nodes.items():
        if node.parent is not None:
            w = tree.edge_length(i)
            adj[i].append((node.parent, w))
            adj[node.parent].append((i, w))
    dist = {source: 0.0}
    stack = [source]
    while stack:
        u = stack.pop()
        for v, w in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + w
                stack.append(v)
    return dist


def revolt_backtrack(tree: TopoTree, current: int, selected: int) -> list:
    """Tree path from ``current`` back through the common ancestor to ``selected``."""
    return tree.path(current, selected)


def check_termination(detections, target: int, pose, radius: float = 1.0) -> bool:
    """Claim success when a seen ``target`` instance is within ``radius``.

    ``detections`` are (category, birth-frame position) pairs.
    """
    p = np.asarray(pose[:2], dtype=float)
    for cat, pos in detections:
        if int(cat) == int(target) and float(np.linalg.norm(np.asarray(pos, dtype=float) - p)) <= radius:
            return True
    return False
