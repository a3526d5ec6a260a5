"""Per-episode multi-layer topological tree: objects, cliques, vertices, ghosts.

Vertices are places the robot has stood, rooted at the birth pose.  Two
vertices are joined through a ghost-link node that stores only their
relative offset.  Cliques group nearby objects and hang off a vertex (at
most ``clique_cap`` per vertex); objects hang off cliques; frontier ghosts
mark unexplored space and hang off the vertex they were seen from.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .config import TopoConfig
from .house import edge_weight
from .numeric import sigmoid

OBJECT, CLIQUE, VERTEX, LINK, FRONTIER = "object", "clique", "vertex", "ghost-link", "ghost-frontier"
KINDS = (OBJECT, CLIQUE, VERTEX, LINK, FRONTIER)


@dataclass
class TopoNode:
    id: int
    kind: str
    pos: np.ndarray  # birth frame; a ghost-link sits at the midpoint of its vertices
    parent: int | None = None
    children: list = field(default_factory=list)
    category: int | None = None  # objects
    link: np.ndarray | None = None  # ghost-links: child vertex minus parent vertex
    n: int = 0
    N: int = 0
    active: bool = True  # frontier ghosts turn inactive once explored
    views: list = field(default_factory=list)  # cliques: points they were viewed from
    failures: int = 0


class TopoTree:
    def __init__(self, root_pos=(0.0, 0.0)):
        self.nodes: dict = {}
        self._next = 0
        self.root = self._add(VERTEX, root_pos, None).id
        self.version = 0

    # ---- construction --------------------------------------------------
    def _add(self, kind, pos, parent, **kw) -> TopoNode:
        if kind not in KINDS:
            raise ValueError(f"unknown node kind {kind!r}")
        node = TopoNode(self._next, kind, np.asarray(pos, dtype=float).copy(), parent, **kw)
        self.nodes[node.id] = node
        self._next += 1
        if parent is not None:
            self.nodes[parent].children.append(node.id)
        self.version = getattr(self, "version", 0) + 1
        return node

    def add_vertex(self, pos, parent_vertex: int) -> int:
        """New vertex joined to ``parent_vertex`` through a ghost-link."""
        pv = self.nodes[parent_vertex]
        if pv.kind != VERTEX:
            raise ValueError("vertices attach to vertices")
        pos = np.asarray(pos, dtype=float)
        link = self._add(LINK, (pv.pos + pos) / 2, parent_vertex, link=pos - pv.pos)
        return self._add(VERTEX, pos, link.id).id

    def add_clique(self, pos, vertex: int) -> int:
        if self.nodes[vertex].kind != VERTEX:
            raise ValueError("cliques attach to vertices")
        return self._add(CLIQUE, pos, vertex).id

    def add_object(self, category: int, pos, clique: int) -> int:
        if self.nodes[clique].kind != CLIQUE:
            raise ValueError("objects attach to cliques")
        oid = self._add(OBJECT, pos, clique, category=int(category)).id
        self._refresh_clique(clique)
        return oid

    def add_frontier(self, pos, vertex: int) -> int:
        if self.nodes[vertex].kind != VERTEX:
            raise ValueError("frontier ghosts attach to vertices")
        return self._add(FRONTIER, pos, vertex).id

    def _refresh_clique(self, cid):
        objs = self.objects_of(cid)
        if objs:
            self.nodes[cid].pos = np.mean([self.nodes[o].pos for o in objs], axis=0)

    # ---- queries ---------------------------------------------------------
    def of_kind(self, kind) -> list:
        return [i for i, n in self.nodes.items() if n.kind == kind]

    def objects_of(self, cid) -> list:
        return [c for c in self.nodes[cid].children if self.nodes[c].kind == OBJECT]

    def cliques_of(self, vid) -> list:
        return [c for c in self.nodes[vid].children if self.nodes[c].kind == CLIQUE]

    def vertex_objects(self, vid) -> list:
        return [o for c in self.cliques_of(vid) for o in self.objects_of(c)]

    def ancestors(self, i) -> list:
        out = []
        p = self.nodes[i].parent
        while p is not None:
            out.append(p)
            p = self.nodes[p].parent
        return out

    def descendants(self, i) -> list:
        out, stack = [], list(self.nodes[i].children)
        while stack:
            c = stack.pop()
            out.append(c)
            stack.extend(self.nodes[c].children)
        return sorted(out)

    def owner_vertex(self, i) -> int:
        """The vertex a node hangs under (itself for vertices)."""
        while self.nodes[i].kind != VERTEX:
            i = self.nodes[i].parent
        return i

    def edge_length(self, child) -> float:
        node = self.nodes[child]
        parent = self.nodes[node.parent]
        if node.kind == LINK:
            return float(np.linalg.norm(node.link)) / 2
        if parent.kind == LINK:
            return float(np.linalg.norm(parent.link)) / 2
        return float(np.linalg.norm(node.pos - parent.pos))

    def path(self, a, b) -> list:
        """Tree path of node ids from ``a`` to ``b`` through their lowest common ancestor."""
        up_a = [a] + self.ancestors(a)
        up_b = [b] + self.ancestors(b)
        in_b = set(up_b)
        lca = next(x for x in up_a if x in in_b)
        left = up_a[:up_a.index(lca) + 1]
        right = up_b[:up_b.index(lca)]
        return left + right[::-1]

    def graph_distance(self, a, b) -> float:
        p = self.path(a, b)
        total = 0.0
        for u, v in zip(p[:-1], p[1:]):
            child = v if self.nodes[v].parent == u else u
            total += self.edge_length(child)
        return total

    # ---- counts ----------------------------------------------------------
    def record_visit(self, i):
        self.nodes[i].n += 1
        for a in [i] + self.ancestors(i):
            self.nodes[a].N += 1

    # ---- checks ----------------------------------------------------------
    def validate(self, cap: int = 3):
        """Raise AssertionError when a structural invariant is broken."""
        seen = set()
        stack = [self.root]
        while stack:
            i = stack.pop()
            assert i not in seen, "cycle"
            seen.add(i)
            stack.extend(self.nodes[i].children)
        assert seen == set(self.nodes), "disconnected nodes"
        for i, node in self.nodes.items():
            assert 0 <= node.n <= node.N, f"counts of {i}"
            assert node.N == node.n + sum(self.nodes[c].N for c in node.children), f"N of {i}"
            for c in node.children:
                assert self.nodes[c].parent == i
            if node.kind == VERTEX:
                assert len(self.cliques_of(i)) <= cap, f"vertex {i} over clique cap"
            if node.parent is None:
                assert i == self.root and node.kind == VERTEX
                continue
            pk = self.nodes[node.parent].kind
            if node.kind == CLIQUE or node.kind == FRONTIER:
                assert pk == VERTEX, f"{node.kind} {i} under {pk}"
            elif node.kind == OBJECT:
                assert pk == CLIQUE
            elif node.kind == LINK:
                assert pk == VERTEX
                kids = node.children
                assert len(kids) == 1 and self.nodes[kids[0]].kind == VERTEX
                assert np.allclose(self.nodes[kids[0]].pos - self.nodes[node.parent].pos, node.link)
            elif node.kind == VERTEX:
                assert pk == LINK

    # ---- persistence -----------------------------------------------------
    def to_dict(self) -> dict:
        out = []
        for i in sorted(self.nodes):
            n = self.nodes[i]
            out.append({
                "id": n.id, "kind": n.kind, "pos": [float(v) for v in n.pos], "parent": n.parent,
                "category": n.category, "link": None if n.link is None else [float(v) for v in n.link],
                "n": n.n, "N": n.N, "active": n.active, "views": [[float(a), float(b)] for a, b in n.views],
                "failures": n.failures,
            })
        return {"root": self.root, "nodes": out}

    @classmethod
    def from_dict(cls, data) -> "TopoTree":
        tree = cls.__new__(cls)
        tree.nodes = {}
        tree.root = int(data["root"])
        tree.version = 0
        for d in data["nodes"]:
            tree.nodes[d["id"]] = TopoNode(
                d["id"], d["kind"], np.array(d["pos"]), d["parent"], [], d["category"],
                None if d["link"] is None else np.array(d["link"]), d["n"], d["N"], d["active"],
                [tuple(v) for v in d["views"]], d.get("failures", 0),
            )
        for i in sorted(tree.nodes):
            p = tree.nodes[i].parent
            if p is not None:
                tree.nodes[p].children.append(i)
        tree._next = max(tree.nodes) + 1
        return tree

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# ---- integration -------------------------------------------------------------

def _always(a, b):
    return True


def nearest(tree: TopoTree, kind, pos, radius=np.inf, where=None, visible=_always):
    best, best_d = None, radius
    for i in tree.of_kind(kind):
        node = tree.nodes[i]
        if where is not None and not where(node):
            continue
        d = float(np.linalg.norm(node.pos - pos))
        if d <= best_d and visible(node.pos, pos):
            best, best_d = i, d
    return best


def locate_vertex(tree: TopoTree, pos, current: int, config: TopoConfig, visible=_always) -> int:
    """Vertex for a robot standing at ``pos``: an existing one in reach or a new child of ``current``."""
    pos = np.asarray(pos, dtype=float)
    v = nearest(tree, VERTEX, pos, config.vertex_merge_radius, visible=visible)
    if v is not None:
        return v
    return tree.add_vertex(pos, current)


def attach_clique(tree: TopoTree, pos, robot_vertex: int, config: TopoConfig, visible=_always) -> int:
    """New clique under the nearest vertex with spare capacity.

    Candidates are ``robot_vertex`` and any vertex in view within the clique
    radius; if all are full, a new vertex is placed between the robot's
    vertex and the clique.
    """
    pos = np.asarray(pos, dtype=float)
    cap = config.clique_cap
    cands = []
    for v in tree.of_kind(VERTEX):
        d = float(np.linalg.norm(tree.nodes[v].pos - pos))
        if v == robot_vertex or (d <= config.clique_radius and visible(tree.nodes[v].pos, pos)):
            cands.append((d, v))
    for _, v in sorted(cands):
        if len(tree.cliques_of(v)) < cap:
            return tree.add_clique(pos, v)
    base = tree.nodes[robot_vertex].pos
    gap = pos - base
    dist = float(np.linalg.norm(gap))
    spot = base + gap * (max(0.0, dist - config.vertex_min_clearance - 0.5) / dist) if dist > 0 else base
    v = tree.add_vertex(spot, robot_vertex)
    return tree.add_clique(pos, v)


def integrate_object(tree: TopoTree, category: int, pos, robot_vertex: int, config: TopoConfig,
                     visible=_always) -> int:
    """Object node for a detection, merged with a same-category node within the merge radius."""
    pos = np.asarray(pos, dtype=float)
    same = nearest(tree, OBJECT, pos, config.merge_radius, where=lambda n: n.category == category)
    if same is not None:
        return same
    clique = nearest(tree, CLIQUE, pos, config.clique_radius, visible=visible)
    if clique is None:
        clique = attach_clique(tree, pos, robot_vertex, config, visible)
    return tree.add_object(category, pos, clique)


def integrate_observation(tree: TopoTree, detections, robot_pos, robot_vertex: int, config: TopoConfig,
                          frontiers=(), visible=_always):
    """Fold one observation into the tree; returns the robot's vertex.

    ``detections`` are (category, birth-frame position) pairs and
    ``frontiers`` birth-frame frontier points (already filtered).
    """
    v = locate_vertex(tree, robot_pos, robot_vertex, config, visible)
    for cat, pos in detections:
        integrate_object(tree, int(cat), pos, v, config, visible)
    for p in frontiers:
        p = np.asarray(p, dtype=float)
        if nearest(tree, FRONTIER, p, config.ghost_merge_radius, where=lambda n: n.active) is None:
            home = nearest(tree, VERTEX, p, np.inf, visible=visible)
            tree.add_frontier(p, v if home is None else home)
    return v


# ---- priors --------------------------------------------------------------

class RelationPriors:
    """Inductive biases from the three relation networks.

    ``enabled=False`` turns every bias into 0.5 (no relational knowledge).
    """

    def __init__(self, table, region_params=None, label_table=None, rollout_params=None, n_labels: int = 10,
                 n_max: int = 12, depth: int = 3, samples: int = 8, region_scale: float = 2.75,
                 enabled: bool = True, seed: int = 0):
        self.table = table
        self.region_params = region_params
        self.label_table = label_table
        self.rollout_params = rollout_params
        self.n_labels = n_labels
        self.n_max = n_max
        self.depth = depth
        self.samples = samples
        self.region_scale = region_scale
        self.enabled = enabled
        self.seed = seed
        self._ghost_cache = {}
        self._region_cache = {}

    def z(self, category):
        return self.table[category] if category in self.table else None

    def object_bias(self, category, target) -> float:
        if not self.enabled:
            return 0.5
        zc, zt = self.z(category), self.z(target)
        if zc is None or zt is None:
            return 0.5
        return float(sigmoid(zc @ zt))

    def region_embedding(self, objects):
        """GCN embedding of (category, position) members, or None when empty/unknown."""
        from .house import RegionSubgraph
        from .region_embed import embed_region

        objs = [(c, p) for c, p in objects if c in self.table]
        if not objs or self.region_params is None:
            return None
        key = tuple((int(c), round(float(p[0]), 2), round(float(p[1]), 2)) for c, p in objs)
        if key in self._region_cache:
            return self._region_cache[key]
        pos = np.array([p for _, p in objs], dtype=float)
        n = len(objs)
        edges = np.array([(a, b) for a in range(n) for b in range(a + 1, n)], dtype=int).reshape(-1, 2)
        d = np.linalg.norm(pos[edges[:, 0]] - pos[edges[:, 1]], axis=1) if len(edges) else np.zeros(0)
        sub = RegionSubgraph(-1, -1, np.array([c for c, _ in objs], dtype=int), pos, edges,
                             edge_weight(d, self.region_scale))
        r = embed_region(sub, self.table, self.region_params)
        self._region_cache[key] = r
        return r

    def region_bias(self, objects, target) -> float:
        if not self.enabled:
            return 0.5
        r = self.region_embedding(objects)
        zt = self.z(target)
        if r is None or zt is None:
            return 0.5
        return float(sigmoid(r @ zt))

    def region_label(self, objects):
        """Most probable room label of a member set, or None without evidence."""
        from .region_embed import classify

        r = self.region_embedding(objects)
        if r is None:
            return None
        return int(np.argmax(classify(r, self.region_params)))

    def ghost_bias(self, prefix_labels, target) -> float:
        if not self.enabled:
            return 0.5
        zt = self.z(target)
        if self.rollout_params is None or zt is None:
            return 0.5
        from .rollout import rollout_simulate

        key = (tuple(prefix_labels), int(target))
        if key not in self._ghost_cache:
            prefix = [(l, i - 1) for i, l in enumerate(prefix_labels)]
            self._ghost_cache[key] = rollout_simulate(
                prefix, self.depth, self.samples, zt, self.rollout_params, self.label_table,
                self.n_labels, self.n_max, seed=self.seed,
            )
        return self._ghost_cache[key]


def label_chain(tree: TopoTree, vertex: int, priors: RelationPriors) -> list:
    """Room labels along the root-to-``vertex`` path, repeats collapsed."""
    chain = []
    for v in reversed([vertex] + tree.ancestors(vertex)):
        if tree.nodes[v].kind != VERTEX:
            continue
        objs = [(tree.nodes[o].category, tree.nodes[o].pos) for o in tree.vertex_objects(v)]
        lab = priors.region_label(objs)
        if lab is not None and (not chain or chain[-1] != lab):
            chain.append(lab)
    return chain


def node_bias(tree: TopoTree, i: int, target: int, priors: RelationPriors) -> float:
    """Inductive bias of node ``i`` for ``target``, always in (0, 1)."""
    node = tree.nodes[i]
    if node.kind == OBJECT:
        return priors.object_bias(node.category, target)
    if node.kind == CLIQUE:
        objs = [(tree.nodes[o].category, tree.nodes[o].pos) for o in tree.objects_of(i)]
        return priors.region_bias(objs, target)
    if node.kind == VERTEX:
        objs = [(tree.nodes[o].category, tree.nodes[o].pos) for o in tree.vertex_objects(i)]
        return priors.region_bias(objs, target)
    if node.kind == FRONTIER:
        return priors.ghost_bias(label_chain(tree, tree.owner_vertex(node.parent), priors), target)
    raise ValueError("ghost-links carry no bias")
