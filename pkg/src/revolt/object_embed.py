"""Per-category object embeddings from the house object graphs.

Node vectors are propagated ``depth`` times through an edge-weighted mean
aggregator, ``h_v <- act(W_k @ mean({h_v} | {w_uv * h_u}))``, then
pooled per category inside the graph before a negative-sampling loss
rewards similarity along edges and penalises it for sampled non-neighbors.

``act`` defaults to tanh.  With a sigmoid every coordinate is positive, so
all dot products are positive and the negative term can only be lowered by
shrinking the vectors, which collapses the table.  Training is kept short:
the loss pulls co-located categories together, and long runs erode the
per-category identity that nearest-centroid lookup relies on.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import ObjectEmbedConfig
from .house import ObjectGraph, extract_object_graph
from .numeric import SgdState, log_sigmoid, sgd_step, sigmoid

log = logging.getLogger(__name__)


@dataclass
class CategoryEmbeddingTable:
    vectors: dict  # category id -> (dim,) array

    def __getitem__(self, c):
        return self.vectors[int(c)]

    def __contains__(self, c):
        return int(c) in self.vectors

    def matrix(self, categories):
        return np.stack([self.vectors[int(c)] for c in categories])

    @property
    def categories(self):
        return sorted(self.vectors)


def init_params(config: ObjectEmbedConfig, seed=None) -> dict:
    rng = np.random.default_rng(config.seed if seed is None else seed)
    d = config.dim
    return {
        f"W{k}": config.init_scale * np.eye(d) + 0.1 * rng.standard_normal((d, d))
        for k in range(1, config.depth + 1)
    }


def mean_operator(graph: ObjectGraph) -> np.ndarray:
    """Row v averages h_v with weighted neighbors over 1 + |N(v)| slots."""
    n = graph.n
    a = np.eye(n)
    deg = np.zeros(n)
    for (u, v), w in zip(graph.edges, graph.weights):
        a[u, v] = w
        a[v, u] = w
        deg[u] += 1
        deg[v] += 1
    return a / (1.0 + deg)[:, None]


def pool_operator(categories) -> np.ndarray:
    cats = np.asarray(categories)
    same = (cats[:, None] == cats[None, :]).astype(float)
    return same / same.sum(axis=1, keepdims=True)


ACTIVATIONS = {
    "sigmoid": (sigmoid, lambda h: h * (1.0 - h)),
    "tanh": (np.tanh, lambda h: 1.0 - h * h),
}


def aggregate(graph: ObjectGraph, params: dict, mean_op=None, keep=False, activation="tanh"):
    """Final node embeddings h^K; with ``keep`` also the per-depth stack."""
    act = ACTIVATIONS[activation][0]
    m = mean_operator(graph) if mean_op is None else mean_op
    h = graph.features
    hs = [h]
    k = 1
    while f"W{k}" in params:
        h = act(m @ h @ params[f"W{k}"].T)
        hs.append(h)
        k += 1
    return (h, hs) if keep else h


def pool_by_category(embeddings, categories) -> CategoryEmbeddingTable:
    embeddings = np.asarray(embeddings)
    cats = np.asarray(categories)
    return CategoryEmbeddingTable({int(c): embeddings[cats == c].mean(axis=0) for c in np.unique(cats)})


def sample_negatives(graph: ObjectGraph, q: int, seed: int):
    """(E, q) negatives for the first endpoint of each edge.

    Pool = nodes that are neither neighbors nor share the anchor's
    category; falls back to every other node when that pool is empty.
    """
    rng = np.random.default_rng(seed)
    nb = graph.neighbors()
    cats = graph.categories
    pools = {}
    out = np.zeros((len(graph.edges), q), dtype=int)
    for e, (u, _) in enumerate(graph.edges):
        if u not in pools:
            pool = [w for w in range(graph.n) if w != u and w not in nb[u] and cats[w] != cats[u]]
            if not pool:
                pool = [w for w in range(graph.n) if w != u]
            pools[u] = np.array(pool)
        out[e] = pools[u][rng.integers(len(pools[u]), size=q)]
    return out


def loss_unsup(z, graph: ObjectGraph, q: int, neg_seed: int = 0, negatives=None, grad=False):
    """Negative-sampling loss over pooled embeddings ``z`` (N, d).

    Returns the loss, and dL/dz as a second value when ``grad`` is set.
    """
    if q < 1:
        raise ValueError("need at least one negative sample")
    if len(graph.edges) == 0:
        return (0.0, np.zeros_like(z)) if grad else 0.0
    if negatives is None:
        negatives = sample_negatives(graph, q, neg_seed)
    u, v = graph.edges[:, 0], graph.edges[:, 1]
    w = graph.weights
    pos = w * np.einsum("ij,ij->i", z[u], z[v])
    neg = np.einsum("id,iqd->iq", z[u], z[negatives])
    loss = -np.sum(log_sigmoid(pos)) - np.sum(log_sigmoid(-neg))
    if not grad:
        return float(loss)
    dz = np.zeros_like(z)
    gp = (sigmoid(pos) - 1.0) * w
    np.add.at(dz, u, gp[:, None] * z[v])
    np.add.at(dz, v, gp[:, None] * z[u])
    gn = sigmoid(neg)  # (E, q)
    np.add.at(dz, u, np.einsum("iq,iqd->id", gn, z[negatives]))
    np.add.at(dz, negatives.reshape(-1), (gn[:, :, None] * z[u][:, None, :]).reshape(-1, z.shape[1]))
    return float(loss), dz


def graph_loss(params: dict, graph: ObjectGraph, q: int, neg_seed: int, cache=None, activation="tanh"):
    """Loss and parameter gradients for one house graph."""
    if cache is None:
        cache = prepare(graph, q, neg_seed)
    m, pool, negs = cache
    dact = ACTIVATIONS[activation][1]
    h, hs = aggregate(graph, params, m, keep=True, activation=activation)
    z = pool @ h
    loss, dz = loss_unsup(z, graph, q, negatives=negs, grad=True)
    dh = pool.T @ dz
    grads = {}
    for k in range(len(hs) - 1, 0, -1):
        ds = dh * dact(hs[k])
        mh = m @ hs[k - 1]
        grads[f"W{k}"] = ds.T @ mh
        dh = m.T @ (ds @ params[f"W{k}"])
    return loss, grads


def prepare(graph, q, neg_seed):
    return mean_operator(graph), pool_operator(graph.categories), sample_negatives(graph, q, neg_seed)


@dataclass
class ObjectTrainResult:
    params: dict
    table: CategoryEmbeddingTable
    losses: list
    accuracy: float


def embed_houses(houses, params, config: ObjectEmbedConfig):
    """Unpooled h^K per house plus the categories, for tables and accuracy."""
    out = []
    for h in houses:
        g = extract_object_graph(h, config.feature_seed, config.dim)
        if g.n:
            out.append((aggregate(g, params, activation=config.activation), g.categories))
    return out


def build_table(houses, params, config) -> CategoryEmbeddingTable:
    embs = embed_houses(houses, params, config)
    return pool_by_category(np.concatenate([e for e, _ in embs]), np.concatenate([c for _, c in embs]))


def nearest_centroid_accuracy(houses, params, table: CategoryEmbeddingTable, config) -> float:
    cats = table.categories
    centroids = table.matrix(cats)
    hit = total = 0
    for emb, c in embed_houses(houses, params, config):
        known = np.isin(c, cats)
        d = np.linalg.norm(emb[known][:, None, :] - centroids[None], axis=2)
        hit += int(np.sum(np.array(cats)[np.argmin(d, axis=1)] == c[known]))
        total += int(known.sum())
    return hit / max(total, 1)


def train_object_embedder(train_houses, config: ObjectEmbedConfig | None = None, test_houses=None):
    config = config or ObjectEmbedConfig()
    if not train_houses:
        raise ValueError("empty training split")
    params = init_params(config)
    state = SgdState(lr=config.lr, seed=config.seed)
    graphs = [extract_object_graph(h, config.feature_seed, config.dim) for h in train_houses]
    graphs = [g for g in graphs if len(g.edges)]
    caches = [None] * len(graphs)
    losses = []
    order_rng = np.random.default_rng(config.seed)
    for epoch in range(config.epochs):
        total = 0.0
        for i in order_rng.permutation(len(graphs)):
            g = graphs[i]
            # Fresh negatives every epoch, seeded by (run seed, epoch, graph).
            neg_seed = (config.seed * 1_000_003 + epoch * 7919 + int(i)) % (2**32)
            caches[i] = caches[i] or prepare(g, config.negatives, 0)[:2]
            cache = (*caches[i], sample_negatives(g, config.negatives, neg_seed))
            loss, grads = graph_loss(params, g, config.negatives, neg_seed, cache, config.activation)
            if not np.isfinite(loss):
                raise FloatingPointError(f"object embedder diverged at epoch {epoch}: loss={loss}")
            params = sgd_step(params, {k: v / len(g.edges) for k, v in grads.items()}, state)
            total += loss / len(g.edges)
        losses.append(total / max(len(graphs), 1))
        log.debug("object epoch %d loss %.4f", epoch, losses[-1])
    table = build_table(train_houses, params, config)
    acc = nearest_centroid_accuracy(test_houses, params, table, config) if test_houses else float("nan")
    return ObjectTrainResult(params, table, losses, acc)
