"""Region embeddings from the object embeddings of a room's members.

One graph-convolution layer, ``r = mean_rows(sigmoid(A_hat @ Z @ W.T))``
with ``A_hat = D^-1/2 (A + I) D^-1/2`` over the weighted member graph,
feeds a small MLP classifier.  Training combines a membership term
(members score high against ``r``, sampled non-member categories low) with
the label cross-entropy.  ``sigmoid(r_l . z_c)`` is the membership prior.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import RegionEmbedConfig
from .house import RegionSubgraph, extract_region_subgraphs
from .numeric import SgdState, glorot, log_sigmoid, log_softmax, sgd_step, sigmoid

log = logging.getLogger(__name__)


def init_params(n_labels: int, config: RegionEmbedConfig, dim: int = 16, seed=None) -> dict:
    rng = np.random.default_rng(config.seed if seed is None else seed)
    return {
        "W": np.eye(dim) + 0.1 * rng.standard_normal((dim, dim)),
        "W1": glorot(rng, config.hidden, dim),
        "b1": np.zeros(config.hidden),
        "W2": glorot(rng, n_labels, config.hidden),
        "b2": np.zeros(n_labels),
    }


def normalized_adjacency(n: int, edges, weights) -> np.ndarray:
    a = np.eye(n)
    for (u, v), w in zip(edges, weights):
        a[u, v] += w
        a[v, u] += w
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return a * d[:, None] * d[None, :]


def member_matrix(sub: RegionSubgraph, table) -> np.ndarray:
    return table.matrix(sub.categories)


def _forward(sub: RegionSubgraph, table, params):
    if sub.empty:
        raise ValueError(f"region {sub.room} has no objects")
    z = member_matrix(sub, table)
    a = normalized_adjacency(len(z), sub.edges, sub.weights)
    az = a @ z
    h = sigmoid(az @ params["W"].T)
    return h.mean(axis=0), (az, h)


def embed_region(sub: RegionSubgraph, table, params) -> np.ndarray:
    return _forward(sub, table, params)[0]


def classify(r, params) -> np.ndarray:
    """Label logits of the MLP classifier."""
    hid = sigmoid(params["W1"] @ r + params["b1"])
    return params["W2"] @ hid + params["b2"]


def sample_non_members(pool, q: int, seed: int) -> np.ndarray:
    pool = np.asarray(pool)
    if len(pool) == 0:
        raise ValueError("no non-member categories to sample from")
    return pool[np.random.default_rng(seed).integers(len(pool), size=q)]


def loss_region(r, members, non_members, label, params, q: int = 5, seed: int = 0, n: int = 1):
    """Combined region loss for one region.

    ``members`` (m, d) and ``non_members`` (k, d) hold object embeddings;
    ``q`` rows of ``non_members`` are drawn with ``seed``.  ``n`` is the
    batch size dividing the classification term.
    """
    return _loss_terms(r, members, _draw(non_members, q, seed), label, params, n)[0]


def _draw(non_members, q, seed):
    non_members = np.asarray(non_members)
    if q < 1:
        raise ValueError("need at least one negative sample")
    idx = sample_non_members(np.arange(len(non_members)), q, seed)
    return non_members[idx]


def _loss_terms(r, members, negs, label, params, n):
    sp = members @ r
    sn = negs @ r
    logits = classify(r, params)
    ls = log_softmax(logits)
    loss = -np.sum(log_sigmoid(sp)) - np.sum(log_sigmoid(-sn)) - ls[label] / n
    return float(loss), (sp, sn, logits, ls)


def region_loss_grad(params, sub: RegionSubgraph, table, negs, label, n: int = 1):
    """Loss of one region and the gradient of every parameter.

    ``negs`` (q, d) are the already-sampled non-member embeddings.
    """
    r, (az, h) = _forward(sub, table, params)
    members = member_matrix(sub, table)
    loss, (sp, sn, logits, ls) = _loss_terms(r, members, negs, label, params, n)
    hid = sigmoid(params["W1"] @ r + params["b1"])
    dlogit = np.exp(ls)
    dlogit[label] -= 1.0
    dlogit /= n
    g = {"W2": np.outer(dlogit, hid), "b2": dlogit}
    dhid = (params["W2"].T @ dlogit) * hid * (1.0 - hid)
    g["W1"] = np.outer(dhid, r)
    g["b1"] = dhid
    dr = params["W1"].T @ dhid
    dr += (sigmoid(sp) - 1.0) @ members
    dr += sigmoid(sn) @ negs
    # r = mean(h), h = sigmoid(az @ W.T)
    dpre = (dr[None, :] / len(h)) * h * (1.0 - h)
    g["W"] = dpre.T @ az
    return loss, g


def pool_by_label(embeddings, labels) -> dict:
    embeddings = np.asarray(embeddings)
    labels = np.asarray(labels)
    return {int(l): embeddings[labels == l].mean(axis=0) for l in np.unique(labels)}


def membership_score(r, z):
    return sigmoid(np.dot(r, z))


@dataclass
class RegionTrainResult:
    params: dict
    label_table: dict  # label id -> pooled r_l
    losses: list
    membership_accuracy: float
    classification_accuracy: float


def _rooms(houses, table):
    """(subgraph, non-member category pool) for every non-empty room."""
    out = []
    known = set(table.categories)
    for house in houses:
        subs = extract_region_subgraphs(house)
        for sub in subs:
            if sub.empty or not set(sub.categories.tolist()) <= known:
                continue
            inside = set(sub.categories.tolist())
            # Non-members are objects elsewhere in the same house, so
            # frequent categories are sampled more often.
            pool = [o.category for o in house.objects if o.room != sub.room and o.category not in inside]
            if not pool:
                pool = [c for c in table.categories if c not in inside]
            out.append((sub, np.array(pool, dtype=int)))
    return out


def evaluate(rooms, table, params, seed: int = 0):
    """(membership accuracy, classification accuracy) over ``rooms``.

    Membership is scored on every member category plus an equal number of
    sampled non-member categories, thresholding ``sigmoid(r . z)`` at 0.5.
    """
    hit_m = tot_m = hit_c = 0
    for i, (sub, pool) in enumerate(rooms):
        r = embed_region(sub, table, params)
        members = np.unique(sub.categories)
        negs = sample_non_members(pool, len(members), seed * 7919 + i)
        hit_m += int(np.sum(sigmoid(table.matrix(members) @ r) > 0.5))
        hit_m += int(np.sum(sigmoid(table.matrix(negs) @ r) < 0.5))
        tot_m += len(members) + len(negs)
        hit_c += int(np.argmax(classify(r, params)) == sub.label)
    n = max(len(rooms), 1)
    return hit_m / max(tot_m, 1), hit_c / n


def train_region_embedder(train_houses, table, n_labels: int, config: RegionEmbedConfig | None = None,
                          test_houses=None) -> RegionTrainResult:
    config = config or RegionEmbedConfig()
    rooms = _rooms(train_houses, table)
    if not rooms:
        raise ValueError("no non-empty rooms to train on")
    params = init_params(n_labels, config, dim=len(table[table.categories[0]]))
    state = SgdState(lr=config.lr, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    losses = []
    batch = config.batch
    for epoch in range(config.epochs):
        total = 0.0
        order = rng.permutation(len(rooms))
        for start in range(0, len(order), batch):
            idx = order[start:start + batch]
            acc = {k: np.zeros_like(v) for k, v in params.items()}
            for i in idx:
                sub, pool = rooms[i]
                negs = table.matrix(sample_non_members(pool, config.negatives, int(rng.integers(2**32))))
                loss, g = region_loss_grad(params, sub, table, negs, sub.label, n=len(idx))
                total += loss
                for k in acc:
                    acc[k] += g[k]
            if not np.isfinite(total):
                raise FloatingPointError(f"region embedder diverged at epoch {epoch}")
            params = sgd_step(params, {k: v / len(idx) for k, v in acc.items()}, state)
        losses.append(total / len(rooms))
        log.debug("region epoch %d loss %.4f", epoch, losses[-1])
    embs = [embed_region(sub, table, params) for sub, _ in rooms]
    label_table = pool_by_label(embs, [sub.label for sub, _ in rooms])
    mem = cls = float("nan")
    if test_houses:
        mem, cls = evaluate(_rooms(test_houses, table), table, params, seed=config.seed + 1)
    return RegionTrainResult(params, label_table, losses, mem, cls)
