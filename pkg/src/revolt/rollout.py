"""Conditional sequence model over house region layouts.

A house is read in breadth-first order.  Step ``i`` is an ``n_max x n_max``
adjacency mask holding node ``i``'s links to earlier nodes (both ``(i, j)``
and ``(j, i)``), repeated over the 16 embedding channels and multiplied by
the embedding matrix whose row ``j`` is the label vector of node ``j``.  A
GRU reads the flattened steps after a zero start token and a linear head
predicts the next region embedding; the label distribution is a softmax
over its dot products with every pooled label vector.

The model input also sets the diagonal entry ``(i, i)`` of every step, so a
one-region prefix still shows the model which region it is in.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import RolloutConfig
from .house import HouseSequence, extract_house_sequence
from .numeric import SgdState, glorot, log_softmax, sgd_step, sigmoid, softmax

log = logging.getLogger(__name__)


def label_matrix(label_table: dict, n_labels: int) -> np.ndarray:
    """(L, d) stack of pooled label vectors; labels never seen get zeros."""
    dim = len(next(iter(label_table.values())))
    out = np.zeros((n_labels, dim))
    for l, v in label_table.items():
        out[int(l)] = v
    return out


def embedding_tensor(labels, label_table: dict, n_max: int) -> np.ndarray:
    """X with ``X[j, k] = r_{label_j}`` for every column ``k``."""
    dim = len(next(iter(label_table.values())))
    x = np.zeros((n_max, n_max, dim))
    for j, l in enumerate(labels):
        x[j, :, :] = label_table[int(l)]
    return x


def step_mask(i: int, links, n_max: int, diagonal=False) -> np.ndarray:
    """2D mask of step ``i`` (0-based) from its links to nodes ``< i``."""
    m = np.zeros((n_max, n_max))
    for j, bit in enumerate(links):
        if bit:
            m[i, j] = m[j, i] = 1.0
    if diagonal:
        m[i, i] = 1.0
    return m


def build_masked_sequence(seq: HouseSequence, label_table: dict, n_max: int = 12, diagonal=False) -> list:
    n = len(seq.order)
    if n > n_max:
        raise ValueError(f"house has {n} regions, more than n_max={n_max}")
    x = embedding_tensor(seq.labels, label_table, n_max)
    return [step_mask(i, seq.steps[i], n_max, diagonal)[:, :, None] * x for i in range(n)]


def init_params(config: RolloutConfig, dim: int = 16, seed=None) -> dict:
    rng = np.random.default_rng(config.seed if seed is None else seed)
    d_in = config.n_max * config.n_max * dim
    h = config.hidden
    p = {}
    for g in ("z", "r", "n"):
        p[f"W{g}"] = glorot(rng, h, d_in)
        p[f"U{g}"] = glorot(rng, h, h)
        p[f"b{g}"] = np.zeros(h)
    p["Wo"] = glorot(rng, dim, h)
    p["bo"] = np.zeros(dim)
    return p


def gru_step(params, u, h):
    """One GRU update for a batch: ``u`` (B, d_in), ``h`` (B, H)."""
    z = sigmoid(u @ params["Wz"].T + h @ params["Uz"].T + params["bz"])
    r = sigmoid(u @ params["Wr"].T + h @ params["Ur"].T + params["br"])
    un = h @ params["Un"].T
    n = np.tanh(u @ params["Wn"].T + r * un + params["bn"])
    h_new = (1.0 - z) * n + z * h
    return h_new, (u, h, z, r, n, un)


def _gru_back(params, cache, dh, grads):
    u, h, z, r, n, un = cache
    dn = dh * (1.0 - z)
    dz = dh * (h - n)
    dh_prev = dh * z
    dan = dn * (1.0 - n * n)
    dr = dan * un
    dun = dan * r
    dar = dr * r * (1.0 - r)
    daz = dz * z * (1.0 - z)
    for g, da in (("z", daz), ("r", dar), ("n", dan)):
        grads[f"W{g}"] += da.T @ u
        grads[f"b{g}"] += da.sum(axis=0)
    grads["Uz"] += daz.T @ h
    grads["Ur"] += dar.T @ h
    grads["Un"] += dun.T @ h
    dh_prev += daz @ params["Uz"] + dar @ params["Ur"] + dun @ params["Un"]
    return dh_prev


def _inputs(steps, n_max, dim):
    """Start token plus all but the last step, flattened row-major."""
    zero = np.zeros(n_max * n_max * dim)
    return [zero] + [s.reshape(-1) for s in steps[:-1]]


def predict_next(prefix_steps, params, label_mat):
    """(x_hat, label distribution) after reading the start token and ``prefix_steps``."""
    d_in = params["Wz"].shape[1]
    h = np.zeros((1, params["Uz"].shape[0]))
    for u in [np.zeros(d_in)] + [np.asarray(s).reshape(-1) for s in prefix_steps]:
        h, _ = gru_step(params, u[None, :], h)
    x = (h @ params["Wo"].T + params["bo"])[0]
    return x, softmax(label_mat @ x)


def loss_rollout(x_hat, labels, label_mat) -> float:
    """Mean cross-entropy of ``softmax(x_hat_i . r_j)`` against the true labels."""
    x_hat = np.atleast_2d(x_hat)
    labels = np.atleast_1d(labels)
    ls = log_softmax(x_hat @ label_mat.T, axis=1)
    return float(-np.mean(ls[np.arange(len(labels)), labels]))


@dataclass
class Batch:
    inputs: np.ndarray  # (T, B, d_in)
    labels: np.ndarray  # (T, B) int
    mask: np.ndarray  # (T, B) 1 where a target exists


def make_batch(sequences, label_table, n_max: int) -> Batch:
    dim = len(next(iter(label_table.values())))
    t_max = max(len(s.order) for s in sequences)
    b = len(sequences)
    inputs = np.zeros((t_max, b, n_max * n_max * dim))
    labels = np.zeros((t_max, b), dtype=int)
    mask = np.zeros((t_max, b))
    for k, seq in enumerate(sequences):
        steps = build_masked_sequence(seq, label_table, n_max, diagonal=True)
        for t, u in enumerate(_inputs(steps, n_max, dim)):
            inputs[t, k] = u
            labels[t, k] = seq.labels[t]
            mask[t, k] = 1.0
    return Batch(inputs, labels, mask)


def batch_loss_grad(params, batch: Batch, label_mat):
    """Teacher-forced loss averaged over every target in the batch, with BPTT."""
    t_max, b, _ = batch.inputs.shape
    h = np.zeros((b, params["Uz"].shape[0]))
    caches, hs = [], []
    for t in range(t_max):
        h_new, cache = gru_step(params, batch.inputs[t], h)
        # Finished sequences keep their state; their outputs are masked out.
        keep = batch.mask[t][:, None]
        h = keep * h_new + (1.0 - keep) * h
        caches.append((cache, keep))
        hs.append(h)
    n = batch.mask.sum()
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    loss = 0.0
    dxs = []
    for t in range(t_max):
        x = hs[t] @ params["Wo"].T + params["bo"]
        ls = log_softmax(x @ label_mat.T, axis=1)
        m = batch.mask[t]
        loss -= float(np.sum(m * ls[np.arange(b), batch.labels[t]]))
        p = np.exp(ls)
        p[np.arange(b), batch.labels[t]] -= 1.0
        dlogit = p * (m / n)[:, None]
        dx = dlogit @ label_mat
        grads["Wo"] += dx.T @ hs[t]
        grads["bo"] += dx.sum(axis=0)
        dxs.append(dx @ params["Wo"])
    dh = np.zeros_like(h)
    for t in range(t_max - 1, -1, -1):
        dh = dh + dxs[t]
        cache, keep = caches[t]
        dh_new = dh * keep
        dh = _gru_back(params, cache, dh_new, grads) + dh * (1.0 - keep)
    return loss / n, grads


def sequence_loss_grad(params, seq: HouseSequence, label_table, n_labels: int, n_max: int):
    """Loss of one house sequence and the gradients (used by gradient checks)."""
    return batch_loss_grad(params, make_batch([seq], label_table, n_max), label_matrix(label_table, n_labels))


def next_label_accuracy(sequences, params, label_mat, n_max: int, label_table, skip_first=True) -> float:
    """Top-1 accuracy of teacher-forced next-label predictions.

    With ``skip_first`` the entrance prediction from the bare start token is
    not scored, so only predictions conditioned on observed regions count.
    """
    hit = tot = 0
    for start in range(0, len(sequences), 64):
        batch = make_batch(sequences[start:start + 64], label_table, n_max)
        t_max, b, _ = batch.inputs.shape
        h = np.zeros((b, params["Uz"].shape[0]))
        for t in range(t_max):
            h, _ = gru_step(params, batch.inputs[t], h)
            if skip_first and t == 0:
                continue
            pred = np.argmax((h @ params["Wo"].T + params["bo"]) @ label_mat.T, axis=1)
            m = batch.mask[t] > 0
            hit += int(np.sum((pred == batch.labels[t])[m]))
            tot += int(m.sum())
    return hit / max(tot, 1)


@dataclass
class RolloutTrainResult:
    params: dict
    losses: list
    accuracy: float
    chance: float


def house_sequences(houses, n_max: int) -> list:
    out = []
    for house in houses:
        seq = extract_house_sequence(house)
        if len(seq.order) <= n_max:
            out.append(seq)
    return out


def train_rollout(train_houses, label_table: dict, n_labels: int, config: RolloutConfig | None = None,
                  test_houses=None) -> RolloutTrainResult:
    config = config or RolloutConfig()
    seqs = house_sequences(train_houses, config.n_max)
    if not seqs:
        raise ValueError("no house sequences to train on")
    label_mat = label_matrix(label_table, n_labels)
    dim = label_mat.shape[1]
    params = init_params(config, dim)
    state = SgdState(lr=config.lr, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    losses = []
    for epoch in range(config.epochs):
        total = 0.0
        order = rng.permutation(len(seqs))
        for start in range(0, len(order), config.batch):
            chunk = [seqs[i] for i in order[start:start + config.batch]]
            loss, grads = batch_loss_grad(params, make_batch(chunk, label_table, config.n_max), label_mat)
            if not np.isfinite(loss):
                raise FloatingPointError(f"rollout diverged at epoch {epoch}")
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > config.clip:
                grads = {k: g * (config.clip / norm) for k, g in grads.items()}
            params = sgd_step(params, grads, state)
            total += loss * len(chunk)
        losses.append(total / len(seqs))
        log.debug("rollout epoch %d loss %.4f", epoch, losses[-1])
    acc = float("nan")
    if test_houses:
        acc = next_label_accuracy(house_sequences(test_houses, config.n_max), params, label_mat,
                                  config.n_max, label_table)
    return RolloutTrainResult(params, losses, acc, 1.0 / n_labels)


class RolloutSampler:
    """Incremental reader: feeds observed regions, then samples continuations.

    Nodes are given as ``(label, parent)`` where ``parent`` is the index of
    the earlier node it links to (``-1`` for the first).  Prefixes longer
    than ``n_max - depth`` keep only their most recent nodes.
    """

    def __init__(self, params, label_table: dict, n_labels: int, n_max: int = 12):
        self.params = params
        self.label_table = label_table
        self.label_mat = label_matrix(label_table, n_labels)
        self.n_max = n_max
        self.dim = self.label_mat.shape[1]

    def _step(self, i, label, parent):
        m = np.zeros((self.n_max, self.n_max))
        m[i, i] = 1.0
        if parent >= 0:
            m[i, parent] = m[parent, i] = 1.0
        x = np.zeros((self.n_max, self.n_max, self.dim))
        x[i, :, :] = self.label_mat[label]
        if parent >= 0:
            x[parent, :, :] = self.label_mat[self.labels[parent]]
        return (m[:, :, None] * x).reshape(-1)

    def reset(self, nodes):
        self.labels = []
        self.h = np.zeros((1, self.params["Uz"].shape[0]))
        self._feed(np.zeros(self.n_max * self.n_max * self.dim))
        for label, parent in nodes:
            self.push(label, parent)
        return self

    def _feed(self, u):
        self.h, _ = gru_step(self.params, u[None, :], self.h)

    def push(self, label, parent):
        i = len(self.labels)
        self.labels.append(int(label))
        self._feed(self._step(i, int(label), int(parent)))

    def distribution(self):
        x = (self.h @ self.params["Wo"].T + self.params["bo"])[0]
        return softmax(self.label_mat @ x)

    def snapshot(self):
        return self.h.copy(), list(self.labels)

    def restore(self, snap):
        self.h, self.labels = snap[0].copy(), list(snap[1])


def trim_prefix(nodes, keep: int):
    """Keep the last ``keep`` nodes of a (label, parent) chain, reindexed."""
    nodes = list(nodes)
    if len(nodes) <= keep:
        return nodes
    cut = len(nodes) - keep
    out = []
    for label, parent in nodes[cut:]:
        p = parent - cut
        out.append((label, p if p >= 0 else -1))
    return out


def rollout_simulate(prefix, depth: int, samples: int, z_target, params, label_table: dict, n_labels: int,
                     n_max: int = 12, seed: int = 0) -> float:
    """Mean over sampled trajectories of the best ``sigmoid(r_l . z_t)`` seen.

    Each trajectory extends the prefix ``depth`` regions deep; every sampled
    region links to the one before it, the first to the last prefix node.
    An empty prefix is just the start token.
    """
    if depth < 1 or samples < 1:
        raise ValueError("depth and samples must be at least 1")
    sampler = RolloutSampler(params, label_table, n_labels, n_max)
    sampler.reset(trim_prefix(prefix, n_max - depth))
    score = sigmoid(sampler.label_mat @ np.asarray(z_target))
    base = sampler.snapshot()
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(samples):
        sampler.restore(base)
        best = 0.0
        for _ in range(depth):
            p = sampler.distribution()
            label = int(rng.choice(len(p), p=p / p.sum()))
            best = max(best, float(score[label]))
            sampler.push(label, len(sampler.labels) - 1)
        total += best
    return total / samples


def rollout_enumerate(prefix, depth: int, z_target, params, label_table: dict, n_labels: int,
                      n_max: int = 12) -> float:
    """Exact expectation that ``rollout_simulate`` estimates, by full enumeration."""
    sampler = RolloutSampler(params, label_table, n_labels, n_max)
    sampler.reset(trim_prefix(prefix, n_max - depth))
    score = sigmoid(sampler.label_mat @ np.asarray(z_target))

    def rec(d, best):
        if d == 0:
            return best
        p = sampler.distribution()
        snap = sampler.snapshot()
        total = 0.0
        for label in range(len(p)):
            if p[label] == 0.0:
                continue
            sampler.restore(snap)
            sampler.push(label, len(sampler.labels) - 1)
            total += p[label] * rec(d - 1, max(best, float(score[label])))
        sampler.restore(snap)
        return total

    return rec(depth, 0.0)
