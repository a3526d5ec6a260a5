"""Small dense numerics shared by the three relation networks.

Parameters are dicts of float64 numpy arrays; every loss in the package
is written as ``loss_fn(params) -> (loss, grads)`` with a hand-derived
backward pass, and ``check_gradient`` compares those against central
differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    # Split by sign so neither branch overflows exp.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def log_sigmoid(x):
    """log(sigmoid(x)) without cancellation for large |x|."""
    x = np.asarray(x, dtype=float)
    out = -np.logaddexp(0.0, -x)
    return out if out.ndim else float(out)


def log_softmax(v, axis=-1):
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("log_softmax of an empty vector")
    m = np.max(v, axis=axis, keepdims=True)
    s = v - m
    return s - np.log(np.sum(np.exp(s), axis=axis, keepdims=True))


def softmax(v, axis=-1):
    return np.exp(log_softmax(v, axis=axis))


@dataclass
class SgdState:
    lr: float = 0.05
    step: int = 0
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")


def sgd_step(params: dict, grads: dict, state: SgdState) -> dict:
    """Return ``p - lr * g`` for every parameter; bumps ``state.step``."""
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        if np.shape(g) != np.shape(p):
            raise ValueError(f"shape mismatch for {name}: {np.shape(p)} vs {np.shape(g)}")
        out[name] = p - state.lr * g
    state.step += 1
    return out


def check_gradient(loss_fn, params: dict, epsilon: float = 1e-5, floor: float = 1e-6,
                   max_entries: int | None = None, seed: int = 0) -> float:
    """Max entrywise relative error between analytic and central-difference gradients.

    The relative error of an entry is ``|a - n| / max(|a|, |n|, floor)``;
    ``floor`` keeps entries whose true gradient is ~0 from dominating.
    ``max_entries`` probes a seeded random subset of each large parameter.
    """
    rng = np.random.default_rng(seed)
    loss, grads = loss_fn(params)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss}")
    worst = 0.0
    for name, p in params.items():
        analytic = np.asarray(grads[name], dtype=float)
        flat = p.reshape(-1)
        probe = range(flat.size)
        if max_entries is not None and flat.size > max_entries:
            probe = rng.choice(flat.size, size=max_entries, replace=False)
        for i in probe:
            old = flat[i]
            flat[i] = old + epsilon
            lp, _ = loss_fn(params)
            flat[i] = old - epsilon
            lm, _ = loss_fn(params)
            flat[i] = old
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise FloatingPointError("non-finite loss during finite differences")
            num = (lp - lm) / (2 * epsilon)
            a = analytic.reshape(-1)[i]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
    return worst


def glorot(rng, rows, cols):
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def median_decile_drop(losses) -> bool:
    """True when the median loss of the last 10% of a log beats the first 10%."""
    losses = np.asarray(losses, dtype=float)
    k = max(1, len(losses) // 10)
    return float(np.median(losses[-k:])) < float(np.median(losses[:k]))
