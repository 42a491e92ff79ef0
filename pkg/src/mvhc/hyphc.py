"""Continuous hyperbolic hierarchical clustering.

Triplets ``(i, j, k)`` are scored by the softmax (temperature ``tau_c``)
over the LCA depths of their three pairs; the relaxed Dasgupta loss is
``sum_triplets (w_ij + w_ik + w_jk - w_hyp) + sum_{i<j} w_ij``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .hyperbolic import BALL_EPS, lca_depth, lca_depth_var, project_to_ball
from .optim import Adam, RiemannianAdam
from .similarity import euclid_sim_matrix
from .tree import Dendrogram, TreeError

logger = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


def sample_triplets(n: int, budget: int, seed=0) -> np.ndarray:
    """Cycle through all pairs ``i < j`` in lexicographic order until ``budget``
    triplets exist, giving each a uniformly random third index."""
    if n < 3:
        raise ValueError(f"triplet sampling needs N >= 3, got {n}")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    take = np.arange(budget) % len(iu)
    i, j = iu[take], ju[take]
    # draw from n-2 slots and skip over i and j (i < j)
    k = rng.integers(n - 2, size=budget)
    k = k + (k >= i)
    k = k + (k >= j)
    return np.stack([i, j, k], axis=1)


def _softmax_weights(depths: list, tau_c: float) -> list:
    stacked = ad.concat([d.reshape(-1, 1) for d in depths], axis=1) * (1.0 / tau_c)
    lse = ad.logsumexp(stacked, axis=1)
    return ad.exp(stacked - lse.reshape(-1, 1))


def w_hyp_var(Y, triplets, W, tau_c: float) -> ad.Var:
    """Per-triplet ``(w_ij, w_ik, w_jk) . softmax(depths / tau_c)``."""
    Y = ad.as_var(Y)
    i, j, k = triplets[:, 0], triplets[:, 1], triplets[:, 2]
    yi, yj, yk = Y[i], Y[j], Y[k]
    depths = [lca_depth_var(yi, yj), lca_depth_var(yi, yk), lca_depth_var(yj, yk)]
    sims = np.stack([W[i, j], W[i, k], W[j, k]], axis=1)
    return (_softmax_weights(depths, tau_c) * sims).sum(axis=1)


def w_hyp(w_ij, w_ik, w_jk, y_i, y_j, y_k, tau_c: float) -> float:
    if min(w_ij, w_ik, w_jk) < 0:
        raise ValueError("similarities must be non-negative")
    if tau_c <= 0:
        raise ValueError("tau_c must be positive")
    d = np.array([lca_depth(y_i, y_j), lca_depth(y_i, y_k), lca_depth(y_j, y_k)]) / tau_c
    e = np.exp(d - d.max())
    return float(np.dot([w_ij, w_ik, w_jk], e / e.sum()))


def _triplet_terms(Y, triplets, W, tau_c) -> ad.Var:
    i, j, k = triplets[:, 0], triplets[:, 1], triplets[:, 2]
    total = W[i, j] + W[i, k] + W[j, k]
    return total - w_hyp_var(Y, triplets, W, tau_c)


def hc_loss(Y, triplets, W, tau_c: float) -> float:
    """Full relaxed loss: triplet sum plus the constant ``sum_{i<j} w_ij``."""
    triplets = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    if len(triplets) == 0:
        raise ValueError("empty triplet batch")
    W = np.asarray(W, dtype=np.float64)
    const = float(np.triu(W, 1).sum())
    return float(_triplet_terms(np.asarray(Y), triplets, W, tau_c).sum().value) + const


def hc_batch_loss(Y, triplets, W, tau_c: float) -> ad.Var:
    """Differentiable batch mean of the triplet terms (no constant)."""
    triplets = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    if len(triplets) == 0:
        raise ValueError("empty triplet batch")
    return _triplet_terms(Y, triplets, W, tau_c).mean()


# the f_hc head ------------------------------------------------------------


def init_hc_head(rng, e_dim: int = 128, hyp_dim: int = 2) -> dict:
    return {"hc.W": ad.glorot_uniform(rng, e_dim, hyp_dim), "hc.b": np.zeros((1, hyp_dim))}


def hc_embed(params, E) -> ad.Var:
    """Affine map followed by ``u -> tanh(|u|) u / |u|``, capped at norm ``1 - eps``."""
    u = ad.as_var(E) @ params["hc.W"] + params["hc.b"]
    r = ad.sqrt((u * u).sum(axis=1, keepdims=True) + 1e-300)
    rv = r.value
    small = rv < 1e-12
    r_safe = ad.where(small, 1.0, r)
    th = ad.tanh(r_safe)
    factor = ad.where(small, 1.0, th / r_safe)
    capped = th.value > 1.0 - BALL_EPS
    factor = ad.where(capped, (1.0 - BALL_EPS) / r_safe, factor)
    return u * factor


@dataclass
class HCResult:
    Y: np.ndarray
    params: dict = field(default_factory=dict)
    losses: list = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")


def _epoch_batches(n, budget, batch_size, rng):
    triplets = sample_triplets(n, budget, rng)
    triplets = triplets[rng.permutation(len(triplets))]
    for start in range(0, len(triplets), batch_size):
        yield triplets[start : start + batch_size]


def optimize_embeddings(E, W=None, *, epochs=50, lr=5e-4, tau_c=0.05, budget=None,
                        batch_size=512, seed=0, params=None, hyp_dim=2) -> HCResult:
    """Train the f_hc head on the relaxed loss with Adam; returns ``Y* = head(E)``."""
    E = np.asarray(E, dtype=np.float64)
    n = E.shape[0]
    W = euclid_sim_matrix(E) if W is None else np.asarray(W, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if params is None:
        params = init_hc_head(rng, E.shape[1], hyp_dim)
    params = {k: v.copy() for k, v in params.items()}
    budget = n * n if budget is None else budget
    held_out = sample_triplets(n, min(budget, 4096), np.random.default_rng([seed, 1]))

    def fixed_loss():
        return float(hc_batch_loss(hc_embed(params, E), held_out, W, tau_c).value)

    result = HCResult(Y=None, initial_loss=fixed_loss())
    opt = Adam(params, lr=lr)

    def batch_fn(p, inp):
        return hc_batch_loss(hc_embed(p, E), inp["triplets"], W, tau_c)

    for epoch in range(epochs):
        vals = []
        for batch in _epoch_batches(n, budget, batch_size, rng):
            val, grads = ad.value_and_grad(batch_fn, params, {"triplets": batch})
            if not np.isfinite(val):
                raise DivergenceError(f"hyperbolic HC loss diverged at epoch {epoch}")
            opt.step(params, grads)
            vals.append(val)
        result.losses.append(float(np.mean(vals)))
        logger.debug("hc epoch %d loss %.6f", epoch, result.losses[-1])
    result.Y = hc_embed(params, E).value
    result.params = params
    result.final_loss = fixed_loss()
    return result


def init_direct(n: int, hyp_dim: int = 2, radius: float = 0.05, seed=0) -> np.ndarray:
    """Uniform sample from the ball of the given radius."""
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(n, hyp_dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * radius * rng.uniform(size=(n, 1)) ** (1.0 / hyp_dim)


def optimize_embeddings_direct(W, Y0=None, *, epochs=500, lr=0.1, tau_c=0.05, budget=None,
                               batch_size=512, seed=0, hyp_dim=2) -> HCResult:
    """Per-point Riemannian Adam on free ball coordinates."""
    W = np.asarray(W, dtype=np.float64)
    n = W.shape[0]
    Y = init_direct(n, hyp_dim, seed=seed) if Y0 is None else project_to_ball(np.array(Y0, dtype=np.float64))
    rng = np.random.default_rng([seed, 2])
    budget = n * n if budget is None else budget
    held_out = sample_triplets(n, min(budget, 4096), np.random.default_rng([seed, 1]))

    def fixed_loss():
        return float(hc_batch_loss(Y, held_out, W, tau_c).value)

    result = HCResult(Y=None, initial_loss=fixed_loss())
    opt = RiemannianAdam(Y.shape, lr=lr)

    def batch_fn(p, inp):
        return hc_batch_loss(p["Y"], inp["triplets"], W, tau_c)

    for epoch in range(epochs):
        vals = []
        for batch in _epoch_batches(n, budget, batch_size, rng):
            val, grads = ad.value_and_grad(batch_fn, {"Y": Y}, {"triplets": batch})
            if not np.isfinite(val):
                raise DivergenceError(f"hyperbolic HC loss diverged at epoch {epoch}")
            Y = opt.step(Y, grads["Y"])
            vals.append(val)
        result.losses.append(float(np.mean(vals)))
    result.Y = Y
    result.final_loss = fixed_loss()
    return result


def pairwise_lca_depths(Y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    Y = np.asarray(Y, dtype=np.float64)
    iu, ju = np.triu_indices(Y.shape[0], k=1)
    return iu, ju, lca_depth(Y[iu], Y[ju])


def decode_tree(Y) -> Dendrogram:
    """Merge pairs in order of decreasing LCA depth (ties: lexicographic pair)
    with union-find; a merge's height is ``max_depth - depth``."""
    Y = np.asarray(Y, dtype=np.float64)
    n = Y.shape[0]
    if n < 2:
        raise TreeError("decoding needs at least 2 points")
    iu, ju, depth = pairwise_lca_depths(Y)
    # lexsort: last key is primary; pair order already lexicographic
    order = np.lexsort((np.arange(len(depth)), -depth))
    top = depth.max()
    parent = list(range(n))
    node_of = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    children, heights = [], []
    for p in order:
        a, b = find(int(iu[p])), find(int(ju[p]))
        if a == b:
            continue
        children.append((node_of[a], node_of[b]))
        heights.append(top - depth[p])
        parent[b] = a
        node_of[a] = n + len(children) - 1
        if len(children) == n - 1:
            break
    return Dendrogram(n, np.array(children).reshape(-1, 2), np.array(heights))
