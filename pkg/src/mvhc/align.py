"""Per-view autoencoders and the shared contrastive head.

Parameters live in flat ``{name: array}`` dicts; a fully connected stack
named ``prefix`` stores ``prefix.{l}.W`` / ``prefix.{l}.b`` for layer ``l``.
Hidden layers use tanh, the last layer of every stack is linear.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad


def init_mlp(rng: np.random.Generator, dims: Sequence[int], prefix: str) -> dict:
    params = {}
    for l, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"{prefix}.{l}.W"] = ad.glorot_uniform(rng, fan_in, fan_out)
        params[f"{prefix}.{l}.b"] = np.zeros((1, fan_out))
    return params


def n_layers(params: Mapping, prefix: str) -> int:
    l = 0
    while f"{prefix}.{l}.W" in params:
        l += 1
    return l


def mlp(params: Mapping, prefix: str, x):
    """Forward through stack ``prefix``: tanh on hidden layers, linear output."""
    depth = n_layers(params, prefix)
    if depth == 0:
        raise KeyError(f"no layers named {prefix!r}")
    h = x
    for l in range(depth):
        h = h @ params[f"{prefix}.{l}.W"] + params[f"{prefix}.{l}.b"]
        if l < depth - 1:
            h = ad.tanh(h)
    return h


def init_autoencoders(rng, view_dims, hidden_dims=(500, 500, 2000), ae_dim=512) -> dict:
    """Encoders ``D_v-hidden...-ae_dim`` and mirrored decoders for every view."""
    params = {}
    for v, d in enumerate(view_dims):
        enc = [d, *hidden_dims, ae_dim]
        params.update(init_mlp(rng, enc, f"ae{v}.enc"))
        params.update(init_mlp(rng, enc[::-1], f"ae{v}.dec"))
    return params


def init_contrastive_head(rng, ae_dim=512, h_dim=128) -> dict:
    return init_mlp(rng, [ae_dim, ae_dim, h_dim], "con")


def encode(params, v: int, x):
    return mlp(params, f"ae{v}.enc", x)


def decode(params, v: int, z):
    return mlp(params, f"ae{v}.dec", z)


def contrastive_head(params, z):
    return mlp(params, "con", z)


def reconstruction_loss(params, views) -> ad.Var:
    """Sum over views of the mean (over rows) squared reconstruction error."""
    total = ad.as_var(0.0)
    for v, x in enumerate(views):
        x = ad.as_var(x)
        recon = decode(params, v, encode(params, v, x))
        if recon.shape != x.shape:
            raise ad.ShapeError(f"view {v}: reconstruction {recon.shape} vs input {x.shape}")
        total = total + ((x - recon) ** 2).sum(axis=1).mean()
    return total


def cosine_sim(hi, hj) -> float:
    hi = np.asarray(hi, dtype=np.float64)
    hj = np.asarray(hj, dtype=np.float64)
    ni, nj = np.linalg.norm(hi), np.linalg.norm(hj)
    if ni == 0 or nj == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(hi @ hj / (ni * nj))


def _row_normalize(h: ad.Var) -> ad.Var:
    norms = ad.sqrt((h * h).sum(axis=1, keepdims=True))
    if np.any(norms.value == 0):
        raise ValueError("cosine similarity is undefined for a zero row")
    return h / norms


def contrastive_pair_loss(h1, h2, tau: float) -> ad.Var:
    """Cross-view contrastive loss with reference view ``h1`` and contrast view ``h2``.

    Row ``i`` of ``h2`` is the positive for row ``i`` of ``h1``; the
    denominator runs over intra-view pairs ``j != i`` and all cross-view
    pairs (including the positive).
    """
    h1, h2 = ad.as_var(h1), ad.as_var(h2)
    n = h1.shape[0]
    if n == 0:
        raise ValueError("contrastive loss needs at least one row")
    if h1.shape != h2.shape:
        raise ad.ShapeError(f"node 'contrastive': views have shapes {h1.shape} and {h2.shape}")
    a, b = _row_normalize(h1), _row_normalize(h2)
    intra = (a @ a.T) * (1.0 / tau)
    cross = (a @ b.T) * (1.0 / tau)
    positive = (a * b).sum(axis=1) * (1.0 / tau)
    mask = np.concatenate([~np.eye(n, dtype=bool), np.ones((n, n), dtype=bool)], axis=1)
    lse = ad.logsumexp(ad.concat([intra, cross], axis=1), axis=1, mask=mask)
    return -(positive - lse).mean()


def contrastive_total_loss(per_view, tau: float) -> ad.Var:
    """Sum of pair losses over all ordered view pairs."""
    if len(per_view) < 2:
        raise ValueError("contrastive loss needs at least 2 views")
    total = ad.as_var(0.0)
    for v1, h1 in enumerate(per_view):
        for v2, h2 in enumerate(per_view):
            if v1 != v2:
                total = total + contrastive_pair_loss(h1, h2, tau)
    return total


@dataclass
class AlignedFeatures:
    per_view: list
    concat: np.ndarray


def aligned_vars(params, views) -> list:
    return [contrastive_head(params, encode(params, v, ad.as_var(x))) for v, x in enumerate(views)]


def align_features(params, views) -> AlignedFeatures:
    per_view = [h.value for h in aligned_vars(params, views)]
    return AlignedFeatures(per_view, np.hstack(per_view))
