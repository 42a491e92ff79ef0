"""Euclidean and manifold similarities, hard tuple mining and the weighted triplet loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

from . import autodiff as ad
from .align import contrastive_total_loss, decode, encode, contrastive_head


class MiningError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


def l2_normalize(H) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    norms = np.linalg.norm(H, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot normalise a zero row")
    return H / norms


def euclid_sim(hi, hj) -> float:
    """``max(0, <hi, hj>)**3`` on L2-normalised copies of the inputs."""
    a, b = l2_normalize(hi), l2_normalize(hj)
    return float(max(0.0, float(a @ b)) ** 3)


def euclid_sim_matrix(H) -> np.ndarray:
    Hn = l2_normalize(H)
    return np.maximum(Hn @ Hn.T, 0.0) ** 3


def _top_k(S: np.ndarray, k: int) -> np.ndarray:
    """Per row, ids of the k largest entries excluding the diagonal; ties to smaller id."""
    n = S.shape[0]
    if not 0 <= k < n:
        raise MiningError(f"k={k} must be smaller than N={n}")
    S = S.copy()
    np.fill_diagonal(S, -np.inf)
    order = np.argsort(-S, axis=1, kind="stable")
    return order[:, :k]


def enn(H, k: int) -> np.ndarray:
    """Euclidean kNN ids per row, most similar first."""
    return _top_k(euclid_sim_matrix(H), k)


@dataclass
class AffinityGraph:
    weights: sparse.csr_matrix

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def toarray(self) -> np.ndarray:
        return self.weights.toarray()


def build_affinity(H, k: int) -> AffinityGraph:
    """``a_ij = w^e_ij`` when i and j are in each other's Euclidean kNN, else 0."""
    S = euclid_sim_matrix(H)
    n = S.shape[0]
    knn = np.zeros((n, n), dtype=bool)
    knn[np.repeat(np.arange(n), k), _top_k(S, k).reshape(-1)] = True
    mutual = knn & knn.T
    np.fill_diagonal(mutual, False)
    A = np.where(mutual, S, 0.0)
    return AffinityGraph(sparse.csr_matrix(A))


@dataclass
class DiffusionSimilarity:
    r: np.ndarray  # row i holds r_i

    @property
    def n(self) -> int:
        return self.r.shape[0]


def diffuse(graph: AffinityGraph, alpha: float = 0.99, tol: float = 1e-8, maxiter: int = 1000) -> DiffusionSimilarity:
    """Regularised random walk ``r_i = (1-alpha) (I - alpha S)^{-1} e_i``.

    ``S = D^{-1/2} A D^{-1/2}`` with zero rows for isolated nodes.  Every
    column is solved with conjugate gradient to residual norm ``tol``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    A = graph.weights.tocsr()
    n = A.shape[0]
    deg = np.asarray(A.sum(axis=1)).reshape(-1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    Dm = sparse.diags(inv_sqrt)
    S = Dm @ A @ Dm
    system = (sparse.identity(n, format="csr") - alpha * S).tocsr()
    R = np.zeros((n, n))
    for i in range(n):
        b = np.zeros(n)
        b[i] = 1.0 - alpha
        x, info = cg(system, b, rtol=0.0, atol=tol, maxiter=maxiter)
        if info != 0:
            resid = np.linalg.norm(system @ x - b)
            raise ConvergenceError(
                f"conjugate gradient did not converge for column {i} "
                f"after {maxiter} iterations (residual {resid:.3e})"
            )
        R[:, i] = x
    # the system is symmetric, so column i is r_i
    return DiffusionSimilarity(R.T.copy())


def mnn(diff: DiffusionSimilarity, k: int) -> np.ndarray:
    """Manifold kNN ids per row, largest diffusion score first."""
    return _top_k(diff.r, k)


@dataclass
class HardTuples:
    pos: list  # per anchor, ids sorted by manifold similarity (descending)
    neg: list  # per anchor, ids sorted by Euclidean similarity (descending)


def hard_positives(enn_sets, mnn_sets, diff: DiffusionSimilarity, k_pos: int) -> list:
    """``MNN_kpos(i) minus ENN_kpos(i)``, ordered by ``r_i`` descending."""
    out = []
    for i, (e, m) in enumerate(zip(enn_sets, mnn_sets)):
        excluded = set(np.asarray(e)[:k_pos].tolist())
        cand = [j for j in np.asarray(m)[:k_pos].tolist() if j not in excluded and j != i]
        cand.sort(key=lambda j: (-diff.r[i, j], j))
        out.append(np.array(cand, dtype=np.int64))
    return out


def _by_euclid(S_row, ids):
    return np.array(sorted(ids, key=lambda j: (-S_row[j], j)), dtype=np.int64)


def hard_negatives(H, enn_sets, mnn_sets, k_neg: int) -> list:
    """All ids minus ``{i} | ENN_kneg(i) | MNN_kneg(i)``, Euclidean-descending."""
    S = euclid_sim_matrix(H)
    n = S.shape[0]
    out = []
    for i in range(n):
        excluded = {i, *np.asarray(enn_sets[i])[:k_neg].tolist(), *np.asarray(mnn_sets[i])[:k_neg].tolist()}
        out.append(_by_euclid(S[i], [j for j in range(n) if j not in excluded]))
    return out


def hard_negatives_strict(H, enn_sets, mnn_sets, k_neg: int) -> list:
    """``ENN_kneg(i) minus MNN_kneg(i)``, Euclidean-descending (ablation variant)."""
    S = euclid_sim_matrix(H)
    out = []
    for i, (e, m) in enumerate(zip(enn_sets, mnn_sets)):
        excluded = set(np.asarray(m)[:k_neg].tolist())
        keep = [j for j in np.asarray(e)[:k_neg].tolist() if j not in excluded and j != i]
        out.append(_by_euclid(S[i], keep))
    return out


@dataclass
class MiningResult:
    tuples: HardTuples
    affinity: AffinityGraph
    diffusion: DiffusionSimilarity


def mine_hard_tuples(H, k: int, k_pos: int, k_neg: int, alpha: float = 0.99,
                     strict: bool = False, tol: float = 1e-8, maxiter: int = 1000) -> MiningResult:
    """Affinity graph, diffusion and hard positive/negative sets for every anchor."""
    graph = build_affinity(H, k)
    diff = diffuse(graph, alpha, tol=tol, maxiter=maxiter)
    kk = max(k_pos, k_neg)
    enn_sets = enn(H, kk)
    mnn_sets = mnn(diff, kk)
    pos = hard_positives(enn_sets, mnn_sets, diff, k_pos)
    if strict:
        neg = hard_negatives_strict(H, enn_sets, mnn_sets, k_neg)
    else:
        neg = hard_negatives(H, enn_sets, mnn_sets, k_neg)
    return MiningResult(HardTuples(pos, neg), graph, diff)


def sample_triples(tuples: HardTuples, anchors, rng: np.random.Generator):
    """One uniformly drawn (positive, negative) per anchor.

    Returns ``(triples, n_skipped)``; anchors with an empty set are skipped.
    """
    rows, skipped = [], 0
    for i in np.asarray(anchors).tolist():
        p, q = tuples.pos[i], tuples.neg[i]
        if len(p) == 0 or len(q) == 0:
            skipped += 1
            continue
        rows.append((i, p[rng.integers(len(p))], q[rng.integers(len(q))]))
    return np.array(rows, dtype=np.int64).reshape(-1, 3), skipped


# metric head and losses -------------------------------------------------


def init_metric_head(rng, in_dim: int, e_dim: int = 128) -> dict:
    return {
        "metric.W": ad.glorot_uniform(rng, in_dim, e_dim),
        "metric.b": np.zeros((1, e_dim)),
    }


def metric_embed(params, H):
    return ad.as_var(H) @ params["metric.W"] + params["metric.b"]


def weighted_triplet_loss(params, H, triples, margin: float = 1.0, diff: DiffusionSimilarity = None,
                          weights=None) -> ad.Var:
    """Mean over triples of ``w * [m + |e_i - e_pos|^2 - |e_i - e_neg|^2]_+``.

    ``triples`` index rows of ``H``.  The weight is the manifold similarity
    ``r_i(pos)`` (from ``diff``, or given explicitly as ``weights``) and is a
    constant with respect to the gradients.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(triples) == 0:
        raise MiningError("every anchor was skipped: no triples to evaluate")
    if margin < 0:
        raise ValueError("margin must be non-negative")
    if weights is None:
        if diff is None:
            raise ValueError("pass either diff or weights")
        weights = diff.r[triples[:, 0], triples[:, 1]]
    weights = np.asarray(weights, dtype=np.float64)
    E = metric_embed(params, H)
    ea, ep, en = E[triples[:, 0]], E[triples[:, 1]], E[triples[:, 2]]
    d_pos = ((ea - ep) ** 2).sum(axis=1)
    d_neg = ((ea - en) ** 2).sum(axis=1)
    return (ad.relu(margin + d_pos - d_neg) * weights).mean()


@dataclass
class LossParts:
    total: ad.Var
    reconstruction: ad.Var
    contrastive: ad.Var
    metric: ad.Var


def mv_total_loss(params, views, tau: float, triples=None, margin: float = 1.0, weights=None,
                  n_anchor_rows=None) -> LossParts:
    """Reconstruction + contrastive + weighted triplet loss on one batch.

    ``views`` hold the batch rows of every view.  The first
    ``n_anchor_rows`` rows (default: all) feed the reconstruction and
    contrastive terms; ``triples`` index the full batch rows.
    """
    n = views[0].shape[0] if n_anchor_rows is None else n_anchor_rows
    recon = ad.as_var(0.0)
    per_view = []
    for v, x in enumerate(views):
        x = ad.as_var(x)
        z = encode(params, v, x)
        xa = x[:n]
        recon = recon + ((xa - decode(params, v, z[:n])) ** 2).sum(axis=1).mean()
        per_view.append(contrastive_head(params, z))
    con = contrastive_total_loss([h[:n] for h in per_view], tau)
    if triples is not None and len(triples):
        H = ad.concat(per_view, axis=1)
        met = weighted_triplet_loss(params, H, triples, margin, weights=weights)
    else:
        met = ad.as_var(0.0)
    return LossParts(recon + con + met, recon, con, met)
