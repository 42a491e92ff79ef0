"""Scikit-learn style estimators.

* :class:`MultiViewHierarchicalClustering` -- the full contrastive multi-view
  pipeline ending in a decoded hyperbolic hierarchy.
* :class:`LinkageClustering` -- z-scored, concatenated views fed to a classic
  agglomerative linkage.
* :class:`HyperbolicHC` -- continuous hyperbolic HC with free per-point
  embeddings on a precomputed similarity matrix.
"""

from __future__ import annotations

import logging
import time
from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from .align import (
    align_features,
    contrastive_head,
    contrastive_total_loss,
    encode,
    init_autoencoders,
    init_contrastive_head,
    reconstruction_loss,
)
from .data import PipelineConfig, zscore_columns
from .hyphc import (
    DivergenceError,
    decode_tree,
    hc_embed,
    init_hc_head,
    optimize_embeddings,
    optimize_embeddings_direct,
)
from .optim import Adam
from .similarity import (
    euclid_sim_matrix,
    init_metric_head,
    metric_embed,
    mine_hard_tuples,
    mv_total_loss,
    sample_triples,
)
from .tree import linkage
from .validation import check_similarity_matrix, check_views

logger = logging.getLogger(__name__)

STAGES = ("pretrain-ae", "pretrain-con", "mining", "finetune", "hc", "decode")

HEAD_HC_LR = 5e-4
DIRECT_HC_LR = 0.1


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def _subset(params, prefixes):
    return {k: v for k, v in params.items() if k.startswith(prefixes)}


def _check_finite(stage, epoch, value):
    if not np.isfinite(value):
        raise DivergenceError(f"{stage} loss is not finite at epoch {epoch}")


class MultiViewHierarchicalClustering(ClusterMixin, BaseEstimator):
    """Contrastive multi-view hierarchical clustering in the Poincare ball.

    Stages: autoencoder pretraining, contrastive head pretraining, hard
    tuple mining on the aligned features, joint finetuning of
    reconstruction + contrastive + weighted triplet losses, hyperbolic HC
    on the metric embeddings, and decoding to a binary tree.

    Parameters mirror :class:`mvhc.data.PipelineConfig`; ``n_clusters`` is
    needed to derive ``k_pos = ceil(N / 2K)`` and ``k_neg = ceil(N / K)`` and
    to produce flat ``labels_``.

    Attributes
    ----------
    dendrogram_ : Dendrogram
    embeddings_ : ndarray (N, hyp_dim), the optimised ball embeddings
    features_ : ndarray (N, V * h_dim), aligned features after finetuning
    metric_embeddings_ : ndarray (N, e_dim)
    similarity_ : ndarray (N, N), cube similarity of the metric embeddings
    labels_ : ndarray (N,), only when ``n_clusters`` is set
    params_ : dict of all network parameters
    loss_curves_ : dict stage -> per-epoch mean loss
    stage_times_ : dict stage -> seconds
    config_ : PipelineConfig with data-dependent defaults resolved
    """

    def __init__(
        self,
        n_clusters=None,
        tau=0.5,
        tau_c=0.05,
        k=50,
        k_pos=None,
        k_neg=None,
        margin=1.0,
        alpha=0.99,
        strict_negatives=False,
        lr=5e-4,
        hc_lr=None,
        batch_size=256,
        hc_batch_size=512,
        ae_epochs=50,
        con_epochs=20,
        joint_epochs=20,
        hc_epochs=50,
        triplet_budget=None,
        hidden_dims=(500, 500, 2000),
        ae_dim=512,
        h_dim=128,
        e_dim=128,
        hyp_dim=2,
        hc_mode="head",
        zscore=True,
        cg_tol=1e-8,
        cg_maxiter=1000,
        seed=0,
    ):
        self.n_clusters = n_clusters
        self.tau = tau
        self.tau_c = tau_c
        self.k = k
        self.k_pos = k_pos
        self.k_neg = k_neg
        self.margin = margin
        self.alpha = alpha
        self.strict_negatives = strict_negatives
        self.lr = lr
        self.hc_lr = hc_lr
        self.batch_size = batch_size
        self.hc_batch_size = hc_batch_size
        self.ae_epochs = ae_epochs
        self.con_epochs = con_epochs
        self.joint_epochs = joint_epochs
        self.hc_epochs = hc_epochs
        self.triplet_budget = triplet_budget
        self.hidden_dims = hidden_dims
        self.ae_dim = ae_dim
        self.h_dim = h_dim
        self.e_dim = e_dim
        self.hyp_dim = hyp_dim
        self.hc_mode = hc_mode
        self.zscore = zscore
        self.cg_tol = cg_tol
        self.cg_maxiter = cg_maxiter
        self.seed = seed

    @classmethod
    def from_config(cls, config: PipelineConfig) -> "MultiViewHierarchicalClustering":
        return cls(**{f.name: getattr(config, f.name) for f in fields(PipelineConfig)})

    def to_config(self) -> PipelineConfig:
        return PipelineConfig(**self.get_params())

    # ------------------------------------------------------------------
    def fit(self, X, y=None, stop_after=None, init_params=None):
        """Run the pipeline on a sequence of views.

        ``stop_after`` names a stage in :data:`STAGES`; fitting stops once it
        completes (``params_`` holds the state reached).  ``init_params``
        replaces the seeded initialisation for any parameter it names.
        """
        if stop_after is not None and stop_after not in STAGES:
            raise ValueError(f"unknown stage {stop_after!r}; choose from {STAGES}")
        views = check_views(X)
        n = views[0].shape[0]
        cfg = self.to_config().resolve(n)
        self.config_ = cfg
        if cfg.zscore:
            views = [zscore_columns(v) for v in views]
        seeds = np.random.SeedSequence(cfg.seed).spawn(6)
        rng_init, rng_ae, rng_con, rng_joint, rng_hc = (np.random.default_rng(s) for s in seeds[:5])

        params = init_autoencoders(rng_init, [v.shape[1] for v in views], cfg.hidden_dims, cfg.ae_dim)
        params.update(init_contrastive_head(rng_init, cfg.ae_dim, cfg.h_dim))
        params.update(init_metric_head(rng_init, len(views) * cfg.h_dim, cfg.e_dim))
        params.update(init_hc_head(rng_init, cfg.e_dim, cfg.hyp_dim))
        if init_params:
            for name, value in init_params.items():
                if name in params:
                    params[name] = np.array(value, dtype=np.float64).reshape(params[name].shape)
        self.params_ = params
        self.loss_curves_ = {}
        self.stage_times_ = {}
        self.completed_stages_ = []

        def run(stage, fn):
            if self.completed_stages_ and self.completed_stages_[-1] == stop_after:
                return False
            t0 = time.perf_counter()
            try:
                fn()
            except Exception as exc:
                raise StageError(stage, exc) from exc
            self.stage_times_[stage] = time.perf_counter() - t0
            self.completed_stages_.append(stage)
            logger.info("stage %s done in %.2fs", stage, self.stage_times_[stage])
            return True

        run("pretrain-ae", lambda: self._pretrain_autoencoders(views, cfg, rng_ae))
        run("pretrain-con", lambda: self._pretrain_contrastive(views, cfg, rng_con))
        run("mining", lambda: self._mine(views, cfg))
        run("finetune", lambda: self._finetune(views, cfg, rng_joint))
        run("hc", lambda: self._hyperbolic(views, cfg, rng_hc))
        run("decode", lambda: self._decode())
        if self.completed_stages_[-1] == "decode" and cfg.n_clusters:
            self.labels_ = self.dendrogram_.cut(min(cfg.n_clusters, n))
        return self

    # stages -------------------------------------------------------------
    def _pretrain_autoencoders(self, views, cfg, rng):
        params = self.params_
        trainable = _subset(params, ("ae",))
        opt = Adam(trainable, lr=cfg.lr)
        curve = []
        for epoch in range(cfg.ae_epochs):
            vals = []
            for idx in _batches(len(views[0]), cfg.batch_size, rng):
                batch = [v[idx] for v in views]
                val, grads = ad.value_and_grad(lambda p, _: reconstruction_loss(p, batch), trainable)
                _check_finite("reconstruction", epoch, val)
                opt.step(trainable, grads)
                vals.append(val)
            curve.append(float(np.mean(vals)))
        params.update(trainable)
        self.loss_curves_["pretrain-ae"] = curve

    def _pretrain_contrastive(self, views, cfg, rng):
        params = self.params_
        Z = [encode(params, v, x).value for v, x in enumerate(views)]
        trainable = _subset(params, ("con.",))
        opt = Adam(trainable, lr=cfg.lr)

        def loss(p, batch):
            return contrastive_total_loss([contrastive_head(p, z) for z in batch], cfg.tau)

        curve = []
        for epoch in range(cfg.con_epochs):
            vals = []
            for idx in _batches(len(views[0]), cfg.batch_size, rng):
                val, grads = ad.value_and_grad(loss, trainable, [z[idx] for z in Z])
                _check_finite("contrastive", epoch, val)
                opt.step(trainable, grads)
                vals.append(val)
            curve.append(float(np.mean(vals)))
        params.update(trainable)
        self.loss_curves_["pretrain-con"] = curve

    def _mine(self, views, cfg):
        H = align_features(self.params_, views).concat
        self.mining_ = mine_hard_tuples(
            H, cfg.k, cfg.k_pos, cfg.k_neg, cfg.alpha,
            strict=cfg.strict_negatives, tol=cfg.cg_tol, maxiter=cfg.cg_maxiter,
        )
        tuples = self.mining_.tuples
        usable = sum(1 for p, q in zip(tuples.pos, tuples.neg) if len(p) and len(q))
        if usable == 0 and cfg.joint_epochs > 0:
            # finetuning then reduces to reconstruction + contrastive terms
            logger.warning("hard mining left no anchor with both a positive and a negative")
        self.n_usable_anchors_ = usable

    def _finetune(self, views, cfg, rng):
        params = self.params_
        trainable = _subset(params, ("ae", "con.", "metric."))
        opt = Adam(trainable, lr=cfg.lr)
        tuples = self.mining_.tuples
        r = self.mining_.diffusion.r
        curve = {"total": [], "reconstruction": [], "contrastive": [], "metric": []}
        for epoch in range(cfg.joint_epochs):
            vals = {key: [] for key in curve}
            for anchors in _batches(len(views[0]), cfg.batch_size, rng):
                triples, _ = sample_triples(tuples, anchors, rng)
                b, t = len(anchors), len(triples)
                rows = np.concatenate([anchors, triples[:, 1], triples[:, 2]])
                local_anchor = {int(a): i for i, a in enumerate(anchors)}
                local = np.stack(
                    [
                        np.array([local_anchor[int(a)] for a in triples[:, 0]], dtype=np.int64),
                        b + np.arange(t),
                        b + t + np.arange(t),
                    ],
                    axis=1,
                ).reshape(-1, 3)
                weights = r[triples[:, 0], triples[:, 1]]
                batch = [v[rows] for v in views]
                holder = {}

                def loss(p, _):
                    parts = mv_total_loss(p, batch, cfg.tau, local, cfg.margin, weights, n_anchor_rows=b)
                    holder["parts"] = parts
                    return parts.total

                val, grads = ad.value_and_grad(loss, trainable)
                _check_finite("joint", epoch, val)
                opt.step(trainable, grads)
                parts = holder["parts"]
                vals["total"].append(val)
                vals["reconstruction"].append(float(parts.reconstruction.value))
                vals["contrastive"].append(float(parts.contrastive.value))
                vals["metric"].append(float(parts.metric.value))
            for key in curve:
                curve[key].append(float(np.mean(vals[key])))
        params.update(trainable)
        self.loss_curves_["finetune"] = curve["total"]
        self.loss_curves_["finetune-parts"] = curve

    def _hyperbolic(self, views, cfg, rng):
        params = self.params_
        self.features_ = align_features(params, views).concat
        E = metric_embed(params, self.features_).value
        self.metric_embeddings_ = E
        W = euclid_sim_matrix(E)
        np.fill_diagonal(W, 0.0)
        self.similarity_ = W
        seed = int(rng.integers(2**31))
        if cfg.hc_mode == "head":
            res = optimize_embeddings(
                E, W, epochs=cfg.hc_epochs, lr=cfg.hc_lr or HEAD_HC_LR, tau_c=cfg.tau_c,
                budget=cfg.triplet_budget, batch_size=cfg.hc_batch_size, seed=seed,
                params=_subset(params, ("hc.",)), hyp_dim=cfg.hyp_dim,
            )
            params.update(res.params)
        else:
            res = optimize_embeddings_direct(
                W, epochs=cfg.hc_epochs, lr=cfg.hc_lr or DIRECT_HC_LR, tau_c=cfg.tau_c,
                budget=cfg.triplet_budget, batch_size=cfg.hc_batch_size, seed=seed,
                hyp_dim=cfg.hyp_dim,
            )
        self.embeddings_ = res.Y
        self.hc_result_ = res
        self.loss_curves_["hc"] = res.losses

    def _decode(self):
        self.dendrogram_ = decode_tree(self.embeddings_)

    # ------------------------------------------------------------------
    def transform(self, X):
        """Ball embeddings of new samples through the trained networks (head mode)."""
        check_is_fitted(self, "dendrogram_")
        if self.config_.hc_mode != "head":
            raise NotImplementedError("transform needs hc_mode='head'")
        views = check_views(X, min_samples=1)
        if self.config_.zscore:
            raise NotImplementedError("transform of new samples is only defined with zscore=False")
        H = align_features(self.params_, views).concat
        return hc_embed(self.params_, metric_embed(self.params_, H)).value


class LinkageClustering(ClusterMixin, BaseEstimator):
    """Agglomerative baseline on z-scored, concatenated views."""

    def __init__(self, method="ward", n_clusters=None, zscore=True):
        self.method = method
        self.n_clusters = n_clusters
        self.zscore = zscore

    def fit(self, X, y=None):
        if isinstance(X, np.ndarray) and X.ndim == 2:
            views = check_views([X], min_views=1)
        else:
            views = check_views(X, min_views=1)
        if self.zscore:
            views = [zscore_columns(v) for v in views]
        self.features_ = np.hstack(views)
        self.dendrogram_ = linkage(self.features_, self.method)
        if self.n_clusters:
            self.labels_ = self.dendrogram_.cut(self.n_clusters)
        return self


class HyperbolicHC(ClusterMixin, BaseEstimator):
    """Continuous hyperbolic HC on free per-point embeddings.

    ``fit`` takes a precomputed non-negative similarity matrix
    (``affinity='precomputed'``) or feature rows, whose cube similarity of
    normalised rows is used (``affinity='cube'``).
    """

    def __init__(self, tau_c=0.05, epochs=500, lr=DIRECT_HC_LR, triplet_budget=None,
                 batch_size=512, hyp_dim=2, affinity="precomputed", n_clusters=None, seed=0):
        self.tau_c = tau_c
        self.epochs = epochs
        self.lr = lr
        self.triplet_budget = triplet_budget
        self.batch_size = batch_size
        self.hyp_dim = hyp_dim
        self.affinity = affinity
        self.n_clusters = n_clusters
        self.seed = seed

    def fit(self, X, y=None):
        if self.affinity == "precomputed":
            W = check_similarity_matrix(X)
        elif self.affinity == "cube":
            W = euclid_sim_matrix(np.asarray(X, dtype=np.float64))
            np.fill_diagonal(W, 0.0)
        else:
            raise ValueError(f"unknown affinity {self.affinity!r}")
        res = optimize_embeddings_direct(
            W, epochs=self.epochs, lr=self.lr, tau_c=self.tau_c, budget=self.triplet_budget,
            batch_size=self.batch_size, seed=self.seed, hyp_dim=self.hyp_dim,
        )
        self.similarity_ = W
        self.embeddings_ = res.Y
        self.loss_curve_ = res.losses
        self.initial_loss_ = res.initial_loss
        self.final_loss_ = res.final_loss
        self.dendrogram_ = decode_tree(res.Y)
        if self.n_clusters:
            self.labels_ = self.dendrogram_.cut(self.n_clusters)
        return self
