import numpy as np
import pytest
from sklearn.base import clone

from conftest import planted_two_block
from mvhc import HyperbolicHC, LinkageClustering, MultiViewHierarchicalClustering, synth_hier_gaussian
from mvhc.data import DataError, PipelineConfig
from mvhc.estimators import STAGES, StageError
from mvhc.hyperbolic import BALL_EPS
from mvhc.metrics import dendrogram_purity

SMALL = dict(hidden_dims=(16,), ae_dim=8, h_dim=6, e_dim=6, k=10, batch_size=32,
             ae_epochs=2, con_epochs=2, joint_epochs=2, hc_epochs=2, n_clusters=3)


@pytest.fixture(scope="module")
def data():
    return synth_hier_gaussian(45, 3, sep=10.0, noise=0.1, seed=0)


@pytest.fixture(scope="module")
def fitted(data):
    return MultiViewHierarchicalClustering(**SMALL, seed=1).fit(data.views)


class TestPipelineEstimator:
    def test_outputs(self, fitted, data):
        assert fitted.completed_stages_ == list(STAGES)
        assert fitted.embeddings_.shape == (45, 2)
        assert np.linalg.norm(fitted.embeddings_, axis=1).max() <= 1 - BALL_EPS + 1e-15
        assert fitted.features_.shape == (45, 12) and fitted.metric_embeddings_.shape == (45, 6)
        assert fitted.dendrogram_.leaves_under(fitted.dendrogram_.root) == set(range(45))
        assert sorted(set(fitted.labels_)) == [0, 1, 2]
        assert 0 < dendrogram_purity(fitted.dendrogram_, data.labels) <= 1

    def test_similarity_matrix(self, fitted):
        W = fitted.similarity_
        np.testing.assert_array_equal(W, W.T)
        assert np.all(W >= 0) and np.all(np.diag(W) == 0)

    def test_loss_curves(self, fitted):
        assert len(fitted.loss_curves_["pretrain-ae"]) == 2
        assert len(fitted.loss_curves_["hc"]) == 2
        parts = fitted.loss_curves_["finetune-parts"]
        assert set(parts) == {"total", "reconstruction", "contrastive", "metric"}
        np.testing.assert_allclose(
            parts["total"], np.add(np.add(parts["reconstruction"], parts["contrastive"]), parts["metric"]),
            rtol=1e-12)

    def test_deterministic(self, fitted, data):
        again = MultiViewHierarchicalClustering(**SMALL, seed=1).fit(data.views)
        assert again.embeddings_.tobytes() == fitted.embeddings_.tobytes()
        np.testing.assert_array_equal(again.dendrogram_.children, fitted.dendrogram_.children)

    def test_seed_matters(self, fitted, data):
        other = MultiViewHierarchicalClustering(**SMALL, seed=2).fit(data.views)
        assert other.embeddings_.tobytes() != fitted.embeddings_.tobytes()

    def test_zero_epochs_valid_tree(self, data):
        cfg = dict(SMALL, ae_epochs=0, con_epochs=0, joint_epochs=0, hc_epochs=0)
        est = MultiViewHierarchicalClustering(**cfg).fit(data.views)
        assert len(est.dendrogram_.children) == 44
        assert est.loss_curves_["hc"] == []

    @pytest.mark.parametrize("stage", STAGES)
    def test_stop_after(self, stage, data):
        est = MultiViewHierarchicalClustering(**dict(SMALL, ae_epochs=1, con_epochs=1, joint_epochs=1,
                                                     hc_epochs=1)).fit(data.views, stop_after=stage)
        assert est.completed_stages_ == list(STAGES[: STAGES.index(stage) + 1])
        assert hasattr(est, "dendrogram_") == (stage == "decode")

    def test_unknown_stage(self, data):
        with pytest.raises(ValueError, match="unknown stage"):
            MultiViewHierarchicalClustering(**SMALL).fit(data.views, stop_after="bogus")

    def test_init_params_override(self, data):
        est = MultiViewHierarchicalClustering(**dict(SMALL, ae_epochs=0, con_epochs=0, joint_epochs=0,
                                                     hc_epochs=0))
        est.fit(data.views, init_params={"hc.b": np.array([[0.3, 0.0]]), "hc.W": np.zeros((6, 2))})
        np.testing.assert_allclose(est.embeddings_, np.tile([[np.tanh(0.3), 0.0]], (45, 1)), rtol=1e-14)

    def test_direct_mode_and_strict(self, data):
        est = MultiViewHierarchicalClustering(**SMALL, hc_mode="direct", strict_negatives=True).fit(data.views)
        assert est.embeddings_.shape == (45, 2)
        with pytest.raises(NotImplementedError):
            est.transform(data.views)

    def test_transform_matches_fit(self, data):
        est = MultiViewHierarchicalClustering(**SMALL, zscore=False).fit(data.views)
        np.testing.assert_allclose(est.transform(data.views), est.embeddings_, rtol=1e-12, atol=1e-15)

    def test_sklearn_params(self):
        est = MultiViewHierarchicalClustering(tau=0.25, n_clusters=4)
        params = est.get_params()
        assert params["tau"] == 0.25 and params["hidden_dims"] == (500, 500, 2000)
        assert clone(est).get_params() == params
        assert est.set_params(k=7).k == 7

    def test_config_round_trip(self):
        cfg = PipelineConfig(tau=0.3, hc_mode="direct", n_clusters=5)
        est = MultiViewHierarchicalClustering.from_config(cfg)
        assert est.to_config() == cfg

    def test_invalid_config_raised_at_fit(self, data):
        with pytest.raises(DataError):
            MultiViewHierarchicalClustering(**dict(SMALL, tau=-1.0)).fit(data.views)

    def test_missing_cluster_count(self, data):
        with pytest.raises(DataError, match="n_clusters"):
            MultiViewHierarchicalClustering(**dict(SMALL, n_clusters=None)).fit(data.views)

    def test_row_mismatch(self, rng):
        with pytest.raises(DataError):
            MultiViewHierarchicalClustering(**SMALL).fit([rng.normal(size=(10, 3)), rng.normal(size=(9, 3))])

    def test_stage_error_wraps(self, data):
        views = [v.copy() for v in data.views]
        views[0][0, 0] = np.inf
        with pytest.raises((StageError, DataError)):
            MultiViewHierarchicalClustering(**SMALL).fit(views)


class TestLinkageClustering:
    def test_concatenates_zscored_views(self, data):
        est = LinkageClustering(n_clusters=3).fit(data.views)
        assert est.features_.shape == (45, sum(data.dims))
        np.testing.assert_allclose(est.features_.std(axis=0), 1.0, rtol=1e-12)
        assert dendrogram_purity(est.dendrogram_, data.labels) > 0.95
        assert len(set(est.labels_)) == 3

    def test_single_matrix(self, rng):
        X = rng.normal(size=(12, 3))
        est = LinkageClustering(method="single", zscore=False).fit(X)
        np.testing.assert_array_equal(est.features_, X)
        assert not hasattr(est, "labels_")


class TestHyperbolicHC:
    def test_precomputed(self):
        W, blocks = planted_two_block(7)
        est = HyperbolicHC(n_clusters=2, seed=0).fit(W)
        assert est.final_loss_ < est.initial_loss_
        left, right, _ = est.dendrogram_.merge_sets()[-1]
        assert {left, right} == {frozenset(np.flatnonzero(blocks == b).tolist()) for b in (0, 1)}
        assert len(set(est.labels_[blocks == 0])) == 1

    def test_cube_affinity(self, rng):
        X = np.vstack([rng.normal(size=(5, 3)) + [5, 0, 0], rng.normal(size=(5, 3)) + [0, 5, 0]])
        est = HyperbolicHC(affinity="cube", epochs=50).fit(X)
        assert np.all(np.diag(est.similarity_) == 0)
        assert est.embeddings_.shape == (10, 2)

    def test_bad_affinity(self):
        with pytest.raises(ValueError):
            HyperbolicHC(affinity="rbf").fit(np.eye(3))
