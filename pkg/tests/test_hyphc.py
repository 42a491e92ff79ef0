import math

import numpy as np
import pytest

from conftest import lca_depth_oracle, planted_two_block, random_ball_points
from mvhc import autodiff as ad
from mvhc.hyperbolic import BALL_EPS, lca_depth
from mvhc.hyphc import (
    DivergenceError,
    decode_tree,
    hc_batch_loss,
    hc_embed,
    hc_loss,
    init_direct,
    init_hc_head,
    optimize_embeddings,
    optimize_embeddings_direct,
    sample_triplets,
    w_hyp,
)
from mvhc.metrics import dasgupta_cost
from mvhc.tree import TreeError, random_binary_tree


def top_split(tree):
    """The two leaf sets joined at the root."""
    left, right, _ = tree.merge_sets()[-1]
    return {left, right}


class TestSampleTriplets:
    def test_forced_third_index(self):
        t = sample_triplets(3, 3, seed=0)
        assert [tuple(r) for r in t] == [(0, 1, 2), (0, 2, 1), (1, 2, 0)]

    def test_every_pair_once(self):
        t = sample_triplets(5, 10, seed=1)
        assert sorted(map(tuple, t[:, :2])) == [(i, j) for i in range(5) for j in range(i + 1, 5)]

    def test_cycles_over_pairs(self):
        t = sample_triplets(4, 14, seed=0)
        np.testing.assert_array_equal(t[6:12, :2], t[:6, :2])

    def test_distinct_indices_sweep(self):
        t = sample_triplets(17, 100_000, seed=2)
        assert np.all(t[:, 0] < t[:, 1])
        assert np.all((t[:, 2] != t[:, 0]) & (t[:, 2] != t[:, 1]))
        assert t.min() >= 0 and t.max() < 17

    def test_third_index_uniform(self):
        t = sample_triplets(6, 60_000, seed=3)
        counts = np.bincount(t[t[:, 0] == 0][:, 2], minlength=6)
        # pair (0, 1) and friends: k ranges over the 4 other indices roughly evenly
        sel = t[(t[:, 0] == 0) & (t[:, 1] == 1)][:, 2]
        freq = np.bincount(sel, minlength=6)[2:] / len(sel)
        np.testing.assert_allclose(freq, 0.25, atol=0.03)
        assert counts[0] == 0

    def test_deterministic(self):
        np.testing.assert_array_equal(sample_triplets(9, 50, 4), sample_triplets(9, 50, 4))

    @pytest.mark.parametrize("n,budget", [(2, 5), (0, 1), (5, 0)])
    def test_invalid(self, n, budget):
        with pytest.raises(ValueError):
            sample_triplets(n, budget)


class TestWHyp:
    def test_equal_depths_mean(self):
        o = [0.0, 0.0]
        assert w_hyp(0.2, 0.3, 0.4, o, o, o, 0.1) == pytest.approx(0.3, abs=1e-15)

    def test_small_temperature_argmax(self):
        y1, y2, y3 = [0.7, 0.1], [0.7, -0.1], [-0.7, 0.0]
        assert w_hyp(0.9, 0.1, 0.2, y1, y2, y3, 1e-3) == pytest.approx(0.9, abs=1e-12)

    def test_softmax_formula(self, rng):
        y = random_ball_points(rng, 3)
        w = rng.uniform(size=3)
        d = np.array([lca_depth(y[0], y[1]), lca_depth(y[0], y[2]), lca_depth(y[1], y[2])])
        e = np.exp(d / 0.3)
        assert w_hyp(*w, *y, 0.3) == pytest.approx(np.dot(w, e / e.sum()), rel=1e-12)

    def test_convex_combination(self, rng):
        for _ in range(1000):
            y = random_ball_points(rng, 3)
            w = rng.uniform(size=3) * rng.choice([1e-3, 1.0, 1e3])
            v = w_hyp(*w, *y, float(rng.choice([1e-3, 0.05, 1.0])))
            assert w.min() * (1 - 1e-12) <= v <= w.max() * (1 + 1e-12)

    def test_batched_matches_scalar(self, rng):
        Y = random_ball_points(rng, 6)
        W = rng.uniform(size=(6, 6))
        W = W + W.T
        t = sample_triplets(6, 20, 0)
        batched = float(hc_batch_loss(Y, t, W, 0.1).value)
        scalar = np.mean([W[i, j] + W[i, k] + W[j, k] - w_hyp(W[i, j], W[i, k], W[j, k], Y[i], Y[j], Y[k], 0.1)
                          for i, j, k in t])
        assert batched == pytest.approx(scalar, rel=1e-12)

    def test_errors(self):
        o = [0.0, 0.0]
        with pytest.raises(ValueError):
            w_hyp(-0.1, 0.2, 0.3, o, o, o, 0.1)
        with pytest.raises(ValueError):
            w_hyp(0.1, 0.2, 0.3, o, o, o, 0.0)


class TestHcLoss:
    def test_zero_similarities(self, rng):
        assert hc_loss(random_ball_points(rng, 4), sample_triplets(4, 10), np.zeros((4, 4)), 0.1) == 0.0

    def test_single_triplet_equal_depths(self):
        W = np.ones((3, 3)) - np.eye(3)
        assert hc_loss(np.zeros((3, 2)), [[0, 1, 2]], W, 0.1) == pytest.approx(5.0, abs=1e-14)

    def test_permutation_invariant(self, rng):
        Y = random_ball_points(rng, 8)
        W = np.abs(rng.normal(size=(8, 8)))
        W = W + W.T
        t = sample_triplets(8, 64, 0)
        a = hc_loss(Y, t, W, 0.1)
        assert hc_loss(Y, t[rng.permutation(64)], W, 0.1) == pytest.approx(a, rel=1e-13)

    def test_empty(self):
        with pytest.raises(ValueError):
            hc_loss(np.zeros((3, 2)), np.zeros((0, 3), dtype=int), np.ones((3, 3)), 0.1)
        with pytest.raises(ValueError):
            hc_batch_loss(np.zeros((3, 2)), np.zeros((0, 3), dtype=int), np.ones((3, 3)), 0.1)

    def test_gradient_direct(self, rng):
        Y = random_ball_points(rng, 8, max_norm=0.8)
        W, _ = planted_two_block(0, 8)
        t = sample_triplets(8, 40, 0)
        g = ad.CompGraph(lambda p, _: hc_batch_loss(p["Y"], t, W, 0.5), {"Y": Y})
        assert ad.finite_diff_check(g) < 1e-4

    def test_gradient_head(self, rng):
        E = rng.normal(size=(8, 5))
        W, _ = planted_two_block(1, 8)
        t = sample_triplets(8, 40, 0)
        params = init_hc_head(rng, 5)
        g = ad.CompGraph(lambda p, _: hc_batch_loss(hc_embed(p, E), t, W, 0.5), params)
        assert ad.finite_diff_check(g) < 1e-4


class TestHead:
    def test_zero_maps_to_origin(self):
        params = {"hc.W": np.zeros((3, 2)), "hc.b": np.zeros((1, 2))}
        np.testing.assert_array_equal(hc_embed(params, np.ones((4, 3))).value, 0.0)

    def test_radial_squash(self):
        params = {"hc.W": np.eye(2), "hc.b": np.zeros((1, 2))}
        y = hc_embed(params, np.array([[3.0, 4.0]])).value
        np.testing.assert_allclose(y, [[math.tanh(5) * 0.6, math.tanh(5) * 0.8]], rtol=1e-14)

    def test_strictly_inside(self, rng):
        params = {"hc.W": rng.normal(size=(4, 2)) * 1e3, "hc.b": np.zeros((1, 2))}
        y = hc_embed(params, rng.normal(size=(50, 4))).value
        assert np.linalg.norm(y, axis=1).max() <= 1 - BALL_EPS + 1e-15


class TestOptimize:
    def test_zero_epochs_head(self, rng):
        E = rng.normal(size=(6, 4))
        params = init_hc_head(rng, 4)
        res = optimize_embeddings(E, epochs=0, params=params)
        np.testing.assert_array_equal(res.Y, hc_embed(params, E).value)

    def test_zero_epochs_direct(self, rng):
        Y0 = random_ball_points(rng, 6)
        W, _ = planted_two_block(0)
        np.testing.assert_array_equal(optimize_embeddings_direct(W, Y0, epochs=0).Y, Y0)

    def test_head_loss_decreases(self):
        W, blocks = planted_two_block(2, n=5)
        E = np.random.default_rng(0).normal(size=(5, 8)) + 2.0 * blocks[:, None]
        res = optimize_embeddings(E, W, epochs=200, lr=1e-2, tau_c=0.1, seed=0)
        assert res.final_loss < res.initial_loss
        assert len(res.losses) == 200

    def test_head_deterministic(self, rng):
        E = rng.normal(size=(7, 4))
        a = optimize_embeddings(E, epochs=5, seed=3)
        b = optimize_embeddings(E, epochs=5, seed=3)
        assert a.Y.tobytes() == b.Y.tobytes()

    def test_direct_recovers_planted_split(self):
        W, blocks = planted_two_block(5, n=5)
        res = optimize_embeddings_direct(W, epochs=500, seed=0)
        assert res.final_loss < res.initial_loss
        want = {frozenset(np.flatnonzero(blocks == b).tolist()) for b in (0, 1)}
        assert top_split(decode_tree(res.Y)) == want

    def test_direct_deterministic(self):
        W, _ = planted_two_block(1)
        a = optimize_embeddings_direct(W, epochs=20, seed=9)
        b = optimize_embeddings_direct(W, epochs=20, seed=9)
        assert a.Y.tobytes() == b.Y.tobytes()

    def test_direct_stays_inside(self):
        W, _ = planted_two_block(3)
        Y = optimize_embeddings_direct(W, epochs=300, lr=0.5, seed=0).Y
        assert np.linalg.norm(Y, axis=1).max() <= 1 - BALL_EPS + 1e-15

    def test_init_direct_radius(self):
        Y = init_direct(500, seed=0)
        r = np.linalg.norm(Y, axis=1)
        assert r.max() <= 0.05
        # uniform in the disc: P(r < 0.025) = 1/4
        assert abs(np.mean(r < 0.025) - 0.25) < 0.06

    def test_divergence_reported(self):
        W = np.full((4, 4), np.nan)
        with pytest.raises(DivergenceError, match="epoch 0"):
            optimize_embeddings_direct(W, epochs=3)


class TestDecode:
    def test_example(self):
        Y = np.array([[0.7, 0.1], [0.7, -0.1], [-0.7, 0.0]])
        a, b = np.array([0.7, 0.1]), np.array([0.7, -0.1])
        assert lca_depth_oracle(a, b) > max(lca_depth_oracle(a, Y[2]), lca_depth_oracle(b, Y[2]))
        tree = decode_tree(Y)
        assert tree.merge_sets()[0][:2] == (frozenset({0}), frozenset({1}))
        assert top_split(tree) == {frozenset({0, 1}), frozenset({2})}

    def test_two_points(self):
        tree = decode_tree(np.array([[0.1, 0.0], [0.0, 0.2]]))
        assert tree.n_leaves == 2 and tree.children.tolist() == [[0, 1]]

    def test_antipodal_pair_last(self):
        Y = np.array([[0.5, 0.0], [-0.5, 0.0], [0.5, 0.05]])
        tree = decode_tree(Y)
        assert tree.merge_sets()[0][:2] == (frozenset({0}), frozenset({2}))
        assert lca_depth(Y[0], Y[1]) == 0.0
        # root height: deepest pair minus the deepest pair crossing the root split
        cross = max(lca_depth(Y[0], Y[1]), lca_depth(Y[1], Y[2]))
        assert tree.heights[-1] == pytest.approx(lca_depth(Y[0], Y[2]) - cross, rel=1e-12)

    def test_full_binary_and_monotone(self, rng):
        for n in (2, 3, 10, 40):
            tree = decode_tree(random_ball_points(rng, n))
            assert len(tree.children) == n - 1
            assert tree.leaves_under(tree.root) == set(range(n))
            assert tree.is_monotone()

    def test_rotation_invariant(self, rng):
        Y = random_ball_points(rng, 15, max_norm=0.9)
        base = decode_tree(Y).merge_sets()
        for th in rng.uniform(0, 2 * np.pi, size=5):
            R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
            rot = decode_tree(Y @ R.T).merge_sets()
            assert [m[:2] for m in rot] == [m[:2] for m in base]

    def test_too_few_points(self):
        with pytest.raises(TreeError):
            decode_tree(np.zeros((1, 2)))

    @pytest.mark.slow
    def test_beats_random_median_small_n(self):
        wins = 0
        for seed in range(20):
            W, _ = planted_two_block(100 + seed, n=7)
            tree = decode_tree(optimize_embeddings_direct(W, epochs=500, seed=seed).Y)
            rng = np.random.default_rng(seed)
            median = np.median([dasgupta_cost(random_binary_tree(7, rng), W) for _ in range(1000)])
            wins += dasgupta_cost(tree, W) <= median
        assert wins == 20
