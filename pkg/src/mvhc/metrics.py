"""Dendrogram Purity and Dasgupta cost, each with an exhaustive reference."""

from __future__ import annotations

import numpy as np

from .tree import Dendrogram, from_nested


class MetricError(ValueError):
    pass


def _encode_labels(tree: Dendrogram, labels) -> tuple[np.ndarray, int]:
    labels = np.asarray(labels)
    if labels.shape != (tree.n_leaves,):
        raise MetricError(
            f"tree has {tree.n_leaves} leaves but {labels.shape[0] if labels.ndim else 0} labels"
        )
    classes, codes = np.unique(labels, return_inverse=True)
    return codes.reshape(-1), len(classes)


def _n_same_class_pairs(codes, n_classes) -> int:
    counts = np.bincount(codes, minlength=n_classes)
    total = int((counts * (counts - 1) // 2).sum())
    if total == 0:
        raise MetricError("no pair of leaves shares a class; purity is undefined")
    return total


def dendrogram_purity(tree: Dendrogram, labels) -> float:
    """Mean class purity of the LCA subtree over unordered same-class leaf pairs.

    One bottom-up pass: at an internal node with children ``l`` and ``r``,
    ``cnt_l[c] * cnt_r[c]`` same-class pairs meet for the first time, each
    with purity ``cnt_m[c] / |m|``.
    """
    codes, n_classes = _encode_labels(tree, labels)
    total = _n_same_class_pairs(codes, n_classes)
    n = tree.n_leaves
    counts = np.zeros((2 * n - 1, n_classes))
    counts[np.arange(n), codes] = 1.0
    acc = 0.0
    for t, (a, b) in enumerate(tree.children):
        m = counts[a] + counts[b]
        counts[n + t] = m
        acc += float(np.sum(counts[a] * counts[b] * m) / m.sum())
    return acc / total


def dp_brute_force(tree: Dendrogram, labels) -> float:
    """Literal pairwise definition: loop over same-class pairs, look up their LCA."""
    codes, n_classes = _encode_labels(tree, labels)
    total = _n_same_class_pairs(codes, n_classes)
    acc = 0.0
    for i in range(tree.n_leaves):
        for j in range(i + 1, tree.n_leaves):
            if codes[i] != codes[j]:
                continue
            leaves = tree.leaves_under(tree.lca(i, j))
            acc += sum(codes[x] == codes[i] for x in leaves) / len(leaves)
    return acc / total


def _check_similarity(tree: Dendrogram, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    n = tree.n_leaves
    if w.shape != (n, n):
        raise MetricError(f"similarity matrix must be {n}x{n}, got {w.shape}")
    if not np.allclose(w, w.T, rtol=0, atol=1e-12):
        raise MetricError("similarity matrix is not symmetric")
    if np.any(w < 0):
        raise MetricError("similarities must be non-negative")
    return w


def dasgupta_cost(tree: Dendrogram, w) -> float:
    """``sum_{i<j} w_ij |leaves(T[i v j])|`` via one pass over internal nodes."""
    w = _check_similarity(tree, w)
    lists = tree.leaf_lists()
    cost = 0.0
    for a, b in tree.children:
        cross = w[np.ix_(lists[a], lists[b])].sum()
        cost += (len(lists[a]) + len(lists[b])) * cross
    return float(cost)


def dasgupta_cost_brute_force(tree: Dendrogram, w) -> float:
    w = _check_similarity(tree, w)
    n = tree.n_leaves
    return float(
        sum(
            w[i, j] * len(tree.leaves_under(tree.lca(i, j)))
            for i in range(n)
            for j in range(i + 1, n)
        )
    )


def enumerate_trees(n: int):
    """Yield every rooted binary tree over leaves ``0..n-1`` as nested tuples.

    There are ``(2n-3)!!`` of them; built by inserting leaf ``k`` above every
    node of every tree over ``0..k-1``.
    """
    def insert_everywhere(t, leaf):
        yield (t, leaf)
        if isinstance(t, tuple):
            for left in insert_everywhere(t[0], leaf):
                yield (left, t[1])
            for right in insert_everywhere(t[1], leaf):
                yield (t[0], right)

    def grow(k):
        if k == 1:
            yield 0
            return
        for t in grow(k - 1):
            yield from insert_everywhere(t, k - 1)

    yield from grow(n)


def _nested_cost(t, w) -> tuple[list, float]:
    if not isinstance(t, tuple):
        return [t], 0.0
    la, ca = _nested_cost(t[0], w)
    lb, cb = _nested_cost(t[1], w)
    leaves = la + lb
    return leaves, ca + cb + len(leaves) * w[np.ix_(la, lb)].sum()


def brute_force_best_tree(w, max_n: int = 8) -> tuple[Dendrogram, float]:
    """Exhaustive search for a minimum-Dasgupta-cost tree (N <= 8)."""
    w = np.asarray(w, dtype=np.float64)
    n = w.shape[0]
    if n > max_n:
        raise MetricError(f"brute force limited to N <= {max_n}, got {n}")
    if n < 2:
        raise MetricError("need at least 2 leaves")
    best, best_cost = None, np.inf
    for t in enumerate_trees(n):
        _, c = _nested_cost(t, w)
        if c < best_cost - 1e-12:
            best, best_cost = t, c
    return from_nested(best, n), float(best_cost)


def n_binary_trees(n: int) -> int:
    """``(2n-3)!!``, the number of rooted binary trees on n labelled leaves."""
    return int(np.prod(np.arange(1, 2 * n - 2, 2))) if n >= 2 else 1
