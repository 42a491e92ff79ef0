"""Binary dendrograms, agglomerative linkage baselines and tree serialization."""

from __future__ import annotations

import json
import re
import sys
from contextlib import contextmanager
from typing import Optional, Sequence

import numpy as np


class TreeError(ValueError):
    pass


class Dendrogram:
    """Rooted full binary tree over ``n_leaves`` leaves.

    Leaves are nodes ``0..n-1``; the merge at position ``t`` creates node
    ``n + t``.  The last merge (node ``2n-2``) is the root.
    """

    def __init__(self, n_leaves: int, children, heights=None):
        self.n_leaves = int(n_leaves)
        n = self.n_leaves
        if n < 1:
            raise TreeError("a dendrogram needs at least one leaf")
        self.children = np.asarray(children, dtype=np.int64).reshape(-1, 2)
        if heights is None:
            heights = np.arange(1, len(self.children) + 1, dtype=np.float64)
        self.heights = np.asarray(heights, dtype=np.float64).reshape(-1)
        if len(self.children) != n - 1 or len(self.heights) != n - 1:
            raise TreeError(f"expected {n - 1} merges for {n} leaves, got {len(self.children)}")
        parent = np.full(2 * n - 1, -1, dtype=np.int64)
        for t, (a, b) in enumerate(self.children):
            node = n + t
            for c in (a, b):
                if not 0 <= c < node:
                    raise TreeError(f"merge {t}: child {c} is not an existing node")
                if parent[c] != -1:
                    raise TreeError(f"node {c} used as a child more than once")
                parent[c] = node
        self.parent = parent
        self._sizes = None

    # structure ----------------------------------------------------------
    @property
    def root(self) -> int:
        return 2 * self.n_leaves - 2

    @property
    def n_nodes(self) -> int:
        return 2 * self.n_leaves - 1

    def node_height(self, node: int) -> float:
        return 0.0 if node < self.n_leaves else float(self.heights[node - self.n_leaves])

    def node_children(self, node: int) -> tuple:
        self._check_node(node)
        if node < self.n_leaves:
            return ()
        a, b = self.children[node - self.n_leaves]
        return int(a), int(b)

    @property
    def sizes(self) -> np.ndarray:
        if self._sizes is None:
            n = self.n_leaves
            sizes = np.ones(2 * n - 1, dtype=np.int64)
            for t, (a, b) in enumerate(self.children):
                sizes[n + t] = sizes[a] + sizes[b]
            self._sizes = sizes
        return self._sizes

    def _check_node(self, node):
        if not 0 <= node < self.n_nodes:
            raise TreeError(f"node id {node} out of range [0, {self.n_nodes})")

    def _check_leaf(self, leaf):
        if not 0 <= leaf < self.n_leaves:
            raise TreeError(f"leaf id {leaf} out of range [0, {self.n_leaves})")

    def ancestors(self, node: int) -> list:
        path = [node]
        while self.parent[path[-1]] != -1:
            path.append(int(self.parent[path[-1]]))
        return path

    def lca(self, i: int, j: int) -> int:
        self._check_leaf(i)
        self._check_leaf(j)
        up = set(self.ancestors(i))
        node = j
        while node not in up:
            node = int(self.parent[node])
        return node

    def leaves_under(self, node: int) -> set:
        self._check_node(node)
        out, stack = set(), [node]
        while stack:
            x = stack.pop()
            if x < self.n_leaves:
                out.add(x)
            else:
                stack.extend(self.children[x - self.n_leaves])
        return out

    def leaf_lists(self) -> list:
        """Leaf ids under every node, as sorted int arrays indexed by node id."""
        n = self.n_leaves
        lists = [np.array([i]) for i in range(n)]
        for a, b in self.children:
            lists.append(np.concatenate([lists[a], lists[b]]))
        return lists

    def is_monotone(self) -> bool:
        for t, (a, b) in enumerate(self.children):
            h = self.heights[t]
            if self.node_height(a) > h or self.node_height(b) > h:
                return False
        return True

    def cut(self, n_clusters: int) -> np.ndarray:
        """Flat labels obtained by undoing the last ``n_clusters - 1`` merges."""
        n = self.n_leaves
        if not 1 <= n_clusters <= n:
            raise TreeError(f"n_clusters must be in [1, {n}]")
        label = np.empty(n, dtype=np.int64)
        # union the first n - n_clusters merges
        root = list(range(2 * n - 1))
        for t in range(n - n_clusters):
            a, b = self.children[t]
            root[a] = root[b] = n + t

        def find(x):
            while root[x] != x:
                x = root[x]
            return x
        reps = {}
        for i in range(n):
            r = find(i)
            label[i] = reps.setdefault(r, len(reps))
        return label

    def to_linkage_matrix(self) -> np.ndarray:
        """SciPy-style ``(n-1, 4)`` linkage matrix."""
        z = np.empty((self.n_leaves - 1, 4))
        z[:, :2] = np.sort(self.children, axis=1)
        z[:, 2] = self.heights
        z[:, 3] = self.sizes[self.n_leaves :]
        return z

    def merge_sets(self) -> list:
        """Merge sequence as ``(frozenset(left leaves), frozenset(right leaves), height)``."""
        lists = self.leaf_lists()
        return [
            (frozenset(lists[a].tolist()), frozenset(lists[b].tolist()), float(h))
            for (a, b), h in zip(self.children, self.heights)
        ]

    # serialization ------------------------------------------------------
    def to_json(self) -> str:
        merges = [[int(a), int(b), float(h)] for (a, b), h in zip(self.children, self.heights)]
        return json.dumps({"n_leaves": self.n_leaves, "merges": merges})

    @classmethod
    def from_json(cls, text: str) -> "Dendrogram":
        doc = json.loads(text)
        merges = doc["merges"]
        children = [m[:2] for m in merges]
        heights = [m[2] for m in merges]
        return cls(doc["n_leaves"], np.array(children).reshape(-1, 2), heights)

    def to_newick(self, labels: Optional[Sequence] = None) -> str:
        return to_newick(self, labels)

    def __repr__(self):
        return f"Dendrogram(n_leaves={self.n_leaves})"


@contextmanager
def _recursion_room(n: int):
    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 8 * n + 200))
    try:
        yield
    finally:
        sys.setrecursionlimit(limit)


def _fmt(x: float) -> str:
    x = float(x)
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def to_newick(tree: Dendrogram, labels: Optional[Sequence] = None) -> str:
    """Newick text with branch lengths ``parent height - child height``.

    Children are written smaller-minimum-leaf first.
    """
    n = tree.n_leaves
    names = [f"L{i}" for i in range(n)] if labels is None else [str(s) for s in labels]
    if len(names) != n:
        raise TreeError(f"got {len(names)} labels for {n} leaves")
    if n == 1:
        return f"{names[0]};"
    min_leaf = np.arange(2 * n - 1)
    for t, (a, b) in enumerate(tree.children):
        min_leaf[n + t] = min(min_leaf[a], min_leaf[b])

    def render(node: int) -> str:
        if node < n:
            return names[node]
        kids = sorted(tree.node_children(node), key=lambda c: min_leaf[c])
        h = tree.node_height(node)
        parts = [f"{render(c)}:{_fmt(h - tree.node_height(c))}" for c in kids]
        return "(" + ",".join(parts) + ")"

    with _recursion_room(n):
        return render(tree.root) + ";"


_TOKEN = re.compile(r"\s*([(),:;]|[^(),:;\s]+)")


def from_newick(text: str, labels: Optional[Sequence] = None) -> Dendrogram:
    """Parse a binary Newick tree written by :func:`to_newick`.

    Leaf names are mapped to ids through ``labels`` when given, otherwise
    names of the form ``L<i>`` are required.  Node heights are rebuilt from
    branch lengths (leaves at height 0); merges are ordered by height.
    """
    tokens = _TOKEN.findall(text.strip())
    pos = 0
    lookup = None if labels is None else {str(s): i for i, s in enumerate(labels)}

    def leaf_id(name):
        if lookup is not None:
            if name not in lookup:
                raise TreeError(f"unknown leaf name {name!r}")
            return lookup[name]
        m = re.fullmatch(r"L(\d+)", name)
        if not m:
            raise TreeError(f"leaf name {name!r} is not of the form L<i>")
        return int(m.group(1))

    def parse():
        nonlocal pos
        if tokens[pos] == "(":
            pos += 1
            kids = [parse_branch()]
            while tokens[pos] == ",":
                pos += 1
                kids.append(parse_branch())
            if tokens[pos] != ")":
                raise TreeError("unbalanced parentheses in Newick text")
            pos += 1
            if len(kids) != 2:
                raise TreeError(f"non-binary node with {len(kids)} children")
            if pos < len(tokens) and tokens[pos] not in (",", ")", ":", ";"):
                pos += 1  # internal node label, ignored
            return ("node", kids)
        name = tokens[pos]
        pos += 1
        return ("leaf", leaf_id(name))

    def parse_branch():
        nonlocal pos
        sub = parse()
        length = 0.0
        if pos < len(tokens) and tokens[pos] == ":":
            length = float(tokens[pos + 1])
            pos += 2
        return sub, length

    with _recursion_room(len(tokens)):
        root = parse()
    if pos >= len(tokens) or tokens[pos] != ";":
        raise TreeError("Newick text must end with ';'")

    # heights: a node's height is the branch length to any leaf below it
    internal = []

    def visit(node):
        kind, payload = node
        if kind == "leaf":
            return payload, 0.0
        (c1, l1), (c2, l2) = payload
        id1, h1 = visit(c1)
        id2, h2 = visit(c2)
        h = max(h1 + l1, h2 + l2)
        internal.append([id1, id2, h])
        return ("tmp", len(internal) - 1), h

    with _recursion_room(len(tokens)):
        visit(root)
    n = len(internal) + 1
    order = sorted(range(len(internal)), key=lambda t: (internal[t][2], t))
    new_id = {t: n + rank for rank, t in enumerate(order)}

    def resolve(ref):
        return new_id[ref[1]] if isinstance(ref, tuple) else ref

    children = [[resolve(internal[t][0]), resolve(internal[t][1])] for t in order]
    heights = [internal[t][2] for t in order]
    leaves = sorted(c for pair in children for c in pair if c < n)
    if leaves != list(range(n)):
        raise TreeError("leaf ids must be exactly 0..n-1")
    return Dendrogram(n, np.array(children).reshape(-1, 2), heights)


def load_tree(path) -> Dendrogram:
    text = open(path).read()
    if text.lstrip().startswith("{"):
        return Dendrogram.from_json(text)
    return from_newick(text)


# linkage ----------------------------------------------------------------

LINKAGE_METHODS = ("single", "complete", "average", "ward")


def _pairwise_euclidean(X: np.ndarray) -> np.ndarray:
    out = np.empty((X.shape[0], X.shape[0]))
    for i in range(X.shape[0]):
        out[i] = np.sqrt(((X - X[i]) ** 2).sum(axis=1))
    return out


def linkage(points, method: str = "ward") -> Dendrogram:
    """Agglomerative clustering with Euclidean distances and Lance-Williams updates.

    Runs in O(N^3) on a dense distance matrix.  Ties go to the
    lexicographically smallest active (slot i, slot j) pair; the merged
    cluster takes over slot ``i``.  Ward heights use the
    ``sqrt(2 |A||B| / (|A|+|B|)) * |c_A - c_B|`` convention.
    """
    if method not in LINKAGE_METHODS:
        raise TreeError(f"unknown linkage method {method!r}; choose from {LINKAGE_METHODS}")
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n < 2:
        raise TreeError("linkage needs at least 2 points")
    D = _pairwise_euclidean(X)
    np.fill_diagonal(D, np.inf)
    size = np.ones(n, dtype=np.int64)
    node = np.arange(n)
    # per-row nearest neighbour among higher slots; scanning rows in order and
    # taking the first minimum reproduces the lexicographic tie rule
    row_min = np.full(n, np.inf)
    row_arg = np.full(n, -1)

    def refresh(k):
        if k + 1 < n:
            a = k + 1 + int(np.argmin(D[k, k + 1 :]))
            row_min[k], row_arg[k] = D[k, a], a
        else:
            row_min[k], row_arg[k] = np.inf, -1

    for k in range(n):
        refresh(k)
    children, heights = [], []
    for t in range(n - 1):
        i = int(np.argmin(row_min))
        j = int(row_arg[i])
        dij = D[i, j]
        ni, nj = size[i], size[j]
        dki, dkj = D[i], D[j]
        if method == "single":
            new = np.minimum(dki, dkj)
        elif method == "complete":
            new = np.maximum(dki, dkj)
        elif method == "average":
            new = (ni * dki + nj * dkj) / (ni + nj)
        else:
            nk = size.astype(np.float64)
            new = np.sqrt(
                np.maximum(
                    ((ni + nk) * dki**2 + (nj + nk) * dkj**2 - nk * dij**2) / (ni + nj + nk),
                    0.0,
                )
            )
        children.append((node[i], node[j]))
        heights.append(dij)
        # retired slots hold inf, so only active pairs can win
        D[i, :] = new
        D[:, i] = new
        D[i, i] = np.inf
        D[j, :] = np.inf
        D[:, j] = np.inf
        size[i] = ni + nj
        node[i] = n + t
        row_min[j], row_arg[j] = np.inf, -1
        refresh(i)
        for k in range(j):
            if k == i:
                continue
            if row_arg[k] == i or row_arg[k] == j:
                refresh(k)
            elif k < i and (D[k, i] < row_min[k] or (D[k, i] == row_min[k] and i < row_arg[k])):
                row_min[k], row_arg[k] = D[k, i], i
    return Dendrogram(n, np.array(children), np.array(heights))


def from_nested(nested, n: Optional[int] = None) -> Dendrogram:
    """Dendrogram from nested 2-tuples of leaf ids, e.g. ``((0, 1), 2)``.

    Heights are subtree size minus one.
    """
    children, heights = [], []
    count = [0]

    def leaves_of(t):
        return [t] if isinstance(t, (int, np.integer)) else leaves_of(t[0]) + leaves_of(t[1])

    all_leaves = leaves_of(nested)
    n = len(all_leaves) if n is None else n

    def build(t):
        if isinstance(t, (int, np.integer)):
            return int(t), 1
        a, sa = build(t[0])
        b, sb = build(t[1])
        children.append((a, b))
        heights.append(sa + sb - 1)
        count[0] += 1
        return n + count[0] - 1, sa + sb

    build(nested)
    return Dendrogram(n, np.array(children).reshape(-1, 2), heights)


def random_binary_tree(n: int, rng: np.random.Generator) -> Dendrogram:
    """Uniformly random labelled rooted binary tree (random edge insertion)."""
    if n < 1:
        raise TreeError("n must be positive")
    nested = 0
    for leaf in range(1, n):
        # count edges (incl. the edge above the root) and insert at one of them
        target = int(rng.integers(2 * leaf - 1))
        nested, _ = _insert(nested, leaf, target)
    return from_nested(nested, n)


def _insert(t, leaf, target):
    """Insert ``leaf`` above the ``target``-th node of ``t`` in pre-order."""
    if target == 0:
        return (t, leaf), -1
    target -= 1
    if isinstance(t, tuple):
        left, target = _insert(t[0], leaf, target)
        if target < 0:
            return (left, t[1]), -1
        right, target = _insert(t[1], leaf, target)
        if target < 0:
            return (t[0], right), -1
        return t, target
    return t, target
