"""CART task classifier mapping an input vector to the id of the network to run."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Union

import numpy as np

# Relative gap under which two split scores count as tied.
TIE_EPS = 1e-12
# Bound on the temporary (samples x features x classes) buffer used per chunk.
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 12
    min_samples_leaf: int = 5
    min_samples_split: int = 10
    balance_classes: bool = False

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")


@dataclass
class Leaf:
    network_id: int
    class_counts: np.ndarray


@dataclass
class Split:
    feature_index: int
    threshold: float
    left: "Node"
    right: "Node"


Node = Union[Leaf, Split]


@dataclass
class DecisionTree:
    root: Node
    num_network_ids: int
    params: TreeParams

    def nodes(self) -> Iterator[tuple[Node, int]]:
        """Pre-order walk yielding (node, depth)."""
        stack = [(self.root, 0)]
        while stack:
            node, depth = stack.pop()
            yield node, depth
            if isinstance(node, Split):
                stack.append((node.right, depth + 1))
                stack.append((node.left, depth + 1))

    def depth(self) -> int:
        return max(d for _, d in self.nodes())

    def max_feature_index(self) -> int:
        return max((n.feature_index for n, _ in self.nodes() if isinstance(n, Split)), default=-1)


def gini(counts: np.ndarray) -> float:
    total = counts.sum()
    if total <= 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.dot(p, p))


def _children_impurity(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Unnormalised weighted child Gini: sum over children of W_c - sum_k n_ck^2 / W_c.

    ``left`` and ``right`` hold class weights on the last axis. Dividing the
    result by the node weight gives the usual weighted average of child Gini.
    """
    wl = left.sum(axis=-1)
    wr = right.sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        il = wl - (left * left).sum(axis=-1) / wl
        ir = wr - (right * right).sum(axis=-1) / wr
    return il + ir


@dataclass
class _Candidate:
    score: float
    feature: int
    threshold: float


def _feature_scores(x: np.ndarray, onehot: np.ndarray, min_leaf: int):
    """For a block of features, the impurity of every valid cut position.

    Returns (sorted values, scores) where scores[i, f] is the impurity of
    sending the i+1 smallest values of feature f left; invalid cuts are inf.
    """
    n = x.shape[0]
    order = np.argsort(x, axis=0, kind="stable")
    xs = np.take_along_axis(x, order, axis=0)
    cum = np.cumsum(onehot[order], axis=0)  # (n, f, C)
    total = cum[-1]
    left = cum[:-1]
    right = total[None] - left
    scores = _children_impurity(left, right)
    valid = xs[:-1] < xs[1:]
    sizes = np.arange(1, n)[:, None]
    valid &= (sizes >= min_leaf) & (n - sizes >= min_leaf)
    scores = np.where(valid, scores, np.inf)
    return xs, scores


def _midpoint(a: float, b: float) -> float:
    t = a + (b - a) / 2.0
    return a if t >= b else t


def best_split(x: np.ndarray, onehot: np.ndarray, min_leaf: int = 1) -> _Candidate | None:
    """Impurity-minimising (feature, threshold); lowest feature then lowest threshold on ties."""
    n, d = x.shape
    if n < 2:
        return None
    ncls = onehot.shape[1]
    step = max(1, _CHUNK_ELEMENTS // max(1, n * ncls))
    per_feature = np.full(d, np.inf)
    for f0 in range(0, d, step):
        f1 = min(d, f0 + step)
        _, scores = _feature_scores(x[:, f0:f1], onehot, min_leaf)
        per_feature[f0:f1] = scores.min(axis=0)
    best = per_feature.min()
    if not np.isfinite(best):
        return None
    cutoff = best + TIE_EPS * max(1.0, abs(best))
    feature = int(np.flatnonzero(per_feature <= cutoff)[0])
    xs, scores = _feature_scores(x[:, feature:feature + 1], onehot, min_leaf)
    i = int(np.flatnonzero(scores[:, 0] <= cutoff)[0])
    return _Candidate(float(best), feature, _midpoint(float(xs[i, 0]), float(xs[i + 1, 0])))


def _leaf(counts: np.ndarray) -> Leaf:
    return Leaf(int(np.argmax(counts)), counts.copy())


def tree_fit(inputs, network_ids, params: TreeParams | None = None,
             num_network_ids: int | None = None) -> DecisionTree:
    """Greedy CART on weighted Gini impurity.

    ``num_network_ids`` defaults to ``1 + max(network_ids)``. With
    ``params.balance_classes`` each sample is weighted by the inverse of its
    class frequency, and leaves store those weighted counts.
    """
    params = params or TreeParams()
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(network_ids, dtype=np.int64).reshape(-1)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise ValueError("cannot fit a tree on an empty training set")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"{x.shape[0]} inputs but {y.shape[0]} network ids")
    if num_network_ids is None:
        num_network_ids = int(y.max()) + 1
    if y.min() < 0 or y.max() >= num_network_ids:
        raise ValueError(f"network ids must lie in [0, {num_network_ids})")

    freq = np.bincount(y, minlength=num_network_ids).astype(np.float64)
    if params.balance_classes:
        weight_of_class = np.zeros(num_network_ids)
        present = freq > 0
        weight_of_class[present] = len(y) / (present.sum() * freq[present])
    else:
        weight_of_class = np.ones(num_network_ids)
    onehot = np.zeros((len(y), num_network_ids))
    onehot[np.arange(len(y)), y] = weight_of_class[y]

    def grow(idx: np.ndarray, depth: int) -> Node:
        counts = onehot[idx].sum(axis=0)
        if (np.count_nonzero(counts) <= 1 or depth >= params.max_depth
                or len(idx) < params.min_samples_split):
            return _leaf(counts)
        cand = best_split(x[idx], onehot[idx], params.min_samples_leaf)
        parent = counts.sum() - np.dot(counts, counts) / counts.sum()
        if cand is None or not cand.score < parent - TIE_EPS * max(1.0, parent):
            return _leaf(counts)
        go_left = x[idx, cand.feature] <= cand.threshold
        return Split(cand.feature, cand.threshold,
                     grow(idx[go_left], depth + 1), grow(idx[~go_left], depth + 1))

    root = grow(np.arange(len(y)), 0)
    return DecisionTree(root, num_network_ids, params)


def tree_predict(tree: DecisionTree, x) -> int | np.ndarray:
    """Network id for one vector, or an array of ids for a 2-D batch."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    batch = arr[None, :] if single else arr
    if tree.max_feature_index() >= batch.shape[1]:
        raise IndexError(
            f"tree uses feature {tree.max_feature_index()} but inputs have {batch.shape[1]}"
        )
    out = np.empty(batch.shape[0], dtype=np.int64)
    stack = [(tree.root, np.arange(batch.shape[0]))]
    while stack:
        node, idx = stack.pop()
        if isinstance(node, Leaf):
            out[idx] = node.network_id
            continue
        left = batch[idx, node.feature_index] <= node.threshold
        stack.append((node.left, idx[left]))
        stack.append((node.right, idx[~left]))
    return int(out[0]) if single else out


def constant_tree(network_id: int, num_network_ids: int, params: TreeParams | None = None) -> DecisionTree:
    counts = np.zeros(num_network_ids)
    counts[network_id] = 1.0
    return DecisionTree(Leaf(network_id, counts), num_network_ids, params or TreeParams())
