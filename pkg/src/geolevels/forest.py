"""CART regression trees and a bagged random forest.

Tree growth runs in numba; trees are stored as flat node arrays so they serialise trivially.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .neural import ShapeError

LEAF = -1


@dataclass
class ForestConfig:
    n_trees: int = 200
    max_depth: int | None = None
    min_leaf: int = 2
    feature_fraction: float = 1.0 / 3.0
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1 or self.min_leaf < 1:
            raise ValueError("n_trees and min_leaf must be positive")
        if not 0 < self.feature_fraction <= 1:
            raise ValueError("feature_fraction must lie in (0, 1]")


@dataclass
class Tree:
    feature: np.ndarray  # int64, LEAF for leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


@dataclass
class RegressionForest:
    trees: list[Tree]
    n_features: int
    config: ForestConfig = field(default_factory=ForestConfig)
    tree_seeds: list[int] = field(default_factory=list)


@njit(cache=True, nogil=True)
def _grow(X, y, sample, n_try, max_depth, min_leaf, keys):
    n = sample.shape[0]
    p = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    idx = sample.copy()
    # explicit stack of (node, start, end, depth)
    stack = np.empty((cap, 4), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    xs = np.empty(n)
    ys = np.empty(n)
    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        m = end - start
        total = 0.0
        ymin = np.inf
        ymax = -np.inf
        for i in range(start, end):
            v = y[idx[i]]
            total += v
            ymin = min(ymin, v)
            ymax = max(ymax, v)
        value[node] = total / m
        if m < 2 * min_leaf or ymin == ymax or (max_depth >= 0 and depth >= max_depth):
            continue
        order = np.argsort(keys[node])
        best_score = -np.inf
        best_f = -1
        best_t = 0.0
        for rank in range(p):
            if rank >= n_try and best_f >= 0:
                break
            f = order[rank]
            for i in range(m):
                xs[i] = X[idx[start + i], f]
            o = np.argsort(xs[:m], kind="mergesort")
            for i in range(m):
                ys[i] = y[idx[start + o[i]]]
            acc = 0.0
            for i in range(1, m):
                acc += ys[i - 1]
                if i < min_leaf or m - i < min_leaf:
                    continue
                lo = xs[o[i - 1]]
                hi = xs[o[i]]
                if lo >= hi:
                    continue
                rest = total - acc
                score = acc * acc / i + rest * rest / (m - i)
                if score > best_score:
                    best_score = score
                    best_f = f
                    t = lo + (hi - lo) / 2.0
                    best_t = t if t < hi else lo
        if best_f < 0:
            continue
        # partition idx[start:end] in place on the chosen split
        i = start
        j = end - 1
        while i <= j:
            if X[idx[i], best_f] <= best_t:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        feature[node] = best_f
        threshold[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack[top, 0] = n_nodes + 1
        stack[top, 1] = i
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        stack[top + 1, 0] = n_nodes
        stack[top + 1, 1] = start
        stack[top + 1, 2] = i
        stack[top + 1, 3] = depth + 1
        top += 2
        n_nodes += 2
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@njit(cache=True, nogil=True)
def _predict_tree(feature, threshold, left, right, value, X, out):
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]


def fit_tree(X, y, config: ForestConfig, seed: int) -> Tree:
    rng = np.random.default_rng(seed)
    n, p = X.shape
    sample = rng.integers(0, n, n) if config.bootstrap else np.arange(n)
    n_try = max(1, int(config.feature_fraction * p))
    keys = rng.random((2 * n + 1, p))
    depth = -1 if config.max_depth is None else int(config.max_depth)
    return Tree(*_grow(X, y, sample.astype(np.int64), n_try, depth, config.min_leaf, keys))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("GEOLEVELS_THREADS", "1")))
    except ValueError:
        return 1


def fit_forest(inputs, targets, config: ForestConfig | None = None, seed: int = 0) -> RegressionForest:
    """Bagged CART trees with per-split feature subsampling and squared-error splits."""
    config = config or ForestConfig()
    X = np.ascontiguousarray(inputs, dtype=np.float64)
    y = np.ascontiguousarray(targets, dtype=np.float64).ravel()
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("empty input")
    if len(X) != len(y):
        raise ShapeError(f"{len(X)} inputs vs {len(y)} targets")
    if len(X) < 2:
        raise ValueError("need at least 2 samples")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite forest inputs or targets")
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(config.n_trees)]
    threads = _threads()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            trees = list(pool.map(lambda s: fit_tree(X, y, config, s), seeds))
    else:
        trees = [fit_tree(X, y, config, s) for s in seeds]
    return RegressionForest(trees, X.shape[1], config, seeds)


def tree_predict(tree: Tree, X) -> np.ndarray:
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    out = np.empty(len(X))
    _predict_tree(tree.feature, tree.threshold, tree.left, tree.right, tree.value, X, out)
    return out


def per_tree_predictions(forest: RegressionForest, X) -> np.ndarray:
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    if X.shape[1] != forest.n_features:
        raise ShapeError(f"input width {X.shape[1]} != {forest.n_features}")
    return np.array([tree_predict(t, X) for t in forest.trees])


def forest_predict(forest: RegressionForest, inputs):
    """Mean of per-tree leaf values; scalar for a single vector."""
    single = np.ndim(inputs) == 1
    out = per_tree_predictions(forest, inputs).mean(axis=0)
    return float(out[0]) if single else out
