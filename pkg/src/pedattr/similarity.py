"""Pairwise affinities: Gaussian kernel and unsupervised random forest.

The forest is trained to tell real descriptors apart from synthetic ones
whose dimensions are resampled independently from the real marginals.
Two descriptors are similar in proportion to the trees that route them to
the same leaf.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

FOREST_VERSION = 2
REFERENCES = ("marginal", "uniform")


@dataclass(frozen=True)
class GaussianConfig:
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


def gaussian_similarity(u, v, cfg: GaussianConfig) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(np.exp(-np.sum((u - v) ** 2) / cfg.sigma ** 2))


def squared_distances(A, B=None) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    same = B is None
    B = A if same else np.asarray(B, dtype=float)
    D = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    np.maximum(D, 0.0, out=D)
    if same:
        np.fill_diagonal(D, 0.0)
        D = (D + D.T) / 2
    return D


def gaussian_affinity_matrix(X, sigma: float) -> np.ndarray:
    return np.exp(-squared_distances(X) / sigma ** 2)


@dataclass(frozen=True)
class TreeConfig:
    max_features: int | None = None  # None -> floor(sqrt(d))
    min_leaf: int = 5
    max_depth: int = 5
    min_gain: float = 0.0  # minimum relative Gini decrease to accept a split
    reference: str = "marginal"  # synthetic class: "marginal" resampling or "uniform" box

    def __post_init__(self):
        if self.reference not in REFERENCES:
            raise ValueError(f"reference must be one of {REFERENCES}")
        if self.min_leaf < 1 or self.max_depth < 0:
            raise ValueError("min_leaf must be >= 1 and max_depth >= 0")
        if self.max_features is not None and self.max_features < 1:
            raise ValueError("max_features must be >= 1")


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat binary tree; ``feature[n] < 0`` marks a leaf.  Leaf id = node index."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.arange(X.shape[0])
        while active.size:
            f = self.feature[node[active]]
            inner = f >= 0
            active = active[inner]
            if not active.size:
                break
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
        return node

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple[Tree, ...]
    dim: int
    seed: int
    config: TreeConfig = TreeConfig()

    def __post_init__(self):
        if len(self.trees) < 1:
            raise ValueError("a forest needs at least one tree")

    @property
    def T(self) -> int:
        return len(self.trees)

    def leaves(self, X) -> np.ndarray:
        """Leaf index of every row in every tree, shape (n, T)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: forest {self.dim}, input {X.shape[1]}")
        return np.stack([t.apply(X) for t in self.trees], axis=1)


def _best_split(Xn: np.ndarray, yn: np.ndarray, min_leaf: int):
    """Lowest weighted Gini over all midpoints of the given columns."""
    n, m = Xn.shape
    order = np.argsort(Xn, axis=0, kind="stable")
    vals = np.take_along_axis(Xn, order, axis=0)
    ys = yn[order]
    left_pos = np.cumsum(ys, axis=0)[:-1]  # class-1 count in left part, split after row k
    n_left = np.arange(1, n)[:, None].astype(float)
    n_right = n - n_left
    right_pos = ys.sum(axis=0)[None, :] - left_pos
    imp = (2 * left_pos * (n_left - left_pos) / n_left
           + 2 * right_pos * (n_right - right_pos) / n_right)
    valid = vals[1:] > vals[:-1]
    valid[: min_leaf - 1] = False
    if min_leaf > 1:
        valid[n - min_leaf:] = False
    if not valid.any():
        return None
    imp = np.where(valid, imp, np.inf)
    # column-major scan: first feature drawn wins ties, then smallest threshold
    flat = int(np.argmin(imp.T))
    col, k = divmod(flat, n - 1)
    thr = (vals[k, col] + vals[k + 1, col]) / 2.0
    return col, float(thr), float(imp[k, col])


def grow_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator, cfg: TreeConfig) -> Tree:
    n, d = X.shape
    m = cfg.max_features or max(1, int(np.sqrt(d)))
    m = min(m, d)
    feature, threshold, left, right = [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        pos = int(yn.sum())
        if depth >= cfg.max_depth or idx.size < 2 * cfg.min_leaf or pos in (0, idx.size):
            continue
        feats = rng.choice(d, size=m, replace=False)
        found = _best_split(X[np.ix_(idx, feats)], yn, cfg.min_leaf)
        if found is None:
            continue
        col, thr, imp = found
        parent_imp = 2 * pos * (idx.size - pos) / idx.size
        if imp >= parent_imp * (1.0 - cfg.min_gain):
            continue
        f = int(feats[col])
        go_left = X[idx, f] <= thr
        lnode, rnode = new_node(), new_node()
        feature[node], threshold[node] = f, thr
        left[node], right[node] = lnode, rnode
        stack.append((rnode, idx[~go_left], depth + 1))
        stack.append((lnode, idx[go_left], depth + 1))
    return Tree(np.asarray(feature, dtype=np.int64), np.asarray(threshold),
                np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64))


def synthesize_marginals(X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Resample every column independently (with replacement) from its own values."""
    n, d = X.shape
    rows = rng.integers(0, n, size=(n, d))
    return X[rows, np.arange(d)[None, :]]


def synthesize_uniform(X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw every column uniformly over its observed range."""
    lo, hi = X.min(axis=0), X.max(axis=0)
    return lo + (hi - lo) * rng.random(X.shape)


def train_unsupervised_forest(features, T: int = 100, tree_cfg: TreeConfig = TreeConfig(),
                              seed: int = 0) -> ForestModel:
    X = np.asarray(features, dtype=float)
    if T < 1:
        raise ValueError("T must be >= 1")
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least 2 samples to train a forest")
    n, d = X.shape
    y = np.concatenate([np.ones(n), np.zeros(n)])
    trees = []
    for t in range(T):
        rng = np.random.default_rng([seed, t])
        synth = synthesize_marginals if tree_cfg.reference == "marginal" else synthesize_uniform
        data = np.vstack([X, synth(X, rng)])
        trees.append(grow_tree(data, y, rng, tree_cfg))
    return ForestModel(tuple(trees), d, seed, tree_cfg)


def forest_similarity(model: ForestModel, u, v) -> float:
    L = model.leaves(np.vstack([np.asarray(u, float), np.asarray(v, float)]))
    return float(np.mean(L[0] == L[1]))


def forest_affinity_matrix(leaves: np.ndarray, other: np.ndarray | None = None) -> np.ndarray:
    """Fraction of trees co-locating each pair, from ``ForestModel.leaves`` output."""
    other = leaves if other is None else other
    S = np.zeros((leaves.shape[0], other.shape[0]))
    for t in range(leaves.shape[1]):
        S += leaves[:, t][:, None] == other[:, t][None, :]
    return S / leaves.shape[1]


def save_forest(path, model: ForestModel) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sizes = np.asarray([t.feature.size for t in model.trees])
    cat = lambda attr: np.concatenate([getattr(t, attr) for t in model.trees])
    cfg = model.config
    with open(path, "wb") as fh:
        np.savez(fh, version=FOREST_VERSION, dim=model.dim, seed=model.seed, sizes=sizes,
                 feature=cat("feature"), threshold=cat("threshold"),
                 left=cat("left"), right=cat("right"),
                 config=np.asarray([-1 if cfg.max_features is None else cfg.max_features,
                                    cfg.min_leaf, cfg.max_depth]),
                 min_gain=cfg.min_gain, reference=cfg.reference)


def load_forest(path) -> ForestModel:
    with np.load(path, allow_pickle=False) as z:
        if int(z["version"]) != FOREST_VERSION:
            raise ValueError(f"{path}: unsupported forest version {int(z['version'])}")
        bounds = np.concatenate([[0], np.cumsum(z["sizes"])])
        trees = tuple(
            Tree(z["feature"][a:b], z["threshold"][a:b], z["left"][a:b], z["right"][a:b])
            for a, b in zip(bounds[:-1], bounds[1:])
        )
        mf, ml, md = (int(v) for v in z["config"])
        cfg = TreeConfig(None if mf < 0 else mf, ml, md, float(z["min_gain"]), str(z["reference"]))
        return ForestModel(trees, int(z["dim"]), int(z["seed"]), cfg)
