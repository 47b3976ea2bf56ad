"""Second-order gradient-boosted decision trees on binned features.

Each round fits one tree per output (a single logit for binary problems, one
score per class otherwise) to the current gradients and hessians.  Missing
values are routed by a learned default direction per split.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .binning import BinMapper
from .config import LearnerConfig, LearnerError
from .losses import base_scores, grad_hess, n_outputs, probabilities
from .splitting import find_best_split, leaf_weight


@dataclass(frozen=True)
class TreeNode:
    """Either an internal split (``feature`` >= 0) or a leaf carrying ``weight``."""

    feature: int = -1
    threshold: float | None = None
    levels: tuple[int, ...] | None = None
    default_left: bool = True
    left: int = -1
    right: int = -1
    weight: float = 0.0
    gain: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"leaf": self.weight}
        d = {
            "feature": self.feature,
            "default_left": self.default_left,
            "left": self.left,
            "right": self.right,
            "gain": self.gain,
        }
        if self.levels is not None:
            d["levels"] = list(self.levels)
        else:
            d["threshold"] = self.threshold
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TreeNode":
        if "leaf" in d:
            return cls(weight=float(d["leaf"]))
        return cls(
            feature=int(d["feature"]),
            threshold=None if "threshold" not in d else float(d["threshold"]),
            levels=None if "levels" not in d else tuple(int(v) for v in d["levels"]),
            default_left=bool(d["default_left"]),
            left=int(d["left"]),
            right=int(d["right"]),
            gain=float(d["gain"]),
        )


class Tree:
    """Flat-array view of a list of TreeNodes for vectorised traversal."""

    def __init__(self, nodes: list[TreeNode]):
        self.nodes = nodes
        m = len(nodes)
        self.feature = np.array([n.feature for n in nodes], dtype=np.int64)
        self.threshold = np.array(
            [np.nan if n.threshold is None else n.threshold for n in nodes], dtype=float
        )
        self.default_left = np.array([n.default_left for n in nodes], dtype=bool)
        self.left = np.array([n.left for n in nodes], dtype=np.int64)
        self.right = np.array([n.right for n in nodes], dtype=np.int64)
        self.weight = np.array([n.weight for n in nodes], dtype=float)
        width = max([max(n.levels) + 1 for n in nodes if n.levels] + [1])
        self.level_table = np.zeros((m, width), dtype=bool)
        self.is_cat = np.zeros(m, dtype=bool)
        for i, n in enumerate(nodes):
            if n.levels is not None:
                self.is_cat[i] = True
                self.level_table[i, list(n.levels)] = True

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row."""
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while len(active):
            nd = node[active]
            x = X[active, self.feature[nd]]
            nan = np.isnan(x)
            go_left = np.empty(len(active), dtype=bool)
            cat = self.is_cat[nd]
            num = ~cat & ~nan
            go_left[num] = x[num] <= self.threshold[nd[num]]
            cm = cat & ~nan
            if cm.any():
                codes = x[cm].astype(np.int64)
                inside = (codes >= 0) & (codes < self.level_table.shape[1])
                hit = np.zeros(len(codes), dtype=bool)
                hit[inside] = self.level_table[nd[cm][inside], codes[inside]]
                go_left[cm] = hit
            go_left[nan] = self.default_left[nd[nan]]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.weight[self.apply(X)]

    @property
    def depth(self) -> int:
        def walk(i):
            n = self.nodes[i]
            return 0 if n.is_leaf else 1 + max(walk(n.left), walk(n.right))
        return walk(0)


@dataclass
class GbdtModel:
    config: LearnerConfig
    feature_names: list[str]
    categorical: dict[int, int]
    base_scores: np.ndarray
    trees: list[list[Tree]] = field(default_factory=list)

    kind = "gbdt"

    @property
    def n_classes(self) -> int:
        return self.config.n_classes

    def raw_scores(self, X: np.ndarray, n_rounds: int | None = None) -> np.ndarray:
        raw = np.tile(self.base_scores, (len(X), 1))
        for round_trees in self.trees[:n_rounds]:
            for k, tree in enumerate(round_trees):
                raw[:, k] += tree.predict(X)
        return raw

    def staged_raw_scores(self, X: np.ndarray) -> Iterator[np.ndarray]:
        raw = np.tile(self.base_scores, (len(X), 1))
        yield raw.copy()
        for round_trees in self.trees:
            for k, tree in enumerate(round_trees):
                raw[:, k] += tree.predict(X)
            yield raw.copy()


def check_training_inputs(config: LearnerConfig, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise LearnerError(f"feature matrix shape {X.shape} does not match {len(y)} labels")
    y_f = np.asarray(y, dtype=float)
    if np.isnan(y_f).any():
        raise LearnerError("labels contain missing values")
    if np.any(y_f != np.round(y_f)) or y_f.min(initial=0) < 0 or y_f.max(initial=0) >= config.n_classes:
        raise LearnerError(f"labels must be integers in [0, {config.n_classes})")
    if len(np.unique(y_f)) < 2:
        raise LearnerError("training labels contain a single class")
    if config.missing_mode == "reject" and np.isnan(X).any():
        j = int(np.flatnonzero(np.isnan(X).any(axis=0))[0])
        raise LearnerError(f"missing feature cell in column {j} with missing_mode='reject'")
    return y_f.astype(np.int64)


class _HistogramBuilder:
    def __init__(self, binned: np.ndarray, stride: int, n_jobs: int):
        n, F = binned.shape
        self.F = F
        self.stride = stride
        self.flat = binned.astype(np.int64) + (np.arange(F) * stride)[None, :]
        self.n_jobs = max(1, int(n_jobs))
        self.blocks = [b for b in np.array_split(np.arange(F), min(self.n_jobs, F)) if len(b)]

    def _block(self, idx, cols, vals):
        sub = self.flat[np.ix_(idx, cols)] - cols[0] * self.stride
        flat = sub.ravel()
        size = len(cols) * self.stride
        return [np.bincount(flat, weights=np.repeat(v, len(cols)), minlength=size) for v in vals]

    def __call__(self, idx: np.ndarray, g: np.ndarray, h: np.ndarray):
        vals = (g[idx], h[idx], np.ones(len(idx)))
        if self.n_jobs == 1 or len(self.blocks) == 1:
            parts = [self._block(idx, np.arange(self.F), vals)]
        else:
            with ThreadPoolExecutor(self.n_jobs) as pool:
                parts = list(pool.map(lambda c: self._block(idx, c, vals), self.blocks))
        out = [np.concatenate([p[i] for p in parts]).reshape(self.F, self.stride) for i in range(3)]
        return out


def _grow_tree(hist, binned, mapper, is_cat, g, h, rows, config) -> list[TreeNode]:
    lam = config.l2_lambda
    nodes: list[TreeNode | None] = []
    miss = mapper.missing_bin

    def build(idx, hists, depth):
        pos = len(nodes)
        nodes.append(None)
        hg, hh, hc = hists
        G = g[idx].sum()
        H = h[idx].sum()
        split = None
        if depth < config.max_depth and len(idx) > 1:
            split = find_best_split(
                hg, hh, hc, mapper.n_bins, is_cat, lam, config.gain_gamma, config.min_child_weight
            )
        if split is None:
            nodes[pos] = TreeNode(weight=float(config.learning_rate * leaf_weight(G, H, lam)))
            return pos
        f = split.feature
        col = binned[idx, f]
        missing = col == miss
        go_left = np.isin(col, split.left_bins) & ~missing
        go_left |= missing & split.default_left
        li, ri = idx[go_left], idx[~go_left]
        # histogram of the smaller child, the other by subtraction
        if len(li) <= len(ri):
            lh = hist(li, g, h)
            rh = [a - b for a, b in zip(hists, lh)]
        else:
            rh = hist(ri, g, h)
            lh = [a - b for a, b in zip(hists, rh)]
        left = build(li, lh, depth + 1)
        right = build(ri, rh, depth + 1)
        if split.is_categorical:
            threshold, levels = None, tuple(int(b) for b in split.left_bins)
        else:
            threshold, levels = float(mapper.edges[f][split.position]), None
        nodes[pos] = TreeNode(
            feature=f,
            threshold=threshold,
            levels=levels,
            default_left=split.default_left,
            left=left,
            right=right,
            gain=split.gain,
        )
        return pos

    build(rows, hist(rows, g, h), 0)
    return nodes


def train_gbdt(
    config: LearnerConfig,
    X: np.ndarray,
    y: np.ndarray,
    sample_weight: np.ndarray | None = None,
    categorical: dict[int, int] | None = None,
    feature_names: list[str] | None = None,
    n_jobs: int = 1,
) -> GbdtModel:
    """Fit a boosted tree ensemble.

    ``X`` holds NaN for missing cells; columns listed in ``categorical``
    (index -> number of levels) carry integer level codes.  ``n_jobs`` splits
    histogram construction across feature blocks and does not change the
    fitted model.
    """
    y = check_training_inputs(config, X, y)
    X = np.asarray(X, dtype=float)
    categorical = dict(categorical or {})
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
    w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    K = config.n_classes
    model = GbdtModel(config, names, categorical, base_scores(y, K, w))
    if config.n_rounds == 0:
        return model

    mapper = BinMapper.fit(X, categorical, config.n_bins)
    binned = mapper.transform(X)
    is_cat = np.array([j in categorical for j in range(X.shape[1])], dtype=bool)
    hist = _HistogramBuilder(binned, mapper.missing_bin + 1, n_jobs)
    rng = np.random.default_rng(config.seed)
    all_rows = np.arange(len(y))
    raw = np.tile(model.base_scores, (len(y), 1))
    for _ in range(config.n_rounds):
        g, h = grad_hess(raw, y, K)
        g = g * w[:, None]
        h = h * w[:, None]
        rows = all_rows
        if config.subsample < 1.0:
            rows = all_rows[rng.random(len(y)) < config.subsample]
            if len(rows) == 0:
                rows = all_rows
        round_trees = []
        for k in range(n_outputs(K)):
            nodes = _grow_tree(hist, binned, mapper, is_cat, g[:, k], h[:, k], rows, config)
            tree = Tree(nodes)
            raw[:, k] += tree.predict(X)
            round_trees.append(tree)
        model.trees.append(round_trees)
    return model


def gbdt_importance(model: GbdtModel) -> np.ndarray:
    """Total split gain per feature, recomputed from the stored trees."""
    imp = np.zeros(len(model.feature_names))
    for round_trees in model.trees:
        for tree in round_trees:
            for n in tree.nodes:
                if not n.is_leaf:
                    imp[n.feature] += n.gain
    return imp


def gbdt_to_dict(model: GbdtModel) -> dict:
    return {
        "base_scores": model.base_scores.tolist(),
        "categorical": {str(k): v for k, v in sorted(model.categorical.items())},
        "trees": [[[n.to_dict() for n in t.nodes] for t in rt] for rt in model.trees],
    }


def gbdt_from_dict(config: LearnerConfig, names: list[str], d: dict) -> GbdtModel:
    model = GbdtModel(
        config=config,
        feature_names=names,
        categorical={int(k): int(v) for k, v in d["categorical"].items()},
        base_scores=np.asarray(d["base_scores"], dtype=float),
        trees=[[Tree([TreeNode.from_dict(n) for n in t]) for t in rt] for rt in d["trees"]],
    )
    return model


def predict_raw(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    return model.raw_scores(X)


def predict_proba_gbdt(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    return probabilities(model.raw_scores(X), model.n_classes)
