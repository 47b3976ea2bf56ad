"""Explainable boosting: an additive model grown by cyclic per-feature boosting.

Every round visits the features in index order.  For the visited feature a
one-split stump is fitted to the current gradients and hessians over that
feature's histogram, and its learning-rate-scaled leaf values are added to the
feature's shape function.  Missing cells have their own bin whose value is
updated with its own Newton step.  After training each shape function is
centred (occupancy-weighted mean zero) and the offsets moved into the
intercept, which leaves predictions unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .binning import BinMapper
from .config import LearnerConfig
from .gbdt import check_training_inputs
from .losses import base_scores, grad_hess, n_outputs, probabilities
from .splitting import find_best_split, leaf_weight


@dataclass
class EbmModel:
    config: LearnerConfig
    feature_names: list[str]
    categorical: dict[int, int]
    intercept: np.ndarray  # (n_outputs,)
    edges: list[np.ndarray | None]
    shapes: list[np.ndarray]  # per feature (n_outputs, n_bins_j + 1); last column = missing
    bin_counts: list[np.ndarray] = field(default_factory=list)

    kind = "ebm"

    @property
    def n_classes(self) -> int:
        return self.config.n_classes

    def bin_index(self, X: np.ndarray, j: int) -> np.ndarray:
        """Column of shape-function bins for feature ``j``; the last bin is Missing."""
        nb = self.shapes[j].shape[1] - 1
        col = X[:, j]
        nan = np.isnan(col)
        if self.edges[j] is None:
            codes = np.where(nan, 0, col).astype(np.int64)
            bad = (codes < 0) | (codes >= nb)
            return np.where(nan | bad, nb, codes)
        codes = np.searchsorted(self.edges[j], np.where(nan, 0.0, col), side="left")
        return np.where(nan, nb, codes)

    def contributions(self, X: np.ndarray) -> np.ndarray:
        """Per-feature shape values, shape (n_rows, n_features, n_outputs)."""
        X = np.asarray(X, dtype=float)
        out = np.empty((len(X), len(self.shapes), len(self.intercept)))
        for j, shape in enumerate(self.shapes):
            out[:, j, :] = shape[:, self.bin_index(X, j)].T
        return out

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        raw = np.tile(self.intercept, (len(X), 1))
        for j, shape in enumerate(self.shapes):
            raw += shape[:, self.bin_index(X, j)].T
        return raw


def train_ebm(
    config: LearnerConfig,
    X: np.ndarray,
    y: np.ndarray,
    sample_weight: np.ndarray | None = None,
    categorical: dict[int, int] | None = None,
    feature_names: list[str] | None = None,
    n_jobs: int = 1,
) -> EbmModel:
    y = check_training_inputs(config, X, y)
    X = np.asarray(X, dtype=float)
    n, F = X.shape
    categorical = dict(categorical or {})
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(F)]
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    K = config.n_classes
    n_out = n_outputs(K)
    lam, lr = config.l2_lambda, config.learning_rate

    mapper = BinMapper.fit(X, categorical, config.n_bins)
    cols = []
    for j in range(F):
        nb = int(mapper.n_bins[j])
        cols.append(mapper.transform_column(X[:, j], j, missing_bin=nb))
    shapes = [np.zeros((n_out, int(mapper.n_bins[j]) + 1)) for j in range(F)]
    counts = [np.bincount(cols[j], minlength=int(mapper.n_bins[j]) + 1) for j in range(F)]
    intercept = base_scores(y, K, w)
    raw = np.tile(intercept, (n, 1))
    rng = np.random.default_rng(config.seed)

    for _ in range(config.n_rounds):
        rows = None
        if config.subsample < 1.0:
            rows = rng.random(n) < config.subsample
        for j in range(F):
            nb = int(mapper.n_bins[j])
            code = cols[j]
            g, h = grad_hess(raw, y, K)
            g = g * w[:, None]
            h = h * w[:, None]
            if rows is not None:
                g = g * rows[:, None]
                h = h * rows[:, None]
                cnt = np.bincount(code, weights=rows.astype(float), minlength=nb + 1)
            else:
                cnt = counts[j].astype(float)
            update = np.zeros((n_out, nb + 1))
            for k in range(n_out):
                hg = np.bincount(code, weights=g[:, k], minlength=nb + 1)
                hh = np.bincount(code, weights=h[:, k], minlength=nb + 1)
                # search over observed bins only; the missing bin is fitted on its own
                obs_hist = [a.copy() for a in (hg, hh, cnt)]
                for a in obs_hist:
                    a[nb] = 0.0
                split = find_best_split(
                    obs_hist[0][None, :], obs_hist[1][None, :], obs_hist[2][None, :],
                    np.array([nb]), np.array([j in categorical]),
                    lam, config.gain_gamma, config.min_child_weight,
                )
                if split is not None:
                    left = np.zeros(nb, dtype=bool)
                    left[split.left_bins] = True
                    GL, HL = hg[:nb][left].sum(), hh[:nb][left].sum()
                    GR, HR = hg[:nb][~left].sum(), hh[:nb][~left].sum()
                    update[k, :nb] = np.where(left, leaf_weight(GL, HL, lam), leaf_weight(GR, HR, lam))
                if cnt[nb] > 0:
                    update[k, nb] = leaf_weight(hg[nb], hh[nb], lam)
            update *= lr
            shapes[j] += update
            raw += update[:, code].T

    # centre each shape function; predictions are unchanged up to rounding
    for j in range(F):
        total = counts[j].sum()
        if total == 0:
            continue
        offset = shapes[j] @ counts[j] / total
        shapes[j] -= offset[:, None]
        intercept = intercept + offset

    return EbmModel(
        config=config,
        feature_names=names,
        categorical=categorical,
        intercept=np.asarray(intercept, dtype=float),
        edges=list(mapper.edges),
        shapes=shapes,
        bin_counts=counts,
    )


def ebm_importance(model: EbmModel) -> np.ndarray:
    """Occupancy-weighted mean absolute shape value per feature, averaged over outputs."""
    imp = np.zeros(len(model.shapes))
    for j, (shape, cnt) in enumerate(zip(model.shapes, model.bin_counts)):
        total = cnt.sum()
        if total:
            imp[j] = float((np.abs(shape) @ cnt).mean() / total)
    return imp


def ebm_to_dict(model: EbmModel) -> dict:
    return {
        "intercept": model.intercept.tolist(),
        "categorical": {str(k): v for k, v in sorted(model.categorical.items())},
        "shapes": [
            {
                "edges": None if e is None else e.tolist(),
                "values": s.tolist(),
                "bin_counts": c.tolist(),
            }
            for e, s, c in zip(model.edges, model.shapes, model.bin_counts)
        ],
    }


def ebm_from_dict(config: LearnerConfig, names: list[str], d: dict) -> EbmModel:
    return EbmModel(
        config=config,
        feature_names=names,
        categorical={int(k): int(v) for k, v in d["categorical"].items()},
        intercept=np.asarray(d["intercept"], dtype=float),
        edges=[None if s["edges"] is None else np.asarray(s["edges"], dtype=float) for s in d["shapes"]],
        shapes=[np.asarray(s["values"], dtype=float).reshape(len(d["intercept"]), -1) for s in d["shapes"]],
        bin_counts=[np.asarray(s["bin_counts"], dtype=np.int64) for s in d["shapes"]],
    )


def predict_proba_ebm(model: EbmModel, X: np.ndarray) -> np.ndarray:
    return probabilities(model.raw_scores(X), model.n_classes)
