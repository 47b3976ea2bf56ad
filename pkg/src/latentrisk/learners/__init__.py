"""In-repo learners: histogram GBDT and EBM-style cyclic additive boosting.

The public helpers dispatch on the model family so that callers (the cascade,
tuning, the CLI) stay agnostic of which learner is configured.
"""
from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .config import LearnerConfig, LearnerError
from .ebm import EbmModel, ebm_from_dict, ebm_importance, ebm_to_dict, train_ebm
from .gbdt import GbdtModel, Tree, TreeNode, gbdt_from_dict, gbdt_importance, gbdt_to_dict, train_gbdt
from .losses import grad_hess, log_loss, logistic_loss, probabilities

MODEL_FORMAT_VERSION = 1

Model = Union[GbdtModel, EbmModel]

__all__ = [
    "LearnerConfig", "LearnerError", "GbdtModel", "EbmModel", "Tree", "TreeNode", "Model",
    "train", "train_gbdt", "train_ebm", "predict_proba", "predict_raw", "feature_importance",
    "tune", "model_to_dict", "model_from_dict", "save_model", "load_model",
    "grad_hess", "log_loss", "logistic_loss", "MODEL_FORMAT_VERSION",
]


def train(config: LearnerConfig, X, y, sample_weight=None, categorical=None,
          feature_names=None, n_jobs: int = 1) -> Model:
    fit = train_gbdt if config.kind == "gbdt" else train_ebm
    return fit(config, X, y, sample_weight=sample_weight, categorical=categorical,
               feature_names=feature_names, n_jobs=n_jobs)


def _check_layout(model: Model, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(model.feature_names):
        raise LearnerError(
            f"feature layout mismatch: model expects {len(model.feature_names)} columns, "
            f"got shape {X.shape}"
        )
    return X


def predict_raw(model: Model, X, n_jobs: int = 1) -> np.ndarray:
    """Accumulated scores before the link.  Row chunks are independent, so the
    result does not depend on ``n_jobs``."""
    X = _check_layout(model, X)
    if n_jobs <= 1 or len(X) < 2 * n_jobs:
        return model.raw_scores(X)
    chunks = np.array_split(np.arange(len(X)), n_jobs)
    with ThreadPoolExecutor(n_jobs) as pool:
        parts = list(pool.map(lambda c: model.raw_scores(X[c]), chunks))
    return np.concatenate(parts, axis=0)


def predict_proba(model: Model, X, n_jobs: int = 1) -> np.ndarray:
    return probabilities(predict_raw(model, X, n_jobs=n_jobs), model.n_classes)


def predict_labels(model: Model, X, n_jobs: int = 1) -> np.ndarray:
    return np.argmax(predict_proba(model, X, n_jobs=n_jobs), axis=1)


def feature_importance(model: Model) -> list[tuple[str, float]]:
    """(feature, share) pairs sorted by decreasing importance, shares summing to 1.

    A model with no splits / flat shapes reports all-zero importances.
    """
    imp = gbdt_importance(model) if model.kind == "gbdt" else ebm_importance(model)
    total = imp.sum()
    if total > 0:
        imp = imp / total
    order = sorted(range(len(imp)), key=lambda j: (-imp[j], j))
    return [(model.feature_names[j], float(imp[j])) for j in order]


def model_to_dict(model: Model) -> dict:
    body = gbdt_to_dict(model) if model.kind == "gbdt" else ebm_to_dict(model)
    key = "trees" if model.kind == "gbdt" else "shapes"
    out = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "config": model.config.to_dict(),
        "feature_names": list(model.feature_names),
        "base_scores": body["base_scores"] if model.kind == "gbdt" else body["intercept"],
        "categorical": body["categorical"],
        key: body[key],
    }
    return out


def model_from_dict(d: dict) -> Model:
    if d.get("format_version") != MODEL_FORMAT_VERSION:
        raise LearnerError(
            f"model format_version {d.get('format_version')!r} unsupported "
            f"(expected {MODEL_FORMAT_VERSION})"
        )
    config = LearnerConfig.from_dict(d["config"])
    names = list(d["feature_names"])
    if d["kind"] == "gbdt":
        return gbdt_from_dict(config, names, d)
    body = dict(d)
    body["intercept"] = d["base_scores"]
    return ebm_from_dict(config, names, body)


def save_model(model: Model, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), sort_keys=True))


def load_model(path: str | Path) -> Model:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise LearnerError(f"{path}: unreadable model file ({exc})") from exc
    return model_from_dict(doc)


def stratified_folds(y: np.ndarray, n_folds: int, seed: int) -> np.ndarray:
    """Fold index per row; each class is shuffled then dealt round-robin."""
    rng = np.random.default_rng(seed)
    fold = np.empty(len(y), dtype=int)
    offset = 0
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        fold[idx] = (np.arange(len(idx)) + offset) % n_folds
        offset += len(idx)
    return fold


def tune(
    config_space: Sequence[LearnerConfig],
    X,
    y,
    n_folds: int = 3,
    seed: int = 0,
    categorical=None,
    feature_names=None,
) -> tuple[LearnerConfig, list[float]]:
    """Pick the config with the best mean macro-F1 under stratified k-fold.

    Ties prefer fewer boosting rounds, then the earlier config.  Returns the
    winner and the mean fold score of every config (in input order).
    """
    from ..evaluation import compute_report

    if n_folds < 2:
        raise LearnerError("n_folds must be at least 2")
    if not config_space:
        raise LearnerError("empty config space")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    folds = stratified_folds(y, n_folds, seed)
    usable = []
    for k in range(n_folds):
        tr, va = folds != k, folds == k
        if len(np.unique(y[tr])) < 2 or not va.any():
            warnings.warn(f"fold {k} skipped: training part has a single class", stacklevel=2)
            continue
        usable.append(k)
    if not usable:
        raise LearnerError("every fold was skipped; cannot tune")
    means = []
    for cfg in config_space:
        scores = []
        for k in usable:
            tr, va = folds != k, folds == k
            model = train(cfg, X[tr], y[tr], categorical=categorical, feature_names=feature_names)
            pred = predict_labels(model, X[va])
            scores.append(compute_report(pred, y[va], n_classes=cfg.n_classes).macro_f1)
        means.append(float(np.mean(scores)))
    best = min(range(len(config_space)),
               key=lambda i: (-means[i], config_space[i].n_rounds, i))
    return config_space[best], means
