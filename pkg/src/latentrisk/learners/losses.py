"""Logistic and softmax cross-entropy: links, gradients, hessians."""
from __future__ import annotations

import numpy as np
from scipy.special import expit, log_softmax, softmax

PROB_CLIP = 1e-6


def n_outputs(n_classes: int) -> int:
    """Binary problems use a single logit; K > 2 classes use K scores."""
    return 1 if n_classes == 2 else n_classes


def base_scores(y: np.ndarray, n_classes: int, weight: np.ndarray | None = None) -> np.ndarray:
    """Log-odds (binary) or log-priors (multiclass) of the weighted class frequencies."""
    w = np.ones(len(y)) if weight is None else weight
    prior = np.bincount(y, weights=w, minlength=n_classes) / w.sum()
    prior = np.clip(prior, PROB_CLIP, 1.0 - PROB_CLIP)
    if n_classes == 2:
        return np.array([np.log(prior[1] / (1.0 - prior[1]))])
    return np.log(prior / prior.sum())


def probabilities(raw: np.ndarray, n_classes: int) -> np.ndarray:
    """Map raw scores of shape (n, n_outputs) to class probabilities (n, n_classes)."""
    if n_classes == 2:
        p1 = expit(raw[:, 0])
        return np.column_stack([1.0 - p1, p1])
    return softmax(raw, axis=1)


def grad_hess(raw: np.ndarray, y: np.ndarray, n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    if n_classes == 2:
        p = expit(raw[:, 0])
        return (p - y)[:, None], (p * (1.0 - p))[:, None]
    p = softmax(raw, axis=1)
    onehot = np.zeros_like(p)
    onehot[np.arange(len(y)), y] = 1.0
    return p - onehot, p * (1.0 - p)


def logistic_loss(raw: np.ndarray | float, y: np.ndarray | float) -> np.ndarray:
    """Per-row binary cross-entropy of a logit, computed stably."""
    raw = np.asarray(raw, dtype=float)
    return np.logaddexp(0.0, raw) - np.asarray(y, dtype=float) * raw


def log_loss(raw: np.ndarray, y: np.ndarray, n_classes: int) -> float:
    if n_classes == 2:
        return float(logistic_loss(raw[:, 0], y).mean())
    return float(-log_softmax(raw, axis=1)[np.arange(len(y)), y].mean())
