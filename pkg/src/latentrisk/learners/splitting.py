"""Vectorised best-split search over per-feature gradient histograms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SplitCandidate:
    feature: int
    left_bins: np.ndarray  # observed-value bins routed left
    default_left: bool
    gain: float
    is_categorical: bool
    position: int  # number of ordered bins sent left, minus one


def leaf_weight(G, H, lam):
    return -G / (H + lam)


def _score(G, H, lam):
    return G * G / (H + lam)


def find_best_split(
    hg: np.ndarray,
    hh: np.ndarray,
    hc: np.ndarray,
    n_bins: np.ndarray,
    is_cat: np.ndarray,
    lam: float,
    gamma: float,
    min_child_weight: float,
) -> SplitCandidate | None:
    """Best split over all features of one node.

    ``hg``, ``hh``, ``hc`` have shape (n_features, missing_bin + 1) holding
    gradient, hessian and row-count sums; the last column is the missing bin.
    Numeric features are scanned in bin order.  Level-coded features are
    scanned in order of G / (H + lambda) among levels present in the node,
    which yields the optimal binary partition of levels for this objective.
    Ties go to the lowest feature index, then the lowest split position.
    """
    F, S = hg.shape
    B = S - 1
    g_obs, h_obs, c_obs = hg[:, :B], hh[:, :B], hc[:, :B]
    gm, hm, cm = hg[:, B], hh[:, B], hc[:, B]
    G = g_obs.sum(axis=1) + gm
    H = h_obs.sum(axis=1) + hm
    C = c_obs.sum(axis=1) + cm

    cols = np.arange(B)
    key = np.broadcast_to(cols.astype(float), (F, B)).copy()
    present = c_obs > 0
    if is_cat.any():
        ratio = np.where(present, g_obs / (h_obs + lam), np.inf)
        key[is_cat] = ratio[is_cat]
        order = np.argsort(key, axis=1, kind="stable")
    else:
        order = np.broadcast_to(cols, (F, B))
    GL = np.cumsum(np.take_along_axis(g_obs, order, axis=1), axis=1)
    HL = np.cumsum(np.take_along_axis(h_obs, order, axis=1), axis=1)
    CL = np.cumsum(np.take_along_axis(c_obs, order, axis=1), axis=1)
    n_eff = np.where(is_cat, present.sum(axis=1), n_bins)
    valid = cols[None, :] < (n_eff - 1)[:, None]

    parent = _score(G, H, lam)[:, None]
    best_gain = np.full((F, B), -np.inf)
    best_left = np.zeros((F, B), dtype=bool)
    for missing_left in (True, False):
        gl = GL + (gm[:, None] if missing_left else 0.0)
        hl = HL + (hm[:, None] if missing_left else 0.0)
        cl = CL + (cm[:, None] if missing_left else 0.0)
        gr, hr, cr = G[:, None] - gl, H[:, None] - hl, C[:, None] - cl
        ok = valid & (cl > 0) & (cr > 0) & (hl >= min_child_weight) & (hr >= min_child_weight)
        with np.errstate(invalid="ignore"):
            gain = 0.5 * (_score(gl, hl, lam) + _score(gr, hr, lam) - parent) - gamma
        gain = np.where(ok, gain, -np.inf)
        if missing_left:
            best_gain, best_left = gain, ok
        else:
            better = gain > best_gain
            # equal gains: send missing to the side holding more observed rows
            tie = (gain == best_gain) & ok & (CL < (C - cm)[:, None] - CL)
            take = better | tie
            best_gain = np.where(take, gain, best_gain)
            best_left = np.where(take, False, best_left)
    flat = int(np.argmax(best_gain))
    f, k = divmod(flat, B)
    gain = float(best_gain[f, k])
    if not np.isfinite(gain) or gain <= 0.0:
        return None
    left_bins = np.sort(order[f, : k + 1]).astype(np.int32)
    return SplitCandidate(
        feature=int(f),
        left_bins=left_bins,
        default_left=bool(best_left[f, k]),
        gain=gain,
        is_categorical=bool(is_cat[f]),
        position=int(k),
    )
