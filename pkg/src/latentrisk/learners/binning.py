"""Equal-frequency histogram binning with a dedicated slot for missing cells."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class BinMapper:
    """Per-feature bin edges fitted on training data.

    Numeric value ``x`` lands in bin ``searchsorted(edges, x, side="left")``,
    so ``bin <= b`` is equivalent to ``x <= edges[b]``; a split after bin
    ``b`` can therefore be stored as the real threshold ``edges[b]``.
    Level-coded features use their code as the bin.  Missing cells go to bin
    ``missing_bin`` (shared by all features, one past the widest feature).
    """

    edges: list[np.ndarray | None]
    n_bins: np.ndarray  # observed-value bins per feature
    categorical: dict[int, int]

    @property
    def missing_bin(self) -> int:
        return int(self.n_bins.max()) if len(self.n_bins) else 0

    @classmethod
    def fit(cls, X: np.ndarray, categorical: dict[int, int], max_bins: int) -> "BinMapper":
        edges: list[np.ndarray | None] = []
        counts = []
        for j in range(X.shape[1]):
            if j in categorical:
                edges.append(None)
                counts.append(max(int(categorical[j]), 1))
                continue
            col = X[:, j]
            obs = col[~np.isnan(col)]
            uniq = np.unique(obs)
            if len(uniq) <= max_bins:
                e = uniq[:-1]
            else:
                qs = np.linspace(0.0, 1.0, max_bins + 1)[1:-1]
                e = np.unique(np.quantile(obs, qs))
                # the top quantile may coincide with the maximum, which would leave an empty bin
                e = e[e < uniq[-1]]
            edges.append(np.asarray(e, dtype=float))
            counts.append(len(e) + 1)
        return cls(edges=edges, n_bins=np.asarray(counts, dtype=int), categorical=dict(categorical))

    def transform(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape, dtype=np.int32)
        miss = self.missing_bin
        for j in range(X.shape[1]):
            out[:, j] = self.transform_column(X[:, j], j)
            out[np.isnan(X[:, j]), j] = miss
        return out

    def transform_column(self, col: np.ndarray, j: int, missing_bin: int | None = None) -> np.ndarray:
        miss = self.missing_bin if missing_bin is None else missing_bin
        nan = np.isnan(col)
        if self.edges[j] is None:
            codes = np.where(nan, 0, col).astype(np.int64)
            # unseen or out-of-range levels behave like missing
            bad = (codes < 0) | (codes >= self.n_bins[j])
            codes = np.where(nan | bad, miss, codes)
        else:
            codes = np.searchsorted(self.edges[j], np.where(nan, 0.0, col), side="left")
            codes = np.where(nan, miss, codes)
        return codes.astype(np.int32)
