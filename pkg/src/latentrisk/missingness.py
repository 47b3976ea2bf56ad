"""Missingness diagnostics and fitted imputers (mean, most-frequent, KNN).

Only feature columns are ever imputed; latent targets and the success label
pass through untouched.  MNAR cannot be detected from the observed data, so
diagnostics distinguish only "consistent with MCAR" from "evidence of MAR".
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from scipy import stats

from .dataset import FeatureSchema, TabularDataset


class ImputationError(ValueError):
    pass


@dataclass(frozen=True)
class Association:
    feature: str
    statistic: float
    p_value: float


@dataclass(frozen=True)
class FeatureMissingness:
    missing_fraction: float
    mechanism_flag: str  # none_missing | mcar_consistent | mar_evidence
    associations: tuple[Association, ...] = ()  # sorted by p-value

    @property
    def strongest_association(self) -> Association | None:
        return self.associations[0] if self.associations else None


@dataclass(frozen=True)
class MissingnessReport:
    alpha: float
    features: dict[str, FeatureMissingness]

    def flagged(self, flag: str) -> list[str]:
        return [name for name, fm in self.features.items() if fm.mechanism_flag == flag]

    def to_dict(self) -> dict[str, Any]:
        return {
            name: {
                "missing_fraction": fm.missing_fraction,
                "mechanism_flag": fm.mechanism_flag,
                "associations": [asdict(a) for a in fm.associations],
            }
            for name, fm in self.features.items()
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _association(indicator: np.ndarray, values: np.ndarray, kind: str) -> tuple[float, float] | None:
    obs = ~np.isnan(values)
    m, v = indicator[obs], values[obs]
    if m.all() or not m.any():
        return None
    if kind == "numeric":
        a, b = v[m], v[~m]
        if np.ptp(v) == 0:
            return None
        res = stats.mannwhitneyu(a, b, alternative="two-sided")
        return float(res.statistic), float(res.pvalue)
    levels = np.unique(v)
    if len(levels) < 2:
        return None
    table = np.array([[np.sum((v == lv) & m), np.sum((v == lv) & ~m)] for lv in levels])
    chi2, p, _, _ = stats.chi2_contingency(table, correction=False)
    return float(chi2), float(p)


def diagnose(dataset: TabularDataset, alpha: float = 0.05) -> MissingnessReport:
    """Test each partially missing feature's missingness indicator against every
    other observed feature (Mann-Whitney for numeric, chi-square otherwise).

    A feature is flagged ``mar_evidence`` when its smallest Bonferroni-corrected
    p-value (corrected over that feature's tests) falls below ``alpha``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    schema = dataset.schema
    n = dataset.n_rows
    out = {}
    for f in schema.features:
        col = dataset.columns[f.name]
        miss = np.isnan(col)
        frac = float(miss.mean()) if n else 0.0
        if not miss.any():
            out[f.name] = FeatureMissingness(frac, "none_missing")
            continue
        assoc = []
        for other in schema.features:
            if other.name == f.name:
                continue
            res = _association(miss, dataset.columns[other.name], other.kind)
            if res is not None:
                assoc.append(Association(other.name, *res))
        n_tests = len(assoc)
        assoc.sort(key=lambda a: (a.p_value, a.feature))
        flag = "mcar_consistent"
        if assoc and min(1.0, assoc[0].p_value * n_tests) < alpha:
            flag = "mar_evidence"
        out[f.name] = FeatureMissingness(frac, flag, tuple(assoc))
    return MissingnessReport(alpha, out)


@dataclass
class FittedImputer:
    strategy: str  # mean | most_frequent | knn
    schema_fingerprint: str
    feature_names: list[str]
    kinds: list[str]
    fill: dict[str, float] = field(default_factory=dict)
    k: int | None = None
    reference: np.ndarray | None = None  # standardised numeric / raw codes, NaN missing
    center: np.ndarray | None = None
    scale: np.ndarray | None = None
    raw_reference: np.ndarray | None = None  # unstandardised, used for fills

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "strategy": self.strategy,
            "schema_fingerprint": self.schema_fingerprint,
            "feature_names": self.feature_names,
            "kinds": self.kinds,
            "fill": self.fill,
        }
        if self.strategy == "knn":
            d.update(
                k=self.k,
                center=self.center.tolist(),
                scale=self.scale.tolist(),
                raw_reference=[[None if math.isnan(v) else v for v in row]
                               for row in self.raw_reference.tolist()],
            )
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FittedImputer":
        imp = cls(
            strategy=d["strategy"],
            schema_fingerprint=d["schema_fingerprint"],
            feature_names=list(d["feature_names"]),
            kinds=list(d["kinds"]),
            fill={k: float(v) for k, v in d["fill"].items()},
        )
        if imp.strategy == "knn":
            imp.k = int(d["k"])
            imp.center = np.asarray(d["center"], dtype=float)
            imp.scale = np.asarray(d["scale"], dtype=float)
            raw = np.array([[np.nan if v is None else v for v in row] for row in d["raw_reference"]],
                           dtype=float).reshape(-1, len(imp.feature_names))
            imp.raw_reference = raw
            imp.reference = _standardise(raw, imp.center, imp.scale, imp.kinds)
        return imp


def _standardise(X, center, scale, kinds) -> np.ndarray:
    Z = X.copy()
    for j, kind in enumerate(kinds):
        if kind == "numeric":
            Z[:, j] = (X[:, j] - center[j]) / scale[j] if scale[j] > 0 else 0.0 * X[:, j]
    return Z


def _mode(values: np.ndarray) -> float:
    # most frequent value; ties resolved towards the smallest value / level code
    uniq, counts = np.unique(values, return_counts=True)
    return float(uniq[np.argmax(counts)])


def fit_imputer(strategy: str, dataset: TabularDataset, k: int | None = None,
                per_feature: dict[str, str] | None = None) -> FittedImputer:
    """Fit fill statistics on the non-missing cells of ``dataset``.

    ``strategy`` is "mean" (numeric mean; modal level for categorical and
    boolean features), "most_frequent" or "knn".  ``per_feature`` may override
    the simple strategy for individual features with "mean" or "most_frequent".
    """
    if strategy not in ("mean", "most_frequent", "knn"):
        raise ImputationError(f"unknown imputation strategy {strategy!r}")
    schema = dataset.schema
    per_feature = dict(per_feature or {})
    unknown = set(per_feature) - set(schema.feature_names)
    if unknown:
        raise ImputationError(f"per-feature strategies name unknown features {sorted(unknown)}")
    X, _ = dataset.feature_matrix()
    kinds = [f.kind for f in schema.features]
    imp = FittedImputer(strategy, schema.fingerprint(), schema.feature_names, kinds)

    for j, f in enumerate(schema.features):
        rule = per_feature.get(f.name, strategy)
        if rule == "knn":
            continue
        obs = X[:, j][~np.isnan(X[:, j])]
        if len(obs) == 0:
            raise ImputationError(f"feature {f.name!r} has no observed values to fit {rule!r}")
        if rule == "mean" and f.kind == "numeric":
            imp.fill[f.name] = float(np.mean(obs))
        else:
            imp.fill[f.name] = _mode(obs)

    if strategy == "knn":
        if k is None or k < 1:
            raise ImputationError("knn imputation needs k >= 1")
        usable = ~np.all(np.isnan(X), axis=1)
        ref = X[usable]
        if k > len(ref):
            raise ImputationError(f"k={k} exceeds the {len(ref)} usable reference rows")
        center = np.zeros(len(kinds))
        scale = np.zeros(len(kinds))
        for j, kind in enumerate(kinds):
            obs = ref[:, j][~np.isnan(ref[:, j])]
            if kind == "numeric" and len(obs):
                center[j] = obs.mean()
                scale[j] = obs.std() if len(obs) > 1 else 0.0
        imp.k = int(k)
        imp.center, imp.scale = center, scale
        imp.raw_reference = ref.copy()
        imp.reference = _standardise(ref, center, scale, kinds)
    return imp


def _knn_fill_row(imp: FittedImputer, x_raw: np.ndarray, is_num: np.ndarray,
                  cols: list[int]) -> np.ndarray:
    z = _standardise(x_raw[None, :], imp.center, imp.scale, imp.kinds)[0]
    ref = imp.reference
    q_obs = ~np.isnan(z)
    sub = ref[:, q_obs]
    diff = np.where(is_num[q_obs], (sub - z[q_obs]) ** 2, (sub != z[q_obs]).astype(float))
    both = ~np.isnan(sub)
    n_both = both.sum(axis=1)
    # nan-euclidean style: rescale partial overlaps to the query's observed count
    with np.errstate(invalid="ignore", divide="ignore"):
        dist = np.where(both, diff, 0.0).sum(axis=1) * (q_obs.sum() / n_both)
    dist[n_both == 0] = np.inf
    if not q_obs.any():
        dist = np.zeros(len(ref))
    out = x_raw.copy()
    for j in cols:
        if not np.isnan(x_raw[j]):
            continue
        donors = np.flatnonzero(~np.isnan(imp.raw_reference[:, j]))
        if len(donors) == 0:
            raise ImputationError(f"no reference row observes feature {imp.feature_names[j]!r}")
        # stable sort: equal distances keep the lower reference index first
        order = donors[np.argsort(dist[donors], kind="stable")][: imp.k]
        vals = imp.raw_reference[order, j]
        if is_num[j]:
            out[j] = float(np.mean(vals))
        else:
            uniq, counts = np.unique(vals, return_counts=True)
            best = uniq[counts == counts.max()]
            # tie: the level whose first donor ranks earliest
            out[j] = float(next(v for v in vals if v in best))
    return out


def apply_imputer(imp: FittedImputer, dataset: TabularDataset) -> TabularDataset:
    if dataset.schema.fingerprint() != imp.schema_fingerprint:
        raise ImputationError("dataset schema differs from the schema the imputer was fitted on")
    X, _ = dataset.feature_matrix()
    miss = np.isnan(X)
    if not miss.any():
        return dataset
    out = X.copy()
    knn_cols = [j for j, name in enumerate(imp.feature_names) if name not in imp.fill]
    if imp.strategy == "knn" and knn_cols:
        is_num = np.array([kind == "numeric" for kind in imp.kinds])
        rows = np.flatnonzero(miss[:, knn_cols].any(axis=1))
        for i in rows:
            filled = _knn_fill_row(imp, X[i], is_num, knn_cols)
            out[i, knn_cols] = filled[knn_cols]
    for j, name in enumerate(imp.feature_names):
        if name in imp.fill:
            out[miss[:, j], j] = imp.fill[name]
    return dataset.with_columns({name: out[:, j] for j, name in enumerate(imp.feature_names)})
