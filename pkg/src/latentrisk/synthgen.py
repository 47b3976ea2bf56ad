"""Synthetic trial portfolios with a planted features -> latent risks -> success structure.

Structural equations (all per row):

    z_j      feature encoded to mean 0 / variance 1 (numeric draw, +-1 for
             booleans, a fixed per-level effect for categoricals)
    s_f      = (a * beta_f . z + sigma_l * eps_f) / sqrt(a^2 + sigma_l^2)
    class_f  = threshold cut of s_f (0 for binary factors)
    eta      = c + m * sum_f (-w_f) s_f + d * v . z + sigma_s * eps
    p        = sigmoid(eta);  success ~ Bernoulli(p)

Higher latent scores mean more operational risk and lower success.  The
per-row ``p`` (noise included) is the ground-truth success probability, so
thresholding it at 0.5 is the Bayes-optimal classifier.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy.special import expit

from .dataset import GROUPS, PHASES, Feature, FeatureSchema, TabularDataset
from .targets import FACTOR_ORDER, Factor, get_spec


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class MarSpec:
    masked: str
    driver: str
    slope: float = 2.0
    base_rate: float = 0.2


def _default_weights() -> dict[str, float]:
    return {
        Factor.RECRUITMENT_DEVIATION.value: 1.0,
        Factor.DROPOUT_RATE.value: 1.0,
        Factor.SAE_OCCURRENCE.value: 0.6,
        Factor.PROTOCOL_DEVIATION.value: 0.05,
    }


@dataclass(frozen=True)
class GeneratorConfig:
    n_rows: int = 2000
    n_numeric: int = 16
    n_categorical: int = 8
    n_boolean: int = 6
    n_levels: int = 4
    sparsity: float = 0.25
    effect_strength_feature_to_latent: float = 1.5
    mediation_strength_latent_to_success: float = 2.0
    mediator_weights: dict[str, float] = field(default_factory=_default_weights)
    direct_effect_strength: float = 0.5
    noise_scale_latent: float = 1.0
    noise_scale_success: float = 0.0
    success_intercept: float = 1.2
    recruitment_thresholds: tuple[float, float, float] = (-0.8, 0.0, 0.9)
    dropout_thresholds: tuple[float, float, float] = (-0.9, 0.0, 0.8)
    mcar_rate: float = 0.0
    mar_specs: tuple[MarSpec, ...] = ()
    label_missing_rate: dict[str, float] = field(default_factory=dict)
    success_missing_rate: float = 0.0
    phase_mix: tuple[float, float, float] = (0.3, 0.4, 0.3)
    seed: int = 0

    def __post_init__(self):
        for name in ("n_numeric", "n_categorical", "n_boolean"):
            if getattr(self, name) < 0:
                raise GeneratorError(f"{name} must be non-negative")
        if self.n_levels < 2:
            raise GeneratorError("n_levels must be at least 2")
        for name in ("sparsity", "mcar_rate", "success_missing_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise GeneratorError(f"{name} must lie in [0, 1]")
        for name in ("effect_strength_feature_to_latent", "mediation_strength_latent_to_success",
                     "direct_effect_strength", "noise_scale_latent", "noise_scale_success"):
            if getattr(self, name) < 0:
                raise GeneratorError(f"{name} must be non-negative")
        for name in ("recruitment_thresholds", "dropout_thresholds"):
            t = getattr(self, name)
            if len(t) != 3 or not all(a < b for a, b in zip(t, t[1:])):
                raise GeneratorError(f"{name} must be three strictly increasing values")
        for k, r in self.label_missing_rate.items():
            Factor(k)
            if not 0.0 <= r <= 1.0:
                raise GeneratorError(f"label_missing_rate[{k}] must lie in [0, 1]")
        for k in self.mediator_weights:
            Factor(k)
        if len(self.phase_mix) != 3 or min(self.phase_mix) < 0 or sum(self.phase_mix) <= 0:
            raise GeneratorError("phase_mix must be three non-negative weights")

    @property
    def n_features(self) -> int:
        return self.n_numeric + self.n_categorical + self.n_boolean

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["mar_specs"] = [asdict(m) for m in self.mar_specs]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GeneratorConfig":
        d = dict(d)
        d["mar_specs"] = tuple(MarSpec(**m) for m in d.get("mar_specs", ()))
        for key in ("recruitment_thresholds", "dropout_thresholds", "phase_mix"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def strong_mediation(cls, **overrides) -> "GeneratorConfig":
        """Success driven almost entirely through recruitment, dropout and SAE;
        protocol deviation carries a token weight.  No direct feature path."""
        params: dict[str, Any] = dict(
            effect_strength_feature_to_latent=1.0,
            noise_scale_latent=1.0,
            mediation_strength_latent_to_success=6.0,
            direct_effect_strength=0.0,
            success_intercept=1.5,
            recruitment_thresholds=(-0.4, 0.0, 0.4),
            dropout_thresholds=(-0.4, 0.0, 0.4),
            mediator_weights={
                Factor.RECRUITMENT_DEVIATION.value: 1.0,
                Factor.DROPOUT_RATE.value: 1.0,
                Factor.SAE_OCCURRENCE.value: 1.0,
                Factor.PROTOCOL_DEVIATION.value: 0.05,
            },
        )
        params.update(overrides)
        return cls(**params)

    @classmethod
    def learnable_latents(cls, mediation: float = 8.0, **overrides) -> "GeneratorConfig":
        """Latents that are sharp functions of the features, with ``mediation``
        controlling how much of the success signal runs through them."""
        params: dict[str, Any] = dict(
            n_rows=1500,
            effect_strength_feature_to_latent=3.0,
            mediation_strength_latent_to_success=mediation,
        )
        params.update(overrides)
        return cls(**params)


@dataclass
class GroundTruth:
    feature_names: list[str]
    factors: list[Factor]
    latent_coefficients: np.ndarray  # (n_factors, n_features)
    mediator_weights: np.ndarray  # (n_factors,) effect of each latent score on the success logit
    direct_coefficients: np.ndarray  # (n_features,)
    level_effects: dict[str, list[float]]
    latent_scores: np.ndarray  # (n_rows, n_factors), before any masking
    latent_classes: np.ndarray  # (n_rows, n_factors)
    success_probability: np.ndarray  # (n_rows,)
    success_label: np.ndarray  # (n_rows,), before masking

    def to_dict(self) -> dict[str, Any]:
        return {
            "feature_names": self.feature_names,
            "factors": [f.value for f in self.factors],
            "latent_coefficients": self.latent_coefficients.tolist(),
            "mediator_weights": self.mediator_weights.tolist(),
            "direct_coefficients": self.direct_coefficients.tolist(),
            "level_effects": self.level_effects,
            "latent_scores": self.latent_scores.tolist(),
            "latent_classes": self.latent_classes.tolist(),
            "success_probability": self.success_probability.tolist(),
            "success_label": self.success_label.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GroundTruth":
        return cls(
            feature_names=list(d["feature_names"]),
            factors=[Factor(f) for f in d["factors"]],
            latent_coefficients=np.asarray(d["latent_coefficients"], dtype=float),
            mediator_weights=np.asarray(d["mediator_weights"], dtype=float),
            direct_coefficients=np.asarray(d["direct_coefficients"], dtype=float),
            level_effects={k: list(v) for k, v in d["level_effects"].items()},
            latent_scores=np.asarray(d["latent_scores"], dtype=float),
            latent_classes=np.asarray(d["latent_classes"], dtype=int),
            success_probability=np.asarray(d["success_probability"], dtype=float),
            success_label=np.asarray(d["success_label"], dtype=int),
        )


def make_schema(config: GeneratorConfig) -> FeatureSchema:
    feats = []
    kinds = ["numeric"] * config.n_numeric + ["categorical"] * config.n_categorical \
        + ["boolean"] * config.n_boolean
    for i, kind in enumerate(kinds):
        group = GROUPS[i % len(GROUPS)]
        levels = tuple(f"L{k}" for k in range(config.n_levels)) if kind == "categorical" else None
        feats.append(Feature(f"{group}_{kind[:3]}_{i:02d}", kind, group, levels))
    return FeatureSchema(
        features=tuple(feats),
        latent_targets={f"target_{f.value}": f for f in FACTOR_ORDER},
        success_column="operational_success",
        phase_column="phase",
        id_column="trial_id",
    )


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def _sparse_unit(rng, n_features: int, sparsity: float) -> np.ndarray:
    v = np.zeros(n_features)
    if n_features == 0 or sparsity == 0:
        return v
    m = max(1, int(round(sparsity * n_features)))
    idx = rng.choice(n_features, size=m, replace=False)
    v[idx] = rng.normal(size=m)
    return _unit(v)


def generate(config: GeneratorConfig, sample_seed: int | None = None
             ) -> tuple[TabularDataset, FeatureSchema, GroundTruth]:
    """Draw a dataset.

    Structure (coefficients, level effects) depends on ``config.seed`` only;
    rows depend on ``sample_seed`` (default ``config.seed``), so two calls
    with different sample seeds give independent samples from one population.
    """
    if config.n_rows < 1:
        raise GeneratorError("n_rows must be at least 1")
    if (config.effect_strength_feature_to_latent == 0
            and config.mediation_strength_latent_to_success == 0
            and config.direct_effect_strength == 0
            and config.noise_scale_latent == 0
            and config.noise_scale_success == 0):
        warnings.warn("degenerate generator config: success labels carry no signal", stacklevel=2)

    schema = make_schema(config)
    names = schema.feature_names
    F = len(names)
    n = config.n_rows
    srng = np.random.default_rng([config.seed, 0])
    rrng = np.random.default_rng([config.seed if sample_seed is None else sample_seed, 1])

    # ---- structure
    level_effects = {}
    for f in schema.features:
        if f.kind == "categorical":
            e = srng.normal(size=config.n_levels)
            e = e - e.mean()
            sd = e.std()
            level_effects[f.name] = (e / sd if sd > 0 else e).tolist()
    factors = list(FACTOR_ORDER)
    beta = np.array([_sparse_unit(srng, F, config.sparsity) for _ in factors]).reshape(len(factors), F)
    direct = _sparse_unit(srng, F, config.sparsity)
    weights = np.array([config.mediator_weights.get(f.value, 0.0) for f in factors])

    # ---- rows
    raw = np.empty((n, F))
    z = np.empty((n, F))
    for j, f in enumerate(schema.features):
        if f.kind == "numeric":
            raw[:, j] = rrng.normal(size=n)
            z[:, j] = raw[:, j]
        elif f.kind == "boolean":
            raw[:, j] = (rrng.random(n) < 0.5).astype(float)
            z[:, j] = 2.0 * raw[:, j] - 1.0
        else:
            raw[:, j] = rrng.integers(0, config.n_levels, size=n).astype(float)
            z[:, j] = np.asarray(level_effects[f.name])[raw[:, j].astype(int)]
    phase_p = np.asarray(config.phase_mix, dtype=float)
    phase = np.asarray(PHASES, dtype=object)[rrng.choice(3, size=n, p=phase_p / phase_p.sum())]

    a, sl = config.effect_strength_feature_to_latent, config.noise_scale_latent
    denom = np.sqrt(a * a + sl * sl) or 1.0
    eps = rrng.normal(size=(n, len(factors)))
    scores = (a * z @ beta.T + sl * eps) / denom
    classes = np.empty((n, len(factors)), dtype=int)
    for i, f in enumerate(factors):
        spec = get_spec(f)
        if spec.encoding == "binary":
            classes[:, i] = (scores[:, i] > 0).astype(int)
        else:
            cuts = (config.recruitment_thresholds if f is Factor.RECRUITMENT_DEVIATION
                    else config.dropout_thresholds)
            classes[:, i] = np.searchsorted(np.asarray(cuts), scores[:, i], side="left")

    eta = (config.success_intercept
           - config.mediation_strength_latent_to_success * scores @ weights
           + config.direct_effect_strength * z @ direct
           + config.noise_scale_success * rrng.normal(size=n))
    p = expit(eta)
    success = (rrng.random(n) < p).astype(int)

    # ---- missingness, applied after the ground truth is fixed
    X = raw.copy()
    if config.mcar_rate > 0:
        X[rrng.random((n, F)) < config.mcar_rate] = np.nan
    for spec in config.mar_specs:
        jm, jd = names.index(spec.masked), names.index(spec.driver)
        base = np.log(spec.base_rate / (1 - spec.base_rate)) if 0 < spec.base_rate < 1 else 0.0
        drive = z[:, jd]
        prob = expit(base + spec.slope * drive)
        X[rrng.random(n) < prob, jm] = np.nan
    targets = {}
    for i, f in enumerate(factors):
        t = classes[:, i].astype(float)
        rate = config.label_missing_rate.get(f.value, 0.0)
        if rate > 0:
            t[rrng.random(n) < rate] = np.nan
        targets[f] = t
    succ = success.astype(float)
    if config.success_missing_rate > 0:
        succ[rrng.random(n) < config.success_missing_rate] = np.nan

    ds = TabularDataset.from_arrays(
        schema,
        {name: X[:, j] for j, name in enumerate(names)},
        phase,
        targets=targets,
        success=succ,
        row_ids=[f"T{i:06d}" for i in range(n)],
    )
    truth = GroundTruth(
        feature_names=names,
        factors=factors,
        latent_coefficients=beta,
        mediator_weights=-config.mediation_strength_latent_to_success * weights,
        direct_coefficients=config.direct_effect_strength * direct,
        level_effects=level_effects,
        latent_scores=scores,
        latent_classes=classes,
        success_probability=p,
        success_label=success,
    )
    return ds, schema, truth


def bayes_optimal_accuracy(truth: GroundTruth | np.ndarray, success_labels) -> float:
    """Accuracy of predicting success iff the true probability is >= 0.5."""
    p = truth.success_probability if isinstance(truth, GroundTruth) else np.asarray(truth)
    y = np.asarray(success_labels, dtype=float)
    obs = ~np.isnan(y)
    return float(np.mean((p[obs] >= 0.5).astype(float) == y[obs]))


def save_ground_truth(truth: GroundTruth, path: str | Path) -> None:
    Path(path).write_text(json.dumps(truth.to_dict()) + "\n")


def load_ground_truth(path: str | Path) -> GroundTruth:
    return GroundTruth.from_dict(json.loads(Path(path).read_text()))
