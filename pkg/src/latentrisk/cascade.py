"""Two-level cascade: latent-risk models (Level 1) feeding an operational-success model (Level 2).

Training follows the staged split strictly:

* the optional imputer and every Level-1 model see L1Train rows only;
* Level-1 models score L1Valid rows, and those out-of-sample predictions are
  appended to the original features to train Level 2 on L1Valid;
* InferenceTest rows are never touched during training.
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import learners
from .dataset import FeatureSchema, PHASES, TabularDataset
from .evaluation import (
    AgreementAnalysis,
    ClassificationReport,
    SensitivityEntry,
    agreement_analysis,
    compute_report,
    distance_sensitivity,
)
from .learners import LearnerConfig
from .missingness import FittedImputer, apply_imputer, fit_imputer
from .splitting import PARTITIONS, SplitPlan, largest_remainder, verify_no_leakage
from .targets import FACTOR_ORDER, Factor, get_spec

ARTIFACT_FORMAT_VERSION = 1
AUGMENTATION_MODES = ("labels_only", "probabilities_only", "labels_and_probabilities")
IMPUTATION_STRATEGIES = ("none", "mean", "most_frequent", "knn")

# Factor dropped by the three-factor configuration.
THREE_FACTOR_SET = (Factor.RECRUITMENT_DEVIATION, Factor.PROTOCOL_DEVIATION, Factor.DROPOUT_RATE)

# Grid searched when a cascade is trained in "optimized" mode.
DEFAULT_TUNE_GRID = (
    {"n_rounds": 100, "learning_rate": 0.1, "max_depth": 3},
    {"n_rounds": 200, "learning_rate": 0.05, "max_depth": 3},
    {"n_rounds": 100, "learning_rate": 0.1, "max_depth": 5},
    {"n_rounds": 200, "learning_rate": 0.1, "max_depth": 5, "l2_lambda": 5.0},
)


class CascadeError(ValueError):
    pass


class LeakageError(CascadeError):
    pass


class ArtifactError(CascadeError):
    pass


@dataclass(frozen=True)
class CascadeConfig:
    latent_factors: tuple[Factor, ...] = FACTOR_ORDER
    level1_configs: dict[Factor, LearnerConfig] = field(default_factory=dict)
    level2_config: LearnerConfig = field(default_factory=LearnerConfig)
    augmentation: str = "labels_and_probabilities"
    imputation: str = "none"
    imputation_k: int = 5
    imputation_per_feature: dict[str, str] = field(default_factory=dict)
    phase: str | None = None
    threshold: float = 0.5
    level2_holdout: float = 0.2
    tune: bool = False
    tune_folds: int = 3

    def __post_init__(self):
        factors = tuple(Factor(f) for f in self.latent_factors)
        if not factors:
            raise CascadeError("at least one latent factor is required")
        if len(set(factors)) != len(factors):
            raise CascadeError("latent factors repeated")
        object.__setattr__(self, "latent_factors", factors)
        l1 = {}
        for f in factors:
            cfg = self.level1_configs.get(f) or self.level1_configs.get(f.value)
            if cfg is None:
                raise CascadeError(f"no Level-1 learner config for factor {f.value}")
            l1[f] = cfg.with_(n_classes=get_spec(f).n_classes)
        object.__setattr__(self, "level1_configs", l1)
        object.__setattr__(self, "level2_config", self.level2_config.with_(n_classes=2))
        if self.augmentation not in AUGMENTATION_MODES:
            raise CascadeError(f"unknown augmentation mode {self.augmentation!r}")
        if self.imputation not in IMPUTATION_STRATEGIES:
            raise CascadeError(f"unknown imputation strategy {self.imputation!r}")
        if self.phase is not None and self.phase not in PHASES:
            raise CascadeError(f"phase must be one of {PHASES}")
        if not 0.0 <= self.threshold <= 1.0:
            raise CascadeError("threshold must lie in [0, 1]")
        if not 0.0 <= self.level2_holdout < 1.0:
            raise CascadeError("level2_holdout must lie in [0, 1)")

    @classmethod
    def default(cls, learner: str | None = None, factors: Sequence[Factor | str] = FACTOR_ORDER,
                base: LearnerConfig | None = None, **kwargs) -> "CascadeConfig":
        """Same learner settings at both levels (the "baseline" configuration)."""
        base = base or LearnerConfig()
        if learner is not None:
            base = base.with_(kind=learner)
        factors = tuple(Factor(f) for f in factors)
        return cls(
            latent_factors=factors,
            level1_configs={f: base for f in factors},
            level2_config=base,
            **kwargs,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "latent_factors": [f.value for f in self.latent_factors],
            "level1_configs": {f.value: c.to_dict() for f, c in self.level1_configs.items()},
            "level2_config": self.level2_config.to_dict(),
            "augmentation": self.augmentation,
            "imputation": self.imputation,
            "imputation_k": self.imputation_k,
            "imputation_per_feature": dict(sorted(self.imputation_per_feature.items())),
            "phase": self.phase,
            "threshold": self.threshold,
            "level2_holdout": self.level2_holdout,
            "tune": self.tune,
            "tune_folds": self.tune_folds,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CascadeConfig":
        d = dict(d)
        d["latent_factors"] = tuple(Factor(f) for f in d["latent_factors"])
        d["level1_configs"] = {Factor(k): LearnerConfig.from_dict(v)
                               for k, v in d["level1_configs"].items()}
        d["level2_config"] = LearnerConfig.from_dict(d["level2_config"])
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def latent_feature_names(factors: Sequence[Factor], augmentation: str) -> list[str]:
    names = []
    for f in factors:
        if augmentation != "probabilities_only":
            names.append(f"latent_{f.value}_label")
        if augmentation != "labels_only":
            names += [f"latent_{f.value}_p_{lab}" for lab in get_spec(f).class_labels]
    return names


@dataclass
class CascadeOutput:
    row_ids: np.ndarray
    latent_labels: dict[Factor, np.ndarray]
    latent_proba: dict[Factor, np.ndarray]
    p_op: np.ndarray
    predicted: np.ndarray
    threshold: float

    def to_rows(self) -> list[dict[str, Any]]:
        rows = []
        for i, rid in enumerate(self.row_ids):
            rec: dict[str, Any] = {"row_id": rid}
            for f, lab in self.latent_labels.items():
                spec = get_spec(f)
                rec[f"{f.value}_class"] = spec.class_labels[int(lab[i])]
                for k, name in enumerate(spec.class_labels):
                    rec[f"{f.value}_p_{name}"] = float(self.latent_proba[f][i, k])
            rec["p_op"] = float(self.p_op[i])
            rec["predicted_success"] = int(self.predicted[i])
            rows.append(rec)
        return rows


@dataclass
class TrainedCascade:
    config: CascadeConfig
    schema: FeatureSchema
    level1_models: dict[Factor, learners.Model]
    level2_model: learners.Model
    feature_layout: list[str]
    imputer: FittedImputer | None
    split_fingerprint: str
    level1_fit_ids: dict[Factor, list[str]]
    level2_fit_ids: list[str]
    validation_metrics: dict[str, Any] = field(default_factory=dict)
    run_metadata: dict[str, Any] = field(default_factory=dict)
    timestamps: dict[str, str] = field(default_factory=dict)

    @property
    def level1_fit_id_set(self) -> set[str]:
        return set().union(*[set(v) for v in self.level1_fit_ids.values()])


def _ids_digest(ids: Sequence[str]) -> str:
    h = hashlib.sha256()
    for rid in ids:
        h.update(str(rid).encode() + b"\x00")
    return h.hexdigest()


def _latent_block(models: dict[Factor, learners.Model], factors, X, augmentation, n_jobs=1):
    """Level-1 labels and probabilities for ``X`` plus the appended feature block."""
    labels, proba, cols = {}, {}, []
    for f in factors:
        p = learners.predict_proba(models[f], X, n_jobs=n_jobs)
        lab = np.argmax(p, axis=1)
        labels[f], proba[f] = lab, p
        if augmentation != "probabilities_only":
            cols.append(lab[:, None].astype(float))
        if augmentation != "labels_only":
            cols.append(p)
    block = np.hstack(cols) if cols else np.empty((len(X), 0))
    return labels, proba, block


def _stratified_holdout(y: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """Boolean mask selecting ``fraction`` of each class (largest-remainder rounding)."""
    rng = np.random.default_rng([seed, 2])
    mask = np.zeros(len(y), dtype=bool)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        take = int(largest_remainder(len(idx), [fraction, 1.0 - fraction])[0])
        mask[idx[:take]] = True
    return mask


def _tuned(base: LearnerConfig, X, y, categorical, names, folds, seed):
    space = [base.with_(**g) for g in DEFAULT_TUNE_GRID]
    best, scores = learners.tune(space, X, y, n_folds=folds, seed=seed,
                                 categorical=categorical, feature_names=names)
    return best, scores


def train_cascade(
    dataset: TabularDataset,
    schema: FeatureSchema | None,
    config: CascadeConfig,
    split_plan: SplitPlan,
    n_jobs: int = 1,
) -> tuple[TrainedCascade, dict[str, Any]]:
    """Fit Level-1 and Level-2 models under ``split_plan``.

    Returns the trained cascade and the Level-2 validation metrics, computed
    on a stratified hold-out of ``config.level2_holdout`` of the L1Valid rows
    (the final Level-2 model is refitted on all L1Valid rows afterwards).
    """
    started = datetime.now(timezone.utc).isoformat()
    schema = schema or dataset.schema
    if schema.fingerprint() != dataset.schema_fingerprint:
        raise CascadeError("dataset was not built with the given schema")
    violations = verify_no_leakage(split_plan, dataset)
    if violations:
        raise LeakageError("split plan failed leakage verification: "
                           + "; ".join(f"{v.kind}: {v.detail}" for v in violations))
    if config.phase is not None:
        other = set(dataset.phase.tolist()) - {config.phase}
        if other:
            raise CascadeError(f"config targets phase {config.phase} but data holds {sorted(other)}")
    missing_factors = [f.value for f in config.latent_factors if f not in dataset.targets]
    if missing_factors:
        raise CascadeError(f"dataset lacks target columns for {missing_factors}")

    train_rows = split_plan.rows("L1Train")
    valid_rows = split_plan.rows("L1Valid")

    imputer = None
    data = dataset
    if config.imputation != "none":
        imputer = fit_imputer(config.imputation, dataset.take(train_rows),
                              k=config.imputation_k if config.imputation == "knn" else None,
                              per_feature=config.imputation_per_feature)
        data = apply_imputer(imputer, dataset)
    X, categorical = data.feature_matrix()
    names = schema.feature_names
    meta: dict[str, Any] = {
        "configuration": "optimized" if config.tune else "baseline",
        "imputation_arm": "with_imputation" if imputer else "without_imputation",
        "augmentation": config.augmentation,
        "split_seed": split_plan.seed,
        "level2_validation": f"stratified hold-out of {config.level2_holdout:g} of L1Valid",
    }

    # ---- Level 1
    level1_configs = dict(config.level1_configs)
    fit_rows: dict[Factor, np.ndarray] = {}
    for f in config.latent_factors:
        t = data.targets[f]
        rows = train_rows[~np.isnan(t[train_rows])]
        classes = np.unique(t[rows])
        if len(classes) < 2:
            raise CascadeError(
                f"factor {f.value}: fewer than 2 classes observed in L1Train ({len(rows)} rows)"
            )
        fit_rows[f] = rows
    if config.tune:
        tuned = {}
        for f in config.latent_factors:
            rows = fit_rows[f]
            best, scores = _tuned(level1_configs[f], X[rows], data.targets[f][rows].astype(int),
                                  categorical, names, config.tune_folds, split_plan.seed)
            level1_configs[f] = best
            tuned[f.value] = {"selected": best.to_dict(), "fold_scores": scores}
        meta["tuning_level1"] = tuned

    def fit_level1(f):
        rows = fit_rows[f]
        return learners.train(level1_configs[f], X[rows], data.targets[f][rows].astype(int),
                              categorical=categorical, feature_names=names)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            fitted = list(pool.map(fit_level1, config.latent_factors))
    else:
        fitted = [fit_level1(f) for f in config.latent_factors]
    level1 = dict(zip(config.latent_factors, fitted))

    # ---- Level 1 out-of-sample predictions on L1Valid, Level 2 training
    _, _, block = _latent_block(level1, config.latent_factors, X[valid_rows], config.augmentation)
    aug_names = names + latent_feature_names(config.latent_factors, config.augmentation)
    Xv = np.hstack([X[valid_rows], block])
    yv_all = data.success[valid_rows]
    obs = ~np.isnan(yv_all)
    Xv, yv = Xv[obs], yv_all[obs].astype(int)
    l2_rows = valid_rows[obs]
    if len(np.unique(yv)) < 2:
        raise CascadeError("operational success label has a single class in L1Valid")
    level2_config = config.level2_config
    if config.tune:
        level2_config, scores = _tuned(level2_config, Xv, yv, categorical, aug_names,
                                       config.tune_folds, split_plan.seed)
        meta["tuning_level2"] = {"selected": level2_config.to_dict(), "fold_scores": scores}

    validation: dict[str, Any] = {}
    if config.level2_holdout > 0:
        hold = _stratified_holdout(yv, config.level2_holdout, split_plan.seed)
        if hold.any() and len(np.unique(yv[~hold])) == 2:
            m = learners.train(level2_config, Xv[~hold], yv[~hold], categorical=categorical,
                               feature_names=aug_names)
            p = learners.predict_proba(m, Xv[hold])[:, 1]
            pred = (p >= config.threshold).astype(int)
            validation = compute_report(pred, yv[hold], n_classes=2).to_dict()
            validation["threshold"] = config.threshold
            validation["holdout_ids_digest"] = _ids_digest(dataset.row_ids[l2_rows[hold]])
    level2 = learners.train(level2_config, Xv, yv, categorical=categorical, feature_names=aug_names)

    meta["level1_fit_ids_digest"] = {f.value: _ids_digest(dataset.row_ids[r]) for f, r in fit_rows.items()}
    meta["level2_fit_ids_digest"] = _ids_digest(dataset.row_ids[l2_rows])
    trained = TrainedCascade(
        config=config,
        schema=schema,
        level1_models=level1,
        level2_model=level2,
        feature_layout=aug_names,
        imputer=imputer,
        split_fingerprint=split_plan.fingerprint(),
        level1_fit_ids={f: dataset.row_ids[r].tolist() for f, r in fit_rows.items()},
        level2_fit_ids=dataset.row_ids[l2_rows].tolist(),
        validation_metrics=validation,
        run_metadata=meta,
        timestamps={"started": started, "finished": datetime.now(timezone.utc).isoformat()},
    )
    return trained, validation


def predict(trained: TrainedCascade, records: TabularDataset, n_jobs: int = 1,
            threshold: float | None = None) -> CascadeOutput:
    """Score records end to end.  Any latent targets or success labels present are ignored."""
    if records.schema_fingerprint != trained.schema.fingerprint():
        raise CascadeError("records do not conform to the schema the cascade was trained on")
    data = apply_imputer(trained.imputer, records) if trained.imputer else records
    X, _ = data.feature_matrix()
    factors = trained.config.latent_factors
    labels, proba, block = _latent_block(trained.level1_models, factors, X,
                                         trained.config.augmentation, n_jobs=n_jobs)
    p_op = learners.predict_proba(trained.level2_model, np.hstack([X, block]), n_jobs=n_jobs)[:, 1]
    thr = trained.config.threshold if threshold is None else threshold
    return CascadeOutput(
        row_ids=np.asarray(records.row_ids),
        latent_labels=labels,
        latent_proba=proba,
        p_op=p_op,
        predicted=(p_op >= thr).astype(int),
        threshold=thr,
    )


@dataclass
class CascadeEvaluation:
    output: CascadeOutput
    classification: ClassificationReport
    agreement: AgreementAnalysis
    sensitivity: dict[Factor, SensitivityEntry]
    n_rows: int
    n_unlabelled: int


def evaluate(trained: TrainedCascade, dataset: TabularDataset, rows: np.ndarray | None = None,
             threshold: float | None = None, n_jobs: int = 1) -> CascadeEvaluation:
    """Classification report plus agreement and distance analyses on ``rows``
    (all rows by default), using the dataset's observed latent targets as truth."""
    sub = dataset if rows is None else dataset.take(rows)
    out = predict(trained, sub, n_jobs=n_jobs, threshold=threshold)
    y = sub.success
    obs = ~np.isnan(y)
    if not obs.any():
        raise CascadeError("no rows with an observed success label to evaluate")
    report = compute_report(out.predicted[obs], y[obs].astype(int), n_classes=2)
    factors = trained.config.latent_factors
    truth = {f: sub.targets[f] for f in factors}
    agree = agreement_analysis(out.latent_labels, truth, out.predicted, y)
    correct = out.predicted[obs] == y[obs]
    sens = {f: distance_sensitivity(f, out.latent_labels[f][obs], truth[f][obs], correct)
            for f in factors}
    return CascadeEvaluation(out, report, agree, sens, sub.n_rows, int((~obs).sum()))


def train_flat(dataset: TabularDataset, config: LearnerConfig, split_plan: SplitPlan,
               imputation: str = "none", imputation_k: int = 5) -> learners.Model:
    """Single-level comparator: the success model on original features only,
    fitted on L1Train and L1Valid together."""
    rows = np.concatenate([split_plan.rows("L1Train"), split_plan.rows("L1Valid")])
    data = dataset
    if imputation != "none":
        imp = fit_imputer(imputation, dataset.take(rows),
                          k=imputation_k if imputation == "knn" else None)
        data = apply_imputer(imp, dataset)
    X, categorical = data.feature_matrix()
    y = data.success[rows]
    obs = ~np.isnan(y)
    return learners.train(config.with_(n_classes=2), X[rows][obs], y[obs].astype(int),
                          categorical=categorical, feature_names=dataset.schema.feature_names)


# ---------------------------------------------------------------- artifacts

def artifact_to_dict(trained: TrainedCascade) -> dict[str, Any]:
    return {
        "format_version": ARTIFACT_FORMAT_VERSION,
        "cascade_config": trained.config.to_dict(),
        "schema": trained.schema.to_dict(),
        "feature_layout": trained.feature_layout,
        "imputer": trained.imputer.to_dict() if trained.imputer else None,
        "level1": {f.value: learners.model_to_dict(m) for f, m in trained.level1_models.items()},
        "level2": learners.model_to_dict(trained.level2_model),
        "split_fingerprint": trained.split_fingerprint,
        "level1_fit_ids": {f.value: ids for f, ids in trained.level1_fit_ids.items()},
        "level2_fit_ids": trained.level2_fit_ids,
        "validation_metrics": trained.validation_metrics,
        "run_metadata": trained.run_metadata,
        "timestamps": trained.timestamps,
    }


def artifact_from_dict(doc: dict[str, Any]) -> TrainedCascade:
    found = doc.get("format_version")
    if found != ARTIFACT_FORMAT_VERSION:
        raise ArtifactError(
            f"artifact format_version mismatch: expected {ARTIFACT_FORMAT_VERSION}, found {found!r}"
        )
    try:
        config = CascadeConfig.from_dict(doc["cascade_config"])
        return TrainedCascade(
            config=config,
            schema=FeatureSchema.from_dict(doc["schema"]),
            level1_models={Factor(k): learners.model_from_dict(v) for k, v in doc["level1"].items()},
            level2_model=learners.model_from_dict(doc["level2"]),
            feature_layout=list(doc["feature_layout"]),
            imputer=FittedImputer.from_dict(doc["imputer"]) if doc["imputer"] else None,
            split_fingerprint=doc["split_fingerprint"],
            level1_fit_ids={Factor(k): list(v) for k, v in doc["level1_fit_ids"].items()},
            level2_fit_ids=list(doc["level2_fit_ids"]),
            validation_metrics=doc.get("validation_metrics", {}),
            run_metadata=doc.get("run_metadata", {}),
            timestamps=doc.get("timestamps", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"malformed cascade artifact: {exc!r}") from exc


def artifact_json(trained: TrainedCascade, include_timestamps: bool = True) -> str:
    doc = artifact_to_dict(trained)
    if not include_timestamps:
        doc.pop("timestamps")
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def save_artifact(trained: TrainedCascade, path: str | Path) -> None:
    Path(path).write_text(artifact_json(trained) + "\n")


def load_artifact(path: str | Path) -> TrainedCascade:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ArtifactError(f"cannot read artifact {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"artifact {path} is truncated or corrupt: {exc}") from exc
    if not isinstance(doc, dict):
        raise ArtifactError(f"artifact {path} is not a JSON object")
    return artifact_from_dict(doc)
