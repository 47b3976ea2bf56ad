"""Typed feature schema, columnar trial dataset, CSV ingestion and validation.

Storage convention: every feature column is a read-only float64 array where
NaN marks a Missing cell.  Numeric cells hold their value; categorical cells
hold the index of their level in the schema's level list; boolean cells hold
0.0 / 1.0.  Latent targets are stored the same way as class-index codes and
the success label as 0.0 / 1.0.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .targets import BINARY_LABELS, Factor, get_spec

SCHEMA_VERSION = 1
GROUPS = ("therapy", "disease", "design", "endpoints", "participants", "sponsor", "site")
KINDS = ("numeric", "categorical", "boolean")
PHASES = ("I", "II", "III")
MISSING_TOKENS = ("", "NA")
TRUE_TOKENS = ("True", "true", "1")
FALSE_TOKENS = ("False", "false", "0")


class Missing:
    """Singleton marker for a missing cell in decoded (row-wise) views."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "MISSING"

    def __bool__(self) -> bool:
        return False


MISSING = Missing()


class SchemaError(ValueError):
    pass


class DataValidationError(ValueError):
    """Raised when a file does not conform to its schema."""

    def __init__(self, message: str, violations: Sequence["Violation"] = ()):
        super().__init__(message)
        self.violations = list(violations)


class CsvParseError(DataValidationError):
    pass


@dataclass(frozen=True)
class Violation:
    column: str
    row: int | None
    reason: str

    def __str__(self) -> str:
        where = f"row {self.row}" if self.row is not None else "all rows"
        return f"{self.column} ({where}): {self.reason}"


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str
    group: str
    levels: tuple[str, ...] | None = None

    @property
    def n_levels(self) -> int:
        if self.kind == "categorical":
            return len(self.levels)
        if self.kind == "boolean":
            return 2
        return 0


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]
    latent_targets: dict[str, Factor]  # column name -> factor
    success_column: str
    phase_column: str
    id_column: str | None = None

    def __post_init__(self):
        names = [f.name for f in self.features]
        if any(not n for n in names):
            raise SchemaError("feature names must be non-empty")
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate feature names: {dupes}")
        for f in self.features:
            if f.kind not in KINDS:
                raise SchemaError(f"feature {f.name!r}: unknown kind {f.kind!r}")
            if f.group not in GROUPS:
                raise SchemaError(f"feature {f.name!r}: unknown group {f.group!r}")
            if f.kind == "categorical":
                if not f.levels or len(f.levels) < 2:
                    raise SchemaError(f"categorical feature {f.name!r} needs >= 2 levels")
                if len(set(f.levels)) != len(f.levels):
                    raise SchemaError(f"categorical feature {f.name!r} has repeated levels")
            elif f.levels is not None:
                raise SchemaError(f"feature {f.name!r} of kind {f.kind} cannot declare levels")
        reserved = [self.success_column, self.phase_column, *self.latent_targets]
        if self.id_column:
            reserved.append(self.id_column)
        clash = sorted(set(reserved) & set(names))
        if clash:
            raise SchemaError(f"columns listed both as features and as labels: {clash}")
        factors = list(self.latent_targets.values())
        if len(set(factors)) != len(factors):
            raise SchemaError("each latent factor may be mapped by only one column")

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.features]

    def feature(self, name: str) -> Feature:
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(name)

    @property
    def factor_columns(self) -> dict[Factor, str]:
        return {factor: col for col, factor in self.latent_targets.items()}

    def to_dict(self) -> dict[str, Any]:
        feats = []
        for f in self.features:
            d: dict[str, Any] = {"name": f.name, "kind": f.kind, "group": f.group}
            if f.levels is not None:
                d["levels"] = list(f.levels)
            feats.append(d)
        out = {
            "schema_version": SCHEMA_VERSION,
            "features": feats,
            "latent_targets": [
                {"column": col, "factor": factor.value}
                for col, factor in self.latent_targets.items()
            ],
            "success_column": self.success_column,
            "phase_column": self.phase_column,
        }
        if self.id_column:
            out["id_column"] = self.id_column
        return out

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "FeatureSchema":
        if "schema_version" not in doc:
            raise SchemaError("schema document lacks mandatory 'schema_version'")
        if doc["schema_version"] != SCHEMA_VERSION:
            raise SchemaError(
                f"unsupported schema_version {doc['schema_version']!r} "
                f"(expected {SCHEMA_VERSION})"
            )
        try:
            features = tuple(
                Feature(
                    name=f["name"],
                    kind=f["kind"],
                    group=f["group"],
                    levels=tuple(f["levels"]) if f.get("levels") is not None else None,
                )
                for f in doc["features"]
            )
            latent = {t["column"]: Factor(t["factor"]) for t in doc.get("latent_targets", [])}
            return cls(
                features=features,
                latent_targets=latent,
                success_column=doc["success_column"],
                phase_column=doc["phase_column"],
                id_column=doc.get("id_column"),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema document: {exc}") from exc
        except ValueError as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"malformed schema document: {exc}") from exc

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_schema(path: str | Path) -> FeatureSchema:
    with open(path, encoding="utf-8") as fh:
        return FeatureSchema.from_dict(json.load(fh))


def save_schema(schema: FeatureSchema, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2)
        fh.write("\n")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TabularDataset:
    schema: FeatureSchema
    columns: dict[str, np.ndarray]
    phase: np.ndarray
    targets: dict[Factor, np.ndarray]
    success: np.ndarray
    row_ids: np.ndarray
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def n_rows(self) -> int:
        return len(self.phase)

    @property
    def schema_fingerprint(self) -> str:
        return self.schema.fingerprint()

    @classmethod
    def from_arrays(
        cls,
        schema: FeatureSchema,
        columns: dict[str, Any],
        phase: Sequence[str],
        targets: dict[Factor, Any] | None = None,
        success: Any = None,
        row_ids: Sequence[str] | None = None,
    ) -> "TabularDataset":
        n = len(phase)
        cols = {}
        for f in schema.features:
            cols[f.name] = _readonly(np.asarray(columns[f.name], dtype=float).copy())
        tg = {}
        for factor in schema.latent_targets.values():
            raw = None if targets is None else targets.get(factor)
            arr = np.full(n, np.nan) if raw is None else np.asarray(raw, dtype=float).copy()
            tg[factor] = _readonly(arr)
        succ = np.full(n, np.nan) if success is None else np.asarray(success, dtype=float).copy()
        if row_ids is None:
            row_ids = [str(i) for i in range(n)]
        return cls(
            schema=schema,
            columns=cols,
            phase=_readonly(np.asarray(list(phase), dtype=object)),
            targets=tg,
            success=_readonly(succ),
            row_ids=_readonly(np.asarray(list(row_ids), dtype=object)),
        )

    def take(self, rows: Sequence[int] | np.ndarray) -> "TabularDataset":
        """Row subset in the given order."""
        idx = np.asarray(rows, dtype=int)
        return TabularDataset(
            schema=self.schema,
            columns={k: _readonly(v[idx]) for k, v in self.columns.items()},
            phase=_readonly(self.phase[idx]),
            targets={k: _readonly(v[idx]) for k, v in self.targets.items()},
            success=_readonly(self.success[idx]),
            row_ids=_readonly(self.row_ids[idx]),
        )

    def with_columns(self, columns: dict[str, np.ndarray]) -> "TabularDataset":
        merged = dict(self.columns)
        for k, v in columns.items():
            merged[k] = _readonly(np.asarray(v, dtype=float))
        return TabularDataset(
            schema=self.schema,
            columns=merged,
            phase=self.phase,
            targets=self.targets,
            success=self.success,
            row_ids=self.row_ids,
        )

    def feature_matrix(self) -> tuple[np.ndarray, dict[int, int]]:
        """(n_rows, n_features) float matrix plus {column index: n_levels} for level-coded features."""
        names = self.schema.feature_names
        X = np.empty((self.n_rows, len(names)))
        for j, name in enumerate(names):
            X[:, j] = self.columns[name]
        categorical = {
            j: f.n_levels for j, f in enumerate(self.schema.features) if f.kind != "numeric"
        }
        return X, categorical

    def missing_mask(self) -> np.ndarray:
        X, _ = self.feature_matrix()
        return np.isnan(X)

    def value(self, name: str, row: int):
        """Decoded cell: float, level string, bool, or MISSING."""
        f = self.schema.feature(name)
        v = self.columns[name][row]
        if math.isnan(v):
            return MISSING
        if f.kind == "numeric":
            return float(v)
        if f.kind == "boolean":
            return bool(v)
        return f.levels[int(v)]


def _parse_cell(feature: Feature, token: str, row: int) -> float:
    if token in MISSING_TOKENS:
        return math.nan
    if feature.kind == "numeric":
        try:
            v = float(token)
        except ValueError:
            v = math.nan
            ok = False
        else:
            ok = math.isfinite(v)
        if not ok:
            raise DataValidationError(
                f"column {feature.name!r}, row {row}: {token!r} is not a finite number",
                [Violation(feature.name, row, f"not a finite number: {token!r}")],
            )
        return v
    if feature.kind == "boolean":
        if token in TRUE_TOKENS:
            return 1.0
        if token in FALSE_TOKENS:
            return 0.0
        raise DataValidationError(
            f"column {feature.name!r}, row {row}: {token!r} is not a boolean",
            [Violation(feature.name, row, f"not a boolean: {token!r}")],
        )
    try:
        return float(feature.levels.index(token))
    except ValueError:
        raise DataValidationError(
            f"column {feature.name!r}, row {row}: unknown level {token!r}",
            [Violation(feature.name, row, f"unknown level: {token!r}")],
        ) from None


def _parse_target(column: str, factor: Factor, token: str, row: int) -> float:
    if token in MISSING_TOKENS:
        return math.nan
    spec = get_spec(factor)
    if spec.encoding == "binary":
        if token in TRUE_TOKENS:
            return 1.0
        if token in FALSE_TOKENS:
            return 0.0
    elif token in spec.class_labels:
        return float(spec.class_labels.index(token))
    raise DataValidationError(
        f"column {column!r}, row {row}: {token!r} is not a class of {factor.value}",
        [Violation(column, row, f"unknown class: {token!r}")],
    )


def load_csv(path: str | Path, schema: FeatureSchema, require_labels: bool = True) -> TabularDataset:
    """Parse a CSV export against ``schema``.

    Row numbers in error messages are 1-based data rows (the header is row 0).
    Columns not mentioned in the schema are ignored and reported in
    ``dataset.warnings``.  With ``require_labels=False`` the latent target and
    success columns may be absent entirely and are then read as missing.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: empty file, no header row") from None
        position = {name: i for i, name in enumerate(header)}
        if len(position) != len(header):
            raise CsvParseError(f"{path}: duplicate header names")
        labels = [*schema.latent_targets, schema.success_column]
        required = [*schema.feature_names, schema.phase_column]
        if schema.id_column:
            required.append(schema.id_column)
        if require_labels:
            required += labels
        absent = [c for c in required if c not in position]
        if absent:
            raise CsvParseError(f"{path}: header lacks schema columns {absent}")
        known = set(required) | set(labels)
        extra = [c for c in header if c not in known]
        notes = []
        if extra:
            msg = f"ignoring columns not in schema: {extra}"
            notes.append(msg)
            warnings.warn(msg, stacklevel=2)

        values = {f.name: [] for f in schema.features}
        tvals = {factor: [] for factor in schema.latent_targets.values()}
        phase, success, ids = [], [], []
        for row, record in enumerate(reader, start=1):
            if len(record) != len(header):
                raise CsvParseError(
                    f"{path}: row {row} has {len(record)} fields, expected {len(header)}"
                )
            for f in schema.features:
                values[f.name].append(_parse_cell(f, record[position[f.name]], row))
            for col, factor in schema.latent_targets.items():
                tok = record[position[col]] if col in position else ""
                tvals[factor].append(_parse_target(col, factor, tok, row))
            ph = record[position[schema.phase_column]]
            if ph not in PHASES:
                raise DataValidationError(
                    f"column {schema.phase_column!r}, row {row}: phase {ph!r} not in {PHASES}",
                    [Violation(schema.phase_column, row, f"invalid phase {ph!r}")],
                )
            phase.append(ph)
            tok = record[position[schema.success_column]] if schema.success_column in position else ""
            if tok in MISSING_TOKENS:
                success.append(math.nan)
            elif tok in ("0", "1"):
                success.append(float(tok))
            else:
                raise DataValidationError(
                    f"column {schema.success_column!r}, row {row}: {tok!r} is not 0/1",
                    [Violation(schema.success_column, row, f"not 0/1: {tok!r}")],
                )
            if schema.id_column:
                ids.append(record[position[schema.id_column]])
    ds = TabularDataset.from_arrays(
        schema,
        values,
        phase,
        targets=tvals,
        success=success,
        row_ids=ids if schema.id_column else None,
    )
    return TabularDataset(
        schema=ds.schema, columns=ds.columns, phase=ds.phase, targets=ds.targets,
        success=ds.success, row_ids=ds.row_ids, warnings=tuple(notes),
    )


def _format_cell(feature: Feature, v: float) -> str:
    if math.isnan(v):
        return "NA"
    if feature.kind == "numeric":
        return repr(float(v))
    if feature.kind == "boolean":
        return BINARY_LABELS[int(v)]
    return feature.levels[int(v)]


def save_csv(dataset: TabularDataset, path: str | Path) -> None:
    schema = dataset.schema
    header = []
    if schema.id_column:
        header.append(schema.id_column)
    header += [schema.phase_column, *schema.feature_names, *schema.latent_targets,
               schema.success_column]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(dataset.n_rows):
            rec = []
            if schema.id_column:
                rec.append(dataset.row_ids[i])
            rec.append(dataset.phase[i])
            for f in schema.features:
                rec.append(_format_cell(f, dataset.columns[f.name][i]))
            for factor in schema.latent_targets.values():
                v = dataset.targets[factor][i]
                rec.append("NA" if math.isnan(v) else get_spec(factor).class_labels[int(v)])
            s = dataset.success[i]
            rec.append("NA" if math.isnan(s) else str(int(s)))
            w.writerow(rec)


def _code_violations(name: str, arr: np.ndarray, n_codes: int) -> Iterable[Violation]:
    obs = ~np.isnan(arr)
    bad = obs & ((arr != np.round(arr)) | (arr < 0) | (arr >= n_codes))
    for row in np.flatnonzero(bad):
        yield Violation(name, int(row), f"code {arr[row]!r} outside 0..{n_codes - 1}")


def validate(dataset: TabularDataset, schema: FeatureSchema | None = None) -> list[Violation]:
    """All invariant breaches as data; an empty list means the dataset is valid."""
    schema = schema or dataset.schema
    out: list[Violation] = []
    n = dataset.n_rows
    if dataset.schema_fingerprint != schema.fingerprint():
        out.append(Violation("<schema>", None, "dataset was built for a different schema"))
    for f in schema.features:
        col = dataset.columns.get(f.name)
        if col is None:
            out.append(Violation(f.name, None, "column absent"))
            continue
        if len(col) != n:
            out.append(Violation(f.name, None, f"length {len(col)} != n_rows {n}"))
            continue
        if f.kind == "numeric":
            for row in np.flatnonzero(np.isinf(col)):
                out.append(Violation(f.name, int(row), "non-finite value"))
        else:
            out.extend(_code_violations(f.name, col, f.n_levels))
    for factor in schema.latent_targets.values():
        arr = dataset.targets.get(factor)
        if arr is None or len(arr) != n:
            out.append(Violation(factor.value, None, "target column absent or wrong length"))
            continue
        out.extend(_code_violations(factor.value, arr, get_spec(factor).n_classes))
    if len(dataset.success) != n:
        out.append(Violation(schema.success_column, None, "wrong length"))
    else:
        out.extend(_code_violations(schema.success_column, dataset.success, 2))
    for row, ph in enumerate(dataset.phase):
        if ph not in PHASES:
            out.append(Violation(schema.phase_column, row, f"invalid phase {ph!r}"))
    if len(dataset.row_ids) != n:
        out.append(Violation("<row_ids>", None, "wrong length"))
    elif len(set(dataset.row_ids.tolist())) != n:
        out.append(Violation("<row_ids>", None, "row ids are not unique"))
    return out


def filter_phase(dataset: TabularDataset, phase: str) -> TabularDataset:
    if phase not in PHASES:
        raise ValueError(f"phase must be one of {PHASES}, got {phase!r}")
    return dataset.take(np.flatnonzero(dataset.phase == phase))


def summarize(dataset: TabularDataset) -> dict[str, dict[str, Any]]:
    out = {}
    n = dataset.n_rows
    for f in dataset.schema.features:
        col = dataset.columns[f.name]
        obs = col[~np.isnan(col)]
        entry: dict[str, Any] = {
            "kind": f.kind,
            "missing_fraction": (n - len(obs)) / n if n else 0.0,
        }
        if f.kind == "numeric":
            if len(obs):
                entry["mean"] = float(obs.mean())
                entry["sd"] = float(obs.std(ddof=1)) if len(obs) > 1 else 0.0
        else:
            labels = f.levels if f.kind == "categorical" else BINARY_LABELS
            counts = np.bincount(obs.astype(int), minlength=len(labels))
            entry["level_counts"] = {lab: int(c) for lab, c in zip(labels, counts)}
        out[f.name] = entry
    return out
