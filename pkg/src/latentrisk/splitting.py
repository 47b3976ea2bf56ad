"""Staged three-way partition: Level-1 train, Level-1 validation, inference test.

Rows are stratified by a label (operational success by default).  Within each
label group rows are shuffled with a seeded generator and handed out to the
partitions by quota.  Quotas are rounded so that every partition size is
within one row of ``fraction * n`` overall and within one row of
``fraction * n_group`` per group.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .dataset import TabularDataset
from .targets import Factor

PARTITIONS = ("L1Train", "L1Valid", "InferenceTest")
DEFAULT_FRACTIONS = (0.4, 0.5, 0.1)
SPLIT_FORMAT_VERSION = 1


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class SplitViolation:
    kind: str  # disjointness | coverage | size | identity | group
    detail: str


@dataclass(frozen=True)
class SplitPlan:
    seed: int
    fractions: tuple[float, float, float]
    partitions: dict[str, np.ndarray]  # partition name -> row positions
    stratify_column: str | None
    row_ids_digest: str
    n_rows: int
    group_column: str | None = None
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def rows(self, partition: str) -> np.ndarray:
        return self.partitions[partition]

    def sizes(self) -> dict[str, int]:
        return {p: len(self.partitions[p]) for p in PARTITIONS}

    @property
    def assignment(self) -> np.ndarray:
        out = np.full(self.n_rows, "", dtype=object)
        for p in PARTITIONS:
            if np.any(out[self.partitions[p]] != ""):
                raise SplitError("plan is not a partition; rows assigned twice")
            out[self.partitions[p]] = p
        if np.any(out == ""):
            raise SplitError("plan does not cover every row")
        return out

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": SPLIT_FORMAT_VERSION,
            "seed": self.seed,
            "fractions": list(self.fractions),
            "stratify_column": self.stratify_column,
            "group_column": self.group_column,
            "row_ids_digest": self.row_ids_digest,
            "assignment": self.assignment.tolist(),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "SplitPlan":
        if doc.get("format_version") != SPLIT_FORMAT_VERSION:
            raise SplitError(
                f"split plan format_version {doc.get('format_version')!r} "
                f"unsupported (expected {SPLIT_FORMAT_VERSION})"
            )
        assignment = np.asarray(doc["assignment"], dtype=object)
        parts = {p: np.flatnonzero(assignment == p) for p in PARTITIONS}
        return cls(
            seed=int(doc["seed"]),
            fractions=tuple(doc["fractions"]),
            partitions=parts,
            stratify_column=doc.get("stratify_column"),
            row_ids_digest=doc["row_ids_digest"],
            n_rows=len(assignment),
            group_column=doc.get("group_column"),
            warnings=tuple(doc.get("warnings", ())),
        )


def row_ids_digest(row_ids: Sequence[str]) -> str:
    h = hashlib.sha256()
    for rid in row_ids:
        h.update(str(rid).encode())
        h.update(b"\x00")
    return h.hexdigest()


def largest_remainder(total: int, fractions: Sequence[float]) -> np.ndarray:
    """Integer apportionment of ``total`` by ``fractions``; ties go to the earlier share."""
    quotas = np.asarray(fractions, dtype=float) * total
    base = np.floor(quotas).astype(int)
    short = total - int(base.sum())
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base


def _controlled_rounding(group_sizes: Sequence[int], fractions: Sequence[float]) -> np.ndarray:
    """Per-group partition counts whose row sums are the group sizes and whose
    column sums equal the global largest-remainder totals."""
    fr = np.asarray(fractions, dtype=float)
    sizes = np.asarray(group_sizes, dtype=int)
    alloc = np.array([largest_remainder(int(s), fr) for s in sizes]).reshape(len(sizes), len(fr))
    target = largest_remainder(int(sizes.sum()), fr)
    quota = sizes[:, None] * fr[None, :]
    while True:
        diff = alloc.sum(axis=0) - target
        if not np.any(diff):
            return alloc
        src = int(np.flatnonzero(diff > 0)[0])
        dst = int(np.flatnonzero(diff < 0)[0])
        # move the unit from the group that over-rounded src the most
        slack = (alloc[:, src] - quota[:, src]) + (quota[:, dst] - alloc[:, dst])
        slack[alloc[:, src] == 0] = -np.inf
        g = int(np.argmax(slack))
        alloc[g, src] -= 1
        alloc[g, dst] += 1


def _stratify_values(dataset: TabularDataset, label: str | None) -> tuple[np.ndarray, str | None]:
    if label is None:
        return np.zeros(dataset.n_rows), None
    if label in ("success", dataset.schema.success_column):
        return dataset.success, dataset.schema.success_column
    try:
        factor = Factor(label)
    except ValueError:
        factor = dataset.schema.latent_targets.get(label)
    if factor is not None and factor in dataset.targets:
        return dataset.targets[factor], label
    if label in dataset.columns:
        return dataset.columns[label], label
    raise SplitError(f"stratify label {label!r} not found in dataset")


def make_split(
    dataset: TabularDataset,
    stratify_label: str | None = "success",
    seed: int = 0,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    group_column: str | None = None,
) -> SplitPlan:
    """Seeded, stratified 3-way split.

    Assignment is positional: it depends on row order, not on row ids.  With
    ``group_column`` all rows sharing a value of that feature column land in
    the same partition; stratification is then not applied.
    """
    n = dataset.n_rows
    if n == 0:
        raise SplitError("cannot split an empty dataset")
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise SplitError(f"fractions must be three positive numbers summing to 1, got {fr}")
    rng = np.random.default_rng(seed)
    notes: list[str] = []
    parts: dict[str, list[int]] = {p: [] for p in PARTITIONS}

    if group_column is not None:
        _split_by_group(dataset, group_column, fr, rng, parts)
        strat_name = None
    else:
        values, strat_name = _stratify_values(dataset, stratify_label)
        missing = np.isnan(values)
        keys = np.unique(values[~missing])
        groups = [np.flatnonzero(values == k) for k in keys]
        if missing.any():
            groups.append(np.flatnonzero(missing))
        alloc = _controlled_rounding([len(g) for g in groups], fr)
        for g, counts in zip(groups, alloc):
            shuffled = g[rng.permutation(len(g))]
            start = 0
            for p, c in zip(PARTITIONS, counts):
                parts[p].extend(shuffled[start:start + c].tolist())
                start += c

    for p, f in zip(PARTITIONS, fr):
        if not parts[p]:
            msg = f"partition {p} is empty at n={n} with fraction {f}"
            notes.append(msg)
            warnings.warn(msg, stacklevel=2)
    return SplitPlan(
        seed=seed,
        fractions=fr,
        partitions={p: np.asarray(sorted(v), dtype=int) for p, v in parts.items()},
        stratify_column=strat_name,
        row_ids_digest=row_ids_digest(dataset.row_ids),
        n_rows=n,
        group_column=group_column,
        warnings=tuple(notes),
    )


def _split_by_group(dataset, column, fractions, rng, parts) -> None:
    vals = np.asarray(dataset.columns[column])
    keys = np.unique(vals[~np.isnan(vals)])
    members = [np.flatnonzero(vals == k) for k in keys]
    members += [np.array([i]) for i in np.flatnonzero(np.isnan(vals))]
    order = rng.permutation(len(members))
    targets = largest_remainder(dataset.n_rows, fractions)
    filled = np.zeros(3, dtype=int)
    for gi in order:
        # greedily fill the partition with the largest remaining deficit
        p = int(np.argmax(targets - filled))
        parts[PARTITIONS[p]].extend(members[gi].tolist())
        filled[p] += len(members[gi])


def verify_no_leakage(plan: SplitPlan, dataset: TabularDataset) -> list[SplitViolation]:
    out: list[SplitViolation] = []
    n = dataset.n_rows
    if plan.n_rows != n:
        out.append(SplitViolation("identity", f"plan covers {plan.n_rows} rows, dataset has {n}"))
    if plan.row_ids_digest != row_ids_digest(dataset.row_ids):
        out.append(SplitViolation("identity", "row ids differ from the dataset the plan was made for"))
    seen = np.zeros(n, dtype=int)
    for p in PARTITIONS:
        rows = np.asarray(plan.partitions.get(p, []), dtype=int)
        bad = (rows < 0) | (rows >= n)
        if bad.any():
            out.append(SplitViolation("coverage", f"{p} references rows outside 0..{n - 1}"))
            rows = rows[~bad]
        if len(np.unique(rows)) != len(rows):
            out.append(SplitViolation("disjointness", f"{p} lists a row more than once"))
        np.add.at(seen, np.unique(rows), 1)
    shared = np.flatnonzero(seen > 1)
    if len(shared):
        out.append(SplitViolation(
            "disjointness", f"{len(shared)} row(s) assigned to several partitions, e.g. {int(shared[0])}"
        ))
    uncovered = np.flatnonzero(seen == 0)
    if len(uncovered):
        out.append(SplitViolation(
            "coverage", f"{len(uncovered)} row(s) in no partition, e.g. {int(uncovered[0])}"
        ))
    if plan.group_column is None:
        for p, f in zip(PARTITIONS, plan.fractions):
            size = len(plan.partitions.get(p, []))
            if abs(size - round(f * n)) > 1:
                out.append(SplitViolation(
                    "size", f"{p} has {size} rows, expected {f} * {n} = {f * n:.1f}"
                ))
    elif plan.group_column in dataset.columns:
        vals = np.asarray(dataset.columns[plan.group_column])
        owners: dict[float, str] = {}
        for p in PARTITIONS:
            for v in np.unique(vals[plan.partitions.get(p, [])]):
                if math.isnan(v):
                    continue
                if owners.setdefault(float(v), p) != p:
                    out.append(SplitViolation("group", f"group {v} spans {owners[float(v)]} and {p}"))
    return out
