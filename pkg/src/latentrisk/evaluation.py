"""Classification metrics, latent-agreement analysis and ordinal-distance sensitivity."""
from __future__ import annotations

import csv
import json
import math
import xml.sax.saxutils as xml_escape
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .targets import Factor, get_spec


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    n_classes: int
    counts: np.ndarray  # counts[actual, predicted]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_matrix(predicted, actual, n_classes: int | None = None) -> ConfusionMatrix:
    p = np.asarray(predicted, dtype=np.int64)
    a = np.asarray(actual, dtype=np.int64)
    if len(p) != len(a):
        raise EvaluationError(f"length mismatch: {len(p)} predictions vs {len(a)} labels")
    if n_classes is None:
        n_classes = int(max(p.max(initial=0), a.max(initial=0))) + 1
        n_classes = max(n_classes, 2)
    counts = np.bincount(a * n_classes + p, minlength=n_classes * n_classes)
    return ConfusionMatrix(n_classes, counts.reshape(n_classes, n_classes))


@dataclass(frozen=True)
class ClassificationReport:
    accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    degenerate: list[bool]
    macro_f1: float
    weighted_f1: float
    positive_f1: float
    confusion: list[list[int]]
    n: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def compute_report(predicted, actual, n_classes: int | None = None,
                   positive_class: int = 1) -> ClassificationReport:
    """Per-class precision / recall / F1 from the confusion matrix.

    A metric whose denominator is zero is reported as 0.  A class with neither
    predictions nor actual rows is flagged ``degenerate``.
    """
    if len(predicted) != len(actual):
        raise EvaluationError(
            f"length mismatch: {len(predicted)} predictions vs {len(actual)} labels"
        )
    if len(actual) == 0:
        raise EvaluationError("cannot evaluate zero rows")
    if np.isnan(np.asarray(actual, dtype=float)).any():
        raise EvaluationError("actual labels must be observed")
    cm = confusion_matrix(predicted, actual, n_classes)
    c = cm.counts
    tp = np.diag(c).astype(float)
    pred_tot = c.sum(axis=0)
    act_tot = c.sum(axis=1)
    precision = [_ratio(tp[k], pred_tot[k]) for k in range(cm.n_classes)]
    recall = [_ratio(tp[k], act_tot[k]) for k in range(cm.n_classes)]
    f1 = [_ratio(2 * p * r, p + r) for p, r in zip(precision, recall)]
    support = [int(s) for s in act_tot]
    total = cm.total
    weighted = sum(f * s for f, s in zip(f1, support)) / total
    pos = f1[positive_class] if positive_class < cm.n_classes else 0.0
    return ClassificationReport(
        accuracy=float(tp.sum() / total),
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        degenerate=[bool(pred_tot[k] == 0 and act_tot[k] == 0) for k in range(cm.n_classes)],
        macro_f1=float(np.mean(f1)),
        weighted_f1=float(weighted),
        positive_f1=float(pos),
        confusion=c.tolist(),
        n=total,
    )


def micro_f1(predicted, actual, n_classes: int | None = None) -> float:
    c = confusion_matrix(predicted, actual, n_classes).counts
    tp = np.diag(c).sum()
    fp = c.sum() - tp  # every miss is one FP and one FN in single-label problems
    fn = fp
    return float(2 * tp / (2 * tp + fp + fn))


def _fraction_label(q: Fraction) -> str:
    return f"{q.numerator}/{q.denominator}" if q.denominator != 1 else str(q.numerator)


@dataclass
class AgreementBucket:
    agreement: Fraction
    n: int = 0
    n_success_correct: int = 0
    n_success_incorrect: int = 0

    @property
    def proportion_correct(self) -> float:
        return _ratio(self.n_success_correct, self.n)

    @property
    def proportion_incorrect(self) -> float:
        return _ratio(self.n_success_incorrect, self.n)

    def to_dict(self) -> dict[str, Any]:
        return {
            "agreement": _fraction_label(self.agreement),
            "agreement_value": float(self.agreement),
            "n": self.n,
            "n_success_correct": self.n_success_correct,
            "n_success_incorrect": self.n_success_incorrect,
            "proportion_correct": self.proportion_correct,
            "proportion_incorrect": self.proportion_incorrect,
        }


@dataclass
class AgreementAnalysis:
    buckets: list[AgreementBucket]
    excluded_no_latent_truth: int = 0
    excluded_no_success_truth: int = 0

    def bucket(self, agreement) -> AgreementBucket | None:
        q = Fraction(agreement)
        for b in self.buckets:
            if b.agreement == q:
                return b
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "buckets": [b.to_dict() for b in self.buckets],
            "excluded_no_latent_truth": self.excluded_no_latent_truth,
            "excluded_no_success_truth": self.excluded_no_success_truth,
        }


def agreement_analysis(
    latent_pred: Mapping[Factor, Sequence],
    latent_true: Mapping[Factor, Sequence],
    success_pred: Sequence,
    success_true: Sequence,
) -> AgreementAnalysis:
    """Group rows by the fraction of latent factors predicted correctly.

    The denominator counts only factors whose ground truth is observed for the
    row, so with one missing factor the possible levels are thirds.  Rows with
    no observed factor, or with no observed success label, are excluded and
    counted.
    """
    factors = list(latent_pred)
    if not factors:
        raise EvaluationError("agreement analysis needs at least one latent factor")
    sp = np.asarray(success_pred, dtype=float)
    st = np.asarray(success_true, dtype=float)
    n = len(sp)
    correct = np.zeros(n, dtype=int)
    observed = np.zeros(n, dtype=int)
    for f in factors:
        t = np.asarray(latent_true[f], dtype=float)
        p = np.asarray(latent_pred[f], dtype=float)
        if len(t) != n or len(p) != n:
            raise EvaluationError(f"factor {f}: rows not aligned with success labels")
        obs = ~np.isnan(t)
        observed += obs
        correct += obs & (p == t)
    buckets: dict[Fraction, AgreementBucket] = {}
    out = AgreementAnalysis([])
    for i in range(n):
        if observed[i] == 0:
            out.excluded_no_latent_truth += 1
            continue
        if math.isnan(st[i]):
            out.excluded_no_success_truth += 1
            continue
        q = Fraction(int(correct[i]), int(observed[i]))
        b = buckets.setdefault(q, AgreementBucket(q))
        b.n += 1
        if sp[i] == st[i]:
            b.n_success_correct += 1
        else:
            b.n_success_incorrect += 1
    out.buckets = [buckets[q] for q in sorted(buckets)]
    return out


@dataclass
class DistanceBucket:
    key: str  # "0", "1", ... or "NA"
    n: int = 0
    n_success_correct: int = 0

    @property
    def accuracy(self) -> float:
        return _ratio(self.n_success_correct, self.n)

    def to_dict(self) -> dict[str, Any]:
        return {
            "distance": self.key,
            "n": self.n,
            "n_success_correct": self.n_success_correct,
            "n_success_incorrect": self.n - self.n_success_correct,
            "accuracy": self.accuracy,
        }


@dataclass
class SensitivityEntry:
    factor: Factor
    buckets: list[DistanceBucket] = field(default_factory=list)

    def bucket(self, key) -> DistanceBucket | None:
        key = str(key)
        for b in self.buckets:
            if b.key == key:
                return b
        return None

    def to_dict(self) -> list[dict[str, Any]]:
        return [b.to_dict() for b in self.buckets]


def distance_sensitivity(factor: Factor | str, latent_pred, latent_true,
                         success_correct) -> SensitivityEntry:
    """Downstream success accuracy bucketed by the factor's ordinal distance.

    Every possible distance gets a bucket (possibly empty); rows whose factor
    ground truth is missing fall in the trailing "NA" bucket.
    """
    factor = Factor(factor)
    spec = get_spec(factor)
    p = np.asarray(latent_pred, dtype=float)
    t = np.asarray(latent_true, dtype=float)
    ok = np.asarray(success_correct, dtype=bool)
    if not (len(p) == len(t) == len(ok)):
        raise EvaluationError("rows not aligned")
    entry = SensitivityEntry(factor, [DistanceBucket(str(d)) for d in range(spec.n_classes)])
    na = DistanceBucket("NA")
    dist = np.abs(p - t)
    for i in range(len(t)):
        b = na if math.isnan(t[i]) else entry.buckets[int(dist[i])]
        b.n += 1
        b.n_success_correct += int(ok[i])
    entry.buckets.append(na)
    return entry


# ---------------------------------------------------------------- report output

AGREEMENT_CSV_HEADER = ["agreement", "agreement_value", "n", "n_success_correct",
                        "n_success_incorrect", "proportion_correct", "proportion_incorrect"]
SENSITIVITY_CSV_HEADER = ["factor", "distance", "n", "n_success_correct",
                          "n_success_incorrect", "accuracy"]
CLASSIFICATION_CSV_HEADER = ["class", "precision", "recall", "f1", "support", "degenerate"]


def _write_csv(path: Path, header: list[str], rows: list[list[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _stacked_bar_svg(title: str, labels: list[str], correct: list[int], incorrect: list[int]) -> str:
    """Two panels: stacked counts and column-normalised proportions."""
    w_bar, gap, h_panel, top = 40, 20, 200, 40
    width = 60 + len(labels) * (w_bar + gap)
    height = top + 2 * (h_panel + 50)
    max_n = max([c + i for c, i in zip(correct, incorrect)] + [1])
    esc = xml_escape.escape
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="10" y="20" font-size="14">{esc(title)}</text>',
    ]
    for panel, normalise in enumerate((False, True)):
        y0 = top + panel * (h_panel + 50) + h_panel
        parts.append(f'<g class="panel" data-panel="{"proportion" if normalise else "count"}">')
        for i, (lab, c, bad) in enumerate(zip(labels, correct, incorrect)):
            n = c + bad
            scale = (h_panel / n if n else 0.0) if normalise else h_panel / max_n
            x = 40 + i * (w_bar + gap)
            hc, hb = c * scale, bad * scale
            parts.append(f'<g class="bar" data-bucket="{esc(lab)}">')
            parts.append(f'<rect x="{x}" y="{y0 - hc:.2f}" width="{w_bar}" height="{hc:.2f}" fill="#3b75af"/>')
            parts.append(f'<rect x="{x}" y="{y0 - hc - hb:.2f}" width="{w_bar}" height="{hb:.2f}" fill="#c44e52"/>')
            parts.append(f'<text x="{x}" y="{y0 + 15}" font-size="10">{esc(lab)}</text>')
            if not normalise:
                parts.append(f'<text x="{x}" y="{y0 - h_panel - 5}" font-size="10">n={n}</text>')
            parts.append("</g>")
        parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def build_report(
    run_id: str,
    phase: str | None,
    config_digest: str,
    classification: ClassificationReport,
    agreement: AgreementAnalysis | None = None,
    sensitivity: Mapping[Factor, SensitivityEntry] | None = None,
    exclusions: Mapping[str, int] | None = None,
    extra: Mapping[str, Any] | None = None,
) -> dict[str, Any]:
    doc = {
        "run_id": run_id,
        "phase": phase,
        "config_digest": config_digest,
        "classification": classification.to_dict(),
        "agreement": agreement.to_dict()["buckets"] if agreement else [],
        "sensitivity": {f.value: e.to_dict() for f, e in (sensitivity or {}).items()},
        "exclusions": dict(exclusions or {}),
    }
    if agreement:
        doc["exclusions"].setdefault("no_latent_truth", agreement.excluded_no_latent_truth)
        doc["exclusions"].setdefault("no_success_truth", agreement.excluded_no_success_truth)
    if extra:
        doc.update(extra)
    return doc


def emit_report(report: dict[str, Any], out_dir: str | Path,
                formats: Sequence[str] = ("json", "csv")) -> list[Path]:
    """Write ``report.json`` plus CSV tables and (with "svg") stacked-bar charts."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise EvaluationError(f"cannot create output directory {out}: {exc}") from exc
    written = []
    try:
        p = out / "report.json"
        p.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        written.append(p)
        if "csv" in formats:
            cls = report["classification"]
            p = out / "classification.csv"
            _write_csv(p, CLASSIFICATION_CSV_HEADER, [
                [k, cls["precision"][k], cls["recall"][k], cls["f1"][k], cls["support"][k],
                 cls["degenerate"][k]] for k in range(len(cls["support"]))
            ])
            written.append(p)
            if report.get("agreement"):
                p = out / "agreement.csv"
                _write_csv(p, AGREEMENT_CSV_HEADER,
                           [[b[h] for h in AGREEMENT_CSV_HEADER] for b in report["agreement"]])
                written.append(p)
            if report.get("sensitivity"):
                p = out / "sensitivity.csv"
                rows = [[f] + [b[h] for h in SENSITIVITY_CSV_HEADER[1:]]
                        for f, bs in report["sensitivity"].items() for b in bs]
                _write_csv(p, SENSITIVITY_CSV_HEADER, rows)
                written.append(p)
        if "svg" in formats:
            if report.get("agreement"):
                bs = report["agreement"]
                p = out / "agreement.svg"
                p.write_text(_stacked_bar_svg(
                    "Operational success by latent agreement",
                    [b["agreement"] for b in bs],
                    [b["n_success_correct"] for b in bs],
                    [b["n_success_incorrect"] for b in bs],
                ))
                written.append(p)
            for f, bs in (report.get("sensitivity") or {}).items():
                p = out / f"sensitivity_{f}.svg"
                p.write_text(_stacked_bar_svg(
                    f"Operational success by {f} prediction distance",
                    [b["distance"] for b in bs],
                    [b["n_success_correct"] for b in bs],
                    [b["n_success_incorrect"] for b in bs],
                ))
                written.append(p)
    except OSError as exc:
        raise EvaluationError(f"cannot write report to {out}: {exc}") from exc
    return written
