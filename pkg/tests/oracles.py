"""Independent reference implementations used only by the test-suite."""
from __future__ import annotations


def brute_force_report(pred: list[int], actual: list[int], n_classes: int) -> dict:
    """Pair-by-pair counting with plain Python integers."""
    out = {"precision": [], "recall": [], "f1": [], "support": []}
    for k in range(n_classes):
        tp = sum(1 for p, a in zip(pred, actual) if p == k and a == k)
        fp = sum(1 for p, a in zip(pred, actual) if p == k and a != k)
        fn = sum(1 for p, a in zip(pred, actual) if p != k and a == k)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        out["precision"].append(prec)
        out["recall"].append(rec)
        out["f1"].append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
        out["support"].append(tp + fn)
    out["accuracy"] = sum(1 for p, a in zip(pred, actual) if p == a) / len(actual)
    out["macro_f1"] = sum(out["f1"]) / n_classes
    return out


def report_matches_oracle(report, pred, actual, n_classes) -> bool:
    ref = brute_force_report(list(pred), list(actual), n_classes)
    for key in ("precision", "recall", "f1"):
        if [float(v) for v in getattr(report, key)] != ref[key]:
            return False
    return (report.support == ref["support"] and report.accuracy == ref["accuracy"]
            and abs(report.macro_f1 - ref["macro_f1"]) <= 1e-15)
