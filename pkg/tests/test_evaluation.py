from __future__ import annotations

import csv
import json
import xml.etree.ElementTree as ET
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latentrisk.evaluation import (
    AGREEMENT_CSV_HEADER,
    EvaluationError,
    agreement_analysis,
    build_report,
    compute_report,
    distance_sensitivity,
    emit_report,
    micro_f1,
)
from latentrisk.targets import Factor

from oracles import report_matches_oracle

F4 = (Factor.RECRUITMENT_DEVIATION, Factor.PROTOCOL_DEVIATION, Factor.DROPOUT_RATE,
      Factor.SAE_OCCURRENCE)


def test_perfect_and_constant_predictions():
    y = np.arange(50) % 2
    r = compute_report(y, y)
    assert r.accuracy == 1.0 and r.precision == [1.0, 1.0] and r.f1 == [1.0, 1.0]
    r = compute_report(np.ones(50, int), y)
    assert r.accuracy == 0.5 and r.recall[0] == 0.0


def test_degenerate_class_and_errors():
    r = compute_report([0, 0, 1], [0, 1, 1], n_classes=3)
    assert r.degenerate == [False, False, True] and r.f1[2] == 0.0
    with pytest.raises(EvaluationError):
        compute_report([0, 1], [0])


def test_random_pairs_match_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        k = int(rng.integers(2, 5))
        n = int(rng.integers(1, 200))
        pred, act = rng.integers(0, k, n), rng.integers(0, k, n)
        assert report_matches_oracle(compute_report(pred, act, n_classes=k), pred, act, k)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=60))
def test_accuracy_decomposition_and_micro_f1(pairs):
    pred, act = zip(*pairs)
    r = compute_report(pred, act, n_classes=4)
    total = len(pairs)
    from_recall = sum(Fraction(s) * Fraction(rc) for s, rc in zip(r.support, r.recall)) / total
    assert abs(float(from_recall) - r.accuracy) <= 1e-15
    assert micro_f1(pred, act, 4) == r.accuracy
    assert sum(sum(row) for row in r.confusion) == total


def build_bucket_rows(n: int, n_correct: int, agreement: Fraction):
    """Four factors, all observed; the first `numerator` predicted correctly."""
    k = agreement.numerator * (4 // agreement.denominator)
    truth = {f: np.zeros(n) for f in F4}
    pred = {f: np.where(i < k, 0, 1) * np.ones(n) for i, f in enumerate(F4)}
    sy = np.ones(n)
    sp = np.r_[np.ones(n_correct), np.zeros(n - n_correct)]
    return pred, truth, sp, sy


def test_agreement_buckets_from_reported_counts():
    a = agreement_analysis(*build_bucket_rows(109, 100, Fraction(1)))
    assert a.bucket(1).n == 109 and round(a.bucket(1).proportion_correct, 3) == 0.917
    b = agreement_analysis(*build_bucket_rows(45, 30, Fraction(0)))
    assert round(b.bucket(0).proportion_correct, 3) == 0.667


def test_agreement_uses_observed_denominators():
    nan = np.nan
    truth = {F4[0]: [0, nan, nan], F4[1]: [1, 1, nan], F4[2]: [2, 0, nan], F4[3]: [0, 1, nan]}
    pred = {F4[0]: [0, 3, 0], F4[1]: [1, 0, 0], F4[2]: [1, 0, 0], F4[3]: [1, 1, 0]}
    a = agreement_analysis(pred, truth, [1, 1, 1], [1, 0, 1])
    assert a.excluded_no_latent_truth == 1
    assert a.bucket(Fraction(1, 2)).n == 1 and a.bucket(Fraction(2, 3)).n == 1
    assert sum(b.n for b in a.buckets) + a.excluded_no_latent_truth == 3


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.integers(1, 80))
def test_agreement_bucket_accounting(seed, n):
    rng = np.random.default_rng(seed)
    truth = {f: np.where(rng.random(n) < 0.3, np.nan, rng.integers(0, 2, n)) for f in F4}
    pred = {f: rng.integers(0, 2, n).astype(float) for f in F4}
    sy = np.where(rng.random(n) < 0.1, np.nan, rng.integers(0, 2, n))
    a = agreement_analysis(pred, truth, rng.integers(0, 2, n), sy)
    assert sum(b.n for b in a.buckets) + a.excluded_no_latent_truth + a.excluded_no_success_truth == n
    for b in a.buckets:
        assert b.n == b.n_success_correct + b.n_success_incorrect
        assert abs(b.proportion_correct + b.proportion_incorrect - 1.0) <= 1e-12


def test_distance_sensitivity_examples():
    t = np.array([0, 1, 2, 3, np.nan, np.nan])
    e = distance_sensitivity(Factor.DROPOUT_RATE, np.nan_to_num(t), t, [1, 1, 0, 1, 0, 1])
    assert [b.key for b in e.buckets if b.n] == ["0", "NA"]
    assert e.bucket(0).n == 4 and e.bucket("NA").n == 2
    e = distance_sensitivity(Factor.DROPOUT_RATE, [0, 3, 1], [3, 0, 1], [0, 1, 1])
    assert e.bucket(3).n == 2 and e.bucket(3).accuracy == 0.5 and e.bucket(0).accuracy == 1.0
    assert sum(b.n for b in e.buckets) == 3
    assert [b.key for b in distance_sensitivity("SaeOccurrence", [0], [1], [1]).buckets] == ["0", "1", "NA"]


def sample_report():
    rng = np.random.default_rng(3)
    n = 60
    truth = {f: rng.integers(0, 2, n).astype(float) for f in F4}
    pred = {f: rng.integers(0, 2, n).astype(float) for f in F4}
    sy, sp = rng.integers(0, 2, n), rng.integers(0, 2, n)
    cls = compute_report(sp, sy)
    agree = agreement_analysis(pred, truth, sp, sy)
    sens = {f: distance_sensitivity(f, pred[f], truth[f], sp == sy) for f in F4}
    return build_report("run-1", "II", "abc", cls, agree, sens), agree


def test_emit_report_roundtrip_csv_and_svg(tmp_path):
    report, agree = sample_report()
    emit_report(report, tmp_path, ("json", "csv", "svg"))
    back = json.loads((tmp_path / "report.json").read_text())
    assert back == json.loads(json.dumps(report))
    assert back["classification"]["accuracy"] == report["classification"]["accuracy"]
    with open(tmp_path / "agreement.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == AGREEMENT_CSV_HEADER and len(rows) == len(agree.buckets) + 1
    root = ET.parse(tmp_path / "agreement.svg").getroot()
    bars = [g for g in root.iter("{http://www.w3.org/2000/svg}g") if g.get("class") == "bar"]
    assert len(bars) == 2 * len(agree.buckets)  # counts panel and normalised panel
    for f in F4:
        ET.parse(tmp_path / f"sensitivity_{f.value}.svg")


def test_emit_report_unwritable(tmp_path):
    report, _ = sample_report()
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(EvaluationError):
        emit_report(report, blocker / "sub")
