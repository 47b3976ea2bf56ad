"""Acceptance checks AC1..AC11.

Each test prints one PASS/FAIL line (shown even under output capture) and then
asserts the same condition, wall-clock limit included.
"""
from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.special import expit

from latentrisk.cascade import CascadeConfig, evaluate, train_cascade
from latentrisk.cli import EXIT_OK, main
from latentrisk.evaluation import compute_report
from latentrisk.experiments import factor_set_study, mean_of, pattern_study
from latentrisk.learners import (
    LearnerConfig,
    grad_hess,
    log_loss,
    logistic_loss,
    predict_raw,
    train,
)
from latentrisk.missingness import diagnose
from latentrisk.splitting import PARTITIONS, make_split, verify_no_leakage
from latentrisk.synthgen import GeneratorConfig, MarSpec, generate
from latentrisk.targets import Factor, encode_dropout, encode_recruitment

from oracles import report_matches_oracle

STUDY_SEEDS = range(10)


@pytest.fixture
def verdict(capsys):
    def emit(tag: str, title: str, ok: bool, detail: str, started: float, limit: float) -> None:
        elapsed = time.perf_counter() - started
        ok = ok and elapsed < limit
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {tag} {title}: {detail} "
                  f"[{elapsed:.1f}s / limit {limit:.0f}s]")
        assert ok, f"{tag} {title}: {detail} ({elapsed:.1f}s, limit {limit}s)"
    return emit


# ---------------------------------------------------------------- AC1

def test_ac01_split_fidelity(verdict):
    ds, _, _ = generate(GeneratorConfig(n_rows=1000, n_numeric=2, n_categorical=1, n_boolean=1))
    t0 = time.perf_counter()
    bad = []
    for seed in range(50):
        plan = make_split(ds, seed=seed, fractions=(0.4, 0.5, 0.1))
        sizes = plan.sizes()
        if [sizes[p] for p in PARTITIONS] != [400, 500, 100]:
            bad.append((seed, sizes))
        allrows = np.concatenate([plan.rows(p) for p in PARTITIONS])
        if verify_no_leakage(plan, ds) or not np.array_equal(np.sort(allrows), np.arange(1000)):
            bad.append((seed, "not a partition"))
    verdict("AC1", "split fidelity", not bad, f"50 seeds, {len(bad)} failures", t0, 1.0)


# ---------------------------------------------------------------- AC2

def test_ac02_target_encodings(verdict):
    t0 = time.perf_counter()
    cases = [
        (encode_dropout(0, 100), "NoDropout"),
        (encode_dropout(5, 100), "Low"),
        (encode_dropout(40, 100), "Moderate"),
        (encode_dropout(41, 100), "High"),
        (encode_recruitment(95, 100), "OnTarget"),
        (encode_recruitment(60, 100), "SeverelyBelowTarget"),
    ]
    wrong = [c for c in cases if c[0] != c[1]]
    verdict("AC2", "target encodings", not wrong, f"{len(cases)} boundary cases, {len(wrong)} wrong",
            t0, 1.0)


# ---------------------------------------------------------------- AC3

def _toy(seed: int, n: int = 300):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    X[:, 3] = rng.integers(0, 3, n)
    y = (rng.random(n) < expit(1.5 * X[:, 0] - X[:, 1] + 0.8 * (X[:, 3] == 2))).astype(int)
    X[rng.random(X.shape) < 0.1] = np.nan
    return X, y, {3: 3}


def test_ac03_learner_numerics(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    eps, worst = 1e-4, 0.0
    for _ in range(20):
        z, y = rng.normal(scale=3.0), int(rng.integers(0, 2))
        g, h = grad_hess(np.array([[z]]), np.array([y]), 2)
        loss = lambda t: float(logistic_loss(t, y))
        fd_g = (loss(z + eps) - loss(z - eps)) / (2 * eps)
        fd_h = (loss(z + eps) - 2 * loss(z) + loss(z - eps)) / eps ** 2
        worst = max(worst, abs(g[0, 0] - fd_g), abs(h[0, 0] - fd_h))

    increases = 0
    for seed in range(10):
        X, y, cat = _toy(seed)
        m = train(LearnerConfig(n_rounds=30, max_depth=3, learning_rate=0.3), X, y, categorical=cat)
        losses = [log_loss(r, y, 2) for r in m.staged_raw_scores(X)]
        increases += sum(b > a + 1e-9 for a, b in zip(losses, losses[1:]))

    X, y, cat = _toy(99, n=400)
    ebm = train(LearnerConfig(kind="ebm", n_rounds=20), X, y, categorical=cat)
    Xq = X[:100]
    additive = ebm.intercept[None, :] + ebm.contributions(Xq).sum(axis=1)
    gap = float(np.max(np.abs(additive - predict_raw(ebm, Xq))))

    ok = worst <= 1e-6 and increases == 0 and gap <= 1e-12
    verdict("AC3", "learner numerics", ok,
            f"max finite-difference error {worst:.1e}; loss increases {increases}; "
            f"EBM additivity gap {gap:.1e}", t0, 30.0)


# ---------------------------------------------------------------- AC4

def test_ac04_metric_oracle(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    mismatches = 0
    for _ in range(100):
        k = int(rng.integers(2, 5))
        n = int(rng.integers(1, 300))
        pred, act = rng.integers(0, k, n), rng.integers(0, k, n)
        mismatches += not report_matches_oracle(compute_report(pred, act, n_classes=k), pred, act, k)
    verdict("AC4", "metric oracle", mismatches == 0, f"100 configurations, {mismatches} mismatches",
            t0, 5.0)


# ---------------------------------------------------------------- AC5

def test_ac05_leakage(verdict):
    t0 = time.perf_counter()
    learner = LearnerConfig(n_rounds=10, max_depth=3)
    violations = 0
    for seed in range(20):
        cfg = GeneratorConfig(n_rows=300, seed=seed, mcar_rate=0.05,
                              label_missing_rate={Factor.DROPOUT_RATE.value: 0.1})
        ds, schema, _ = generate(cfg)
        plan = make_split(ds, seed=seed)
        tc, _ = train_cascade(ds, schema, CascadeConfig.default(base=learner), plan)
        l1, l2 = tc.level1_fit_id_set, set(tc.level2_fit_ids)
        inference = set(ds.row_ids[plan.rows("InferenceTest")])
        violations += bool(l1 & l2) + bool(inference & l1) + bool(inference & l2)
    verdict("AC5", "leakage guarantee", violations == 0, f"20 runs, {violations} violations",
            t0, 300.0)


# ---------------------------------------------------------------- AC6 / AC7

@pytest.fixture(scope="module")
def patterns():
    t0 = time.perf_counter()
    counts = pattern_study(GeneratorConfig.strong_mediation(n_rows=5000), STUDY_SEEDS)
    return counts, t0


def test_ac06_agreement_pattern(verdict, patterns):
    counts, t0 = patterns
    full, none = counts.agreement["1"], counts.agreement["0"]
    gap = counts.agreement_gap()
    verdict("AC6", "agreement pattern", gap >= 10.0,
            f"full agreement {full.accuracy:.3f} (n={full.n}) vs none {none.accuracy:.3f} "
            f"(n={none.n}), gap {gap:.1f} points", t0, 300.0)


def test_ac07_distance_pattern(verdict, patterns):
    counts, t0 = patterns
    gaps = {f: counts.distance_gap(f) for f in (Factor.DROPOUT_RATE, Factor.RECRUITMENT_DEVIATION)}
    weak = counts.distance_gap(Factor.PROTOCOL_DEVIATION, 0, 1)
    ok = all(g >= 10.0 for g in gaps.values()) and abs(weak) <= 5.0
    verdict("AC7", "distance pattern", ok,
            f"dropout gap {gaps[Factor.DROPOUT_RATE]:.1f}, recruitment gap "
            f"{gaps[Factor.RECRUITMENT_DEVIATION]:.1f}, protocol deviation gap {weak:.1f} points",
            t0, 300.0)


# ---------------------------------------------------------------- AC8 / AC9

@pytest.fixture(scope="module")
def factor_sets():
    t0 = time.perf_counter()
    results = factor_set_study(GeneratorConfig.strong_mediation(n_rows=2000), STUDY_SEEDS)
    return results, t0


def test_ac08_factor_set_direction(verdict, factor_sets):
    results, t0 = factor_sets
    full, reduced = mean_of(results, "recall0_full"), mean_of(results, "recall0_reduced")
    wins = sum(r.recall0_full >= r.recall0_reduced for r in results)
    verdict("AC8", "four vs three factors", full >= reduced,
            f"failure-class recall {full:.4f} vs {reduced:.4f} (4 >= 3 on {wins}/10 seeds)",
            t0, 300.0)


def test_ac09_oracle_ceiling(verdict, factor_sets):
    results, t0 = factor_sets
    excess = max(max(r.accuracy_full, r.accuracy_reduced) - r.bayes_accuracy for r in results)
    verdict("AC9", "Bayes ceiling", excess <= 0.02,
            f"largest (cascade - Bayes) accuracy over 20 fits on 5000 fresh rows: {excess:+.3f}",
            t0, 300.0)


# ---------------------------------------------------------------- AC10

def _normalised_outputs(out: Path) -> dict[str, bytes]:
    files = {}
    for p in sorted(out.iterdir()):
        data = p.read_bytes()
        if p.name == "cascade.json":
            doc = json.loads(data)
            doc.pop("timestamps")
            data = json.dumps(doc, sort_keys=True).encode()
        files[p.name] = data
    return files


def test_ac10_determinism(verdict, tmp_path):
    t0 = time.perf_counter()
    cfg = {
        "seed": 7,
        "generator": {"n_rows": 1500, "seed": 7, "mcar_rate": 0.1},
        "cascade": {"learner": {"n_rounds": 60, "max_depth": 4}, "imputation": "knn"},
    }
    (tmp_path / "run.json").write_text(json.dumps(cfg))
    assert main(["synth", "--config", str(tmp_path / "run.json"), "--out", str(tmp_path / "d")]) == EXIT_OK
    base = ["train", "--config", str(tmp_path / "run.json"), "--data", str(tmp_path / "d" / "data.csv"),
            "--schema", str(tmp_path / "d" / "schema.json"), "--svg"]
    runs = []
    for jobs in (1, 4):
        out = tmp_path / f"jobs{jobs}"
        assert main([*base, "--jobs", str(jobs), "--out", str(out)]) == EXIT_OK
        runs.append(_normalised_outputs(out))
    differing = sorted(k for k in runs[0] if runs[0][k] != runs[1].get(k))
    ok = not differing and set(runs[0]) == set(runs[1])
    verdict("AC10", "end-to-end determinism", ok,
            f"{len(runs[0])} output files compared across 1 and 4 workers, differing: {differing or 'none'}",
            t0, 120.0)


# ---------------------------------------------------------------- AC11

def test_ac11_missingness(verdict):
    t0 = time.perf_counter()
    names = generate(GeneratorConfig(n_rows=10))[1].feature_names
    masked, driver = names[1], names[6]
    ds, _, _ = generate(GeneratorConfig(n_rows=2000, seed=5, mar_specs=(MarSpec(masked, driver, 2.0),)))
    fm = diagnose(ds).features[masked]
    top = [a.feature for a in fm.associations[:3]]
    mar_ok = fm.mechanism_flag == "mar_evidence" and driver in top

    ds, schema, _ = generate(GeneratorConfig(n_rows=2000, seed=6, mcar_rate=0.2))
    plan = make_split(ds, seed=6)
    test = plan.rows("InferenceTest")
    fit = np.concatenate([plan.rows("L1Train"), plan.rows("L1Valid")])
    majority = float(np.round(ds.success[fit].mean()))
    baseline = float(np.mean(ds.success[test] == majority))
    learner = LearnerConfig(n_rounds=100, max_depth=3)
    arms = {}
    for arm, cfg in (("native", CascadeConfig.default(base=learner.with_(missing_mode="native"))),
                     ("knn", CascadeConfig.default(base=learner, imputation="knn"))):
        tc, _ = train_cascade(ds, schema, cfg, plan)
        arms[arm] = evaluate(tc, ds, test).classification.accuracy
    ok = mar_ok and all(a > baseline for a in arms.values())
    verdict("AC11", "missingness handling", ok,
            f"MAR flag {fm.mechanism_flag} with driver in top-3 {driver in top}; "
            f"native {arms['native']:.3f}, knn {arms['knn']:.3f} vs majority {baseline:.3f}",
            t0, 180.0)
