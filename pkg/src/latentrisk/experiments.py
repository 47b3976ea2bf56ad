"""Seeded studies on generated data, shared by the acceptance tests and scripts/.

Each study trains cascades on ``GeneratorConfig`` draws with the given seeds
and returns plain counts, so callers can pool or average as they see fit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import learners
from .cascade import THREE_FACTOR_SET, CascadeConfig, evaluate, train_cascade, train_flat
from .learners import LearnerConfig
from .splitting import make_split
from .synthgen import GeneratorConfig, bayes_optimal_accuracy, generate
from .targets import FACTOR_ORDER, Factor

# Small, fast boosting setup used throughout the studies.
STUDY_LEARNER = LearnerConfig(kind="gbdt", n_rounds=100, max_depth=3)


@dataclass
class BucketTally:
    n: int = 0
    correct: int = 0

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else float("nan")


@dataclass
class PatternCounts:
    """Agreement and distance buckets pooled over seeds."""

    agreement: dict[str, BucketTally] = field(default_factory=dict)
    sensitivity: dict[str, dict[str, BucketTally]] = field(default_factory=dict)
    per_seed_accuracy: list[float] = field(default_factory=list)

    def distance(self, factor: Factor | str, key) -> BucketTally:
        return self.sensitivity[Factor(factor).value].get(str(key), BucketTally())

    def distance_gap(self, factor: Factor | str, near=0, far=3) -> float:
        """Accuracy at distance ``near`` minus accuracy at distance ``far``, in points."""
        return 100.0 * (self.distance(factor, near).accuracy - self.distance(factor, far).accuracy)

    def agreement_gap(self) -> float:
        """Full-agreement accuracy minus zero-agreement accuracy, in points."""
        return 100.0 * (self.agreement["1"].accuracy - self.agreement["0"].accuracy)


def pattern_study(config: GeneratorConfig, seeds: Iterable[int],
                  learner: LearnerConfig = STUDY_LEARNER, n_jobs: int = 1) -> PatternCounts:
    """Train one cascade per seed and pool the InferenceTest bucket counts."""
    out = PatternCounts()
    for s in seeds:
        ds, _, _ = generate(GeneratorConfig.from_dict({**config.to_dict(), "seed": s}))
        plan = make_split(ds, seed=s)
        tc, _ = train_cascade(ds, ds.schema, CascadeConfig.default(base=learner), plan, n_jobs=n_jobs)
        ev = evaluate(tc, ds, plan.rows("InferenceTest"), n_jobs=n_jobs)
        out.per_seed_accuracy.append(ev.classification.accuracy)
        for b in ev.agreement.buckets:
            label = b.to_dict()["agreement"]
            t = out.agreement.setdefault(label, BucketTally())
            t.n += b.n
            t.correct += b.n_success_correct
        for f, entry in ev.sensitivity.items():
            per = out.sensitivity.setdefault(f.value, {})
            for b in entry.buckets:
                t = per.setdefault(b.key, BucketTally())
                t.n += b.n
                t.correct += b.n_success_correct
    return out


@dataclass
class FactorSetResult:
    seed: int
    recall0_full: float
    recall0_reduced: float
    accuracy_full: float
    accuracy_reduced: float
    bayes_accuracy: float


def factor_set_study(config: GeneratorConfig, seeds: Iterable[int],
                     learner: LearnerConfig = STUDY_LEARNER,
                     reduced: tuple[Factor, ...] = THREE_FACTOR_SET,
                     n_eval: int = 5000, n_jobs: int = 1) -> list[FactorSetResult]:
    """Compare the full four-factor cascade against ``reduced`` on the same split.

    Both are scored on a fresh draw of ``n_eval`` rows from the same population
    (sample seed offset by 10000), which is also where the Bayes accuracy is
    measured.
    """
    results = []
    for s in seeds:
        cfg = GeneratorConfig.from_dict({**config.to_dict(), "seed": s})
        ds, _, _ = generate(cfg)
        plan = make_split(ds, seed=s)
        fresh_cfg = GeneratorConfig.from_dict({**cfg.to_dict(), "n_rows": n_eval})
        fresh, _, truth = generate(fresh_cfg, sample_seed=10_000 + s)
        reports = []
        for factors in (FACTOR_ORDER, reduced):
            cc = CascadeConfig.default(base=learner, factors=factors)
            tc, _ = train_cascade(ds, ds.schema, cc, plan, n_jobs=n_jobs)
            reports.append(evaluate(tc, fresh, n_jobs=n_jobs).classification)
        results.append(FactorSetResult(
            seed=s,
            recall0_full=reports[0].recall[0],
            recall0_reduced=reports[1].recall[0],
            accuracy_full=reports[0].accuracy,
            accuracy_reduced=reports[1].accuracy,
            bayes_accuracy=bayes_optimal_accuracy(truth, fresh.success),
        ))
    return results


@dataclass
class FlatComparison:
    seed: int
    cascade_accuracy: float
    flat_accuracy: float


def flat_study(config: GeneratorConfig, seeds: Iterable[int],
               learner: LearnerConfig = STUDY_LEARNER) -> list[FlatComparison]:
    """Cascade vs a single success model on raw features fitted on L1Train and L1Valid."""
    results = []
    for s in seeds:
        ds, _, _ = generate(GeneratorConfig.from_dict({**config.to_dict(), "seed": s}))
        plan = make_split(ds, seed=s)
        test = plan.rows("InferenceTest")
        tc, _ = train_cascade(ds, ds.schema, CascadeConfig.default(base=learner), plan)
        casc = evaluate(tc, ds, test).classification.accuracy
        flat = train_flat(ds, learner, plan)
        X, _ = ds.feature_matrix()
        pred = (learners.predict_proba(flat, X[test])[:, 1] >= 0.5).astype(float)
        results.append(FlatComparison(s, casc, float(np.mean(pred == ds.success[test]))))
    return results


def mean_of(rows: list, attr: str | Callable) -> float:
    get = attr if callable(attr) else (lambda r: getattr(r, attr))
    return float(np.mean([get(r) for r in rows]))
