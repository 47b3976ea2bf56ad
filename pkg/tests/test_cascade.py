from __future__ import annotations

import dataclasses
import json

import numpy as np
import pytest

from latentrisk.cascade import (
    ARTIFACT_FORMAT_VERSION,
    THREE_FACTOR_SET,
    ArtifactError,
    CascadeConfig,
    CascadeError,
    LeakageError,
    artifact_json,
    evaluate,
    latent_feature_names,
    load_artifact,
    predict,
    save_artifact,
    train_cascade,
)
from latentrisk.dataset import filter_phase
from latentrisk.experiments import flat_study, mean_of
from latentrisk.learners import LearnerConfig
from latentrisk.splitting import make_split
from latentrisk.synthgen import GeneratorConfig, generate
from latentrisk.targets import FACTOR_ORDER, Factor

FAST = LearnerConfig(n_rounds=20, max_depth=3)


@pytest.fixture(scope="module")
def world():
    ds, schema, truth = generate(GeneratorConfig(n_rows=600, seed=3))
    plan = make_split(ds, seed=3)
    tc, metrics = train_cascade(ds, schema, CascadeConfig.default(base=FAST), plan)
    return ds, plan, tc, metrics


def test_fit_id_sets_are_disjoint_and_avoid_inference(world):
    ds, plan, tc, _ = world
    l1, l2 = tc.level1_fit_id_set, set(tc.level2_fit_ids)
    inference = set(ds.row_ids[plan.rows("InferenceTest")])
    assert l1 and l2
    assert not l1 & l2
    assert not inference & (l1 | l2)
    assert l1 <= set(ds.row_ids[plan.rows("L1Train")])
    assert l2 <= set(ds.row_ids[plan.rows("L1Valid")])


def test_level2_never_reads_latent_truth_outside_l1train(world):
    ds, plan, tc, _ = world
    # scramble latent labels on every non-L1Train row; nothing trained may change
    rng = np.random.default_rng(0)
    other = np.concatenate([plan.rows("L1Valid"), plan.rows("InferenceTest")])
    targets = {}
    for f, t in ds.targets.items():
        t = t.copy()
        t[other] = rng.permutation(t[other])
        targets[f] = t
    scrambled = dataclasses.replace(ds, targets=targets)
    tc2, _ = train_cascade(scrambled, ds.schema, CascadeConfig.default(base=FAST), plan)
    assert artifact_json(tc, include_timestamps=False) == artifact_json(tc2, include_timestamps=False)


def test_feature_layout_width_per_factor(world):
    ds, plan, tc4, _ = world
    tc3, _ = train_cascade(ds, ds.schema, CascadeConfig.default(base=FAST, factors=THREE_FACTOR_SET), plan)
    # SAE is binary: one label column plus two probability columns
    assert len(tc4.feature_layout) - len(tc3.feature_layout) == 3
    assert tc4.feature_layout[: len(ds.schema.feature_names)] == ds.schema.feature_names
    for mode, width in (("labels_only", 4), ("probabilities_only", 4 + 2 + 4 + 2),
                        ("labels_and_probabilities", 4 + 4 + 2 + 4 + 2)):
        assert len(latent_feature_names(list(FACTOR_ORDER), mode)) == width


def test_predict_outputs_are_consistent(world):
    ds, plan, tc, _ = world
    out = predict(tc, ds)
    assert np.all((out.p_op >= 0) & (out.p_op <= 1))
    assert np.array_equal(out.predicted, (out.p_op >= tc.config.threshold).astype(int))
    for f in FACTOR_ORDER:
        np.testing.assert_allclose(out.latent_proba[f].sum(axis=1), 1.0, atol=1e-9)


def test_single_record_replays_batch(world):
    ds, plan, tc, _ = world
    rows = plan.rows("L1Valid")[:5]
    batch = predict(tc, ds.take(rows))
    for k, r in enumerate(rows):
        one = predict(tc, ds.take([r]))
        assert one.p_op[0] == batch.p_op[k]
        for f in FACTOR_ORDER:
            assert np.array_equal(one.latent_proba[f][0], batch.latent_proba[f][k])


def test_all_missing_row_gets_valid_probability(world):
    ds, _, tc, _ = world
    blank = ds.take([0]).with_columns({n: np.array([np.nan]) for n in ds.schema.feature_names})
    p = predict(tc, blank).p_op[0]
    assert 0.0 <= p <= 1.0


def test_labels_in_records_are_ignored(world):
    ds, _, tc, _ = world
    sub = ds.take(np.arange(50))
    stripped = dataclasses.replace(sub, success=np.full(50, np.nan),
                                   targets={f: np.full(50, np.nan) for f in sub.targets})
    assert np.array_equal(predict(tc, sub).p_op, predict(tc, stripped).p_op)


def test_artifact_round_trip_is_exact(world, tmp_path):
    ds, _, tc, _ = world
    path = tmp_path / "cascade.json"
    save_artifact(tc, path)
    back = load_artifact(path)
    rows = ds.take(np.arange(200))
    assert np.array_equal(predict(tc, rows).p_op, predict(back, rows).p_op)
    assert artifact_json(back) == artifact_json(tc)


def test_truncated_artifact_rejected(world, tmp_path):
    _, _, tc, _ = world
    path = tmp_path / "cascade.json"
    save_artifact(tc, path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ArtifactError, match="truncated or corrupt"):
        load_artifact(path)


def test_version_bump_refused(world, tmp_path):
    _, _, tc, _ = world
    doc = json.loads(artifact_json(tc))
    doc["format_version"] = ARTIFACT_FORMAT_VERSION + 1
    path = tmp_path / "cascade.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ArtifactError, match=f"expected {ARTIFACT_FORMAT_VERSION}, found {ARTIFACT_FORMAT_VERSION + 1}"):
        load_artifact(path)


def test_schema_mismatch_rejected(world, small_dataset):
    _, _, tc, _ = world
    with pytest.raises(CascadeError, match="schema"):
        predict(tc, small_dataset)


def test_determinism_independent_of_jobs():
    ds, schema, _ = generate(GeneratorConfig(n_rows=400, seed=5, mcar_rate=0.1))
    plan = make_split(ds, seed=5)
    cfg = CascadeConfig.default(base=FAST, imputation="knn")
    a, _ = train_cascade(ds, schema, cfg, plan, n_jobs=1)
    b, _ = train_cascade(ds, schema, cfg, plan, n_jobs=4)
    assert artifact_json(a, include_timestamps=False) == artifact_json(b, include_timestamps=False)
    assert np.array_equal(predict(a, ds).p_op, predict(b, ds, n_jobs=3).p_op)


def test_missing_latent_labels_skipped_and_bucketed():
    rate = 0.3
    cfg = GeneratorConfig(n_rows=800, seed=2, label_missing_rate={Factor.DROPOUT_RATE.value: rate})
    ds, schema, _ = generate(cfg)
    plan = make_split(ds, seed=2)
    tc, _ = train_cascade(ds, schema, CascadeConfig.default(base=FAST), plan)
    train = plan.rows("L1Train")
    observed = train[~np.isnan(ds.targets[Factor.DROPOUT_RATE][train])]
    assert tc.level1_fit_ids[Factor.DROPOUT_RATE] == ds.row_ids[observed].tolist()
    assert len(tc.level1_fit_ids[Factor.SAE_OCCURRENCE]) == len(train)
    # NA bucket holds exactly the rows whose dropout label was removed
    test = plan.rows("InferenceTest")
    ev = evaluate(tc, ds, test)
    injected = int(np.isnan(ds.targets[Factor.DROPOUT_RATE][test]).sum())
    assert injected > 0
    assert ev.sensitivity[Factor.DROPOUT_RATE].bucket("NA").n == injected


def test_phase_mismatch_rejected(world):
    ds, plan, _, _ = world
    with pytest.raises(CascadeError, match="phase"):
        train_cascade(ds, ds.schema, CascadeConfig.default(base=FAST, phase="II"), plan)


def test_phase_specific_training():
    ds, schema, _ = generate(GeneratorConfig(n_rows=900, seed=4))
    two = filter_phase(ds, "II")
    plan = make_split(two, seed=4)
    tc, _ = train_cascade(two, schema, CascadeConfig.default(base=FAST, phase="II"), plan)
    assert tc.config.phase == "II"


def test_leaky_plan_blocked(world):
    ds, plan, _, _ = world
    parts = dict(plan.partitions)
    parts["InferenceTest"] = np.concatenate([parts["InferenceTest"], parts["L1Train"][:1]])
    leaky = dataclasses.replace(plan, partitions=parts)
    with pytest.raises(LeakageError):
        train_cascade(ds, ds.schema, CascadeConfig.default(base=FAST), leaky)


def test_single_class_factor_named():
    ds, schema, _ = generate(GeneratorConfig(n_rows=300, seed=1))
    plan = make_split(ds, seed=1)
    targets = dict(ds.targets)
    targets[Factor.SAE_OCCURRENCE] = np.zeros(ds.n_rows)
    flat = dataclasses.replace(ds, targets=targets)
    with pytest.raises(CascadeError, match=Factor.SAE_OCCURRENCE.value):
        train_cascade(flat, schema, CascadeConfig.default(base=FAST), plan)


def test_single_class_success_rejected():
    ds, schema, _ = generate(GeneratorConfig(n_rows=300, seed=1))
    plan = make_split(ds, seed=1)
    const = dataclasses.replace(ds, success=np.ones(ds.n_rows))
    with pytest.raises(CascadeError, match="single class"):
        train_cascade(const, schema, CascadeConfig.default(base=FAST), plan)


def test_config_round_trip_and_errors():
    cfg = CascadeConfig.default(learner="ebm", factors=THREE_FACTOR_SET, threshold=0.4)
    assert CascadeConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.level2_config.kind == "ebm"
    assert CascadeConfig.default(base=LearnerConfig(kind="ebm")).level2_config.kind == "ebm"
    with pytest.raises(CascadeError):
        CascadeConfig.default(factors=())
    with pytest.raises(CascadeError):
        CascadeConfig.default(augmentation="everything")
    with pytest.raises(CascadeError):
        CascadeConfig(latent_factors=(Factor.SAE_OCCURRENCE,))


def test_predicted_rate_tracks_base_rate():
    cfg = GeneratorConfig(n_rows=5000, seed=8)
    ds, schema, _ = generate(cfg)
    plan = make_split(ds, seed=8)
    tc, _ = train_cascade(ds, schema, CascadeConfig.default(base=LearnerConfig(n_rounds=100, max_depth=3)), plan)
    fresh, _, truth = generate(GeneratorConfig.from_dict({**cfg.to_dict(), "n_rows": 1000}), sample_seed=99)
    out = predict(tc, fresh)
    base_rate = truth.success_probability.mean()
    assert abs(out.p_op.mean() - base_rate) <= 0.05


@pytest.fixture(scope="module")
def dominance_runs():
    return flat_study(GeneratorConfig.learnable_latents(mediation=8.0), range(10))


def test_cascade_beats_flat_under_strong_mediation(dominance_runs):
    casc = mean_of(dominance_runs, "cascade_accuracy")
    flat = mean_of(dominance_runs, "flat_accuracy")
    assert casc > flat
