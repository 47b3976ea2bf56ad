from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from latentrisk.dataset import validate
from latentrisk.synthgen import (
    GeneratorConfig,
    GeneratorError,
    GroundTruth,
    MarSpec,
    bayes_optimal_accuracy,
    generate,
    load_ground_truth,
    save_ground_truth,
)
from latentrisk.targets import Factor

DETERMINISTIC = dict(noise_scale_latent=0.0, noise_scale_success=0.0, direct_effect_strength=0.0)


def test_zero_rows_rejected():
    with pytest.raises(GeneratorError):
        generate(GeneratorConfig(n_rows=0))


@pytest.mark.parametrize("bad", [dict(mcar_rate=1.5), dict(n_numeric=-1),
                                 dict(dropout_thresholds=(0.0, 0.0, 1.0)),
                                 dict(noise_scale_latent=-1.0)])
def test_config_invariants(bad):
    with pytest.raises(GeneratorError):
        GeneratorConfig(**bad)


def test_seed_determinism_bit_identical():
    cfg = GeneratorConfig(n_rows=400, mcar_rate=0.1, seed=11,
                          label_missing_rate={"DropoutRate": 0.2})
    (a, _, ta), (b, _, tb) = generate(cfg), generate(cfg)
    for name in a.columns:
        assert np.array_equal(a.columns[name], b.columns[name], equal_nan=True)
    assert json.dumps(ta.to_dict()) == json.dumps(tb.to_dict())


def test_sample_seed_keeps_structure():
    cfg = GeneratorConfig(n_rows=300, seed=2)
    _, _, t1 = generate(cfg)
    _, _, t2 = generate(cfg, sample_seed=99)
    assert np.array_equal(t1.latent_coefficients, t2.latent_coefficients)
    assert not np.array_equal(t1.latent_scores, t2.latent_scores)


def test_deterministic_limit():
    cfg = GeneratorConfig(n_rows=5000, mediation_strength_latent_to_success=50.0, **DETERMINISTIC)
    ds, _, truth = generate(cfg)
    assert bayes_optimal_accuracy(truth, ds.success) >= 0.99
    cfg = GeneratorConfig(n_rows=5000, mediation_strength_latent_to_success=1e12, **DETERMINISTIC)
    ds, _, truth = generate(cfg)
    assert bayes_optimal_accuracy(truth, ds.success) == 1.0


def test_pure_noise_is_a_coin_flip():
    cfg = GeneratorConfig(n_rows=10_000, effect_strength_feature_to_latent=0.0,
                          mediation_strength_latent_to_success=0.0, direct_effect_strength=0.0,
                          noise_scale_latent=0.0, success_intercept=0.0)
    with pytest.warns(UserWarning, match="degenerate"):
        ds, _, truth = generate(cfg)
    assert np.all(truth.success_probability == 0.5)
    assert abs(bayes_optimal_accuracy(truth, ds.success) - 0.5) <= 0.02


def test_mcar_rate_within_binomial_bound():
    ds, _, _ = generate(GeneratorConfig(n_rows=5000, mcar_rate=0.2, seed=5))
    for col in ds.columns.values():
        assert 0.17 <= np.isnan(col).mean() <= 0.23


def test_mar_mask_follows_driver():
    names = generate(GeneratorConfig(n_rows=5))[1].feature_names
    ds, _, _ = generate(GeneratorConfig(n_rows=4000, seed=1,
                                        mar_specs=(MarSpec(names[1], names[0], slope=3.0),)))
    miss = np.isnan(ds.columns[names[1]])
    driver = ds.columns[names[0]]
    assert driver[miss].mean() > driver[~miss].mean() + 0.5


def test_label_missingness_injected():
    ds, _, truth = generate(GeneratorConfig(n_rows=3000, seed=3,
                                            label_missing_rate={"DropoutRate": 0.25}))
    t = ds.targets[Factor.DROPOUT_RATE]
    assert 0.22 <= np.isnan(t).mean() <= 0.28
    j = truth.factors.index(Factor.DROPOUT_RATE)
    obs = ~np.isnan(t)
    assert np.array_equal(t[obs], truth.latent_classes[obs, j])


@pytest.mark.parametrize("seed", range(5))
def test_default_thresholds_cover_every_class(seed):
    ds, _, _ = generate(GeneratorConfig(n_rows=2000, seed=seed))
    for f in (Factor.RECRUITMENT_DEVIATION, Factor.DROPOUT_RATE):
        counts = np.bincount(ds.targets[f].astype(int), minlength=4)
        assert counts.min() >= 20, (f, counts)


def test_structural_equation_oracle():
    """Recompute the success probability from the stored coefficients."""
    cfg = GeneratorConfig(n_rows=500, seed=8)
    ds, _, truth = generate(cfg)
    X, _ = ds.feature_matrix()
    z = np.empty_like(X)
    for j, f in enumerate(ds.schema.features):
        if f.kind == "numeric":
            z[:, j] = X[:, j]
        elif f.kind == "boolean":
            z[:, j] = 2 * X[:, j] - 1
        else:
            z[:, j] = np.asarray(truth.level_effects[f.name])[X[:, j].astype(int)]
    eta = cfg.success_intercept + truth.latent_scores @ truth.mediator_weights + z @ truth.direct_coefficients
    assert np.allclose(expit(eta), truth.success_probability, rtol=0, atol=1e-12)
    binary = truth.latent_classes[:, truth.factors.index(Factor.SAE_OCCURRENCE)]
    assert np.array_equal(binary, truth.latent_scores[:, truth.factors.index(Factor.SAE_OCCURRENCE)] > 0)


def test_ground_truth_roundtrip(tmp_path):
    _, _, truth = generate(GeneratorConfig(n_rows=50, seed=1))
    save_ground_truth(truth, tmp_path / "gt.json")
    back = load_ground_truth(tmp_path / "gt.json")
    assert json.dumps(back.to_dict()) == json.dumps(truth.to_dict())


def test_config_roundtrip():
    cfg = GeneratorConfig(mar_specs=(MarSpec("a", "b"),), label_missing_rate={"SaeOccurrence": 0.1})
    assert GeneratorConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_default_has_thirty_features_over_seven_groups():
    ds, schema, _ = generate(GeneratorConfig(n_rows=10))
    assert len(schema.features) == 30
    assert {f.group for f in schema.features} == {"therapy", "disease", "design", "endpoints",
                                                  "participants", "sponsor", "site"}


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 60), st.floats(0, 1), st.floats(0, 3))
def test_generated_data_is_valid(seed, n, mcar, mediation):
    ds, schema, truth = generate(GeneratorConfig(n_rows=n, seed=seed, mcar_rate=mcar,
                                                 mediation_strength_latent_to_success=mediation))
    assert validate(ds, schema) == []
    assert truth.latent_scores.shape == (n, 4)
    assert np.all((truth.success_probability >= 0) & (truth.success_probability <= 1))
