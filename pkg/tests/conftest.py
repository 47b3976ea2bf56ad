from __future__ import annotations

import numpy as np
import pytest

from latentrisk.dataset import Feature, FeatureSchema, TabularDataset
from latentrisk.targets import Factor


@pytest.fixture
def small_schema() -> FeatureSchema:
    return FeatureSchema(
        features=(
            Feature("age", "numeric", "participants"),
            Feature("arm", "categorical", "design", ("A", "B", "C")),
            Feature("blinded", "boolean", "design"),
        ),
        latent_targets={
            "pd": Factor.PROTOCOL_DEVIATION,
            "sae": Factor.SAE_OCCURRENCE,
            "recruit": Factor.RECRUITMENT_DEVIATION,
            "dropout": Factor.DROPOUT_RATE,
        },
        success_column="success",
        phase_column="phase",
        id_column="trial_id",
    )


@pytest.fixture
def small_dataset(small_schema) -> TabularDataset:
    nan = np.nan
    return TabularDataset.from_arrays(
        small_schema,
        {"age": [1.0, nan, 3.0, 4.5], "arm": [0, 1, nan, 0], "blinded": [1, 0, 1, nan]},
        ["II", "III", "II", "I"],
        targets={
            Factor.PROTOCOL_DEVIATION: [1, 0, nan, 1],
            Factor.SAE_OCCURRENCE: [0, 0, 1, 1],
            Factor.RECRUITMENT_DEVIATION: [0, 1, 2, 3],
            Factor.DROPOUT_RATE: [3, nan, 1, 0],
        },
        success=[1, 0, nan, 1],
        row_ids=["t1", "t2", "t3", "t4"],
    )
