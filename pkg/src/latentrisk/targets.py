"""Encodings for the four latent operational risk targets.

Binary factors map True/False to 1/0.  Recruitment and dropout are continuous
quantities cut into four ordered classes; class index order is the order the
labels are listed in, which is also the order used for ordinal distances.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class Factor(str, Enum):
    PROTOCOL_DEVIATION = "ProtocolDeviation"
    SAE_OCCURRENCE = "SaeOccurrence"
    RECRUITMENT_DEVIATION = "RecruitmentDeviation"
    DROPOUT_RATE = "DropoutRate"


class TargetDomainError(ValueError):
    pass


@dataclass(frozen=True)
class LatentTargetSpec:
    factor: Factor
    encoding: str  # "binary" | "ordinal4"
    class_labels: tuple[str, ...]

    @property
    def n_classes(self) -> int:
        return len(self.class_labels)

    def index(self, label: str) -> int:
        try:
            return self.class_labels.index(label)
        except ValueError:
            raise TargetDomainError(
                f"{label!r} is not a class of {self.factor.value}"
            ) from None


BINARY_LABELS = ("False", "True")

SPECS: dict[Factor, LatentTargetSpec] = {
    Factor.PROTOCOL_DEVIATION: LatentTargetSpec(
        Factor.PROTOCOL_DEVIATION, "binary", BINARY_LABELS
    ),
    Factor.SAE_OCCURRENCE: LatentTargetSpec(
        Factor.SAE_OCCURRENCE, "binary", BINARY_LABELS
    ),
    Factor.RECRUITMENT_DEVIATION: LatentTargetSpec(
        Factor.RECRUITMENT_DEVIATION,
        "ordinal4",
        ("AboveTarget", "OnTarget", "BelowTarget", "SeverelyBelowTarget"),
    ),
    Factor.DROPOUT_RATE: LatentTargetSpec(
        Factor.DROPOUT_RATE, "ordinal4", ("NoDropout", "Low", "Moderate", "High")
    ),
}

# Canonical factor order used for layouts and reports.
FACTOR_ORDER = (
    Factor.RECRUITMENT_DEVIATION,
    Factor.PROTOCOL_DEVIATION,
    Factor.DROPOUT_RATE,
    Factor.SAE_OCCURRENCE,
)


def get_spec(factor: Factor | str) -> LatentTargetSpec:
    return SPECS[Factor(factor)]


@dataclass(frozen=True)
class OrdinalBins:
    """Interval partition of a continuous quantity into ordered classes.

    ``edges[i]`` separates class ``i`` from class ``i + 1``; ``closed_low[i]``
    says whether the edge value itself belongs to the lower class.
    """

    edges: tuple[float, ...]
    closed_low: tuple[bool, ...]

    def classify(self, value: float) -> int:
        for i, (edge, low) in enumerate(zip(self.edges, self.closed_low)):
            if value < edge or (low and value == edge):
                return i
        return len(self.edges)


# Recruitment deviation d = (enrolled - planned) / planned.  Higher class index
# means worse enrollment, so the bins run from high d to low d; they are
# expressed on -d so that edges are increasing.
#   AboveTarget:          d > 0.05
#   OnTarget:            -0.05 <= d <= 0.05
#   BelowTarget:         -0.30 <= d < -0.05
#   SeverelyBelowTarget:  d < -0.30
RECRUITMENT_ON_TARGET_TOL = 0.05
RECRUITMENT_SEVERE_CUTOFF = 0.30
RECRUITMENT_BINS = OrdinalBins(
    edges=(-RECRUITMENT_ON_TARGET_TOL, RECRUITMENT_ON_TARGET_TOL, RECRUITMENT_SEVERE_CUTOFF),
    closed_low=(False, True, True),
)

# Dropout rate r in percent:
#   NoDropout: r == 0;  Low: 0 < r < 10;  Moderate: 10 <= r <= 40;  High: r > 40
DROPOUT_LOW_CUTOFF = 10.0
DROPOUT_HIGH_CUTOFF = 40.0
DROPOUT_BINS = OrdinalBins(
    edges=(0.0, DROPOUT_LOW_CUTOFF, DROPOUT_HIGH_CUTOFF),
    closed_low=(True, False, True),
)


def recruitment_deviation(enrolled: int, planned: int) -> float:
    if planned <= 0:
        raise TargetDomainError(f"planned enrollment must be positive, got {planned}")
    if enrolled < 0:
        raise TargetDomainError(f"enrolled must be non-negative, got {enrolled}")
    return (enrolled - planned) / planned


def encode_recruitment(enrolled: int, planned: int) -> str:
    d = recruitment_deviation(enrolled, planned)
    labels = SPECS[Factor.RECRUITMENT_DEVIATION].class_labels
    return labels[RECRUITMENT_BINS.classify(-d)]


def dropout_rate(dropouts: int, enrolled: int) -> float:
    if enrolled <= 0:
        raise TargetDomainError(f"enrolled must be positive, got {enrolled}")
    if dropouts < 0 or dropouts > enrolled:
        raise TargetDomainError(
            f"dropouts must lie in [0, enrolled={enrolled}], got {dropouts}"
        )
    return 100.0 * dropouts / enrolled


def encode_dropout(dropouts: int, enrolled: int) -> str:
    r = dropout_rate(dropouts, enrolled)
    labels = SPECS[Factor.DROPOUT_RATE].class_labels
    return labels[DROPOUT_BINS.classify(r)]


def encode_binary(flag):
    """True -> 1, False -> 0; a missing flag (None or NaN) stays missing (None)."""
    if flag is None or (isinstance(flag, float) and math.isnan(flag)):
        return None
    return 1 if bool(flag) else 0


def ordinal_distance(predicted: str, actual: str, spec: LatentTargetSpec | Factor | str) -> int:
    """Absolute class-index difference between two labels of the same factor."""
    if not isinstance(spec, LatentTargetSpec):
        spec = get_spec(spec)
    return abs(spec.index(predicted) - spec.index(actual))


def ordinal_distance_codes(predicted: np.ndarray, actual: np.ndarray) -> np.ndarray:
    """Vectorised distance on class-index codes; NaN in ``actual`` gives NaN."""
    return np.abs(np.asarray(predicted, dtype=float) - np.asarray(actual, dtype=float))
