from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Any


class LearnerError(ValueError):
    pass


@dataclass(frozen=True)
class LearnerConfig:
    """Hyperparameters shared by both learner families.

    The defaults are the "baseline" configuration.  ``max_depth`` is ignored
    by the EBM family, which always fits one-split stumps per feature.
    ``subsample`` < 1 draws a seeded row subset per boosting round.
    """

    kind: str = "gbdt"
    n_rounds: int = 200
    learning_rate: float = 0.1
    max_depth: int = 5
    n_bins: int = 64
    l2_lambda: float = 1.0
    gain_gamma: float = 0.0
    min_child_weight: float = 1.0
    n_classes: int = 2
    seed: int = 0
    missing_mode: str = "native"
    subsample: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gbdt", "ebm"):
            raise LearnerError(f"unknown learner kind {self.kind!r}")
        if self.n_rounds < 0:
            raise LearnerError("n_rounds must be non-negative")
        if not 0.0 < self.learning_rate <= 1.0:
            raise LearnerError("learning_rate must lie in (0, 1]")
        if self.max_depth < 1:
            raise LearnerError("max_depth must be positive")
        if self.n_bins < 2:
            raise LearnerError("n_bins must be at least 2")
        if self.l2_lambda < 0 or self.gain_gamma < 0 or self.min_child_weight < 0:
            raise LearnerError("l2_lambda, gain_gamma and min_child_weight must be >= 0")
        if self.n_classes < 2:
            raise LearnerError("n_classes must be at least 2")
        if self.missing_mode not in ("native", "reject"):
            raise LearnerError(f"unknown missing_mode {self.missing_mode!r}")
        if not 0.0 < self.subsample <= 1.0:
            raise LearnerError("subsample must lie in (0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "LearnerConfig":
        return cls(**d)

    def with_(self, **changes) -> "LearnerConfig":
        return replace(self, **changes)
