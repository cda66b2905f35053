"""Camera-detection noise model.

True counts are thinned binomially (each vehicle is seen with probability
``recall``) and topped up with Poisson false positives. The defaults (recall
0.95, no false positives) are a calibration choice, not a measured operating
point.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .core import check_seed

DETECTOR_STREAM = 0xD7EC7


@dataclass(frozen=True)
class DetectorModel:
    recall: float = 0.95
    false_positive_rate: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.recall <= 1.0:
            raise ValueError(f"recall must lie in [0, 1], got {self.recall}")
        if not self.false_positive_rate >= 0.0:
            raise ValueError(f"false_positive_rate must be >= 0, got {self.false_positive_rate}")

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> DetectorModel:
        unknown = set(doc) - {"recall", "false_positive_rate"}
        if unknown:
            raise ValueError(f"detector: unknown keys {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


PERFECT = DetectorModel(recall=1.0, false_positive_rate=0.0)


def _draw(model: DetectorModel, n: int, rng: np.random.Generator) -> int:
    seen = int(rng.binomial(n, model.recall)) if n else 0
    if model.false_positive_rate > 0:
        seen += int(rng.poisson(model.false_positive_rate))
    return seen


def _stream(seed: int, index: int) -> np.random.Generator:
    key = np.array([check_seed(seed), DETECTOR_STREAM], dtype=np.uint64)
    counter = np.array([0, 0, index, 1], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def observe(model: DetectorModel, true_count: int, seed: int) -> int:
    """Observed count for one interval; deterministic in ``seed``."""
    if true_count < 0:
        raise ValueError(f"true_count must be >= 0, got {true_count}")
    return _draw(model, int(true_count), _stream(seed, 0))


def observe_series(
    model: DetectorModel, counts: Sequence[int], seed: int, offset: int = 0
) -> list[int]:
    """Element-wise :func:`observe` with an independent stream per index.

    ``offset`` shifts the stream index so a long series can be observed in
    chunks and still give the same values as one call over the whole series.
    """
    counts = [int(c) for c in counts]
    if any(c < 0 for c in counts):
        raise ValueError("counts must be non-negative")
    if model.recall == 1.0 and model.false_positive_rate == 0.0:
        return counts
    if model.recall == 0.0 and model.false_positive_rate == 0.0:
        return [0] * len(counts)
    if model.false_positive_rate == 0.0:
        # an empty interval cannot produce a detection; skip building its stream
        return [_draw(model, c, _stream(seed, offset + i)) if c else 0 for i, c in enumerate(counts)]
    return [_draw(model, c, _stream(seed, offset + i)) for i, c in enumerate(counts)]
