import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trafficlab.detector import PERFECT, DetectorModel, observe, observe_series


@given(st.integers(0, 10_000), st.integers(0, 2**64 - 1))
def test_perfect_detector_is_identity(n, seed):
    assert observe(PERFECT, n, seed) == n


def test_blind_detector_sees_nothing():
    assert observe(DetectorModel(0.0, 0.0), 50, 1) == 0


def test_mean_over_seeds():
    m = DetectorModel(0.95)
    values = [observe(m, 100, s) for s in range(10_000)]
    assert 94 <= np.mean(values) <= 96


def test_series_examples():
    assert observe_series(PERFECT, [3, 0, 7], 0) == [3, 0, 7]
    assert observe_series(DetectorModel(0.7), [], 0) == []
    assert 48 <= np.mean(observe_series(DetectorModel(0.5), [100] * 1000, 4)) <= 52


@settings(max_examples=60)
@given(st.lists(st.integers(0, 200), max_size=30), st.integers(0, 2**64 - 1),
       st.floats(0, 1))
def test_never_more_than_truth_without_false_positives(counts, seed, recall):
    seen = observe_series(DetectorModel(recall), counts, seed)
    assert all(0 <= s <= c for s, c in zip(seen, counts))


def test_deterministic_and_chunkable():
    m = DetectorModel(0.8, 0.3)
    counts = list(range(40))
    whole = observe_series(m, counts, 77)
    assert whole == observe_series(m, counts, 77)
    assert observe_series(m, counts[:15], 77) + observe_series(m, counts[15:], 77, offset=15) == whole


def test_indices_get_independent_draws():
    seen = observe_series(DetectorModel(0.5), [1000] * 50, 3)
    assert len(set(seen)) > 10


def test_false_positives_add_counts():
    seen = observe_series(DetectorModel(1.0, 2.0), [0] * 5000, 8)
    assert abs(np.mean(seen) - 2.0) < 0.1


@pytest.mark.parametrize("kw", [{"recall": 1.2}, {"recall": -0.1}, {"false_positive_rate": -1}])
def test_invalid_model(kw):
    with pytest.raises(ValueError):
        DetectorModel(**kw)


def test_negative_count_rejected():
    with pytest.raises(ValueError):
        observe(PERFECT, -1, 0)
    with pytest.raises(ValueError):
        observe_series(DetectorModel(0.9), [1, -2], 0)


def test_dict_round_trip():
    m = DetectorModel(0.9, 0.25)
    assert DetectorModel.from_dict(m.to_dict()) == m
    with pytest.raises(ValueError, match="unknown"):
        DetectorModel.from_dict({"precision": 1})
