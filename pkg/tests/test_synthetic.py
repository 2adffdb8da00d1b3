import numpy as np
import pytest

from convex_cam.dynamics import EARTH_RADIUS
from convex_cam.synthetic import RELATIVE_SPEED_RANGE, synthetic_events


def test_dataset_is_deterministic() -> None:
    first, second = synthetic_events(20, seed=5), synthetic_events(20, seed=5)
    assert [event.event_id for event in first] == [f"syn-{i:03d}" for i in range(1, 21)]
    for a, b in zip(first, second):
        assert np.array_equal(a.primary.position, b.primary.position)
        assert np.array_equal(a.cov_secondary_rtn, b.cov_secondary_rtn)
    other = synthetic_events(20, seed=6)
    assert not np.array_equal(first[3].primary.position, other[3].primary.position)


def test_dataset_spans_the_encounter_ranges() -> None:
    events = synthetic_events(20)
    speeds = [event.relative_speed for event in events]
    assert min(speeds) == pytest.approx(RELATIVE_SPEED_RANGE[0], rel=1e-9)
    assert max(speeds) == pytest.approx(RELATIVE_SPEED_RANGE[1], rel=1e-9)
    assert events[0].miss_distance == pytest.approx(0.0, abs=1e-9)
    for event in events:
        altitude = np.linalg.norm(event.primary.position) - EARTH_RADIUS
        assert 500.0 <= altitude <= 900.0
        assert event.miss_distance <= 2.0 + 1e-9
        assert 0.010 <= event.radius <= 0.030
        assert abs(event.relative_position @ event.relative_velocity) < 1e-9 * max(1.0, event.miss_distance) * 15.0


def test_empty_dataset() -> None:
    assert synthetic_events(0) == []
