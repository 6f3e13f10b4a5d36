import math

import numpy as np
import pytest

from core.errors import ParameterError
from core.geom import points_clear, segments_clear
from core.synthetic import RADIAL_JITTER, archipelago, convex_island, narrow_channel, two_islands


def test_archipelago_is_seeded():
    a, b = archipelago(seed=4), archipelago(seed=4)
    assert len(a.map.obstacles) == len(b.map.obstacles)
    for pa, pb in zip(a.map.obstacles, b.map.obstacles):
        assert np.array_equal(pa.array, pb.array)
    assert not np.array_equal(archipelago(seed=5).map.obstacles[-1].array, a.map.obstacles[-1].array)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_channel_between_start_and_goal_is_open(seed):
    scenario = archipelago(seed=seed, channel_width=150.0)
    ends = np.array([scenario.start[:2], scenario.goal[:2]])
    assert points_clear(ends, scenario.map).all()
    assert segments_clear(ends[:1], ends[1:], scenario.map).all()
    assert len(scenario.map.obstacles) >= 2


def test_convex_island_stays_within_jitter():
    rng = np.random.default_rng(0)
    island = convex_island((100.0, 200.0), 50.0, rng)
    d = np.hypot(island.array[:, 0] - 100.0, island.array[:, 1] - 200.0)
    assert np.all(d <= 50.0 * (1.0 + RADIAL_JITTER) + 1e-9)
    assert island.area > 0


def test_two_islands_and_narrow_channel():
    pair = two_islands(channel_width=300.0)
    assert len(pair.map.obstacles) == 2
    assert pair.name == "two-islands"

    channel = narrow_channel(channel_width=60.0)
    upper, lower = channel.map.obstacles
    gap = min(upper.array[:, 1]) - max(lower.array[:, 1])
    assert gap == pytest.approx(60.0)
    assert channel.start[1] == channel.goal[1]
    assert math.isclose(channel.start[1], (min(upper.array[:, 1]) + max(lower.array[:, 1])) / 2.0)


def test_bad_arguments():
    with pytest.raises(ParameterError):
        archipelago(n_islands=1)
    with pytest.raises(ParameterError):
        archipelago(channel_width=0.0)


if __name__ == "__main__":
    pytest.main([__file__])
