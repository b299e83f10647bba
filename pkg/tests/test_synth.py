import json
from collections import deque

import numpy as np
import pytest

from ckg_traffic.errors import TooSmall
from ckg_traffic.synth import (LAND_TYPES, POI_TYPES, SeriesConfig, WEATHER_VARS, generate_city,
                               generate_series, load_city, nearest_station, save_city)


def connected(adj):
    seen, q = {0}, deque([0])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                q.append(v)
    return len(seen) == len(adj)


def test_city_deterministic():
    a = json.dumps(generate_city(20, seed=1).to_json())
    b = json.dumps(generate_city(20, seed=1).to_json())
    assert a == b
    assert a != json.dumps(generate_city(20, seed=2).to_json())


def test_two_roads_adjacent():
    c = generate_city(2, seed=0)
    assert c.adjacency == [[1], [0]]


def test_too_small():
    with pytest.raises(TooSmall):
        generate_city(1, seed=0)


@pytest.mark.parametrize("seed", [7, 8, 9])
def test_fifty_roads_connected(seed):
    c = generate_city(50, seed=seed)
    assert c.n_roads == 50 and connected(c.adjacency)
    for i, nb in enumerate(c.adjacency):
        assert all(i in c.adjacency[j] for j in nb)


def test_city_invariants():
    c = generate_city(40, seed=4)
    assert np.all((c.free_flow >= 20) & (c.free_flow <= 90))
    assert len(POI_TYPES) == 17 and len(LAND_TYPES) == 28
    for var in WEATHER_VARS:
        assert any(var in v for v in c.station_vars)


def test_series_ranges_and_determinism():
    c = generate_city(15, seed=2)
    s1, s2 = generate_series(c, 2, seed=5), generate_series(c, 2, seed=5)
    np.testing.assert_array_equal(s1.speed, s2.speed)
    assert s1.speed.shape == (288, 15)
    assert s1.jam.min() >= 0 and s1.jam.max() <= 10
    assert np.all(s1.speed > 0) and np.all(s1.speed <= c.free_flow[None, :])


def test_zero_noise_off_peak_is_free_flow():
    c = generate_city(10, seed=1)
    cfg = SeriesConfig(obs_noise=0.0, ar_noise=0.0, rain_effect=0.0)
    s = generate_series(c, 2, seed=1, config=cfg)
    t3am = 3 * 6
    np.testing.assert_allclose(s.speed[t3am], c.free_flow, rtol=0.01)


def test_jam_at_full_congestion():
    assert float(np.clip(10.0 * 1.0, 0, 10)) == 10.0


def test_jam_speed_coupling():
    c = generate_city(50, seed=7)
    s = generate_series(c, 7, seed=7)
    deficit = c.free_flow[None, :] - s.speed
    for n in range(c.n_roads):
        assert np.corrcoef(s.jam[:, n], deficit[:, n])[0, 1] > 0.5


def test_calendar():
    c = generate_city(4, seed=0)
    s = generate_series(c, 8, seed=0)
    assert s.hour_of(0) == 24 and s.hour_of(6) == 1 and s.hour_of(143) == 23
    assert s.day_of(0) == s.start_day and s.day_of(144 * 7) == s.start_day


def test_nearest_station_tie_lower_id(tmp_path):
    c = generate_city(2, seed=0)
    mid = c.midpoints()[0]
    c.stations = np.array([mid + [10, 0], mid - [10, 0]])
    c.station_vars = [("rain",), ("rain",)]
    assert nearest_station(c, "rain")[0] == 0


def test_save_load_roundtrip(tmp_path):
    c = generate_city(8, seed=3)
    s = generate_series(c, 1, seed=3)
    save_city(tmp_path, c, s)
    c2, s2 = load_city(tmp_path)
    assert json.dumps(c2.to_json()) == json.dumps(c.to_json())
    np.testing.assert_array_equal(s2.speed, s.speed)
    header = (tmp_path / "speed.csv").read_text().splitlines()[0]
    assert header.split(",")[:2] == ["road0", "road1"]
