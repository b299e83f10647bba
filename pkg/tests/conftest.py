import numpy as np
import pytest

from ckg_traffic.synth import POI_TYPES, LAND_TYPES, City


def make_city(lines, adjacency, pois=(), parcels=(), stations=None, free_flow=None):
    """Hand-built city; ``pois`` are ((x, y), type name), ``parcels`` are (rect, type name)."""
    roads = [np.asarray(l, dtype=np.float64) for l in lines]
    n = len(roads)
    st = stations or [((0.0, 0.0), ("tprt", "rain", "wind"))]
    return City(
        roads=roads,
        length=np.array([np.hypot(*np.diff(r, axis=0).T).sum() for r in roads]),
        free_flow=np.asarray(free_flow if free_flow is not None else [50.0] * n, dtype=np.float64),
        adjacency=[list(a) for a in adjacency],
        poi_xy=np.array([p for p, _ in pois], dtype=np.float64).reshape(-1, 2),
        poi_type=np.array([POI_TYPES.index(t) for _, t in pois], dtype=np.int64),
        parcels=np.array([r for r, _ in parcels], dtype=np.float64).reshape(-1, 4),
        parcel_type=np.array([LAND_TYPES.index(t) for _, t in parcels], dtype=np.int64),
        stations=np.array([p for p, _ in st], dtype=np.float64).reshape(-1, 2),
        station_vars=[tuple(v) for _, v in st],
    )


@pytest.fixture(scope="session")
def small_city():
    from ckg_traffic.synth import generate_city, generate_series
    city = generate_city(12, seed=3)
    return city, generate_series(city, 2, seed=3)
