"""Deterministic synthetic cities: road grid, POIs, land parcels, weather
stations, and coupled speed/jam/weather series in 10-minute slots."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import TooSmall
from .geometry import point_polyline_distance, polyline_length, polyline_midpoint

SLOT_MINUTES = 10
SLOTS_PER_DAY = 24 * 60 // SLOT_MINUTES

POI_TYPES = [
    "community", "education", "commercial", "residential", "healthcare", "food", "retail",
    "office", "transport", "recreation", "religious", "hotel", "finance", "government",
    "industrial", "sports", "tourism",
]
LAND_TYPES = [
    "residential", "commercial", "business1", "business2", "businessPark", "white", "hotel",
    "institution", "educational", "health", "civic", "placeOfWorship", "sports", "park",
    "openSpace", "beach", "waterbody", "road", "rapidTransit", "transportFacility", "port",
    "utility", "reserveSite", "specialUse", "agriculture", "cemetery", "residentialInstitution",
    "commercialResidential",
]
WEATHER_VARS = ("tprt", "rain", "wind")

# context that shapes each road's congestion profile
_RESIDENTIAL_LAND = {"residential", "residentialInstitution", "commercialResidential"}
_BUSINESS_LAND = {"commercial", "business1", "business2", "businessPark", "white"}
_BUSINESS_POI = {"commercial", "office", "retail", "food", "finance", "hotel"}

_STREAM = {"roads": 0, "pois": 1, "parcels": 2, "stations": 3, "speeds": 4, "series": 5}


def _rng(seed: int, component: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(_STREAM[component],)))


@dataclass
class City:
    roads: list[np.ndarray]
    length: np.ndarray
    free_flow: np.ndarray
    adjacency: list[list[int]]
    poi_xy: np.ndarray
    poi_type: np.ndarray
    parcels: np.ndarray
    parcel_type: np.ndarray
    stations: np.ndarray
    station_vars: list[tuple[str, ...]]
    poi_types: list[str] = field(default_factory=lambda: list(POI_TYPES))
    land_types: list[str] = field(default_factory=lambda: list(LAND_TYPES))
    seed: int = 0

    @property
    def n_roads(self) -> int:
        return len(self.roads)

    def midpoints(self) -> np.ndarray:
        return np.array([polyline_midpoint(r) for r in self.roads])

    def adjacency_matrix(self) -> np.ndarray:
        n = self.n_roads
        W = np.zeros((n, n))
        for i, nb in enumerate(self.adjacency):
            W[i, nb] = 1.0
        return W

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "roads": [{"id": i, "line": self.roads[i].tolist(), "length": float(self.length[i]),
                       "free_flow": float(self.free_flow[i]), "neighbors": list(self.adjacency[i])}
                      for i in range(self.n_roads)],
            "pois": [{"xy": self.poi_xy[i].tolist(), "type": int(self.poi_type[i])} for i in range(len(self.poi_type))],
            "parcels": [{"rect": self.parcels[i].tolist(), "type": int(self.parcel_type[i])}
                        for i in range(len(self.parcel_type))],
            "stations": [{"xy": self.stations[i].tolist(), "vars": list(self.station_vars[i])}
                         for i in range(len(self.station_vars))],
            "poi_types": self.poi_types,
            "land_types": self.land_types,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "City":
        roads = doc["roads"]
        return cls(
            roads=[np.array(r["line"], dtype=np.float64) for r in roads],
            length=np.array([r["length"] for r in roads]),
            free_flow=np.array([r["free_flow"] for r in roads]),
            adjacency=[list(r["neighbors"]) for r in roads],
            poi_xy=np.array([p["xy"] for p in doc["pois"]], dtype=np.float64).reshape(-1, 2),
            poi_type=np.array([p["type"] for p in doc["pois"]], dtype=np.int64),
            parcels=np.array([p["rect"] for p in doc["parcels"]], dtype=np.float64).reshape(-1, 4),
            parcel_type=np.array([p["type"] for p in doc["parcels"]], dtype=np.int64),
            stations=np.array([s["xy"] for s in doc["stations"]], dtype=np.float64).reshape(-1, 2),
            station_vars=[tuple(s["vars"]) for s in doc["stations"]],
            poi_types=list(doc["poi_types"]),
            land_types=list(doc["land_types"]),
            seed=int(doc["seed"]),
        )


def _grow_grid_edges(n_roads: int, rng: np.random.Generator) -> tuple[np.ndarray, list[tuple[int, int]]]:
    m = int(math.ceil(math.sqrt(n_roads))) + 3
    nodes = np.array([(i, j) for j in range(m) for i in range(m)])

    def nid(i, j):
        return j * m + i

    edges = []
    for j in range(m):
        for i in range(m):
            if i + 1 < m:
                edges.append((nid(i, j), nid(i + 1, j)))
            if j + 1 < m:
                edges.append((nid(i, j), nid(i, j + 1)))
    incident: dict[int, list[int]] = {}
    for k, (a, b) in enumerate(edges):
        incident.setdefault(a, []).append(k)
        incident.setdefault(b, []).append(k)
    c = m // 2
    start = edges.index((nid(c - 1, c), nid(c, c)))
    chosen, chosen_set = [start], {start}
    frontier = set(incident[edges[start][0]] + incident[edges[start][1]]) - chosen_set
    while len(chosen) < n_roads:
        cand = sorted(frontier)
        k = cand[int(rng.integers(len(cand)))]
        chosen.append(k)
        chosen_set.add(k)
        frontier.discard(k)
        for v in edges[k]:
            frontier.update(e for e in incident[v] if e not in chosen_set)
    return nodes, [edges[k] for k in chosen]


def generate_city(n_roads: int, seed: int, block: float = 150.0, poi_per_road: float = 6.0,
                  n_stations: int | None = None) -> City:
    """Grid road network grown from a seed edge, with clustered POIs and parcels.

    The road graph is connected by construction (each new road touches an
    existing one). Free-flow speed depends on whether a road lies on an
    arterial grid line.
    """
    if n_roads < 2:
        raise TooSmall("a city needs at least two roads")
    rng = _rng(seed, "roads")
    nodes, edges = _grow_grid_edges(n_roads, rng)
    node_jitter = rng.normal(0.0, 6.0, size=(len(nodes), 2))
    node_xy = nodes * block + node_jitter
    roads, ff = [], []
    node_roads: dict[int, list[int]] = {}
    for k, (a, b) in enumerate(edges):
        pa, pb = node_xy[a], node_xy[b]
        d = pb - pa
        perp = np.array([-d[1], d[0]]) / (np.hypot(*d) or 1.0)
        mid = (pa + pb) / 2.0 + perp * rng.uniform(-8.0, 8.0)
        roads.append(np.array([pa, mid, pb]))
        horizontal = nodes[a][1] == nodes[b][1]
        line_idx = nodes[a][1] if horizontal else nodes[a][0]
        arterial = line_idx % 3 == 0
        ff.append(rng.uniform(60.0, 90.0) if arterial else rng.uniform(20.0, 50.0))
        node_roads.setdefault(a, []).append(k)
        node_roads.setdefault(b, []).append(k)
    adjacency = [set() for _ in edges]
    for rs in node_roads.values():
        for i in rs:
            adjacency[i].update(j for j in rs if j != i)
    adjacency = [sorted(s) for s in adjacency]
    mids = np.array([polyline_midpoint(r) for r in roads])
    lo = np.min([r.min(axis=0) for r in roads], axis=0) - block
    hi = np.max([r.max(axis=0) for r in roads], axis=0) + block

    prng = _rng(seed, "pois")
    n_poi = int(round(poi_per_road * n_roads))
    weights = prng.dirichlet(np.full(len(POI_TYPES), 1.5))
    centers = [mids[prng.integers(len(mids), size=2)] for _ in POI_TYPES]
    poi_type = prng.choice(len(POI_TYPES), size=n_poi, p=weights)
    poi_xy = np.empty((n_poi, 2))
    for i, t in enumerate(poi_type):
        if prng.random() < 0.75:
            c = centers[t][prng.integers(2)]
            poi_xy[i] = c + prng.normal(0.0, 0.5 * block, size=2)
        else:
            poi_xy[i] = prng.uniform(lo, hi)

    lrng = _rng(seed, "parcels")
    n_zones = max(3, n_roads // 8)
    zone_xy = lrng.uniform(lo, hi, size=(n_zones, 2))
    zone_type = lrng.choice(len(LAND_TYPES), size=n_zones, p=_land_prior())
    parcels, ptype = [], []
    xs = np.arange(lo[0], hi[0], block)
    ys = np.arange(lo[1], hi[1], block)
    for x0 in xs:
        for y0 in ys:
            x1, y1 = min(x0 + block, hi[0]), min(y0 + block, hi[1])
            sx = lrng.integers(1, 3)
            sy = lrng.integers(1, 3)
            bx = np.linspace(x0, x1, sx + 1)
            by = np.linspace(y0, y1, sy + 1)
            for i in range(sx):
                for j in range(sy):
                    rect = [bx[i], by[j], bx[i + 1], by[j + 1]]
                    c = np.array([(rect[0] + rect[2]) / 2, (rect[1] + rect[3]) / 2])
                    z = int(np.argmin(np.hypot(*(zone_xy - c).T)))
                    t = zone_type[z] if lrng.random() < 0.65 else lrng.integers(len(LAND_TYPES))
                    parcels.append(rect)
                    ptype.append(int(t))

    srng = _rng(seed, "stations")
    n_st = n_stations if n_stations is not None else max(3, n_roads // 12)
    st_xy = srng.uniform(lo, hi, size=(n_st, 2))
    st_vars = [WEATHER_VARS]
    for _ in range(n_st - 1):
        k = int(srng.integers(1, 4))
        pick = sorted(srng.choice(3, size=k, replace=False))
        st_vars.append(tuple(WEATHER_VARS[i] for i in pick))

    return City(
        roads=roads,
        length=np.array([polyline_length(r) for r in roads]),
        free_flow=np.round(np.array(ff), 3),
        adjacency=adjacency,
        poi_xy=poi_xy,
        poi_type=poi_type.astype(np.int64),
        parcels=np.array(parcels, dtype=np.float64),
        parcel_type=np.array(ptype, dtype=np.int64),
        stations=st_xy,
        station_vars=st_vars,
        seed=int(seed),
    )


def _land_prior() -> np.ndarray:
    w = np.ones(len(LAND_TYPES))
    for i, t in enumerate(LAND_TYPES):
        if t in _RESIDENTIAL_LAND or t in _BUSINESS_LAND:
            w[i] = 4.0
        if t in {"park", "openSpace", "road"}:
            w[i] = 2.0
    return w / w.sum()


# -- series ------------------------------------------------------------------

@dataclass
class SeriesConfig:
    obs_noise: float = 1.5        # km/h, white noise on observed speed
    ar_noise: float = 0.02        # innovation sd of AR(1) congestion noise
    ar_coef: float = 0.9
    rain_effect: float = 0.25     # congestion added at 10 mm/h rain
    weekend_factor: float = 0.7
    peak_width: float = 3.0       # hours, half-width of the cosine bumps
    diffusion: float = 0.4        # share of congestion taken from neighbours
    start_day: int = 4            # day-of-week of slot 0, Monday = 1


@dataclass
class CitySeries:
    speed: np.ndarray          # (slots, roads) km/h
    jam: np.ndarray            # (slots, roads) in [0, 10]
    congestion: np.ndarray     # (slots, roads) latent congestion
    weather: dict[str, np.ndarray]   # var -> (slots, stations); NaN where unmeasured
    free_flow: np.ndarray
    start_day: int = 1
    slot_minutes: int = SLOT_MINUTES

    @property
    def n_slots(self) -> int:
        return self.speed.shape[0]

    def hour_of(self, t) -> np.ndarray:
        """Hour of day in [1, 24]; the first hour after midnight is 24."""
        h = (np.asarray(t) * self.slot_minutes % 1440) // 60
        return np.where(h == 0, 24, h)

    def day_of(self, t) -> np.ndarray:
        """Day of week in [1, 7], Monday = 1."""
        d = np.asarray(t) * self.slot_minutes // 1440
        return (self.start_day - 1 + d) % 7 + 1

    def to_json(self) -> dict:
        return {
            "slot_minutes": self.slot_minutes,
            "start_day": self.start_day,
            "free_flow": self.free_flow.tolist(),
            "jam": self.jam.tolist(),
            "congestion": self.congestion.tolist(),
            "weather": {k: [[None if np.isnan(v) else float(v) for v in row] for row in arr]
                        for k, arr in self.weather.items()},
        }

    @classmethod
    def from_json(cls, doc: dict, speed: np.ndarray) -> "CitySeries":
        weather = {k: np.array([[np.nan if v is None else v for v in row] for row in arr], dtype=np.float64)
                   for k, arr in doc["weather"].items()}
        return cls(speed=speed, jam=np.array(doc["jam"]), congestion=np.array(doc["congestion"]),
                   weather=weather, free_flow=np.array(doc["free_flow"]),
                   start_day=int(doc["start_day"]), slot_minutes=int(doc["slot_minutes"]))


def road_profiles(city: City, radius: float = 150.0) -> tuple[np.ndarray, np.ndarray]:
    """Morning and evening peak amplitudes per road from nearby land and POIs."""
    mids = city.midpoints()
    res_idx = {i for i, t in enumerate(city.land_types) if t in _RESIDENTIAL_LAND}
    biz_idx = {i for i, t in enumerate(city.land_types) if t in _BUSINESS_LAND}
    poi_biz = np.array([city.poi_types[t] in _BUSINESS_POI for t in city.poi_type]) if len(city.poi_type) else np.zeros(0, bool)
    centers = (city.parcels[:, :2] + city.parcels[:, 2:]) / 2.0
    areas = np.prod(city.parcels[:, 2:] - city.parcels[:, :2], axis=1)
    is_res = np.array([t in res_idx for t in city.parcel_type])
    is_biz = np.array([t in biz_idx for t in city.parcel_type])
    am, ae = np.empty(city.n_roads), np.empty(city.n_roads)
    for n, line in enumerate(city.roads):
        near = np.hypot(*(centers - mids[n]).T) <= radius
        tot = areas[near].sum() or 1.0
        res_share = areas[near & is_res].sum() / tot
        biz_share = areas[near & is_biz].sum() / tot
        if len(city.poi_xy):
            d = point_polyline_distance(city.poi_xy, line)
            biz_pois = float(np.sum((d <= radius) & poi_biz))
        else:
            biz_pois = 0.0
        am[n] = 0.12 + 0.45 * res_share
        ae[n] = 0.12 + 0.25 * biz_share + 0.25 * min(1.0, biz_pois / 8.0)
    return am, ae


def _bump(hour: np.ndarray, center: float, width: float) -> np.ndarray:
    d = np.abs((hour - center + 12.0) % 24.0 - 12.0)
    return np.where(d < width, 0.5 * (1.0 + np.cos(np.pi * d / width)), 0.0)


def nearest_station(city: City, var: str) -> np.ndarray:
    """Index of the nearest station measuring ``var`` for every road (ties: lower id)."""
    ids = [i for i, v in enumerate(city.station_vars) if var in v]
    mids = city.midpoints()
    d = np.hypot(mids[:, None, 0] - city.stations[ids][None, :, 0], mids[:, None, 1] - city.stations[ids][None, :, 1])
    return np.array(ids)[np.argmin(d, axis=1)]


def generate_series(city: City, n_days: int, seed: int, config: SeriesConfig | None = None) -> CitySeries:
    """Speed, jam, and weather for ``n_days`` of 10-minute slots.

    Congestion is a weekday/weekend-scaled pair of cosine peaks (08:00 and
    18:00) whose per-road amplitudes come from nearby land use and POIs, plus
    a rain penalty, AR(1) noise, and one step of diffusion over road
    adjacency. Jam is ten times congestion; speed is free-flow times
    (1 - congestion) plus observation noise, capped at free-flow.
    """
    if n_days < 1:
        raise TooSmall("need at least one day")
    cfg = config or SeriesConfig()
    rng = _rng(seed, "series")
    T = n_days * SLOTS_PER_DAY
    n = city.n_roads
    t = np.arange(T)
    hour = (t * SLOT_MINUTES % 1440) / 60.0
    dow = (cfg.start_day - 1 + t * SLOT_MINUTES // 1440) % 7 + 1
    day_factor = np.where(dow >= 6, cfg.weekend_factor, 1.0)

    # weather: regional rain episodes seen by every station with local scaling
    n_st = len(city.station_vars)
    raining = np.zeros(T, dtype=bool)
    intensity = np.zeros(T)
    state, level = False, 0.0
    for k in range(T):
        if state:
            if rng.random() < 0.08:
                state = False
        elif rng.random() < 0.008:
            state, level = True, rng.gamma(2.0, 3.0)
        raining[k] = state
        intensity[k] = level * (0.6 + 0.8 * rng.random()) if state else 0.0
    local = rng.lognormal(0.0, 0.25, size=n_st)
    rain = intensity[:, None] * local[None, :]
    tprt = (27.5 + 2.5 * np.sin(2 * np.pi * (hour - 9.0) / 24.0))[:, None] - 2.0 * raining[:, None] \
        + rng.normal(0.0, 0.3, size=(T, n_st))
    wind = np.empty((T, n_st))
    w = np.full(n_st, 2.5)
    for k in range(T):
        w = 2.5 + 0.9 * (w - 2.5) + rng.normal(0.0, 0.3, size=n_st)
        wind[k] = np.maximum(w + 1.5 * raining[k], 0.0)
    weather = {"tprt": tprt, "rain": rain, "wind": wind}
    for var, arr in weather.items():
        for s, vs in enumerate(city.station_vars):
            if var not in vs:
                arr[:, s] = np.nan

    am, ae = road_profiles(city)
    base = day_factor[:, None] * (am[None, :] * _bump(hour, 8.0, cfg.peak_width)[:, None]
                                  + ae[None, :] * _bump(hour, 18.0, cfg.peak_width)[:, None])
    rain_road = rain[:, nearest_station(city, "rain")]
    base = base + cfg.rain_effect * np.minimum(rain_road / 10.0, 1.0)
    eps = np.zeros((T, n))
    e = np.zeros(n)
    for k in range(T):
        e = cfg.ar_coef * e + rng.normal(0.0, cfg.ar_noise, size=n) if cfg.ar_noise > 0 else e
        eps[k] = e
    c = base + eps
    W = city.adjacency_matrix()
    deg = W.sum(axis=1, keepdims=True)
    P = np.divide(W, deg, out=np.zeros_like(W), where=deg > 0)
    c = (1.0 - cfg.diffusion) * c + cfg.diffusion * c @ P.T
    c = np.clip(c, 0.0, 0.95)
    jam = np.clip(10.0 * c, 0.0, 10.0)
    obs = rng.normal(0.0, cfg.obs_noise, size=(T, n)) if cfg.obs_noise > 0 else np.zeros((T, n))
    ff = city.free_flow
    speed = np.clip(ff[None, :] * (1.0 - c) + obs, 1.0, ff[None, :])
    return CitySeries(speed=speed, jam=jam, congestion=c, weather=weather, free_flow=ff.copy(),
                      start_day=cfg.start_day)


# -- files -------------------------------------------------------------------

def write_speed_csv(path: str | Path, speed: np.ndarray) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"road{i}" for i in range(speed.shape[1])])
    for row in speed:
        w.writerow([repr(float(v)) for v in row])
    Path(path).write_text(buf.getvalue())


def read_speed_csv(path: str | Path) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(Path(path).read_text())))
    return np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)


def save_city(out_dir: str | Path, city: City, series: CitySeries | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "city.json").write_text(json.dumps(city.to_json(), separators=(",", ":")))
    if series is not None:
        (out / "series.json").write_text(json.dumps(series.to_json(), separators=(",", ":")))
        write_speed_csv(out / "speed.csv", series.speed)


def load_city(out_dir: str | Path) -> tuple[City, CitySeries | None]:
    out = Path(out_dir)
    city = City.from_json(json.loads((out / "city.json").read_text()))
    series = None
    if (out / "series.json").exists():
        series = CitySeries.from_json(json.loads((out / "series.json").read_text()),
                                      read_speed_csv(out / "speed.csv"))
    return city, series
