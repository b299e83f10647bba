"""Entities, relations, and facts of the context-aware knowledge graph, plus
builders for its spatial unit (roads, POIs, land use, spatial links) and
temporal unit (time, jam, weather, temporal links)."""
from __future__ import annotations

import json
import math
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DuplicateFact, EmptyCity, InsufficientHistory, OutOfRange, UnknownId
from .geometry import BufferRaster, point_polyline_distance
from .synth import WEATHER_VARS, City, CitySeries, nearest_station

ENTITY_KINDS = ("road", "poiType", "landType", "hour", "day", "jam", "tprt", "rain", "wind")
TEMPORAL_CONTEXTS = ("hour", "day", "jam", "tprt", "rain", "wind")
LINK_KINDS = ("hour", "day", "week")
LINK_LAG_SLOTS = {"hour": 6, "day": 144, "week": 1008}


class Entity(NamedTuple):
    id: int
    name: str
    kind: str
    y: float | None


class Fact(NamedTuple):
    head: int
    relation: int
    tail: int
    attribute: float | None = None


_NEAR = list(range(10, 101, 10))
_FAR = list(range(100, 501, 100))
BUFFER_SETS = {"10-100": _NEAR, "100-500": _FAR, "10-500": sorted(set(_NEAR) | set(_FAR))}


@dataclass
class BufferConfig:
    distances: list[float] = field(
        default_factory=lambda: [float(d) for d in list(range(10, 101, 10)) + list(range(200, 501, 100))])

    def __post_init__(self):
        d = [float(x) for x in self.distances]
        if not d or d[0] <= 0 or any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError("buffer distances must be positive and strictly increasing")
        self.distances = d

    @classmethod
    def named(cls, spec: str) -> "BufferConfig":
        """``"10-100"``, ``"100-500"`` or ``"10-500"``."""
        if spec not in BUFFER_SETS:
            raise ValueError(f"unknown buffer set {spec!r}")
        return cls(BUFFER_SETS[spec])


@dataclass
class TemporalConfig:
    past_minutes: list[int] = field(default_factory=lambda: [10, 20, 30, 40, 50, 60])
    link_kinds: list[str] = field(default_factory=lambda: list(LINK_KINDS))
    slot_minutes: int = 10

    def __post_init__(self):
        if any(p <= 0 or p % self.slot_minutes for p in self.past_minutes):
            raise ValueError("past_minutes must be positive multiples of slot_minutes")
        bad = set(self.link_kinds) - set(LINK_KINDS)
        if bad:
            raise ValueError(f"unknown temporal link kinds {sorted(bad)}")
        self.link_kinds = [k for k in LINK_KINDS if k in self.link_kinds]

    @staticmethod
    def parse_links(spec: str) -> list[str]:
        """``"-"`` (none), ``"hour"``, ``"day"``, ``"week"``, or letters from
        ``"HDW"`` such as ``"H"`` or ``"HD"``."""
        if spec in ("-", ""):
            return []
        if spec in LINK_KINDS:
            return [spec]
        letters = {k[0].upper(): k for k in LINK_KINDS}
        if set(spec.upper()) <= set(letters) and len(set(spec.upper())) == len(spec):
            return [k for k in LINK_KINDS if k[0].upper() in spec.upper()]
        raise ValueError(f"unknown temporal link spec {spec!r}")

    @staticmethod
    def past_upto(p: int) -> list[int]:
        return list(range(10, int(p) + 1, 10))


class KnowledgeGraph:
    """Registries plus the spatial and temporal fact lists."""

    def __init__(self):
        self.entities: list[Entity] = []
        self.relations: list[str] = []
        self._entity_key: dict[tuple[str, str], int] = {}
        self._relation_key: dict[str, int] = {}
        self.units: dict[str, list[Fact]] = {"spatial": [], "temporal": []}
        self._triples: dict[str, set] = {"spatial": set(), "temporal": set()}
        self.config: dict = {}

    @property
    def spatial(self) -> list[Fact]:
        return self.units["spatial"]

    @property
    def temporal(self) -> list[Fact]:
        return self.units["temporal"]

    def register_entity(self, name: str, kind: str, y: float | None = None) -> int:
        if not name:
            raise ValueError("entity name must be nonempty")
        key = (kind, name)
        if key in self._entity_key:
            return self._entity_key[key]
        eid = len(self.entities)
        self.entities.append(Entity(eid, name, kind, None if y is None else float(y)))
        self._entity_key[key] = eid
        return eid

    def register_relation(self, name: str) -> int:
        if not name:
            raise ValueError("relation name must be nonempty")
        if name not in self._relation_key:
            self._relation_key[name] = len(self.relations)
            self.relations.append(name)
        return self._relation_key[name]

    def entity_id(self, name: str, kind: str) -> int:
        try:
            return self._entity_key[(kind, name)]
        except KeyError:
            raise UnknownId(f"no {kind} entity named {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self._relation_key[name]
        except KeyError:
            raise UnknownId(f"no relation named {name!r}") from None

    def add_fact(self, unit: str, fact: Fact) -> None:
        h, r, t, x = fact
        n_e, n_r = len(self.entities), len(self.relations)
        if not (0 <= h < n_e and 0 <= t < n_e):
            raise UnknownId(f"fact references unregistered entity: {fact}")
        if not 0 <= r < n_r:
            raise UnknownId(f"fact references unregistered relation: {fact}")
        if x is not None and not math.isfinite(x):
            raise ValueError(f"fact attribute must be finite: {fact}")
        key = (h, r, t)
        if key in self._triples[unit]:
            raise DuplicateFact(f"duplicate fact {self.describe(fact)} in {unit} unit")
        self._triples[unit].add(key)
        self.units[unit].append(Fact(int(h), int(r), int(t), None if x is None else float(x)))

    def clear_unit(self, unit: str) -> None:
        self.units[unit] = []
        self._triples[unit] = set()

    def describe(self, fact: Fact) -> str:
        return f"({self.entities[fact.head].name}, {self.relations[fact.relation]}, {self.entities[fact.tail].name})"

    def triples(self, unit: str) -> np.ndarray:
        """(n, 3) int array of (head, relation, tail)."""
        facts = self.units[unit]
        return np.array([(f.head, f.relation, f.tail) for f in facts], dtype=np.int64).reshape(-1, 3)

    def attributes(self, unit: str) -> np.ndarray:
        return np.array([np.nan if f.attribute is None else f.attribute for f in self.units[unit]])

    def unit_entities(self, unit: str) -> np.ndarray:
        tr = self.triples(unit)
        return np.unique(np.concatenate([tr[:, 0], tr[:, 2]])) if len(tr) else np.zeros(0, np.int64)

    def unit_relations(self, unit: str) -> np.ndarray:
        tr = self.triples(unit)
        return np.unique(tr[:, 1]) if len(tr) else np.zeros(0, np.int64)

    def roads(self) -> list[int]:
        return [e.id for e in self.entities if e.kind == "road"]

    # -- serialisation -----------------------------------------------------
    def to_json(self) -> dict:
        def row(f):
            return [f.head, f.relation, f.tail, f.attribute]

        return {
            "entities": [{"id": e.id, "name": e.name, "kind": e.kind, "y": e.y} for e in self.entities],
            "relations": [{"id": i, "name": n} for i, n in enumerate(self.relations)],
            "spatial": [row(f) for f in self.spatial],
            "temporal": [row(f) for f in self.temporal],
            "config": self.config,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "KnowledgeGraph":
        kg = cls()
        for e in doc["entities"]:
            kg.register_entity(e["name"], e["kind"], e["y"])
        for r in doc["relations"]:
            kg.register_relation(r["name"])
        for unit in ("spatial", "temporal"):
            for h, r, t, x in doc[unit]:
                kg.add_fact(unit, Fact(h, r, t, x))
        kg.config = doc.get("config", {})
        return kg

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_json(), separators=(",", ":")))

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeGraph":
        return cls.from_json(json.loads(Path(path).read_text()))


# -- naming ------------------------------------------------------------------

def _camel(name: str) -> str:
    return name[:1].upper() + name[1:]


def _fmt_dist(d: float) -> str:
    return str(int(d)) if float(d).is_integer() else str(d)


def poi_relation(poi_type: str, dist: float) -> str:
    return f"hasPoi{_camel(poi_type)}InBuffer{_fmt_dist(dist)}"


def land_relation(land_type: str, dist: float) -> str:
    return f"hasLand{_camel(land_type)}InBuffer{_fmt_dist(dist)}"


def road_name(i: int) -> str:
    return f"road{i}"


_TEMPORAL_RE = re.compile(r"^(?:has(Hour|Day)|has(Jam|Tprt|Rain|Wind)(\d+)|temporallyLink(Hour|Day|Jam|Tprt|Rain|Wind)(Hour|Day|Week))$")


def parse_temporal_relation(name: str) -> tuple[str, str, int] | None:
    """``(context, mode, param)`` for a temporal relation name.

    mode is ``"now"`` (time indicators), ``"window"`` (param = past minutes)
    or ``"lag"`` (param = lag in slots).
    """
    m = _TEMPORAL_RE.match(name)
    if not m:
        return None
    if m.group(1):
        return m.group(1).lower(), "now", 0
    if m.group(2):
        return m.group(2).lower(), "window", int(m.group(3))
    return m.group(4).lower(), "lag", LINK_LAG_SLOTS[m.group(5).lower()]


# -- encodings ---------------------------------------------------------------

def encode_hour(hour) -> np.ndarray | float:
    h = np.asarray(hour, dtype=np.float64)
    if np.any((h < 1) | (h > 24)):
        raise OutOfRange(f"hour must lie in [1, 24], got {hour}")
    out = np.cos(2.0 * np.pi * h / 24.0)
    return float(out) if out.ndim == 0 else out


def encode_day(day) -> np.ndarray | float:
    d = np.asarray(day, dtype=np.float64)
    if np.any((d < 1) | (d > 7)):
        raise OutOfRange(f"day must lie in [1, 7], got {day}")
    out = np.cos(2.0 * np.pi * d / 7.0)
    return float(out) if out.ndim == 0 else out


# -- spatial unit --------------------------------------------------------------

def compute_spatial_links(adjacency: list[list[int]], max_order: int) -> list[tuple[int, int, int]]:
    """All ordered road pairs within ``max_order`` hops as ``(a, b, hops)``."""
    if not 1 <= max_order <= 12:
        raise ValueError("max_order must lie in [1, 12]")
    out = []
    for src in range(len(adjacency)):
        dist = {src: 0}
        q = deque([src])
        while q:
            u = q.popleft()
            if dist[u] == max_order:
                continue
            for v in adjacency[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    q.append(v)
        out.extend((src, b, d) for b, d in sorted(dist.items()) if b != src)
    return out


def _register_roads(kg: KnowledgeGraph, city: City) -> list[int]:
    return [kg.register_entity(road_name(i), "road", float(city.free_flow[i])) for i in range(city.n_roads)]


def poi_counts(city: City, distances: list[float]) -> np.ndarray:
    """(roads, poi types, distances) count of POIs within each buffer."""
    out = np.zeros((city.n_roads, len(city.poi_types), len(distances)))
    if not len(city.poi_xy):
        return out
    dists = np.asarray(distances)
    for n, line in enumerate(city.roads):
        d = point_polyline_distance(city.poi_xy, line)
        inside = d[:, None] <= dists[None, :]
        np.add.at(out[n], city.poi_type, inside.astype(np.float64))
    return out


def land_ratios(city: City, distances: list[float], resolution: float = 1.0) -> np.ndarray:
    """(roads, land types, distances) share of each buffer covered by each type."""
    dists = np.asarray(distances, dtype=np.float64)
    out = np.zeros((city.n_roads, len(city.land_types), len(dists)))
    dmax = float(dists.max())
    for n, line in enumerate(city.roads):
        r = BufferRaster(line, dmax, resolution)
        total = r.buffer_pixels(dists)
        lo = line.min(axis=0) - dmax
        hi = line.max(axis=0) + dmax
        near = np.where((city.parcels[:, 2] > lo[0]) & (city.parcels[:, 0] < hi[0])
                        & (city.parcels[:, 3] > lo[1]) & (city.parcels[:, 1] < hi[1]))[0]
        for p in near:
            out[n, city.parcel_type[p]] += r.overlap_pixels(city.parcels[p], dists)
        out[n] /= total[None, :]
    return out


def build_spatial_unit(city: City, buffer_cfg: BufferConfig | None = None, max_link_order: int = 6,
                       kg: KnowledgeGraph | None = None, resolution: float = 1.0) -> KnowledgeGraph:
    """Populate the spatial unit with simplified road-context facts.

    POI and land facts link roads straight to type entities; their attribute
    is the POI count or covered area ratio within the buffer. Zero counts and
    zero ratios produce no fact. ``max_link_order = 0`` emits no spatial links.
    """
    if city.n_roads < 1:
        raise EmptyCity("city has no roads")
    buffer_cfg = buffer_cfg or BufferConfig()
    kg = kg or KnowledgeGraph()
    kg.clear_unit("spatial")
    roads = _register_roads(kg, city)
    adj_rel = kg.register_relation("adjacentToRoad")
    for a, nbrs in enumerate(city.adjacency):
        for b in nbrs:
            kg.add_fact("spatial", Fact(roads[a], adj_rel, roads[b]))

    dists = buffer_cfg.distances
    counts = poi_counts(city, dists)
    ratios = land_ratios(city, dists, resolution)
    poi_ent = [kg.register_entity(t, "poiType") for t in city.poi_types]
    land_ent = [kg.register_entity(t, "landType") for t in city.land_types]
    for n in range(city.n_roads):
        for k, ptype in enumerate(city.poi_types):
            for j, d in enumerate(dists):
                if counts[n, k, j] > 0:
                    rel = kg.register_relation(poi_relation(ptype, d))
                    kg.add_fact("spatial", Fact(roads[n], rel, poi_ent[k], counts[n, k, j]))
        for k, ltype in enumerate(city.land_types):
            for j, d in enumerate(dists):
                if ratios[n, k, j] > 0:
                    rel = kg.register_relation(land_relation(ltype, d))
                    kg.add_fact("spatial", Fact(roads[n], rel, land_ent[k], ratios[n, k, j]))
    if max_link_order > 0:
        links = compute_spatial_links(city.adjacency, max_link_order)
        rels = {k: kg.register_relation(f"spatiallyLink{k}") for k in range(1, max_link_order + 1)}
        for a, b, k in links:
            kg.add_fact("spatial", Fact(roads[a], rels[k], roads[b]))
    kg.config.update({"buffer_distances": list(dists), "max_link_order": int(max_link_order),
                      "raster_resolution": float(resolution)})
    return kg


# -- temporal unit -------------------------------------------------------------

class TemporalContext:
    """Per-road access to the slot series behind temporal facts."""

    def __init__(self, city: City, series: CitySeries):
        self.series = series
        self.station = {v: nearest_station(city, v) for v in WEATHER_VARS}
        self.n_roads = city.n_roads

    def raw(self, context: str, slots: np.ndarray) -> np.ndarray:
        """(len(slots), roads) raw values of a temporal context."""
        s = self.series
        if context == "hour":
            return np.repeat(encode_hour(s.hour_of(slots))[:, None], self.n_roads, axis=1)
        if context == "day":
            return np.repeat(encode_day(s.day_of(slots))[:, None], self.n_roads, axis=1)
        if context == "jam":
            return s.jam[slots]
        return s.weather[context][slots][:, self.station[context]]

    def window_mean(self, context: str, minutes: int, slots: np.ndarray) -> np.ndarray:
        """Mean over the trailing window ending at each slot; windows that
        would start before slot 0 are truncated to the available history."""
        k = minutes // self.series.slot_minutes
        full = self.raw(context, np.arange(self.series.n_slots))
        csum = np.vstack([np.zeros((1, full.shape[1])), np.cumsum(full, axis=0)])
        slots = np.asarray(slots)
        lo = np.maximum(slots + 1 - k, 0)
        return (csum[slots + 1] - csum[lo]) / (slots + 1 - lo)[:, None]


def _temporal_relations(cfg: TemporalConfig) -> list[tuple[str, str]]:
    """(relation name, context entity) in emission order for one road."""
    rels = [("hasHour", "hour"), ("hasDay", "day")]
    rels += [(f"hasJam{p}", "jam") for p in cfg.past_minutes]
    for var in ("tprt", "rain", "wind"):
        rels += [(f"has{_camel(var)}{p}", var) for p in cfg.past_minutes]
    for ctx in TEMPORAL_CONTEXTS:
        for link in cfg.link_kinds:
            rels.append((f"temporallyLink{_camel(ctx)}{_camel(link)}", ctx))
    return rels


def min_history_slot(cfg: TemporalConfig) -> int:
    return max(cfg.past_minutes) // cfg.slot_minutes - 1


def temporal_attribute_matrix(kg: KnowledgeGraph, city: City, series: CitySeries, slots) -> np.ndarray:
    """(len(slots), n temporal facts) attributes; NaN where a lagged value
    precedes the series start."""
    slots = np.asarray(slots, dtype=np.int64)
    ctx = TemporalContext(city, series)
    facts = kg.temporal
    out = np.full((len(slots), len(facts)), np.nan)
    road_index = {kg.entity_id(road_name(i), "road"): i for i in range(city.n_roads)}
    cache: dict[tuple, np.ndarray] = {}
    for j, f in enumerate(facts):
        ctx_name, mode, param = parse_temporal_relation(kg.relations[f.relation])
        key = (ctx_name, mode, param)
        if key not in cache:
            if mode == "now":
                cache[key] = ctx.raw(ctx_name, slots)
            elif mode == "window":
                cache[key] = ctx.window_mean(ctx_name, param, slots)
            else:
                src = slots - param
                vals = np.full((len(slots), city.n_roads), np.nan)
                ok = src >= 0
                if ok.any():
                    vals[ok] = ctx.raw(ctx_name, src[ok])
                cache[key] = vals
        out[:, j] = cache[key][:, road_index[f.head]]
    return out


def build_temporal_unit(city: City, series: CitySeries, temporal_cfg: TemporalConfig | None, t: int,
                        kg: KnowledgeGraph | None = None) -> KnowledgeGraph:
    """Populate the temporal unit with attributes taken at slot ``t``.

    The fact structure does not depend on ``t``; only attributes do.
    Temporal-link attributes that would reach before the series start are
    left undefined.
    """
    cfg = temporal_cfg or TemporalConfig()
    if t < min_history_slot(cfg) or t >= series.n_slots:
        raise InsufficientHistory(
            f"slot {t} lacks {max(cfg.past_minutes)} minutes of history or lies past the series end")
    kg = kg or KnowledgeGraph()
    kg.clear_unit("temporal")
    roads = _register_roads(kg, city)
    ctx_ent = {c: kg.register_entity(c, c) for c in TEMPORAL_CONTEXTS}
    rels = [(kg.register_relation(name), ctx_ent[c]) for name, c in _temporal_relations(cfg)]
    for n in range(city.n_roads):
        for rel, tail in rels:
            kg.add_fact("temporal", Fact(roads[n], rel, tail))
    attrs = temporal_attribute_matrix(kg, city, series, [t])[0]
    kg.units["temporal"] = [f._replace(attribute=None if np.isnan(a) else float(a))
                            for f, a in zip(kg.temporal, attrs)]
    kg.config.update({"past_minutes": list(cfg.past_minutes), "link_kinds": list(cfg.link_kinds),
                      "slot_minutes": cfg.slot_minutes, "reference_slot": int(t)})
    return kg


def temporal_facts_at(kg: KnowledgeGraph, city: City, series: CitySeries, t: int) -> list[Fact]:
    attrs = temporal_attribute_matrix(kg, city, series, [t])[0]
    return [f._replace(attribute=None if np.isnan(a) else float(a)) for f, a in zip(kg.temporal, attrs)]


def build_kg(city: City, series: CitySeries, buffer_cfg: BufferConfig | None = None, max_link_order: int = 6,
             temporal_cfg: TemporalConfig | None = None, t: int | None = None,
             resolution: float = 1.0) -> KnowledgeGraph:
    cfg = temporal_cfg or TemporalConfig()
    kg = build_spatial_unit(city, buffer_cfg, max_link_order, resolution=resolution)
    ref = min_history_slot(cfg) if t is None else t
    return build_temporal_unit(city, series, cfg, ref, kg)
