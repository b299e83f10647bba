"""Relation-dependent integration of KG embeddings into per-road context features.

Each fact (road, r, e) is a one-relation path from the road to ``e``. Its
embedding is ``e + r`` for distance families and ``e * r`` for similarity
families. Min-max normalised attributes scale the parts (entity attribute y'
on ``e``, relation attribute x' on ``r``). Paths are mean-pooled into 17 feature
groups per road and time slot.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MissingEmbedding, MixedFamilies, ShapeMismatch, UnnormalizedAttribute
from .kg import KnowledgeGraph, parse_temporal_relation, road_name, temporal_attribute_matrix
from .kge import DISTANCE_FAMILIES, EmbeddingSet

GROUP_LABELS = (
    "road_spatial", "road", "poi", "land",
    "link1", "link2", "link3", "link4", "link5", "link6",
    "road_temporal", "time", "jam", "weather", "link_hour", "link_day", "link_week",
)
N_GROUPS = len(GROUP_LABELS)
N_SPATIAL = 10
_LINK_RE = re.compile(r"^spatiallyLink(\d+)$")


def spatial_group(relation: str) -> int | None:
    if relation == "adjacentToRoad":
        return 1
    if relation.startswith("hasPoi"):
        return 2
    if relation.startswith("hasLand"):
        return 3
    m = _LINK_RE.match(relation)
    if m and 1 <= int(m.group(1)) <= 6:
        return 3 + int(m.group(1))
    return None


def temporal_group(relation: str) -> int | None:
    parsed = parse_temporal_relation(relation)
    if parsed is None:
        return None
    ctx, mode, lag = parsed
    if mode == "lag":
        return {6: 14, 144: 15, 1008: 16}[lag]
    if ctx in ("hour", "day"):
        return 11
    if ctx == "jam":
        return 12
    return 13


# -- single paths -------------------------------------------------------------

@dataclass(frozen=True)
class RelationPath:
    relations: tuple[int, ...]
    entity: int
    family: str

    def __post_init__(self):
        if len(self.relations) < 1:
            raise ValueError("a relation path needs at least one relation")


def _complex(v: np.ndarray) -> np.ndarray:
    c = v.shape[-1] // 2
    return v[..., :c] + 1j * v[..., c:]


def _realify(z: np.ndarray) -> np.ndarray:
    return np.concatenate([z.real, z.imag], axis=-1)


def _check_covered(path: RelationPath, emb: EmbeddingSet) -> None:
    if path.family != emb.family:
        raise MixedFamilies(f"path built for {path.family} but embeddings are {emb.family}")
    if path.entity not in set(emb.entities.tolist()) or any(r not in set(emb.relations.tolist()) for r in path.relations):
        raise MissingEmbedding(f"path {path} uses ids without embeddings")


def attribute_augment(path: RelationPath, attrs_x, attr_y: float, emb: EmbeddingSet) -> np.ndarray:
    """Attribute-weighted path embedding.

    distance:   y' e + sum_m x'_m r_m
    similarity: y' e * prod_m x'_m r_m   (complex product for ComplEx,
                matrix-vector product for RESCAL)
    """
    _check_covered(path, emb)
    xs = [1.0] * len(path.relations) if attrs_x is None else [float(x) for x in attrs_x]
    if len(xs) != len(path.relations):
        raise ShapeMismatch("one attribute per relation required")
    for a in xs + [float(attr_y)]:
        if not 0.0 <= a <= 1.0:
            raise UnnormalizedAttribute(f"attribute {a} outside [0, 1]")
    f = emb.family
    e = attr_y * emb.entity_vector(path.entity)
    if f in DISTANCE_FAMILIES:
        if f == "TransR":
            M = emb.relation["M"][path.relations[-1]]
            if M.shape[0] != M.shape[1]:
                raise ShapeMismatch("TransR integration needs dim == rel_dim")
            e = e @ M
        return e + sum(x * emb.relation_vector(r) for x, r in zip(xs, path.relations))
    if f == "RESCAL":
        out = e
        for x, r in zip(reversed(xs), reversed(path.relations)):
            out = x * (emb.relation["M"][r] @ out)
        return out
    if f == "ComplEx":
        z = _complex(e)
        for x, r in zip(xs, path.relations):
            z = z * (x * _complex(emb.relation_vector(r)))
        return _realify(z)
    out = e
    for x, r in zip(xs, path.relations):
        u = emb.relation_vector(r)
        if u.shape != out.shape:
            raise ShapeMismatch("NTN integration needs rel_dim == dim")
        out = out * (x * u)
    return out


def path_embed(path: RelationPath, emb: EmbeddingSet) -> np.ndarray:
    return attribute_augment(path, None, 1.0, emb)


# -- normalisation --------------------------------------------------------------

@dataclass
class MinMax:
    lo: float
    hi: float

    def apply(self, x) -> np.ndarray:
        """Normalise to [0, 1]; degenerate ranges give 1.0, NaN (undefined) gives 1.0."""
        x = np.asarray(x, dtype=np.float64)
        if self.hi > self.lo:
            out = np.clip((x - self.lo) / (self.hi - self.lo), 0.0, 1.0)
        else:
            out = np.ones_like(x)
        return np.where(np.isnan(x), 1.0, out)


def fit_minmax(values) -> MinMax:
    v = np.asarray(values, dtype=np.float64)
    v = v[~np.isnan(v)]
    if v.size == 0:
        return MinMax(0.0, 0.0)
    return MinMax(float(v.min()), float(v.max()))


def normalize_attributes(values, train_values=None) -> np.ndarray:
    """Min-max normalise with statistics from ``train_values`` (default: values)."""
    return fit_minmax(values if train_values is None else train_values).apply(values)


# -- the context tensor ---------------------------------------------------------

@dataclass
class ContextTensor:
    """17 group vectors per road and slot, stored factorised: the 10 spatial
    groups once per road, the 7 temporal groups per slot and road."""
    spatial: np.ndarray            # (N, 10, d)
    temporal: np.ndarray           # (T, N, 7, d)
    meta: dict = field(default_factory=dict)

    @property
    def n_roads(self) -> int:
        return self.spatial.shape[0]

    @property
    def n_slots(self) -> int:
        return self.temporal.shape[0]

    @property
    def dim(self) -> int:
        return self.spatial.shape[-1]

    def at(self, slots) -> np.ndarray:
        """(len(slots), N, 17, d) dense view."""
        tmp = self.temporal[np.asarray(slots)]
        sp = np.broadcast_to(self.spatial, tmp.shape[:1] + self.spatial.shape)
        return np.concatenate([sp, tmp], axis=2)

    def cell(self, t: int, n: int) -> np.ndarray:
        return np.concatenate([self.spatial[n], self.temporal[t, n]], axis=0)

    def save(self, path: str | Path) -> None:
        header = {"roads": self.n_roads, "slots": self.n_slots, "groups": N_GROUPS, "dim": self.dim,
                  "group_labels": list(GROUP_LABELS), "layout": "spatial(N,10,d) then temporal(T,N,7,d), float64 LE",
                  "meta": self.meta}
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, separators=(",", ":"), sort_keys=True).encode() + b"\n")
            fh.write(np.ascontiguousarray(self.spatial, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.temporal, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "ContextTensor":
        raw = Path(path).read_bytes()
        nl = raw.index(b"\n")
        h = json.loads(raw[:nl])
        n, t, d = h["roads"], h["slots"], h["dim"]
        sp = np.frombuffer(raw, "<f8", n * N_SPATIAL * d, nl + 1).reshape(n, N_SPATIAL, d).astype(np.float64)
        off = nl + 1 + 8 * n * N_SPATIAL * d
        tm = np.frombuffer(raw, "<f8", t * n * 7 * d, off).reshape(t, n, 7, d).astype(np.float64)
        return cls(sp, tm, h.get("meta", {}))


def _fact_parts(emb: EmbeddingSet, heads: np.ndarray, rels: np.ndarray, tails: np.ndarray):
    """Per-fact (entity part, relation part) so that the augmented path is
    y' * A + x' * B (distance) or x' * y' * A (similarity, B unused)."""
    missing_e = set(tails.tolist()) - set(emb.entities.tolist())
    missing_r = set(rels.tolist()) - set(emb.relations.tolist())
    if missing_e or missing_r:
        raise MissingEmbedding(f"{emb.family} embeddings lack entities {sorted(missing_e)[:5]} "
                               f"or relations {sorted(missing_r)[:5]}")
    f = emb.family
    ev = emb.entity_vector(tails)
    if f in DISTANCE_FAMILIES:
        if f == "TransR":
            M = emb.relation["M"][rels]
            if M.shape[1] != M.shape[2]:
                raise ShapeMismatch("TransR integration needs dim == rel_dim")
            ev = np.einsum("fe,fek->fk", ev, M)
        return ev, emb.relation_vector(rels)
    if f == "RESCAL":
        return np.einsum("fij,fj->fi", emb.relation["M"][rels], ev), None
    if f == "ComplEx":
        return _realify(_complex(ev) * _complex(emb.relation_vector(rels))), None
    u = emb.relation_vector(rels)
    if u.shape != ev.shape:
        raise ShapeMismatch("NTN integration needs rel_dim == dim")
    return ev * u, None


def _pool(values: np.ndarray, road: np.ndarray, group: np.ndarray, n_roads: int, groups: list[int]) -> np.ndarray:
    """Mean of ``values[..., f, :]`` per (road, group); empty cells are zero.

    values: (..., F, d). Returns (..., N, len(groups), d).
    """
    lead = values.shape[:-2]
    d = values.shape[-1]
    out = np.zeros(lead + (n_roads, len(groups), d))
    gi = {g: i for i, g in enumerate(groups)}
    cell = road * len(groups) + np.array([gi[g] for g in group], dtype=np.int64)
    if len(cell) == 0:
        return out
    counts = np.bincount(cell, minlength=n_roads * len(groups)).astype(np.float64)
    order = np.argsort(cell, kind="stable")
    sc = cell[order]
    starts = np.flatnonzero(np.r_[True, sc[1:] != sc[:-1]])
    sums = np.add.reduceat(values[..., order, :], starts, axis=-2)
    flat = out.reshape(lead + (n_roads * len(groups), d))
    flat[..., sc[starts], :] = sums / counts[sc[starts]][:, None]
    return flat.reshape(out.shape)


def road_attribute(kg: KnowledgeGraph, ids: np.ndarray) -> np.ndarray:
    """Normalised entity attribute y' (free-flow speed for roads, 1.0 otherwise)."""
    ys = np.array([np.nan if kg.entities[i].y is None else kg.entities[i].y for i in ids], dtype=np.float64)
    road_y = [e.y for e in kg.entities if e.kind == "road" and e.y is not None]
    return fit_minmax(road_y).apply(ys)


def spatial_groups(kg: KnowledgeGraph, emb: EmbeddingSet, n_roads: int) -> tuple[np.ndarray, dict]:
    roads = np.array([kg.entity_id(road_name(i), "road") for i in range(n_roads)])
    road_of = {int(r): i for i, r in enumerate(roads)}
    facts = [f for f in kg.spatial if spatial_group(kg.relations[f.relation]) is not None and f.head in road_of]
    heads = np.array([f.head for f in facts], dtype=np.int64)
    rels = np.array([f.relation for f in facts], dtype=np.int64)
    tails = np.array([f.tail for f in facts], dtype=np.int64)
    groups = np.array([spatial_group(kg.relations[r]) for r in rels], dtype=np.int64)
    # x' per relation name over all facts of that relation
    x = np.array([np.nan if f.attribute is None else f.attribute for f in facts])
    xn = np.ones(len(facts))
    stats = {}
    for r in np.unique(rels):
        m = rels == r
        mm = fit_minmax(x[m])
        stats[kg.relations[r]] = [mm.lo, mm.hi]
        xn[m] = mm.apply(x[m])
    yn = road_attribute(kg, tails)
    out = np.zeros((n_roads, N_SPATIAL, emb.dim))
    missing = set(roads.tolist()) - set(emb.entities.tolist())
    if missing:
        raise MissingEmbedding(f"spatial embeddings lack road entities {sorted(missing)[:5]}")
    out[:, 0] = emb.entity_vector(roads)
    if len(facts):
        A, B = _fact_parts(emb, heads, rels, tails)
        vec = yn[:, None] * A + xn[:, None] * B if B is not None else (xn * yn)[:, None] * A
        if vec.shape[-1] != emb.dim:
            raise ShapeMismatch("path vectors and entity vectors differ in width")
        out[:, 1:] = _pool(vec, np.array([road_of[int(h)] for h in heads]), groups, n_roads, list(range(1, 10)))
    return out, stats


def temporal_groups(kg: KnowledgeGraph, emb: EmbeddingSet, city, series, train_slots: np.ndarray,
                    chunk: int = 128) -> tuple[np.ndarray, dict]:
    n_roads = city.n_roads
    roads = np.array([kg.entity_id(road_name(i), "road") for i in range(n_roads)])
    road_of = {int(r): i for i, r in enumerate(roads)}
    facts = kg.temporal
    keep = np.array([temporal_group(kg.relations[f.relation]) is not None and f.head in road_of for f in facts],
                    dtype=bool)
    heads = np.array([f.head for f in facts], dtype=np.int64)[keep] if facts else np.zeros(0, np.int64)
    rels = np.array([f.relation for f in facts], dtype=np.int64)[keep] if facts else np.zeros(0, np.int64)
    tails = np.array([f.tail for f in facts], dtype=np.int64)[keep] if facts else np.zeros(0, np.int64)
    groups = np.array([temporal_group(kg.relations[r]) for r in rels], dtype=np.int64)
    T = series.n_slots
    missing = set(roads.tolist()) - set(emb.entities.tolist())
    if missing:
        raise MissingEmbedding(f"temporal embeddings lack road entities {sorted(missing)[:5]}")
    out = np.zeros((T, n_roads, 7, emb.dim))
    out[:, :, 0] = emb.entity_vector(roads)[None]
    stats: dict = {}
    if not len(rels):
        return out, stats
    X = temporal_attribute_matrix(kg, city, series, np.arange(T))[:, keep]
    norms = []
    for r in np.unique(rels):
        m = rels == r
        mm = fit_minmax(X[np.asarray(train_slots)][:, m])
        stats[kg.relations[r]] = [mm.lo, mm.hi]
        norms.append((m, mm))
    Xn = np.empty_like(X)
    for m, mm in norms:
        Xn[:, m] = mm.apply(X[:, m])
    yn = road_attribute(kg, tails)
    A, B = _fact_parts(emb, heads, rels, tails)
    if A.shape[-1] != emb.dim:
        raise ShapeMismatch("path vectors and entity vectors differ in width")
    ridx = np.array([road_of[int(h)] for h in heads])
    gl = list(range(11, 17))
    if B is not None:
        # y' A is static; x'(t) B varies
        static = _pool(yn[:, None] * A, ridx, groups, n_roads, gl)
        for s in range(0, T, chunk):
            out[s:s + chunk, :, 1:] = static[None] + _pool(Xn[s:s + chunk, :, None] * B[None], ridx, groups, n_roads, gl)
    else:
        for s in range(0, T, chunk):
            w = Xn[s:s + chunk] * yn[None]
            out[s:s + chunk, :, 1:] = _pool(w[:, :, None] * A[None], ridx, groups, n_roads, gl)
    return out, stats


def build_context_tensor(kg: KnowledgeGraph, emb_s: EmbeddingSet, emb_t: EmbeddingSet, city, series,
                         train_slots: np.ndarray | None = None) -> ContextTensor:
    """Pool attribute-augmented path embeddings into 17 groups per road and slot.

    Temporal attribute statistics come from ``train_slots`` (default: the
    first 70% of slots); values outside that range are clipped to [0, 1].
    """
    if emb_s.dim != emb_t.dim:
        raise ShapeMismatch("spatial and temporal embeddings must share a dim")
    if train_slots is None:
        train_slots = np.arange(int(0.7 * series.n_slots))
    sp, s_stats = spatial_groups(kg, emb_s, city.n_roads)
    tm, t_stats = temporal_groups(kg, emb_t, city, series, train_slots)
    meta = {"spatial_family": emb_s.family, "temporal_family": emb_t.family,
            "train_slots": [int(train_slots[0]), int(train_slots[-1]) + 1] if len(train_slots) else [0, 0],
            "spatial_minmax": s_stats, "temporal_minmax": t_stats}
    return ContextTensor(sp, tm, meta)
