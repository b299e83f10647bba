import warnings

import numpy as np
import pytest

from ckg_traffic import kge as K
from ckg_traffic.errors import MissingEmbedding, MixedFamilies, UnnormalizedAttribute
from ckg_traffic.integration import (GROUP_LABELS, ContextTensor, RelationPath, attribute_augment,
                                     build_context_tensor, fit_minmax, normalize_attributes, path_embed,
                                     spatial_group, temporal_group)
from ckg_traffic.kg import (BufferConfig, TemporalConfig, build_kg, road_name, temporal_attribute_matrix)
from ckg_traffic.synth import generate_city, generate_series
from test_kge import random_set


def manual_set(family, ent, rel):
    return K.EmbeddingSet(family, 2, 2, ent, rel, np.arange(len(next(iter(ent.values())))),
                          np.arange(len(next(iter(rel.values())))))


def test_distance_paths():
    emb = manual_set("TransE", {"E": np.array([[1.0, 1.0]])}, {"R": np.array([[1.0, 0.0], [0.0, 2.0]])})
    np.testing.assert_array_equal(path_embed(RelationPath((0,), 0, "TransE"), emb), [2.0, 1.0])
    np.testing.assert_array_equal(path_embed(RelationPath((0, 1), 0, "TransE"), emb), [2.0, 3.0])


@pytest.mark.parametrize("family", ["ComplEx", "NTN", "RESCAL"])
def test_similarity_unit_relation_is_identity(family):
    e = np.array([[0.3, -1.2]])
    if family == "ComplEx":
        emb = manual_set(family, {"re": e[:, :1], "im": e[:, 1:]}, {"re": np.ones((1, 1)), "im": np.zeros((1, 1))})
    elif family == "NTN":
        emb = manual_set(family, {"E": e}, {"u": np.ones((1, 2))})
    else:
        emb = manual_set(family, {"E": e}, {"M": np.eye(2)[None]})
    np.testing.assert_array_equal(path_embed(RelationPath((0,), 0, family), emb), e[0])


def test_complex_path_is_complex_product():
    emb = random_set("ComplEx", 2, 2, dim=4, seed=1)
    z = (emb.entity["re"][1] + 1j * emb.entity["im"][1]) * (emb.relation["re"][0] + 1j * emb.relation["im"][0]) \
        * (emb.relation["re"][1] + 1j * emb.relation["im"][1])
    got = path_embed(RelationPath((0, 1), 1, "ComplEx"), emb)
    np.testing.assert_allclose(got, np.r_[z.real, z.imag], rtol=1e-14)


def test_kg2e_uses_means():
    emb = random_set("KG2E", 3, 2, dim=4, seed=2)
    got = path_embed(RelationPath((1,), 2, "KG2E"), emb)
    np.testing.assert_array_equal(got, emb.entity["mu"][2] + emb.relation["mu"][1])


@pytest.mark.parametrize("family", K.FAMILIES)
def test_neutral_attributes_reduce_to_path(family):
    emb = random_set(family, 3, 2, dim=4, rel_dim=4, seed=3)
    p = RelationPath((0, 1), 2, family)
    np.testing.assert_array_equal(attribute_augment(p, [1.0, 1.0], 1.0, emb), path_embed(p, emb))


def test_zero_entity_attribute_leaves_relation():
    emb = random_set("TransE", 2, 1, seed=4)
    np.testing.assert_array_equal(attribute_augment(RelationPath((0,), 1, "TransE"), [1.0], 0.0, emb),
                                  emb.relation["R"][0])


def test_attribute_guards():
    emb = random_set("TransE", 2, 1, seed=5)
    with pytest.raises(UnnormalizedAttribute):
        attribute_augment(RelationPath((0,), 1, "TransE"), [1.5], 1.0, emb)
    with pytest.raises(MixedFamilies):
        path_embed(RelationPath((0,), 1, "ComplEx"), emb)
    with pytest.raises(MissingEmbedding):
        path_embed(RelationPath((0,), 7, "TransE"), emb)


def test_minmax_rules():
    np.testing.assert_array_equal(normalize_attributes([2.0, 4.0, 6.0]), [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(normalize_attributes([3.0, 3.0]), [1.0, 1.0])
    assert fit_minmax([0.0, 10.0]).apply(10.0) == 1.0
    # test-window value above the training max is clipped
    np.testing.assert_array_equal(normalize_attributes([12.0, -1.0, 5.0], train_values=[0.0, 10.0]), [1.0, 0.0, 0.5])
    assert fit_minmax([0.0, 1.0]).apply(np.nan) == 1.0


def test_group_tables():
    assert len(GROUP_LABELS) == 17
    assert spatial_group("spatiallyLink6") == 9 and spatial_group("spatiallyLink9") is None
    assert spatial_group("hasLandParkInBuffer50") == 3
    assert temporal_group("hasHour") == 11 and temporal_group("hasWind30") == 13
    assert temporal_group("temporallyLinkJamWeek") == 16


@pytest.fixture(scope="module")
def setup():
    city = generate_city(8, seed=21)
    series = generate_series(city, 2, seed=21)
    kg = build_kg(city, series, BufferConfig.named("10-100"), 2, TemporalConfig(past_minutes=[10, 30]))
    n_e, n_r = len(kg.entities), len(kg.relations)
    es = random_set("ComplEx", n_e, n_r, dim=6, rel_dim=6, seed=7)
    et = random_set("KG2E", n_e, n_r, dim=6, rel_dim=6, seed=8)
    return city, series, kg, es, et


def _oracle_cell(kg, es, et, city, series, t, n, train):
    """Independent per-cell computation: loop over the road's facts."""
    road = kg.entity_id(road_name(n), "road")
    X = temporal_attribute_matrix(kg, city, series, np.arange(series.n_slots))
    road_ys = [e.y for e in kg.entities if e.kind == "road"]
    lo_y, hi_y = min(road_ys), max(road_ys)

    def ynorm(i):
        y = kg.entities[i].y
        return 1.0 if y is None else (1.0 if hi_y == lo_y else (y - lo_y) / (hi_y - lo_y))

    groups = {g: [] for g in range(17)}
    for f in kg.spatial:
        g = spatial_group(kg.relations[f.relation])
        if f.head != road or g is None:
            continue
        vals = [h.attribute for h in kg.spatial if h.relation == f.relation]
        if f.attribute is None or max(vals) == min(vals):
            x = 1.0
        else:
            x = (f.attribute - min(vals)) / (max(vals) - min(vals))
        groups[g].append(attribute_augment(RelationPath((f.relation,), f.tail, "ComplEx"), [x], ynorm(f.tail), es))
    for j, f in enumerate(kg.temporal):
        g = temporal_group(kg.relations[f.relation])
        if f.head != road or g is None:
            continue
        cols = [k for k, h in enumerate(kg.temporal) if h.relation == f.relation]
        tr = X[np.ix_(train, cols)]
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore")
            lo, hi = np.nanmin(tr), np.nanmax(tr)
        v = X[t, j]
        x = 1.0 if np.isnan(v) or hi == lo else min(max((v - lo) / (hi - lo), 0.0), 1.0)
        groups[g].append(attribute_augment(RelationPath((f.relation,), f.tail, "KG2E"), [x], ynorm(f.tail), et))
    out = np.zeros((17, 6))
    out[0] = es.entity_vector(road)
    out[10] = et.entity_vector(road)
    for g, vs in groups.items():
        if vs:
            out[g] = np.mean(vs, axis=0)
    return out


def test_context_tensor_matches_per_fact_oracle(setup):
    city, series, kg, es, et = setup
    train = np.arange(200)
    ct = build_context_tensor(kg, es, et, city, series, train_slots=train)
    assert ct.spatial.shape == (8, 10, 6) and ct.temporal.shape == (288, 8, 7, 6)
    for t, n in [(0, 0), (7, 3), (150, 5), (287, 7)]:
        np.testing.assert_allclose(ct.cell(t, n), _oracle_cell(kg, es, et, city, series, t, n, train),
                                   rtol=1e-10, atol=1e-12)


def test_context_tensor_static_groups_and_empty_pool(setup):
    city, series, kg, es, et = setup
    ct = build_context_tensor(kg, es, et, city, series)
    dense = ct.at([3, 250])
    np.testing.assert_array_equal(dense[0, :, :10], dense[1, :, :10])
    assert dense.shape == (2, 8, 17, 6) and np.isfinite(dense).all()
    kg2 = build_kg(city, series, BufferConfig([10]), 1, TemporalConfig(past_minutes=[10]))
    land_roads = {f.head for f in kg2.spatial if kg2.relations[f.relation].startswith("hasLand")}
    ct2 = build_context_tensor(kg2, random_set("TransE", len(kg2.entities), len(kg2.relations), dim=6, rel_dim=6),
                               random_set("TransE", len(kg2.entities), len(kg2.relations), dim=6, rel_dim=6),
                               city, series)
    for n in range(8):
        if kg2.entity_id(road_name(n), "road") not in land_roads:
            assert np.all(ct2.spatial[n, 3] == 0.0)


def test_fact_order_and_affine_scaling_invariance(setup):
    city, series, kg, es, et = setup
    base = build_context_tensor(kg, es, et, city, series)
    from ckg_traffic.kg import KnowledgeGraph
    doc = kg.to_json()
    rng = np.random.default_rng(0)
    doc["spatial"] = [doc["spatial"][i] for i in rng.permutation(len(doc["spatial"]))]
    # scale every POI count by a positive constant
    doc["spatial"] = [[h, r, t, (x * 3.5 if x is not None and kg.relations[r].startswith("hasPoi") else x)]
                      for h, r, t, x in doc["spatial"]]
    other = build_context_tensor(KnowledgeGraph.from_json(doc), es, et, city, series)
    np.testing.assert_allclose(other.spatial, base.spatial, rtol=1e-12, atol=1e-14)


def test_missing_embedding(setup):
    city, series, kg, es, et = setup
    short = random_set("ComplEx", 3, len(kg.relations), dim=6, rel_dim=6)
    with pytest.raises(MissingEmbedding):
        build_context_tensor(kg, short, et, city, series)


def test_serialisation_roundtrip(setup, tmp_path):
    city, series, kg, es, et = setup
    ct = build_context_tensor(kg, es, et, city, series)
    ct.save(tmp_path / "ctx.bin")
    back = ContextTensor.load(tmp_path / "ctx.bin")
    assert back.spatial.tobytes() == ct.spatial.tobytes() and back.temporal.tobytes() == ct.temporal.tobytes()
    header = (tmp_path / "ctx.bin").read_bytes().split(b"\n", 1)[0]
    assert b'"groups":17' in header and b'"group_labels"' in header
