"""One test per acceptance criterion, with the contract's tolerances and budgets."""
import csv
import json
import time
from collections import defaultdict

import numpy as np
import pytest

import oracles
from ckg_traffic import cli
from ckg_traffic import engine as E
from ckg_traffic import kge as K
from ckg_traffic.forecast import (ForecastConfig, build_model, context_features, dcgru_cell,
                                  diffusion_supports, export_heatmaps, init_attention, init_dcgru, mhsa,
                                  train_forecaster)
from ckg_traffic.integration import MinMax, RelationPath, attribute_augment, fit_minmax, path_embed
from ckg_traffic.kg import BufferConfig, build_spatial_unit
from ckg_traffic.ranking import evaluate_mr, evaluate_unit
from ckg_traffic.synth import generate_city
from test_forecast import line_graph, micro_forecaster, toy_problem
from test_kge import random_set

INSTANCES = 20

# Settings for the end-to-end ordering run (criterion 7).
ORDERING_CONFIG = {
    "seed": 0,
    "city": {"n_roads": 50, "n_days": 7},
    "kg": {"buffer": "10-100", "link_order": 6, "past_minutes": 60, "temporal_links": "H"},
    "embed": {"spatial_family": "ComplEx", "temporal_family": "KG2E", "dim": 20, "rel_dim": 20, "epochs": 50},
    "forecast": {"variants": ["baseline", "S", "T", "ST"], "seeds": [0, 1, 2], "epochs": 16,
                 "hidden": 16, "batch_size": 32, "lr": 2e-3, "milestones": [10, 14]},
}

# Sweep grid of criterion 8 on a 30-road city.
SWEEP_CONFIG = {
    "seed": 0,
    "city": {"n_roads": 30, "n_days": 2},
    "eval_mr": {"families": list(K.FAMILIES), "buffers": ["10-100", "100-500", "10-500"],
                "spatial_links": ["-", 6], "past_windows": [10, 20, 30, 40, 50, 60],
                "temporal_links": ["-", "HDW"], "sides": ["both"]},
}


def _write_config(tmp_path, doc):
    doc = dict(doc, output=str(tmp_path / "out"))
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


# 1 -----------------------------------------------------------------------------------

def test_1_gradient_correctness():
    start = time.perf_counter()
    failures = []
    for family in K.FAMILIES:
        for seed in range(INSTANCES):
            rng = np.random.default_rng(1000 + seed)
            emb = random_set(family, 5, 3, dim=4, rel_dim=4, seed=seed)
            ent = {k: E.parameter(v) for k, v in emb.entity.items()}
            rel = {k: E.parameter(v) for k, v in emb.relation.items()}
            tr = np.c_[rng.integers(0, 5, 3), rng.integers(0, 3, 3), rng.integers(0, 5, 3)]
            w = rng.normal(size=3)
            params = {f"e.{k}": v for k, v in ent.items()} | {f"r.{k}": v for k, v in rel.items()}
            rep = E.grad_check(lambda: (K._score_rows(family, ent, rel, tr[:, 0], tr[:, 1], tr[:, 2]) * w).sum(),
                               params, tol=1e-4)
            if not rep.passed:
                failures.append((family, seed, rep.worst))
    for seed in range(INSTANCES):
        rng = np.random.default_rng(seed)
        causal = bool(seed % 2)
        blk = init_attention(rng, 8, 2, causal=causal)
        X = E.parameter(rng.normal(size=(5, 8)))
        w = rng.normal(size=(5, 8))
        params = {"X": X, "Wq": blk.Wq, "Wk": blk.Wk, "Wv": blk.Wv, "W0": blk.W0}
        rep = E.grad_check(lambda: E.sum_(mhsa(X, blk, causal)[0] * w), params, tol=1e-4)
        if not rep.passed:
            failures.append(("attention", seed, rep.worst))
    sup = diffusion_supports(line_graph(3), 2)
    for seed in range(INSTANCES):
        rng = np.random.default_rng(seed)
        p = init_dcgru(rng, 2, 3, len(sup))
        x = E.parameter(rng.normal(size=(3, 2, 2)))
        h = E.parameter(rng.normal(size=(3, 2, 3)))
        w = rng.normal(size=(3, 2, 3))
        rep = E.grad_check(lambda: E.sum_(dcgru_cell(x, h, sup, p) * w), {**p, "x": x, "h": h}, tol=1e-4)
        if not rep.passed:
            failures.append(("dcgru", seed, rep.worst))
    for seed in range(INSTANCES):
        model, loss = micro_forecaster(seed)
        rep = E.grad_check(loss, model.params, step=1e-6, tol=1e-3, max_elems=5,
                           rng=np.random.default_rng(seed))
        if not rep.passed:
            failures.append(("micro", seed, rep.worst))
    assert not failures, failures
    assert time.perf_counter() - start < 60.0


# 2 -----------------------------------------------------------------------------------

def test_2_mr_oracle_equivalence():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        family = K.FAMILIES[seed % len(K.FAMILIES)]
        n, m, n_rel = int(rng.integers(4, 31)), int(rng.integers(5, 101)), int(rng.integers(1, 4))
        # small integer parameters make score ties common
        emb = random_set(family, n, n_rel, dim=2, rel_dim=2, seed=seed, integer=family != "KG2E")
        tr = np.c_[rng.integers(0, n, m), rng.integers(0, n_rel, m), rng.integers(0, n, m)]
        rep = evaluate_mr(tr, emb)
        assert (rep.mr_left, rep.mr_right, rep.mr_both) == oracles.mr_oracle(tr.tolist(), emb, list(range(n)))
    n = 13
    flat = K.EmbeddingSet("TransE", 2, 2, {"E": np.ones((n, 2))}, {"R": np.zeros((1, 2))}, np.arange(n), np.arange(1))
    rep = evaluate_mr(np.array([[0, 0, 5], [12, 0, 3]]), flat)
    assert rep.mr_left == rep.mr_right == rep.mr_both == (n + 1) / 2


# 3 -----------------------------------------------------------------------------------

def test_3_model_reductions():
    rng = np.random.default_rng(3)
    h, r, t = (rng.normal(size=(100, 6)) for _ in range(3))
    eye = np.broadcast_to(np.eye(6), (100, 6, 6)).copy()
    assert np.array_equal(K.score_transr(h, r, t, eye).data, K.score_transe(h, r, t).data)

    M = rng.normal(size=(100, 6, 6))
    got = K.score_rescal(h, t, M).data
    want = np.array([sum(h[n, i] * M[n, i, j] * t[n, j] for i in range(6) for j in range(6)) for n in range(100)])
    np.testing.assert_allclose(got, want, rtol=1e-12)
    ints = [rng.integers(-3, 4, size=s).astype(float) for s in ((100, 6), (100, 6, 6), (100, 6))]
    exact = np.array([sum(ints[0][n, i] * ints[1][n, i, j] * ints[2][n, j] for i in range(6) for j in range(6))
                      for n in range(100)])
    assert np.array_equal(K.score_rescal(ints[0], ints[2], ints[1]).data, exact)

    real_r = np.concatenate([rng.normal(size=(100, 3)), np.zeros((100, 3))], axis=1)
    assert np.array_equal(K.score_complex(h, real_r, t).data, K.score_complex(t, real_r, h).data)


# 4 -----------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def spatial_unit():
    kg = build_spatial_unit(generate_city(150, seed=1), BufferConfig([30.0]), 1)
    return kg


@pytest.mark.parametrize("family", ["TransE", "ComplEx"])
def test_4_embedding_training_efficacy(spatial_unit, family):
    kg = spatial_unit
    n_ent = len(kg.unit_entities("spatial"))
    assert 180 <= n_ent <= 220 and 1500 <= len(kg.triples("spatial")) <= 2500
    start = time.perf_counter()
    emb = K.train(kg, "spatial", family, K.TrainConfig(epochs=500, seed=0))
    rep = evaluate_unit(kg, "spatial", emb, side="both")
    assert time.perf_counter() - start < 300.0
    assert rep.mr_both <= (n_ent + 1) / 10


# 5 -----------------------------------------------------------------------------------

def test_5_causal_mask_and_sequence_heatmap(tmp_path):
    speed, W, ctx = toy_problem()
    cfg = ForecastConfig(a=12, b=3, hidden=6, seq_out=8, epochs=2, batch_size=16, lr=3e-3, seed=5)
    res = train_forecaster(speed, W, ctx, cfg, "ST")
    model = res.model
    rng = np.random.default_rng(0)
    cells = rng.normal(size=(12, 4, 17, 20))
    windows = np.arange(12)[None, :]
    with E.no_grad():
        base = context_features(model, cells, windows).data
        for j in range(1, 12):
            pert = cells.copy()
            pert[j:] += rng.normal(size=pert[j:].shape) * 3.0
            out = context_features(model, pert, windows).data
            assert out[:j].tobytes() == base[:j].tobytes()
            assert not np.array_equal(out[j], base[j])
    _, seq_map = export_heatmaps(model, tmp_path)
    assert seq_map.shape == (12, 12)
    assert np.all(seq_map[np.triu_indices(12, 1)] == 0.0)
    np.testing.assert_allclose(seq_map.sum(axis=1), 1.0, atol=1e-6)
    grid = np.loadtxt(tmp_path / "heatmap_sequence.csv", delimiter=",", skiprows=1, usecols=range(1, 13))
    assert grid.shape == (12, 12) and np.all(np.triu(grid, 1) == 0.0)


# 6 -----------------------------------------------------------------------------------

def test_6_integration_identities():
    rng = np.random.default_rng(6)
    for family in K.FAMILIES:
        emb = random_set(family, 4, 3, dim=4, rel_dim=4, seed=2)
        for r in range(3):
            path = RelationPath((r,), 1, family)
            assert np.array_equal(attribute_augment(path, [1.0], 1.0, emb), path_embed(path, emb))
    for family in ("TransE", "KG2E"):
        emb = random_set(family, 4, 2, seed=1)
        path = RelationPath((1,), 2, family)
        assert np.array_equal(path_embed(path, emb), emb.entity_vector(2) + emb.relation_vector(1))
    for family, unit in (("ComplEx", np.r_[np.ones(2), np.zeros(2)]), ("NTN", None), ("RESCAL", None)):
        emb = random_set(family, 4, 2, seed=4)
        if family == "ComplEx":
            emb.relation["re"][0], emb.relation["im"][0] = unit[:2], unit[2:]
        elif family == "NTN":
            emb.relation["u"][0] = 1.0
        else:
            emb.relation["M"][0] = np.eye(4)
        assert np.array_equal(path_embed(RelationPath((0,), 3, family), emb), emb.entity_vector(3))
    x = rng.normal(size=200) * 40
    out = fit_minmax(x[:140]).apply(x)
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert np.all(MinMax(5.0, 5.0).apply(np.array([5.0, 5.0])) == 1.0)
    assert np.all(fit_minmax(np.full(7, 2.5)).apply(np.full(7, 2.5)) == 1.0)


# 7 -----------------------------------------------------------------------------------

@pytest.mark.slow
def test_7_end_to_end_ordering(tmp_path):
    path = _write_config(tmp_path, ORDERING_CONFIG)
    start = time.perf_counter()
    assert cli.main(["all", "--config", str(path)]) == 0
    elapsed = time.perf_counter() - start
    with open(tmp_path / "out" / "forecast" / "metrics.csv") as fh:
        rows = [r for r in csv.DictReader(fh) if r["horizon_min"] == "avg"]
    per_model = defaultdict(list)
    for r in rows:
        per_model[r["model"]].append(float(r["MAE"]))
    mean = {m: float(np.mean(v)) for m, v in per_model.items()}
    assert all(len(v) == 3 for v in per_model.values())
    print("avg MAE by model:", mean, "seconds:", round(elapsed))
    base, st, s, t = mean["baseline"], mean["CKG-ST"], mean["CKG-S"], mean["CKG-T"]
    assert st <= min(s, t) and max(s, t) <= base
    assert st <= 0.98 * base
    assert elapsed < 1800.0


# 8 -----------------------------------------------------------------------------------

@pytest.mark.slow
def test_8_sweep_machinery(tmp_path):
    path = _write_config(tmp_path, SWEEP_CONFIG)
    start = time.perf_counter()
    assert cli.main(["synth", "--config", str(path)]) == 0
    assert cli.main(["eval-mr", "--config", str(path)]) == 0
    assert cli.main(["report", "--config", str(path)]) == 0
    elapsed = time.perf_counter() - start
    rep = tmp_path / "out" / "report"
    families = list(K.FAMILIES)

    def grid(name):
        with open(rep / name) as fh:
            return list(csv.reader(fh))

    g1 = grid("table_I_spatial_buffer.csv")
    assert g1[0][1:] == [f"Buffer[{b}] Link[{l}]" for b in ("10-100", "100-500", "10-500") for l in ("-", "6")]
    g3 = grid("table_III_temporal_past.csv")
    assert g3[0][1:] == [f"Past[{p}] [{l}]" for p in (10, 20, 30, 40, 50, 60) for l in ("-", "HDW")]
    for g in (g1, g3):
        assert [row[0] for row in g[1:]] == families
        assert all(np.isfinite(float(v)) and float(v) >= 1.0 for row in g[1:] for v in row[1:])
    g2, g4 = grid("table_II_spatial_link.csv"), grid("table_III_temporal_link.csv")
    assert g2[0] == ["model", "config", "Link[-]", "Link[6]"] and len(g2) == 1 + 6 * 3
    assert g4[0] == ["model", "config", "[-]", "[HDW]"] and len(g4) == 1 + 6 * 6
    for g in (g2, g4):
        assert list(dict.fromkeys(row[0] for row in g[1:])) == families
        assert all(np.isfinite(float(v)) and float(v) >= 1.0 for row in g[1:] for v in row[2:])
    assert elapsed < 1200.0


# 9 -----------------------------------------------------------------------------------

DETERMINISM_CONFIG = {
    "seed": 11,
    "city": {"n_roads": 10, "n_days": 2},
    "kg": {"buffer": "10-100", "link_order": 3, "past_minutes": 30},
    "embed": {"dim": 20, "rel_dim": 20, "epochs": 3},
    "eval_mr": {"families": ["TransR", "KG2E"], "buffers": ["10-100"], "spatial_links": ["-", 6],
                "past_windows": [10], "temporal_links": ["HDW"], "epochs": 2},
    "forecast": {"variants": ["baseline", "S", "T", "ST"], "seeds": [0, 1], "epochs": 1, "hidden": 4,
                 "seq_out": 4, "batch_size": 32},
}


def _tree(root):
    return {str(f.relative_to(root)): f.read_bytes() for f in sorted(root.rglob("*")) if f.is_file()}


def test_9_determinism(tmp_path):
    trees = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        path = _write_config(d, DETERMINISM_CONFIG)
        for stage in ("synth", "build-kg", "embed", "eval-mr", "integrate", "forecast", "report"):
            assert cli.main([stage, "--config", str(path)]) == 0, stage
        trees.append(_tree(d / "out"))
    assert trees[0].keys() == trees[1].keys()
    differing = [k for k in trees[0] if trees[0][k] != trees[1][k]]
    assert not differing, differing
    stages = {k.split("/")[0] for k in trees[0]}
    assert stages >= {"city", "kg", "embed", "mr", "context", "forecast", "report"}
