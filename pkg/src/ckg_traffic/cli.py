"""Experiment orchestrator: one JSON config, stages that talk only through files.

    ckg <stage> --config cfg.json [--seed N] [--jobs N]
    ckg --stage <stage> --config cfg.json

Stages: synth, build-kg, embed, eval-mr, integrate, forecast, report, all.
Output root: $CKG_OUT, else the config's ``output`` entry.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import kge as K
from .errors import CKGError, ConfigError, MissingArtifact, MissingEmbedding
from .forecast import VARIANTS, ForecastConfig, export_heatmaps, make_splits, train_forecaster, write_metrics_csv
from .integration import GROUP_LABELS, ContextTensor, build_context_tensor
from .kg import BUFFER_SETS, BufferConfig, KnowledgeGraph, TemporalConfig, build_kg
from .ranking import MR_COLUMNS, evaluate_unit, write_mr_csv
from .synth import generate_city, generate_series, load_city, save_city

log = logging.getLogger("ckg")

STAGES = ("synth", "build-kg", "embed", "eval-mr", "integrate", "forecast", "report")

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "output": "ckg_out",
    "city": {"n_roads": 50, "n_days": 7},
    "kg": {"buffer": "10-100", "link_order": 6, "past_minutes": 60, "temporal_links": "HDW", "resolution": 1.0},
    "embed": {"spatial_family": "ComplEx", "temporal_family": "KG2E", "dim": 40, "rel_dim": 40,
              "epochs": 500, "negatives": 10, "margin": 1.0, "batch_size": 128, "lr": 0.01},
    "eval_mr": {"families": list(K.FAMILIES), "buffers": ["10-100", "100-500", "10-500"],
                "spatial_links": ["-", 6], "past_windows": [10, 20, 30, 40, 50, 60],
                "temporal_links": ["-", "HDW"], "sides": ["both"],
                "dim": 16, "rel_dim": 16, "epochs": 50, "negatives": 4, "batch_size": 256, "lr": 0.02},
    "forecast": {"variants": list(VARIANTS), "seeds": None},
}

_FORECAST_KEYS = set(ForecastConfig().to_dict())


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            if path == "forecast." and k in _FORECAST_KEYS:
                out[k] = v
                continue
            raise ConfigError(f"unknown config key {path}{k}")
        out[k] = _merge(base[k], v, f"{path}{k}.") if isinstance(base[k], dict) and isinstance(v, dict) else v
    return out


def load_config(path: str | Path | None, seed: int | None = None) -> dict:
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc.msg} at line {exc.lineno}") from exc
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    cfg = _merge(DEFAULT_CONFIG, user)
    if seed is not None:
        cfg["seed"] = int(seed)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    fams = [cfg["embed"]["spatial_family"], cfg["embed"]["temporal_family"], *cfg["eval_mr"]["families"]]
    bad = [f for f in fams if f not in K.FAMILIES]
    if bad:
        raise ConfigError(f"unknown embedding families {bad}; choose from {list(K.FAMILIES)}")
    for b in [cfg["kg"]["buffer"], *cfg["eval_mr"]["buffers"]]:
        if b not in BUFFER_SETS:
            raise ConfigError(f"unknown buffer set {b!r}; choose from {sorted(BUFFER_SETS)}")
    for o in [cfg["kg"]["link_order"], *cfg["eval_mr"]["spatial_links"]]:
        if _link_order(o) not in range(0, 13):
            raise ConfigError(f"spatial link order {o!r} outside - or 1..12")
    for s in [cfg["kg"]["temporal_links"], *cfg["eval_mr"]["temporal_links"]]:
        try:
            TemporalConfig.parse_links(s)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    for p in [cfg["kg"]["past_minutes"], *cfg["eval_mr"]["past_windows"]]:
        if not isinstance(p, int) or p < 10 or p % 10:
            raise ConfigError(f"past window {p!r} must be a positive multiple of 10 minutes")
    bad_v = set(cfg["forecast"]["variants"]) - set(VARIANTS)
    if bad_v:
        raise ConfigError(f"unknown forecast variants {sorted(bad_v)}")
    if cfg["city"]["n_roads"] < 2 or cfg["city"]["n_days"] < 1:
        raise ConfigError("city needs at least 2 roads and 1 day")
    sides = set(cfg["eval_mr"]["sides"]) - {"left", "right", "both"}
    if sides:
        raise ConfigError(f"unknown MR sides {sorted(sides)}")


def output_root(cfg: dict) -> Path:
    return Path(os.environ.get("CKG_OUT") or cfg["output"])


def _link_order(o) -> int:
    if o in ("-", None, 0, "0"):
        return 0
    try:
        return int(o)
    except (TypeError, ValueError):
        return -1


def _link_label(o) -> str:
    return "Link[-]" if _link_order(o) == 0 else f"Link[{_link_order(o)}]"


def _tlink_label(s: str) -> str:
    return "[-]" if s in ("-", "") else f"[{s}]"


def _temporal_cfg(past: int, links: str) -> TemporalConfig:
    return TemporalConfig(past_minutes=TemporalConfig.past_upto(past), link_kinds=TemporalConfig.parse_links(links))


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, separators=(",", ":"), sort_keys=True))


def _require(path: Path, what: str, exc=MissingArtifact) -> Path:
    if not path.exists():
        raise exc(f"{what} not found at {path}; run the producing stage first")
    return path


def _load_city(root: Path):
    _require(root / "city" / "city.json", "city")
    city, series = load_city(root / "city")
    if series is None:
        raise MissingArtifact(f"series missing under {root / 'city'}")
    return city, series


def _train_cfg(section: dict, seed: int) -> K.TrainConfig:
    keys = ("dim", "rel_dim", "epochs", "negatives", "margin", "batch_size", "lr")
    return K.TrainConfig(**{k: section[k] for k in keys if k in section}, seed=seed)


# -- stages -----------------------------------------------------------------

def stage_synth(cfg: dict, root: Path, jobs: int = 1) -> None:
    city = generate_city(cfg["city"]["n_roads"], seed=cfg["seed"])
    series = generate_series(city, cfg["city"]["n_days"], seed=cfg["seed"])
    save_city(root / "city", city, series)
    log.info("synth: %d roads, %d slots", city.n_roads, series.n_slots)


def stage_build_kg(cfg: dict, root: Path, jobs: int = 1) -> None:
    city, series = _load_city(root)
    k = cfg["kg"]
    kg = build_kg(city, series, BufferConfig.named(k["buffer"]), _link_order(k["link_order"]),
                  _temporal_cfg(k["past_minutes"], k["temporal_links"]), resolution=k["resolution"])
    kg.save(root / "kg" / "kg.json")
    log.info("build-kg: %d entities, %d spatial and %d temporal facts",
             len(kg.entities), len(kg.spatial), len(kg.temporal))


def embedding_path(root: Path, unit: str, family: str) -> Path:
    return root / "embed" / f"{unit}_{family}.bin"


def stage_embed(cfg: dict, root: Path, jobs: int = 1) -> None:
    kg = KnowledgeGraph.load(_require(root / "kg" / "kg.json", "knowledge graph"))
    e = cfg["embed"]
    tc = _train_cfg(e, cfg["seed"])
    jobs_list = [("spatial", e["spatial_family"]), ("temporal", e["temporal_family"])]
    summary = {}
    for unit, fam in jobs_list:
        emb = K.train(kg, unit, fam, tc)
        path = embedding_path(root, unit, fam)
        path.parent.mkdir(parents=True, exist_ok=True)
        emb.save(path)
        summary[unit] = {"family": fam, "file": path.name, "final_loss": emb.loss_history[-1]}
        log.info("embed: %s %s final loss %.4f", unit, fam, emb.loss_history[-1])
    _write_json(root / "embed" / "summary.json", summary)


def _mr_cell(args: tuple) -> list[dict]:
    kind, fam, axis, link, cfg, city_doc = args
    from .synth import City, CitySeries
    city = City.from_json(city_doc["city"])
    series = CitySeries.from_json(city_doc["series"], np.array(city_doc["speed"]))
    ev = cfg["eval_mr"]
    tc = _train_cfg(ev, cfg["seed"])
    if kind == "spatial":
        kg = build_kg(city, series, BufferConfig.named(axis), _link_order(link),
                      TemporalConfig(past_minutes=[10], link_kinds=[]), resolution=cfg["kg"]["resolution"])
        label, link_label = f"Buffer[{axis}]", _link_label(link)
    else:
        kg = build_kg(city, series, BufferConfig.named(cfg["kg"]["buffer"]), 0, _temporal_cfg(int(axis), link),
                      resolution=cfg["kg"]["resolution"])
        label, link_label = f"Past[{axis}]", _tlink_label(link)
    emb = K.train(kg, kind, fam, tc)
    rows = []
    for side in ev["sides"]:
        rep = evaluate_unit(kg, kind, emb, side)
        mr = {"left": rep.mr_left, "right": rep.mr_right, "both": rep.mr_both}[side]
        rows.append({"model": fam, "buffer_cfg": label, "link_cfg": link_label, "side": side, "MR": mr})
    return rows


def _run_cells(fn, cells: list, jobs: int) -> list:
    if jobs <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, cells))


def _city_doc(root: Path) -> dict:
    city, series = _load_city(root)
    return {"city": city.to_json(), "series": series.to_json(), "speed": series.speed.tolist()}


def stage_eval_mr(cfg: dict, root: Path, jobs: int = 1) -> None:
    ev = cfg["eval_mr"]
    doc = _city_doc(root)
    spatial = [("spatial", f, b, l, cfg, doc) for f in ev["families"] for b in ev["buffers"] for l in ev["spatial_links"]]
    temporal = [("temporal", f, p, l, cfg, doc) for f in ev["families"] for p in ev["past_windows"]
                for l in ev["temporal_links"]]
    out = root / "mr"
    out.mkdir(parents=True, exist_ok=True)
    for name, cells in (("spatial", spatial), ("temporal", temporal)):
        rows = [r for rs in _run_cells(_mr_cell, cells, jobs) for r in rs]
        write_mr_csv(out / f"mr_{name}.csv", rows, MR_COLUMNS)
        log.info("eval-mr: %d %s cells", len(cells), name)


def stage_integrate(cfg: dict, root: Path, jobs: int = 1) -> None:
    city, series = _load_city(root)
    kg = KnowledgeGraph.load(_require(root / "kg" / "kg.json", "knowledge graph"))
    e = cfg["embed"]
    sets = []
    for unit, fam in (("spatial", e["spatial_family"]), ("temporal", e["temporal_family"])):
        path = _require(embedding_path(root, unit, fam), f"{unit} {fam} embedding checkpoint", MissingEmbedding)
        sets.append(K.EmbeddingSet.load(path))
    n_train = make_splits(series.n_slots, ForecastConfig(**_forecast_overrides(cfg))).n_train_slots
    ct = build_context_tensor(kg, sets[0], sets[1], city, series, train_slots=np.arange(n_train))
    (root / "context").mkdir(parents=True, exist_ok=True)
    ct.save(root / "context" / "context.bin")
    log.info("integrate: context tensor %s + %s", ct.spatial.shape, ct.temporal.shape)


def _forecast_overrides(cfg: dict) -> dict:
    return {k: v for k, v in cfg["forecast"].items() if k in _FORECAST_KEYS and k != "seed"}


def forecast_seeds(cfg: dict) -> list[int]:
    s = cfg["forecast"]["seeds"]
    return [cfg["seed"] + i for i in range(3)] if s is None else [int(x) for x in s]


def _forecast_cell(args: tuple) -> list[dict]:
    variant, seed, cfg, root = args
    root = Path(root)
    city, series = _load_city(root)
    ctx = None
    if variant != "baseline":
        ctx = ContextTensor.load(_require(root / "context" / "context.bin", "context tensor"))
    fc = ForecastConfig(**_forecast_overrides(cfg), seed=seed)
    res = train_forecaster(series.speed, city.adjacency_matrix(), ctx, fc, variant,
                           log=lambda m: log.debug("seed %d %s", seed, m))
    d = root / "forecast" / f"seed{seed}"
    d.mkdir(parents=True, exist_ok=True)
    res.model.save(d / f"model_{variant}.bin")
    if variant == "ST":
        export_heatmaps(res.model, d)
    _write_json(d / f"history_{variant}.json", {"val_mae": res.val_history, "train_loss": res.train_history,
                                                 "best_epoch": res.best_epoch})
    log.info("forecast: %s seed %d avg MAE %.4f (%.0fs)", variant, seed, res.metrics[-1]["MAE"], res.seconds)
    label = "baseline" if variant == "baseline" else f"CKG-{variant}"
    return [dict(r, model=label, seed=seed) for r in res.metrics]


def stage_forecast(cfg: dict, root: Path, jobs: int = 1) -> None:
    _load_city(root)
    cells = [(v, s, cfg, str(root)) for v in cfg["forecast"]["variants"] for s in forecast_seeds(cfg)]
    rows = [r for rs in _run_cells(_forecast_cell, cells, jobs) for r in rs]
    write_metrics_csv(root / "forecast" / "metrics.csv", rows)


# -- report ------------------------------------------------------------------

def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_grid(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _unique(seq) -> list:
    return list(dict.fromkeys(seq))


def mr_grids(rows: list[dict], side: str = "both") -> dict[str, tuple[list[str], list[list]]]:
    """Pivot long MR rows into (a) models x (config, link) and (b)
    (model, config) x link grids."""
    rows = [r for r in rows if r["side"] == side]
    models = _unique(r["model"] for r in rows)
    cfgs = _unique(r["buffer_cfg"] for r in rows)
    links = _unique(r["link_cfg"] for r in rows)
    val = {(r["model"], r["buffer_cfg"], r["link_cfg"]): f"{float(r['MR']):.2f}" for r in rows}
    h1 = ["model"] + [f"{c} {l}" for c in cfgs for l in links]
    g1 = [[m] + [val.get((m, c, l), "") for c in cfgs for l in links] for m in models]
    h2 = ["model", "config"] + links
    g2 = [[m, c] + [val.get((m, c, l), "") for l in links] for m in models for c in cfgs]
    return {"by_config": (h1, g1), "by_link": (h2, g2)}


def forecast_table(rows: list[dict], horizons=("10", "60", "120", "avg")) -> tuple[list[str], list[list]]:
    header = ["model"] + [f"{h}{'' if h == 'avg' else ' min'} {m}" for h in horizons for m in ("MAE", "MAPE")]
    out = []
    for model in _unique(r["model"] for r in rows):
        line = [model]
        for h in horizons:
            for m in ("MAE", "MAPE"):
                v = np.array([float(r[m]) for r in rows if r["model"] == model and r["horizon_min"] == h])
                line.append(f"{v.mean():.2f}±{v.std():.2f}" if len(v) else "")
        out.append(line)
    return header, out


def stage_report(cfg: dict, root: Path, jobs: int = 1) -> None:
    rep = root / "report"
    rep.mkdir(parents=True, exist_ok=True)
    made = []
    for unit, names in (("spatial", ("table_I_spatial_buffer.csv", "table_II_spatial_link.csv")),
                        ("temporal", ("table_III_temporal_past.csv", "table_III_temporal_link.csv"))):
        src = root / "mr" / f"mr_{unit}.csv"
        if not src.exists():
            continue
        rows = _read_csv(src)
        for side in _unique(r["side"] for r in rows):
            grids = mr_grids(rows, side)
            for key, name in zip(("by_config", "by_link"), names):
                fname = name if side == "both" else name.replace(".csv", f"_{side}.csv")
                _write_grid(rep / fname, *grids[key])
                made.append(fname)
    metrics = root / "forecast" / "metrics.csv"
    if metrics.exists():
        _write_grid(rep / "table_IV_forecast.csv", *forecast_table(_read_csv(metrics)))
        made.append("table_IV_forecast.csv")
        maps = sorted((root / "forecast").glob("seed*/heatmap_context.csv"))
        if maps:
            ctx = np.mean([_read_heatmap(p) for p in maps], axis=0)
            seq = np.mean([_read_heatmap(p.with_name("heatmap_sequence.csv")) for p in maps], axis=0)
            _write_grid(rep / "heatmap_context.csv", ["group"] + list(GROUP_LABELS),
                        [[lab] + [f"{v:.6f}" for v in row] for lab, row in zip(GROUP_LABELS, ctx)])
            _write_grid(rep / "heatmap_sequence.csv", ["slot"] + [f"t{j}" for j in range(len(seq))],
                        [[f"t{i}"] + [f"{v:.6f}" for v in row] for i, row in enumerate(seq)])
            made += ["heatmap_context.csv", "heatmap_sequence.csv"]
    if not made:
        raise MissingArtifact(f"nothing to report under {root}; run eval-mr or forecast first")
    _write_json(rep / "index.json", {"tables": made})
    log.info("report: %s", ", ".join(made))


def _read_heatmap(path: Path) -> np.ndarray:
    rows = _read_csv(path)
    return np.array([[float(v) for k, v in r.items() if k not in ("group", "slot")] for r in rows])


STAGE_FUNCS = {"synth": stage_synth, "build-kg": stage_build_kg, "embed": stage_embed, "eval-mr": stage_eval_mr,
               "integrate": stage_integrate, "forecast": stage_forecast, "report": stage_report}

# stage order for "all": the MR sweep is optional and runs only when asked for by name
PIPELINE = ("synth", "build-kg", "embed", "integrate", "forecast", "report")


def run_stage(name: str, cfg: dict, root: Path | None = None, jobs: int = 1) -> None:
    root = root or output_root(cfg)
    root.mkdir(parents=True, exist_ok=True)
    names = PIPELINE if name == "all" else (name,)
    for n in names:
        if n not in STAGE_FUNCS:
            raise ConfigError(f"unknown stage {n!r}; choose from {list(STAGES) + ['all']}")
        STAGE_FUNCS[n](cfg, root, jobs)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ckg", description="Context-aware KG traffic forecasting experiments.")
    p.add_argument("stage_pos", nargs="?", metavar="stage", help=f"one of {', '.join(STAGES)}, all")
    p.add_argument("--stage", dest="stage_opt", help="same as the positional stage")
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes for sweep cells")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s",
                        stream=sys.stderr)
    try:
        stage = args.stage_opt or args.stage_pos
        if stage is None:
            raise ConfigError("no stage given")
        if args.stage_opt and args.stage_pos and args.stage_opt != args.stage_pos:
            raise ConfigError("positional stage and --stage disagree")
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args.config, args.seed)
        run_stage(stage, cfg, jobs=args.jobs)
    except CKGError as exc:
        print(f"ERROR {exc.code} {' '.join(str(exc).split())}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - last-resort single-line report
        print(f"ERROR {type(exc).__name__} {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
