"""Config-driven sweeps and certification campaigns.

A config is one JSON document. ``resolve_config`` fills every default so the
copy written next to the results describes the run completely. Sweeps run the
cartesian product of axis values and seeds, write one JSON file per run
atomically, then assemble the raw CSV, the aggregate CSV and the SVG chart
after all runs finish.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .bounds import certify_instance, monotonicity_check, summary_csv
from .data import DomainDataset, generate, load_csv
from .divergence import DEFAULT_BUDGET, FLAVORS, BudgetExceeded, exact_divergence, proxy_divergence
from .finite import FiniteInstance, InstanceSizes, corrupt_nesting, random_instance
from .model import LayeredNet
from .svgplot import line_chart
from .train import SCHEMES, TrainConfig, dann_train, mdm_train, source_only_train

AXES = ("encoder_depth", "split_layer", "hidden_width", "predictor_depth", "none")
METHODS = ("dann", "mdm", "source_only")
COMMANDS = ("gen-data", "train", "mdm", "sweep", "divergence", "certify-bounds", "report")

RAW_COLUMNS = ["axis_value", "seed", "src_err", "tgt_err", "selected_epoch", "wall_ms",
               "final_src_err", "final_tgt_err", "method", "status", "message"]
AGG_COLUMNS = ["axis_value", "tgt_err_mean", "tgt_err_std", "src_err_mean", "src_err_std", "n_seeds"]
MONO_COLUMNS = ["instance_id", "depth", "violations", "path_violations"]

DEFAULTS = {
    "command": "sweep",
    "dataset": {"generator": "moons_shift", "params": {}, "seed": 0, "source_csv": None, "target_csv": None},
    "net": {"depth": 6, "width": 32, "split_index": 3, "encoder_depth": 3, "predictor_depth": 3},
    "axis": "none",
    "axis_values": [],
    "method": "dann",
    "mdm": {"layers": None, "scheme": "uniform", "alpha0": 1.0, "rows": []},
    "train": {"alpha0": 1.0, "epochs": 50, "batch_size": 64, "lr": 1e-3, "patience": None,
              "val_fraction": 0.1, "disc_hidden": [64, 64]},
    "seeds": [0, 1, 2, 3, 4],
    "audit": False,
    "record_wall_ms": False,
    "certify": {"instances": 100, "seed": 0, "sizes": {}, "inject_corruption": False,
                "monotonicity": True, "budget": DEFAULT_BUDGET},
    "divergence": {"mode": "exact", "instance": None, "seed": 0, "sizes": {}, "budget": DEFAULT_BUDGET,
                   "model": None, "layer": 1},
    "out": "out",
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where + k!r}")
        if isinstance(base[k], dict) and k not in ("params", "sizes"):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where + k!r} must be an object")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(user: dict | None = None) -> dict:
    """Defaults overlaid with ``user``; raises ConfigError on unknown keys."""
    cfg = _merge(DEFAULTS, user or {})
    if cfg["command"] not in COMMANDS:
        raise ConfigError(f"unknown command {cfg['command']!r}; expected one of {COMMANDS}")
    return cfg


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def atomic_write(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# datasets and nets
# ---------------------------------------------------------------------------


def load_datasets(ds: dict) -> tuple[DomainDataset, DomainDataset]:
    if ds.get("source_csv") or ds.get("target_csv"):
        if not (ds.get("source_csv") and ds.get("target_csv")):
            raise ConfigError("dataset needs both source_csv and target_csv")
        return load_csv(ds["source_csv"], "source"), load_csv(ds["target_csv"], "target")
    return generate(ds["generator"], ds.get("params") or {}, seed=int(ds.get("seed", 0)))


def net_layout(net: dict, axis: str, value) -> tuple[int, int, int]:
    """``(depth, width, split_index)`` for one axis value."""
    depth, width, split = int(net["depth"]), int(net["width"]), int(net["split_index"])
    if axis == "split_layer":
        split = int(value)
    elif axis == "encoder_depth":
        split = int(value)
        depth = split + int(net["predictor_depth"])
    elif axis == "predictor_depth":
        split = int(net["encoder_depth"])
        depth = split + int(value)
    elif axis == "hidden_width":
        width = int(value)
    return depth, width, split


def _check_layout(depth, width, split, what):
    if depth < 2:
        raise ConfigError(f"{what}: total depth must be >= 2, got {depth}")
    if width < 1:
        raise ConfigError(f"{what}: width must be >= 1, got {width}")
    if not 1 <= split <= depth - 1:
        raise ConfigError(f"{what}: split index {split} outside [1, {depth - 1}]")


def validate_sweep(cfg: dict) -> None:
    """Everything that can be checked without training; raises before any run starts."""
    if cfg["axis"] not in AXES:
        raise ConfigError(f"unknown axis {cfg['axis']!r}; expected one of {AXES}")
    if cfg["method"] not in METHODS:
        raise ConfigError(f"unknown method {cfg['method']!r}; expected one of {METHODS}")
    seeds = cfg["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be a non-empty list of integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct")
    values = cfg["axis_values"]
    if cfg["axis"] == "none":
        if values:
            raise ConfigError("axis 'none' takes no axis_values")
    elif not values:
        raise ConfigError(f"axis {cfg['axis']!r} needs axis_values")
    elif len(set(map(str, values))) != len(values):
        raise ConfigError("axis_values must be distinct")
    for v in values:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"axis value {v!r} is not an integer")
    for v in values or [None]:
        _check_layout(*net_layout(cfg["net"], cfg["axis"], v), f"axis value {v}")
    for s in cfg["mdm"]["rows"]:
        if s not in SCHEMES:
            raise ConfigError(f"unknown MDM scheme {s!r} in mdm.rows")
    if cfg["mdm"]["scheme"] not in SCHEMES:
        raise ConfigError(f"unknown MDM scheme {cfg['mdm']['scheme']!r}")
    for task in sweep_tasks(cfg):
        _train_config(cfg, task, 2, 2)  # TrainConfig validation


def _train_config(cfg: dict, task: dict, d_in: int, n_classes: int) -> TrainConfig:
    depth, width, split = task["layout"]
    t = cfg["train"]
    kw = dict(widths=[d_in] + [width] * (depth - 1) + [n_classes], alpha0=float(t["alpha0"]),
              epochs=int(t["epochs"]), batch_size=int(t["batch_size"]), lr=float(t["lr"]),
              seed=int(task["seed"]), patience=t["patience"], val_fraction=float(t["val_fraction"]),
              disc_hidden=tuple(t["disc_hidden"]))
    if task["method"] == "mdm":
        m = cfg["mdm"]
        layers = m["layers"] if m["layers"] is not None else list(range(1, depth))
        kw.update(layers=layers, scheme=task["scheme"], alpha0=float(m["alpha0"]))
    elif task["method"] == "dann":
        kw.update(split_index=split)
    try:
        return TrainConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def sweep_tasks(cfg: dict) -> list[dict]:
    """Runs in output order: axis values (or 'none') then any MDM rows, each over all seeds."""
    axis = cfg["axis"]
    tasks = []
    for v in cfg["axis_values"] or [None]:
        label = "none" if v is None else str(v)
        for s in cfg["seeds"]:
            tasks.append({"axis_value": label, "seed": s, "method": cfg["method"],
                          "scheme": cfg["mdm"]["scheme"], "layout": net_layout(cfg["net"], axis, v)})
    for scheme in cfg["mdm"]["rows"]:
        for s in cfg["seeds"]:
            tasks.append({"axis_value": f"mdm_{scheme}", "seed": s, "method": "mdm", "scheme": scheme,
                          "layout": net_layout(cfg["net"], "none", None)})
    return tasks


def _train(cfg, task, src, tgt):
    tc = _train_config(cfg, task, src.dim, max(src.n_classes, tgt.n_classes))
    fn = {"dann": dann_train, "mdm": mdm_train, "source_only": source_only_train}[task["method"]]
    return fn(tc, src, tgt)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _run_name(task: dict) -> str:
    return f"{task['axis_value']}_seed{task['seed']}"


def run_task(cfg: dict, task: dict) -> dict:
    """One training run; never raises, a failure becomes a row with status 'failed'."""
    out = Path(cfg["out"]) / "runs"
    row = {"axis_value": task["axis_value"], "seed": task["seed"], "method": task["method"]
           if task["method"] != "mdm" else f"mdm_{task['scheme']}"}
    t0 = time.perf_counter()
    try:
        src, tgt = load_datasets(cfg["dataset"])
        net, rep = _train(cfg, task, src, tgt)
        if not rep.epochs:
            raise RuntimeError(rep.message or "no epoch completed")
        sel, fin = rep.selected, rep.final
        row.update(src_err=sel.src_val_err, tgt_err=sel.tgt_err, selected_epoch=rep.selected_epoch,
                   final_src_err=fin.src_val_err, final_tgt_err=fin.tgt_err, status=rep.status,
                   message=rep.message)
        if cfg["audit"]:
            perm = np.random.default_rng(task["seed"]).permutation(len(tgt))
            net_b, rep_b = _train(cfg, task, src, tgt.with_labels(tgt.labels[perm]))
            same = rep_b.selected_epoch == rep.selected_epoch and all(
                np.array_equal(net.params[k], net_b.params[k]) for k in net.params)
            row["audit_ok"] = int(same)
        atomic_write(out / f"{_run_name(task)}.csv", rep.to_csv())
    except Exception as exc:  # recorded as a failure row, the sweep continues
        row.update(status="failed", message=f"{type(exc).__name__}: {exc}")
    row["wall_ms"] = round(1000 * (time.perf_counter() - t0), 3)
    atomic_write(out / f"{_run_name(task)}.json", _dump(row))
    return row


def _run_star(args):
    return run_task(*args)


def raw_csv(rows: list[dict], record_wall_ms: bool = False, audit: bool = False) -> str:
    cols = RAW_COLUMNS + (["audit_ok"] if audit else [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c)) if c != "wall_ms" or record_wall_ms else "" for c in cols])
    return buf.getvalue()


def read_raw_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def aggregate(rows: list[dict]) -> list[dict]:
    """Mean and sample std per axis value over successful runs, in first-seen order."""
    order, groups = [], {}
    for r in rows:
        key = str(r["axis_value"])
        if key not in groups:
            order.append(key)
            groups[key] = []
        if r.get("status") in ("ok", "diverged") and r.get("tgt_err") not in (None, ""):
            groups[key].append((float(r["tgt_err"]), float(r["src_err"])))
    out = []
    for key in order:
        vals = np.array(groups[key], dtype=float).reshape(-1, 2)
        n = len(vals)
        ddof = 1 if n > 1 else 0
        mean = vals.mean(axis=0) if n else [math.nan, math.nan]
        std = vals.std(axis=0, ddof=ddof) if n else [math.nan, math.nan]
        out.append({"axis_value": key, "tgt_err_mean": float(mean[0]), "tgt_err_std": float(std[0]),
                    "src_err_mean": float(mean[1]), "src_err_std": float(std[1]), "n_seeds": n})
    return out


def aggregate_csv(agg: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGG_COLUMNS)
    for a in agg:
        w.writerow([_fmt(a[c]) for c in AGG_COLUMNS])
    return buf.getvalue()


def _is_int(s: str) -> bool:
    try:
        int(s)
        return True
    except ValueError:
        return False


def chart_svg(agg: list[dict], axis: str = "axis value") -> str:
    """Target error mean +- std against the numeric axis values; other rows become dashed lines."""
    pts = [a for a in agg if _is_int(a["axis_value"]) and a["n_seeds"]]
    others = {a["axis_value"]: (a["tgt_err_mean"], a["tgt_err_std"]) for a in agg
              if not _is_int(a["axis_value"]) and a["n_seeds"]}
    xs = [int(a["axis_value"]) for a in pts]
    series = {"target error": ([a["tgt_err_mean"] for a in pts], [a["tgt_err_std"] for a in pts])} if pts else {}
    if not pts and not others:
        others = {}
    return line_chart(xs, series, title="target error vs " + axis.replace("_", " "), xlabel=axis.replace("_", " "),
                      ylabel="target error", hlines=others)


def write_reports(out, rows: list[dict], axis: str, record_wall_ms: bool = False, audit: bool = False) -> list[dict]:
    out = Path(out)
    atomic_write(out / "raw.csv", raw_csv(rows, record_wall_ms, audit))
    timing = io.StringIO()
    tw = csv.writer(timing, lineterminator="\n")
    tw.writerow(["axis_value", "seed", "wall_ms"])
    tw.writerows([[r["axis_value"], r["seed"], _fmt(r.get("wall_ms"))] for r in rows])
    atomic_write(out / "timings.csv", timing.getvalue())
    return regenerate(out, axis)


def regenerate(out, axis: str | None = None) -> list[dict]:
    """Aggregate CSV and SVG chart from ``raw.csv`` alone."""
    out = Path(out)
    rows = read_raw_csv(out / "raw.csv")
    if axis is None:
        cfg_path = out / "config.json"
        axis = json.loads(cfg_path.read_text()).get("axis", "axis value") if cfg_path.exists() else "axis value"
    agg = aggregate(rows)
    atomic_write(out / "aggregate.csv", aggregate_csv(agg))
    atomic_write(out / "chart.svg", chart_svg(agg, axis))
    return agg


def run_experiment(cfg: dict, jobs: int = 1) -> dict:
    """Validate, run every (axis value, seed) task, then write raw/aggregate CSV and the chart."""
    cfg = resolve_config(cfg)
    validate_sweep(cfg)
    try:
        load_datasets(cfg["dataset"])
    except (ValueError, OSError, TypeError) as exc:
        raise ConfigError(f"dataset: {exc}") from None
    out = Path(cfg["out"])
    (out / "runs").mkdir(parents=True, exist_ok=True)
    atomic_write(out / "config.json", _dump(cfg))
    tasks = sweep_tasks(cfg)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_star, [(cfg, t) for t in tasks]))
    else:
        rows = [run_task(cfg, t) for t in tasks]
    agg = write_reports(out, rows, cfg["axis"], cfg["record_wall_ms"], cfg["audit"])
    return {"rows": rows, "aggregate": agg, "failed": sum(r["status"] == "failed" for r in rows)}


# ---------------------------------------------------------------------------
# bound certification
# ---------------------------------------------------------------------------


def instance_sizes(d: dict) -> InstanceSizes:
    kw = {}
    for k, v in d.items():
        if k not in InstanceSizes.__dataclass_fields__:
            raise ConfigError(f"unknown size key {k!r}")
        kw[k] = float(v) if k == "label_noise" else tuple(int(x) for x in v)
        if k != "label_noise" and (len(kw[k]) != 2 or kw[k][0] > kw[k][1] or kw[k][0] < 1):
            raise ConfigError(f"size range {k} must be [lo, hi] with 1 <= lo <= hi")
    return InstanceSizes(**kw)


def worst_case_pairs(sizes: InstanceSizes) -> int:
    """Largest hypothesis-pair enumeration any instance in the range can require."""
    h = sizes.funcs_per_layer[1] ** sizes.depth[1]
    return h * h


def certify_campaign(cc: dict, seed: int | None = None):
    """Generate instances and certify them; returns (summary csv, monotonicity csv, witnesses, n_violations)."""
    sizes = instance_sizes(cc["sizes"])
    if sizes.depth[0] < 2:
        raise ConfigError("instance depth must be >= 2")
    need = worst_case_pairs(sizes)
    if need > cc["budget"]:
        raise BudgetExceeded("campaign", need, cc["budget"])
    rng = np.random.default_rng(cc["seed"] if seed is None else seed)
    reports, mono_rows, witnesses = [], [], []
    for k in range(int(cc["instances"])):
        inst = random_instance(rng, sizes, f"inst{k:04d}")
        reps = certify_instance(inst, cc["budget"])
        reports += reps
        for r in reps:
            if r.violated:
                witnesses.append({"instance_id": r.instance_id, "check": "bounds", **r.to_dict()})
        if cc["monotonicity"]:
            fam = corrupt_nesting(inst.classes) if cc["inject_corruption"] else None
            m = monotonicity_check(inst, fam, cc["budget"])
            mono_rows.append([inst.instance_id, inst.classes.depth, m.violations,
                              "" if m.path_violations is None else m.path_violations])
            for w in m.witnesses:
                witnesses.append({"instance_id": inst.instance_id, "check": "monotonicity", **w})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MONO_COLUMNS)
    w.writerows(mono_rows)
    return summary_csv(reports), buf.getvalue(), witnesses, len(witnesses)


# ---------------------------------------------------------------------------
# divergences
# ---------------------------------------------------------------------------

DIVERGENCE_COLUMNS = ["split", "flavor", "g_index", "value", "numerator", "denominator"]


def divergence_table(instance: FiniteInstance, budget: int = DEFAULT_BUDGET) -> str:
    """Every exact flavor at every split; the latent flavor gets one row per encoder."""
    S, T = instance.source, instance.target
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DIVERGENCE_COLUMNS)
    for i in range(1, instance.classes.depth):
        c = instance.classes.at(i)
        for flavor in FLAVORS:
            gs = list(enumerate(c.G)) if flavor == "f_latent" else [("", None)]
            for gi, g in gs:
                est = exact_divergence(flavor, c, (S, T), g=g, budget=budget)
                w.writerow([i, flavor, gi, repr(est.value), est.extra["numerator"], est.extra["denominator"]])
    return buf.getvalue()


def divergence_instance(dc: dict, seed: int | None = None) -> FiniteInstance:
    if dc["instance"]:
        return FiniteInstance.load(dc["instance"])
    rng = np.random.default_rng(dc["seed"] if seed is None else seed)
    return random_instance(rng, instance_sizes(dc["sizes"]), "random")


def layer_proxy(dc: dict, ds: dict, seed: int = 0) -> dict:
    """Proxy divergence of a saved model's activations at ``dc['layer']``."""
    if not dc["model"]:
        raise ConfigError("proxy divergence needs divergence.model")
    net = LayeredNet.load(dc["model"])
    i = int(dc["layer"])
    if not 1 <= i <= net.depth - 1:
        raise ConfigError(f"layer {i} outside [1, {net.depth - 1}]")
    src, tgt = load_datasets(ds)
    est = proxy_divergence(net.propagate(src.features, 1, i)[-1], net.propagate(tgt.features, 1, i)[-1], seed=seed)
    return {"layer": i, "value": est.value, "flavor": est.flavor, **est.extra}
