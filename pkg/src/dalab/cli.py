"""Command-line entry point: ``dalab <command> --config cfg.json --out DIR``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiments as ex
from .data import save_csv


def _config(args, command: str) -> dict:
    user = ex.load_config(args.config) if args.config else {}
    user = dict(user)
    user["command"] = command
    if args.out:
        user["out"] = args.out
    cfg = ex.resolve_config(user)
    if args.seed is not None:
        cfg["seeds"] = [args.seed]
        cfg["certify"]["seed"] = args.seed
        cfg["divergence"]["seed"] = args.seed
    return cfg


def _prepare(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    ex.atomic_write(out / "config.json", ex._dump(cfg))
    return out


def cmd_gen_data(cfg, args) -> int:
    out = _prepare(cfg)
    src, tgt = ex.load_datasets(cfg["dataset"])
    save_csv(src, out / "source.csv")
    save_csv(tgt, out / "target.csv")
    print(f"wrote {len(src)} source and {len(tgt)} target rows to {out}")
    return 0


def _single(cfg, args, method: str) -> int:
    cfg["method"] = method
    cfg["axis"], cfg["axis_values"], cfg["mdm"]["rows"] = "none", [], []
    cfg["seeds"] = cfg["seeds"][:1]
    ex.validate_sweep(cfg)
    out = _prepare(cfg)
    task = ex.sweep_tasks(cfg)[0]
    src, tgt = ex.load_datasets(cfg["dataset"])
    net, rep = ex._train(cfg, task, src, tgt)
    ex.atomic_write(out / "report.csv", rep.to_csv())
    net.save(out / "model.json")
    summary = {"method": rep.method, "aligned_layers": rep.aligned_layers, "status": rep.status,
               "message": rep.message, "selected_epoch": rep.selected_epoch}
    if rep.epochs:
        summary.update(src_err=rep.selected.src_val_err, tgt_err=rep.selected.tgt_err,
                       final_tgt_err=rep.final.tgt_err)
    ex.atomic_write(out / "summary.json", ex._dump(summary))
    print(json.dumps(summary, sort_keys=True))
    return 0 if rep.status == "ok" else 1


def cmd_train(cfg, args) -> int:
    return _single(cfg, args, cfg["method"] if cfg["method"] != "mdm" else "dann")


def cmd_mdm(cfg, args) -> int:
    return _single(cfg, args, "mdm")


def cmd_sweep(cfg, args) -> int:
    res = ex.run_experiment(cfg, jobs=args.jobs)
    for a in res["aggregate"]:
        print(f"{a['axis_value']}: tgt {a['tgt_err_mean']:.4f} +- {a['tgt_err_std']:.4f} "
              f"(n={a['n_seeds']})")
    if res["failed"]:
        print(f"{res['failed']} run(s) failed; see raw.csv", file=sys.stderr)
        return 1
    return 0


def cmd_divergence(cfg, args) -> int:
    dc = cfg["divergence"]
    if dc["mode"] == "proxy":
        out = _prepare(cfg)
        res = ex.layer_proxy(dc, cfg["dataset"], seed=dc["seed"])
        ex.atomic_write(out / "divergence.json", ex._dump(res))
        print(json.dumps(res, sort_keys=True))
        return 0
    if dc["mode"] != "exact":
        raise ex.ConfigError(f"unknown divergence mode {dc['mode']!r}; expected 'exact' or 'proxy'")
    inst = ex.divergence_instance(dc)
    out = _prepare(cfg)
    table = ex.divergence_table(inst, dc["budget"])
    ex.atomic_write(out / "divergence.csv", table)
    inst.save(out / "instance.json")
    sys.stdout.write(table)
    return 0


def cmd_certify(cfg, args) -> int:
    cc = cfg["certify"]
    ex.instance_sizes(cc["sizes"])
    summary, mono, witnesses, n = ex.certify_campaign(cc)
    out = _prepare(cfg)
    ex.atomic_write(out / "summary.csv", summary)
    ex.atomic_write(out / "monotonicity.csv", mono)
    ex.atomic_write(out / "witnesses.json", ex._dump(witnesses))
    rows = summary.count("\n") - 1
    print(f"certified {cc['instances']} instances, {rows} bound rows, {n} violation(s)")
    for w in witnesses:
        print("violation: " + json.dumps(w, sort_keys=True))
    return 1 if n else 0


def cmd_report(cfg, args) -> int:
    out = Path(cfg["out"])
    if not (out / "raw.csv").exists():
        raise ex.ConfigError(f"{out / 'raw.csv'} not found")
    agg = ex.regenerate(out)
    print(f"regenerated aggregate.csv and chart.svg from {len(agg)} axis value(s)")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "mdm": cmd_mdm,
    "sweep": cmd_sweep,
    "divergence": cmd_divergence,
    "certify-bounds": cmd_certify,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dalab", description="Layer-split domain adaptation experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON config; omitted keys take their defaults")
        s.add_argument("--seed", type=int, help="run this single seed instead of the config's list")
        s.add_argument("--jobs", type=int, default=1, help="parallel runs for sweeps")
        s.add_argument("--out", help="output directory (overrides the config)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        if args.command == "report":
            user = {"out": args.out} if args.out else (ex.load_config(args.config) if args.config else {})
            cfg = ex.resolve_config({"out": user.get("out", "out")})
        else:
            cfg = _config(args, args.command)
        return COMMANDS[args.command](cfg, args)
    except (ValueError, OSError) as exc:  # config, parse and budget errors
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
