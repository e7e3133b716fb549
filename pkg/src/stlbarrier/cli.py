"""Command-line entry point.

Exit codes::

    0  success
    1  unexpected error
    2  invalid configuration or arguments
    3  infeasible scenario (empty omega box, unsatisfiable initial states,
       or an infeasible QP under --strict)
    4  checkpoint does not match the configuration
    5  rollout or curve files missing or lacking expected columns

Threads: ``STLBARRIER_NUM_THREADS`` (or ``--threads``) sets the worker count
used by the batched QP solver.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import shutil
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__, controller, diffqp, hocbf
from .config import ABLATIONS, ConfigError, describe, load_config, parse_config
from .nn import Tape, load_checkpoint, save_checkpoint

log = logging.getLogger("stlbarrier")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_HASH, EXIT_DATA = 0, 1, 2, 3, 4, 5
CHECKPOINT = "checkpoint.npz"
CURVES = "curves.csv"
REPORT = "construction.txt"
SUMMARY = "summary.csv"
META = "meta.json"
PLOT_KINDS = ("traj", "inputs", "multipliers", "curves")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# config and checkpoint helpers


def _config(args, fallback_raw: dict | None = None):
    if args.config is None:
        if fallback_raw is None:
            raise CliError("--config is required", EXIT_CONFIG)
        cfg = parse_config(fallback_raw)
    else:
        cfg = load_config(args.config)
    memory = None if getattr(args, "memory", None) is None else args.memory == "on"
    return cfg.with_overrides(ablation=getattr(args, "ablation", None), memory=memory,
                              iters=getattr(args, "iters", None), seed=getattr(args, "seed", None))


def _load(args):
    path = Path(args.checkpoint)
    if path.is_dir():
        path = path / CHECKPOINT
    if not path.is_file():
        raise CliError(f"checkpoint {path} not found", EXIT_DATA)
    store, meta = load_checkpoint(path)
    cfg = _config(args, meta.get("extra", {}).get("config"))
    if meta.get("config_hash") != cfg.config_hash():
        raise CliError(f"checkpoint hash {meta.get('config_hash')} does not match config hash "
                       f"{cfg.config_hash()}", EXIT_HASH)
    return cfg, store


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return v


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pol = controller.Policy(cfg)

    def progress(row):
        if row["iteration"] % 10 == 0:
            log.info("iter %4d  rho_uni %.4f  rho %.4f  infeasible %d", row["iteration"],
                     row["mean_rho_uni"], row["mean_rho_classical"], row["infeasible_qp"])

    res = controller.train(cfg, progress=progress)
    _write_csv(out / CURVES, controller.CURVE_COLUMNS,
               ([_fmt(r[c]) for c in controller.CURVE_COLUMNS] for r in res.curves))
    save_checkpoint(out / CHECKPOINT, res.store, cfg.config_hash(),
                    extra={"config": cfg.raw, "resampled": res.resampled, "skipped": res.skipped})
    (out / REPORT).write_text(_report(pol, res.store, cfg.train.seed))
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.raw, sort_keys=False))
    final = res.curves[-1]["mean_rho_uni"] if res.curves else float("nan")
    print(json.dumps({"out": str(out), "iterations": len(res.curves), "final_mean_rho_uni": final,
                      "hash": cfg.config_hash()}))
    return EXIT_OK


def _report(pol, store, seed) -> str:
    rng = np.random.default_rng(seed)
    X0 = controller.feasible_x0(pol, 1, rng)
    cats = hocbf.categorize_batch(pol.slots, X0)[0]
    init = controller.initnet_forward(pol, store.bind(Tape()), X0, cats)
    head = f"scenario {pol.cfg.name}  system {pol.cfg.system}  ablation {pol.policy.ablation}\n"
    head += f"x0 (sample 0) = {np.round(X0[0], 4).tolist()}\n\n"
    return head + hocbf.construction_report(pol.slots, cats, init.omegas, pol.cfg.hocbf)


def _rollout_record(cfg, store, n, seed, strict):
    try:
        return controller.evaluate(cfg, store, n, seed, mode="exec" if strict else "train")
    except diffqp.QpInfeasible as e:
        raise CliError(f"infeasible QP during execution: {e}", EXIT_INFEASIBLE) from None


def _rollout_rows(rec, v, model_names, q, slots):
    K = rec.K
    for k in range(K + 1):
        row = [_fmt(k * rec.dt)] + [_fmt(a) for a in rec.states[v, k]]
        if k < K:
            row += [_fmt(a) for a in rec.inputs[v, k]]
            for j in range(len(slots)):
                row += [_fmt(rec.psi0[v, k, j]), _fmt(rec.psi1[v, k, j]), int(rec.active[v, k, j]),
                        _fmt(rec.multipliers[v, k, j, 0]), _fmt(rec.multipliers[v, k, j, 1])]
            row.append(int(rec.status[v, k]))
        else:
            row += [""] * (q + 5 * len(slots) + 1)
        yield row


def _summary_header(slots):
    return (["rollout", "x0", "y0", "rho_classical", "rho_exp", "rho_uni", "rho_bounds", "cost",
             "infeasible_qp", "diverged"] + [f"t_del_{s}" for s in slots])


def _summary_rows(rec):
    for v in range(rec.V):
        yield ([v, _fmt(rec.x0[v, 0]), _fmt(rec.x0[v, 1]), _fmt(rec.rho_task_classical[v]),
                _fmt(rec.rho_task[v]), _fmt(rec.rho_uni[v]), _fmt(rec.rho_bounds[v]), _fmt(rec.cost[v]),
                int(np.sum((rec.status[v] > 0))), int(rec.diverged[v])]
               + [_fmt(a) for a in rec.t_del[v]])


def cmd_rollout(args) -> int:
    cfg, store = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rec = _rollout_record(cfg, store, args.n, args.seed, args.strict)
    pol = controller.Policy(cfg)
    slots = [s.name for s in pol.slots]
    q = pol.model.q
    header = (["t"] + list(pol.model.state_names) + [f"u{i + 1}" for i in range(q)]
              + [f"{c}_{s}" for s in slots for c in ("psi0", "psi1", "active", "p1", "p2")] + ["qp_status"])
    n = 0 if rec is None else rec.V
    for v in range(n):
        _write_csv(out / f"rollout_{v:03d}.csv", header, _rollout_rows(rec, v, pol.model.state_names, q, slots))
    _write_csv(out / SUMMARY, _summary_header(slots), [] if rec is None else _summary_rows(rec))
    meta = {"scenario": cfg.name, "system": cfg.system, "dt": cfg.dt, "horizon": cfg.horizon,
            "u_min": list(cfg.u_min), "u_max": list(cfg.u_max), "slots": slots, "n": n,
            "seed": args.seed, "hash": cfg.config_hash()}
    (out / META).write_text(json.dumps(meta, indent=2) + "\n")
    print(json.dumps({"out": str(out), "rollouts": n}))
    return EXIT_OK


def eval_summary(rec) -> dict:
    if rec is None:
        return {"n": 0}
    rho = rec.rho_task_classical
    return {"n": int(rec.V), "mean_rho": float(np.mean(rho)), "min_rho": float(np.min(rho)),
            "mean_rho_uni": float(np.mean(rec.rho_uni)), "satisfied": int(np.sum(rho > 0)),
            "satisfaction_rate": float(np.mean(rho > 0)), "infeasible_qp": rec.infeasible_count()}


def cmd_eval(args) -> int:
    cfg, store = _load(args)
    rec = _rollout_record(cfg, store, args.n, args.seed, args.strict)
    print(json.dumps(eval_summary(rec)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# plot data


def _read_csv(path: Path, need=()):
    if not path.is_file():
        raise CliError(f"{path} not found", EXIT_DATA)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CliError(f"{path} is empty", EXIT_DATA)
    header, body = rows[0], rows[1:]
    missing = [c for c in need if c not in header]
    if missing:
        raise CliError(f"{path} lacks columns {missing}", EXIT_DATA)
    return header, body


def _rollout_files(d: Path):
    files = sorted(d.glob("rollout_*.csv"))
    if not files:
        raise CliError(f"no rollout files in {d}", EXIT_DATA)
    return files


def cmd_plotdata(args) -> int:
    src = Path(args.dir)
    out = Path(args.out) if args.out else src
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"{args.kind}.csv"
    if args.kind == "curves":
        _read_csv(src / CURVES, controller.CURVE_COLUMNS)
        if (src / CURVES).resolve() != target.resolve():
            shutil.copyfile(src / CURVES, target)
    elif args.kind == "traj":
        rows = []
        for i, f in enumerate(_rollout_files(src)):
            header, body = _read_csv(f, ("t", "x", "y"))
            it, ix, iy = (header.index(c) for c in ("t", "x", "y"))
            rows += [[i, r[it], r[ix], r[iy]] for r in body]
        _write_csv(target, ["rollout", "t", "x", "y"], rows)
    elif args.kind == "inputs":
        meta = _meta(src)
        q = len(meta["u_min"])
        cols = [f"u{i + 1}" for i in range(q)]
        rows = []
        for i, f in enumerate(_rollout_files(src)):
            header, body = _read_csv(f, ["t"] + cols)
            idx = [header.index(c) for c in ["t"] + cols]
            rows += [[i] + [r[j] for j in idx] for r in body if r[idx[1]] != ""]
        # reference lines at the input bounds, spanning the horizon
        for label, vals in (("u_min", meta["u_min"]), ("u_max", meta["u_max"])):
            for t in (0.0, meta["horizon"]):
                rows.append([label, repr(t)] + [repr(float(a)) for a in vals])
        _write_csv(target, ["rollout", "t"] + cols, rows)
    else:
        meta = _meta(src)
        slots = meta["slots"] if args.slot is None else [args.slot]
        if args.slot is not None and args.slot not in meta["slots"]:
            raise CliError(f"unknown slot {args.slot!r}; rollouts have {meta['slots']}", EXIT_DATA)
        rows = []
        for i, f in enumerate(_rollout_files(src)):
            need = ["t"] + [f"{c}_{s}" for s in slots for c in ("active", "p1", "p2")]
            header, body = _read_csv(f, need)
            it = header.index("t")
            for s in slots:
                ia, i1, i2 = (header.index(f"{c}_{s}") for c in ("active", "p1", "p2"))
                # deleted instances have no multipliers: rows stop at the deletion time
                rows += [[i, s, r[it], r[i1], r[i2]] for r in body if r[ia] == "1"]
        _write_csv(target, ["rollout", "slot", "t", "p1", "p2"], rows)
    print(json.dumps({"out": str(target)}))
    return EXIT_OK


def _meta(src: Path) -> dict:
    path = src / META
    if not path.is_file():
        raise CliError(f"{path} not found", EXIT_DATA)
    return json.loads(path.read_text())


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stlbarrier", description="STL-constrained BarrierNet controllers")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--threads", type=int, default=None, help="QP solver threads (STLBARRIER_NUM_THREADS)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required):
        sp.add_argument("--config", required=config_required,
                        help="scenario YAML file or bundled scenario name")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--ablation", choices=ABLATIONS, default=None)
        sp.add_argument("--memory", choices=("on", "off"), default=None)

    t = sub.add_parser("train", help="train a controller and write checkpoint, curves and report")
    common(t, True)
    t.add_argument("--out", required=True)
    t.add_argument("--iters", type=int, default=None)
    t.set_defaults(func=cmd_train)

    for name, func, hlp in (("rollout", cmd_rollout, "write per-rollout trajectory files"),
                            ("eval", cmd_eval, "print summary metrics")):
        r = sub.add_parser(name, help=hlp)
        common(r, False)
        r.add_argument("--checkpoint", required=True, help="checkpoint file or training directory")
        r.add_argument("--n", type=int, default=10)
        r.add_argument("--strict", action="store_true", help="fail on an infeasible QP (exit 3)")
        if name == "rollout":
            r.add_argument("--out", required=True)
        r.set_defaults(func=func)

    d = sub.add_parser("plot-data", help="write plot-ready CSV files")
    d.add_argument("--dir", required=True, help="rollout directory (training directory for curves)")
    d.add_argument("--kind", choices=PLOT_KINDS, required=True)
    d.add_argument("--slot", default=None, help="only this HOCBF instance (multipliers)")
    d.add_argument("--out", default=None)
    d.set_defaults(func=cmd_plotdata)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        os.environ["STLBARRIER_NUM_THREADS"] = str(max(1, args.threads))
    if getattr(args, "seed", None) is None and args.command in ("rollout", "eval"):
        args.seed = 0
    if getattr(args, "n", 0) < 0:
        print("error: --n must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (hocbf.EmptyOmegaBox, hocbf.InfeasibleSpec) as e:
        print(f"infeasible scenario: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
