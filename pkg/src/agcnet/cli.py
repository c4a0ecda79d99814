"""Command line entry point: ``agcnet {synth,train,eval,gradcheck,ablate,ttest}``.

Every command exits 0 on success, 1 when a check fails (gradcheck) and 2 on a
contract violation (bad config, inconsistent data, unreadable checkpoint).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .ablation import DEFAULT_SETTINGS, SETTINGS, run_ablation
from .config import ConfigError, RunConfig
from .data import DataError
from .graph import GraphError
from .metrics import welch_ttest
from .model import CheckpointError
from .runner import evaluate, load_run, read_dataset, run_training, synth_dataset, tiny_gradcheck, write_dataset

log = logging.getLogger("agcnet")

CONTRACT_ERRORS = (ConfigError, DataError, GraphError, CheckpointError, ValueError, OSError)


class UsageError(ValueError):
    pass


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def require(args, *names):
    missing = [f"--{n}" for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError(f"{args.command} requires {', '.join(missing)}")


# commands -------------------------------------------------------------------------

def cmd_synth(args) -> int:
    require(args, "out")
    cfg = load_config(args)
    graph, true_graph, table = synth_dataset(cfg)
    out = Path(args.out)
    write_dataset(out, graph, table)
    cfg.save(out / "config.json")
    print(f"wrote {table.values.shape[0]} steps x {table.n_nodes} nodes, {len(graph.edges)} edges to {out}")
    if true_graph is not graph:
        print(f"observed graph keeps {len(graph.edges)} of {len(true_graph.edges)} generating edges")
    return 0


def cmd_train(args) -> int:
    require(args, "data", "out")
    cfg = load_config(args)
    run_dir = Path(args.out)
    echo = run_dir / "config.json"
    if echo.exists() and RunConfig.load(echo) != cfg:
        raise ConfigError(f"{run_dir} already holds a run with a different configuration")
    graph, table = read_dataset(args.data)

    def on_epoch(rec):
        if rec["epoch"] % max(1, args.log_every) == 0:
            print(f"epoch {rec['epoch']:4d}  train_loss {rec['train_loss']:.5f}  val_mae {rec['val_mae']:.5f}",
                  flush=True)

    res = run_training(cfg, graph, table, run_dir, on_epoch)
    print(res.report.to_text() + "\n\n" + res.baseline.to_text())
    print(f"best epoch {res.history.best_epoch}; test MAE {res.test_mae:.5f} vs persistence {res.baseline_mae:.5f}")
    return 0


def cmd_eval(args) -> int:
    require(args, "data")
    if args.checkpoint is None and args.run is None:
        raise UsageError("eval requires --checkpoint or --run")
    ckpt = Path(args.checkpoint) if args.checkpoint else Path(args.run) / "best.ckpt"
    net, cfg, prep = load_run(ckpt, args.data)
    if args.horizons:
        bad = [h for h in args.horizons if not 1 <= h <= cfg.p]
        if bad:
            raise UsageError(f"horizons {bad} outside 1..{cfg.p} (model predicts P={cfg.p} steps)")
        cfg = cfg.replace(horizons=list(args.horizons))
    report, baseline, summary = evaluate(net, cfg, prep)
    text = report.to_text() + "\n\n" + baseline.to_text()
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(text + "\n", encoding="utf-8")
        payload = {"model": report.to_json(), "baseline": baseline.to_json(), "summary": summary}
        (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = load_config(args)
    report = tiny_gradcheck(cfg, seed=cfg.seed, corrupt=args.corrupt)
    print(report.to_text())
    return 0 if report.passed else 1


def cmd_ablate(args) -> int:
    require(args, "data")
    base = load_config(args)
    settings = tuple(args.settings.split(",")) if args.settings else DEFAULT_SETTINGS
    unknown = [s for s in settings if s not in SETTINGS]
    if unknown:
        raise UsageError(f"unknown settings {unknown}; choose from {sorted(SETTINGS)}")
    if args.periodic:
        base = base.replace(periodic=True)
    graph, table = read_dataset(args.data)
    seeds = range(base.seed, base.seed + args.seeds)
    report = run_ablation(base, graph, table, seeds, settings, args.out)
    print(report.to_text())
    return 0


def final_mae(run_dir: Path) -> float:
    final = run_dir / "final.json"
    if not final.exists():
        raise DataError(f"{run_dir} has no final.json (run not completed)")
    return float(json.loads(final.read_text(encoding="utf-8"))["test_mae"])


def cmd_ttest(args) -> int:
    groups = {"A": [Path(p) for p in args.a], "B": [Path(p) for p in args.b]}
    for name, dirs in groups.items():
        if len(dirs) < 2:
            raise UsageError(f"group {name} needs at least 2 completed runs, got {len(dirs)}")
    values = {name: [final_mae(d) for d in dirs] for name, dirs in groups.items()}
    t, p = welch_ttest(values["A"], values["B"])
    lines = []
    for name, dirs in groups.items():
        v = np.array(values[name])
        lines.append(f"group {name}: mean MAE {v.mean():.6f}  std {v.std(ddof=1):.6f}  n={len(v)}")
        lines.extend(f"  {d}: {m:.6f}" for d, m in zip(dirs, v))
    lines.append(f"Welch t = {t:.4f}, p = {p:.4g}")
    print("\n".join(lines))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = {name: {"runs": [str(d) for d in groups[name]], "mae": values[name],
                          "mean": float(np.mean(values[name])), "std": float(np.std(values[name], ddof=1))}
                   for name in groups}
        payload.update(t=t, p=p)
        (out / "ttest.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        (out / "ttest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


# parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (keys of RunConfig)")
    common.add_argument("--data", help="dataset directory (adjacency.csv, signals.csv, meta.txt, nodes.txt)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="agcnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic diffusion dataset")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train one model and write a run directory")
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="horizon report of a checkpoint with persistence baseline")
    p.add_argument("--checkpoint")
    p.add_argument("--run", help="run directory (uses its best.ckpt)")
    p.add_argument("--horizons", type=int, nargs="+")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check on a tiny model")
    p.add_argument("--corrupt", type=float, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", parents=[common], help="train settings c/d/e over a seed range")
    p.add_argument("--seeds", type=int, default=10, help="number of consecutive seeds starting at --seed")
    p.add_argument("--settings", help="comma separated subset of a,b,c,d,e")
    p.add_argument("--periodic", action="store_true", help="add daily/weekly lagged channels")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("ttest", parents=[common], help="Welch t-test between two groups of run directories")
    p.add_argument("--a", nargs="+", required=True)
    p.add_argument("--b", nargs="+", required=True)
    p.set_defaults(func=cmd_ttest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except CONTRACT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
