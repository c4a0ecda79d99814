"""Experiment plumbing shared by the CLI, scripts and acceptance tests:
dataset directories, data preparation, seeded model construction, train and
evaluate."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, RunConfig
from .data import (
    DataError,
    NormalizationStats,
    PeriodicConfig,
    SignalTable,
    SlidingWindowDataset,
    chronological_split,
    load_signals,
    make_windows,
    save_signals,
    synth_diffusion,
    zscore_fit,
)
from .graph import (
    RoadGraph,
    build_from_edge_list,
    cycle_graph,
    load_edge_list,
    path_graph,
    random_connected_graph,
    save_edge_list,
)
from .metrics import (
    HorizonReport,
    default_horizons,
    horizon_eval,
    masked_metrics,
    persistence_baseline,
    persistence_predictions,
    predict,
)
from .model import AGCNet, ModelConfig, load_checkpoint, save_checkpoint
from .training import GradCheckReport, History, LossConfig, TrainConfig, finite_difference_check, fit

log = logging.getLogger(__name__)

ADJ_FILE = "adjacency.csv"
SIGNALS_FILE = "signals.csv"
META_FILE = "meta.txt"
NODES_FILE = "nodes.txt"


# dataset directories ---------------------------------------------------------

def write_dataset(out: str | Path, graph: RoadGraph, table: SignalTable) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_edge_list(graph, out / ADJ_FILE)
    save_signals(table, out / SIGNALS_FILE, out / META_FILE)
    (out / NODES_FILE).write_text("".join(f"{s}\n" for s in table.sensor_ids), encoding="utf-8")


def read_dataset(data_dir: str | Path) -> tuple[RoadGraph, SignalTable]:
    """Load a dataset directory; signal columns are reordered to the adjacency node order.

    ``nodes.txt`` (one sensor id per line, line i = node i) is optional; without
    it the signal header order is taken as the node order.
    """
    d = Path(data_dir)
    for name in (ADJ_FILE, SIGNALS_FILE):
        if not (d / name).exists():
            raise DataError(f"{d}: missing {name}")
    table = load_signals(d / SIGNALS_FILE, d / META_FILE if (d / META_FILE).exists() else None)
    if (d / NODES_FILE).exists():
        ids = [s.strip() for s in (d / NODES_FILE).read_text(encoding="utf-8").splitlines() if s.strip()]
        table = table.reorder(ids)
    graph = load_edge_list(d / ADJ_FILE, table.n_nodes)
    return graph, table


def drop_edges(graph: RoadGraph, fraction: float, rng: np.random.Generator) -> RoadGraph:
    """Remove about ``fraction`` of the edges while keeping the graph connected."""
    edges = [e for e in graph.edges]
    order = rng.permutation(len(edges))
    target = int(round(fraction * len(edges)))
    kept = list(edges)
    removed = 0
    for idx in order:
        if removed >= target:
            break
        trial = [e for e in kept if e is not edges[idx]]
        g = build_from_edge_list(trial, graph.node_count)
        if g.is_connected():
            kept = trial
            removed += 1
    return build_from_edge_list(kept, graph.node_count)


def synth_dataset(cfg: RunConfig) -> tuple[RoadGraph, RoadGraph, SignalTable]:
    """Return (observed graph, generating graph, signals) for the config's seed."""
    n = cfg.synth_nodes
    if cfg.synth_graph == "cycle":
        true_graph = cycle_graph(n)
    elif cfg.synth_graph == "path":
        true_graph = path_graph(n)
    else:
        true_graph = random_connected_graph(n, np.random.default_rng(cfg.seed))
    table = synth_diffusion(true_graph, cfg.synth_steps, cfg.seed, noise_std=cfg.synth_noise, rate=cfg.synth_rate)
    observed = true_graph
    if cfg.synth_drop_edges > 0:
        observed = drop_edges(true_graph, cfg.synth_drop_edges, np.random.default_rng(cfg.seed + 1))
    return observed, true_graph, table


# preparation -----------------------------------------------------------------

@dataclass
class Prepared:
    train: SlidingWindowDataset
    val: SlidingWindowDataset
    test: SlidingWindowDataset
    stats: NormalizationStats
    interval_minutes: int


def periodic_config(cfg: RunConfig) -> PeriodicConfig:
    return PeriodicConfig(cfg.periodic, cfg.daily_period, cfg.weekly_period)


def prepare(cfg: RunConfig, table: SignalTable) -> Prepared:
    pc = periodic_config(cfg)
    tr, va, te = chronological_split(table, tuple(cfg.split), min_length=cfg.h + cfg.p + pc.lookback)
    stats = zscore_fit(tr.values)
    return Prepared(
        make_windows(tr, cfg.h, cfg.p, pc, "train"),
        make_windows(va, cfg.h, cfg.p, pc, "val"),
        make_windows(te, cfg.h, cfg.p, pc, "test"),
        stats,
        table.interval_minutes,
    )


def model_config(cfg: RunConfig, n_nodes: int) -> ModelConfig:
    rank = cfg.rank
    if cfg.shift and rank > n_nodes:
        log.warning("shift rank %d exceeds N=%d; using %d", rank, n_nodes, n_nodes)
        rank = n_nodes
    return ModelConfig(
        n_nodes=n_nodes,
        in_channels=3 if cfg.periodic else 1,
        horizon=cfg.p,
        k=cfg.k,
        layers=cfg.layers,
        enc_channels=cfg.enc_channels,
        hidden=cfg.hidden,
        dim_s=cfg.dim_s,
        mode=cfg.mode,
        shift=cfg.shift,
        rank=rank,
        alpha=cfg.alpha,
        kernel=cfg.kernel,
    )


def build_model(cfg: RunConfig, graph: RoadGraph) -> AGCNet:
    torch.manual_seed(cfg.seed)
    return AGCNet(model_config(cfg, graph.node_count), graph)


def train_config(cfg: RunConfig, interval_minutes: int = 5) -> TrainConfig:
    return TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        frobenius_weight=cfg.frobenius_weight,
        seed=cfg.seed,
        clip_norm=cfg.clip_norm,
        lr_decay=cfg.lr_decay,
        horizons=tuple(cfg.horizons) if cfg.horizons else None,
        interval_minutes=interval_minutes,
    )


# train / evaluate --------------------------------------------------------------

@dataclass
class RunResult:
    net: AGCNet
    history: History
    prepared: Prepared
    report: HorizonReport
    baseline: HorizonReport
    test_mae: float
    test_rmse: float
    test_mape: float | None
    baseline_mae: float


def horizons_for(cfg: RunConfig) -> tuple[int, ...]:
    return tuple(cfg.horizons) if cfg.horizons else default_horizons(cfg.p)


def evaluate(net: AGCNet, cfg: RunConfig, prep: Prepared) -> tuple[HorizonReport, HorizonReport, dict]:
    hz = horizons_for(cfg)
    report = horizon_eval(net, prep.test, prep.stats, hz, prep.interval_minutes)
    baseline = persistence_baseline(prep.test, hz, prep.interval_minutes)
    pooled = masked_metrics(predict(net, prep.test, prep.stats), prep.test.y)
    base_pooled = masked_metrics(persistence_predictions(prep.test), prep.test.y)
    summary = {
        "test_mae": pooled.mae,
        "test_rmse": pooled.rmse,
        "test_mape": pooled.mape,
        "baseline_mae": base_pooled.mae,
        "baseline_rmse": base_pooled.rmse,
        "baseline_mape": base_pooled.mape,
    }
    return report, baseline, summary


def run_training(cfg: RunConfig, graph: RoadGraph, table: SignalTable, run_dir: str | Path | None = None,
                 on_epoch=None) -> RunResult:
    if graph.node_count != table.n_nodes:
        raise DataError(f"adjacency has {graph.node_count} nodes but signals have {table.n_nodes} columns")
    prep = prepare(cfg, table)
    net = build_model(cfg, graph)
    extra = {"run_config": cfg.to_dict(), "stats": {"mean": prep.stats.mean, "std": prep.stats.std}}
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg.save(run_dir / "config.json")
        save_checkpoint(net, run_dir / "init.ckpt", extra)
    history = fit(net, prep.train, prep.val, prep.stats, train_config(cfg, prep.interval_minutes), on_epoch)
    report, baseline, summary = evaluate(net, cfg, prep)
    if run_dir is not None:
        save_checkpoint(net, run_dir / "best.ckpt", {**extra, "best_epoch": history.best_epoch})
        history.write_jsonl(run_dir / "history.jsonl")
        final = {"seed": cfg.seed, "best_epoch": history.best_epoch, "best_val_mae": history.best_val_mae,
                 **summary, "report": report.to_json(), "baseline": baseline.to_json()}
        (run_dir / "final.json").write_text(json.dumps(final, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return RunResult(net, history, prep, report, baseline, summary["test_mae"], summary["test_rmse"],
                     summary["test_mape"], summary["baseline_mae"])


def load_run(checkpoint: str | Path, data_dir: str | Path) -> tuple[AGCNet, RunConfig, Prepared]:
    graph, table = read_dataset(data_dir)
    net, extra = load_checkpoint(checkpoint, graph)
    if "run_config" not in extra:
        raise ConfigError(f"{checkpoint}: no run configuration stored")
    cfg = RunConfig.from_dict(extra["run_config"])
    prep = prepare(cfg, table)
    stored = extra.get("stats")
    if stored and (stored["mean"], stored["std"]) != (prep.stats.mean, prep.stats.std):
        raise DataError("normalization stats differ from the checkpoint; data directory does not match")
    return net, cfg, prep


def tiny_gradcheck(cfg: RunConfig | None = None, seed: int = 0, corrupt: float | None = None,
                   perturb_std: float = 0.3) -> GradCheckReport:
    """Finite-difference check on a tiny instance (N=5, H=4, P=2, K=2, L=1).

    Parameters are perturbed away from their initial values so no gradient is
    trivially zero. ``corrupt`` scales every analytic gradient (fault injection).
    """
    cfg = cfg or RunConfig()
    mcfg = ModelConfig(n_nodes=5, in_channels=1, horizon=2, k=2, layers=1, enc_channels=4, hidden=3,
                       dim_s=4, mode=cfg.mode, shift=cfg.shift, rank=2, alpha=cfg.alpha, kernel=cfg.kernel)
    rng = np.random.default_rng(seed)
    graph = random_connected_graph(5, rng)
    torch.manual_seed(seed)
    net = AGCNet(mcfg, graph)
    gen = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        for _, p in net.registry():
            p.add_(perturb_std * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    x = torch.tensor(rng.normal(size=(3, 4, 5, 1)))
    y = torch.tensor(rng.normal(size=(3, 5, 2)) + 3.0)
    transform = (lambda g: corrupt * g) if corrupt is not None else None
    return finite_difference_check(net, (x, y), NormalizationStats(0.5, 2.0),
                                   LossConfig(frobenius_weight=cfg.frobenius_weight), grad_transform=transform)
