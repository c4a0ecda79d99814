"""Seed-ensemble ablation over the module settings of the ablation table."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import SignalTable
from .graph import RoadGraph
from .metrics import welch_ttest
from .runner import run_training

log = logging.getLogger(__name__)

# setting -> (description, config overrides)
SETTINGS = {
    "a": ("adjacency kernel, single range", {"kernel": "adjacency", "k": 1, "mode": "weighted", "shift": False, "periodic": False}),
    "b": ("adjacency kernel, single range, periodic", {"kernel": "adjacency", "k": 1, "mode": "weighted", "shift": False, "periodic": True}),
    "c": ("MGC-weighted", {"kernel": "wavelet", "mode": "weighted", "shift": False}),
    "d": ("MGC-attention", {"kernel": "wavelet", "mode": "attention", "shift": False}),
    "e": ("MGC-attention + shifted kernel", {"kernel": "wavelet", "mode": "attention", "shift": True}),
}
DEFAULT_SETTINGS = ("c", "d", "e")
COMPARISONS = (("c", "d"), ("d", "e"), ("c", "e"))


@dataclass
class AblationReport:
    seeds: list[int]
    settings: list[str]
    results: dict[str, list[dict]] = field(default_factory=dict)  # setting -> per-seed summaries
    comparisons: list[dict] = field(default_factory=list)

    def maes(self, setting: str) -> list[float]:
        return [r["test_mae"] for r in self.results[setting]]

    def summary_rows(self) -> list[dict]:
        rows = []
        for s in self.settings:
            res = self.results[s]
            row = {"setting": s, "modules": SETTINGS[s][0]}
            for key in ("test_mae", "test_rmse", "test_mape"):
                vals = np.array([r[key] for r in res if r[key] is not None], dtype=float)
                row[key] = float(vals.mean()) if vals.size else None
                row[key + "_std"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
            rows.append(row)
        return rows

    def ordering_holds(self) -> bool:
        means = [np.mean(self.maes(s)) for s in ("c", "d", "e") if s in self.results]
        return all(a >= b for a, b in zip(means, means[1:]))

    def to_json(self) -> dict:
        return {
            "seeds": self.seeds,
            "settings": self.summary_rows(),
            "per_seed": self.results,
            "comparisons": self.comparisons,
            "ordering_c_ge_d_ge_e": self.ordering_holds(),
        }

    def to_text(self) -> str:
        lines = [f"{'setting':<8}{'modules':<34}{'MAE':>16}{'RMSE':>16}{'MAPE%':>16}"]
        for r in self.summary_rows():
            cells = []
            for key in ("test_mae", "test_rmse", "test_mape"):
                cells.append(f"{r[key]:.4f}±{r[key + '_std']:.4f}" if r[key] is not None else "-")
            lines.append(f"({r['setting']})     {r['modules']:<34}" + "".join(f"{c:>16}" for c in cells))
        lines.append("")
        for c in self.comparisons:
            lines.append(
                f"({c['a']}) vs ({c['b']}): mean MAE {c['mean_a']:.5f} vs {c['mean_b']:.5f}, "
                f"t = {c['t']:.3f}, p = {c['p']:.3g}"
            )
        lines.append(f"ordering (c) >= (d) >= (e): {'holds' if self.ordering_holds() else 'does not hold'}")
        return "\n".join(lines)


def run_ablation(
    base: RunConfig,
    graph: RoadGraph,
    table: SignalTable,
    seeds,
    settings=DEFAULT_SETTINGS,
    out_dir: str | Path | None = None,
) -> AblationReport:
    """Train every setting under every seed on the same data and compare test MAEs."""
    seeds = list(seeds)
    report = AblationReport(seeds, list(settings))
    for s in settings:
        report.results[s] = []
        for seed in seeds:
            cfg = base.replace(seed=seed, **SETTINGS[s][1])
            run_dir = Path(out_dir) / f"setting_{s}" / f"seed_{seed}" if out_dir else None
            res = run_training(cfg, graph, table, run_dir)
            summary = {"seed": seed, "test_mae": res.test_mae, "test_rmse": res.test_rmse,
                       "test_mape": res.test_mape, "best_epoch": res.history.best_epoch}
            log.info("setting %s seed %d: test MAE %.5f", s, seed, res.test_mae)
            report.results[s].append(summary)
    for a, b in COMPARISONS:
        if a in report.results and b in report.results and len(seeds) >= 2:
            t, p = welch_ttest(report.maes(a), report.maes(b))
            report.comparisons.append(
                {"a": a, "b": b, "mean_a": float(np.mean(report.maes(a))),
                 "mean_b": float(np.mean(report.maes(b))), "t": t, "p": p}
            )
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.json").write_text(json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8")
        (out / "ablation.txt").write_text(report.to_text() + "\n", encoding="utf-8")
    return report
