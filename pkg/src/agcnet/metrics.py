"""Masked error metrics, horizon reports, persistence baseline, Welch's t-test."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .data import MASK_VALUE, NormalizationStats, SlidingWindowDataset, zscore_invert

log = logging.getLogger(__name__)

MAPE_EPS = 1e-4
DEFAULT_HORIZONS = (3, 6, 12)


@dataclass(frozen=True)
class Metrics:
    mae: float | None
    rmse: float | None
    mape: float | None
    count: int
    mape_count: int


def masked_metrics(pred, target, mask_value: float = MASK_VALUE) -> Metrics:
    """MAE, RMSE and MAPE (percent) over entries whose target is observed.

    MAPE further skips targets with ``|target| < 1e-4``. A metric with no
    contributing entries is ``None``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    keep = target != mask_value
    err = (pred - target)[keep]
    n = int(err.size)
    if n == 0:
        return Metrics(None, None, None, 0, 0)
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    tk = target[keep]
    pk = tk >= MAPE_EPS
    pk |= tk <= -MAPE_EPS
    m = int(pk.sum())
    mape = float(np.mean(np.abs(err[pk] / tk[pk])) * 100.0) if m else None
    return Metrics(mae, rmse, mape, n, m)


@dataclass
class HorizonReport:
    name: str
    rows: list[dict] = field(default_factory=list)  # label, step, mae, rmse, mape, count

    def row(self, label: str) -> dict:
        for r in self.rows:
            if r["label"] == label:
                return r
        raise KeyError(label)

    def to_json(self) -> dict:
        return {"name": self.name, "horizons": self.rows}

    def to_text(self) -> str:
        lines = [f"model: {self.name}"]
        lines.append(f"{'horizon':>8} {'step':>5} {'MAE':>10} {'RMSE':>10} {'MAPE%':>10} {'count':>8}")
        for r in self.rows:
            f = lambda v: f"{v:10.4f}" if v is not None else f"{'-':>10}"
            lines.append(
                f"{r['label']:>8} {r['step']:>5} {f(r['mae'])} {f(r['rmse'])} {f(r['mape'])} {r['count']:>8}"
            )
        return "\n".join(lines)


def horizon_label(step: int, interval_minutes: int) -> str:
    minutes = step * interval_minutes
    if minutes % 60 == 0:
        return f"{minutes // 60}h"
    return f"{minutes}min"


def report_from_predictions(
    name: str, pred: np.ndarray, target: np.ndarray, horizons, interval_minutes: int = 5
) -> HorizonReport:
    """``pred``/``target`` are ``(S, N, P)`` raw-unit arrays; entries pooled per step."""
    p = target.shape[-1]
    rep = HorizonReport(name)
    for step in horizons:
        if not 1 <= step <= p:
            raise ValueError(f"horizon step {step} outside 1..{p}")
        m = masked_metrics(pred[..., step - 1], target[..., step - 1])
        rep.rows.append(
            {
                "label": horizon_label(step, interval_minutes),
                "step": int(step),
                "mae": m.mae,
                "rmse": m.rmse,
                "mape": m.mape,
                "count": m.count,
            }
        )
    return rep


def default_horizons(p: int) -> tuple[int, ...]:
    hs = tuple(h for h in DEFAULT_HORIZONS if h <= p)
    return hs if hs else tuple(range(1, p + 1))


def predict(net, dataset: SlidingWindowDataset, stats: NormalizationStats, batch_size: int = 256) -> np.ndarray:
    """Denormalized ``(S, N, P)`` predictions."""
    import torch

    x = dataset.normalized_x(stats)
    outs = []
    with torch.no_grad():
        for i in range(0, len(dataset), batch_size):
            outs.append(net(torch.from_numpy(x[i:i + batch_size])).numpy())
    return zscore_invert(stats, np.concatenate(outs, axis=0))


def horizon_eval(net, dataset: SlidingWindowDataset, stats: NormalizationStats, horizons=None,
                 interval_minutes: int = 5, name: str = "agcnet") -> HorizonReport:
    horizons = default_horizons(dataset.p) if horizons is None else tuple(horizons)
    for step in horizons:
        if step > dataset.p:
            raise ValueError(f"horizon {step} exceeds forecast length P={dataset.p}")
    return report_from_predictions(name, predict(net, dataset, stats), dataset.y, horizons, interval_minutes)


def persistence_predictions(dataset: SlidingWindowDataset) -> np.ndarray:
    last = dataset.x[:, -1, :, 0]  # (S, N)
    return np.repeat(last[:, :, None], dataset.p, axis=2)


def persistence_baseline(dataset: SlidingWindowDataset, horizons=None, interval_minutes: int = 5) -> HorizonReport:
    horizons = default_horizons(dataset.p) if horizons is None else tuple(horizons)
    return report_from_predictions(
        "persistence", persistence_predictions(dataset), dataset.y, horizons, interval_minutes
    )


def pooled_mae(pred: np.ndarray, target: np.ndarray) -> float:
    return masked_metrics(pred, target).mae


def welch_ttest(sample_a, sample_b) -> tuple[float, float]:
    """Two-sided Welch t-test returning ``(t, p)``."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two values")
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    se2 = va + vb
    if se2 == 0:
        if ma == mb:
            return 0.0, 1.0
        log.warning("both samples have zero variance and different means; p set to 0")
        return math.copysign(math.inf, ma - mb), 0.0
    t = (ma - mb) / math.sqrt(se2)
    df = se2 ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    p = 2.0 * float(sps.t.sf(abs(t), df))
    return float(t), min(p, 1.0)


def dump_reports(reports: list[HorizonReport]) -> str:
    return json.dumps([r.to_json() for r in reports], indent=2)
