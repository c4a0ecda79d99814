"""Sensor tables, chronological splits, z-scoring, sliding windows with
optional periodic-lag channels, and the synthetic diffusion generator."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .graph import RoadGraph, normalized_laplacian

log = logging.getLogger(__name__)

MASK_VALUE = 0.0


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class SignalTable:
    values: np.ndarray = field(repr=False)  # (T, N)
    sensor_ids: tuple[str, ...]
    interval_minutes: int = 5
    start_timestamp: str = "1970-01-01T00:00:00"
    condition: str = "flow"

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    def reorder(self, ids) -> "SignalTable":
        """Columns rearranged to follow ``ids`` (e.g. the adjacency node order)."""
        index = {s: i for i, s in enumerate(self.sensor_ids)}
        missing = [s for s in ids if s not in index]
        if missing:
            raise DataError(f"sensor ids not in table: {missing[:5]}")
        cols = [index[s] for s in ids]
        return replace(self, values=self.values[:, cols], sensor_ids=tuple(ids))


@dataclass(frozen=True)
class NormalizationStats:
    mean: float
    std: float


@dataclass(frozen=True)
class PeriodicConfig:
    enabled: bool = False
    daily_period_steps: int = 288
    weekly_period_steps: int = 2016

    def __post_init__(self):
        if self.enabled and (self.daily_period_steps <= 0 or self.weekly_period_steps <= 0):
            raise DataError("periods must be positive")

    @property
    def lags(self) -> tuple[int, ...]:
        return (self.daily_period_steps, self.weekly_period_steps) if self.enabled else ()

    @property
    def lookback(self) -> int:
        return max(self.lags, default=0)


@dataclass(frozen=True)
class SlidingWindowDataset:
    x: np.ndarray = field(repr=False)      # (S, H, N, C), raw units
    y: np.ndarray = field(repr=False)      # (S, N, P), raw units
    starts: np.ndarray = field(repr=False)  # first step index of each x window
    h: int
    p: int
    split: str = "train"

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def channels(self) -> int:
        return self.x.shape[-1]

    def normalized_x(self, stats: NormalizationStats) -> np.ndarray:
        return zscore_apply(stats, self.x)


# IO -----------------------------------------------------------------------

def load_signals(path: str | Path, meta_path: str | Path | None = None) -> SignalTable:
    """Read a header-of-ids CSV, one time step per row."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    ids = tuple(c.strip() for c in rows[0])
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate sensor ids in header")
    if len(rows) == 1:
        raise DataError(f"{path}: no data rows")
    values = np.empty((len(rows) - 1, len(ids)), dtype=np.float64)
    for r, row in enumerate(rows[1:]):
        if len(row) != len(ids):
            raise DataError(f"{path}: row {r + 2} has {len(row)} fields, header has {len(ids)}")
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {r + 2}, column {c + 1} ({ids[c]}): non-numeric {cell!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {r + 2}, column {c + 1} ({ids[c]}): non-finite {cell!r}")
            values[r, c] = v
    meta = load_metadata(meta_path) if meta_path else {}
    return SignalTable(
        values,
        ids,
        interval_minutes=int(meta.get("interval_minutes", 5)),
        start_timestamp=meta.get("start_timestamp", "1970-01-01T00:00:00"),
        condition=meta.get("condition", "flow"),
    )


def save_signals(table: SignalTable, path: str | Path, meta_path: str | Path | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(table.sensor_ids) + "\n")
        for row in table.values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    if meta_path:
        save_metadata(
            {
                "interval_minutes": table.interval_minutes,
                "start_timestamp": table.start_timestamp,
                "condition": table.condition,
            },
            meta_path,
        )


def load_metadata(path: str | Path) -> dict[str, str]:
    meta = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise DataError(f"{path}:{lineno}: expected 'key: value'")
        meta[key.strip()] = value.strip()
    return meta


def save_metadata(meta: dict, path: str | Path) -> None:
    Path(path).write_text("".join(f"{k}: {v}\n" for k, v in meta.items()), encoding="utf-8")


# splitting / normalization ---------------------------------------------------

def chronological_split(
    table: SignalTable, fractions=(0.7, 0.1, 0.2), min_length: int = 0
) -> tuple[SignalTable, SignalTable, SignalTable]:
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise DataError(f"fractions must be three nonnegative numbers summing to 1, got {fractions}")
    t = table.length
    n_train = math.floor(fractions[0] * t)
    n_val = math.floor(fractions[1] * t)
    bounds = [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, t)]
    parts = []
    for name, (a, b) in zip(("train", "val", "test"), bounds):
        if b - a < min_length:
            raise DataError(f"{name} split has {b - a} steps, need at least {min_length}")
        parts.append(replace(table, values=table.values[a:b]))
    return tuple(parts)


def zscore_fit(values: np.ndarray, mask_value: float = MASK_VALUE) -> NormalizationStats:
    obs = np.asarray(values, dtype=np.float64)
    obs = obs[obs != mask_value]
    if obs.size == 0:
        log.warning("no observed entries to fit normalization; using mean 0, std 1")
        return NormalizationStats(0.0, 1.0)
    mean = float(obs.mean())
    std = float(obs.std())
    if not std > 0:
        log.warning("constant signal; falling back to std 1.0")
        std = 1.0
    return NormalizationStats(mean, std)


def zscore_apply(stats: NormalizationStats, values, mask_value: float | None = MASK_VALUE) -> np.ndarray:
    """Map observed entries to ``(x - mean) / std``; masked entries pass through."""
    v = np.asarray(values, dtype=np.float64)
    out = (v - stats.mean) / stats.std
    if mask_value is not None:
        out = np.where(v == mask_value, v, out)
    return out


def zscore_invert(stats: NormalizationStats, values):
    return values * stats.std + stats.mean


# windowing ------------------------------------------------------------------

def make_windows(
    table: SignalTable, h: int, p: int, periodic: PeriodicConfig | None = None, split: str = "train"
) -> SlidingWindowDataset:
    """Slide an ``h``-step input / ``p``-step target window over the table.

    Channel 0 holds the recent window. With periodic patterns enabled, channel
    1 (2) holds the same ``h`` timestamps shifted back by the daily (weekly)
    period; windows whose shifted lookback starts before step 0 are dropped.
    """
    periodic = periodic or PeriodicConfig()
    if h < 1 or p < 1:
        raise DataError("h and p must be positive")
    t = table.length
    first = periodic.lookback
    starts = np.arange(first, t - h - p + 1)
    if starts.size == 0:
        raise DataError(
            f"split of {t} steps cannot hold a window of {h}+{p} steps with lookback {first}"
        )
    offs = np.arange(h)
    vals = table.values
    chans = [vals[starts[:, None] + offs[None, :]]]
    for lag in periodic.lags:
        chans.append(vals[starts[:, None] + offs[None, :] - lag])
    x = np.stack(chans, axis=-1)  # (S, H, N, C)
    y_idx = starts[:, None] + h + np.arange(p)[None, :]
    y = vals[y_idx].transpose(0, 2, 1)  # (S, N, P)
    return SlidingWindowDataset(x, np.ascontiguousarray(y), starts, h, p, split)


# synthetic data -------------------------------------------------------------

def synth_diffusion(
    graph: RoadGraph,
    t: int,
    seed: int,
    noise_std: float = 0.01,
    x0: np.ndarray | None = None,
    interval_minutes: int = 5,
    rate: float = 0.1,
) -> SignalTable:
    """Noisy forced diffusion on the graph.

    ``x[t+1] = x[t] - rate * L' @ x[t] + 0.05 * sin(2*pi*t/24) + eps_t`` (``rate`` 0.1 by default) with
    ``x[0] ~ U[0, 1)^N`` and ``eps_t ~ N(0, noise_std^2)^N``. Random draws come
    from ``numpy.random.RandomState(seed)`` (MT19937): first ``uniform(0, 1,
    N)`` for ``x[0]`` (skipped when ``x0`` is given), then one
    ``normal(0, noise_std, N)`` per transition, in time order.
    """
    if not graph.is_connected():
        raise DataError("synthetic diffusion needs a connected graph")
    rs = np.random.RandomState(seed)
    n = graph.node_count
    lap = normalized_laplacian(graph)
    step_op = np.eye(n) - rate * lap
    values = np.empty((t, n), dtype=np.float64)
    values[0] = rs.uniform(0.0, 1.0, n) if x0 is None else np.asarray(x0, dtype=np.float64)
    for i in range(t - 1):
        noise = rs.normal(0.0, noise_std, n)
        values[i + 1] = step_op @ values[i] + 0.05 * math.sin(2 * math.pi * i / 24) + noise
    ids = tuple(f"s{i}" for i in range(n))
    return SignalTable(values, ids, interval_minutes=interval_minutes)
