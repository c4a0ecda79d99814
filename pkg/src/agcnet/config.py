"""Run configuration: every hyperparameter, stored as a JSON echo."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
    k: int = 8
    layers: int = 2
    enc_channels: int = 32
    hidden: int = 64
    dim_s: int = 16
    rank: int = 30
    alpha: float = 0.01
    mode: str = "attention"
    shift: bool = True
    kernel: str = "wavelet"
    # loss / optimizer
    frobenius_weight: float = 1e-4
    lr: float = 0.002
    weight_decay: float = 1e-4
    batch_size: int = 128
    epochs: int = 200
    clip_norm: float | None = None
    lr_decay: float | None = None
    seed: int = 0
    # windows
    h: int = 12
    p: int = 12
    periodic: bool = False
    daily_period: int = 288
    weekly_period: int = 2016
    horizons: list[int] | None = None
    split: list[float] = (0.7, 0.1, 0.2)
    # synthetic data
    synth_nodes: int = 15
    synth_steps: int = 2000
    synth_graph: str = "random"
    synth_noise: float = 0.01
    synth_rate: float = 0.1
    synth_drop_edges: float = 0.0

    def __post_init__(self):
        self.split = list(self.split)
        self.validate()

    def validate(self) -> None:
        positive = ["k", "layers", "enc_channels", "hidden", "dim_s", "rank", "batch_size", "h", "p",
                    "daily_period", "weekly_period", "synth_nodes", "synth_steps"]
        for name in positive:
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        for name in ("alpha", "frobenius_weight", "lr", "weight_decay", "synth_noise", "synth_rate"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.mode not in ("attention", "weighted"):
            raise ConfigError(f"mode must be 'attention' or 'weighted', got {self.mode!r}")
        if self.kernel not in ("wavelet", "adjacency"):
            raise ConfigError(f"kernel must be 'wavelet' or 'adjacency', got {self.kernel!r}")
        if self.synth_graph not in ("random", "cycle", "path"):
            raise ConfigError(f"synth_graph must be random, cycle or path, got {self.synth_graph!r}")
        if not 0 <= self.synth_drop_edges < 1:
            raise ConfigError("synth_drop_edges must be in [0, 1)")
        for name in ("shift", "periodic"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(f"{name} must be true or false")
        if self.horizons is not None and any(not 1 <= s <= self.p for s in self.horizons):
            raise ConfigError(f"horizons {self.horizons} must lie in 1..{self.p}")

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(data)

    def replace(self, **changes) -> "RunConfig":
        data = self.to_dict()
        data.update(changes)
        return RunConfig.from_dict(data)
