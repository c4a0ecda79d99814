"""Loss, Adam with decoupled weight decay, the training loop and the
central-difference gradient check."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import MASK_VALUE, NormalizationStats, SlidingWindowDataset, zscore_invert
from .metrics import default_horizons, masked_metrics, predict, report_from_predictions
from .spectral_conv import DTYPE, shift_frobenius_sq

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossConfig:
    frobenius_weight: float = 1e-4
    mask_value: float = MASK_VALUE

    def __post_init__(self):
        if self.frobenius_weight < 0:
            raise ValueError("frobenius_weight must be nonnegative")


def masked_mae_loss(pred, target, cfg: LossConfig = LossConfig(), shift=None) -> torch.Tensor:
    """Mean ``|pred - target|`` over observed targets plus the weighted squared
    Frobenius norm of the shift kernel(s). ``shift`` may be one kernel or a list."""
    pred = torch.as_tensor(pred, dtype=DTYPE)
    target = torch.as_tensor(target, dtype=DTYPE)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    keep = target != cfg.mask_value
    n = int(keep.sum())
    if n:
        loss = torch.where(keep, (pred - target).abs(), torch.zeros_like(pred)).sum() / n
    else:
        log.warning("every target in the batch is masked; loss is the regularizer only")
        loss = (pred * 0).sum()
    shifts = shift if isinstance(shift, (list, tuple)) else ([shift] if shift is not None else [])
    for s in shifts:
        loss = loss + cfg.frobenius_weight * shift_frobenius_sq(s)
    return loss


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class OptimizerState:
    lr: float = 0.002
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: OptimizerState, params, grads) -> None:
    """In-place Adam update of ``params`` (name -> tensor) with ``grads``.

    Weight decay is decoupled: ``p -= lr * wd * p`` before the adaptive step.
    """
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient for {name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            if name not in state.m:
                state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            m, v = state.m[name], state.v[name]
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            if state.weight_decay:
                p.mul_(1 - state.lr * state.weight_decay)
            p.sub_(state.lr * (m / c1) / (torch.sqrt(v / c2) + state.eps))


# gradient check -------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    checked: dict[str, int]
    threshold: float = 1e-4

    @property
    def passed(self) -> bool:
        return all(e < self.threshold for e in self.max_rel_error.values())

    def to_text(self) -> str:
        width = max(len(n) for n in self.max_rel_error)
        lines = [f"{'parameter':<{width}}  coords  max_rel_err  status"]
        for name, err in self.max_rel_error.items():
            ok = "ok" if err < self.threshold else "FAIL"
            lines.append(f"{name:<{width}}  {self.checked[name]:>6}  {err:11.3e}  {ok}")
        lines.append(f"gradcheck {'PASSED' if self.passed else 'FAILED'} at threshold {self.threshold:g}")
        return "\n".join(lines)


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(1e-8, abs(a) + abs(b))


def batch_loss(net, batch, stats: NormalizationStats, loss_cfg: LossConfig) -> torch.Tensor:
    x, y = batch
    pred = zscore_invert(stats, net(torch.as_tensor(x, dtype=DTYPE)))
    return masked_mae_loss(pred, torch.as_tensor(y, dtype=DTYPE), loss_cfg, net.shifts())


def finite_difference_check(
    net,
    batch,
    stats: NormalizationStats = NormalizationStats(0.0, 1.0),
    loss_cfg: LossConfig = LossConfig(),
    h: float = 1e-6,
    threshold: float = 1e-4,
    max_coords: int = 20,
    seed: int = 0,
    grad_transform=None,
) -> GradCheckReport:
    """Compare autograd gradients to central differences, coordinate by coordinate.

    Tensors with at most ``max_coords`` entries are checked in full; larger
    ones on a fixed random subsample. ``grad_transform`` maps each analytic
    gradient before comparison (fault injection in tests).
    """
    net.zero_grad(set_to_none=True)
    loss = batch_loss(net, batch, stats, loss_cfg)
    loss.backward()
    rng = np.random.default_rng(seed)
    errors, counts = {}, {}
    for name, p in net.registry():
        g = p.grad if p.grad is not None else torch.zeros_like(p)
        if grad_transform is not None:
            g = grad_transform(g)
        analytic = g.detach().reshape(-1).numpy().copy()
        n = p.numel()
        idx = np.arange(n) if n <= max_coords else np.sort(rng.choice(n, max_coords, replace=False))
        flat = p.data.view(-1)
        worst = 0.0
        with torch.no_grad():
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + h
                lp = batch_loss(net, batch, stats, loss_cfg).item()
                flat[i] = orig - h
                lm = batch_loss(net, batch, stats, loss_cfg).item()
                flat[i] = orig
                worst = max(worst, relative_error(analytic[i], (lp - lm) / (2 * h)))
        errors[name] = worst
        counts[name] = int(idx.size)
    net.zero_grad(set_to_none=True)
    return GradCheckReport(errors, counts, threshold)


# training loop --------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    lr: float = 0.002
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    frobenius_weight: float = 1e-4
    seed: int = 0
    clip_norm: float | None = None
    lr_decay: float | None = None  # multiplicative per-epoch factor
    horizons: tuple[int, ...] | None = None
    interval_minutes: int = 5


class TrainingDiverged(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class History:
    records: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_mae: float = math.inf

    def deterministic_view(self) -> list[dict]:
        return [{k: v for k, v in r.items() if k != "seconds"} for r in self.records]

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for r in self.records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")


def fit(
    net,
    train: SlidingWindowDataset,
    val: SlidingWindowDataset,
    stats: NormalizationStats,
    cfg: TrainConfig = TrainConfig(),
    on_epoch=None,
) -> History:
    """Minibatch Adam on the masked MAE loss; keeps the best-on-validation weights."""
    loss_cfg = LossConfig(frobenius_weight=cfg.frobenius_weight)
    opt = OptimizerState(cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps)
    params = dict(net.registry())
    xt = torch.from_numpy(train.normalized_x(stats))
    yt = torch.from_numpy(train.y)
    rng = np.random.default_rng(cfg.seed)
    horizons = cfg.horizons or default_horizons(val.p)
    history = History()
    best = net.flatten()
    for epoch in range(1, cfg.epochs + 1):
        tic = time.perf_counter()
        order = rng.permutation(len(train))
        total, seen = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            idx = torch.from_numpy(order[i:i + cfg.batch_size])
            net.zero_grad(set_to_none=True)
            loss = batch_loss(net, (xt[idx], yt[idx]), stats, loss_cfg)
            loss.backward()
            grads = {n: (p.grad if p.grad is not None else torch.zeros_like(p)) for n, p in params.items()}
            if cfg.clip_norm is not None:
                norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
                if norm > cfg.clip_norm:
                    grads = {n: g * (cfg.clip_norm / norm) for n, g in grads.items()}
            adam_step(opt, params, grads)
            total += float(loss.detach()) * len(idx)
            seen += len(idx)
        if cfg.lr_decay is not None:
            opt.lr *= cfg.lr_decay
        pred = predict(net, val, stats)
        rep = report_from_predictions("val", pred, val.y, horizons, cfg.interval_minutes)
        val_mae = masked_metrics(pred, val.y).mae
        rec = {
            "epoch": epoch,
            "train_loss": total / max(seen, 1),
            "val_mae": val_mae,
            "val": rep.rows,
            "seconds": time.perf_counter() - tic,
        }
        history.records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        if val_mae is None or not math.isfinite(val_mae):
            raise TrainingDiverged(f"validation MAE is {val_mae} at epoch {epoch}", history)
        if val_mae < history.best_val_mae:
            history.best_val_mae = val_mae
            history.best_epoch = epoch
            best = net.flatten()
    net.restore(best)
    return history
