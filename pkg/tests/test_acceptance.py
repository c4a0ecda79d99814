"""Acceptance criteria A1-A9. Each test prints one ``A<n> PASS|FAIL`` line and
records it for the terminal summary (see conftest.py)."""
import json
import time

import numpy as np
import pytest
import torch

from agcnet.config import RunConfig
from agcnet.graph import eigendecompose, normalized_laplacian, path_graph, random_connected_graph, spectrum_of
from agcnet.metrics import masked_metrics
from agcnet.model import AGCNet, ModelConfig
from agcnet.ablation import run_ablation
from agcnet.runner import run_training, synth_dataset, tiny_gradcheck
from agcnet.spectral_conv import MGCLayer, ShiftKernel, attention_weights, mgc_compose, shift_frobenius_sq
from agcnet.wavelet import build_basis

RESULTS = {}

# scaled-down model used by the training criteria (A4, A5, A9)
SMALL_MODEL = dict(k=4, layers=2, enc_channels=16, hidden=32, dim_s=8, rank=4, h=12, p=3)
A4_CONFIG = RunConfig(**SMALL_MODEL, epochs=200, synth_nodes=15, synth_steps=2000, seed=0)
# A5: observed graph misses half the generating edges and diffusion is fast, so
# the topology correction has signal to recover
A5_CONFIG = RunConfig(**SMALL_MODEL, epochs=60, synth_nodes=15, synth_steps=2000, synth_rate=0.5,
                      synth_drop_edges=0.5)
A5_SEEDS = range(10)


def record(name, passed, detail, elapsed):
    line = f"{name} {'PASS' if passed else 'FAIL'}  {detail}  ({elapsed:.1f}s)"
    RESULTS[name] = line
    print(line)
    return passed


def test_a1_wavelet_invertibility():
    tic = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(50):
        spec = spectrum_of(random_connected_graph(int(rng.integers(2, 21)), rng))
        for s in (0.1, 0.5, 1.0, 2.0):
            b = build_basis(spec, s)
            worst = max(worst, np.abs(b.forward @ b.inverse - np.eye(len(b.forward))).max())
    elapsed = time.perf_counter() - tic
    ok = record("A1", worst < 1e-8 and elapsed < 10, f"max |Psi Psi^-1 - I| = {worst:.2e} (< 1e-8)", elapsed)
    assert ok


def test_a2_spectrum_correctness():
    tic = time.perf_counter()
    p3 = spectrum_of(path_graph(3)).eigenvalues
    p3_err = np.abs(p3 - [0.0, 1.0, 2.0]).max()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        lap = normalized_laplacian(random_connected_graph(int(rng.integers(2, 21)), rng))
        spec = eigendecompose(lap)
        u, lam = spec.eigenvectors, spec.eigenvalues
        worst = max(worst, np.abs(u @ np.diag(lam) @ u.T - lap).max(), np.abs(u.T @ u - np.eye(len(lam))).max())
    elapsed = time.perf_counter() - tic
    ok = p3_err < 1e-10 and worst < 1e-10 and elapsed < 10
    record("A2", ok, f"P3 error {p3_err:.1e}; reconstruction/orthonormality {worst:.1e}", elapsed)
    assert ok


def test_a3_gradient_gate():
    tic = time.perf_counter()
    report = tiny_gradcheck()
    elapsed = time.perf_counter() - tic
    print(report.to_text())
    expected = {"scale_set.raw_params", "layers.0.shift.l1", "layers.0.shift.l2", "head.weight", "head.bias",
                "layers.0.attention.w_q.weight", "layers.0.attention.w_v.weight"}
    expected |= {f"layers.0.kernels.{k}.{p}" for k in range(2) for p in ("theta", "weight", "bias")}
    expected |= {f"decoder.{a}_{g}" for a in "wub" for g in "zrh"}
    complete = expected <= set(report.max_rel_error)
    worst = max(report.max_rel_error.values())
    ok = report.passed and complete and elapsed < 60
    record("A3", ok, f"{len(report.max_rel_error)} tensors, max rel. error {worst:.2e} (< 1e-4)", elapsed)
    assert ok


def test_a4_training_sanity():
    tic = time.perf_counter()
    graph, _, table = synth_dataset(A4_CONFIG)
    res = run_training(A4_CONFIG, graph, table)
    elapsed = time.perf_counter() - tic
    reduction = 1.0 - res.test_mae / res.baseline_mae
    ok = reduction >= 0.5 and elapsed < 600
    record("A4", ok, f"test MAE {res.test_mae:.5f} vs persistence {res.baseline_mae:.5f}, "
                     f"reduction {100 * reduction:.1f}% (>= 50%)", elapsed)
    assert ok


def test_a5_ablation_direction(tmp_path):
    tic = time.perf_counter()
    graph, _, table = synth_dataset(A5_CONFIG)
    report = run_ablation(A5_CONFIG, graph, table, A5_SEEDS, out_dir=tmp_path)
    elapsed = time.perf_counter() - tic
    print(report.to_text())
    assert (tmp_path / "ablation.txt").exists() and len(report.comparisons) == 3
    full = next(c for c in report.comparisons if (c["a"], c["b"]) == ("c", "e"))
    # hard requirement: the weighted-vs-full gap; the full c >= d >= e ordering
    # is data dependent and only reported
    gap = full["mean_a"] > full["mean_b"] and full["p"] < 0.05
    ordering = "holds" if report.ordering_holds() else "does not hold (reported, not asserted)"
    ok = gap and elapsed < 7200
    record("A5", ok, f"MAE c/d/e = {np.mean(report.maes('c')):.5f}/{np.mean(report.maes('d')):.5f}/"
                     f"{np.mean(report.maes('e')):.5f}; c vs e p = {full['p']:.3g} (< 0.05); "
                     f"ordering {ordering}", elapsed)
    assert ok


def test_a6_attention_simplex_and_invariances():
    tic = time.perf_counter()
    rng = np.random.default_rng(6)
    gen = torch.Generator().manual_seed(6)
    worst_sum, min_pi, worst_shift, onehot_ok = 0.0, 1.0, 0.0, True
    for trial in range(1000):
        k = int(rng.integers(1, 9))
        scores = torch.tensor(rng.normal(scale=10 ** rng.uniform(-2, 2), size=(3, k)))
        pi = attention_weights(scores)
        worst_sum = max(worst_sum, (pi.sum(-1) - 1).abs().max().item())
        min_pi = min(min_pi, pi.min().item())
        c = float(rng.normal(scale=100))
        worst_shift = max(worst_shift, (attention_weights(scores + c) - pi).abs().max().item())
        outs = [torch.tensor(rng.normal(size=(4, 2))) for _ in range(k)]
        j = int(rng.integers(k))
        onehot = torch.zeros(k, dtype=torch.float64)
        onehot[j] = 1.0
        onehot_ok &= torch.equal(mgc_compose(outs, onehot), outs[j])
        onehot_ok &= torch.equal(mgc_compose(outs, onehot[None].expand(2, k))[1], outs[j])
    # mixing weights produced by real layers in both modes
    for trial in range(200):
        mode = "attention" if trial % 2 else "weighted"
        n = int(rng.integers(2, 8))
        spec = spectrum_of(random_connected_graph(n, rng))
        layer = MGCLayer(n, 2, 3, 3, dim_s=4, mode=mode)
        bases = [build_basis(spec, s) for s in (0.3, 1.0, 2.0)]
        fwd = torch.tensor(np.stack([b.forward for b in bases]))
        inv = torch.tensor(np.stack([b.inverse for b in bases]))
        _, pi = layer(torch.randn(5, n, 2, generator=gen, dtype=torch.float64), fwd, inv)
        worst_sum = max(worst_sum, (pi.sum(-1) - 1).abs().max().item())
        min_pi = min(min_pi, pi.min().item())
    elapsed = time.perf_counter() - tic
    ok = min_pi >= 0 and worst_sum < 1e-6 and worst_shift < 1e-12 and onehot_ok and elapsed < 10
    record("A6", ok, f"min pi {min_pi:.2e}, max |sum-1| {worst_sum:.1e}, shift drift {worst_shift:.1e}, "
                     f"one-hot {'exact' if onehot_ok else 'MISMATCH'}", elapsed)
    assert ok


def brute_force_metrics(pred, target):
    abs_sum = sq_sum = pct_sum = 0.0
    n = n_pct = 0
    for p, t in zip(pred.ravel().tolist(), target.ravel().tolist()):
        if t == 0.0:
            continue
        n += 1
        abs_sum += abs(p - t)
        sq_sum += (p - t) ** 2
        if abs(t) > 1e-4:
            n_pct += 1
            pct_sum += abs(p - t) / abs(t)
    return abs_sum / n, (sq_sum / n) ** 0.5, 100 * pct_sum / n_pct


def test_a7_metrics_oracle():
    tic = time.perf_counter()
    rng = np.random.default_rng(7)
    worst, rmse_ge_mae = 0.0, True
    for _ in range(100):
        shape = tuple(rng.integers(1, 12, size=2))
        target = rng.normal(50, 20, size=shape)
        target[rng.random(shape) < 0.3] = 0.0
        if not (target != 0).any():
            target.flat[0] = 1.0
        pred = target + rng.normal(0, 5, size=shape)
        m = masked_metrics(pred, target)
        mae, rmse, mape = brute_force_metrics(pred, target)
        worst = max(worst, abs(m.mae - mae), abs(m.rmse - rmse), abs(m.mape - mape) / max(1.0, mape))
        rmse_ge_mae &= m.rmse >= m.mae
    elapsed = time.perf_counter() - tic
    ok = worst < 1e-10 and rmse_ge_mae
    record("A7", ok, f"max deviation from brute force {worst:.1e}; RMSE >= MAE {rmse_ge_mae}", elapsed)
    assert ok


def test_a8_shift_kernel_rank():
    tic = time.perf_counter()
    rng = np.random.default_rng(8)
    rank_ok, worst = True, 0.0
    for _ in range(100):
        n = int(rng.integers(2, 30))
        r = int(rng.integers(1, n + 1))
        shift = ShiftKernel(n, r)
        with torch.no_grad():
            shift.l1.copy_(torch.tensor(rng.normal(size=(n, r))))
            shift.l2.copy_(torch.tensor(rng.normal(size=(r, n))))
        m = (shift.l1 @ shift.l2).detach().numpy()
        rank_ok &= np.linalg.matrix_rank(m) <= r
        oracle = float(np.sum(np.linalg.svd(m, compute_uv=False) ** 2))
        worst = max(worst, abs(shift_frobenius_sq(shift).item() - oracle) / max(1.0, oracle))
    elapsed = time.perf_counter() - tic
    ok = rank_ok and worst < 1e-8
    record("A8", ok, f"rank <= r on all instances: {rank_ok}; Frobenius vs SVD {worst:.1e}", elapsed)
    assert ok


def test_a9_determinism(tmp_path):
    tic = time.perf_counter()
    cfg = RunConfig(**SMALL_MODEL, epochs=3, synth_nodes=8, synth_steps=400, seed=11)
    graph, _, table = synth_dataset(cfg)
    for run in ("r1", "r2"):
        run_training(cfg, graph, table, tmp_path / run)

    def history(run):
        lines = (tmp_path / run / "history.jsonl").read_text().splitlines()
        return [{k: v for k, v in json.loads(l).items() if k != "seconds"} for l in lines]

    same_hist = history("r1") == history("r2")
    same_ckpt = (tmp_path / "r1" / "best.ckpt").read_bytes() == (tmp_path / "r2" / "best.ckpt").read_bytes()
    elapsed = time.perf_counter() - tic
    ok = same_hist and same_ckpt
    record("A9", ok, f"history identical {same_hist}; checkpoint bytes identical {same_ckpt}", elapsed)
    assert ok
