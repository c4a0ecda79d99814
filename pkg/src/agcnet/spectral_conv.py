"""Single-range wavelet convolution, multi-range composition, context
attention, the low-rank shifted kernel and the AGC layer.

All tensors are float64. Node signals are ``(N, C)`` or batched ``(B, N, C)``.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
import torch
from torch import nn

DTYPE = torch.float64


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


class SingleRangeKernel(nn.Module):
    """Diagonal spectral filter ``theta``, channel map ``weight`` and per-node ``bias``."""

    def __init__(self, n: int, c_in: int, c_out: int, scale_index: int = 0):
        super().__init__()
        bound = 1.0 / math.sqrt(c_in)
        self.theta = nn.Parameter(torch.ones(n, dtype=DTYPE))
        self.weight = nn.Parameter(torch.empty(c_in, c_out, dtype=DTYPE).uniform_(-bound, bound))
        self.bias = nn.Parameter(torch.zeros(n, c_out, dtype=DTYPE))
        self.scale_index = scale_index

    @property
    def c_in(self) -> int:
        return self.weight.shape[0]

    @property
    def c_out(self) -> int:
        return self.weight.shape[1]


class ShiftKernel(nn.Module):
    """Low-rank additive correction ``alpha * l1 @ l2`` to the spectral operator."""

    def __init__(self, n: int, rank: int, alpha: float = 0.01, init_std: float = 0.01):
        super().__init__()
        if rank < 1:
            raise ValueError("rank must be positive")
        if alpha < 0:
            raise ValueError("alpha must be nonnegative")
        self.l1 = nn.Parameter(torch.randn(n, rank, dtype=DTYPE) * init_std)
        self.l2 = nn.Parameter(torch.randn(rank, n, dtype=DTYPE) * init_std)
        self.alpha = float(alpha)

    @property
    def rank_bound(self) -> int:
        return self.l1.shape[1]

    def matrix(self) -> torch.Tensor:
        return self.l1 @ self.l2


class AttentionBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, dim_s: int):
        super().__init__()
        self.w_q = nn.Linear(c_in, dim_s, dtype=DTYPE)
        self.w_v = nn.Linear(c_out, dim_s, dtype=DTYPE)
        self.dim_s = dim_s


def kernel_operator(theta: torch.Tensor, fwd: torch.Tensor, inv: torch.Tensor) -> torch.Tensor:
    """``fwd @ diag(theta) @ inv``."""
    return (fwd * theta[None, :]) @ inv


def apply_operator(op: torch.Tensor, x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    # (N,N) @ (..., N, Cin) @ (Cin, Cout) + (N, Cout)
    return torch.matmul(op, torch.matmul(x, weight)) + bias


def single_range_conv(
    kernel: SingleRangeKernel,
    basis,
    shift: ShiftKernel | None,
    x,
) -> torch.Tensor:
    """``(Psi diag(theta) Psi^-1 + alpha * l1 l2) x W + bias``.

    ``basis`` is a :class:`~agcnet.wavelet.WaveletBasis` or a ``(forward, inverse)`` pair.
    """
    x = _as_tensor(x)
    if isinstance(basis, tuple):
        fwd, inv = (_as_tensor(b) for b in basis)
    else:
        fwd, inv = _as_tensor(basis.forward), _as_tensor(basis.inverse)
    n = kernel.theta.shape[0]
    if fwd.shape != (n, n) or inv.shape != (n, n):
        raise ValueError(f"basis shape {tuple(fwd.shape)} does not match N={n}")
    if x.shape[-2:] != (n, kernel.c_in):
        raise ValueError(f"input shape {tuple(x.shape)} does not match (N={n}, C_in={kernel.c_in})")
    op = kernel_operator(kernel.theta, fwd, inv)
    if shift is not None:
        op = op + shift.alpha * shift.matrix()
    return apply_operator(op, x, kernel.weight, kernel.bias)


def cosine_scores(q: torch.Tensor, v: torch.Tensor, dim_s: int) -> torch.Tensor:
    """``q.v / (S |q| |v|)`` over the last axis, 0 where either norm vanishes.

    ``q`` is ``(..., S)`` and ``v`` is ``(..., K, S)``.
    """
    dot = (q.unsqueeze(-2) * v).sum(-1)
    qn = torch.sqrt((q * q).sum(-1)).unsqueeze(-1)
    vn = torch.sqrt((v * v).sum(-1))
    denom = dim_s * qn * vn
    ok = denom > 0
    return torch.where(ok, dot / torch.where(ok, denom, torch.ones_like(denom)), torch.zeros_like(dot))


def context_scores(att: AttentionBlock, context, conv_outputs: Sequence) -> torch.Tensor:
    """Similarity between the mean-pooled layer input and each mean-pooled conv output."""
    if len(conv_outputs) < 1:
        raise ValueError("need at least one convolution output")
    context = _as_tensor(context)
    stacked = torch.stack([_as_tensor(o) for o in conv_outputs], dim=-3)  # (..., K, N, C_out)
    q = att.w_q(context.mean(dim=-2))
    v = att.w_v(stacked.mean(dim=-2))
    return cosine_scores(q, v, att.dim_s)


def attention_weights(scores) -> torch.Tensor:
    scores = _as_tensor(scores)
    shifted = scores - scores.max(dim=-1, keepdim=True).values.detach()
    e = torch.exp(shifted)
    return e / e.sum(dim=-1, keepdim=True)


def mgc_compose(conv_outputs: Sequence, pi) -> torch.Tensor:
    """``sum_k pi_k * conv_outputs[k]``; ``pi`` is ``(K,)`` or batched ``(B, K)``."""
    pi = _as_tensor(pi)
    if len(conv_outputs) != pi.shape[-1]:
        raise ValueError(f"{len(conv_outputs)} outputs but {pi.shape[-1]} coefficients")
    if pi.ndim == 1:
        nz = torch.nonzero(pi).flatten()
        if pi.numel() and nz.numel() == 1 and pi[nz[0]] == 1.0:
            return _as_tensor(conv_outputs[int(nz[0])]).clone()
        out = pi[0] * _as_tensor(conv_outputs[0])
        for k in range(1, len(conv_outputs)):
            out = out + pi[k] * _as_tensor(conv_outputs[k])
        return out
    stacked = torch.stack([_as_tensor(o) for o in conv_outputs], dim=-3)
    return (pi[..., :, None, None] * stacked).sum(dim=-3)


def shift_frobenius_sq(shift) -> torch.Tensor:
    if shift is None:
        return torch.zeros((), dtype=DTYPE)
    d = shift.matrix()
    return (d * d).sum()


class MGCLayer(nn.Module):
    """One adaptive graph convolution layer.

    ``mode='attention'`` derives the mixing weights from the context attention
    block per sample; ``mode='weighted'`` uses ``softmax`` of K free
    coefficients. ``kernel='adjacency'`` swaps the wavelet operator for
    ``A_norm @ diag(theta)`` (ablation only).
    """

    def __init__(
        self,
        n: int,
        c_in: int,
        c_out: int,
        k: int,
        dim_s: int = 16,
        mode: str = "attention",
        shift_rank: int | None = None,
        alpha: float = 0.01,
        kernel: str = "wavelet",
    ):
        super().__init__()
        if mode not in ("attention", "weighted"):
            raise ValueError(f"unknown mode {mode!r}")
        if kernel not in ("wavelet", "adjacency"):
            raise ValueError(f"unknown kernel {kernel!r}")
        self.mode = mode
        self.kernel_kind = kernel
        self.kernels = nn.ModuleList(SingleRangeKernel(n, c_in, c_out, i) for i in range(k))
        if mode == "attention":
            self.attention = AttentionBlock(c_in, c_out, dim_s)
            self.coefficients = None
        else:
            self.attention = None
            self.coefficients = nn.Parameter(torch.zeros(k, dtype=DTYPE))
        self.shift = ShiftKernel(n, shift_rank, alpha) if shift_rank else None

    @property
    def k(self) -> int:
        return len(self.kernels)

    @property
    def c_in(self) -> int:
        return self.kernels[0].c_in

    @property
    def c_out(self) -> int:
        return self.kernels[0].c_out

    def operators(self, fwd: torch.Tensor | None, inv: torch.Tensor | None, adj: torch.Tensor | None = None):
        ops = []
        for i, kern in enumerate(self.kernels):
            if self.kernel_kind == "adjacency":
                op = adj * kern.theta[None, :]
            else:
                op = kernel_operator(kern.theta, fwd[i], inv[i])
            if self.shift is not None:
                op = op + self.shift.alpha * self.shift.matrix()
            ops.append(op)
        return ops

    def forward(self, z: torch.Tensor, fwd=None, inv=None, adj=None):
        """``z`` is ``(N, C_in)`` or ``(..., N, C_in)``; returns activations and mixing weights."""
        n = z.shape[-2]
        out, pi = self.forward_node_major(z.reshape(-1, n, z.shape[-1]).transpose(0, 1), fwd, inv, adj)
        out = out.transpose(0, 1).reshape(*z.shape[:-1], self.c_out)
        return out, pi.reshape(*z.shape[:-2], self.k)

    def forward_node_major(self, z: torch.Tensor, fwd=None, inv=None, adj=None):
        """Same computation on node-major ``(N, M, C_in)`` frames; ``pi`` is ``(M, K)``."""
        if z.shape[-1] != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {z.shape[-1]}")
        if fwd is not None and fwd.shape[0] != self.k:
            raise ValueError(f"layer has {self.k} kernels but {fwd.shape[0]} bases")
        n, m, c_in = z.shape
        k = self.k
        ops = torch.stack(self.operators(fwd, inv, adj))  # (K, N, N)
        weights = torch.stack([kern.weight for kern in self.kernels])  # (K, C_in, C_out)
        biases = torch.stack([kern.bias for kern in self.kernels])  # (K, N, C_out)
        # op_k @ z for every k and frame in one product
        y = (ops.reshape(k * n, n) @ z.reshape(n, m * c_in)).view(k, n, m, c_in)
        if self.mode == "attention":
            pooled = torch.bmm(y.mean(dim=1), weights) + biases.mean(dim=1)[:, None, :]  # (K, M, C_out)
            q = self.attention.w_q(z.mean(dim=0))  # (M, S)
            v = self.attention.w_v(pooled.transpose(0, 1))  # (M, K, S)
            pi = attention_weights(cosine_scores(q, v, self.attention.dim_s))
        else:
            pi = attention_weights(self.coefficients).expand(m, k)
        ys = (y * pi.t()[:, None, :, None]).view(k, n * m, c_in)
        out = pi @ biases.view(k, -1)  # (M, N*C_out)
        out = out.view(m, n, -1).transpose(0, 1).reshape(n * m, -1)
        for y_k, w_k in zip(ys.unbind(0), weights.unbind(0)):
            out = out + y_k @ w_k
        out = out.view(n, m, -1)
        return torch.relu(out), pi


def agc_forward(layer: MGCLayer, bases, z_prev):
    """Apply ``layer`` to ``z_prev`` given K wavelet bases.

    ``bases`` is a sequence of :class:`~agcnet.wavelet.WaveletBasis` or a
    ``(forward, inverse)`` pair of ``(K, N, N)`` tensors.
    """
    if isinstance(bases, tuple) and len(bases) == 2 and isinstance(bases[0], torch.Tensor):
        fwd, inv = bases
    else:
        fwd = torch.stack([_as_tensor(b.forward) for b in bases])
        inv = torch.stack([_as_tensor(b.inverse) for b in bases])
    return layer(_as_tensor(z_prev), fwd, inv)
