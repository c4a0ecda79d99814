"""Heat-kernel graph wavelet bases with learnable, softplus-positive scales.

The forward basis uses the decaying filter ``exp(-s*lam)`` and the inverse
basis ``exp(+s*lam)``, so ``forward @ inverse == I`` exactly in exact
arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .graph import LaplacianSpectrum

# largest admissible s * lambda_max for the growing inverse filter
MAX_EXPONENT = 30.0


class ScaleOverflowError(ValueError):
    pass


@dataclass(frozen=True)
class WaveletBasis:
    forward: np.ndarray = field(repr=False)
    inverse: np.ndarray = field(repr=False)
    scale: float
    sparsity_threshold: float = 0.0


def _check_scale(s: float, eigenvalues: np.ndarray | None = None) -> float:
    s = float(s)
    if not np.isfinite(s) or s < 0:
        raise ScaleOverflowError(f"scale must be finite and nonnegative, got {s}")
    if eigenvalues is not None and eigenvalues.size:
        if s * float(np.max(eigenvalues)) > MAX_EXPONENT:
            raise ScaleOverflowError(
                f"s*lambda_max = {s * float(np.max(eigenvalues)):.3g} exceeds {MAX_EXPONENT}"
            )
    return s


def heat_filter(eigenvalues: np.ndarray, s: float, direction: str = "forward") -> np.ndarray:
    s = _check_scale(s)
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if direction == "forward":
        return np.exp(-s * lam)
    if direction == "inverse":
        return np.exp(s * lam)
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def _spectral(spec: LaplacianSpectrum, diag: np.ndarray) -> np.ndarray:
    u = spec.eigenvectors
    out = (u * diag[None, :]) @ u.T
    return 0.5 * (out + out.T)


def build_basis(spec: LaplacianSpectrum, s: float) -> WaveletBasis:
    s = _check_scale(s, spec.eigenvalues)
    fwd = _spectral(spec, heat_filter(spec.eigenvalues, s, "forward"))
    inv = _spectral(spec, heat_filter(spec.eigenvalues, s, "inverse"))
    return WaveletBasis(fwd, inv, s)


def sparsify(basis: WaveletBasis, threshold: float) -> WaveletBasis:
    """Zero entries below ``threshold`` in magnitude. Inference only."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    if threshold == 0:
        return basis
    fwd = np.where(np.abs(basis.forward) < threshold, 0.0, basis.forward)
    inv = np.where(np.abs(basis.inverse) < threshold, 0.0, basis.inverse)
    return WaveletBasis(fwd, inv, basis.scale, float(threshold))


def basis_scale_gradient(spec: LaplacianSpectrum, s: float) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of the forward and inverse bases with respect to ``s``."""
    s = _check_scale(s, spec.eigenvalues)
    lam = spec.eigenvalues
    d_fwd = _spectral(spec, -lam * np.exp(-s * lam))
    d_inv = _spectral(spec, lam * np.exp(s * lam))
    return d_fwd, d_inv


def softplus_inverse(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    return s + np.log(-np.expm1(-s))


class ScaleSet(nn.Module):
    """K positive wavelet scales, ``softplus(raw_params)``."""

    def __init__(self, k: int, low: float = 0.1, high: float = 2.0, trainable: bool = True):
        super().__init__()
        if k < 1:
            raise ValueError("need at least one scale")
        init = np.geomspace(low, high, k) if k > 1 else np.array([np.sqrt(low * high)])
        raw = torch.tensor(softplus_inverse(init), dtype=torch.float64)
        self.raw_params = nn.Parameter(raw, requires_grad=trainable)
        self.trainable = trainable

    @property
    def k(self) -> int:
        return self.raw_params.shape[0]

    def scales(self) -> torch.Tensor:
        return F.softplus(self.raw_params)


class SpectralBases(nn.Module):
    """Holds the fixed eigensystem and turns scales into differentiable bases."""

    def __init__(self, spec: LaplacianSpectrum):
        super().__init__()
        self.register_buffer("eigvecs", torch.tensor(np.array(spec.eigenvectors), dtype=torch.float64))
        self.register_buffer("eigvals", torch.tensor(np.array(spec.eigenvalues), dtype=torch.float64))

    def forward(self, scales: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Return ``(K, N, N)`` forward and inverse bases for a ``(K,)`` scale vector."""
        lam_max = float(self.eigvals.max()) if self.eigvals.numel() else 0.0
        s_max = float(scales.detach().max())
        if not np.isfinite(s_max) or s_max * lam_max > MAX_EXPONENT:
            raise ScaleOverflowError(f"scale {s_max:.4g} overflows the inverse heat filter")
        expo = scales[:, None] * self.eigvals[None, :]
        u = self.eigvecs
        fwd = torch.einsum("ij,kj,lj->kil", u, torch.exp(-expo), u)
        inv = torch.einsum("ij,kj,lj->kil", u, torch.exp(expo), u)
        return fwd, inv
