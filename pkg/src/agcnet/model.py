"""AGC-net: stacked AGC encoder applied per time step, per-node GRU decoder
and a single-shot linear forecast head."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .graph import LaplacianSpectrum, RoadGraph, normalized_adjacency, spectrum_of
from .spectral_conv import DTYPE, MGCLayer
from .wavelet import ScaleSet, SpectralBases


@dataclass
class ModelConfig:
    n_nodes: int
    in_channels: int = 1
    horizon: int = 12
    k: int = 8
    layers: int = 2
    enc_channels: int = 32
    hidden: int = 64
    dim_s: int = 16
    mode: str = "attention"
    shift: bool = True
    rank: int = 30
    alpha: float = 0.01
    kernel: str = "wavelet"


class GRUDecoder(nn.Module):
    """GRU cell shared across nodes, update rule ``h' = (1-z) h + z h_tilde``."""

    def __init__(self, input_dim: int, hidden_dim: int):
        super().__init__()
        bx, bh = 1.0 / math.sqrt(input_dim), 1.0 / math.sqrt(hidden_dim)

        def u(shape, b):
            return nn.Parameter(torch.empty(*shape, dtype=DTYPE).uniform_(-b, b))

        self.w_z, self.u_z, self.b_z = u((input_dim, hidden_dim), bx), u((hidden_dim, hidden_dim), bh), u((hidden_dim,), bh)
        self.w_r, self.u_r, self.b_r = u((input_dim, hidden_dim), bx), u((hidden_dim, hidden_dim), bh), u((hidden_dim,), bh)
        self.w_h, self.u_h, self.b_h = u((input_dim, hidden_dim), bx), u((hidden_dim, hidden_dim), bh), u((hidden_dim,), bh)
        self.hidden_dim = hidden_dim

    def step(self, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        z = torch.sigmoid(x @ self.w_z + h @ self.u_z + self.b_z)
        r = torch.sigmoid(x @ self.w_r + h @ self.u_r + self.b_r)
        h_tilde = torch.tanh(x @ self.w_h + (r * h) @ self.u_h + self.b_h)
        return (1 - z) * h + z * h_tilde

    def forward(self, seq: torch.Tensor) -> torch.Tensor:
        """Run over ``(..., H, C_enc)`` from a zero state; return the final ``(..., d_h)``.

        Same arithmetic as repeated :meth:`step`, with the update and reset
        gates fused and the input maps computed for all steps up front.
        """
        d = self.hidden_dim
        u_zr = torch.cat([self.u_z, self.u_r], dim=1)
        x_zr = (torch.matmul(seq, torch.cat([self.w_z, self.w_r], dim=1))
                + torch.cat([self.b_z, self.b_r])).unbind(-2)
        x_h = (torch.matmul(seq, self.w_h) + self.b_h).unbind(-2)
        h = torch.zeros(*seq.shape[:-2], d, dtype=seq.dtype)
        for t in range(seq.shape[-2]):
            z, r = torch.sigmoid(x_zr[t] + h @ u_zr).split(d, dim=-1)
            h_tilde = torch.tanh(x_h[t] + (r * h) @ self.u_h)
            h = h + z * (h_tilde - h)
        return h


def gru_step(dec: GRUDecoder, x, h) -> torch.Tensor:
    return dec.step(torch.as_tensor(x, dtype=DTYPE), torch.as_tensor(h, dtype=DTYPE))


class AGCNet(nn.Module):
    def __init__(self, cfg: ModelConfig, graph: RoadGraph, spectrum: LaplacianSpectrum | None = None):
        super().__init__()
        if graph.node_count != cfg.n_nodes:
            raise ValueError(f"graph has {graph.node_count} nodes, config says {cfg.n_nodes}")
        self.cfg = cfg
        spectrum = spectrum if spectrum is not None else spectrum_of(graph)
        self.bases = SpectralBases(spectrum)
        self.register_buffer("adj_norm", torch.tensor(normalized_adjacency(graph), dtype=DTYPE))
        self.scale_set = ScaleSet(cfg.k) if cfg.kernel == "wavelet" else None
        dims = [cfg.in_channels] + [cfg.enc_channels] * cfg.layers
        self.layers = nn.ModuleList(
            MGCLayer(
                cfg.n_nodes, dims[i], dims[i + 1], cfg.k, cfg.dim_s, cfg.mode,
                shift_rank=cfg.rank if cfg.shift else None, alpha=cfg.alpha, kernel=cfg.kernel,
            )
            for i in range(cfg.layers)
        )
        self.decoder = GRUDecoder(cfg.enc_channels, cfg.hidden)
        self.head = nn.Linear(cfg.hidden, cfg.horizon, dtype=DTYPE)

    # parameter registry -------------------------------------------------

    def registry(self) -> list[tuple[str, nn.Parameter]]:
        return [(name, p) for name, p in self.named_parameters() if p.requires_grad]

    def flatten(self) -> np.ndarray:
        return np.concatenate([p.detach().numpy().ravel() for _, p in self.registry()])

    def restore(self, flat: np.ndarray) -> None:
        need = sum(p.numel() for _, p in self.registry())
        if len(flat) != need:
            raise ValueError(f"vector has {len(flat)} entries, registry needs {need}")
        offset = 0
        with torch.no_grad():
            for _, p in self.registry():
                n = p.numel()
                p.copy_(torch.from_numpy(np.asarray(flat[offset:offset + n], dtype=np.float64)).view_as(p))
                offset += n

    def shifts(self):
        return [layer.shift for layer in self.layers if layer.shift is not None]

    # forward ------------------------------------------------------------

    def current_bases(self):
        if self.scale_set is None:
            return None, None
        return self.bases(self.scale_set.scales())

    def encode_sequence(self, x_seq: torch.Tensor, return_pi: bool = False, node_major: bool = False):
        """``(..., H, N, C)`` to ``(..., H, N, C_enc)``; bases are built once per call."""
        x_seq = torch.as_tensor(x_seq, dtype=DTYPE)
        if x_seq.shape[-2:] != (self.cfg.n_nodes, self.cfg.in_channels):
            raise ValueError(
                f"input frames {tuple(x_seq.shape[-2:])} do not match "
                f"(N={self.cfg.n_nodes}, C={self.cfg.in_channels})"
            )
        fwd, inv = self.current_bases()
        lead = x_seq.shape[:-2]
        z = x_seq.reshape(-1, *x_seq.shape[-2:]).transpose(0, 1).contiguous()  # (N, M, C)
        pis = []
        for layer in self.layers:
            z, pi = layer.forward_node_major(z, fwd, inv, self.adj_norm)
            pis.append(pi.reshape(*lead, layer.k))
        if node_major:
            return z
        out = z.transpose(0, 1).reshape(*lead, *z.shape[::2])
        return (out, pis) if return_pi else out

    def decode(self, encoded: torch.Tensor) -> torch.Tensor:
        """``(..., H, N, C_enc)`` to ``(..., N, P)``, one GRU run per node."""
        if encoded.shape[-1] != self.cfg.enc_channels:
            raise ValueError(f"expected {self.cfg.enc_channels} encoded channels, got {encoded.shape[-1]}")
        seq = encoded.transpose(-3, -2)  # (..., N, H, C_enc)
        return self.head(self.decoder(seq))

    def forward(self, x_seq: torch.Tensor) -> torch.Tensor:
        x_seq = torch.as_tensor(x_seq, dtype=DTYPE)
        if x_seq.ndim < 3:
            raise ValueError(f"expected (..., H, N, C) input, got shape {tuple(x_seq.shape)}")
        lead, h = x_seq.shape[:-3], x_seq.shape[-3]
        z = self.encode_sequence(x_seq, node_major=True)  # (N, prod(lead)*H, C_enc)
        n = z.shape[0]
        seq = z.view(n, -1, h, z.shape[-1])  # per-node sequences, no transpose needed
        pred = self.head(self.decoder(seq))  # (N, B, P)
        return pred.transpose(0, 1).reshape(*lead, n, self.cfg.horizon)


def encode_sequence(net: AGCNet, x_seq) -> torch.Tensor:
    return net.encode_sequence(x_seq)


def decode(net: AGCNet, encoded) -> torch.Tensor:
    return net.decode(torch.as_tensor(encoded, dtype=DTYPE))


def forward(net: AGCNet, x_seq) -> torch.Tensor:
    return net(x_seq)


# checkpoint ---------------------------------------------------------------
#
# Layout (all integers little-endian):
#   bytes 0..7    magic b"AGCNCKPT"
#   uint32        format version (CHECKPOINT_VERSION)
#   uint64        header length in bytes, L
#   L bytes       UTF-8 JSON: {"config": {...}, "extra": {...},
#                   "params": [{"name", "shape", "offset", "count"}, ...]}
#   payload       float64 little-endian values, row-major, concatenated in
#                 registry order; "offset" counts float64 elements from the
#                 start of the payload.

CHECKPOINT_MAGIC = b"AGCNCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(net: AGCNet, path: str | Path, extra: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name, p in net.registry():
        arr = np.ascontiguousarray(p.detach().numpy(), dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": arr.size})
        chunks.append(arr.tobytes(order="C"))
        offset += arr.size
    header = json.dumps(
        {"config": asdict(net.cfg), "extra": extra or {}, "params": entries}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not an AGC-net checkpoint")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(raw[start:start + hlen].decode("utf-8"))
    payload = np.frombuffer(raw, dtype="<f8", offset=start + hlen)
    params = {}
    for e in header["params"]:
        vals = payload[e["offset"]:e["offset"] + e["count"]]
        if vals.size != e["count"]:
            raise CheckpointError(f"{path}: truncated payload for {e['name']}")
        params[e["name"]] = vals.reshape(e["shape"]).astype(np.float64)
    return header, params


def load_checkpoint(path: str | Path, graph: RoadGraph) -> tuple[AGCNet, dict]:
    header, params = read_checkpoint(path)
    net = AGCNet(ModelConfig(**header["config"]), graph)
    reg = dict(net.registry())
    if set(reg) != set(params):
        raise CheckpointError(f"{path}: parameter names do not match the configured model")
    with torch.no_grad():
        for name, p in reg.items():
            if tuple(p.shape) != params[name].shape:
                raise CheckpointError(f"{path}: shape mismatch for {name}")
            p.copy_(torch.from_numpy(params[name]))
    return net, header.get("extra", {})
