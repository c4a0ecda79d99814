"""Road graph assembly, normalized Laplacian and its eigensystem."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SYMMETRY_TOL = 1e-10


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class RoadGraph:
    node_count: int
    edges: tuple[tuple[int, int, float], ...]
    adjacency: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = self.adjacency
        if a.shape != (self.node_count, self.node_count):
            raise GraphError(f"adjacency shape {a.shape} does not match N={self.node_count}")
        if not np.array_equal(a, a.T):
            raise GraphError("adjacency is not symmetric")
        if np.any(np.diag(a) != 0):
            raise GraphError("adjacency has nonzero diagonal")
        if np.any(a < 0):
            raise GraphError("adjacency has negative weights")
        a.setflags(write=False)

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def is_connected(self) -> bool:
        n = self.node_count
        if n == 0:
            return False
        seen = {0}
        stack = [0]
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(self.adjacency[i]):
                if j not in seen:
                    seen.add(int(j))
                    stack.append(int(j))
        return len(seen) == n


@dataclass(frozen=True)
class LaplacianSpectrum:
    eigenvectors: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray
    laplacian: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]


def build_from_edge_list(
    edges: Iterable[Sequence], node_count: int, sum_duplicates: bool = False
) -> RoadGraph:
    """Assemble a symmetric adjacency matrix from ``(src, dst, weight)`` records.

    An edge given as both (i, j) and (j, i), or repeated, must carry the same
    weight unless ``sum_duplicates`` is set, in which case weights accumulate.
    Self loops are rejected.
    """
    if node_count < 1:
        raise GraphError("node_count must be positive")
    adj = np.zeros((node_count, node_count), dtype=np.float64)
    seen: dict[tuple[int, int], float] = {}
    records = []
    for rec in edges:
        src, dst, w = int(rec[0]), int(rec[1]), float(rec[2])
        if not (0 <= src < node_count and 0 <= dst < node_count):
            raise GraphError(f"edge ({src},{dst}) out of range for N={node_count}")
        if not np.isfinite(w) or w < 0:
            raise GraphError(f"edge ({src},{dst}) has invalid weight {w}")
        if src == dst:
            raise GraphError(f"self loop at node {src}")
        key = (min(src, dst), max(src, dst))
        if key in seen:
            if sum_duplicates:
                seen[key] += w
            elif seen[key] != w:
                raise GraphError(
                    f"conflicting weights for edge {key}: {seen[key]} vs {w}"
                )
        else:
            seen[key] = w
        records.append((src, dst, w))
    for (i, j), w in seen.items():
        adj[i, j] = adj[j, i] = w
    return RoadGraph(node_count, tuple(records), adj)


def from_adjacency(adjacency: np.ndarray) -> RoadGraph:
    a = np.array(adjacency, dtype=np.float64)
    n = a.shape[0]
    iu, ju = np.nonzero(np.triu(a, 1))
    edges = [(int(i), int(j), float(a[i, j])) for i, j in zip(iu, ju)]
    return RoadGraph(n, tuple(edges), a)


def load_edge_list(path: str | Path, node_count: int, sum_duplicates: bool = False) -> RoadGraph:
    """Read ``src,dst,weight`` lines (optional header) into a RoadGraph."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and [c.strip() for c in row] == ["src", "dst", "weight"]:
                continue
            if len(row) != 3:
                raise GraphError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                rows.append((int(row[0]), int(row[1]), float(row[2])))
            except ValueError as exc:
                raise GraphError(f"{path}:{lineno}: {exc}") from None
    return build_from_edge_list(rows, node_count, sum_duplicates=sum_duplicates)


def save_edge_list(graph: RoadGraph, path: str | Path) -> None:
    iu, ju = np.nonzero(np.triu(graph.adjacency, 1))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("src,dst,weight\n")
        for i, j in zip(iu, ju):
            fh.write(f"{i},{j},{float(graph.adjacency[i, j])!r}\n")


def laplacian(graph: RoadGraph) -> np.ndarray:
    """Unnormalized ``D - A``. Not used by the model."""
    return np.diag(graph.degrees) - graph.adjacency


def inv_sqrt_degree(graph: RoadGraph) -> np.ndarray:
    deg = graph.degrees
    out = np.zeros_like(deg)
    nz = deg > 0
    out[nz] = 1.0 / np.sqrt(deg[nz])
    return out


def normalized_adjacency(graph: RoadGraph) -> np.ndarray:
    d = inv_sqrt_degree(graph)
    return d[:, None] * graph.adjacency * d[None, :]


def normalized_laplacian(graph: RoadGraph) -> np.ndarray:
    # isolated nodes: D^{-1/2} entry is 0, so their row/column is the identity row
    lap = np.eye(graph.node_count) - normalized_adjacency(graph)
    return 0.5 * (lap + lap.T)


def eigendecompose(lap: np.ndarray) -> LaplacianSpectrum:
    lap = np.asarray(lap, dtype=np.float64)
    if lap.ndim != 2 or lap.shape[0] != lap.shape[1]:
        raise GraphError(f"expected a square matrix, got shape {lap.shape}")
    if np.max(np.abs(lap - lap.T), initial=0.0) > SYMMETRY_TOL:
        raise GraphError("laplacian is not symmetric")
    try:
        vals, vecs = np.linalg.eigh(lap)
    except np.linalg.LinAlgError as exc:
        raise GraphError(f"eigensolver failed: {exc}") from exc
    order = np.argsort(vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    # first component with nonzero magnitude is made positive
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        idx = np.flatnonzero(np.abs(col) > 1e-12)
        if idx.size and col[idx[0]] < 0:
            vecs[:, j] = -col
    vals = np.clip(vals, 0.0, 2.0)
    vecs.setflags(write=False)
    vals.setflags(write=False)
    lap = lap.copy()
    lap.setflags(write=False)
    return LaplacianSpectrum(vecs, vals, lap)


def spectrum_of(graph: RoadGraph) -> LaplacianSpectrum:
    return eigendecompose(normalized_laplacian(graph))


def path_graph(n: int) -> RoadGraph:
    return build_from_edge_list([(i, i + 1, 1.0) for i in range(n - 1)], n)


def cycle_graph(n: int) -> RoadGraph:
    return build_from_edge_list([(i, (i + 1) % n, 1.0) for i in range(n)], n)


def random_connected_graph(n: int, rng: np.random.Generator, extra_edge_prob: float = 0.2) -> RoadGraph:
    """Random spanning tree plus Bernoulli extra edges, uniform(0.1, 1) weights."""
    perm = rng.permutation(n)
    edges = {}
    for k in range(1, n):
        i, j = int(perm[k]), int(perm[rng.integers(0, k)])
        edges[(min(i, j), max(i, j))] = float(rng.uniform(0.1, 1.0))
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) not in edges and rng.random() < extra_edge_prob:
                edges[(i, j)] = float(rng.uniform(0.1, 1.0))
    return build_from_edge_list([(i, j, w) for (i, j), w in edges.items()], n)
