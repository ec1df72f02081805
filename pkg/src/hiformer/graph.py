"""Turbine graph construction and random-walk node embeddings.

The farm layout becomes a weighted undirected graph: Gaussian-kernel
weights over pairwise distances, thresholded for sparsity.  Node vectors
come from second-order biased random walks (return parameter ``p``,
in-out parameter ``q``) fed to a skip-gram model trained with negative
sampling; everything is deterministic under a fixed seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ConfigError, DataError, SchemaError
from .ioutil import atomic_path
from .tensor import Tensor


@dataclass
class TurbineGraph:
    """Weighted undirected graph over the turbines of one farm."""

    adjacency: np.ndarray
    coords: np.ndarray | None = None

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ConfigError(f"adjacency must be square, got shape {a.shape}")
        if np.max(np.abs(a - a.T)) > 1e-12:
            raise ConfigError("adjacency must be symmetric within 1e-12")
        if a.min() < 0.0 or a.max() > 1.0:
            raise ConfigError("adjacency entries must lie in [0, 1]")
        self.adjacency = a

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.adjacency, k=1)))


@dataclass(frozen=True)
class Node2vecConfig:
    dims: int = 64
    walk_len: int = 20
    walks_per_node: int = 10
    p: float = 1.0
    q: float = 1.0
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    decay: float = 0.003
    seed: int = 0

    def validate(self) -> None:
        if self.p <= 0 or self.q <= 0:
            raise ConfigError(f"walk bias parameters must be positive, got p={self.p} q={self.q}")
        if self.dims < 2:
            raise ConfigError(f"embedding width must be >= 2, got {self.dims}")
        if self.walk_len < self.window + 1:
            raise ConfigError(f"walk_len must be >= window+1, got walk_len={self.walk_len} window={self.window}")
        if self.walks_per_node < 1 or self.epochs < 1 or self.negatives < 1:
            raise ConfigError("walks_per_node, epochs and negatives must all be >= 1")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.decay < 0:
            raise ConfigError(f"weight decay must be >= 0, got {self.decay}")


def build_adjacency(coords, sigma: float | None = None, epsilon: float = 0.05) -> TurbineGraph:
    """Gaussian-kernel adjacency exp(-d^2 / 2 sigma^2), zeroed at or below ``epsilon``.

    ``sigma`` defaults to the median positive pairwise distance.  Duplicate
    coordinates get weight 1; the diagonal stays zero.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise DataError(f"coords must be (N, 2) positions, got shape {coords.shape}")
    n = coords.shape[0]
    if n < 2:
        raise DataError(f"need at least 2 nodes to build a graph, got {n}")
    if not (0.0 <= epsilon < 1.0):
        raise ConfigError(f"epsilon must lie in [0, 1), got {epsilon}")

    delta = coords[:, None, :] - coords[None, :, :]
    dist2 = (delta**2).sum(axis=2)
    if sigma is None:
        off = dist2[np.triu_indices(n, k=1)]
        positive = off[off > 0]
        sigma = float(np.sqrt(np.median(positive))) if positive.size else 1.0
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")

    weights = np.exp(-dist2 / (2.0 * sigma**2))
    weights[weights <= epsilon] = 0.0
    np.fill_diagonal(weights, 0.0)
    return TurbineGraph(adjacency=weights, coords=coords)


def uniform_adjacency(n: int) -> TurbineGraph:
    """All-ones off-diagonal scaled to 1/(n-1); fallback when no layout is known."""
    if n < 2:
        raise DataError(f"need at least 2 nodes, got {n}")
    a = np.full((n, n), 1.0 / (n - 1))
    np.fill_diagonal(a, 0.0)
    return TurbineGraph(adjacency=a)


def transition_probabilities(graph: TurbineGraph, prev: int | None, cur: int, p: float, q: float):
    """Neighbors of ``cur`` and their second-order transition probabilities.

    With ``prev`` None this is the weight-proportional first-order rule;
    otherwise edge weights are rescaled by 1/p (return), 1 (common
    neighbor of ``prev``), or 1/q (outward move).
    """
    a = graph.adjacency
    neighbors = np.nonzero(a[cur])[0]
    if neighbors.size == 0:
        return neighbors, np.zeros(0)
    weights = a[cur, neighbors].copy()
    if prev is not None:
        bias = np.where(a[prev, neighbors] > 0.0, 1.0, 1.0 / q)
        bias[neighbors == prev] = 1.0 / p
        weights = weights * bias
    return neighbors, weights / weights.sum()


def biased_walks(graph: TurbineGraph, cfg: Node2vecConfig, rng: np.random.Generator) -> list[np.ndarray]:
    """Generate walks_per_node * N walks of length walk_len (shorter only at dead ends)."""
    cfg.validate()
    if graph.num_edges == 0:
        raise DataError("graph has no edges; walks are undefined")
    walks = []
    for _ in range(cfg.walks_per_node):
        for start in range(graph.n):
            walk = [start]
            while len(walk) < cfg.walk_len:
                prev = walk[-2] if len(walk) > 1 else None
                neighbors, probs = transition_probabilities(graph, prev, walk[-1], cfg.p, cfg.q)
                if neighbors.size == 0:
                    break  # isolated node: degenerate length-1 walk
                walk.append(int(neighbors[np.searchsorted(np.cumsum(probs), rng.random())]))
            walks.append(np.asarray(walk, dtype=np.int64))
    return walks


@dataclass
class EmbeddingResult:
    """Skip-gram output: node vectors (dims x N) plus the loss trajectory."""

    vectors: Tensor
    epoch_loss: list[float] = field(default_factory=list)


def train_embeddings(walks: list[np.ndarray], cfg: Node2vecConfig, n_nodes: int | None = None) -> EmbeddingResult:
    """Skip-gram with negative sampling over the walk corpus (plain SGD).

    Negatives come from the corpus unigram distribution raised to 3/4,
    skipping draws that equal the positive context.  The step size decays
    linearly to lr/10^4 and touched rows get L2 weight decay; without the
    decay the objective has no finite optimum on disconnected graphs and
    the vectors drift along a shared direction instead of settling.
    Returned vectors are mean-centered (the shared translation carries no
    inter-node information).  Single-threaded, deterministic under
    ``cfg.seed``; reported loss is the plain negative log-likelihood.
    """
    cfg.validate()
    if not walks:
        raise DataError("empty walk corpus")
    if n_nodes is None:
        n_nodes = int(max(int(w.max()) for w in walks)) + 1

    rng = np.random.default_rng(cfg.seed)
    scale = 2.0 / math.sqrt(cfg.dims)
    w_in = (rng.random((n_nodes, cfg.dims)) - 0.5) * scale
    w_out = (rng.random((n_nodes, cfg.dims)) - 0.5) * scale

    counts = np.zeros(n_nodes)
    for walk in walks:
        np.add.at(counts, walk, 1.0)
    noise = counts**0.75
    noise_cdf = np.cumsum(noise / noise.sum())

    pairs_per_epoch = 0
    for walk in walks:
        for i in range(len(walk)):
            pairs_per_epoch += min(len(walk), i + cfg.window + 1) - max(0, i - cfg.window) - 1
    total_pairs = max(pairs_per_epoch * cfg.epochs, 1)

    step = 0
    epoch_loss = []
    for _ in range(cfg.epochs):
        total, pairs = 0.0, 0
        for walk in walks:
            for i, center in enumerate(walk):
                lo = max(0, i - cfg.window)
                hi = min(len(walk), i + cfg.window + 1)
                for j in range(lo, hi):
                    if j == i:
                        continue
                    context = walk[j]
                    lr = cfg.lr * max(1.0 - step / total_pairs, 1e-4)
                    step += 1
                    v = w_in[center].copy()
                    negs = np.searchsorted(noise_cdf, rng.random(cfg.negatives))
                    negs = negs[negs != context]
                    # positive context
                    s = special.expit(w_out[context] @ v)
                    total -= np.log(max(s, 1e-12))
                    grad_v = (s - 1.0) * w_out[context] + cfg.decay * v
                    w_out[context] -= lr * ((s - 1.0) * v + cfg.decay * w_out[context])
                    # negative samples
                    if negs.size:
                        sn = special.expit(w_out[negs] @ v)
                        total -= np.log(np.maximum(1.0 - sn, 1e-12)).sum()
                        grad_v += sn @ w_out[negs]
                        w_out[negs] -= lr * (sn[:, None] * v[None, :] + cfg.decay * w_out[negs])
                    w_in[center] -= lr * grad_v
                    pairs += 1
        epoch_loss.append(total / max(pairs, 1))

    w_in -= w_in.mean(axis=0, keepdims=True)
    return EmbeddingResult(vectors=Tensor(w_in.T.copy()), epoch_loss=epoch_loss)


def node2vec_embed(graph: TurbineGraph, cfg: Node2vecConfig) -> EmbeddingResult:
    """Walks plus skip-gram in one call; the usual entry point."""
    rng = np.random.default_rng(cfg.seed)
    walks = biased_walks(graph, cfg, rng)
    return train_embeddings(walks, cfg, n_nodes=graph.n)


def read_coords_csv(path) -> tuple[list[str], np.ndarray]:
    """Load turbine positions from a header-led CSV: turbine_id,x,y."""
    ids, xs, ys = [], [], []
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            fields = reader.fieldnames or []
            for needed in ("turbine_id", "x", "y"):
                if needed not in fields:
                    raise SchemaError(f"missing column {needed!r} in {path}")
            for row in reader:
                ids.append(row["turbine_id"])
                xs.append(float(row["x"]))
                ys.append(float(row["y"]))
    except FileNotFoundError:
        raise DataError(f"coords file not found: {path}") from None
    except ValueError as exc:
        raise DataError(f"bad numeric value in coords file {path}: {exc}") from None
    if not ids:
        raise DataError(f"coords file {path} has no rows")
    return ids, np.column_stack([xs, ys])


def read_adjacency_csv(path) -> TurbineGraph:
    """Load an explicit square adjacency matrix (plain numeric CSV, no header)."""
    try:
        a = np.loadtxt(path, delimiter=",", ndmin=2)
    except FileNotFoundError:
        raise DataError(f"adjacency file not found: {path}") from None
    except ValueError as exc:
        raise DataError(f"bad adjacency file {path}: {exc}") from None
    return TurbineGraph(adjacency=a)


def write_embeddings_csv(path, vectors: Tensor | np.ndarray, ids: list[str] | None = None) -> None:
    """Export node vectors (dims x N) for inspection: one row per node."""
    arr = vectors.data if isinstance(vectors, Tensor) else np.asarray(vectors)
    dims, n = arr.shape
    if ids is None:
        ids = [str(i) for i in range(n)]
    with atomic_path(path) as tmp:
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["turbine_id"] + [f"e_{d}" for d in range(dims)])
            for v in range(n):
                writer.writerow([ids[v]] + [repr(float(x)) for x in arr[:, v]])
