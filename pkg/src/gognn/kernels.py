"""Graph kernels, pairwise similarity matrices, kNN graph-of-graphs, homophily."""
from __future__ import annotations

import os
from collections import Counter, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import Dataset, Graph

SP_KERNEL = "sp"


class KernelError(ValueError):
    pass


def make_kernel_id(kind: str, wl_iters: int = 3) -> str:
    if kind == "sp":
        return SP_KERNEL
    if kind == "wl":
        if wl_iters < 0:
            raise KernelError("wl iterations must be >= 0")
        return f"wl:{wl_iters}"
    raise KernelError(f"unknown kernel kind {kind!r}")


def parse_kernel_id(kernel_id: str) -> tuple[str, int]:
    """Return (kind, wl_iters); wl_iters is 0 for the shortest-path kernel."""
    if kernel_id == SP_KERNEL:
        return "sp", 0
    if kernel_id.startswith("wl:"):
        try:
            h = int(kernel_id[3:])
        except ValueError:
            raise KernelError(f"bad kernel id {kernel_id!r}")
        if h < 0:
            raise KernelError(f"bad kernel id {kernel_id!r}")
        return "wl", h
    raise KernelError(f"bad kernel id {kernel_id!r}")


def _node_labels(g: Graph) -> tuple[int, ...]:
    # uniform-label fallback when the dataset carries no discrete labels
    return g.node_labels if g.node_labels is not None else (0,) * g.node_count


def bfs_distances(adj: list[list[int]], source: int) -> list[int]:
    """Unit-weight shortest-path distances from source; -1 for unreachable."""
    dist = [-1] * len(adj)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def sp_feature_map(g: Graph) -> Counter:
    """Count (distance, endpoint-label-pair) triples over unordered node pairs.

    Only finite distances >= 1 contribute; the label pair is unordered.
    """
    adj = g.neighbors()
    labels = _node_labels(g)
    feats: Counter = Counter()
    for u in range(g.node_count):
        dist = bfs_distances(adj, u)
        for v in range(u + 1, g.node_count):
            d = dist[v]
            if d > 0:
                la, lb = labels[u], labels[v]
                feats[(d, (la, lb) if la <= lb else (lb, la))] += 1
    return feats


def shortest_path_kernel(g1: Graph, g2: Graph) -> float:
    """Delta shortest-path kernel: matching (distance, endpoint labels) pairs."""
    f1, f2 = sp_feature_map(g1), sp_feature_map(g2)
    if len(f2) < len(f1):
        f1, f2 = f2, f1
    return float(sum(c * f2[key] for key, c in f1.items() if key in f2))


def wl_feature_maps(graphs: list[Graph], h: int, color_table: dict | None = None) -> list[Counter]:
    """Per-graph color histograms over refinement rounds 0..h, shared color table.

    Keys are (round, color) so colors recurring across rounds cannot collide.
    """
    if h < 0:
        raise KernelError("wl iterations must be >= 0")
    if color_table is None:
        color_table = {}

    def intern(key) -> int:
        color = color_table.get(key)
        if color is None:
            color = len(color_table)
            color_table[key] = color
        return color

    colorings = [[intern(("raw", lab)) for lab in _node_labels(g)] for g in graphs]
    adjacencies = [g.neighbors() for g in graphs]
    feats = [Counter() for _ in graphs]
    for gi, colors in enumerate(colorings):
        feats[gi].update((0, c) for c in colors)
    for rnd in range(1, h + 1):
        for gi, g in enumerate(graphs):
            colors = colorings[gi]
            new_colors = [
                intern((colors[u], tuple(sorted(colors[v] for v in adjacencies[gi][u]))))
                for u in range(g.node_count)
            ]
            colorings[gi] = new_colors
            feats[gi].update((rnd, c) for c in new_colors)
    return feats


def wl_kernel(g1: Graph, g2: Graph, h: int = 3) -> float:
    """WL subtree kernel: inner product of round-wise color histograms."""
    f1, f2 = wl_feature_maps([g1, g2], h)
    if len(f2) < len(f1):
        f1, f2 = f2, f1
    return float(sum(c * f2[key] for key, c in f1.items() if key in f2))


@dataclass(frozen=True)
class SimilarityMatrix:
    values: np.ndarray
    normalized: bool
    kernel_id: str

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
            raise KernelError(f"similarity matrix must be square, got {vals.shape}")
        if not np.array_equal(vals, vals.T):
            raise KernelError("similarity matrix must be symmetric")
        if vals.min(initial=0.0) < 0:
            raise KernelError("similarities must be non-negative")
        if self.normalized:
            if not np.allclose(np.diag(vals), 1.0, atol=1e-9):
                raise KernelError("normalized matrix must have unit diagonal")
            if vals.max(initial=0.0) > 1.0 + 1e-9:
                raise KernelError("normalized similarities must be <= 1")
        parse_kernel_id(self.kernel_id)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _feature_matrix(feature_maps: list[Counter]) -> sp.csr_matrix:
    key_index: dict = {}
    rows, cols, data = [], [], []
    for i, fm in enumerate(feature_maps):
        for key, count in fm.items():
            j = key_index.setdefault(key, len(key_index))
            rows.append(i)
            cols.append(j)
            data.append(float(count))
    n, k = len(feature_maps), max(len(key_index), 1)
    return sp.csr_matrix((data, (rows, cols)), shape=(n, k))


def similarity_matrix(dataset: Dataset, kernel_id: str = SP_KERNEL, normalize: bool = True,
                      workers: int = 1) -> SimilarityMatrix:
    """All-pairs kernel similarities, optionally cosine-normalized.

    The result is deterministic regardless of worker count: workers only
    parallelize per-graph feature extraction, and the Gram matrix is an
    exact integer-count product.
    """
    kind, h = parse_kernel_id(kernel_id)
    graphs = list(dataset.graphs)
    if kind == "sp":
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                feature_maps = list(pool.map(sp_feature_map, graphs))
        else:
            feature_maps = [sp_feature_map(g) for g in graphs]
    else:
        feature_maps = wl_feature_maps(graphs, h)

    f = _feature_matrix(feature_maps)
    values = (f @ f.T).toarray().astype(np.float64)
    values = np.triu(values) + np.triu(values, 1).T  # exact symmetry

    if normalize:
        diag = np.diag(values).copy()
        for i, d in enumerate(diag):
            if d <= 0.0:
                raise KernelError(f"graph {i} has zero self-similarity; cannot normalize")
        values = values / np.sqrt(np.outer(diag, diag))
        np.fill_diagonal(values, 1.0)
    return SimilarityMatrix(values=values, normalized=normalize, kernel_id=kernel_id)


# --- cache file: `GOGSIM v1 <kernel_id> <N> <normalized:0|1>` + upper triangle f64 LE ---

_MAGIC = b"GOGSIM v1"


def save_similarity(path: str, s: SimilarityMatrix) -> None:
    n = s.n
    header = f"GOGSIM v1 {s.kernel_id} {n} {1 if s.normalized else 0}\n"
    triangle = s.values[np.triu_indices(n)]
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(triangle.astype("<f8").tobytes())


def load_similarity(path: str) -> SimilarityMatrix:
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        fields = header.split()
        if len(fields) != 5 or b" ".join(fields[:2]) != _MAGIC:
            raise KernelError(f"{path}: not a GOGSIM v1 cache file")
        kernel_id = fields[2].decode("ascii")
        n = int(fields[3])
        normalized = fields[4] == b"1"
        expected = n * (n + 1) // 2
        payload = fh.read()
    triangle = np.frombuffer(payload, dtype="<f8")
    if triangle.size != expected:
        raise KernelError(f"{path}: payload holds {triangle.size} floats, expected {expected}")
    values = np.zeros((n, n), dtype=np.float64)
    iu = np.triu_indices(n)
    values[iu] = triangle
    values = np.triu(values) + np.triu(values, 1).T
    return SimilarityMatrix(values=values, normalized=normalized, kernel_id=kernel_id)


# ---------------------------------------------------------------------------
# kNN graph-of-graphs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GoGraph:
    """Higher-level graph with one node per dataset graph."""

    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    k: int

    def __post_init__(self):
        seen = set()
        for u, v in self.edges:
            if u == v:
                raise KernelError("GoG stores no self-loops")
            if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes):
                raise KernelError(f"GoG edge ({u},{v}) outside range")
            e = (min(u, v), max(u, v))
            if e in seen:
                raise KernelError(f"duplicate GoG edge {e}")
            seen.add(e)
        object.__setattr__(self, "edges", tuple(sorted(seen)))

    def neighbors(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return adj


def topk_neighbors(values: np.ndarray, i: int, k: int) -> list[int]:
    """Indices of the k most similar nodes to i, ties broken by lower index."""
    n = values.shape[0]
    if not (1 <= k < n):
        raise KernelError(f"k={k} must satisfy 1 <= k < N={n}")
    order = np.lexsort((np.arange(n), -values[i]))
    return [int(j) for j in order if j != i][:k]


def knn_gog(s: SimilarityMatrix, k: int) -> GoGraph:
    """Union-symmetrized kNN graph over the similarity matrix.

    Each node selects its k most similar peers (ties to the lower index); an
    undirected edge exists when either endpoint selected the other, so every
    node ends with degree >= k.
    """
    n = s.n
    edges = set()
    for i in range(n):
        for j in topk_neighbors(s.values, i, k):
            edges.add((min(i, j), max(i, j)))
    gog = GoGraph(num_nodes=n, edges=tuple(sorted(edges)), k=k)
    degrees = np.zeros(n, dtype=np.int64)
    for u, v in gog.edges:
        degrees[u] += 1
        degrees[v] += 1
    if degrees.min() < k:
        raise KernelError("union-kNN construction lost a selection (degree < k)")
    return gog


def edge_homophily(gog: GoGraph, labels) -> float:
    """Fraction of GoG edges whose endpoint graphs share a class label."""
    if not gog.edges:
        raise KernelError("edge homophily undefined on an empty edge set")
    labels = np.asarray(labels)
    same = sum(1 for u, v in gog.edges if labels[u] == labels[v])
    return same / len(gog.edges)
