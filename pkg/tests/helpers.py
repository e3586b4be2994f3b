"""Shared graph builders and independent oracles for the test suite."""
from __future__ import annotations

import os
from collections import Counter

import numpy as np

from gognn.data import Dataset, Graph

DATA_DIR = os.environ.get("GOG_DATA_DIR", os.path.join(os.path.dirname(__file__), "..", "data"))


def dataset_dir(name: str) -> str | None:
    path = os.path.join(DATA_DIR, name)
    return path if os.path.isdir(path) else None


def uniform_features(n: int, dim: int = 1) -> np.ndarray:
    return np.ones((n, dim))


def path_graph(n: int, label: int = 0, node_labels=None) -> Graph:
    return Graph(node_count=n, edges=tuple((i, i + 1) for i in range(n - 1)),
                 features=uniform_features(n), graph_label=label,
                 node_labels=node_labels)


def cycle_graph(n: int, label: int = 0, node_labels=None) -> Graph:
    return Graph(node_count=n, edges=tuple((i, (i + 1) % n) for i in range(n)),
                 features=uniform_features(n), graph_label=label,
                 node_labels=node_labels)


def star_graph(leaves: int, label: int = 0) -> Graph:
    return Graph(node_count=leaves + 1, edges=tuple((0, i + 1) for i in range(leaves)),
                 features=uniform_features(leaves + 1), graph_label=label)


def random_graph(rng: np.random.Generator, max_nodes: int = 8, labeled: bool = True,
                 label: int = 0) -> Graph:
    n = int(rng.integers(1, max_nodes + 1))
    edges = set()
    for _ in range(int(rng.integers(0, 2 * n + 1))):
        u, v = rng.integers(0, n, size=2)
        if u != v:
            edges.add((min(int(u), int(v)), max(int(u), int(v))))
    node_labels = tuple(int(l) for l in rng.integers(0, 3, size=n)) if labeled else None
    return Graph(node_count=n, edges=tuple(sorted(edges)), features=uniform_features(n),
                 graph_label=label, node_labels=node_labels)


def permuted_graph(g: Graph, perm: np.ndarray) -> Graph:
    """Relabel nodes of g by perm (node i becomes perm[i])."""
    inverse = np.argsort(perm)
    edges = tuple((int(perm[u]), int(perm[v])) for u, v in g.edges)
    features = g.features[inverse]
    node_labels = tuple(g.node_labels[i] for i in inverse) if g.node_labels else None
    return Graph(node_count=g.node_count, edges=edges, features=features,
                 graph_label=g.graph_label, node_labels=node_labels)


# ---------------------------------------------------------------------------
# Independent kernel oracles (deliberately different algorithms)
# ---------------------------------------------------------------------------

def floyd_warshall(g: Graph) -> np.ndarray:
    n = g.node_count
    dist = np.full((n, n), np.inf)
    np.fill_diagonal(dist, 0.0)
    for u, v in g.edges:
        dist[u, v] = dist[v, u] = 1.0
    for k in range(n):
        dist = np.minimum(dist, dist[:, k:k + 1] + dist[k:k + 1, :])
    return dist


def sp_kernel_bruteforce(g1: Graph, g2: Graph) -> float:
    """Quadruple loop over unordered node pairs, Floyd-Warshall distances."""
    d1, d2 = floyd_warshall(g1), floyd_warshall(g2)
    l1 = g1.node_labels or (0,) * g1.node_count
    l2 = g2.node_labels or (0,) * g2.node_count
    total = 0
    for u in range(g1.node_count):
        for v in range(u + 1, g1.node_count):
            if not np.isfinite(d1[u, v]):
                continue
            pair1 = tuple(sorted((l1[u], l1[v])))
            for x in range(g2.node_count):
                for y in range(x + 1, g2.node_count):
                    if d2[x, y] == d1[u, v] and tuple(sorted((l2[x], l2[y]))) == pair1:
                        total += 1
    return float(total)


def wl_kernel_naive(g1: Graph, g2: Graph, h: int) -> float:
    """String-signature WL with explicit per-pair color dictionaries."""
    graphs = [g1, g2]
    colorings = []
    for g in graphs:
        labels = g.node_labels or (0,) * g.node_count
        colorings.append([f"raw:{l}" for l in labels])
    adjacency = [g.neighbors() for g in graphs]

    total = 0.0
    for rnd in range(h + 1):
        if rnd > 0:
            dictionary: dict[str, str] = {}
            new_colorings = []
            for gi, g in enumerate(graphs):
                colors = colorings[gi]
                refreshed = []
                for u in range(g.node_count):
                    signature = colors[u] + "|" + ",".join(
                        sorted(colors[v] for v in adjacency[gi][u])
                    )
                    refreshed.append(dictionary.setdefault(signature, f"c{len(dictionary)}"))
                new_colorings.append(refreshed)
            colorings = new_colorings
        h1, h2 = Counter(colorings[0]), Counter(colorings[1])
        total += sum(count * h2.get(color, 0) for color, count in h1.items())
    return total


# ---------------------------------------------------------------------------
# Synthetic two-class datasets
# ---------------------------------------------------------------------------

def _degree_labeled(n: int, edges, label: int) -> Graph:
    deg = np.zeros(n, dtype=int)
    for u, v in edges:
        deg[u] += 1
        deg[v] += 1
    node_labels = tuple(int(min(d, 3)) for d in deg)
    features = np.zeros((n, 4))
    features[np.arange(n), list(node_labels)] = 1.0
    return Graph(node_count=n, edges=tuple(edges), features=features, graph_label=label,
                 node_labels=node_labels)


def toy_two_class_dataset(n_minority: int = 40, n_majority: int = 80, seed: int = 0) -> Dataset:
    """Cycles (minority) vs random trees (majority); degree-one-hot features."""
    rng = np.random.default_rng(seed)
    graphs = []
    for _ in range(n_minority):
        n = int(rng.integers(6, 13))
        graphs.append(_degree_labeled(n, [(i, (i + 1) % n) for i in range(n)], 0))
    for _ in range(n_majority):
        n = int(rng.integers(6, 13))
        edges = [(int(rng.integers(0, v)), v) for v in range(1, n)]
        graphs.append(_degree_labeled(n, edges, 1))
    return Dataset(name="toy", graphs=tuple(graphs), num_classes=2)


def size_separable_dataset(per_class: int = 20) -> Dataset:
    """Trivially separable: class by node count with constant features."""
    graphs = [path_graph(3, label=0) for _ in range(per_class)]
    graphs += [path_graph(9, label=1) for _ in range(per_class)]
    return Dataset(name="sizes", graphs=tuple(graphs), num_classes=2)
