"""Graph/dataset data model, TUDataset ingestion, imbalanced splits, up-sampling."""
from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

FEATURE_SOURCES = ("attributes", "node_labels", "constant", "degree_onehot")


class DataError(ValueError):
    """Raised for malformed dataset files or invalid split requests."""


def _canonical_edges(edges, node_count):
    seen = set()
    out = []
    for u, v in edges:
        if u == v:
            continue
        if not (0 <= u < node_count and 0 <= v < node_count):
            raise DataError(f"edge ({u},{v}) outside node range [0,{node_count})")
        e = (u, v) if u < v else (v, u)
        if e not in seen:
            seen.add(e)
            out.append(e)
    out.sort()
    return tuple(out)


@dataclass(frozen=True)
class Graph:
    """One attributed graph: undirected simple edges, per-node feature rows.

    Edges are stored once each, (min, max)-ordered and sorted; features is an
    [node_count x feature_dim] float64 matrix; node_labels, when present, are
    small non-negative ints used by the discrete graph kernels.
    """

    node_count: int
    edges: tuple[tuple[int, int], ...]
    features: np.ndarray
    graph_label: int
    node_labels: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.node_count < 1:
            raise DataError("graph must have at least one node")
        object.__setattr__(self, "edges", _canonical_edges(self.edges, self.node_count))
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        if feats.ndim != 2 or feats.shape[0] != self.node_count:
            raise DataError(
                f"features shape {feats.shape} does not match node_count {self.node_count}"
            )
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        if self.node_labels is not None:
            labels = tuple(int(l) for l in self.node_labels)
            if len(labels) != self.node_count:
                raise DataError("node_labels length does not match node_count")
            if any(l < 0 for l in labels):
                raise DataError("node_labels must be non-negative")
            object.__setattr__(self, "node_labels", labels)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def neighbors(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.node_count)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return adj

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.node_count, dtype=np.int64)
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg


@dataclass(frozen=True)
class Dataset:
    name: str
    graphs: tuple[Graph, ...]
    num_classes: int
    feature_source: str = "constant"

    def __post_init__(self):
        if self.num_classes < 2:
            raise DataError(f"dataset needs at least 2 classes, got C={self.num_classes}")
        if not self.graphs:
            raise DataError("dataset is empty")
        object.__setattr__(self, "graphs", tuple(self.graphs))
        dims = {g.feature_dim for g in self.graphs}
        if len(dims) != 1:
            raise DataError(f"graphs disagree on feature_dim: {sorted(dims)}")
        for i, g in enumerate(self.graphs):
            if not (0 <= g.graph_label < self.num_classes):
                raise DataError(f"graph {i} label {g.graph_label} outside [0,{self.num_classes})")
        if self.feature_source not in FEATURE_SOURCES:
            raise DataError(f"unknown feature_source {self.feature_source!r}")

    def __len__(self) -> int:
        return len(self.graphs)

    @property
    def feature_dim(self) -> int:
        return self.graphs[0].feature_dim

    def labels(self) -> np.ndarray:
        return np.array([g.graph_label for g in self.graphs], dtype=np.int64)


@dataclass(frozen=True)
class DatasetStats:
    graph_count: int
    avg_nodes: float
    avg_edges: float
    feature_dim: int
    class_histogram: tuple[int, ...]


def dataset_stats(dataset: Dataset) -> DatasetStats:
    hist = [0] * dataset.num_classes
    for g in dataset.graphs:
        hist[g.graph_label] += 1
    return DatasetStats(
        graph_count=len(dataset),
        avg_nodes=float(np.mean([g.node_count for g in dataset.graphs])),
        avg_edges=float(np.mean([g.edge_count for g in dataset.graphs])),
        feature_dim=dataset.feature_dim,
        class_histogram=tuple(hist),
    )


# ---------------------------------------------------------------------------
# TUDataset format ingestion
#
# `{name}_A.txt`               one edge per line, "i, j", 1-based global ids
# `{name}_graph_indicator.txt` line k: 1-based graph id of global node k
# `{name}_graph_labels.txt`    one integer per graph
# `{name}_node_labels.txt`     optional, one integer per node
# `{name}_node_attributes.txt` optional, one comma-separated vector per node
# ---------------------------------------------------------------------------

def _read_int_lines(path: str) -> list[int]:
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                values.append(int(float(line)) if "." in line else int(line))
            except ValueError as exc:
                raise DataError(f"{os.path.basename(path)}:{lineno}: non-numeric token {line!r}") from exc
    return values


def _split_fields(line: str) -> list[str]:
    return line.replace(",", " ").split()


def load_tudataset(directory: str, name: str) -> Dataset:
    """Load a TUDataset-format directory into a Dataset.

    Node indices become 0-based and graph-local; duplicate directed edge
    lines collapse to one undirected edge; graph labels are remapped onto a
    contiguous [0, C). Features come from node attributes when present, else
    a one-hot of the node label, else a constant 1.0 column.
    """
    directory = str(directory)
    a_path = os.path.join(directory, f"{name}_A.txt")
    ind_path = os.path.join(directory, f"{name}_graph_indicator.txt")
    lab_path = os.path.join(directory, f"{name}_graph_labels.txt")
    for path in (a_path, ind_path, lab_path):
        if not os.path.exists(path):
            raise DataError(f"missing mandatory file {path}")

    indicator = _read_int_lines(ind_path)
    raw_graph_labels = _read_int_lines(lab_path)
    n_graphs = len(raw_graph_labels)
    if not indicator:
        raise DataError(f"{name}_graph_indicator.txt is empty")
    if min(indicator) < 1 or max(indicator) > n_graphs:
        raise DataError(f"{name}_graph_indicator.txt references graph id outside [1,{n_graphs}]")

    # global 1-based node id -> (graph index, local 0-based id)
    local_index = np.zeros(len(indicator), dtype=np.int64)
    node_counts = [0] * n_graphs
    graph_of = np.asarray(indicator, dtype=np.int64) - 1
    for i, g in enumerate(graph_of):
        local_index[i] = node_counts[g]
        node_counts[g] += 1
    if any(c == 0 for c in node_counts):
        raise DataError("a graph has zero nodes per the indicator file")

    edges_per_graph: list[list[tuple[int, int]]] = [[] for _ in range(n_graphs)]
    with open(a_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = _split_fields(line)
            if len(fields) != 2:
                raise DataError(f"{name}_A.txt:{lineno}: expected two node ids, got {line!r}")
            try:
                u, v = int(fields[0]), int(fields[1])
            except ValueError as exc:
                raise DataError(f"{name}_A.txt:{lineno}: non-numeric token in {line!r}") from exc
            if not (1 <= u <= len(indicator) and 1 <= v <= len(indicator)):
                raise DataError(f"{name}_A.txt:{lineno}: node id outside [1,{len(indicator)}]")
            gu, gv = graph_of[u - 1], graph_of[v - 1]
            if gu != gv:
                raise DataError(
                    f"{name}_A.txt:{lineno}: edge ({u},{v}) crosses graphs {gu + 1} and {gv + 1}"
                )
            edges_per_graph[gu].append((int(local_index[u - 1]), int(local_index[v - 1])))

    node_labels = None
    nl_path = os.path.join(directory, f"{name}_node_labels.txt")
    if os.path.exists(nl_path):
        node_labels = _read_int_lines(nl_path)
        if len(node_labels) != len(indicator):
            raise DataError(f"{name}_node_labels.txt has {len(node_labels)} lines, expected {len(indicator)}")

    node_attrs = None
    na_path = os.path.join(directory, f"{name}_node_attributes.txt")
    if os.path.exists(na_path):
        node_attrs = []
        with open(na_path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    node_attrs.append([float(x) for x in _split_fields(line)])
                except ValueError as exc:
                    raise DataError(f"{name}_node_attributes.txt:{lineno}: non-numeric token") from exc
        if len(node_attrs) != len(indicator):
            raise DataError(f"{name}_node_attributes.txt has {len(node_attrs)} lines, expected {len(indicator)}")

    label_map = {lab: i for i, lab in enumerate(sorted(set(raw_graph_labels)))}
    if len(label_map) < 2:
        raise DataError(f"dataset {name} has C={len(label_map)} classes; C >= 2 required")

    if node_attrs is not None:
        feature_source = "attributes"
    elif node_labels is not None:
        feature_source = "node_labels"
        onehot_width = max(node_labels) + 1
    else:
        feature_source = "constant"

    nodes_of_graph: list[list[int]] = [[] for _ in range(n_graphs)]
    for i, g in enumerate(graph_of):
        nodes_of_graph[g].append(i)

    graphs = []
    for gi in range(n_graphs):
        nodes = nodes_of_graph[gi]
        n = len(nodes)
        if feature_source == "attributes":
            feats = np.asarray([node_attrs[i] for i in nodes], dtype=np.float64)
        elif feature_source == "node_labels":
            feats = np.zeros((n, onehot_width), dtype=np.float64)
            for row, i in enumerate(nodes):
                feats[row, node_labels[i]] = 1.0
        else:
            feats = np.ones((n, 1), dtype=np.float64)
        graphs.append(
            Graph(
                node_count=n,
                edges=tuple(edges_per_graph[gi]),
                features=feats,
                graph_label=label_map[raw_graph_labels[gi]],
                node_labels=tuple(node_labels[i] for i in nodes) if node_labels is not None else None,
            )
        )
    return Dataset(name=name, graphs=tuple(graphs), num_classes=len(label_map),
                   feature_source=feature_source)


def save_tudataset(dataset: Dataset, directory: str) -> None:
    """Write a Dataset back out in TUDataset format (inverse of load_tudataset).

    Edges are emitted in both directions as the public datasets do. Node
    attributes are written only when the dataset's features came from an
    attributes file; derived features (one-hot labels, constants, degrees)
    are reproducible from the other files and are not persisted.
    """
    os.makedirs(directory, exist_ok=True)
    name = dataset.name
    offsets = np.cumsum([0] + [g.node_count for g in dataset.graphs])

    with open(os.path.join(directory, f"{name}_A.txt"), "w") as fh:
        for gi, g in enumerate(dataset.graphs):
            base = offsets[gi]
            directed = sorted(
                [(base + u + 1, base + v + 1) for u, v in g.edges]
                + [(base + v + 1, base + u + 1) for u, v in g.edges]
            )
            for u, v in directed:
                fh.write(f"{u}, {v}\n")

    with open(os.path.join(directory, f"{name}_graph_indicator.txt"), "w") as fh:
        for gi, g in enumerate(dataset.graphs):
            fh.write(f"{gi + 1}\n" * g.node_count)

    with open(os.path.join(directory, f"{name}_graph_labels.txt"), "w") as fh:
        for g in dataset.graphs:
            fh.write(f"{g.graph_label}\n")

    if all(g.node_labels is not None for g in dataset.graphs):
        with open(os.path.join(directory, f"{name}_node_labels.txt"), "w") as fh:
            for g in dataset.graphs:
                for lab in g.node_labels:
                    fh.write(f"{lab}\n")

    if dataset.feature_source == "attributes":
        with open(os.path.join(directory, f"{name}_node_attributes.txt"), "w") as fh:
            for g in dataset.graphs:
                for row in g.features:
                    fh.write(", ".join(f"{x:.17g}" for x in row) + "\n")


def degree_onehot_features(dataset: Dataset, max_degree: int | None = None) -> Dataset:
    """Replace all features with one-hot degree encodings of width max_degree+1.

    Degrees above max_degree clamp to the last bucket. Defaults to the
    dataset-wide observed maximum degree (lossless).
    """
    observed = max(int(g.degrees().max(initial=0)) for g in dataset.graphs)
    if max_degree is None:
        max_degree = observed
    if max_degree < 0:
        raise DataError("max_degree must be >= 0")
    width = max_degree + 1
    graphs = []
    for g in dataset.graphs:
        feats = np.zeros((g.node_count, width), dtype=np.float64)
        for i, d in enumerate(g.degrees()):
            feats[i, min(int(d), max_degree)] = 1.0
        graphs.append(replace(g, features=feats))
    return replace(dataset, graphs=tuple(graphs), feature_source="degree_onehot")


# ---------------------------------------------------------------------------
# Imbalanced splits and minority up-sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Split:
    """Disjoint train/val/test indices plus per-index up-sampling counts.

    upsample_counts aligns with train_idx and val_upsample_counts with
    val_idx; both are all-ones until upsample_minority is applied.
    """

    train_idx: tuple[int, ...]
    val_idx: tuple[int, ...]
    test_idx: tuple[int, ...]
    upsample_counts: tuple[int, ...]
    val_upsample_counts: tuple[int, ...]
    seed: int

    def __post_init__(self):
        groups = (self.train_idx, self.val_idx, self.test_idx)
        flat = [i for grp in groups for i in grp]
        if len(set(flat)) != len(flat):
            raise DataError("train/val/test indices overlap")
        if len(self.upsample_counts) != len(self.train_idx):
            raise DataError("upsample_counts length mismatch")
        if len(self.val_upsample_counts) != len(self.val_idx):
            raise DataError("val_upsample_counts length mismatch")
        if any(c < 1 for c in self.upsample_counts + self.val_upsample_counts):
            raise DataError("up-sample counts must be >= 1")

    def expanded_train(self) -> list[int]:
        return [i for i, c in zip(self.train_idx, self.upsample_counts) for _ in range(c)]

    def expanded_val(self) -> list[int]:
        return [i for i, c in zip(self.val_idx, self.val_upsample_counts) for _ in range(c)]


def ratio_counts(n_graphs: int, minority_parts: int, majority_parts: int,
                 train_fraction: float = 0.25) -> tuple[int, int]:
    """Translate an imbalance ratio A:B and a train fraction into class counts.

    budget = round(fraction * N); minority = round(budget * A/(A+B));
    majority = round(minority * B/A). On a 188-graph dataset at 25% this
    gives (5, 45) for 1:9 and (12, 12) for 5:5 on 100 graphs.
    """
    if minority_parts < 1 or majority_parts < 1:
        raise DataError("ratio parts must be positive")
    budget = round(train_fraction * n_graphs)
    minority = round(budget * minority_parts / (minority_parts + majority_parts))
    if minority < 1:
        raise DataError(f"train budget {budget} leaves no minority graphs at "
                        f"{minority_parts}:{majority_parts}")
    majority = round(minority * majority_parts / minority_parts)
    return minority, majority


def make_imbalanced_split(dataset: Dataset, minority_class: int, n_minority_train: int,
                          n_majority_train: int, val_fraction: float, seed: int) -> Split:
    """Draw a seeded imbalanced train/val split; everything left is test.

    Training takes exactly (n_minority_train, n_majority_train) graphs of the
    minority/majority class; validation mirrors the same imbalance ratio at
    val_fraction of the dataset; selection is uniform at random under seed.
    Binary classification only (the imbalance protocol is defined on C=2).
    """
    if dataset.num_classes != 2:
        raise DataError("imbalanced split protocol requires a binary dataset (C=2)")
    if minority_class not in (0, 1):
        raise DataError(f"minority_class {minority_class} outside [0,2)")
    if n_minority_train < 1 or n_majority_train < 1:
        raise DataError("train counts must be >= 1")
    majority_class = 1 - minority_class

    labels = dataset.labels()
    by_class = {c: np.flatnonzero(labels == c) for c in (0, 1)}

    val_budget = round(val_fraction * len(dataset))
    n_minority_val = round(val_budget * n_minority_train / (n_minority_train + n_majority_train))
    n_majority_val = round(n_minority_val * n_majority_train / n_minority_train) if n_minority_val else 0

    need = {
        minority_class: n_minority_train + n_minority_val,
        majority_class: n_majority_train + n_majority_val,
    }
    for c, n_need in need.items():
        have = len(by_class[c])
        if have < n_need:
            raise DataError(
                f"class {c} has {have} graphs but the split needs {n_need} (short {n_need - have})"
            )

    rng = np.random.default_rng((seed, 0xD5))
    perm = {c: rng.permutation(by_class[c]) for c in (0, 1)}
    train = sorted(
        perm[minority_class][:n_minority_train].tolist()
        + perm[majority_class][:n_majority_train].tolist()
    )
    val = sorted(
        perm[minority_class][n_minority_train:n_minority_train + n_minority_val].tolist()
        + perm[majority_class][n_majority_train:n_majority_train + n_majority_val].tolist()
    )
    taken = set(train) | set(val)
    test = sorted(i for i in range(len(dataset)) if i not in taken)
    return Split(
        train_idx=tuple(train),
        val_idx=tuple(val),
        test_idx=tuple(test),
        upsample_counts=(1,) * len(train),
        val_upsample_counts=(1,) * len(val),
        seed=seed,
    )


def _balance_counts(indices: tuple[int, ...], labels: np.ndarray, num_classes: int) -> tuple[int, ...]:
    if not indices:
        return ()
    per_class = Counter(int(labels[i]) for i in indices)
    if len(per_class) < num_classes or min(per_class.values()) == 0:
        missing = [c for c in range(num_classes) if per_class.get(c, 0) == 0]
        raise DataError(f"cannot up-sample: classes {missing} have zero graphs in the split")
    target = max(per_class.values())
    counts = []
    seen: Counter = Counter()
    for i in indices:
        c = int(labels[i])
        base, extra = divmod(target, per_class[c])
        # round-robin: the first `extra` graphs of the class get one more copy
        counts.append(base + (1 if seen[c] < extra else 0))
        seen[c] += 1
    return tuple(counts)


def upsample_minority(split: Split, dataset: Dataset) -> Split:
    """Set duplication counts so the expanded train and val multisets are class-balanced."""
    labels = dataset.labels()
    return replace(
        split,
        upsample_counts=_balance_counts(split.train_idx, labels, dataset.num_classes),
        val_upsample_counts=_balance_counts(split.val_idx, labels, dataset.num_classes),
    )
