"""GIN encoder, MLP classifier, cross-entropy, Adam, and checkpoint IO."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, constant, make_node, parameter, softmax, take_per_row
from .data import Graph

LOG_PROB_FLOOR = 1e-12


class ModelError(ValueError):
    pass


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.weight = parameter(glorot_uniform(rng, in_dim, out_dim))
        self.bias = parameter(np.zeros(out_dim))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class Mlp:
    """affine -> ReLU -> affine, the per-layer GIN transform."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, rng: np.random.Generator):
        self.lin1 = Linear(in_dim, hidden_dim, rng)
        self.lin2 = Linear(hidden_dim, out_dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(self.lin1(x).relu())

    def parameters(self) -> list[Tensor]:
        return self.lin1.parameters() + self.lin2.parameters()


def neighbor_sum(x: Tensor, edges, epsilon: float) -> Tensor:
    """(A + (1+eps)I) @ x with each node's neighbor rows summed in value order.

    Summing sorted values makes the result bit-identical under any node
    relabeling; the gradient is the ordinary (order-free) one.
    """
    vals = x.values
    n = vals.shape[0]
    out_vals = (1.0 + epsilon) * vals
    if edges:
        adj: list[list[int]] = [[] for _ in range(n)]
        for u, v in edges:
            adj[u].append(v)
            adj[v].append(u)
        by_degree: dict[int, tuple[list[int], list[list[int]]]] = {}
        for i, nbrs in enumerate(adj):
            if nbrs:
                nodes, lists = by_degree.setdefault(len(nbrs), ([], []))
                nodes.append(i)
                lists.append(nbrs)
        for nodes, lists in by_degree.values():
            gathered = vals[np.asarray(lists)]
            out_vals[np.asarray(nodes)] += np.sort(gathered, axis=1).sum(axis=1)

    if not x.requires_grad:
        return make_node(out_vals, (x,), None)
    u_idx = np.array([u for u, _ in edges], dtype=np.int64)
    v_idx = np.array([v for _, v in edges], dtype=np.int64)

    def backward(g):
        contrib = (1.0 + epsilon) * g
        if len(u_idx):
            np.add.at(contrib, u_idx, g[v_idx])
            np.add.at(contrib, v_idx, g[u_idx])
        x._accumulate(contrib)

    return make_node(out_vals, (x,), backward)


def gin_layer_forward(x: Tensor, edges, epsilon: float, mlp) -> Tensor:
    """One sum-aggregation layer: mlp((A + (1+eps)I) @ x)."""
    return mlp(neighbor_sum(x, edges, epsilon))


def readout_sum(node_reprs: Tensor) -> Tensor:
    """Global-sum pooling into one graph vector, column values summed in sorted order."""
    vals = np.sort(node_reprs.values, axis=0).sum(axis=0)

    def backward(g):
        node_reprs._accumulate(np.broadcast_to(g, node_reprs.shape).copy())

    return make_node(vals, (node_reprs,), backward if node_reprs.requires_grad else None)


class GinLayer:
    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, epsilon: float,
                 rng: np.random.Generator):
        self.epsilon = float(epsilon)
        self.mlp = Mlp(in_dim, hidden_dim, out_dim, rng)

    def __call__(self, x: Tensor, edges) -> Tensor:
        return self.mlp(neighbor_sum(x, edges, self.epsilon))

    def parameters(self) -> list[Tensor]:
        return self.mlp.parameters()


class GinEncoder:
    """Stack of GIN layers followed by sum readout."""

    def __init__(self, in_dim: int, hidden_dim: int, num_layers: int, epsilon: float,
                 rng: np.random.Generator):
        if num_layers < 1:
            raise ModelError("encoder needs at least one layer")
        self.layers = []
        dim = in_dim
        for _ in range(num_layers):
            self.layers.append(GinLayer(dim, hidden_dim, hidden_dim, epsilon, rng))
            dim = hidden_dim
        self.out_dim = hidden_dim

    def forward_features(self, features: Tensor, edges) -> Tensor:
        x = features
        for layer in self.layers:
            x = layer(x, edges)
        return readout_sum(x)

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


def encoder_forward(graph: Graph, encoder: GinEncoder) -> Tensor:
    if graph.feature_dim != encoder.layers[0].mlp.lin1.weight.shape[0]:
        raise ModelError(
            f"graph feature dim {graph.feature_dim} does not match encoder input "
            f"{encoder.layers[0].mlp.lin1.weight.shape[0]}"
        )
    return encoder.forward_features(constant(graph.features), graph.edges)


class Classifier:
    """2-layer MLP from graph representations to class logits."""

    def __init__(self, in_dim: int, hidden_dim: int, num_classes: int, rng: np.random.Generator):
        self.lin1 = Linear(in_dim, hidden_dim, rng)
        self.lin2 = Linear(hidden_dim, num_classes, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(self.lin1(x).relu())

    def parameters(self) -> list[Tensor]:
        return self.lin1.parameters() + self.lin2.parameters()


class Model:
    def __init__(self, encoder: GinEncoder, classifier: Classifier):
        self.encoder = encoder
        self.classifier = classifier

    def parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + self.classifier.parameters()

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        for li, layer in enumerate(self.encoder.layers):
            for part, lin in (("lin1", layer.mlp.lin1), ("lin2", layer.mlp.lin2)):
                named.append((f"encoder.{li}.{part}.weight", lin.weight))
                named.append((f"encoder.{li}.{part}.bias", lin.bias))
        for part, lin in (("lin1", self.classifier.lin1), ("lin2", self.classifier.lin2)):
            named.append((f"classifier.{part}.weight", lin.weight))
            named.append((f"classifier.{part}.bias", lin.bias))
        return named

    def state(self) -> list[np.ndarray]:
        return [p.values.copy() for p in self.parameters()]

    def load_state(self, state: list[np.ndarray]) -> None:
        for p, values in zip(self.parameters(), state):
            p.values = np.array(values, dtype=np.float64)


def build_model(feature_dim: int, hidden_dim: int, num_classes: int, num_layers: int,
                epsilon: float, seed) -> Model:
    rng = np.random.default_rng(seed)
    encoder = GinEncoder(feature_dim, hidden_dim, num_layers, epsilon, rng)
    classifier = Classifier(encoder.out_dim, hidden_dim, num_classes, rng)
    return Model(encoder, classifier)


def softmax_cross_entropy(logits: Tensor, labels, class_weights=None) -> Tensor:
    """Weighted mean of -w_y * log softmax(logits)_y, normalized by the weight sum.

    Log-probabilities are floored at 1e-12 so exact-zero probabilities stay
    finite; the floor zeroes the gradient of the saturated entries.
    """
    if not np.isfinite(logits.values).all():
        raise ModelError("non-finite logits in cross-entropy")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= logits.shape[1]:
        raise ModelError("label outside [0, C)")
    probs = softmax(logits, axis=1)
    picked = take_per_row(probs, labels).clamp_min(LOG_PROB_FLOOR).log()
    if class_weights is None:
        return -picked.mean()
    weights = np.asarray(class_weights, dtype=np.float64)[labels]
    return -(picked * constant(weights)).sum() / float(weights.sum())


@dataclass
class OptimizerState:
    """Adam accumulators with decoupled weight decay."""

    learning_rate: float = 0.01
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(params: list[Tensor], opt: OptimizerState) -> None:
    """One bias-corrected Adam update; parameters with no gradient are skipped."""
    opt.step_count += 1
    t = opt.step_count
    for i, p in enumerate(params):
        if p.grad is None:
            continue
        m = opt.first_moment.get(i)
        v = opt.second_moment.get(i)
        if m is None:
            m = np.zeros_like(p.values)
            v = np.zeros_like(p.values)
        m = opt.beta1 * m + (1.0 - opt.beta1) * p.grad
        v = opt.beta2 * v + (1.0 - opt.beta2) * p.grad**2
        opt.first_moment[i] = m
        opt.second_moment[i] = v
        m_hat = m / (1.0 - opt.beta1**t)
        v_hat = v / (1.0 - opt.beta2**t)
        update = m_hat / (np.sqrt(v_hat) + opt.eps)
        if opt.weight_decay:
            update = update + opt.weight_decay * p.values
        p.values = p.values - opt.learning_rate * update


# --- checkpoint: `GOGMDL v1` + (name_len, name, ndim, dims..., f64 payload) blocks ---

_CKPT_MAGIC = b"GOGMDL v1\n"


def save_checkpoint(path: str, model: Model) -> None:
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        for name, p in model.named_parameters():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", p.values.ndim))
            for dim in p.values.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(p.values.astype("<f8").tobytes())


def load_checkpoint(path: str, model: Model) -> None:
    with open(path, "rb") as fh:
        if fh.read(len(_CKPT_MAGIC)) != _CKPT_MAGIC:
            raise ModelError(f"{path}: not a GOGMDL v1 checkpoint")
        table = dict(model.named_parameters())
        seen = set()
        while True:
            raw = fh.read(4)
            if not raw:
                break
            (name_len,) = struct.unpack("<I", raw)
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            payload = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            if name not in table:
                raise ModelError(f"{path}: unknown parameter {name!r}")
            if table[name].values.shape != shape:
                raise ModelError(
                    f"{path}: parameter {name!r} has shape {shape}, model expects "
                    f"{table[name].values.shape}"
                )
            table[name].values = payload.astype(np.float64)
            seen.add(name)
        missing = set(table) - seen
        if missing:
            raise ModelError(f"{path}: checkpoint missing parameters {sorted(missing)}")
