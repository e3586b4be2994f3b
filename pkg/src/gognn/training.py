"""Sharpening, self-consistency, the training loop, prediction, F1, experiments."""
from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .augment import AugmentConfig, augment_variant
from .autodiff import Tensor, constant, l2norm_rows, softmax, stack_rows, take_rows
from .data import Dataset, Split, make_imbalanced_split, ratio_counts, upsample_minority
from .kernels import GoGraph, SimilarityMatrix, similarity_matrix
from .nn import Model, OptimizerState, adam_step, build_model, encoder_forward, softmax_cross_entropy
from .propagation import batch_induced_subgraph, propagate

MODES = ("g2gnn_edge", "g2gnn_node", "gin_plain", "gin_up", "gin_rw")

_MASK64 = (1 << 64) - 1
_INIT_STREAM = 1
_SHUFFLE_STREAM = 2
_PREDICT_EPOCH = 1 << 62


class TrainingError(ValueError):
    pass


def mode_uses_upsampling(mode: str) -> bool:
    return mode in ("gin_up", "g2gnn_edge", "g2gnn_node")


def mode_uses_gog(mode: str) -> bool:
    return mode in ("g2gnn_edge", "g2gnn_node")


def mode_strategy(mode: str) -> str:
    return {"g2gnn_edge": "remove_edges", "g2gnn_node": "mask_node_features"}.get(mode, "none")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "g2gnn_node"
    k: int = 2
    prop_layers: int = 2
    delta: float = 0.1
    num_variants: int = 2
    tau: float = 0.5
    learning_rate: float = 0.01
    weight_decay: float = 0.0
    hidden_dim: int = 128
    num_gin_layers: int = 2
    gin_epsilon: float = 0.0
    epochs: int = 500
    batch_size: int = 32
    patience: int = 50
    seed: int = 0
    grad_through_center: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise TrainingError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.tau <= 0:
            raise TrainingError("tau must be positive")
        if not (0.0 <= self.delta < 1.0):
            raise TrainingError("delta must be in [0,1)")
        if self.num_variants < 1 or self.epochs < 1 or self.batch_size < 1:
            raise TrainingError("num_variants, epochs and batch_size must be >= 1")
        if mode_uses_gog(self.mode) and self.k < 1:
            raise TrainingError("GoG modes need k >= 1")
        if self.prop_layers < 0 or self.patience < 0:
            raise TrainingError("prop_layers and patience must be >= 0")


# ---------------------------------------------------------------------------
# Sharpening and self-consistency
# ---------------------------------------------------------------------------

def sharpen(p: np.ndarray, tau: float) -> np.ndarray:
    """Temperature-sharpened distribution: p_j^tau / sum_c p_c^tau.

    tau == 1 returns the input unchanged (exact identity).
    """
    if tau <= 0:
        raise TrainingError("tau must be positive")
    p = np.asarray(p, dtype=np.float64)
    total = p.sum(axis=-1, keepdims=True)
    if np.any(total <= 0.0):
        raise TrainingError("cannot sharpen an all-zero distribution")
    if tau == 1.0:
        return p.copy()
    q = p**tau
    return q / q.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class PredictionBatch:
    """Per-variant class distributions with their average and sharpened center."""

    variant_dists: np.ndarray
    averaged: np.ndarray
    sharpened: np.ndarray

    def __post_init__(self):
        for name in ("variant_dists", "averaged", "sharpened"):
            arr = getattr(self, name)
            if np.any(arr < 0.0) or not np.allclose(arr.sum(axis=-1), 1.0, atol=1e-9):
                raise TrainingError(f"{name} rows must be distributions")


def prediction_batch(variant_dists: np.ndarray, tau: float) -> PredictionBatch:
    dists = np.asarray(variant_dists, dtype=np.float64)
    averaged = dists.mean(axis=0)
    return PredictionBatch(variant_dists=dists, averaged=averaged,
                           sharpened=sharpen(averaged, tau))


def _consistency_to_center(dists: Tensor, center: Tensor) -> Tensor:
    return l2norm_rows(center - dists).mean()


def self_consistency_loss(variant_dists, tau: float, grad_through_center: bool = False) -> Tensor:
    """Mean L2 distance from each variant's distribution to the sharpened mean.

    The sharpened center is a fixed target by default; gradients flow only
    into the per-variant distributions.
    """
    dists = variant_dists if isinstance(variant_dists, Tensor) else constant(variant_dists)
    if grad_through_center:
        center = dists.mean(axis=0)
        if tau != 1.0:
            q = center**tau
            center = q / q.sum()
        return _consistency_to_center(dists, center)
    center = constant(sharpen(dists.values.mean(axis=0), tau))
    return _consistency_to_center(dists, center)


def _batch_self_consistency(probs_per_variant: list[Tensor], tau: float,
                            grad_through_center: bool) -> Tensor:
    num_variants = len(probs_per_variant)
    if grad_through_center:
        center = probs_per_variant[0]
        for p in probs_per_variant[1:]:
            center = center + p
        center = center * (1.0 / num_variants)
        if tau != 1.0:
            q = center**tau
            center = q / q.sum(axis=1, keepdims=True)
    else:
        stacked = np.stack([p.values for p in probs_per_variant])
        center = constant(sharpen(stacked.mean(axis=0), tau))
    total = _consistency_to_center(probs_per_variant[0], center)
    for p in probs_per_variant[1:]:
        total = total + _consistency_to_center(p, center)
    return total * (1.0 / num_variants)


def total_loss(logit_batches: list[Tensor], labels, tau: float, class_weights=None,
               grad_through_center: bool = False) -> Tensor:
    """Cross-entropy plus self-consistency, unit-weighted, averaged over (graph, variant)."""
    if not logit_batches:
        raise TrainingError("total_loss needs at least one variant batch")
    num_variants = len(logit_batches)
    supervised = softmax_cross_entropy(logit_batches[0], labels, class_weights)
    for logits in logit_batches[1:]:
        supervised = supervised + softmax_cross_entropy(logits, labels, class_weights)
    supervised = supervised * (1.0 / num_variants)
    consistency = _batch_self_consistency(
        [softmax(l, axis=1) for l in logit_batches], tau, grad_through_center
    )
    return supervised + consistency


# ---------------------------------------------------------------------------
# F1 metrics
# ---------------------------------------------------------------------------

def f1_scores(pred, truth, num_classes: int) -> dict:
    """Macro and micro F1; a class absent from truth and prediction scores 0."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape or pred.size == 0:
        raise TrainingError("pred and truth must be equal-length, non-empty")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(truth, pred):
        confusion[t, p] += 1
    per_class = []
    for c in range(num_classes):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        per_class.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    return {
        "f1_macro": float(np.mean(per_class)),
        "f1_micro": float(np.trace(confusion) / confusion.sum()),
    }


# ---------------------------------------------------------------------------
# Training loop (up-sampled batches, neighbor pull, T-way augmentation)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_f1_macro: float


@dataclass
class TrainResult:
    model: Model
    history: list[EpochRecord]
    step_losses: list[float]
    best_epoch: int
    best_val_f1: float


def _augment_cfg(cfg: TrainConfig) -> AugmentConfig:
    return AugmentConfig(strategy=mode_strategy(cfg.mode), ratio=cfg.delta,
                         count=cfg.num_variants, seed=cfg.seed)


def _encode_variant(model: Model, dataset: Dataset, graph_index: int, aug: AugmentConfig,
                    epoch: int, variant: int) -> Tensor:
    g = augment_variant(dataset.graphs[graph_index], aug, epoch, graph_index, variant)
    return encoder_forward(g, model.encoder)


def _forward_variants(model: Model, dataset: Dataset, sub_nodes, occ_rows, plan,
                      cfg: TrainConfig, aug: AugmentConfig, epoch: int) -> list[Tensor]:
    """Per-variant logits for the batch occurrences, after optional propagation."""
    num_variants = cfg.num_variants if aug.strategy != "none" else 1
    logits = []
    for t in range(num_variants):
        reprs = stack_rows(
            [_encode_variant(model, dataset, g, aug, epoch, t) for g in sub_nodes]
        )
        if plan is not None:
            reprs = propagate(reprs, plan)
        logits.append(model.classifier(take_rows(reprs, occ_rows)))
    return logits


def _class_weights(labels: np.ndarray, train_occ: list[int], num_classes: int) -> np.ndarray:
    counts = np.bincount(labels[train_occ], minlength=num_classes)
    if np.any(counts == 0):
        raise TrainingError("reweighting needs every class present in training data")
    return len(train_occ) / counts.astype(np.float64)


def train(dataset: Dataset, split: Split, gog: Optional[GoGraph], s: Optional[SimilarityMatrix],
          cfg: TrainConfig) -> TrainResult:
    """Mini-batch training with neighbor pull, T-way augmentation, and early stopping.

    Model selection tracks F1-macro on the (balanced, when up-sampled)
    validation multiset; the best parameters are restored before returning.
    """
    if not split.train_idx:
        raise TrainingError("empty train split")
    if mode_uses_gog(cfg.mode) and (gog is None or s is None):
        raise TrainingError(f"mode {cfg.mode} needs a GoG and similarity matrix")

    labels = dataset.labels()
    upsampled = mode_uses_upsampling(cfg.mode)
    train_occ = split.expanded_train() if upsampled else list(split.train_idx)
    val_occ = split.expanded_val() if upsampled else list(split.val_idx)
    weights = _class_weights(labels, train_occ, dataset.num_classes) if cfg.mode == "gin_rw" else None

    model = build_model(dataset.feature_dim, cfg.hidden_dim, dataset.num_classes,
                        cfg.num_gin_layers, cfg.gin_epsilon,
                        seed=(cfg.seed & _MASK64, _INIT_STREAM))
    opt = OptimizerState(learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay)
    aug = _augment_cfg(cfg)
    use_gog = mode_uses_gog(cfg.mode)

    history: list[EpochRecord] = []
    step_losses: list[float] = []
    best_val, best_epoch, best_state = -1.0, -1, model.state()
    bad_epochs = 0

    for epoch in range(cfg.epochs):
        rng = np.random.default_rng((cfg.seed & _MASK64, _SHUFFLE_STREAM, epoch))
        order = [train_occ[i] for i in rng.permutation(len(train_occ))]
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch_occ = order[start:start + cfg.batch_size]
            unique_batch = list(dict.fromkeys(batch_occ))
            if use_gog:
                plan = batch_induced_subgraph(gog, unique_batch, s, cfg.k, depth=cfg.prop_layers)
                sub_nodes = plan.sub_nodes
            else:
                plan, sub_nodes = None, unique_batch
            row_of = {g: r for r, g in enumerate(sub_nodes)}
            occ_rows = [row_of[g] for g in batch_occ]

            logits = _forward_variants(model, dataset, sub_nodes, occ_rows, plan, cfg, aug, epoch)
            if use_gog:
                loss = total_loss(logits, labels[batch_occ], cfg.tau,
                                  grad_through_center=cfg.grad_through_center)
            else:
                loss = softmax_cross_entropy(logits[0], labels[batch_occ], weights)

            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise TrainingError(
                    f"non-finite loss {loss_value} at epoch {epoch}, batch offset {start} "
                    f"(mode={cfg.mode}, lr={cfg.learning_rate})"
                )
            loss.backward()
            adam_step(model.parameters(), opt)
            epoch_losses.append(loss_value)
            step_losses.append(loss_value)

        val_f1 = _validation_f1(model, val_occ, dataset, gog, s, cfg, labels)
        history.append(EpochRecord(epoch=epoch, train_loss=float(np.mean(epoch_losses)),
                                   val_f1_macro=val_f1))
        if val_f1 > best_val:
            best_val, best_epoch, best_state = val_f1, epoch, model.state()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > cfg.patience:
                break

    model.load_state(best_state)
    return TrainResult(model=model, history=history, step_losses=step_losses,
                       best_epoch=best_epoch, best_val_f1=best_val)


def _validation_f1(model, val_occ, dataset, gog, s, cfg, labels) -> float:
    if not val_occ:
        return 0.0
    preds, _ = predict(model, val_occ, dataset, gog, s, cfg)
    return f1_scores(preds, labels[val_occ], dataset.num_classes)["f1_macro"]


def predict(model: Model, graph_indices, dataset: Dataset, gog: Optional[GoGraph],
            s: Optional[SimilarityMatrix], cfg: TrainConfig):
    """Augmentation-averaged class predictions (argmax; ties to the lower class).

    Returns (class indices, averaged distributions), aligned with the input
    order. A fixed prediction-time variant stream keeps results reproducible
    across calls.
    """
    indices = [int(i) for i in graph_indices]
    if not indices:
        return np.zeros(0, dtype=np.int64), np.zeros((0, dataset.num_classes))
    unique = list(dict.fromkeys(indices))
    aug = _augment_cfg(cfg)
    num_variants = cfg.num_variants if aug.strategy != "none" else 1

    if mode_uses_gog(cfg.mode):
        plan = batch_induced_subgraph(gog, unique, s, cfg.k, depth=cfg.prop_layers)
        sub_nodes = plan.sub_nodes
    else:
        plan, sub_nodes = None, unique
    row_of = {g: r for r, g in enumerate(sub_nodes)}
    unique_rows = [row_of[g] for g in unique]

    accumulated = np.zeros((len(unique), dataset.num_classes))
    for t in range(num_variants):
        reprs = stack_rows(
            [_encode_variant(model, dataset, g, aug, _PREDICT_EPOCH, t) for g in sub_nodes]
        )
        if plan is not None:
            reprs = propagate(reprs, plan)
        logits = model.classifier(take_rows(reprs, unique_rows))
        accumulated += softmax(logits, axis=1).values
    averaged = accumulated / num_variants

    position = {g: i for i, g in enumerate(unique)}
    rows = np.array([position[i] for i in indices])
    dists = averaged[rows]
    return np.argmax(dists, axis=1), dists


# ---------------------------------------------------------------------------
# Experiment harness: repeated imbalanced splits, aggregated F1
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentReport:
    config: dict
    ratio: str
    per_split: tuple[dict, ...]
    mean_f1_macro: float
    std_f1_macro: float
    mean_f1_micro: float
    std_f1_micro: float
    runtime_s: float

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "ratio": self.ratio,
            "per_split": list(self.per_split),
            "mean": {"f1_macro": self.mean_f1_macro, "f1_micro": self.mean_f1_micro},
            "std": {"f1_macro": self.std_f1_macro, "f1_micro": self.std_f1_micro},
            "runtime_s": self.runtime_s,
        }

    def to_csv(self) -> str:
        lines = ["split,seed,f1_macro,f1_micro,best_epoch,runtime_s"]
        for row in self.per_split:
            lines.append(
                f"{row['split']},{row['seed']},{row['f1_macro']:.6f},"
                f"{row['f1_micro']:.6f},{row['best_epoch']},{row['runtime_s']:.3f}"
            )
        return "\n".join(lines) + "\n"


def history_to_csv(result: TrainResult) -> str:
    lines = ["epoch,train_loss,val_f1_macro"]
    for rec in result.history:
        lines.append(f"{rec.epoch},{rec.train_loss:.9f},{rec.val_f1_macro:.6f}")
    return "\n".join(lines) + "\n"


def _split_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence((seed & _MASK64, 0xE0, index)).generate_state(1)[0])


def run_experiment(dataset: Dataset, cfg: TrainConfig, n_splits: int, ratio: tuple[int, int],
                   similarity: Optional[SimilarityMatrix] = None, train_fraction: float = 0.25,
                   val_fraction: float = 0.25, minority_class: Optional[int] = None,
                   keep_history: bool = False):
    """Repeat split -> (up-sample) -> train -> test over n_splits and aggregate F1."""
    if n_splits < 1:
        raise TrainingError("n_splits must be >= 1")
    labels = dataset.labels()
    if minority_class is None:
        minority_class = int(np.argmin(np.bincount(labels, minlength=dataset.num_classes)))
    n_minority, n_majority = ratio_counts(len(dataset), ratio[0], ratio[1], train_fraction)

    gog = s = None
    if mode_uses_gog(cfg.mode):
        s = similarity if similarity is not None else similarity_matrix(dataset)
        from .kernels import knn_gog  # local import keeps module init light

        gog = knn_gog(s, cfg.k)

    per_split = []
    histories = []
    started = time.perf_counter()
    for i in range(n_splits):
        seed_i = _split_seed(cfg.seed, i)
        split = make_imbalanced_split(dataset, minority_class, n_minority, n_majority,
                                      val_fraction, seed_i)
        if mode_uses_upsampling(cfg.mode):
            split = upsample_minority(split, dataset)
        cfg_i = replace(cfg, seed=seed_i)
        t0 = time.perf_counter()
        result = train(dataset, split, gog, s, cfg_i)
        preds, _ = predict(result.model, split.test_idx, dataset, gog, s, cfg_i)
        scores = f1_scores(preds, labels[list(split.test_idx)], dataset.num_classes)
        per_split.append({
            "split": i,
            "seed": seed_i,
            "f1_macro": scores["f1_macro"],
            "f1_micro": scores["f1_micro"],
            "best_epoch": result.best_epoch,
            "runtime_s": time.perf_counter() - t0,
        })
        if keep_history:
            histories.append(result)

    macro = np.array([row["f1_macro"] for row in per_split])
    micro = np.array([row["f1_micro"] for row in per_split])
    report = ExperimentReport(
        config={k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
        ratio=f"{ratio[0]}:{ratio[1]}",
        per_split=tuple(per_split),
        mean_f1_macro=float(macro.mean()),
        std_f1_macro=float(macro.std()),
        mean_f1_micro=float(micro.mean()),
        std_f1_micro=float(micro.std()),
        runtime_s=time.perf_counter() - started,
    )
    return (report, histories) if keep_history else report
