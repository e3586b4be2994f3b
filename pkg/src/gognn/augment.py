"""Stochastic topological augmentation: edge removal and node-feature masking."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Graph

STRATEGIES = ("remove_edges", "mask_node_features", "none")

_MASK64 = (1 << 64) - 1


class AugmentError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentConfig:
    strategy: str = "mask_node_features"
    ratio: float = 0.1
    count: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise AugmentError(f"unknown strategy {self.strategy!r}")
        if not (0.0 <= self.ratio < 1.0):
            raise AugmentError(f"ratio must be in [0,1), got {self.ratio}")
        if self.count < 1:
            raise AugmentError(f"count must be >= 1, got {self.count}")


def variant_rng(seed: int, epoch: int, graph_index: int, variant: int) -> np.random.Generator:
    """RNG for one (epoch, graph, variant) draw; hierarchical, order-independent."""
    return np.random.default_rng(
        (seed & _MASK64, epoch & _MASK64, graph_index & _MASK64, variant & _MASK64)
    )


def remove_edges(g: Graph, ratio: float, rng: np.random.Generator) -> Graph:
    """Drop each undirected edge independently with probability ratio."""
    if not (0.0 <= ratio < 1.0):
        raise AugmentError(f"ratio must be in [0,1), got {ratio}")
    if not g.edges:
        return g
    keep = rng.random(len(g.edges)) >= ratio
    return replace(g, edges=tuple(e for e, kept in zip(g.edges, keep) if kept))


def mask_node_features(g: Graph, ratio: float, rng: np.random.Generator) -> Graph:
    """Zero entire feature rows of nodes drawn with probability ratio."""
    if not (0.0 <= ratio < 1.0):
        raise AugmentError(f"ratio must be in [0,1), got {ratio}")
    eta = (rng.random(g.node_count) >= ratio).astype(np.float64)
    return replace(g, features=g.features * eta[:, None])


def augment_variant(g: Graph, cfg: AugmentConfig, epoch: int, graph_index: int,
                    variant: int) -> Graph:
    """The variant-th draw for one graph, deterministic in (seed, epoch, graph, t)."""
    if cfg.strategy == "none":
        return g
    rng = variant_rng(cfg.seed, epoch, graph_index, variant)
    if cfg.strategy == "remove_edges":
        return remove_edges(g, cfg.ratio, rng)
    return mask_node_features(g, cfg.ratio, rng)


def augment_set(g: Graph, cfg: AugmentConfig, epoch: int = 0, graph_index: int = 0) -> list[Graph]:
    """T independent variants of one graph, deterministic in (seed, epoch, graph, t)."""
    if cfg.strategy == "none":
        return [g] * cfg.count
    return [augment_variant(g, cfg, epoch, graph_index, t) for t in range(cfg.count)]
