import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gognn.augment import (
    AugmentConfig,
    AugmentError,
    augment_set,
    augment_variant,
    mask_node_features,
    remove_edges,
    variant_rng,
)
from helpers import cycle_graph, path_graph, random_graph


class _AllZeroRng:
    """Stand-in generator realizing the delta -> 1 limit (every draw masked)."""

    def random(self, n):
        return np.zeros(n)


class TestRemoveEdges:
    def test_zero_ratio_is_identity(self, rng):
        g = cycle_graph(8)
        out = remove_edges(g, 0.0, rng)
        assert out.edges == g.edges
        assert np.array_equal(out.features, g.features)

    def test_zero_edges_unchanged(self, rng):
        g = path_graph(1)
        assert remove_edges(g, 0.5, rng) is g

    def test_kept_count_tracks_binomial_over_seeds(self):
        g = cycle_graph(500)  # 500 edges
        trials = 200
        kept = sum(
            len(remove_edges(g, 0.5, np.random.default_rng((42, t))).edges)
            for t in range(trials)
        )
        total = 500 * trials
        sigma = np.sqrt(total * 0.25)
        assert abs(kept - total * 0.5) <= 3 * sigma

    def test_invalid_ratio(self, rng):
        with pytest.raises(AugmentError):
            remove_edges(cycle_graph(4), 1.0, rng)


class TestMaskNodeFeatures:
    def test_zero_ratio_is_identity(self, rng):
        g = cycle_graph(6)
        out = mask_node_features(g, 0.0, rng)
        assert np.array_equal(out.features, g.features)
        assert out.edges == g.edges

    def test_all_masked_limit(self):
        g = cycle_graph(6)
        out = mask_node_features(g, 0.9, _AllZeroRng())
        assert np.array_equal(out.features, np.zeros_like(g.features))
        assert out.edges == g.edges

    def test_masked_fraction_tracks_binomial(self):
        g = path_graph(10_000)
        out = mask_node_features(g, 0.2, np.random.default_rng(7))
        masked = int((out.features.sum(axis=1) == 0).sum())
        sigma = np.sqrt(10_000 * 0.2 * 0.8)
        assert abs(masked - 2000) <= 3 * sigma


class TestAugmentSet:
    def test_none_strategy_returns_copies(self):
        g = cycle_graph(5)
        cfg = AugmentConfig(strategy="none", ratio=0.5, count=2, seed=1)
        variants = augment_set(g, cfg)
        assert len(variants) == 2 and all(v is g for v in variants)

    def test_same_seed_same_variants(self):
        g = cycle_graph(12)
        cfg = AugmentConfig(strategy="remove_edges", ratio=0.3, count=2, seed=9)
        a = augment_set(g, cfg, epoch=4, graph_index=2)
        b = augment_set(g, cfg, epoch=4, graph_index=2)
        assert [v.edges for v in a] == [v.edges for v in b]

    def test_removal_never_adds_edges(self):
        g = cycle_graph(10)
        cfg = AugmentConfig(strategy="remove_edges", ratio=0.1, count=2, seed=0)
        for v in augment_set(g, cfg):
            assert set(v.edges) <= set(g.edges)

    def test_variant_streams_differ_across_epoch_graph_variant(self):
        g = cycle_graph(30)
        cfg = AugmentConfig(strategy="remove_edges", ratio=0.5, count=2, seed=3)
        a = augment_variant(g, cfg, epoch=0, graph_index=0, variant=0)
        b = augment_variant(g, cfg, epoch=1, graph_index=0, variant=0)
        c = augment_variant(g, cfg, epoch=0, graph_index=1, variant=0)
        d = augment_variant(g, cfg, epoch=0, graph_index=0, variant=1)
        assert len({a.edges, b.edges, c.edges, d.edges}) >= 3

    def test_negative_seed_components_are_masked(self):
        gen = variant_rng(-5, 0, 1, 0)
        assert gen.random() == variant_rng(-5, 0, 1, 0).random()

    def test_config_validation(self):
        with pytest.raises(AugmentError):
            AugmentConfig(strategy="drop_nodes")
        with pytest.raises(AugmentError):
            AugmentConfig(ratio=1.0)
        with pytest.raises(AugmentError):
            AugmentConfig(count=0)


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.95), st.integers(1, 4))
@settings(max_examples=60, deadline=None)
def test_augmentation_invariants(seed, ratio, count):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, max_nodes=10, label=1)
    for strategy in ("remove_edges", "mask_node_features", "none"):
        cfg = AugmentConfig(strategy=strategy, ratio=ratio, count=count, seed=seed)
        for v in augment_set(g, cfg, epoch=seed % 17, graph_index=seed % 5):
            assert v.node_count == g.node_count
            assert v.feature_dim == g.feature_dim
            assert v.graph_label == g.graph_label
            assert set(v.edges) <= set(g.edges)
