import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gognn.data import Dataset, Graph
from gognn.kernels import (
    GoGraph,
    KernelError,
    SimilarityMatrix,
    edge_homophily,
    knn_gog,
    load_similarity,
    make_kernel_id,
    parse_kernel_id,
    save_similarity,
    shortest_path_kernel,
    similarity_matrix,
    wl_kernel,
)
from helpers import (
    cycle_graph,
    path_graph,
    permuted_graph,
    random_graph,
    sp_kernel_bruteforce,
    wl_kernel_naive,
)


@st.composite
def graph_pairs(draw):
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    return random_graph(rng), random_graph(rng)


class TestShortestPathKernel:
    def test_two_paths(self):
        # one length-1 pair in P2 times two length-1 pairs in P3
        assert shortest_path_kernel(path_graph(2), path_graph(3)) == 2.0

    def test_self_kernel_path3(self):
        # two length-1 pairs and one length-2 pair: 2^2 + 1^2
        assert shortest_path_kernel(path_graph(3), path_graph(3)) == 5.0

    def test_isomorphic_pair_normalized_to_one(self):
        rng = np.random.default_rng(7)
        g = random_graph(rng, max_nodes=6)
        while g.node_count < 2 or not g.edges:
            g = random_graph(rng, max_nodes=6)
        h = permuted_graph(g, rng.permutation(g.node_count))
        ds = Dataset(name="iso", graphs=(g, type(g)(
            node_count=h.node_count, edges=h.edges, features=h.features,
            graph_label=1, node_labels=h.node_labels)), num_classes=2)
        s = similarity_matrix(ds, "sp", normalize=True)
        assert s.values[0, 1] == 1.0

    def test_disconnected_pairs_contribute_nothing(self):
        two_isolated = Graph(node_count=2, edges=(), features=np.ones((2, 1)), graph_label=0)
        assert shortest_path_kernel(two_isolated, path_graph(3)) == 0.0

    @given(graph_pairs())
    @settings(max_examples=100, deadline=None)
    def test_matches_bruteforce_oracle(self, pair):
        g1, g2 = pair
        assert shortest_path_kernel(g1, g2) == sp_kernel_bruteforce(g1, g2)

    @given(graph_pairs())
    @settings(max_examples=100, deadline=None)
    def test_symmetry(self, pair):
        g1, g2 = pair
        assert shortest_path_kernel(g1, g2) == shortest_path_kernel(g2, g1)

    @given(graph_pairs())
    @settings(max_examples=50, deadline=None)
    def test_isomorphism_invariance(self, pair):
        g1, g2 = pair
        rng = np.random.default_rng(g1.node_count * 31 + g2.node_count)
        sigma = permuted_graph(g1, rng.permutation(g1.node_count))
        assert shortest_path_kernel(g1, g2) == shortest_path_kernel(sigma, g2)


class TestWlKernel:
    def test_round_zero_uniform(self):
        assert wl_kernel(path_graph(3), path_graph(4), h=0) == 12.0

    def test_triangle_vs_path(self):
        assert wl_kernel(cycle_graph(3), path_graph(3), h=1) == 12.0

    def test_isomorphic_normalized_to_one(self):
        rng = np.random.default_rng(3)
        g = random_graph(rng, max_nodes=7)
        h = permuted_graph(g, rng.permutation(g.node_count))
        k11 = wl_kernel(g, g, 3)
        k12 = wl_kernel(g, h, 3)
        assert k12 / np.sqrt(k11 * wl_kernel(h, h, 3)) == pytest.approx(1.0, abs=1e-12)

    @given(graph_pairs(), st.integers(0, 3))
    @settings(max_examples=100, deadline=None)
    def test_matches_naive_oracle(self, pair, h):
        g1, g2 = pair
        assert wl_kernel(g1, g2, h) == wl_kernel_naive(g1, g2, h)

    @given(graph_pairs(), st.integers(0, 3))
    @settings(max_examples=60, deadline=None)
    def test_symmetry(self, pair, h):
        g1, g2 = pair
        assert wl_kernel(g1, g2, h) == wl_kernel(g2, g1, h)

    @given(graph_pairs())
    @settings(max_examples=50, deadline=None)
    def test_isomorphism_invariance(self, pair):
        g1, g2 = pair
        rng = np.random.default_rng(g1.node_count * 17 + 3)
        sigma = permuted_graph(g1, rng.permutation(g1.node_count))
        assert wl_kernel(g1, g2, 2) == wl_kernel(sigma, g2, 2)


class TestSimilarityMatrix:
    def test_two_isomorphic_graphs(self):
        g = cycle_graph(4, label=0)
        h = cycle_graph(4, label=1)
        s = similarity_matrix(Dataset(name="d", graphs=(g, h), num_classes=2), "sp")
        assert np.array_equal(s.values, np.ones((2, 2)))

    def test_matrix_equals_pairwise_kernel(self, toy_dataset):
        subset = Dataset(name="sub", graphs=toy_dataset.graphs[:6] + toy_dataset.graphs[-6:],
                         num_classes=2)
        s = similarity_matrix(subset, "sp", normalize=False)
        for i, gi in enumerate(subset.graphs):
            for j, gj in enumerate(subset.graphs):
                assert s.values[i, j] == shortest_path_kernel(gi, gj)

    def test_wl_matrix_equals_pairwise_kernel(self, toy_dataset):
        subset = Dataset(name="sub", graphs=toy_dataset.graphs[:5] + toy_dataset.graphs[-5:],
                         num_classes=2)
        s = similarity_matrix(subset, make_kernel_id("wl", 2), normalize=False)
        for i, gi in enumerate(subset.graphs):
            for j, gj in enumerate(subset.graphs):
                assert s.values[i, j] == wl_kernel(gi, gj, 2)

    def test_exact_symmetry_and_range(self, toy_dataset):
        s = similarity_matrix(toy_dataset, "sp", normalize=True)
        assert np.array_equal(s.values, s.values.T)
        assert s.values.min() >= 0.0
        assert s.values.max() <= 1.0 + 1e-9
        assert np.array_equal(np.diag(s.values), np.ones(len(toy_dataset)))

    def test_worker_count_does_not_change_result(self, toy_dataset):
        a = similarity_matrix(toy_dataset, "sp", workers=1)
        b = similarity_matrix(toy_dataset, "sp", workers=4)
        assert np.array_equal(a.values, b.values)

    def test_zero_self_similarity_error_names_graph(self):
        lonely = Graph(node_count=1, edges=(), features=np.ones((1, 1)), graph_label=0)
        ds = Dataset(name="z", graphs=(lonely, path_graph(3, label=1)), num_classes=2)
        with pytest.raises(KernelError, match="graph 0"):
            similarity_matrix(ds, "sp", normalize=True)

    def test_kernel_id_parsing(self):
        assert parse_kernel_id("sp") == ("sp", 0)
        assert parse_kernel_id("wl:4") == ("wl", 4)
        with pytest.raises(KernelError):
            parse_kernel_id("wl:x")
        with pytest.raises(KernelError):
            parse_kernel_id("graphlet")


class TestSimilarityCache:
    def test_roundtrip_bit_exact(self, toy_dataset, tmp_path):
        s = similarity_matrix(toy_dataset, "sp")
        path = tmp_path / "toy.gogsim"
        save_similarity(path, s)
        loaded = load_similarity(path)
        assert loaded.kernel_id == s.kernel_id
        assert loaded.normalized == s.normalized
        assert np.array_equal(loaded.values, s.values)

    def test_header_round_trips_wl(self, toy_dataset, tmp_path):
        s = similarity_matrix(toy_dataset, make_kernel_id("wl", 3))
        path = tmp_path / "toy_wl.gogsim"
        save_similarity(path, s)
        assert load_similarity(path).kernel_id == "wl:3"

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.gogsim"
        path.write_bytes(b"NOTGOG v9 sp 3 1\n" + b"\x00" * 48)
        with pytest.raises(KernelError, match="not a GOGSIM"):
            load_similarity(path)

    def test_truncated_payload_rejected(self, toy_dataset, tmp_path):
        s = similarity_matrix(toy_dataset, "sp")
        path = tmp_path / "trunc.gogsim"
        save_similarity(path, s)
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(KernelError, match="payload"):
            load_similarity(path)


class TestKnnGog:
    def test_worked_example(self):
        s = SimilarityMatrix(values=np.array([[1, .9, .1], [.9, 1, .2], [.1, .2, 1.0]]),
                             normalized=True, kernel_id="sp")
        assert knn_gog(s, 1).edges == ((0, 1), (1, 2))

    def test_complete_when_k_is_n_minus_one(self):
        rng = np.random.default_rng(0)
        vals = rng.uniform(0.1, 0.9, size=(5, 5))
        vals = np.triu(vals, 1)
        vals = vals + vals.T + np.eye(5)
        s = SimilarityMatrix(values=vals, normalized=True, kernel_id="sp")
        gog = knn_gog(s, 4)
        assert len(gog.edges) == 10

    def test_tie_break_lowest_index(self):
        vals = np.full((4, 4), 0.5)
        np.fill_diagonal(vals, 1.0)
        s = SimilarityMatrix(values=vals, normalized=True, kernel_id="sp")
        gog = knn_gog(s, 1)
        # every node picks node 0 except node 0, which picks node 1
        assert gog.edges == ((0, 1), (0, 2), (0, 3))

    def test_k_too_large(self):
        s = SimilarityMatrix(values=np.eye(3), normalized=False, kernel_id="sp")
        with pytest.raises(KernelError, match="k=3"):
            knn_gog(s, 3)

    def test_pure_function_of_inputs(self, toy_dataset):
        s = similarity_matrix(toy_dataset, "sp")
        a, b = knn_gog(s, 2), knn_gog(s, 2)
        assert a == b
        assert min(np.bincount(np.array(a.edges).ravel(), minlength=a.num_nodes)) >= 2


class TestEdgeHomophily:
    def test_three_of_four(self):
        gog = GoGraph(num_nodes=5, edges=((0, 1), (1, 2), (2, 3), (3, 4)), k=1)
        assert edge_homophily(gog, [0, 0, 0, 0, 1]) == 0.75

    def test_all_same_label(self):
        gog = GoGraph(num_nodes=3, edges=((0, 1), (1, 2)), k=1)
        assert edge_homophily(gog, [1, 1, 1]) == 1.0

    def test_empty_edges_error(self):
        gog = GoGraph(num_nodes=2, edges=(), k=1)
        with pytest.raises(KernelError, match="empty"):
            edge_homophily(gog, [0, 1])

    def test_toy_homophily_band_and_trend(self, toy_dataset):
        s = similarity_matrix(toy_dataset, "sp")
        labels = toy_dataset.labels()
        values = [edge_homophily(knn_gog(s, k), labels) for k in range(1, 6)]
        assert all(v >= 0.65 for v in values)
        assert values[0] >= values[-1]
