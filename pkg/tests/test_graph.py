import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from satsplit.graph import (
    GraphError,
    active_neighbors,
    build_graph,
    connected_components,
    disjoint_union,
    find_bridges,
    induced_subgraph,
    load_edge_list,
    sbm_generate,
)

from oracles import bridges_by_removal, random_edges


def feats(n, d=1):
    return np.zeros((n, d))


def path(n):
    return build_graph([(i, i + 1) for i in range(n - 1)], feats(n))


def cycle(n):
    return build_graph([(i, (i + 1) % n) for i in range(n)], feats(n))


class TestBuildGraph:
    def test_dedup_and_canonical(self):
        g = build_graph([(1, 0), (0, 1)], feats(2))
        assert g.edges.tolist() == [[0, 1]]
        assert g.edge_mask.tolist() == [True]

    def test_empty_edges(self):
        g = build_graph([], feats(3))
        assert g.num_nodes == 3 and g.num_edges == 0

    def test_out_of_range(self):
        with pytest.raises(GraphError, match="out of range"):
            build_graph([(0, 5)], feats(3))

    def test_self_loop(self):
        with pytest.raises(GraphError, match="self-loop"):
            build_graph([(1, 1)], feats(3))

    def test_ragged_features(self):
        with pytest.raises(GraphError, match="ragged"):
            build_graph([(0, 1)], [[1.0, 2.0], [3.0]])

    @given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9)), max_size=40))
    def test_idempotent(self, pairs):
        pairs = [(u, v) for u, v in pairs if u != v]
        g = build_graph(pairs, feats(10))
        again = build_graph(g.edges, g.features)
        assert again.same_as(g)
        assert (g.edges[:, 0] < g.edges[:, 1]).all()
        assert np.array_equal(g.edges, np.unique(g.edges, axis=0))


class TestNeighbors:
    def test_path(self):
        assert active_neighbors(path(3), 1) == [0, 2]

    def test_masked(self):
        g = path(3)
        g.edge_mask[0] = False
        assert active_neighbors(g, 1) == [2]

    def test_isolated(self):
        assert active_neighbors(build_graph([(0, 1)], feats(3)), 2) == []

    @settings(max_examples=50)
    @given(st.integers(0, 2**31 - 1))
    def test_masking_is_local(self, seed):
        rng = np.random.default_rng(seed)
        g = build_graph(random_edges(rng, 8, 0.4), feats(8))
        if g.num_edges == 0:
            return
        e = int(rng.integers(g.num_edges))
        u, v = g.edges[e]
        before = {w: active_neighbors(g, w) for w in range(8)}
        g.edge_mask[e] = False
        for w in range(8):
            expect = [x for x in before[w] if not ((w == u and x == v) or (w == v and x == u))]
            assert active_neighbors(g, w) == expect


class TestBridges:
    def test_path_all_bridges(self):
        assert find_bridges(path(4)) == {(0, 1), (1, 2), (2, 3)}

    def test_cycle_none(self):
        assert find_bridges(cycle(5)) == set()

    def test_two_triangles(self):
        g = build_graph([(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)], feats(6))
        expect = bridges_by_removal(6, g.edges.tolist())
        assert expect == {(2, 3)}
        assert find_bridges(g) == expect

    def test_masked_edges_ignored(self):
        g = cycle(4)
        g.edge_mask[0] = False
        assert find_bridges(g) == {tuple(e) for e in g.edges[1:].tolist()}

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(2, 30), st.floats(0.02, 0.5))
    def test_matches_removal_oracle(self, seed, n, p):
        rng = np.random.default_rng(seed)
        g = build_graph(random_edges(rng, n, p), feats(n))
        g.edge_mask = rng.random(g.num_edges) < 0.85
        assert find_bridges(g) == bridges_by_removal(n, g.active_edges().tolist())


class TestComponents:
    def test_cycle(self):
        assert connected_components(cycle(5)) == [[0, 1, 2, 3, 4]]

    def test_isolated(self):
        assert connected_components(build_graph([], feats(3))) == [[0], [1], [2]]

    def test_masked_middle(self):
        g = path(4)
        g.edge_mask[1] = False
        assert connected_components(g) == [[0, 1], [2, 3]]


class TestSbm:
    def test_complete_pairs(self):
        g = sbm_generate([2, 2], 1.0, 0.0, 3, seed=0)
        assert g.edges.tolist() == [[0, 1], [2, 3]]
        assert g.labels.tolist() == [0, 0, 1, 1]

    def test_deterministic(self):
        a = sbm_generate([20, 20], 0.3, 0.05, 4, seed=11)
        b = sbm_generate([20, 20], 0.3, 0.05, 4, seed=11)
        assert a.same_as(b)

    def test_invalid_probabilities(self):
        with pytest.raises(GraphError):
            sbm_generate([5, 5], 0.1, 0.2, 2, seed=0)

    def test_intra_block_degree(self):
        # E[intra-block degree] = p_in * (block_size - 1) = 0.3 * 49
        expect = 0.3 * 49
        for seed in range(10):
            g = sbm_generate([50, 50, 50], 0.3, 0.02, 2, seed=seed)
            e = g.edges
            intra = g.labels[e[:, 0]] == g.labels[e[:, 1]]
            mean_deg = 2 * intra.sum() / g.num_nodes
            assert abs(mean_deg - expect) <= 0.2 * expect


class TestLoadEdgeList:
    def test_p3(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("0 1\n1 2\n")
        g = load_edge_list(p)
        assert g.num_nodes == 3 and g.edges.tolist() == [[0, 1], [1, 2]]

    def test_duplicate_and_comments(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("# header\n0 1\n0 1  # again\n\n")
        assert load_edge_list(p).edges.tolist() == [[0, 1]]

    def test_parse_error_line_number(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("0 1\n1 x\n")
        with pytest.raises(GraphError, match=":2:"):
            load_edge_list(p)

    def test_feature_row_mismatch(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("0 1\n1 2\n")
        f = tmp_path / "f.csv"
        f.write_text("1,2\n3,4\n")
        with pytest.raises(GraphError):
            load_edge_list(p, feature_path=f)

    def test_features_and_labels(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("0 1\n1 2\n")
        f = tmp_path / "f.csv"
        f.write_text("1,2\n3,4\n5,6\n")
        lab = tmp_path / "y.csv"
        lab.write_text("0\n1\n1\n")
        g = load_edge_list(p, feature_path=f, label_path=lab)
        assert g.features.tolist() == [[1, 2], [3, 4], [5, 6]]
        assert g.labels.tolist() == [0, 1, 1]

    def test_label_count_mismatch(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("0 1\n")
        lab = tmp_path / "y.csv"
        lab.write_text("0\n1\n1\n")
        f = tmp_path / "f.csv"
        f.write_text("1\n2\n")
        with pytest.raises(GraphError):
            load_edge_list(p, feature_path=f, label_path=lab)


def test_subgraph_union_roundtrip():
    g = sbm_generate([6, 6], 0.6, 0.2, 2, seed=4)
    a = induced_subgraph(g, range(6))
    b = induced_subgraph(g, range(6, 12))
    u = disjoint_union([b, a])
    assert u.node_ids.tolist() == list(range(12))
    assert np.array_equal(u.features, g.features)
    intra = g.labels[g.edges[:, 0]] == g.labels[g.edges[:, 1]]
    assert np.array_equal(u.edges, g.edges[intra])
