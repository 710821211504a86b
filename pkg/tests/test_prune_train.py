import csv

import numpy as np
import pytest

from satsplit import gnn
from satsplit.graph import build_graph, num_components, sbm_generate
from satsplit.prune_train import (
    PruneConfigError,
    PruneRoundConfig,
    compute_negative_edges,
    iterative_prune_train,
    prune_round,
)

from oracles import bridges_by_removal, count_components, random_edges


def constant_model(d, classes=2, label=0):
    """A model that predicts ``label`` for every node."""
    m = gnn.init_model(d, 4, classes, seed=0, dropout_rate=0.0)
    m.layer2.w_self[:] = 0
    m.layer2.w_neigh[:] = 0
    m.layer2.bias[:] = 0
    m.layer2.bias[label] = 1.0
    return m


class TestNegativeEdges:
    def test_all_same(self):
        g = build_graph([(0, 1), (1, 2), (0, 2)], np.zeros((3, 1)))
        assert len(compute_negative_edges(g, [1, 1, 1])) == 0

    def test_p3(self):
        g = build_graph([(0, 1), (1, 2)], np.zeros((3, 1)))
        ids = compute_negative_edges(g, [0, 0, 1])
        assert [tuple(g.edges[e]) for e in ids] == [(1, 2)]

    def test_masked_excluded(self):
        g = build_graph([(0, 1), (1, 2)], np.zeros((3, 1)))
        g.edge_mask[1] = False
        assert len(compute_negative_edges(g, [0, 0, 1])) == 0

    def test_random_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            g = build_graph(random_edges(rng, 12, 0.3), np.zeros((12, 1)))
            pred = rng.integers(0, 3, 12)
            expect = [e for e, (u, v) in enumerate(g.edges.tolist()) if pred[u] != pred[v]]
            assert compute_negative_edges(g, pred).tolist() == expect

    def test_length_mismatch(self):
        g = build_graph([(0, 1)], np.zeros((2, 1)))
        with pytest.raises(ValueError):
            compute_negative_edges(g, [0])


class TestPruneRound:
    def test_cycle_fallback_keeps_connected(self):
        n = 10
        g = build_graph([(i, (i + 1) % n) for i in range(n)], np.ones((n, 2)))
        out, rec = prune_round(g, constant_model(2), 0.3, g.num_edges)
        assert rec.quota == 3
        # only one removal is possible before every remaining edge is a bridge
        assert rec.edges_removed_negative == 0 and rec.edges_removed_nonbridge == 1
        assert num_components(out) == 1

    def test_tree_untouched(self):
        g = build_graph([(0, 1), (0, 2), (1, 3), (1, 4), (2, 5)], np.ones((6, 2)))
        out, rec = prune_round(g, constant_model(2), 0.5, g.num_edges)
        assert rec.removed == [] and out.same_as(g)

    def test_negative_bridge_protected(self):
        # triangle + pendant: the pendant edge is negative but a bridge
        g = build_graph([(0, 1), (1, 2), (0, 2), (2, 3)], np.zeros((4, 1)))
        m = constant_model(1)
        m.layer2.bias[:] = 0
        # make node 3 different by giving it a distinct feature only it carries
        g.features[3, 0] = 5.0
        m.layer1.w_self[:] = 1.0
        m.layer1.w_neigh[:] = 0.0
        m.bn.running_var[:] = 1.0
        m.layer2.w_self[:] = np.array([[-1.0, 1.0]] * 4)
        assert gnn.predict(m, g).tolist() == [0, 0, 0, 1]
        out, rec = prune_round(g, m, 0.5, g.num_edges)
        assert 3 not in rec.removed
        assert num_components(out) == 1

    def test_quota_bound_and_connectivity(self):
        rng = np.random.default_rng(0)
        for trial in range(10):
            n = 15
            g = build_graph(random_edges(rng, n, 0.3), rng.standard_normal((n, 3)))
            m = gnn.init_model(3, 4, 3, seed=trial, dropout_rate=0.0)
            comps = count_components(n, g.active_edges().tolist())
            out, rec = prune_round(g, m, 0.2, g.num_edges)
            assert len(rec.removed) <= int(0.2 * g.num_edges)
            assert count_components(n, out.active_edges().tolist()) == comps
            assert rec.remaining_active_edges == g.num_active_edges - len(rec.removed)

    def test_removed_edges_were_not_bridges_when_taken(self):
        rng = np.random.default_rng(9)
        g = build_graph(random_edges(rng, 12, 0.35), rng.standard_normal((12, 3)))
        m = gnn.init_model(3, 4, 2, seed=1, dropout_rate=0.0)
        out, rec = prune_round(g, m, 0.3, g.num_edges)
        live = g.copy()
        for e in rec.removed:
            bridges = bridges_by_removal(12, live.active_edges().tolist())
            assert tuple(live.edges[e]) not in bridges
            live.edge_mask[e] = False
        assert np.array_equal(live.edge_mask, out.edge_mask)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(p_g=0), dict(p_g=1.0), dict(p_g=0.4, rounds=3),
                                    dict(rounds=-1), dict(quota_base="other")])
    def test_invalid(self, kw):
        with pytest.raises(PruneConfigError):
            PruneRoundConfig(**kw)


def _setup(seed=0):
    g = sbm_generate([15, 15], 0.4, 0.08, 4, seed=seed)
    train = np.arange(g.num_nodes) % 3 != 0
    return g, train, ~train


def test_rounds_zero_is_plain_training():
    g, train, test = _setup()
    tc = gnn.TrainConfig(epochs=10, hidden_dim=6)
    a = gnn.init_model(4, 6, 2, seed=0)
    b = gnn.init_model(4, 6, 2, seed=0)
    gnn.train_epochs(b, g, train, tc)
    model, graph, report = iterative_prune_train(g, a, PruneRoundConfig(rounds=0), tc, train, test)
    assert report.rounds == [] and graph.same_as(g)
    for k in b.params():
        assert np.array_equal(model.params()[k], b.params()[k])


def test_accounting_and_determinism(tmp_path):
    g, train, test = _setup(2)
    cfg = PruneRoundConfig(p_g=0.05, rounds=3, retrain_epochs=5)
    tc = gnn.TrainConfig(epochs=10, hidden_dim=6)
    runs = [iterative_prune_train(g, gnn.init_model(4, 6, 2, seed=0), cfg, tc, train, test, flops_target=0.5)
            for _ in range(2)]
    (m1, g1, r1), (m2, g2, r2) = runs
    assert g1.same_as(g2)
    assert [r.removed for r in r1.rounds] == [r.removed for r in r2.rounds]
    for k in m1.params():
        assert np.array_equal(m1.params()[k], m2.params()[k])
    removed = sum(r.edges_removed_negative + r.edges_removed_nonbridge for r in r1.rounds)
    assert g1.num_active_edges == g.num_active_edges - removed
    assert r1.rounds[-1].remaining_active_edges == g1.num_active_edges
    assert gnn.count_flops(m1, g1) <= 0.5 * gnn.count_flops(gnn.init_model(4, 6, 2, seed=0), g)
    path = tmp_path / "rounds.csv"
    r1.to_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == 3 and rows[0]["round"] == "1"
