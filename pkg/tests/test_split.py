import json
import math

import numpy as np
import pytest

from satsplit import gnn, split
from satsplit.graph import build_graph, sbm_generate
from satsplit.privacy import PrivacyParams
from satsplit.split import (
    GRADIENTS_BACK,
    GROUND_ID,
    MODEL_UPDATE,
    PRUNED_GRAPH,
    SMASHED_DATA,
    FlBaselineConfig,
    Message,
    Network,
    ProtocolError,
    PruneSelectionConfig,
    SplitConfig,
    TierNode,
    Topology,
    build_tiers,
    comm_cost_report,
    payload_size,
    run_fl_baseline,
    run_split_training,
    sat_id,
    satellite_step,
    space_id,
)

from oracles import central_difference


def sbm(seed=0, sizes=(20, 20, 20)):
    return sbm_generate(list(sizes), 0.3, 0.03, 4, seed=seed)


def masks(n, seed=0):
    train = np.random.default_rng(seed).random(n) < 0.6
    return train, ~train


def quick(rounds=5, **kw):
    return SplitConfig(rounds=rounds, train=gnn.TrainConfig(hidden_dim=8, **kw))


class TestPayloadSize:
    def test_pruned_graph(self):
        g = build_graph([(0, 1), (1, 2)], np.zeros((3, 5)))
        assert payload_size(PRUNED_GRAPH, {"graph": g}) == 16 + 4 * 3 + 8 * 2 + 4 * 15
        assert payload_size(PRUNED_GRAPH, {"graph": g, "with_features": False}) == 16 + 12 + 16

    def test_masked_edges_not_sent(self):
        g = build_graph([(0, 1), (1, 2)], np.zeros((3, 1)))
        g.edge_mask[0] = False
        assert payload_size(PRUNED_GRAPH, {"graph": g, "with_features": False}) == 16 + 12 + 8

    def test_smashed_and_grad(self):
        v = np.zeros((7, 3))
        assert payload_size(SMASHED_DATA, {"values": v}) == payload_size(GRADIENTS_BACK, {"values": v}) == 16 + 84

    def test_update(self):
        assert payload_size(MODEL_UPDATE, {"values": [1.0, 0.5]}) == 24

    def test_unknown(self):
        with pytest.raises(ProtocolError):
            payload_size("Telemetry", {})


class TestNetwork:
    def nodes(self):
        topo = Topology(satellites=2, space_stations=1)
        g = sbm()
        return topo, build_tiers(topo, g, gnn.init_model(4, 3, 3, 0))

    def test_no_satellite_ground_link(self):
        topo, nodes = self.nodes()
        net = Network(topo, nodes)
        msg = Message(MODEL_UPDATE, GROUND_ID, sat_id(0), {"values": [0.0, 0.0]})
        with pytest.raises(ProtocolError, match="satellite/ground"):
            net.deliver([msg])
        up = Message(MODEL_UPDATE, sat_id(1), GROUND_ID, {"values": [0.0, 0.0]})
        with pytest.raises(ProtocolError):
            net.deliver([up])

    def test_channels_only_parent_links(self):
        topo, nodes = self.nodes()
        net = Network(topo, nodes)
        assert set(net.channels) == {(sat_id(0), space_id(0)), (space_id(0), sat_id(0)),
                                     (sat_id(1), space_id(0)), (space_id(0), sat_id(1)),
                                     (space_id(0), GROUND_ID), (GROUND_ID, space_id(0))}

    def test_stage_time_is_max_over_links(self):
        topo = Topology(satellites=2, space_stations=1, bandwidth=100.0, latency=0.5)
        nodes = build_tiers(topo, sbm(), gnn.init_model(4, 3, 3, 0))
        net = Network(topo, nodes)
        a = Message(MODEL_UPDATE, space_id(0), sat_id(0), {"values": [0.0] * 2})
        b = Message(MODEL_UPDATE, space_id(0), sat_id(1), {"values": [0.0] * 46})
        net.deliver([a, b])
        assert net.clock == pytest.approx(0.5 + 200 / 100)
        assert net.total_bytes() == 24 + 200


class TestTopology:
    def test_from_file(self, tmp_path):
        p = tmp_path / "topo.json"
        p.write_text(json.dumps({"satellites": 4, "space_stations": 2, "bandwidth": 10.0}))
        t = Topology.from_file(p)
        assert (t.satellites, t.space_stations, t.bandwidth) == (4, 2, 10.0)
        assert [t.station_of(i) for i in range(4)] == [0, 1, 0, 1]

    def test_invalid(self):
        with pytest.raises(ValueError):
            Topology(satellites=1, space_stations=2)

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            Topology.from_dict({"satelites": 3})


class TestSatelliteStep:
    def shard(self):
        g = sbm_generate([10], 0.4, 0.0, 3, seed=5)
        g.features = g.features / (1 + np.linalg.norm(g.features, axis=1, keepdims=True))
        return g

    def node(self):
        return TierNode(sat_id(0), split.SATELLITE, parent=space_id(0))

    def test_zero_noise_no_prune(self):
        g = self.shard()
        msg = satellite_step(self.node(), g, PrivacyParams.calibrated(math.inf), None, 0)
        assert msg.payload["graph"].same_as(g)
        assert msg.dst == space_id(0)

    def test_ratio_half(self):
        msg = satellite_step(self.node(), self.shard(), None, PruneSelectionConfig("ratio", 0.5), 0)
        assert msg.payload["graph"].num_nodes == 5

    def test_bytes_monotone_in_ratio(self):
        sizes = [satellite_step(self.node(), self.shard(), None, PruneSelectionConfig("ratio", dr), 0).payload_bytes
                 for dr in (0.0, 0.1, 0.3, 0.5, 0.7)]
        assert sizes == sorted(sizes, reverse=True)

    def test_empty_shard(self):
        with pytest.raises(ProtocolError):
            satellite_step(self.node(), build_graph([], np.zeros((0, 2))), None, None, 0)


def test_ground_gradient_matches_finite_differences():
    g = sbm(3, (6, 6))
    g.num_classes = 2
    topo = Topology(satellites=1, space_stations=1)
    model = gnn.init_model(4, 5, 2, seed=1)
    nodes = build_tiers(topo, g, model)
    ground = nodes[GROUND_ID]
    top = Message(PRUNED_GRAPH, space_id(0), GROUND_ID, {"graph": split._drop_features(g), "with_features": False})
    split.ground_station_receive(ground, [top])
    h = np.random.default_rng(0).standard_normal((g.num_nodes, 5))
    train = np.arange(g.num_nodes) % 2 == 0
    msg = Message(SMASHED_DATA, space_id(0), GROUND_ID, {"values": h, "node_ids": g.node_ids})
    grads, _, metrics = split.ground_station_step(ground, [msg], g.labels, train, update=False)
    dh = grads[0].payload["values"]
    adj = gnn.Adjacency.of(g)

    def loss():
        logits, _ = gnn.ground_forward(ground.local_params["layer2"], adj, h)
        return gnn.cross_entropy(logits, g.labels, train)[0]

    assert loss() == pytest.approx(metrics["loss"], rel=1e-14)
    for i in range(g.num_nodes):
        for j in range(5):
            assert dh[i, j] == pytest.approx(central_difference(loss, h, (i, j)), abs=1e-8)


class TestRun:
    def test_accounting_identity(self):
        g = sbm(1)
        tr, te = masks(g.num_nodes)
        m = run_split_training(Topology(satellites=4, space_stations=2), g, quick(4), 0, tr, te)
        net = m.network
        assert sum(m.link_bytes.values()) == m.sl_bytes_total == net.total_bytes()
        assert sum(msg.payload_bytes for msg in net.log) == m.sl_bytes_total
        assert sum(m.bytes_by_kind.values()) == m.sl_bytes_total
        per_round = [r["round_bytes"] for r in m.rows]
        assert m.setup_bytes + sum(per_round) == m.sl_bytes_total
        assert len(set(per_round)) == 1
        # SmashedData and GradientsBack are the same size each round
        assert m.bytes_by_kind[SMASHED_DATA] == m.bytes_by_kind[GRADIENTS_BACK] == 4 * (2 * 16 + 4 * 60 * 8)

    def test_smashed_bytes_independent_of_satellites(self):
        g = sbm(2)
        tr, te = masks(g.num_nodes)
        a = run_split_training(Topology(satellites=2, space_stations=2), g, quick(3), 0, tr, te)
        b = run_split_training(Topology(satellites=4, space_stations=2), g, quick(3), 0, tr, te)
        assert a.bytes_by_kind[SMASHED_DATA] == b.bytes_by_kind[SMASHED_DATA]
        assert b.bytes_by_kind[MODEL_UPDATE] > a.bytes_by_kind[MODEL_UPDATE]

    def test_deterministic(self):
        g = sbm(4)
        tr, te = masks(g.num_nodes)
        cfg = quick(6)
        cfg.privacy = PrivacyParams.calibrated(4.0)
        cfg.prune = PruneSelectionConfig("ratio", 0.1)
        a = run_split_training(Topology(satellites=3, space_stations=2), g, cfg, 7, tr, te)
        b = run_split_training(Topology(satellites=3, space_stations=2), g, cfg, 7, tr, te)
        assert a.losses == b.losses and a.link_bytes == b.link_bytes
        assert a.final_full_test_acc == b.final_full_test_acc

    def test_matches_monolithic(self):
        g = sbm(5)
        tr, te = masks(g.num_nodes)
        cfg = quick(20)
        m = run_split_training(Topology(satellites=1, space_stations=1), g, cfg, 3, tr, te)
        mono = gnn.init_model(4, 8, 3, seed=3)
        losses, _ = gnn.train_epochs(mono, g, tr, gnn.TrainConfig(epochs=20, hidden_dim=8, seed=3))
        np.testing.assert_allclose(m.losses, losses, rtol=0, atol=1e-10)

    def test_time_model(self):
        g = sbm(8)
        tr, te = masks(g.num_nodes)
        topo = Topology(satellites=2, space_stations=1, bandwidth=1000.0, latency=0.25)
        m = run_split_training(topo, g, quick(3), 0, tr, te)
        setup = m.network.stage_times[0]
        assert len(setup) == 2
        smashed = 16 + 4 * g.num_nodes * 8
        # each round: smashed, gradients, update, relay; the first two are the slowest stages
        per_round = 0.25 + smashed / 1000.0
        assert m.wall_time == pytest.approx(max(setup) + 3 * per_round)
        relay = 0.25 + 24 / 1000.0
        assert m.sequential_time == pytest.approx(sum(setup) + 3 * (2 * per_round + 2 * relay))

    def test_csv(self, tmp_path):
        g = sbm(6)
        tr, te = masks(g.num_nodes)
        m = run_split_training(Topology(), g, quick(2), 0, tr, te)
        p = tmp_path / "run.csv"
        m.to_csv(p)
        lines = p.read_text().splitlines()
        assert lines[0].startswith("round,loss,train_acc,test_acc,sl_bytes_total,bytes[")
        assert len(lines) == 3


class TestFl:
    def test_formula(self):
        out = run_fl_baseline(FlBaselineConfig(num_clients=2, rounds=1, params_per_model=10))
        assert out["total_bytes"] == 160

    def test_linear_in_clients(self):
        two = run_fl_baseline(FlBaselineConfig(2, 50, 1234))["total_bytes"]
        sixteen = run_fl_baseline(FlBaselineConfig(16, 50, 1234))["total_bytes"]
        assert sixteen == 8 * two

    def test_invalid(self):
        with pytest.raises(ValueError):
            FlBaselineConfig(0, 1, 1)


class TestCommReport:
    def test_ratio_one(self):
        assert comm_cost_report({2: 100}, {2: 100})[0]["ratio"] == 1.0

    def test_ratio_above_one(self):
        assert comm_cost_report({4: 50}, {4: 200})[0]["ratio"] == 4.0

    def test_zero_sl(self):
        with pytest.raises(ZeroDivisionError):
            comm_cost_report({2: 0}, {2: 10})
