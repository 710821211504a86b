"""Three-tier split learning simulator: satellites -> space stations -> ground station.

Placement of the model:

* satellites hold no trainable weights; they clip+noise their shard's
  features and drop low-centrality nodes, then ship the shard upward;
* each space station holds its own copy of layer 1 + batch norm and turns
  the union of its satellites' shards into cut-layer activations;
* the ground station holds layer 2, the labels and the loss.

Wire format (all sizes in bytes, fixed so counts are reproducible):

=============  ===============================================  ============
message        payload                                          size
=============  ===============================================  ============
PrunedGraph    node ids (int32), active edges (2 x int32),      16 + 4n + 8e
               features (float32), sat -> space                 + 4nd
PrunedGraph    topology only (ids + edges), space -> ground     16 + 4n + 8e
SmashedData    activations, rows in node-id order               16 + 4nh
GradientsBack  dLoss/dactivations, same shape                   16 + 4nh
ModelUpdate    round index + loss (2 x float32)                 16 + 8
=============  ===============================================  ============

Satellites never talk to the ground station; ground-to-satellite updates
are relayed through the owning space station. Topology (and features) are
sent once, before the first round, since the pruned shards do not change
while training.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gnn
from .centrality import STANDARD_HARMONIC, centrality_scores, prune_graph, \
    select_prune_nodes_ratio, select_prune_nodes_threshold
from .graph import Graph, disjoint_union, induced_subgraph
from .privacy import PrivacyParams, apply_dp_to_graph

SATELLITE = "Satellite"
SPACE_STATION = "SpaceStation"
GROUND_STATION = "GroundStation"

PRUNED_GRAPH = "PrunedGraph"
SMASHED_DATA = "SmashedData"
GRADIENTS_BACK = "GradientsBack"
MODEL_UPDATE = "ModelUpdate"

HEADER_BYTES = 16
REAL_BYTES = 4
INDEX_BYTES = 4
GROUND_ID = "ground"


class ProtocolError(RuntimeError):
    """A message arrived where the protocol does not allow it, or one is missing."""


def sat_id(i):
    return f"sat{i:03d}"


def space_id(i):
    return f"space{i:03d}"


def payload_size(kind, payload) -> int:
    if kind == PRUNED_GRAPH:
        g = payload["graph"]
        size = HEADER_BYTES + INDEX_BYTES * g.num_nodes + 2 * INDEX_BYTES * g.num_active_edges
        if payload.get("with_features", True):
            size += REAL_BYTES * g.features.size
        return size
    if kind in (SMASHED_DATA, GRADIENTS_BACK):
        return HEADER_BYTES + REAL_BYTES * payload["values"].size
    if kind == MODEL_UPDATE:
        return HEADER_BYTES + REAL_BYTES * len(payload["values"])
    raise ProtocolError(f"unknown message kind {kind!r}")


@dataclass
class Message:
    kind: str
    src: str
    dst: str
    payload: dict
    payload_bytes: int = 0

    def __post_init__(self):
        self.payload_bytes = payload_size(self.kind, self.payload)


@dataclass
class ChannelModel:
    bandwidth: float = 1e6  # bytes per time unit
    latency: float = 0.0
    cumulative_bytes: int = 0
    cumulative_time: float = 0.0

    def transfer(self, nbytes: int) -> float:
        t = self.latency + nbytes / self.bandwidth
        self.cumulative_bytes += nbytes
        self.cumulative_time += t
        return t


@dataclass
class TierNode:
    id: str
    tier: str
    owned_partition: np.ndarray | None = None
    # satellites: {"privacy", "prune"}; space: {"layer1", "bn", "adam"}; ground: {"layer2", "adam"}
    local_params: dict = field(default_factory=dict)
    parent: str | None = None
    cache: dict = field(default_factory=dict)


@dataclass
class Topology:
    satellites: int = 2
    space_stations: int = 1
    bandwidth: float = 1e6
    latency: float = 0.0
    partition: str = "block"  # "block" (contiguous id ranges) or "random"

    KEYS = ("satellites", "space_stations", "bandwidth", "latency", "partition")

    def __post_init__(self):
        if self.space_stations < 1 or self.satellites < self.space_stations:
            raise ValueError("need space_stations >= 1 and satellites >= space_stations")
        if self.partition not in ("block", "random"):
            raise ValueError(f"partition must be 'block' or 'random', got {self.partition!r}")
        if not self.bandwidth > 0 or self.latency < 0:
            raise ValueError("bandwidth must be positive and latency nonnegative")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.KEYS)
        if unknown:
            raise ValueError(f"unknown topology keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def station_of(self, sat_index):
        return sat_index % self.space_stations


def partition_nodes(num_nodes, parts, strategy="block", seed=0):
    """Split node ids into ``parts`` disjoint sorted chunks covering every node."""
    ids = np.arange(num_nodes)
    if strategy == "random":
        ids = np.random.default_rng([seed, 7]).permutation(num_nodes)
    return [np.sort(c) for c in np.array_split(ids, parts)]


class Network:
    """Per-link channels, byte ledger and the allowed-link check."""

    def __init__(self, topology: Topology, nodes: dict[str, TierNode]):
        self.nodes = nodes
        self.channels: dict[tuple[str, str], ChannelModel] = {}
        for node in nodes.values():
            if node.parent is not None:
                for link in ((node.id, node.parent), (node.parent, node.id)):
                    self.channels[link] = ChannelModel(topology.bandwidth, topology.latency)
        self.log: list[Message] = []
        self.round_log: list[list[Message]] = [[]]
        self.stage_times: list[list[float]] = [[]]
        self.clock = 0.0

    def deliver(self, msgs) -> dict[str, list[Message]]:
        """Deliver one concurrent stage of messages. Returns inboxes by destination."""
        msgs = sorted(msgs, key=lambda m: (m.src, m.dst))
        per_link: dict[tuple[str, str], int] = {}
        for m in msgs:
            tiers = {self.nodes[m.src].tier, self.nodes[m.dst].tier}
            if tiers == {SATELLITE, GROUND_STATION}:
                raise ProtocolError(f"direct satellite/ground link {m.src} -> {m.dst}")
            if (m.src, m.dst) not in self.channels:
                raise ProtocolError(f"no link {m.src} -> {m.dst}")
            per_link[(m.src, m.dst)] = per_link.get((m.src, m.dst), 0) + m.payload_bytes
        stage = 0.0
        for link, nbytes in per_link.items():
            stage = max(stage, self.channels[link].transfer(nbytes))
        self.clock += stage
        self.stage_times[-1].append(stage)
        self.log.extend(msgs)
        self.round_log[-1].extend(msgs)
        inbox: dict[str, list[Message]] = {}
        for m in msgs:
            inbox.setdefault(m.dst, []).append(m)
        return inbox

    def next_round(self):
        self.round_log.append([])
        self.stage_times.append([])

    def pipelined_time(self) -> float:
        """Sum over rounds of the slowest stage in that round (the setup exchange counts as round 0)."""
        return sum(max(st, default=0.0) for st in self.stage_times)

    def total_bytes(self) -> int:
        return sum(ch.cumulative_bytes for ch in self.channels.values())

    def link_bytes(self) -> dict[str, int]:
        return {f"{s}->{d}": ch.cumulative_bytes for (s, d), ch in sorted(self.channels.items())}


# -- tier steps ------------------------------------------------------------------

@dataclass
class PruneSelectionConfig:
    mode: str = "ratio"  # "ratio" | "threshold"
    parameter: float = 0.0  # dropping ratio, or k for mean - k*std
    score_mode: str = STANDARD_HARMONIC


def satellite_step(node: TierNode, raw_graph_shard: Graph, privacy: PrivacyParams | None,
                   prune_sel_cfg: PruneSelectionConfig | None, seed) -> Message:
    """DP on features, then centrality-based node pruning; emits a PrunedGraph."""
    if raw_graph_shard.num_nodes == 0:
        raise ProtocolError(f"{node.id}: empty shard")
    g = raw_graph_shard
    if privacy is not None:
        g = apply_dp_to_graph(g, privacy, seed)
    node.cache["dp_shard"] = g
    if prune_sel_cfg is not None and prune_sel_cfg.parameter > 0:
        combined = centrality_scores(g, prune_sel_cfg.score_mode).combined
        if prune_sel_cfg.mode == "ratio":
            sel = select_prune_nodes_ratio(combined, prune_sel_cfg.parameter)
        elif prune_sel_cfg.mode == "threshold":
            sel = select_prune_nodes_threshold(combined, prune_sel_cfg.parameter)
        else:
            raise ValueError(f"unknown selection mode {prune_sel_cfg.mode!r}")
        g = prune_graph(g, sel)
    return Message(PRUNED_GRAPH, node.id, node.parent, {"graph": g, "with_features": True})


def _drop_features(g: Graph) -> Graph:
    return Graph(num_nodes=g.num_nodes, edges=g.edges, features=np.zeros((g.num_nodes, 0)),
                 edge_mask=g.edge_mask, node_ids=g.node_ids)


def space_station_receive(node: TierNode, msgs, expected) -> Message:
    """Union the satellites' shards; returns the topology forward for the ground station."""
    got = sorted(m.src for m in msgs if m.kind == PRUNED_GRAPH)
    if got != sorted(expected):
        raise ProtocolError(f"{node.id}: expected shards from {sorted(expected)}, got {got}")
    shards = [m.payload["graph"] for m in sorted(msgs, key=lambda m: m.src)]
    g = disjoint_union(shards)
    node.cache["graph"] = g
    node.cache["adj"] = gnn.Adjacency.of(g)
    return Message(PRUNED_GRAPH, node.id, GROUND_ID, {"graph": _drop_features(g), "with_features": False})


def space_station_step(node: TierNode, msgs=None, model_slice=None, train=True, drop_key=(0, 0, 0),
                       dropout_rate=0.0) -> Message:
    """Layer-1 forward over the station's graph; emits SmashedData.

    ``msgs`` (PrunedGraph list) is only needed on the first call;
    ``model_slice`` overrides the station's (layer1, bn).
    """
    if msgs:
        space_station_receive(node, msgs, [m.src for m in msgs])
    if "graph" not in node.cache:
        raise ProtocolError(f"{node.id}: no shard received")
    layer1, bn = model_slice if model_slice is not None else (node.local_params["layer1"], node.local_params["bn"])
    g = node.cache["graph"]
    h, cache = gnn.space_forward(layer1, bn, node.cache["adj"], g.features, train, dropout_rate, drop_key)
    node.cache["forward"] = cache
    return Message(SMASHED_DATA, node.id, GROUND_ID, {"values": h, "node_ids": g.node_ids})


def space_station_backward(node: TierNode, msg: Message, learning_rate: float):
    if msg.kind != GRADIENTS_BACK:
        raise ProtocolError(f"{node.id}: expected GradientsBack, got {msg.kind}")
    lp = node.local_params
    grads = gnn.space_backward(lp["layer1"], lp["bn"], node.cache.pop("forward"), msg.payload["values"])
    gnn.adam_step(lp["adam"], gnn.space_params(lp["layer1"], lp["bn"]), grads, learning_rate,
                  gnn.space_masks(lp["layer1"]))
    return grads


def ground_station_receive(node: TierNode, msgs):
    """Build the ground-side graph from the stations' topology forwards."""
    tops = [m.payload["graph"] for m in sorted(msgs, key=lambda m: m.src) if m.kind == PRUNED_GRAPH]
    g = disjoint_union(tops)
    node.cache["graph"] = g
    node.cache["adj"] = gnn.Adjacency.of(g)
    node.cache["rows"] = {m.src: np.searchsorted(g.node_ids, m.payload["graph"].node_ids) for m in msgs}


def _assemble(node: TierNode, msgs):
    g = node.cache["graph"]
    first = msgs[0].payload["values"]
    h = np.zeros((g.num_nodes, first.shape[1]), dtype=first.dtype)
    seen = np.zeros(g.num_nodes, dtype=bool)
    for m in msgs:
        rows = node.cache["rows"][m.src]
        if len(rows) != len(m.payload["values"]):
            raise ProtocolError(f"{m.src}: smashed rows do not match announced topology")
        h[rows] = m.payload["values"]
        seen[rows] = True
    if not seen.all():
        raise ProtocolError("smashed data does not cover every node")
    return h


def ground_station_step(node: TierNode, msgs, labels, train_mask, learning_rate=0.01, round_index=0,
                        update=True):
    """Layer 2 + loss + backward; emits GradientsBack per station and ModelUpdates.

    ``labels`` and ``train_mask`` are indexed by global node id. Returns
    (gradient messages, update messages, metrics dict).
    """
    smashed = sorted((m for m in msgs if m.kind == SMASHED_DATA), key=lambda m: m.src)
    if len({m.src for m in smashed}) != len(smashed):
        raise ProtocolError("more than one SmashedData from a station")
    if not smashed:
        raise ProtocolError("ground station received no smashed data")
    g = node.cache["graph"]
    labels = np.asarray(labels)
    if labels.shape[0] <= int(g.node_ids.max()):
        raise ValueError("labels do not cover every node id")
    h = _assemble(node, smashed)
    y = labels[g.node_ids]
    mask = np.asarray(train_mask, dtype=bool)[g.node_ids]
    layer2 = node.local_params["layer2"]
    logits, cache = gnn.ground_forward(layer2, node.cache["adj"], h)
    loss, dlogits = gnn.cross_entropy(logits, y, mask)
    grads, dh = gnn.ground_backward(layer2, cache, dlogits)
    if update:
        gnn.adam_step(node.local_params["adam"], gnn.ground_params(layer2), grads, learning_rate,
                      gnn.ground_masks(layer2))
    train_acc = float((logits.argmax(1)[mask] == y[mask]).mean())
    grad_msgs = [Message(GRADIENTS_BACK, GROUND_ID, m.src, {"values": dh[node.cache["rows"][m.src]]})
                 for m in smashed]
    update_msgs = [Message(MODEL_UPDATE, GROUND_ID, m.src, {"values": [float(round_index), loss]})
                   for m in smashed]
    metrics = {"loss": loss, "train_acc": train_acc, "grads": grads, "dh": dh}
    return grad_msgs, update_msgs, metrics


def ground_logits(node: TierNode, msgs):
    h = _assemble(node, sorted(msgs, key=lambda m: m.src))
    logits, _ = gnn.ground_forward(node.local_params["layer2"], node.cache["adj"], h)
    return logits


# -- driver ------------------------------------------------------------------------

@dataclass
class SplitConfig:
    rounds: int = 200
    train: gnn.TrainConfig = field(default_factory=gnn.TrainConfig)
    privacy: PrivacyParams | None = None
    prune: PruneSelectionConfig | None = None


@dataclass
class SplitRunMetrics:
    rows: list = field(default_factory=list)
    link_bytes: dict = field(default_factory=dict)
    bytes_by_kind: dict = field(default_factory=dict)
    sl_bytes_total: int = 0
    setup_bytes: int = 0
    wall_time: float = 0.0  # per round: max over stages (pipelined)
    sequential_time: float = 0.0  # per round: sum over stages
    losses: list = field(default_factory=list)
    final_test_acc: float = float("nan")
    final_full_test_acc: float = float("nan")
    num_params: int = 0
    nodes: dict = field(default_factory=dict)
    network: Network | None = None

    def to_csv(self, path):
        links = sorted(self.link_bytes)
        cols = ["round", "loss", "train_acc", "test_acc", "sl_bytes_total"] + [f"bytes[{k}]" for k in links]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([r["round"], repr(r["loss"]), repr(r["train_acc"]), repr(r["test_acc"]),
                            r["sl_bytes_total"]] + [r["links"][k] for k in links])


def build_tiers(topology: Topology, global_graph: Graph, model: gnn.GnnModel, seed=0):
    parts = partition_nodes(global_graph.num_nodes, topology.satellites, topology.partition, seed)
    nodes = {GROUND_ID: TierNode(GROUND_ID, GROUND_STATION,
                                 local_params={"layer2": model.layer2.copy(), "adam": gnn.AdamState()})}
    for s in range(topology.space_stations):
        nodes[space_id(s)] = TierNode(space_id(s), SPACE_STATION, parent=GROUND_ID, local_params={
            "layer1": model.layer1.copy(), "bn": model.bn.copy(), "adam": gnn.AdamState(), "index": s})
    for i, part in enumerate(parts):
        nodes[sat_id(i)] = TierNode(sat_id(i), SATELLITE, owned_partition=part,
                                    parent=space_id(topology.station_of(i)), local_params={"index": i})
    return nodes


def _stations(nodes):
    return sorted(k for k, v in nodes.items() if v.tier == SPACE_STATION)


def _satellites(nodes):
    return sorted(k for k, v in nodes.items() if v.tier == SATELLITE)


def _evaluate(nodes, graphs_by_station, test_mask, labels):
    """Eval-mode pass (not charged to the channels). Returns accuracy on test nodes present."""
    ground = nodes[GROUND_ID]
    saved = dict(ground.cache)
    tops, smashed = [], []
    for sid in _stations(nodes):
        st = nodes[sid]
        g = graphs_by_station[sid]
        h, _ = gnn.space_forward(st.local_params["layer1"], st.local_params["bn"], gnn.Adjacency.of(g),
                                 g.features, train=False)
        tops.append(Message(PRUNED_GRAPH, sid, GROUND_ID, {"graph": _drop_features(g), "with_features": False}))
        smashed.append(Message(SMASHED_DATA, sid, GROUND_ID, {"values": h, "node_ids": g.node_ids}))
    ground_station_receive(ground, tops)
    logits = ground_logits(ground, smashed)
    ids = ground.cache["graph"].node_ids
    ground.cache.clear()
    ground.cache.update(saved)
    mask = np.asarray(test_mask, dtype=bool)[ids]
    if not mask.any():
        return float("nan")
    return float((logits.argmax(1)[mask] == np.asarray(labels)[ids][mask]).mean())


def run_split_training(topology: Topology, global_graph: Graph, cfg: SplitConfig, seed: int,
                       train_mask, test_mask, model: gnn.GnnModel | None = None) -> SplitRunMetrics:
    """Simulate split training end to end.

    ``model`` supplies the shared initial parameters (default: ``init_model``
    with ``seed``). Dropout for station s in round t uses key (seed, t, s).
    """
    tc = cfg.train
    labels = global_graph.labels
    if model is None:
        model = gnn.init_model(global_graph.feature_dim, tc.hidden_dim, global_graph.num_classes, seed,
                               tc.dropout_rate, np.dtype(tc.precision))
    global_graph = global_graph.copy()
    global_graph.features = global_graph.features.astype(model.dtype)
    nodes = build_tiers(topology, global_graph, model, seed)
    net = Network(topology, nodes)
    metrics = SplitRunMetrics(num_params=model.num_params(), network=net, nodes=nodes)

    # setup: satellites -> space stations -> ground (topology only)
    up = []
    for sid in _satellites(nodes):
        sat = nodes[sid]
        shard = induced_subgraph(global_graph, sat.owned_partition)
        msg = satellite_step(sat, shard, cfg.privacy, cfg.prune, [seed, 1, sat.local_params["index"]])
        msg.payload["graph"].features = msg.payload["graph"].features.astype(model.dtype)
        up.append(msg)
    inbox = net.deliver(up)
    forwards = []
    for st in _stations(nodes):
        expected = [s for s in _satellites(nodes) if nodes[s].parent == st]
        forwards.append(space_station_receive(nodes[st], inbox.get(st, []), expected))
    inbox = net.deliver(forwards)
    ground_station_receive(nodes[GROUND_ID], inbox[GROUND_ID])
    metrics.setup_bytes = net.total_bytes()

    for t in range(cfg.rounds):
        net.next_round()
        smashed = [space_station_step(nodes[st], train=True, drop_key=(seed, t, nodes[st].local_params["index"]),
                                      dropout_rate=model.dropout_rate)
                   for st in _stations(nodes)]
        if len(smashed) != len(_stations(nodes)):
            raise ProtocolError("missing SmashedData")
        inbox = net.deliver(smashed)
        grad_msgs, upd_msgs, gm = ground_station_step(nodes[GROUND_ID], inbox[GROUND_ID], labels, train_mask,
                                                      tc.learning_rate, t)
        if len(grad_msgs) != len(smashed):
            raise ProtocolError("GradientsBack count does not match SmashedData count")
        inbox = net.deliver(grad_msgs)
        for st in _stations(nodes):
            got = [m for m in inbox.get(st, []) if m.kind == GRADIENTS_BACK]
            if len(got) != 1:
                raise ProtocolError(f"{st}: expected one GradientsBack, got {len(got)}")
            space_station_backward(nodes[st], got[0], tc.learning_rate)
        net.deliver(upd_msgs)
        relays = [Message(MODEL_UPDATE, nodes[s].parent, s, dict(m.payload))
                  for m in upd_msgs for s in _satellites(nodes) if nodes[s].parent == m.dst]
        net.deliver(relays)

        test_acc = _evaluate(nodes, {st: nodes[st].cache["graph"] for st in _stations(nodes)}, test_mask, labels)
        metrics.losses.append(gm["loss"])
        metrics.rows.append({"round": t + 1, "loss": gm["loss"], "train_acc": gm["train_acc"],
                             "test_acc": test_acc, "sl_bytes_total": net.total_bytes(),
                             "round_bytes": sum(m.payload_bytes for m in net.round_log[-1]),
                             "links": net.link_bytes()})

    metrics.final_test_acc = metrics.rows[-1]["test_acc"] if metrics.rows else float("nan")
    full = {}
    for st in _stations(nodes):
        shards = [nodes[s].cache["dp_shard"] for s in _satellites(nodes) if nodes[s].parent == st]
        full[st] = disjoint_union(shards)
        full[st].features = full[st].features.astype(model.dtype)
    metrics.final_full_test_acc = _evaluate(nodes, full, test_mask, labels)
    metrics.link_bytes = net.link_bytes()
    metrics.sl_bytes_total = net.total_bytes()
    metrics.wall_time = net.pipelined_time()
    metrics.sequential_time = net.clock
    for m in net.log:
        metrics.bytes_by_kind[m.kind] = metrics.bytes_by_kind.get(m.kind, 0) + m.payload_bytes
    return metrics


def split_model(metrics: SplitRunMetrics, station: str | None = None) -> gnn.GnnModel:
    """Reassemble one station's layer 1 with the ground's layer 2 into a GnnModel."""
    nodes = metrics.nodes
    st = nodes[station or _stations(nodes)[0]]
    return gnn.GnnModel(st.local_params["layer1"], nodes[GROUND_ID].local_params["layer2"],
                        st.local_params["bn"])


# -- federated baseline ----------------------------------------------------------------

@dataclass
class FlBaselineConfig:
    num_clients: int
    rounds: int
    params_per_model: int
    bytes_per_param: int = 4

    def __post_init__(self):
        for k in ("num_clients", "rounds", "params_per_model", "bytes_per_param"):
            if getattr(self, k) <= 0:
                raise ValueError(f"{k} must be positive")


def run_fl_baseline(cfg: FlBaselineConfig) -> dict:
    """Every client downloads and uploads the full model once per round."""
    per_round = cfg.num_clients * 2 * cfg.params_per_model * cfg.bytes_per_param
    return {"total_bytes": per_round * cfg.rounds, "per_round": [per_round] * cfg.rounds,
            "num_clients": cfg.num_clients}


def comm_cost_report(sl_bytes_by_clients: dict, fl_bytes_by_clients: dict) -> list[dict]:
    """FL/SL byte ratio per client count; zero SL bytes is an error, never infinity."""
    rows = []
    for k in sorted(sl_bytes_by_clients):
        sl = sl_bytes_by_clients[k]
        fl = fl_bytes_by_clients[k]
        if sl == 0:
            raise ZeroDivisionError(f"split-learning byte count is zero at {k} clients")
        rows.append({"clients": k, "fl_bytes": fl, "sl_bytes": sl, "ratio": fl / sl})
    return rows
