"""Joint graph sparsification and retraining.

Each round predicts labels for every node, switches off up to a fixed
quota of *negative* edges (endpoints predicted differently) and, when
those run out, falls back to non-bridge edges. Bridges are never removed,
so a round can only disconnect the graph if the input already was.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import gnn
from .centrality import STANDARD_HARMONIC, centrality_scores
from .graph import Graph, bridge_mask


class PruneConfigError(ValueError):
    pass


@dataclass
class PruneRoundConfig:
    p_g: float = 0.05
    rounds: int = 3
    retrain_epochs: int = 50
    # "original": quota = floor(p_g * edges at round 0); "current": floor(p_g * active edges now)
    quota_base: str = "original"
    score_mode: str = STANDARD_HARMONIC

    def __post_init__(self):
        if not (0.0 < self.p_g < 1.0):
            raise PruneConfigError("p_g must lie in (0, 1)")
        if self.rounds < 0 or self.retrain_epochs < 0:
            raise PruneConfigError("rounds and retrain_epochs must be nonnegative")
        if self.p_g * self.rounds >= 1.0:
            raise PruneConfigError("p_g * rounds must be < 1")
        if self.quota_base not in ("original", "current"):
            raise PruneConfigError("quota_base must be 'original' or 'current'")


@dataclass
class RoundRecord:
    round: int
    quota: int
    edges_removed_negative: int
    edges_removed_nonbridge: int
    remaining_active_edges: int
    train_accuracy: float = float("nan")
    test_accuracy: float = float("nan")
    flops: int = 0
    # edge ids in the order they were switched off (negative ones first)
    removed: list = field(default_factory=list)


@dataclass
class PruneReport:
    rounds: list = field(default_factory=list)

    COLUMNS = ("round", "edges_removed_negative", "edges_removed_nonbridge",
               "remaining_active_edges", "train_accuracy", "test_accuracy", "flops")

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rounds:
                w.writerow([getattr(r, c) for c in self.COLUMNS])


def compute_negative_edges(g: Graph, predictions) -> np.ndarray:
    """Ids of active edges whose endpoints carry different predicted labels."""
    predictions = np.asarray(predictions)
    if len(predictions) != g.num_nodes:
        raise ValueError(f"{len(predictions)} predictions for {g.num_nodes} nodes")
    differ = predictions[g.edges[:, 0]] != predictions[g.edges[:, 1]]
    return np.flatnonzero(differ & g.edge_mask)


def edge_importance(g: Graph, mode=STANDARD_HARMONIC) -> np.ndarray:
    """Per edge: the smaller combined centrality score of its two endpoints."""
    combined = centrality_scores(g, mode).combined
    return np.minimum(combined[g.edges[:, 0]], combined[g.edges[:, 1]])


def prune_round(g: Graph, model: gnn.GnnModel, p_g: float, original_edge_count: int,
                quota_base="original", score_mode=STANDARD_HARMONIC, round_index=0):
    """One sparsification step. Returns (graph with updated mask, RoundRecord).

    Candidates are taken in ascending edge-importance order, ties by edge id.
    Bridge status is re-evaluated after every removal.
    """
    base = original_edge_count if quota_base == "original" else g.num_active_edges
    quota = int(math.floor(p_g * base))
    out = g.copy()
    record = RoundRecord(round=round_index, quota=quota, edges_removed_negative=0,
                         edges_removed_nonbridge=0, remaining_active_edges=out.num_active_edges)
    if quota == 0 or out.num_active_edges == 0:
        return out, record

    pred = gnn.predict(model, out)
    importance = edge_importance(out, score_mode)
    ids = np.arange(out.num_edges)

    def ordered(candidates):
        return candidates[np.lexsort((candidates, importance[candidates]))]

    is_bridge = bridge_mask(out)

    def take(e):
        nonlocal is_bridge
        out.edge_mask[e] = False
        record.removed.append(int(e))
        is_bridge = bridge_mask(out)

    for e in ordered(compute_negative_edges(out, pred)):
        if len(record.removed) >= quota:
            break
        if not is_bridge[e]:
            take(e)
            record.edges_removed_negative += 1

    while len(record.removed) < quota:
        candidates = ids[out.edge_mask & ~is_bridge]
        if len(candidates) == 0:
            break
        take(ordered(candidates)[0])
        record.edges_removed_nonbridge += 1

    record.remaining_active_edges = out.num_active_edges
    return out, record


def iterative_prune_train(g: Graph, model: gnn.GnnModel, cfg: PruneRoundConfig, train_cfg: gnn.TrainConfig,
                          train_mask, test_mask, flops_target: float | None = None):
    """Train, then ``cfg.rounds`` times: prune the graph mask, retrain.

    With ``flops_target`` the weights are finally magnitude-pruned to that
    fraction of the dense model's FLOPs on the original graph and retrained
    for ``cfg.retrain_epochs``. Returns (model, graph, PruneReport).
    """
    graph = g.copy()
    original = g.num_active_edges
    dense_flops = gnn.count_flops(model, g)
    _, adam = gnn.train_epochs(model, graph, train_mask, train_cfg)
    epoch = train_cfg.epochs
    report = PruneReport()
    for r in range(1, cfg.rounds + 1):
        graph, rec = prune_round(graph, model, cfg.p_g, original, cfg.quota_base, cfg.score_mode, r)
        _, adam = gnn.train_epochs(model, graph, train_mask, train_cfg, cfg.retrain_epochs, adam, epoch)
        epoch += cfg.retrain_epochs
        rec.train_accuracy = gnn.accuracy(model, graph, train_mask)
        rec.test_accuracy = gnn.accuracy(model, graph, test_mask)
        rec.flops = gnn.count_flops(model, graph)
        report.rounds.append(rec)
    if flops_target is not None:
        pruned = gnn.magnitude_prune_weights(model, flops_target, graph, reference_flops=dense_flops)
        # Adam moments of masked weights are irrelevant: their updates are masked out
        gnn.train_epochs(pruned, graph, train_mask, train_cfg, cfg.retrain_epochs, adam, epoch)
        model = pruned
    return model, graph, report
