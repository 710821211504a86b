"""Undirected simple graphs with an edge mask.

A :class:`Graph` stores each undirected edge once as ``(u, v)`` with
``u < v``, sorted lexicographically. ``edge_mask`` switches edges off
without deleting them; every structural query here looks at active edges
only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cc

from . import kernels


class GraphError(ValueError):
    """Invalid graph construction or input file."""


@dataclass(eq=False)
class Graph:
    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None
    edge_mask: np.ndarray | None = None
    # (epsilon, delta) spent on the feature matrix, if it was released under DP
    dp_record: tuple[float, float] | None = None
    # original node ids when this graph was cut out of a larger one
    node_ids: np.ndarray | None = None
    num_classes: int | None = field(default=None)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.features = np.asarray(self.features)
        if self.edge_mask is None:
            self.edge_mask = np.ones(len(self.edges), dtype=bool)
        else:
            self.edge_mask = np.asarray(self.edge_mask, dtype=bool).copy()
        if self.node_ids is None:
            self.node_ids = np.arange(self.num_nodes, dtype=np.int64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.num_classes is None:
                self.num_classes = int(self.labels.max()) + 1 if len(self.labels) else 0
        if len(self.edge_mask) != len(self.edges):
            raise GraphError("edge_mask length must equal number of edges")
        if self.features.ndim != 2 or self.features.shape[0] != self.num_nodes:
            raise GraphError("features must be a [num_nodes x feature_dim] matrix")
        if self.labels is not None and len(self.labels) != self.num_nodes:
            raise GraphError("labels must have one entry per node")

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_active_edges(self) -> int:
        return int(self.edge_mask.sum())

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def active_edges(self) -> np.ndarray:
        return self.edges[self.edge_mask]

    def csr(self):
        """``(indptr, indices, eids)`` over active edges."""
        return kernels.build_csr(self.num_nodes, self.edges, self.edge_mask)

    def degrees(self) -> np.ndarray:
        act = self.active_edges()
        return np.bincount(act.ravel(), minlength=self.num_nodes)

    def copy(self) -> Graph:
        return Graph(
            num_nodes=self.num_nodes,
            edges=self.edges.copy(),
            features=self.features.copy(),
            labels=None if self.labels is None else self.labels.copy(),
            edge_mask=self.edge_mask.copy(),
            dp_record=self.dp_record,
            node_ids=self.node_ids.copy(),
            num_classes=self.num_classes,
        )

    def same_as(self, other: Graph) -> bool:
        """Exact structural + data equality."""
        if self.num_nodes != other.num_nodes:
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        return (
            np.array_equal(self.edges, other.edges)
            and np.array_equal(self.edge_mask, other.edge_mask)
            and np.array_equal(self.features, other.features)
            and (self.labels is None or np.array_equal(self.labels, other.labels))
        )


def _canonical_edges(edge_pairs, num_nodes):
    arr = np.asarray(edge_pairs, dtype=np.int64)
    if arr.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GraphError("edges must be (u, v) pairs")
    if (arr < 0).any() or (arr >= num_nodes).any():
        bad = arr[((arr < 0) | (arr >= num_nodes)).any(axis=1)][0]
        raise GraphError(f"edge endpoint out of range: ({bad[0]}, {bad[1]}) with num_nodes={num_nodes}")
    if (arr[:, 0] == arr[:, 1]).any():
        v = arr[arr[:, 0] == arr[:, 1]][0, 0]
        raise GraphError(f"self-loop at node {v}")
    arr = np.sort(arr, axis=1)
    return np.unique(arr, axis=0)


def build_graph(edge_pairs, features, labels=None, num_nodes=None) -> Graph:
    """Canonicalise ``edge_pairs`` (u<v, sorted, deduplicated) into a Graph.

    ``features`` may be a 2-D array or a list of rows; ragged rows are an
    error. ``num_nodes`` defaults to the number of feature rows.
    """
    if isinstance(features, np.ndarray):
        feats = features
    else:
        rows = list(features)
        widths = {len(r) for r in rows}
        if len(widths) > 1:
            raise GraphError("ragged feature rows")
        feats = np.asarray(rows, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats.reshape(len(rows), 0)
    if feats.ndim != 2:
        raise GraphError("features must be 2-D")
    n = feats.shape[0] if num_nodes is None else int(num_nodes)
    edges = _canonical_edges(edge_pairs, n)
    return Graph(num_nodes=n, edges=edges, features=feats, labels=labels)


def active_neighbors(g: Graph, v: int) -> list[int]:
    act = g.active_edges()
    nbrs = np.concatenate([act[act[:, 0] == v, 1], act[act[:, 1] == v, 0]])
    return sorted(int(u) for u in nbrs)


def connected_components(g: Graph) -> list[list[int]]:
    """Components over active edges, each sorted, ordered by smallest member."""
    labels = component_labels(g)
    comps: dict[int, list[int]] = {}
    for v, c in enumerate(labels):
        comps.setdefault(int(c), []).append(v)
    return sorted(comps.values(), key=lambda c: c[0])


def component_labels(g: Graph) -> np.ndarray:
    act = g.active_edges()
    n = g.num_nodes
    adj = coo_matrix((np.ones(len(act)), (act[:, 0], act[:, 1])), shape=(n, n))
    _, labels = _cc(adj, directed=False)
    return labels


def num_components(g: Graph) -> int:
    return int(component_labels(g).max()) + 1 if g.num_nodes else 0


def bridge_mask(g: Graph) -> np.ndarray:
    """Boolean vector over ``g.edges``; True where the edge is an active bridge."""
    indptr, indices, eids = g.csr()
    return kernels.bridges(indptr, indices, eids, g.num_edges)


def find_bridges(g: Graph) -> set[tuple[int, int]]:
    mask = bridge_mask(g)
    return {(int(u), int(v)) for u, v in g.edges[mask]}


def sbm_generate(block_sizes, p_in, p_out, feature_dim, seed, feature_noise=1.0) -> Graph:
    """Stochastic block model graph.

    Labels are block indices. Each block gets a mean feature vector drawn
    from N(0, I); node features are that mean plus N(0, feature_noise^2)
    jitter. Everything is drawn from one PCG64 stream seeded by ``seed``.
    """
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise GraphError(f"need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
    sizes = [int(s) for s in block_sizes]
    if any(s <= 0 for s in sizes):
        raise GraphError("block sizes must be positive")
    rng = np.random.default_rng(seed)
    n = sum(sizes)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(len(iu)) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    means = rng.standard_normal((len(sizes), feature_dim))
    feats = means[labels] + feature_noise * rng.standard_normal((n, feature_dim))
    return Graph(num_nodes=n, edges=edges, features=feats, labels=labels, num_classes=len(sizes))


def _read_csv_matrix(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [row for row in csv.reader(fh) if row]


def load_edge_list(path, feature_path=None, label_path=None, num_nodes=None) -> Graph:
    """Read a whitespace-separated ``u v`` edge list (``#`` starts a comment).

    Features/labels are header-less CSV files, row i belonging to node i.
    Without a feature file every node gets a single constant feature 1.0.
    """
    pairs = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphError(f"{path}:{lineno}: expected 'u v', got {raw!r}")
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise GraphError(f"{path}:{lineno}: non-integer node id in {raw!r}") from None

    labels = None
    if label_path is not None:
        rows = _read_csv_matrix(label_path)
        try:
            labels = np.array([int(r[0]) for r in rows], dtype=np.int64)
        except ValueError as exc:
            raise GraphError(f"{label_path}: {exc}") from None

    if feature_path is not None:
        rows = _read_csv_matrix(feature_path)
        if len({len(r) for r in rows}) > 1:
            raise GraphError(f"{feature_path}: ragged feature rows")
        try:
            feats = np.array(rows, dtype=np.float64)
        except ValueError as exc:
            raise GraphError(f"{feature_path}: {exc}") from None
        n = feats.shape[0]
    else:
        max_id = max((max(p) for p in pairs), default=-1)
        n = num_nodes if num_nodes is not None else max(max_id + 1, 0 if labels is None else len(labels))
        feats = np.ones((n, 1))

    if num_nodes is not None and num_nodes != n:
        raise GraphError(f"feature file has {n} rows but num_nodes={num_nodes}")
    if labels is not None and len(labels) != n:
        raise GraphError(f"{label_path}: {len(labels)} labels for {n} nodes")
    max_id = max((max(p) for p in pairs), default=-1)
    if max_id >= n:
        raise GraphError(f"edge endpoint {max_id} but only {n} feature rows")
    return build_graph(pairs, feats, labels=labels, num_nodes=n)


def induced_subgraph(g: Graph, nodes) -> Graph:
    """Subgraph on ``nodes`` (sorted, re-indexed densely). ``node_ids`` keeps the original ids."""
    nodes = np.unique(np.asarray(nodes, dtype=np.int64))
    remap = np.full(g.num_nodes, -1, dtype=np.int64)
    remap[nodes] = np.arange(len(nodes))
    keep = (remap[g.edges[:, 0]] >= 0) & (remap[g.edges[:, 1]] >= 0)
    return Graph(
        num_nodes=len(nodes),
        edges=remap[g.edges[keep]],
        features=g.features[nodes].copy(),
        labels=None if g.labels is None else g.labels[nodes].copy(),
        edge_mask=g.edge_mask[keep],
        dp_record=g.dp_record,
        node_ids=g.node_ids[nodes].copy(),
        num_classes=g.num_classes,
    )


def disjoint_union(graphs) -> Graph:
    """Block-diagonal union, nodes ordered by their ``node_ids``."""
    graphs = list(graphs)
    ids = np.concatenate([h.node_ids for h in graphs])
    order = np.argsort(ids, kind="stable")
    if len(np.unique(ids)) != len(ids):
        raise GraphError("graphs overlap in node_ids")
    offsets = np.cumsum([0] + [h.num_nodes for h in graphs])
    rank = np.empty(len(ids), dtype=np.int64)
    rank[order] = np.arange(len(ids))
    edges, masks = [], []
    for off, h in zip(offsets, graphs):
        e = rank[h.edges + off]
        edges.append(np.sort(e, axis=1))
        masks.append(h.edge_mask)
    edges = np.concatenate(edges) if edges else np.empty((0, 2), dtype=np.int64)
    masks = np.concatenate(masks) if masks else np.empty(0, dtype=bool)
    eorder = np.lexsort((edges[:, 1], edges[:, 0]))
    feats = np.concatenate([h.features for h in graphs])[order]
    labels = None
    if all(h.labels is not None for h in graphs):
        labels = np.concatenate([h.labels for h in graphs])[order]
    records = {h.dp_record for h in graphs}
    return Graph(
        num_nodes=len(ids),
        edges=edges[eorder],
        features=feats,
        labels=labels,
        edge_mask=masks[eorder],
        dp_record=records.pop() if len(records) == 1 else None,
        node_ids=ids[order],
        num_classes=max((h.num_classes or 0) for h in graphs) or None,
    )
