"""(epsilon, delta) Gaussian mechanism for graph data.

Noise is drawn from numpy's PCG64 bit generator (``np.random.default_rng``)
using its ziggurat ``standard_normal`` transform, scaled by sigma. Given
the same integer seed the stream is identical on every platform numpy
supports.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .graph import Graph

EDGE_ADJACENT = "edge_adjacent"
NODE_ADJACENT = "node_adjacent"

EDGE_COUNT = "edge_count"
DEGREE_VECTOR = "degree_vector"
CLIPPED_FEATURE_RELEASE = "clipped_feature_release"

DEFAULT_DELTA = 1e-5


class PrivacyError(ValueError):
    pass


@dataclass(frozen=True)
class AdjacencyRelation:
    kind: str = NODE_ADJACENT

    def __post_init__(self):
        if self.kind not in (EDGE_ADJACENT, NODE_ADJACENT):
            raise PrivacyError(f"unknown adjacency {self.kind!r}")


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float
    sensitivity: float
    sigma: float
    clip_bound: float = 1.0

    @classmethod
    def calibrated(cls, epsilon, delta=DEFAULT_DELTA, clip_bound=1.0, sensitivity=None):
        """Params with sigma set to the minimum the Gaussian mechanism allows.

        The released object is the clipped feature matrix under node
        adjacency, so sensitivity defaults to ``clip_bound``.
        """
        if sensitivity is None:
            sensitivity = analytic_sensitivity(CLIPPED_FEATURE_RELEASE, AdjacencyRelation(NODE_ADJACENT), clip_bound)
        sigma = noise_scale(sensitivity, epsilon, delta)
        return cls(epsilon=float(epsilon), delta=float(delta), sensitivity=float(sensitivity),
                   sigma=sigma, clip_bound=float(clip_bound))

    def is_calibrated(self, rtol=1e-12) -> bool:
        need = noise_scale(self.sensitivity, self.epsilon, self.delta)
        return self.sigma >= need * (1.0 - rtol)


def _check_delta(delta):
    if not (0.0 < delta < 1.0):
        raise PrivacyError(f"delta must lie in (0, 1), got {delta}")


def noise_scale(sensitivity, epsilon, delta) -> float:
    """sigma = sensitivity * sqrt(2 ln(1.25/delta)) / epsilon. ``epsilon=inf`` gives 0."""
    if not epsilon > 0:
        raise PrivacyError(f"epsilon must be positive, got {epsilon}")
    _check_delta(delta)
    if sensitivity < 0:
        raise PrivacyError("sensitivity must be nonnegative")
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def privacy_budget(sigma, sensitivity, delta) -> float:
    """Inverse of :func:`noise_scale`: the epsilon a given sigma buys."""
    if not sigma > 0:
        raise PrivacyError(f"sigma must be positive, got {sigma}")
    _check_delta(delta)
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / sigma


def analytic_sensitivity(query_kind, adjacency: AdjacencyRelation, clip_bound=1.0) -> float:
    kind = adjacency.kind
    if query_kind == EDGE_COUNT and kind == EDGE_ADJACENT:
        return 1.0
    if query_kind == DEGREE_VECTOR and kind == EDGE_ADJACENT:
        return math.sqrt(2.0)
    if query_kind == CLIPPED_FEATURE_RELEASE and kind == NODE_ADJACENT:
        if not clip_bound > 0:
            raise PrivacyError("clip_bound must be positive")
        return float(clip_bound)
    raise PrivacyError(f"no analytic sensitivity for {query_kind!r} under {kind!r}")


# -- reference queries ---------------------------------------------------------

def edge_count(g: Graph) -> np.ndarray:
    return np.array([float(g.num_active_edges)])


def degree_vector(g: Graph) -> np.ndarray:
    return g.degrees().astype(np.float64)


def clip_rows(x, clip_bound) -> np.ndarray:
    """Scale each row down to L2 norm ``clip_bound``; shorter rows are untouched."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    out = x.copy()
    over = norms > clip_bound
    out[over] *= (clip_bound / norms[over])[:, None]
    return out


def clipped_feature_release(g: Graph, clip_bound=1.0) -> np.ndarray:
    return clip_rows(g.features, clip_bound).ravel()


QUERIES = {
    EDGE_COUNT: edge_count,
    DEGREE_VECTOR: degree_vector,
    CLIPPED_FEATURE_RELEASE: clipped_feature_release,
}


def _edge_neighbors(g: Graph):
    n = g.num_nodes
    active = {tuple(e) for e in g.active_edges().tolist()}
    base = [tuple(e) for e in g.active_edges().tolist()]
    for u, v in itertools.combinations(range(n), 2):
        if (u, v) in active:
            pairs = [p for p in base if p != (u, v)]
        else:
            pairs = base + [(u, v)]
        yield Graph(num_nodes=n, edges=np.array(pairs, dtype=np.int64).reshape(-1, 2),
                    features=g.features, labels=g.labels)


def _node_neighbors(g: Graph):
    # removing node v: its edges disappear and its record (feature row) becomes zero;
    # the index space is kept so vector-valued queries stay comparable
    act = g.active_edges()
    for v in range(g.num_nodes):
        keep = (act[:, 0] != v) & (act[:, 1] != v)
        feats = g.features.copy()
        feats[v] = 0.0
        yield Graph(num_nodes=g.num_nodes, edges=act[keep], features=feats, labels=g.labels)


def bruteforce_sensitivity(query_fn, g: Graph, adjacency: AdjacencyRelation, max_nodes=12) -> float:
    """Largest L2 change of ``query_fn`` over every single-edge or single-node change of ``g``.

    Only a lower bound on the global sensitivity (it looks at neighbours of
    this one graph), used as an oracle against :func:`analytic_sensitivity`.
    """
    if g.num_nodes > max_nodes:
        raise PrivacyError(f"graph has {g.num_nodes} nodes; brute force is capped at {max_nodes}")
    base = np.atleast_1d(np.asarray(query_fn(g), dtype=np.float64))
    neighbors = _edge_neighbors(g) if adjacency.kind == EDGE_ADJACENT else _node_neighbors(g)
    best = 0.0
    for h in neighbors:
        out = np.atleast_1d(np.asarray(query_fn(h), dtype=np.float64))
        best = max(best, float(np.linalg.norm(out - base)))
    return best


def perturb(values, sigma, rng_seed) -> np.ndarray:
    """Add i.i.d. N(0, sigma^2) noise; ``sigma == 0`` returns the input unchanged."""
    if sigma < 0:
        raise PrivacyError("sigma must be nonnegative")
    values = np.asarray(values, dtype=np.float64)
    if sigma == 0:
        return values.copy()
    rng = np.random.default_rng(rng_seed)
    return values + sigma * rng.standard_normal(values.shape)


def apply_dp_to_graph(g: Graph, params: PrivacyParams, rng_seed) -> Graph:
    """Release the node features under (epsilon, delta)-DP.

    Rows are L2-clipped to ``params.clip_bound`` and then perturbed. Topology,
    labels and mask are left alone.
    """
    if not params.is_calibrated():
        raise PrivacyError(
            f"sigma={params.sigma} is below what epsilon={params.epsilon}, delta={params.delta}, "
            f"sensitivity={params.sensitivity} require")
    if params.sensitivity < params.clip_bound:
        raise PrivacyError("sensitivity is smaller than the clip bound")
    out = g.copy()
    out.features = perturb(clip_rows(g.features, params.clip_bound), params.sigma, rng_seed)
    out.dp_record = (params.epsilon, params.delta)
    return out


def calibration_table(budget_scales, epsilon_base, delta=DEFAULT_DELTA, clip_bound=1.0):
    """Rows of (budget_scale, epsilon, delta, sensitivity, sigma), epsilon = scale * base."""
    rows = []
    for lam in budget_scales:
        p = PrivacyParams.calibrated(lam * epsilon_base, delta, clip_bound)
        rows.append({"budget_scale": lam, "epsilon": p.epsilon, "delta": p.delta,
                     "sensitivity": p.sensitivity, "sigma": p.sigma})
    return rows


def write_calibration_csv(rows, path):
    cols = ["budget_scale", "epsilon", "delta", "sensitivity", "sigma"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(r[k])) for k in cols})
