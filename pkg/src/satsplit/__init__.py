"""Split learning of graph neural networks across satellites, space stations
and a ground station, with feature-level differential privacy, centrality
based graph pruning and FLOPs-constrained weight pruning."""

__version__ = "0.1.0"
