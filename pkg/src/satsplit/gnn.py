"""Two-layer GraphSAGE (mean aggregator) with hand-written backprop.

Layer rule::

    z_v = (M_self * W_self)^T h_v + (M_neigh * W_neigh)^T mean_{u in N(v)} h_u + b

Layer 1 is followed by batch norm, ReLU and (train mode) inverted dropout;
layer 2 emits logits. The network is written as two halves so the split
simulator can run them on different tiers:

* the *space half* - layer 1 + batch norm + ReLU + dropout,
* the *ground half* - layer 2 + softmax cross-entropy.

Monolithic training composes the same functions, which is what makes
split and monolithic runs agree bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .graph import Graph


class ModelError(ValueError):
    pass


@dataclass
class SageLayer:
    w_self: np.ndarray
    w_neigh: np.ndarray
    bias: np.ndarray
    mask_self: np.ndarray
    mask_neigh: np.ndarray

    @property
    def in_dim(self):
        return self.w_self.shape[0]

    @property
    def out_dim(self):
        return self.w_self.shape[1]

    def effective(self):
        return self.w_self * self.mask_self, self.w_neigh * self.mask_neigh

    def copy(self):
        return SageLayer(*(a.copy() for a in (self.w_self, self.w_neigh, self.bias,
                                               self.mask_self, self.mask_neigh)))


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    def copy(self):
        return BatchNorm(self.gamma.copy(), self.beta.copy(), self.running_mean.copy(),
                         self.running_var.copy(), self.momentum, self.eps)


@dataclass
class GnnModel:
    layer1: SageLayer
    layer2: SageLayer
    bn: BatchNorm
    dropout_rate: float = 0.3

    @property
    def feature_dim(self):
        return self.layer1.in_dim

    @property
    def hidden_dim(self):
        return self.layer1.out_dim

    @property
    def num_classes(self):
        return self.layer2.out_dim

    @property
    def dtype(self):
        return self.layer1.w_self.dtype

    def copy(self):
        return GnnModel(self.layer1.copy(), self.layer2.copy(), self.bn.copy(), self.dropout_rate)

    def params(self) -> dict[str, np.ndarray]:
        """Trainable arrays by name (views, not copies)."""
        return {**space_params(self.layer1, self.bn), **ground_params(self.layer2)}

    def masks(self) -> dict[str, np.ndarray]:
        return {**space_masks(self.layer1), **ground_masks(self.layer2)}

    def num_params(self) -> int:
        return sum(p.size for p in self.params().values())


def space_params(layer1, bn):
    return {"layer1.w_self": layer1.w_self, "layer1.w_neigh": layer1.w_neigh,
            "layer1.bias": layer1.bias, "bn.gamma": bn.gamma, "bn.beta": bn.beta}


def space_masks(layer1):
    return {"layer1.w_self": layer1.mask_self, "layer1.w_neigh": layer1.mask_neigh}


def ground_params(layer2):
    return {"layer2.w_self": layer2.w_self, "layer2.w_neigh": layer2.w_neigh,
            "layer2.bias": layer2.bias}


def ground_masks(layer2):
    return {"layer2.w_self": layer2.mask_self, "layer2.w_neigh": layer2.mask_neigh}


def _glorot(rng, fan_in, fan_out, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def _layer(rng, fan_in, fan_out, dtype):
    return SageLayer(
        w_self=_glorot(rng, fan_in, fan_out, dtype),
        w_neigh=_glorot(rng, fan_in, fan_out, dtype),
        bias=np.zeros(fan_out, dtype=dtype),
        mask_self=np.ones((fan_in, fan_out), dtype=dtype),
        mask_neigh=np.ones((fan_in, fan_out), dtype=dtype),
    )


def init_model(feature_dim, hidden_dim, num_classes, seed, dropout_rate=0.3, dtype=np.float64) -> GnnModel:
    """Glorot-uniform weights, zero biases, identity batch norm."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(dtype)
    return GnnModel(
        layer1=_layer(rng, feature_dim, hidden_dim, dtype),
        layer2=_layer(rng, hidden_dim, num_classes, dtype),
        bn=BatchNorm(np.ones(hidden_dim, dtype=dtype), np.zeros(hidden_dim, dtype=dtype),
                     np.zeros(hidden_dim, dtype=dtype), np.ones(hidden_dim, dtype=dtype)),
        dropout_rate=dropout_rate,
    )


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 200
    dropout_rate: float = 0.3
    seed: int = 0
    precision: str = "float64"
    hidden_dim: int = 32

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ModelError("learning_rate must be positive")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ModelError("dropout_rate must lie in [0, 1)")
        if self.precision not in ("float32", "float64"):
            raise ModelError(f"precision must be float32 or float64, got {self.precision!r}")


# -- adjacency ---------------------------------------------------------------

@dataclass
class Adjacency:
    """Mean-aggregation operator over the active edges of a graph."""
    indptr: np.ndarray
    indices: np.ndarray
    num_active_edges: int = 0

    @classmethod
    def of(cls, g: Graph):
        indptr, indices, _ = g.csr()
        return cls(indptr, indices, g.num_active_edges)

    @property
    def num_nodes(self):
        return len(self.indptr) - 1

    def mean(self, x):
        return kernels.mean_aggregate(self.indptr, self.indices, np.ascontiguousarray(x))

    def mean_t(self, g):
        return kernels.mean_aggregate_t(self.indptr, self.indices, np.ascontiguousarray(g))


def dropout_mask(shape, rate, key, dtype):
    """Inverted-dropout multiplier for one (seed, epoch, part) key."""
    if rate == 0.0:
        return None
    rng = np.random.default_rng(list(key))
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / dtype.type(1.0 - rate)


# -- space half --------------------------------------------------------------

def space_forward(layer1: SageLayer, bn: BatchNorm, adj: Adjacency, x, train: bool,
                  dropout_rate: float = 0.0, drop_key=(0, 0, 0)):
    """Layer 1 -> batch norm -> ReLU -> dropout. Returns (activations, cache).

    In train mode batch statistics come from the nodes in ``x`` and the
    running statistics in ``bn`` are updated in place.
    """
    dtype = layer1.w_self.dtype
    x = np.asarray(x, dtype=dtype)
    if x.shape[1] != layer1.in_dim:
        raise ModelError(f"feature dim {x.shape[1]} != model input dim {layer1.in_dim}")
    ws, wn = layer1.effective()
    agg = adj.mean(x)
    z = x @ ws + agg @ wn + layer1.bias
    if train:
        mu = z.mean(axis=0)
        var = z.var(axis=0)
        n = z.shape[0]
        unbiased = var * (n / (n - 1)) if n > 1 else var
        bn.running_mean[...] = (1 - bn.momentum) * bn.running_mean + bn.momentum * mu
        bn.running_var[...] = (1 - bn.momentum) * bn.running_var + bn.momentum * unbiased
    else:
        mu, var = bn.running_mean, bn.running_var
    inv_std = 1.0 / np.sqrt(var + bn.eps)
    xhat = (z - mu) * inv_std
    y = bn.gamma * xhat + bn.beta
    relu = y > 0
    h = np.where(relu, y, 0).astype(dtype)
    drop = dropout_mask(h.shape, dropout_rate, drop_key, dtype) if train else None
    if drop is not None:
        h = h * drop
    cache = {"x": x, "agg": agg, "z": z, "xhat": xhat, "inv_std": inv_std, "relu": relu,
             "drop": drop, "train": train, "adj": adj}
    return h, cache


def space_backward(layer1: SageLayer, bn: BatchNorm, cache, dh):
    """Gradients of the space-half parameters given dLoss/dActivations."""
    if cache["drop"] is not None:
        dh = dh * cache["drop"]
    dy = np.where(cache["relu"], dh, 0).astype(dh.dtype)
    xhat = cache["xhat"]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * bn.gamma
    if cache["train"]:
        n = dy.shape[0]
        dz = (cache["inv_std"] / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    else:
        dz = dxhat * cache["inv_std"]
    return {
        "layer1.w_self": (cache["x"].T @ dz) * layer1.mask_self,
        "layer1.w_neigh": (cache["agg"].T @ dz) * layer1.mask_neigh,
        "layer1.bias": dz.sum(axis=0),
        "bn.gamma": dgamma,
        "bn.beta": dbeta,
    }


# -- ground half -------------------------------------------------------------

def ground_forward(layer2: SageLayer, adj: Adjacency, h):
    ws, wn = layer2.effective()
    agg = adj.mean(h)
    logits = h @ ws + agg @ wn + layer2.bias
    return logits, {"h": h, "agg": agg, "adj": adj}


def ground_backward(layer2: SageLayer, cache, dlogits):
    """Returns (parameter grads, dLoss/dh) for the ground half."""
    ws, wn = layer2.effective()
    grads = {
        "layer2.w_self": (cache["h"].T @ dlogits) * layer2.mask_self,
        "layer2.w_neigh": (cache["agg"].T @ dlogits) * layer2.mask_neigh,
        "layer2.bias": dlogits.sum(axis=0),
    }
    dh = dlogits @ ws.T + cache["adj"].mean_t(dlogits @ wn.T)
    return grads, dh


def cross_entropy(logits, labels, node_mask):
    """Mean softmax cross-entropy over ``node_mask``; returns (loss, dlogits)."""
    node_mask = np.asarray(node_mask, dtype=bool)
    count = int(node_mask.sum())
    if count == 0:
        raise ModelError("node_mask selects no nodes")
    labels = np.asarray(labels)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    idx = np.flatnonzero(node_mask)
    loss = -logp[idx, labels[idx]].sum() / count
    dlogits = np.zeros_like(logits)
    probs = np.exp(logp[idx])
    probs[np.arange(len(idx)), labels[idx]] -= 1.0
    dlogits[idx] = probs / count
    return float(loss), dlogits


# -- whole model ---------------------------------------------------------------

def _drop_key(rng_seed):
    if isinstance(rng_seed, (tuple, list)):
        return tuple(rng_seed)
    return (int(rng_seed), 0, 0)


def forward(model: GnnModel, g: Graph, mode: str = "eval", rng_seed=0, adj: Adjacency | None = None):
    """Per-node logits and the activation cache for :func:`backward`."""
    if mode not in ("train", "eval"):
        raise ModelError(f"mode must be 'train' or 'eval', got {mode!r}")
    adj = adj if adj is not None else Adjacency.of(g)
    train = mode == "train"
    h, c1 = space_forward(model.layer1, model.bn, adj, g.features, train,
                          model.dropout_rate, _drop_key(rng_seed))
    logits, c2 = ground_forward(model.layer2, adj, h)
    return logits, {"space": c1, "ground": c2}


def backward(model: GnnModel, cache, dlogits):
    g2, dh = ground_backward(model.layer2, cache["ground"], dlogits)
    g1 = space_backward(model.layer1, model.bn, cache["space"], dh)
    return {**g1, **g2}


def loss_and_grads(model: GnnModel, g: Graph, labels, node_mask, mode="train", rng_seed=0,
                   adj: Adjacency | None = None):
    logits, cache = forward(model, g, mode, rng_seed, adj)
    loss, dlogits = cross_entropy(logits, labels, node_mask)
    return loss, backward(model, cache, dlogits)


def predict(model: GnnModel, g: Graph, adj: Adjacency | None = None) -> np.ndarray:
    logits, _ = forward(model, g, "eval", adj=adj)
    return logits.argmax(axis=1)


def accuracy(model: GnnModel, g: Graph, node_mask, labels=None, adj: Adjacency | None = None) -> float:
    labels = g.labels if labels is None else labels
    node_mask = np.asarray(node_mask, dtype=bool)
    if not node_mask.any():
        return float("nan")
    pred = predict(model, g, adj)
    return float((pred[node_mask] == labels[node_mask]).mean())


# -- Adam ----------------------------------------------------------------------

@dataclass
class AdamState:
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8


def adam_step(state: AdamState, params: dict, grads: dict, learning_rate: float, masks: dict | None = None):
    """One bias-corrected Adam update, in place on ``params``.

    Entries where ``masks`` is 0 are not moved.
    """
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    masks = masks or {}
    for name, p in params.items():
        gr = grads[name]
        if p.shape != gr.shape:
            raise ModelError(f"gradient shape {gr.shape} != parameter shape {p.shape} for {name}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1 - b1) * gr
        v = b2 * v + (1 - b2) * gr * gr
        state.first_moment[name] = m
        state.second_moment[name] = v
        step = learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps_hat)
        if name in masks:
            step = step * masks[name]
        p -= step.astype(p.dtype)
    return params, state


def train_epochs(model: GnnModel, g: Graph, train_mask, cfg: TrainConfig, epochs=None,
                 adam: AdamState | None = None, start_epoch: int = 0, labels=None):
    """Full-batch training; returns (losses, adam state). Dropout key = (seed, epoch, 0)."""
    labels = g.labels if labels is None else labels
    adam = adam or AdamState()
    adj = Adjacency.of(g)
    epochs = cfg.epochs if epochs is None else epochs
    losses = []
    for ep in range(start_epoch, start_epoch + epochs):
        loss, grads = loss_and_grads(model, g, labels, train_mask, "train", (cfg.seed, ep, 0), adj)
        adam_step(adam, model.params(), grads, cfg.learning_rate, model.masks())
        losses.append(loss)
    return losses, adam


# -- FLOPs and weight pruning --------------------------------------------------

def layer_flops(layer: SageLayer, num_nodes: int, num_active_edges: int) -> int:
    aggregation = 2 * num_active_edges * layer.in_dim + num_nodes * layer.in_dim
    nnz = int(np.count_nonzero(layer.mask_self)) + int(np.count_nonzero(layer.mask_neigh))
    transform = num_nodes * 2 * nnz + num_nodes * layer.out_dim
    return aggregation + transform


def count_flops(model: GnnModel, g: Graph) -> int:
    """Operation count of one forward pass.

    Per layer: one add per (active neighbour, input channel) plus one divide
    per (node, input channel) for the mean; a multiply-add (2 ops) per node
    per unmasked weight; one add per (node, output channel) for the bias.
    Batch norm, ReLU and dropout are not counted.
    """
    n, e = g.num_nodes, g.num_active_edges
    return layer_flops(model.layer1, n, e) + layer_flops(model.layer2, n, e)


def magnitude_prune_weights(model: GnnModel, flops_target_ratio: float, g: Graph,
                            reference_flops: int | None = None) -> GnnModel:
    """Mask the smallest-magnitude live weights until FLOPs <= ratio * reference.

    ``reference_flops`` defaults to the model's current count on ``g``. Ranking
    is global over both layers; ties go by (layer, self-before-neigh, row, col).
    Biases and batch-norm parameters are never masked. Masked weights are also
    zeroed in the raw parameter.
    """
    if not (0.0 < flops_target_ratio <= 1.0):
        raise ModelError(f"flops_target_ratio must lie in (0, 1], got {flops_target_ratio}")
    out = model.copy()
    ref = count_flops(model, g) if reference_flops is None else reference_flops
    target = flops_target_ratio * ref
    current = count_flops(out, g)
    if current <= target:
        return out
    n = g.num_nodes
    mats = [(out.layer1.w_self, out.layer1.mask_self), (out.layer1.w_neigh, out.layer1.mask_neigh),
            (out.layer2.w_self, out.layer2.mask_self), (out.layer2.w_neigh, out.layer2.mask_neigh)]
    mags, mat_id, flat = [], [], []
    for k, (w, m) in enumerate(mats):
        live = np.flatnonzero(m.ravel() != 0)
        mags.append(np.abs(w.ravel()[live]))
        mat_id.append(np.full(len(live), k))
        flat.append(live)
    mags = np.concatenate(mags)
    mat_id = np.concatenate(mat_id)
    flat = np.concatenate(flat)
    floor = current - 2 * n * len(mags)
    if n == 0 or floor > target:
        raise ModelError(f"FLOPs target {target:.0f} unreachable: fully masked model still needs {floor}")
    needed = math.ceil((current - target) / (2 * n))
    while current - 2 * n * (needed - 1) <= target and needed > 0:
        needed -= 1
    while current - 2 * n * needed > target:
        needed += 1
    # flat index within a matrix is row-major, so (mat, flat) orders by (layer, matrix, row, col)
    order = np.lexsort((flat, mat_id, mags))[:needed]
    for k, (w, m) in enumerate(mats):
        sel = flat[order[mat_id[order] == k]]
        m.ravel()[sel] = 0
        w.ravel()[sel] = 0
    return out


# -- checkpoints -----------------------------------------------------------------

_ARRAYS = [
    "layer1.w_self", "layer1.w_neigh", "layer1.bias", "layer1.mask_self", "layer1.mask_neigh",
    "layer2.w_self", "layer2.w_neigh", "layer2.bias", "layer2.mask_self", "layer2.mask_neigh",
    "bn.gamma", "bn.beta", "bn.running_mean", "bn.running_var",
]


def _get(model, name):
    part, attr = name.split(".")
    return getattr(getattr(model, part), attr)


def save_checkpoint(model: GnnModel, path):
    """Write an ``.npz`` archive: one array per entry of ``_ARRAYS`` plus a JSON ``meta`` string."""
    meta = {"format": "satsplit-gnn/1", "dropout_rate": model.dropout_rate,
            "bn_momentum": model.bn.momentum, "bn_eps": model.bn.eps,
            "dtype": str(model.dtype),
            "shapes": {k: list(_get(model, k).shape) for k in _ARRAYS}}
    arrays = {k: _get(model, k) for k in _ARRAYS}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> GnnModel:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        a = {k: z[k].copy() for k in _ARRAYS}
    for k, shape in meta["shapes"].items():
        if list(a[k].shape) != shape:
            raise ModelError(f"checkpoint shape mismatch for {k}")

    def layer(p):
        return SageLayer(a[f"{p}.w_self"], a[f"{p}.w_neigh"], a[f"{p}.bias"],
                         a[f"{p}.mask_self"], a[f"{p}.mask_neigh"])

    return GnnModel(layer("layer1"), layer("layer2"),
                    BatchNorm(a["bn.gamma"], a["bn.beta"], a["bn.running_mean"], a["bn.running_var"],
                              meta["bn_momentum"], meta["bn_eps"]),
                    meta["dropout_rate"])
