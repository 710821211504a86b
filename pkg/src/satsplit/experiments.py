"""Experiment runners behind the CLI.

Each runner takes an :class:`ExperimentConfig`, returns a list of row
dicts and (if ``output_dir`` is set) writes ``<experiment>.csv`` plus a
``manifest.json`` recording the resolved config and environment.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, gnn, split
from ._accel import NUMBA_ENABLED
from .graph import Graph, load_edge_list, sbm_generate
from .privacy import DEFAULT_DELTA, PrivacyParams, calibration_table, write_calibration_csv
from .prune_train import PruneRoundConfig, iterative_prune_train

log = logging.getLogger(__name__)

EXPERIMENTS = ("noise_sweep", "dropping_sweep", "flops_prune", "comm_compare", "split_train",
               "fl_baseline", "dp_calibrate")

DEFAULT_SWEEPS = {
    "noise_sweep": [1.0, 0.8, 0.4, 0.2, 0.1],
    "dp_calibrate": [1.0, 0.8, 0.4, 0.2, 0.1],
    "dropping_sweep": [0.05, 0.10, 0.20, 0.30],
    "flops_prune": [0.5],
    "comm_compare": [2, 4, 8, 16],
    "fl_baseline": [2, 4, 8, 16],
    "split_train": [],
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str = "split_train"
    dataset: dict = field(default_factory=lambda: {
        "kind": "sbm", "block_sizes": [100, 100, 100], "p_in": 0.3, "p_out": 0.02, "feature_dim": 16})
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    sweep: list | None = None
    output_dir: str | None = None
    train_frac: float = 0.6
    train: dict = field(default_factory=lambda: {
        "learning_rate": 0.01, "epochs": 200, "dropout_rate": 0.3, "hidden_dim": 32, "precision": "float64"})
    topology: dict = field(default_factory=lambda: {
        "satellites": 2, "space_stations": 1, "bandwidth": 1e6, "latency": 0.0, "partition": "block"})
    privacy: dict = field(default_factory=lambda: {
        "enabled": False, "epsilon_base": 8.0, "delta": DEFAULT_DELTA, "clip_bound": 1.0})
    prune: dict = field(default_factory=lambda: {"mode": "ratio", "parameter": 0.0,
                                                 "score_mode": "standard_harmonic"})
    prune_rounds: dict = field(default_factory=lambda: {
        "p_g": 0.05, "rounds": 2, "retrain_epochs": 50, "quota_base": "original"})
    flops_target: float = 0.5
    fl: dict = field(default_factory=dict)

    def __post_init__(self):
        self.experiment = self.experiment.replace("-", "_")
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.sweep is None:
            self.sweep = list(DEFAULT_SWEEPS[self.experiment])
        if self.experiment not in ("split_train",) and not self.sweep:
            raise ConfigError(f"{self.experiment} needs a nonempty sweep")
        if isinstance(self.dataset, str):
            self.dataset = _parse_dataset(self.dataset)

    @classmethod
    def load(cls, path=None, experiment=None, **overrides):
        """Defaults, then the JSON file at ``path``, then ``overrides``.

        Nested sections (train, topology, privacy, ...) are merged key by key.
        """
        base = cls(experiment=experiment or "split_train")
        data = {}
        if path is not None:
            try:
                data = json.loads(Path(path).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            if not isinstance(data, dict):
                raise ConfigError("config file must hold a JSON object")
        data.update({k: v for k, v in overrides.items() if v is not None})
        if experiment is not None:
            data["experiment"] = experiment
        merged = asdict(base)
        merged["sweep"] = None
        for k, v in data.items():
            if k not in merged:
                raise ConfigError(f"unknown config key {k!r}")
            if isinstance(merged[k], dict) and isinstance(v, dict) and k != "dataset":
                unknown = set(v) - set(merged[k]) if k not in ("fl",) else set()
                if unknown:
                    raise ConfigError(f"unknown keys in {k}: {sorted(unknown)}")
                merged[k] = {**merged[k], **v}
            else:
                merged[k] = v
        try:
            return cls(**merged)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def _parse_dataset(text: str) -> dict:
    if text == "sbm":
        return ExperimentConfig.__dataclass_fields__["dataset"].default_factory()
    if text.startswith("edgelist:"):
        return {"kind": "edgelist", "path": text.split(":", 1)[1]}
    raise ConfigError(f"dataset must be 'sbm' or 'edgelist:<path>', got {text!r}")


# -- helpers -------------------------------------------------------------------

def load_dataset(cfg: ExperimentConfig, seed: int) -> Graph:
    ds = cfg.dataset
    kind = ds.get("kind", "sbm")
    if kind == "sbm":
        return sbm_generate(ds.get("block_sizes", [100, 100, 100]), ds.get("p_in", 0.3), ds.get("p_out", 0.02),
                            ds.get("feature_dim", 16), ds.get("seed", seed), ds.get("feature_noise", 1.0))
    if kind == "edgelist":
        g = load_edge_list(ds["path"], ds.get("features"), ds.get("labels"))
        if g.labels is None:
            raise ConfigError("edge-list datasets need a label file for training experiments")
        return g
    raise ConfigError(f"unknown dataset kind {kind!r}")


def split_masks(num_nodes, train_frac, seed):
    """Random train/test node masks, disjoint, covering every node."""
    perm = np.random.default_rng([seed, 3]).permutation(num_nodes)
    k = int(round(train_frac * num_nodes))
    train = np.zeros(num_nodes, dtype=bool)
    train[perm[:k]] = True
    return train, ~train


def train_config(cfg: ExperimentConfig, seed: int) -> gnn.TrainConfig:
    return gnn.TrainConfig(seed=seed, **cfg.train)


def _split_config(cfg, seed, privacy=None, prune=None) -> split.SplitConfig:
    tc = train_config(cfg, seed)
    return split.SplitConfig(rounds=tc.epochs, train=tc, privacy=privacy, prune=prune)


def _privacy(cfg, budget_scale=1.0):
    p = cfg.privacy
    return PrivacyParams.calibrated(budget_scale * p["epsilon_base"], p["delta"], p["clip_bound"])


def _prune_sel(cfg, parameter=None):
    p = dict(cfg.prune)
    if parameter is not None:
        p["parameter"] = parameter
    return split.PruneSelectionConfig(**p)


def write_rows(rows, path, columns=None):
    columns = columns or list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items() if k in columns})


def write_manifest(cfg: ExperimentConfig, outputs, path):
    manifest = {
        "experiment": cfg.experiment,
        "config": asdict(cfg),
        "seeds": list(cfg.seeds),
        "satsplit_version": __version__,
        "numba_enabled": NUMBA_ENABLED,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "outputs": [str(Path(o).name) for o in outputs],
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")


def _finish(cfg, rows, columns, extra_outputs=()):
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{cfg.experiment}.csv"
        write_rows(rows, csv_path, columns)
        write_manifest(cfg, [csv_path, *extra_outputs], out / "manifest.json")
    return rows


def mean_by(rows, key, value):
    groups: dict = {}
    for r in rows:
        groups.setdefault(r[key], []).append(r[value])
    return {k: float(np.mean(v)) for k, v in groups.items()}


# -- experiments ------------------------------------------------------------------

NOISE_COLUMNS = ["budget_scale", "seed", "epsilon", "delta", "sigma", "accuracy"]


def run_noise_sweep(cfg: ExperimentConfig):
    """Split training under DP at epsilon = budget_scale * epsilon_base."""
    topo = split.Topology.from_dict(cfg.topology)
    rows = []
    for lam in cfg.sweep:
        params = _privacy(cfg, lam)
        for seed in cfg.seeds:
            g = load_dataset(cfg, seed)
            tr, te = split_masks(g.num_nodes, cfg.train_frac, seed)
            res = split.run_split_training(topo, g, _split_config(cfg, seed, params, _prune_sel(cfg)), seed, tr, te)
            rows.append({"budget_scale": lam, "seed": seed, "epsilon": params.epsilon, "delta": params.delta,
                         "sigma": params.sigma, "accuracy": res.final_full_test_acc})
            log.info("noise_sweep lambda=%s seed=%s sigma=%.4f acc=%.4f", lam, seed, params.sigma,
                     res.final_full_test_acc)
    return _finish(cfg, rows, NOISE_COLUMNS)


DROP_COLUMNS = ["dropping_ratio", "seed", "nodes_kept", "accuracy", "survivor_accuracy"]


def run_dropping_sweep(cfg: ExperimentConfig):
    """Satellite-side node pruning at each dropping ratio, then split training.

    ``accuracy`` is measured on every test node of the unpruned (but
    DP-released) shards so rows with different ratios share one test set;
    ``survivor_accuracy`` only counts test nodes that survived pruning.
    """
    topo = split.Topology.from_dict(cfg.topology)
    privacy = _privacy(cfg) if cfg.privacy.get("enabled") else None
    rows = []
    for dr in cfg.sweep:
        for seed in cfg.seeds:
            g = load_dataset(cfg, seed)
            tr, te = split_masks(g.num_nodes, cfg.train_frac, seed)
            res = split.run_split_training(topo, g, _split_config(cfg, seed, privacy, _prune_sel(cfg, dr)),
                                           seed, tr, te)
            kept = sum(n.cache["graph"].num_nodes for n in res.nodes.values() if n.tier == split.SPACE_STATION)
            rows.append({"dropping_ratio": dr, "seed": seed, "nodes_kept": kept,
                         "accuracy": res.final_full_test_acc, "survivor_accuracy": res.final_test_acc})
            log.info("dropping_sweep dr=%s seed=%s acc=%.4f", dr, seed, res.final_full_test_acc)
    return _finish(cfg, rows, DROP_COLUMNS)


FLOPS_COLUMNS = ["flops_target", "seed", "accuracy_dense", "accuracy_pruned", "flops_dense", "flops_pruned",
                 "flops_ratio", "edges_dense", "edges_pruned"]


def run_flops_prune(cfg: ExperimentConfig):
    """Dense baseline vs graph-sparsified + magnitude-pruned model at each FLOPs target."""
    rows = []
    pr = PruneRoundConfig(**cfg.prune_rounds, score_mode=cfg.prune.get("score_mode", "standard_harmonic"))
    for target in cfg.sweep:
        for seed in cfg.seeds:
            g = load_dataset(cfg, seed)
            g.features = g.features.astype(cfg.train["precision"])
            tr, te = split_masks(g.num_nodes, cfg.train_frac, seed)
            tc = train_config(cfg, seed)
            init = gnn.init_model(g.feature_dim, tc.hidden_dim, g.num_classes, seed, tc.dropout_rate,
                                  np.dtype(tc.precision))
            dense = init.copy()
            gnn.train_epochs(dense, g, tr, tc)
            flops_dense = gnn.count_flops(dense, g)
            acc_dense = gnn.accuracy(dense, g, te)
            pruned, pg, _ = iterative_prune_train(g, init.copy(), pr, tc, tr, te, flops_target=target)
            flops_pruned = gnn.count_flops(pruned, pg)
            acc_pruned = gnn.accuracy(pruned, pg, te)
            rows.append({"flops_target": target, "seed": seed, "accuracy_dense": acc_dense,
                         "accuracy_pruned": acc_pruned, "flops_dense": flops_dense, "flops_pruned": flops_pruned,
                         "flops_ratio": flops_pruned / flops_dense, "edges_dense": g.num_active_edges,
                         "edges_pruned": pg.num_active_edges})
            log.info("flops_prune target=%s seed=%s dense=%.4f pruned=%.4f ratio=%.4f", target, seed,
                     acc_dense, acc_pruned, flops_pruned / flops_dense)
    return _finish(cfg, rows, FLOPS_COLUMNS)


COMM_COLUMNS = ["seed", "clients", "fl_bytes", "sl_bytes", "ratio"]


def run_comm_compare(cfg: ExperimentConfig):
    """FL vs SL bytes for each client count (client = satellite + its own space station)."""
    rows = []
    for seed in cfg.seeds:
        g = load_dataset(cfg, seed)
        tr, te = split_masks(g.num_nodes, cfg.train_frac, seed)
        scfg = _split_config(cfg, seed, None, _prune_sel(cfg))
        sl, fl = {}, {}
        for k in cfg.sweep:
            k = int(k)
            topo = split.Topology.from_dict({**cfg.topology, "satellites": k, "space_stations": k})
            res = split.run_split_training(topo, g, scfg, seed, tr, te)
            sl[k] = res.sl_bytes_total
            fl[k] = split.run_fl_baseline(split.FlBaselineConfig(k, scfg.rounds, res.num_params))["total_bytes"]
        for r in split.comm_cost_report(sl, fl):
            rows.append({"seed": seed, **r})
    return _finish(cfg, rows, COMM_COLUMNS)


SPLIT_COLUMNS = ["seed", "rounds", "final_loss", "train_acc", "test_acc", "sl_bytes_total", "wall_time",
                 "sequential_time"]


def run_split_train(cfg: ExperimentConfig):
    """One split run per seed; per-round metrics go to ``split_train_seed<N>.csv``."""
    topo = split.Topology.from_dict(cfg.topology)
    privacy = _privacy(cfg) if cfg.privacy.get("enabled") else None
    rows, extra = [], []
    for seed in cfg.seeds:
        g = load_dataset(cfg, seed)
        tr, te = split_masks(g.num_nodes, cfg.train_frac, seed)
        res = split.run_split_training(topo, g, _split_config(cfg, seed, privacy, _prune_sel(cfg)), seed, tr, te)
        last = res.rows[-1]
        rows.append({"seed": seed, "rounds": len(res.rows), "final_loss": last["loss"],
                     "train_acc": last["train_acc"], "test_acc": last["test_acc"],
                     "sl_bytes_total": res.sl_bytes_total, "wall_time": res.wall_time,
                     "sequential_time": res.sequential_time})
        if cfg.output_dir:
            Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
            p = Path(cfg.output_dir) / f"split_train_seed{seed}.csv"
            res.to_csv(p)
            extra.append(p)
    return _finish(cfg, rows, SPLIT_COLUMNS, extra)


FL_COLUMNS = ["clients", "rounds", "params_per_model", "bytes_per_param", "total_bytes"]


def run_fl_baseline_sweep(cfg: ExperimentConfig):
    ds = cfg.dataset
    params = cfg.fl.get("params_per_model")
    if params is None:
        classes = len(ds.get("block_sizes", [])) or cfg.fl.get("num_classes", 2)
        model = gnn.init_model(ds.get("feature_dim", 16), cfg.train["hidden_dim"], classes, 0)
        params = model.num_params()
    rounds = cfg.fl.get("rounds", cfg.train["epochs"])
    bpp = cfg.fl.get("bytes_per_param", 4)
    rows = []
    for k in cfg.sweep:
        res = split.run_fl_baseline(split.FlBaselineConfig(int(k), rounds, params, bpp))
        rows.append({"clients": int(k), "rounds": rounds, "params_per_model": params, "bytes_per_param": bpp,
                     "total_bytes": res["total_bytes"]})
    return _finish(cfg, rows, FL_COLUMNS)


CALIBRATION_COLUMNS = ["budget_scale", "epsilon", "delta", "sensitivity", "sigma"]


def run_dp_calibrate(cfg: ExperimentConfig):
    p = cfg.privacy
    rows = calibration_table(cfg.sweep, p["epsilon_base"], p["delta"], p["clip_bound"])
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_calibration_csv(rows, out / "dp_calibrate.csv")
        write_manifest(cfg, [out / "dp_calibrate.csv"], out / "manifest.json")
    return rows


RUNNERS = {
    "noise_sweep": run_noise_sweep,
    "dropping_sweep": run_dropping_sweep,
    "flops_prune": run_flops_prune,
    "comm_compare": run_comm_compare,
    "split_train": run_split_train,
    "fl_baseline": run_fl_baseline_sweep,
    "dp_calibrate": run_dp_calibrate,
}


def run(cfg: ExperimentConfig):
    return RUNNERS[cfg.experiment](copy.deepcopy(cfg))
