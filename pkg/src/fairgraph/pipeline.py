"""Three-phase training: pre-train the encoder/predictor on the prediction
loss, edit the graph with the resulting pseudo-labels, then train the full
objective on the edited graph with periodic pseudo-label and counterfactual
refreshes. Also the split protocol, epoch selection, and grid search.

Everything is deterministic given (config, data, seed): per-component seeds
are derived from the run seed by labeled hashing.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import __version__
from .autodiff import NeighborAggregator
from .data import NodeTable, standardize_features
from .errors import ConfigError, DivergenceError, UndefinedMetricError
from .graph import EditReport, Graph, NodeLabels, fair_edge_remove, skipped_edit_report
from .losses import (
    LossParts,
    LossWeights,
    inv_loss,
    pred_loss,
    sample_negative_edges,
    sc_loss,
    select_counterfactuals,
    suf_loss,
    env_loss,
    total_loss,
)
from .metrics import MetricsReport, evaluate_predictions
from .model import (
    EncoderParams,
    PredictorParams,
    encode,
    hard_labels,
    init_params,
    predict,
)
from .seeding import derive_seed

log = logging.getLogger(__name__)

MODES = ("HSCCAF", "CAF", "CAF+GE", "HSCCAF-GE")
EPOCH_CAP = 100

# which additions each mode enables on top of the base objective
MODE_FLAGS = {
    "HSCCAF": {"edit": True, "sc": True, "env": True},
    "CAF": {"edit": False, "sc": False, "env": False},
    "CAF+GE": {"edit": True, "sc": False, "env": False},
    "HSCCAF-GE": {"edit": False, "sc": True, "env": True},
}


@dataclass(frozen=True)
class TrainConfig:
    weights: LossWeights = LossWeights()
    lr: float = 0.01
    T_pre: int = 100
    T_train: int = 100
    refresh_period: int = 5
    seeds: tuple = (0,)
    splits: tuple = (0.5, 0.25, 0.25)
    mode: str = "HSCCAF"
    optimizer: str = "gd"
    hidden: int = 16
    d_c: int = 16
    dis_metric: str = "cosine"
    sc_labels: str = "labeled"
    reinit_phase2: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.refresh_period < 1:
            raise ConfigError("refresh_period must be >= 1")
        if not 1 <= self.T_train <= EPOCH_CAP:
            raise ConfigError(f"T_train must be in 1..{EPOCH_CAP}")
        if not 1 <= self.T_pre <= EPOCH_CAP:
            raise ConfigError(f"T_pre must be in 1..{EPOCH_CAP}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.optimizer not in ("gd", "adam"):
            raise ConfigError("optimizer must be 'gd' or 'adam'")
        if self.dis_metric not in ("cosine", "l2"):
            raise ConfigError("dis_metric must be 'cosine' or 'l2'")
        if self.sc_labels not in ("labeled", "pseudo"):
            raise ConfigError("sc_labels must be 'labeled' or 'pseudo'")
        if len(self.splits) != 3 or abs(sum(self.splits) - 1.0) > 1e-9 \
                or min(self.splits) <= 0:
            raise ConfigError("splits must be three positive fractions summing to 1")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "splits", tuple(float(f) for f in self.splits))

    def to_dict(self):
        return {"weights": self.weights.to_dict(), "lr": self.lr,
                "T_pre": self.T_pre, "T_train": self.T_train,
                "refresh_period": self.refresh_period,
                "seeds": list(self.seeds), "splits": list(self.splits),
                "mode": self.mode, "optimizer": self.optimizer,
                "hidden": self.hidden, "d_c": self.d_c,
                "dis_metric": self.dis_metric, "sc_labels": self.sc_labels,
                "reinit_phase2": self.reinit_phase2}

    @classmethod
    def from_dict(cls, doc):
        known = {"weights", "lr", "T_pre", "T_train", "refresh_period", "seeds",
                 "splits", "mode", "optimizer", "hidden", "d_c", "dis_metric",
                 "sc_labels", "reinit_phase2"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(doc)
        if "weights" in kwargs:
            try:
                kwargs["weights"] = LossWeights.from_dict(kwargs["weights"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad weights: {exc}") from exc
        if "seeds" in kwargs:
            kwargs["seeds"] = tuple(kwargs["seeds"])
        if "splits" in kwargs:
            kwargs["splits"] = tuple(kwargs["splits"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return TrainConfig.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


@dataclass(frozen=True)
class Splits:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def to_dict(self):
        return {"train": np.where(self.train)[0].tolist(),
                "val": np.where(self.val)[0].tolist(),
                "test": np.where(self.test)[0].tolist()}

    @classmethod
    def from_dict(cls, doc, n):
        masks = []
        for key in ("train", "val", "test"):
            m = np.zeros(n, dtype=bool)
            m[np.asarray(doc[key], dtype=np.int64)] = True
            masks.append(m)
        return cls(*masks)


def split_dataset(n, labeled_ids, fractions, seed) -> Splits:
    """Shuffle the labeled ids and cut train/val/test masks; unlabeled nodes
    stay outside every mask but remain in the graph."""
    labeled_ids = np.asarray(labeled_ids, dtype=np.int64)
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)
    order = labeled_ids[rng.permutation(len(labeled_ids))]
    n_train = int(round(fractions[0] * len(order)))
    n_val = int(round(fractions[1] * len(order)))
    groups = (order[:n_train], order[n_train:n_train + n_val],
              order[n_train + n_val:])
    if any(len(g) == 0 for g in groups):
        raise ConfigError("a split came out empty; adjust fractions or labels")
    masks = []
    for g in groups:
        m = np.zeros(n, dtype=bool)
        m[g] = True
        masks.append(m)
    return Splits(*masks)


# ---------------------------------------------------------------------------
# optimizers

class _GradientDescent:
    def __init__(self, params, lr):
        self.params = params
        self.lr = lr

    def step(self):
        for p in self.params:
            p.value = p.value - self.lr * p.grad


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / (1 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1 - self.beta2 ** self.t)
            p.value = p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _make_optimizer(name, params, lr):
    return _Adam(params, lr) if name == "adam" else _GradientDescent(params, lr)


# ---------------------------------------------------------------------------
# phases

@dataclass
class PretrainResult:
    encoder: EncoderParams
    predictor: PredictorParams
    pseudo_labels: np.ndarray
    losses: list


def pretrain(graph: Graph, x, labels: NodeLabels, train_mask, cfg: TrainConfig,
             seed) -> PretrainResult:
    """Minimize the prediction loss alone, then read pseudo-labels off the
    trained predictor (ground truth retained where known)."""
    if not np.asarray(train_mask, dtype=bool).any():
        raise UndefinedMetricError("pre-training needs a nonempty training mask")
    agg = NeighborAggregator(graph)
    enc, pred = init_params(x.shape[1], cfg.hidden, cfg.d_c,
                            derive_seed(seed, "init"))
    params = enc.tensors() + pred.tensors()
    opt = _make_optimizer(cfg.optimizer, params, cfg.lr)
    y = labels.class_label
    losses = []
    for epoch in range(1, cfg.T_pre + 1):
        latent = encode(enc, agg, x)
        probs = predict(pred, latent.c)
        loss = pred_loss(probs, np.where(y >= 0, y, 0), train_mask)
        if not np.isfinite(loss.value):
            raise DivergenceError("pre-training loss became non-finite",
                                  epoch=epoch, phase="pretrain")
        ad.grad(loss, params)
        opt.step()
        losses.append(float(loss.value))
    latent = encode(enc, agg, x)
    probs = predict(pred, latent.c)
    pseudo = hard_labels(probs)
    merged = np.where(y >= 0, y, pseudo)
    return PretrainResult(encoder=enc, predictor=pred, pseudo_labels=merged,
                          losses=losses)


def run_phase1(graph: Graph, labels: NodeLabels, mode):
    """Fairness-aware edge removal, or a skipped report for modes without it."""
    if MODE_FLAGS[mode]["edit"]:
        return fair_edge_remove(graph, labels)
    return graph, skipped_edit_report(graph, labels)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    parts: dict
    val_score: float | None

    def to_dict(self):
        return {"epoch": self.epoch, "loss": self.loss, "parts": self.parts,
                "val_score": self.val_score}


@dataclass
class RunResult:
    mode: str
    seed: int
    split_id: int
    epochs: list
    best_epoch: int
    val_report: MetricsReport
    test_report: MetricsReport
    edit_report: EditReport
    encoder: EncoderParams
    predictor: PredictorParams
    pseudo_labels: np.ndarray
    splits: Splits
    config_hash: str
    optimizer: str
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None

    def to_dict(self):
        return {
            "library_version": __version__,
            "mode": self.mode,
            "seed": self.seed,
            "split_id": self.split_id,
            "config_hash": self.config_hash,
            "optimizer": self.optimizer,
            "best_epoch": self.best_epoch,
            "val": self.val_report.to_dict(),
            "test": self.test_report.to_dict(),
            "edit": self.edit_report.to_dict(),
            "epochs": [e.to_dict() for e in self.epochs],
            "splits": self.splits.to_dict(),
        }


def train_full(graph: Graph, x, labels: NodeLabels, splits: Splits,
               enc: EncoderParams, pred: PredictorParams, cfg: TrainConfig,
               seed, edit_report: EditReport,
               feature_stats=None) -> RunResult:
    """Phase 2: full objective on the edited graph.

    Pseudo-labels and counterfactuals refresh every refresh_period epochs
    (plus once before the first epoch); the edit itself stays frozen. The
    best epoch maximizes the validation selection score, earliest on ties;
    epochs with undefined validation metrics are disqualified.
    """
    flags = MODE_FLAGS[cfg.mode]
    w = cfg.weights
    use_inv = w.alpha > 0
    use_suf = w.beta > 0
    use_sc = flags["sc"] and w.omega > 0
    use_env = flags["env"] and w.eta > 0

    agg = NeighborAggregator(graph)
    params = enc.tensors() + pred.tensors()
    opt = _make_optimizer(cfg.optimizer, params, cfg.lr)
    y_true = labels.class_label
    y_train = np.where(y_true >= 0, y_true, 0)
    sens = labels.sensitive

    pos_edges = graph.edges
    neg_edges = sample_negative_edges(graph, graph.m,
                                      derive_seed(seed, "negative-edges")) \
        if use_suf else ()

    pseudo = labels.pseudo_label.copy()
    cf = None
    warned_empty = False

    def refresh(latent_values):
        nonlocal pseudo, cf, warned_empty
        probs_now = predict(pred, ad.Tensor(latent_values[:, :enc.d_c]))
        pseudo = np.where(y_true >= 0, y_true, hard_labels(probs_now))
        if use_inv:
            cf = select_counterfactuals(latent_values, pseudo, sens, w.k)
            if cf.empty_e == graph.n and cf.empty_c == graph.n and not warned_empty:
                log.warning("no counterfactual candidates exist; invariance "
                            "loss reduces to its orthogonality term")
                warned_empty = True

    refresh(encode(enc, agg, x).h.value)

    records = []
    best = None  # (score, epoch, param values, val_report)
    for epoch in range(1, cfg.T_train + 1):
        if epoch % cfg.refresh_period == 0:
            refresh(encode(enc, agg, x).h.value)
        latent = encode(enc, agg, x)
        probs = predict(pred, latent.c)
        parts = LossParts(pred=pred_loss(probs, y_train, splits.train))
        if use_inv:
            parts.inv = inv_loss(latent.c, latent.e, cf, w.gamma, cfg.dis_metric)
        if use_suf:
            parts.suf = suf_loss(latent.h, pos_edges, neg_edges)
        if use_sc:
            if cfg.sc_labels == "labeled":
                parts.sc = sc_loss(latent.c, y_train, labels.labeled_mask(), w.kappa)
            else:
                parts.sc = sc_loss(latent.c, pseudo, np.ones(graph.n, bool), w.kappa)
        if use_env:
            parts.env = env_loss(latent.e, sens, w.k_prime)
        loss = total_loss(parts, w)
        if not np.isfinite(loss.value):
            raise DivergenceError("training loss became non-finite",
                                  epoch=epoch, phase="train")
        ad.grad(loss, params)
        opt.step()

        eval_latent = encode(enc, agg, x)
        eval_probs = predict(pred, eval_latent.c).value
        try:
            val_report = evaluate_predictions(eval_probs, y_true, sens,
                                              mask=splits.val, seed=seed)
            val_score = val_report.score
        except UndefinedMetricError:
            val_report, val_score = None, None
        records.append(EpochRecord(epoch=epoch, loss=float(loss.value),
                                   parts=parts.values(), val_score=val_score))
        if val_score is not None and (best is None or val_score > best[0]):
            snapshot = [p.value.copy() for p in params]
            best = (val_score, epoch, snapshot, val_report)

    if best is None:
        raise UndefinedMetricError(
            "no epoch produced defined validation metrics; split too small")

    # restore the best-epoch parameters and evaluate on the test mask
    for p, v in zip(params, best[2]):
        p.value = v
    test_latent = encode(enc, agg, x)
    test_probs = predict(pred, test_latent.c).value
    test_report = evaluate_predictions(test_probs, y_true, sens,
                                       mask=splits.test, seed=seed)

    mean, std = (None, None) if feature_stats is None else feature_stats
    return RunResult(mode=cfg.mode, seed=seed, split_id=0, epochs=records,
                     best_epoch=best[1], val_report=best[3],
                     test_report=test_report, edit_report=edit_report,
                     encoder=enc, predictor=pred, pseudo_labels=pseudo,
                     splits=splits, config_hash=cfg.config_hash(),
                     optimizer=cfg.optimizer, feature_mean=mean,
                     feature_std=std)


def run_single(graph: Graph, table: NodeTable, cfg: TrainConfig, seed,
               split_id=0) -> RunResult:
    """One complete run: split, standardize, pre-train, edit, train."""
    labels = table.labels
    labeled_ids = np.where(labels.labeled_mask())[0]
    splits = split_dataset(table.n, labeled_ids, cfg.splits,
                           derive_seed(seed, "split"))
    x, mean, std = standardize_features(table.features, splits.train)
    pre = pretrain(graph, x, labels, splits.train, cfg, seed)
    labels_p = labels.with_pseudo(pre.pseudo_labels)
    edited, edit_report = run_phase1(graph, labels_p, cfg.mode)
    if cfg.reinit_phase2:
        enc, pred = init_params(x.shape[1], cfg.hidden, cfg.d_c,
                                derive_seed(seed, "init-phase2"))
    else:
        enc, pred = pre.encoder, pre.predictor
    result = train_full(edited, x, labels_p, splits, enc, pred, cfg, seed,
                        edit_report, feature_stats=(mean, std))
    result.split_id = split_id
    return result


def _thread_count():
    raw = os.environ.get("FAIRGRAPH_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_experiment(graph: Graph, table: NodeTable, cfg: TrainConfig):
    """All (seed, split) runs of a config; returns (results, aggregate)."""
    jobs = list(enumerate(cfg.seeds))
    workers = min(_thread_count(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda job: run_single(graph, table, cfg, job[1], split_id=job[0]),
                jobs))
    else:
        results = [run_single(graph, table, cfg, s, split_id=i) for i, s in jobs]
    return results, aggregate_results(results)


def aggregate_results(results):
    """Mean and standard deviation of each test metric over runs."""
    agg = {"n_runs": len(results)}
    for name in ("bacc", "auc", "f1", "delta_sp", "delta_eo", "score"):
        values = np.array([getattr(r.test_report, name) for r in results])
        agg[name] = {"mean": float(values.mean()),
                     "std": float(values.std(ddof=0))}
    return agg


@dataclass
class GridCell:
    params: dict
    mean_val_score: float
    std_val_score: float
    aggregate: dict

    def to_dict(self):
        return {"params": self.params, "mean_val_score": self.mean_val_score,
                "std_val_score": self.std_val_score, "aggregate": self.aggregate}


DEFAULT_GRID = {
    "K": [2, 5, 10],
    "K_prime": [2, 5, 10],
    "alpha": [0.2, 0.5, 0.9, 5, 10],
    "beta": [0.5, 1],
    "gamma": [0.02, 0.1, 1],
    "omega": [0.03, 0.09, 0.3, 0.7, 1],
    "eta": [0.06, 0.07, 0.08, 0.09, 0.1, 0.3, 0.8],
}

_WEIGHT_KEYS = {"alpha": "alpha", "beta": "beta", "gamma": "gamma",
                "omega": "omega", "eta": "eta", "K": "k", "K_prime": "k_prime",
                "kappa": "kappa"}


def grid_search(graph: Graph, table: NodeTable, base_cfg: TrainConfig, grid):
    """Evaluate every grid cell across the config's seeds and rank by mean
    best-epoch validation score (descending; ties by cell key)."""
    for key in grid:
        if key not in _WEIGHT_KEYS:
            raise ConfigError(f"grid key {key!r} not tunable "
                              f"(expected {sorted(_WEIGHT_KEYS)})")
    keys = sorted(grid)
    cells = [dict(zip(keys, combo))
             for combo in itertools.product(*(grid[k] for k in keys))]

    def eval_cell(cell):
        weights = replace(base_cfg.weights,
                          **{_WEIGHT_KEYS[k]: v for k, v in cell.items()})
        cfg = replace(base_cfg, weights=weights)
        results, agg = run_experiment(graph, table, cfg)
        scores = np.array([r.val_report.score for r in results])
        return GridCell(params=cell, mean_val_score=float(scores.mean()),
                        std_val_score=float(scores.std(ddof=0)), aggregate=agg)

    workers = min(_thread_count(), len(cells))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(eval_cell, cells))
    else:
        out = [eval_cell(c) for c in cells]
    out.sort(key=lambda c: (-c.mean_val_score, json.dumps(c.params, sort_keys=True)))
    return out
