"""Dataset ingestion, a planted-partition synthetic generator with
controllable homophily, and embedding export.

The on-disk dataset layout is three files in one directory:
  features.csv  header row; one row per node
  edges.txt     two integer columns, zero-based ids, one undirected edge/line
  meta.json     {"label_col", "sensitive_col", "positive_value",
                 "sensitive_positive_value"} plus optional "feature_cols"
                 and "drop_cols"
Rows with a missing label become unlabeled nodes; the sensitive column must
be binary after mapping and defined everywhere.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    DatasetParseError,
    InfeasibleError,
    MissingColumnError,
    NonBinarySensitiveError,
)
from .graph import UNKNOWN, Graph, NodeLabels, load_edge_list

BLOCK_ORDER = ((0, 0), (0, 1), (1, 0), (1, 1))  # (y, s) node layout


@dataclass(frozen=True)
class NodeTable:
    """Per-node features plus labels; features are raw (not standardized)."""

    features: np.ndarray
    labels: NodeLabels
    feature_names: tuple

    def __post_init__(self):
        arr = np.asarray(self.features, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "features", arr)

    @property
    def n(self):
        return self.features.shape[0]


@dataclass(frozen=True)
class DatasetSpec:
    features_path: str
    edges_path: str
    meta_path: str

    @classmethod
    def from_dir(cls, path):
        return cls(features_path=os.path.join(path, "features.csv"),
                   edges_path=os.path.join(path, "edges.txt"),
                   meta_path=os.path.join(path, "meta.json"))


def resolve_dataset(name_or_path):
    """A dataset argument is either a directory or a name under the data
    root ($FAIRGRAPH_DATA, falling back to ./datasets)."""
    if os.path.isdir(name_or_path):
        return DatasetSpec.from_dir(name_or_path)
    root = os.environ.get("FAIRGRAPH_DATA", "datasets")
    candidate = os.path.join(root, name_or_path)
    if os.path.isdir(candidate):
        return DatasetSpec.from_dir(candidate)
    raise DatasetParseError(
        f"dataset {name_or_path!r} not found (looked in {candidate!r}; "
        f"set FAIRGRAPH_DATA or pass a directory)")


def _is_missing(raw):
    if raw is None:
        return True
    text = str(raw).strip()
    return text == "" or text.lower() in ("nan", "none", "na")


def _map_binary(raw, positive_value):
    return 1 if str(raw).strip() == str(positive_value) else 0


def load_dataset(spec: DatasetSpec):
    """Returns (Graph, NodeTable). Features stay raw; standardize per split
    with `standardize_features` once the training mask is known."""
    try:
        with open(spec.meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetParseError(f"cannot read meta file {spec.meta_path}: {exc}") from exc
    for key in ("label_col", "sensitive_col", "positive_value",
                "sensitive_positive_value"):
        if key not in meta:
            raise DatasetParseError(f"meta file missing key {key!r}")

    try:
        with open(spec.features_path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [row for row in reader if row]
    except (OSError, StopIteration, csv.Error) as exc:
        raise DatasetParseError(f"cannot read {spec.features_path}: {exc}") from exc
    header = [h.strip() for h in header]
    for col in (meta["label_col"], meta["sensitive_col"]):
        if col not in header:
            raise MissingColumnError(f"column {col!r} not in {header}")
    col_index = {name: i for i, name in enumerate(header)}

    drop = set(meta.get("drop_cols", []))
    if "feature_cols" in meta:
        feature_cols = list(meta["feature_cols"])
        missing = [c for c in feature_cols if c not in col_index]
        if missing:
            raise MissingColumnError(f"feature columns {missing} not in header")
    else:
        feature_cols = [c for c in header if c != meta["label_col"] and c not in drop]

    n = len(rows)
    labels_raw = np.full(n, UNKNOWN, dtype=np.int64)
    sensitive = np.zeros(n, dtype=np.int64)
    features = np.empty((n, len(feature_cols)), dtype=np.float64)
    sens_values = set()
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DatasetParseError(
                f"{spec.features_path}: row {i + 2} has {len(row)} fields, "
                f"expected {len(header)}")
        raw_label = row[col_index[meta["label_col"]]]
        if not _is_missing(raw_label):
            labels_raw[i] = _map_binary(raw_label, meta["positive_value"])
        raw_sens = row[col_index[meta["sensitive_col"]]]
        if _is_missing(raw_sens):
            raise NonBinarySensitiveError(
                f"row {i + 2}: sensitive attribute must be defined for every node")
        sens_values.add(str(raw_sens).strip())
        sensitive[i] = _map_binary(raw_sens, meta["sensitive_positive_value"])
        for j, col in enumerate(feature_cols):
            if col == meta["sensitive_col"]:
                # keep the sensitive attribute as its mapped 0/1 encoding so
                # categorical values ('Male'/'Female') load without fuss
                features[i, j] = float(sensitive[i])
                continue
            raw = row[col_index[col]]
            try:
                features[i, j] = 0.0 if _is_missing(raw) else float(raw)
            except ValueError as exc:
                raise DatasetParseError(
                    f"row {i + 2}, column {col!r}: not numeric: {raw!r}") from exc
    if len(sens_values) > 2:
        raise NonBinarySensitiveError(
            f"sensitive column {meta['sensitive_col']!r} has "
            f"{len(sens_values)} distinct values; mapping one of them to 1 "
            "would silently merge the rest")

    try:
        pairs = load_edge_list(spec.edges_path)
    except (OSError, ValueError) as exc:
        raise DatasetParseError(f"cannot read {spec.edges_path}: {exc}") from exc
    try:
        graph, _ = Graph.from_edges_dedup(n, pairs)
    except ValueError as exc:
        raise DatasetParseError(f"bad edge list: {exc}") from exc

    table = NodeTable(features=features,
                      labels=NodeLabels.create(sensitive=sensitive,
                                               class_label=labels_raw),
                      feature_names=tuple(feature_cols))
    return graph, table


def standardize_features(features, train_mask):
    """Per-column z-score with statistics from the training rows only.

    Returns (standardized, mean, std); constant columns keep std 1 so they
    become zeros rather than NaNs.
    """
    train_mask = np.asarray(train_mask, dtype=bool)
    if not train_mask.any():
        raise ValueError("empty training mask")
    x = np.asarray(features, dtype=np.float64)
    mean = x[train_mask].mean(axis=0)
    std = x[train_mask].std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (x - mean) / std, mean, std


# ---------------------------------------------------------------------------
# synthetic generator

@dataclass(frozen=True)
class SynthConfig:
    n: int
    target_hr_c: float
    target_hr_s: float
    mean_degree: float = 6.0
    class_balance: float = 0.5
    sensitive_balance: float = 0.5
    feature_dim: int = 8
    class_signal: float = 1.0
    sensitive_signal: float = 0.5
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.target_hr_c < 1.0 and 0.0 < self.target_hr_s < 1.0):
            raise InfeasibleError("homophily targets must lie strictly inside (0, 1)")
        if self.n < 8:
            raise InfeasibleError("need at least 8 nodes")
        edge_plan(self)  # raises if the targets are unreachable


def block_sizes(cfg: SynthConfig):
    """Node counts per (y, s) block, in BLOCK_ORDER."""
    n1 = int(round(cfg.n * cfg.class_balance))
    n0 = cfg.n - n1
    n01 = int(round(n0 * cfg.sensitive_balance))
    n11 = int(round(n1 * cfg.sensitive_balance))
    return {(0, 0): n0 - n01, (0, 1): n01, (1, 0): n1 - n11, (1, 1): n11}


def _pair_category(b1, b2):
    same_y = b1[0] == b2[0]
    same_s = b1[1] == b2[1]
    if same_y:
        return "I" if same_s else "II"
    return "III" if same_s else "IV"


def edge_plan(cfg: SynthConfig):
    """Per-category Bernoulli rates whose expected census hits the targets.

    Splits the expected edge mass M = n*mean_degree/2 across the four pair
    categories as w_I=hc*hs, w_II=hc*(1-hs), w_III=(1-hc)*hs,
    w_IV=(1-hc)*(1-hs), which satisfies E[N_c]/E[m]=hc and E[N_s]/E[m]=hs.
    """
    sizes = block_sizes(cfg)
    pair_counts = {"I": 0, "II": 0, "III": 0, "IV": 0}
    blocks = list(BLOCK_ORDER)
    for i, b1 in enumerate(blocks):
        for b2 in blocks[i:]:
            cat = _pair_category(b1, b2)
            if b1 == b2:
                pair_counts[cat] += sizes[b1] * (sizes[b1] - 1) // 2
            else:
                pair_counts[cat] += sizes[b1] * sizes[b2]
    hc, hs = cfg.target_hr_c, cfg.target_hr_s
    mass = cfg.n * cfg.mean_degree / 2.0
    weights = {"I": hc * hs, "II": hc * (1 - hs), "III": (1 - hc) * hs,
               "IV": (1 - hc) * (1 - hs)}
    rates = {}
    for cat, w in weights.items():
        wanted = w * mass
        if pair_counts[cat] == 0:
            raise InfeasibleError(
                f"no node pairs of category {cat} exist but {wanted:.1f} edges "
                "are required; adjust balances or targets")
        p = wanted / pair_counts[cat]
        if p > 1.0:
            raise InfeasibleError(
                f"category {cat} needs rate {p:.3f} > 1; lower mean_degree "
                "or move the targets")
        rates[cat] = p
    return rates, pair_counts


def expected_census(cfg: SynthConfig):
    """Closed-form expected per-category edge counts and their std devs."""
    rates, pair_counts = edge_plan(cfg)
    expected = {cat: rates[cat] * pair_counts[cat] for cat in rates}
    stds = {cat: math.sqrt(pair_counts[cat] * rates[cat] * (1 - rates[cat]))
            for cat in rates}
    return expected, stds


def _decode_within(k, size):
    """k-th pair (i, j) with i < j inside one block of the given size."""
    i = 0
    row = size - 1
    while k >= row:
        k -= row
        row -= 1
        i += 1
    return i, i + 1 + k


def synth_generate(cfg: SynthConfig):
    """Returns (Graph, NodeTable) with block-planted edges and Gaussian
    features carrying class and sensitive signal."""
    rng = np.random.default_rng(cfg.seed)
    sizes = block_sizes(cfg)
    rates, _ = edge_plan(cfg)

    starts = {}
    offset = 0
    y = np.zeros(cfg.n, dtype=np.int64)
    s = np.zeros(cfg.n, dtype=np.int64)
    for block in BLOCK_ORDER:
        starts[block] = offset
        y[offset:offset + sizes[block]] = block[0]
        s[offset:offset + sizes[block]] = block[1]
        offset += sizes[block]

    edges = []
    blocks = list(BLOCK_ORDER)
    for i, b1 in enumerate(blocks):
        for b2 in blocks[i:]:
            cat = _pair_category(b1, b2)
            if b1 == b2:
                n_pairs = sizes[b1] * (sizes[b1] - 1) // 2
            else:
                n_pairs = sizes[b1] * sizes[b2]
            if n_pairs == 0:
                continue
            count = int(rng.binomial(n_pairs, rates[cat]))
            if count == 0:
                continue
            chosen = rng.choice(n_pairs, size=count, replace=False)
            for k in sorted(int(c) for c in chosen):
                if b1 == b2:
                    u, v = _decode_within(k, sizes[b1])
                    edges.append((starts[b1] + u, starts[b1] + v))
                else:
                    edges.append((starts[b1] + k // sizes[b2],
                                  starts[b2] + k % sizes[b2]))

    graph = Graph.from_edges(cfg.n, edges)
    d = cfg.feature_dim
    u_c = np.ones(d) / np.sqrt(d)
    u_s = np.array([1.0 if j % 2 == 0 else -1.0 for j in range(d)]) / np.sqrt(d)
    features = (cfg.noise_std * rng.standard_normal((cfg.n, d))
                + np.outer(2.0 * y - 1.0, cfg.class_signal * u_c)
                + np.outer(2.0 * s - 1.0, cfg.sensitive_signal * u_s))
    table = NodeTable(features=features,
                      labels=NodeLabels.create(sensitive=s, class_label=y),
                      feature_names=tuple(f"feat_{j}" for j in range(d)))
    return graph, table


# ---------------------------------------------------------------------------
# writers

def write_dataset(dirpath, graph: Graph, table: NodeTable):
    """Write the three-file dataset layout; round-trips through load_dataset."""
    os.makedirs(dirpath, exist_ok=True)
    spec = DatasetSpec.from_dir(dirpath)
    with open(spec.features_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(table.feature_names) + ["label", "sensitive"])
        for i in range(table.n):
            label = table.labels.class_label[i]
            writer.writerow([repr(float(v)) for v in table.features[i]]
                            + ["" if label == UNKNOWN else int(label),
                               int(table.labels.sensitive[i])])
    with open(spec.edges_path, "w", encoding="utf-8") as fh:
        for u, v in graph.edges:
            fh.write(f"{u} {v}\n")
    with open(spec.meta_path, "w", encoding="utf-8") as fh:
        json.dump({"label_col": "label", "sensitive_col": "sensitive",
                   "positive_value": 1, "sensitive_positive_value": 1,
                   "drop_cols": ["sensitive"]}, fh, indent=2)
    return spec


def export_embeddings(path, c_values, e_values, labels: NodeLabels, split_names):
    """CSV export: node id, split, y, s, then content then environment
    columns. Floats are written with repr so a reload is exact."""
    c_values = np.asarray(c_values, dtype=np.float64)
    e_values = np.asarray(e_values, dtype=np.float64)
    n = c_values.shape[0]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "split", "y", "s"]
                        + [f"c_{j}" for j in range(c_values.shape[1])]
                        + [f"e_{j}" for j in range(e_values.shape[1])])
        for i in range(n):
            y_i = labels.class_label[i]
            writer.writerow([i, split_names[i],
                             "" if y_i == UNKNOWN else int(y_i),
                             int(labels.sensitive[i])]
                            + [repr(float(v)) for v in c_values[i]]
                            + [repr(float(v)) for v in e_values[i]])
