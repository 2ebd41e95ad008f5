"""Training objectives: prediction, counterfactual invariance, structure
reconstruction, supervised contrast with bounded angular similarity, and
environmental separation — plus counterfactual selection and negative-edge
sampling.

All losses return scalar autodiff Tensors so one reverse pass covers the
whole composite objective.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CapacityError, NumericError, UndefinedMetricError
from .graph import Graph

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Trade-off weights and counts for the composite objective."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    omega: float = 1.0
    eta: float = 0.1
    k: int = 5
    k_prime: int = 5
    kappa: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "omega", "eta", "kappa"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.k < 1 or self.k_prime < 1:
            raise ValueError("K and K_prime must be positive counts")

    def to_dict(self):
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma,
                "omega": self.omega, "eta": self.eta, "K": self.k,
                "K_prime": self.k_prime, "kappa": self.kappa}

    @classmethod
    def from_dict(cls, doc):
        known = {"alpha", "beta", "gamma", "omega", "eta", "K", "K_prime", "kappa"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown weight fields: {sorted(unknown)}")
        kw = {k: v for k, v in doc.items() if k in ("alpha", "beta", "gamma",
                                                    "omega", "eta", "kappa")}
        if "K" in doc:
            kw["k"] = int(doc["K"])
        if "K_prime" in doc:
            kw["k_prime"] = int(doc["K_prime"])
        return cls(**kw)


# ---------------------------------------------------------------------------
# counterfactual selection

@dataclass(frozen=True)
class CounterfactualIndex:
    """Per node, up to K nearest latent neighbors of each counterfactual kind:
    e-type shares the pseudo-label with opposite sensitive attribute, c-type
    the reverse. Lists may be shorter than K only when candidates run out."""

    e_ids: tuple          # tuple of int arrays, per node
    c_ids: tuple
    e_dists: tuple        # squared L2 distances, parallel to the id lists
    c_dists: tuple
    k: int
    empty_e: int = 0      # nodes with no e-type candidate at all
    empty_c: int = 0

    def pairs_e(self):
        """Flattened (anchor_ids, counterfactual_ids) over realized e-pairs."""
        return _flatten_pairs(self.e_ids)

    def pairs_c(self):
        return _flatten_pairs(self.c_ids)


def _flatten_pairs(id_lists):
    anchors = []
    partners = []
    for i, ids in enumerate(id_lists):
        if len(ids):
            anchors.append(np.full(len(ids), i, dtype=np.int64))
            partners.append(ids)
    if not anchors:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    return np.concatenate(anchors), np.concatenate(partners)


def _pairwise_sq_dists(h, block=512):
    """Exact squared Euclidean distances, computed blockwise."""
    sq = (h * h).sum(axis=1)
    n = h.shape[0]
    out = np.empty((n, n), dtype=np.float64)
    for start in range(0, n, block):
        stop = min(start + block, n)
        d = sq[start:stop, None] + sq[None, :] - 2.0 * (h[start:stop] @ h.T)
        np.maximum(d, 0.0, out=d)
        out[start:stop] = d
    return out


def select_counterfactuals(h, pseudo, sensitive, k) -> CounterfactualIndex:
    """K nearest same-label/different-sensitive and different-label/
    same-sensitive nodes for every node, by squared L2 in the latent space.
    Ties break toward the smaller node id; a node never matches itself."""
    h = np.asarray(h, dtype=np.float64)
    pseudo = np.asarray(pseudo)
    sensitive = np.asarray(sensitive)
    n = h.shape[0]
    d2 = _pairwise_sq_dists(h)
    e_ids, c_ids, e_d, c_d = [], [], [], []
    ids = np.arange(n)
    for i in range(n):
        same_y = pseudo == pseudo[i]
        same_s = sensitive == sensitive[i]
        not_self = ids != i
        for mask, id_out, d_out in (
                (same_y & ~same_s & not_self, e_ids, e_d),
                (~same_y & same_s & not_self, c_ids, c_d)):
            cand = ids[mask]
            if len(cand) == 0:
                id_out.append(np.zeros(0, dtype=np.int64))
                d_out.append(np.zeros(0))
                continue
            dists = d2[i, cand]
            order = np.lexsort((cand, dists))[:k]
            id_out.append(cand[order])
            d_out.append(dists[order])
    empty_e = sum(1 for ids_ in e_ids if len(ids_) == 0)
    empty_c = sum(1 for ids_ in c_ids if len(ids_) == 0)
    if empty_e or empty_c:
        log.debug("counterfactual selection: %d nodes without e-type, %d without c-type",
                  empty_e, empty_c)
    return CounterfactualIndex(
        e_ids=tuple(e_ids), c_ids=tuple(c_ids),
        e_dists=tuple(e_d), c_dists=tuple(c_d),
        k=k, empty_e=empty_e, empty_c=empty_c)


# ---------------------------------------------------------------------------
# losses

def pred_loss(probs: Tensor, labels, mask) -> Tensor:
    """Mean binary cross-entropy over masked nodes, probabilities clamped."""
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise UndefinedMetricError("prediction loss needs a nonempty mask")
    y = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    w = mask.astype(np.float64).reshape(-1, 1)
    p = ad.clamp(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    ll = ad.mul(y, ad.tlog(p)) + ad.mul(1.0 - y, ad.tlog(1.0 - p))
    return -(ad.tsum(ad.mul(w, ll)) * (1.0 / count))


def _pair_distances(x: Tensor, anchors, partners, dis_metric):
    a = ad.gather_rows(x, anchors)
    b = ad.gather_rows(x, partners)
    if dis_metric == "cosine":
        zero_rows = int(np.sum(
            (np.linalg.norm(x.value[anchors], axis=1) == 0)
            | (np.linalg.norm(x.value[partners], axis=1) == 0)))
        if zero_rows:
            log.debug("cosine distance: %d zero-vector rows treated as cos=0", zero_rows)
        return 1.0 - ad.rowwise_cosine(a, b)
    if dis_metric == "l2":
        return ad.row_l2_norm(a - b)
    raise ValueError(f"unknown distance metric {dis_metric!r}")


def inv_loss(c: Tensor, e: Tensor, cf: CounterfactualIndex, gamma,
             dis_metric="cosine") -> Tensor:
    """Counterfactual invariance: content should match its e-type
    counterfactuals, environment its c-type counterfactuals, and the two
    blocks should stay orthogonal per node.

    Missing counterfactual terms are skipped and each distance sum is
    averaged over realized pairs only; the |cos(c_i, e_i)| term always
    contributes gamma * mean_i |cos| once per node.
    """
    ie, je = cf.pairs_e()
    ic, jc = cf.pairs_c()
    total = ad.mul(ad.tmean(ad.tabs(ad.rowwise_cosine(c, e))), float(gamma))
    if len(ie):
        total = total + ad.tmean(_pair_distances(c, ie, je, dis_metric))
    if len(ic):
        total = total + ad.tmean(_pair_distances(e, ic, jc, dis_metric))
    return total


def sample_negative_edges(g: Graph, count, seed):
    """Uniform sample of unordered non-adjacent pairs, without replacement."""
    n = g.n
    capacity = n * (n - 1) // 2 - g.m
    if count > capacity:
        raise CapacityError(f"asked for {count} negative edges, capacity {capacity}")
    if count == 0:
        return ()
    rng = np.random.default_rng(seed)
    existing = set(g.edges)
    total_pairs = n * (n - 1) // 2
    if total_pairs <= 200_000 or count * 2 > capacity:
        pool = [(u, v) for u in range(n) for v in range(u + 1, n)
                if (u, v) not in existing]
        idx = rng.choice(len(pool), size=count, replace=False)
        return tuple(sorted(pool[int(i)] for i in idx))
    picked = set()
    while len(picked) < count:
        u = int(rng.integers(0, n))
        v = int(rng.integers(0, n))
        if u == v:
            continue
        pair = (u, v) if u < v else (v, u)
        if pair in existing or pair in picked:
            continue
        picked.add(pair)
    return tuple(sorted(picked))


def suf_loss(h: Tensor, pos_edges, neg_edges) -> Tensor:
    """Link reconstruction: sigmoid(h_i . h_j) scored against edge presence,
    averaged over positive and negative pairs together."""
    if len(pos_edges) == 0 or len(neg_edges) == 0:
        raise UndefinedMetricError("structure loss needs positive and negative edges")
    pairs = np.asarray(list(pos_edges) + list(neg_edges), dtype=np.int64)
    a = np.concatenate([np.ones(len(pos_edges)), np.zeros(len(neg_edges))])
    a = a.reshape(-1, 1)
    hi = ad.gather_rows(h, pairs[:, 0])
    hj = ad.gather_rows(h, pairs[:, 1])
    logits = ad.tsum(ad.mul(hi, hj), axis=1, keepdims=True)
    p = ad.clamp(ad.sigmoid(logits), PROB_FLOOR, 1.0 - PROB_FLOOR)
    ll = ad.mul(a, ad.tlog(p)) + ad.mul(1.0 - a, ad.tlog(1.0 - p))
    return -(ad.tsum(ll) * (1.0 / pairs.shape[0]))


def tvmf(c_i, c_j, kappa) -> float:
    """Bounded angular similarity between two vectors:
    (1 + cos) / (1 + kappa*(1 - cos)) - 1. Zero vectors behave as cos = 0."""
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    c_i = np.asarray(c_i, dtype=np.float64).reshape(-1)
    c_j = np.asarray(c_j, dtype=np.float64).reshape(-1)
    ni, nj = np.linalg.norm(c_i), np.linalg.norm(c_j)
    cos = 0.0 if ni == 0 or nj == 0 else float(c_i @ c_j / (ni * nj))
    cos = min(1.0, max(-1.0, cos))
    return (1.0 + cos) / (1.0 + kappa * (1.0 - cos)) - 1.0


def _tvmf_matrix(cos: Tensor, kappa) -> Tensor:
    num = cos + 1.0
    den = ad.mul(1.0 - cos, float(kappa)) + 1.0
    return ad.div(num, den) - 1.0


def sc_loss(c: Tensor, labels, participant_mask, kappa) -> Tensor:
    """Supervised contrast on content rows: each participating node is pulled
    toward same-label participants and pushed from the rest, with the t-vMF
    similarity in place of the dot product. Nodes without positives are
    skipped; if no node has a positive the loss is undefined."""
    mask = np.asarray(participant_mask, dtype=bool)
    idx = np.where(mask)[0]
    if len(idx) < 2:
        raise UndefinedMetricError("supervised contrast needs >= 2 participating nodes")
    y = np.asarray(labels).reshape(-1)[idx]
    same = (y[:, None] == y[None, :]).astype(np.float64)
    off_diag = 1.0 - np.eye(len(idx))
    pos = same * off_diag
    pos_counts = pos.sum(axis=1)
    if not np.any(pos_counts > 0):
        raise UndefinedMetricError("every positive set is empty")
    weights = np.divide(pos, pos_counts[:, None], out=np.zeros_like(pos),
                        where=pos_counts[:, None] > 0)

    cl = ad.gather_rows(c, idx)
    cos = ad.cosine_matrix(cl, cl)
    phi = _tvmf_matrix(cos, kappa)
    den = ad.tsum(ad.mul(ad.texp(phi), off_diag), axis=1, keepdims=True)
    log_ratio = phi - ad.tlog(den)
    return -ad.tsum(ad.mul(weights, log_ratio))


def env_loss(e: Tensor, sensitive, k_prime) -> Tensor:
    """Environmental separation: minus the mean distance from each node to its
    K' nearest opposite-group neighbors in the environment block."""
    if k_prime < 1:
        raise ValueError("K_prime must be >= 1")
    s = np.asarray(sensitive).reshape(-1)
    n = len(s)
    if (s == s[0]).all():
        raise UndefinedMetricError("environment loss needs both sensitive groups")
    ev = e.value
    d2 = _pairwise_sq_dists(ev)
    ids = np.arange(n)
    anchors, partners, weights = [], [], []
    for i in range(n):
        cand = ids[s != s[i]]
        dists = d2[i, cand]
        order = np.lexsort((cand, dists))[:k_prime]
        chosen = cand[order]
        k_i = len(chosen)
        anchors.append(np.full(k_i, i, dtype=np.int64))
        partners.append(chosen)
        weights.append(np.full(k_i, 1.0 / (n * k_i)))
    anchors = np.concatenate(anchors)
    partners = np.concatenate(partners)
    w = np.concatenate(weights).reshape(-1, 1)
    dist = ad.row_l2_norm(ad.gather_rows(e, anchors) - ad.gather_rows(e, partners))
    return -ad.tsum(ad.mul(w, dist))


@dataclass
class LossParts:
    """The five component values; absent terms stay None."""

    pred: Tensor
    inv: Tensor | None = None
    suf: Tensor | None = None
    sc: Tensor | None = None
    env: Tensor | None = None

    def values(self):
        return {name: (None if t is None else float(t.value))
                for name, t in (("pred", self.pred), ("inv", self.inv),
                                ("suf", self.suf), ("sc", self.sc),
                                ("env", self.env))}


def total_loss(parts: LossParts, weights: LossWeights) -> Tensor:
    """pred + alpha*inv + beta*suf + omega*sc + eta*env over present parts."""
    terms = [(1.0, parts.pred), (weights.alpha, parts.inv),
             (weights.beta, parts.suf), (weights.omega, parts.sc),
             (weights.eta, parts.env)]
    total = None
    for coeff, term in terms:
        if term is None:
            continue
        if not np.isfinite(term.value):
            raise NumericError("non-finite loss component")
        piece = ad.mul(term, float(coeff))
        total = piece if total is None else total + piece
    return total
