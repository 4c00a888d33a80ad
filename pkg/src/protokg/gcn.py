"""Graph-convolutional entity alignment: vanilla mean-aggregation layers and
the prototype-augmented variant, trained with a margin loss over seed pairs
and hard negatives mined by cosine similarity. Backpropagation is manual;
every gradient is validated against central differences in the test suite.

Layer rule (vanilla): e_i' = act( sum_{j in N(i) u {i}} W e_j / |N(i) u {i}| ).
Prototype variant: entity numerators mix neighbor-entity and neighbor-
prototype sums with weights lam and (1-lam), the denominator mixes the two
neighborhood sizes the same way, and prototype states update from their
member entities' previous-layer states (synchronous, Jacobi-style).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .kg import AlignmentSeedSet, AugmentedGraph, KnowledgeGraph
from .optim import ENTITY, GCN_WEIGHT, PROTOTYPE, Adagrad, EmbeddingTable, init_table
from .seeding import rng_for


@dataclass
class GcnConfig:
    dim: int = 32
    num_layers: int = 2
    margin: float = 1.0
    lambda_weight: float = 0.5
    learning_rate: float = 0.001
    l2_weight: float = 0.01
    dropout_rate: float = 0.0
    activation: str = "relu"          # relu | tanh | identity
    aggregate_all_layers: bool = True
    negatives_per_positive: int = 25
    negative_refresh_epochs: int = 5
    epochs: int = 100
    seed: int = 0
    init_scale: float = 1.0
    normalize_inputs: bool = False

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if not (0.0 < self.lambda_weight <= 1.0):
            raise ValueError("lambda_weight must be in (0, 1]")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.activation not in ("relu", "tanh", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")


def _act(name: str, u: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(u, 0.0)
    if name == "tanh":
        return np.tanh(u)
    return u


def _act_grad(name: str, u: np.ndarray) -> np.ndarray:
    # subgradient 0 at the ReLU kink
    if name == "relu":
        return (u > 0).astype(np.float64)
    if name == "tanh":
        th = np.tanh(u)
        return 1.0 - th * th
    return np.ones_like(u)


class GraphMatrices:
    """Sparse aggregation operators for one graph.

    a_self is the undirected adjacency plus self loops; incidence maps
    entities to their prototype neighbors. Denominator count vectors follow
    the layer rules and are strictly positive (self-inclusion for entities,
    the 1-lam term for prototypes).
    """

    def __init__(self, graph: AugmentedGraph | KnowledgeGraph):
        base = graph.base if isinstance(graph, AugmentedGraph) else graph
        n = base.n_entities
        nbrs = base.neighbor_sets()
        ij_r, ij_c = [], []
        for i, s in enumerate(nbrs):
            ij_r.extend([i] * (len(s) + 1))
            ij_c.extend(list(s) + [i])
        data = np.ones(len(ij_r))
        self.a_self = sp.csr_matrix((data, (ij_r, ij_c)), shape=(n, n))
        self.counts_e = np.asarray([len(s) + 1 for s in nbrs], dtype=np.float64)
        if isinstance(graph, AugmentedGraph):
            m = graph.n_prototypes
            pr, pc = [], []
            for i in range(n):
                for p in graph.proto_neighbors_of_entity(i):
                    pr.append(i)
                    pc.append(graph.proto_row(p))
            self.incidence = sp.csr_matrix((np.ones(len(pr)), (pr, pc)), shape=(n, m))
            self.counts_proto_nbrs = np.asarray(self.incidence.sum(axis=1)).ravel()
            self.counts_members = np.asarray(self.incidence.sum(axis=0)).ravel()
        else:
            self.incidence = None


@dataclass
class ForwardCache:
    """Per-layer intermediates kept for manual backprop."""

    entity_states: list[np.ndarray]      # [e^(0) .. e^(L)], post activation+dropout
    proto_states: list[np.ndarray] | None
    pre_e: list[np.ndarray]              # pre-activation per layer 1..L
    pre_p: list[np.ndarray] | None
    masks_e: list[np.ndarray | None]
    masks_p: list[np.ndarray | None]
    xs: list[np.ndarray]                 # E_prev @ W.T per layer
    qs: list[np.ndarray] | None          # P_prev @ W.T per layer


def gcn_forward(mats: GraphMatrices, entity_inputs: np.ndarray,
                proto_inputs: np.ndarray | None, weights: list[np.ndarray],
                config: GcnConfig, mode: str = "vanilla", training: bool = False,
                dropout_rng: np.random.Generator | None = None,
                proto_dropout_rng: np.random.Generator | None = None) -> ForwardCache:
    """Run the layer stack; returns all hidden states plus backprop caches.

    mode "rpe" requires prototype inputs and the incidence operator;
    prototype states at layer l read entity states from layer l-1.
    """
    lam = config.lambda_weight
    act = config.activation
    rate = config.dropout_rate if training else 0.0
    if mode not in ("vanilla", "rpe"):
        raise ValueError(f"unknown gcn mode {mode!r}")
    if mode == "rpe" and (proto_inputs is None or mats.incidence is None):
        raise ValueError("rpe mode needs an augmented graph and prototype inputs")
    for w in weights:
        if w.shape != (entity_inputs.shape[1], entity_inputs.shape[1]):
            raise ValueError(f"weight shape {w.shape} does not match dim "
                             f"{entity_inputs.shape[1]}")

    e_states = [entity_inputs]
    p_states = [proto_inputs] if mode == "rpe" else None
    pre_e, pre_p, masks_e, masks_p, xs, qs = [], [], [], [], [], []
    if mode == "rpe":
        denom_e = (lam * mats.counts_e + (1.0 - lam) * mats.counts_proto_nbrs)[:, None]
        denom_p = (lam * mats.counts_members + (1.0 - lam))[:, None]
    else:
        denom_e = mats.counts_e[:, None]

    for w in weights:
        x = e_states[-1] @ w.T
        xs.append(x)
        if mode == "rpe":
            q = p_states[-1] @ w.T
            qs.append(q)
            u_e = (lam * (mats.a_self @ x) + (1.0 - lam) * (mats.incidence @ q)) / denom_e
            u_p = (lam * (mats.incidence.T @ x) + (1.0 - lam) * q) / denom_p
        else:
            u_e = (mats.a_self @ x) / denom_e
        pre_e.append(u_e)
        h_e = _act(act, u_e)
        mask = None
        if rate > 0.0:
            mask = (dropout_rng.random(h_e.shape) >= rate) / (1.0 - rate)
            h_e = h_e * mask
        masks_e.append(mask)
        e_states.append(h_e)
        if mode == "rpe":
            pre_p.append(u_p)
            h_p = _act(act, u_p)
            pmask = None
            if rate > 0.0:
                pmask = (proto_dropout_rng.random(h_p.shape) >= rate) / (1.0 - rate)
                h_p = h_p * pmask
            masks_p.append(pmask)
            p_states.append(h_p)

    return ForwardCache(entity_states=e_states, proto_states=p_states,
                        pre_e=pre_e, pre_p=pre_p if mode == "rpe" else None,
                        masks_e=masks_e, masks_p=masks_p if mode == "rpe" else None,
                        xs=xs, qs=qs if mode == "rpe" else None)


def final_embeddings(entity_states: list[np.ndarray], aggregate_all_layers: bool) -> np.ndarray:
    """Mean of hidden layers 1..L, or the last layer when aggregation is off."""
    hidden = entity_states[1:]
    if aggregate_all_layers:
        return sum(hidden) / len(hidden)
    return hidden[-1]


def gcn_backward(mats: GraphMatrices, cache: ForwardCache, weights: list[np.ndarray],
                 grad_final: np.ndarray, config: GcnConfig, mode: str = "vanilla"):
    """Gradients of a scalar loss wrt entity inputs, prototype inputs, and
    every layer weight, given the loss gradient on the final embeddings."""
    lam = config.lambda_weight
    act = config.activation
    L = len(weights)
    layer_w = (1.0 / L) if config.aggregate_all_layers else None

    grad_e_state = np.zeros_like(cache.entity_states[-1])
    grad_p_state = np.zeros_like(cache.proto_states[-1]) if mode == "rpe" else None
    grad_ws = [np.zeros_like(w) for w in weights]

    if mode == "rpe":
        denom_e = (lam * mats.counts_e + (1.0 - lam) * mats.counts_proto_nbrs)[:, None]
        denom_p = (lam * mats.counts_members + (1.0 - lam))[:, None]
    else:
        denom_e = mats.counts_e[:, None]

    for l in reversed(range(L)):
        direct = grad_final * layer_w if config.aggregate_all_layers else (
            grad_final if l == L - 1 else 0.0)
        g_state = grad_e_state + direct
        if cache.masks_e[l] is not None:
            g_state = g_state * cache.masks_e[l]
        h_e = g_state * _act_grad(act, cache.pre_e[l])
        we = h_e / denom_e
        if mode == "rpe":
            gp = grad_p_state
            if cache.masks_p[l] is not None:
                gp = gp * cache.masks_p[l]
            h_p = gp * _act_grad(act, cache.pre_p[l])
            wp = h_p / denom_p
            grad_x = lam * (mats.a_self.T @ we) + lam * (mats.incidence @ wp)
            grad_q = (1.0 - lam) * (mats.incidence.T @ we) + (1.0 - lam) * wp
            grad_ws[l] = grad_x.T @ cache.entity_states[l] + grad_q.T @ cache.proto_states[l]
            grad_p_state = grad_q @ weights[l]
        else:
            grad_x = mats.a_self.T @ we
            grad_ws[l] = grad_x.T @ cache.entity_states[l]
        grad_e_state = grad_x @ weights[l]

    grad_p0 = grad_p_state if mode == "rpe" else None
    return grad_e_state, grad_p0, grad_ws


@dataclass
class NegativePairCache:
    """Mined hard negatives per training pair, refreshed every few epochs."""

    neg_sources: list[np.ndarray]   # per pair: same-graph entities near i (graph 1)
    neg_targets: list[np.ndarray]   # per pair: same-graph entities near j (graph 2)
    epoch_stamp: int

    def stale(self, epoch: int, refresh_every: int) -> bool:
        return (epoch - self.epoch_stamp) >= refresh_every


def _unit_rows(embeddings: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(embeddings, axis=1, keepdims=True)
    return embeddings / np.where(norms > 0, norms, 1.0)


def _top_k_cosine(unit: np.ndarray, anchor: int, k: int,
                  exclude: set[int]) -> np.ndarray:
    sims = unit @ unit[anchor]
    sims[list(exclude)] = -np.inf
    # stable sort on descending similarity; equal similarities keep id order
    order = np.argsort(-sims, kind="stable")
    return order[:k].astype(np.int64)


def mine_negatives(emb1: np.ndarray, emb2: np.ndarray,
                   train_pairs: list[tuple[int, int]], count: int = 25,
                   epoch: int = 0) -> NegativePairCache:
    """Exact top-k same-graph cosine neighbors for each side of each pair.

    Ties break toward the lower entity id. Excluded per anchor: the anchor
    itself and any entity train-aligned to the anchor's counterpart.
    """
    for emb in (emb1, emb2):
        if emb.shape[0] <= count + 1:
            raise ValueError(f"graph has {emb.shape[0]} entities; need > {count + 1}")
    unit1, unit2 = _unit_rows(emb1), _unit_rows(emb2)
    src_of = {}
    tgt_of = {}
    for i, j in train_pairs:
        src_of.setdefault(j, set()).add(i)
        tgt_of.setdefault(i, set()).add(j)
    neg_sources, neg_targets = [], []
    for i, j in train_pairs:
        neg_sources.append(_top_k_cosine(unit1, i, count, {i} | src_of.get(j, set())))
        neg_targets.append(_top_k_cosine(unit2, j, count, {j} | tgt_of.get(i, set())))
    return NegativePairCache(neg_sources=neg_sources, neg_targets=neg_targets,
                             epoch_stamp=epoch)


def alignment_loss(train_pairs: list[tuple[int, int]], cache: NegativePairCache,
                   emb1: np.ndarray, emb2: np.ndarray, margin: float):
    """Margin loss summed over (positive, negative-pair) combinations.

    Each mined neighbor i' of i forms the negative pair (i', j), and each
    mined j' of j forms (i, j'). Returns the scalar loss and dense gradients
    wrt both graphs' final embeddings. Subgradients are 0 at the hinge kink
    and at zero distance.
    """
    g1 = np.zeros_like(emb1)
    g2 = np.zeros_like(emb2)
    total = 0.0

    def _unit(diff, dist):
        safe = np.where(dist > 0, dist, 1.0)[..., None]
        return np.where(dist[..., None] > 0, diff / safe, 0.0)

    for idx, (i, j) in enumerate(train_pairs):
        diff_pos = emb1[i] - emb2[j]
        d_pos = float(np.linalg.norm(diff_pos))
        u_pos = diff_pos / d_pos if d_pos > 0 else np.zeros_like(diff_pos)

        srcs = np.asarray(cache.neg_sources[idx], dtype=np.intp)
        tgts = np.asarray(cache.neg_targets[idx], dtype=np.intp)
        diff_s = emb1[srcs] - emb2[j]          # (i', j) pairs
        dist_s = np.linalg.norm(diff_s, axis=1)
        diff_t = emb1[i] - emb2[tgts]          # (i, j') pairs
        dist_t = np.linalg.norm(diff_t, axis=1)

        terms_s = d_pos + margin - dist_s
        terms_t = d_pos + margin - dist_t
        act_s = terms_s > 0
        act_t = terms_t > 0
        total += float(terms_s[act_s].sum() + terms_t[act_t].sum())

        n_active = int(act_s.sum() + act_t.sum())
        if n_active:
            g1[i] += n_active * u_pos
            g2[j] -= n_active * u_pos
        us = _unit(diff_s, dist_s) * act_s[:, None]
        ut = _unit(diff_t, dist_t) * act_t[:, None]
        np.add.at(g1, srcs, -us)
        g2[j] += us.sum(axis=0)
        g1[i] -= ut.sum(axis=0)
        np.add.at(g2, tgts, ut)
    return total, g1, g2


@dataclass
class AlignmentModel:
    """Shared layer weights plus per-graph entity and prototype inputs."""

    weights: list[np.ndarray]
    entities: tuple[EmbeddingTable, EmbeddingTable]
    prototypes: tuple[EmbeddingTable, EmbeddingTable] | None
    mode: str             # vanilla | rpe
    config: GcnConfig

    def final(self, mats: tuple[GraphMatrices, GraphMatrices], training=False,
              rngs=None):
        """Forward both graphs; returns (emb1, emb2, cache1, cache2)."""
        caches = []
        for g in (0, 1):
            proto = self.prototypes[g].values if self.prototypes else None
            dr = rngs[2 * g] if rngs else None
            pr = rngs[2 * g + 1] if rngs else None
            caches.append(gcn_forward(mats[g], self.entities[g].values, proto,
                                      self.weights, self.config, mode=self.mode,
                                      training=training, dropout_rng=dr,
                                      proto_dropout_rng=pr))
        e1 = final_embeddings(caches[0].entity_states, self.config.aggregate_all_layers)
        e2 = final_embeddings(caches[1].entity_states, self.config.aggregate_all_layers)
        return e1, e2, caches[0], caches[1]


def build_alignment_model(g1, g2, config: GcnConfig, mode: str) -> AlignmentModel:
    k, seed, scale = config.dim, config.seed, config.init_scale
    w_rng = rng_for(seed, "gcn-weights")
    weights = [init_table(k, k, GCN_WEIGHT, seed=w_rng, scale=scale).values
               for _ in range(config.num_layers)]
    n1 = g1.n_entities if isinstance(g1, KnowledgeGraph) else g1.base.n_entities
    n2 = g2.n_entities if isinstance(g2, KnowledgeGraph) else g2.base.n_entities
    e1 = init_table(n1, k, ENTITY, seed=rng_for(seed, "entities-g1"), scale=scale)
    e2 = init_table(n2, k, ENTITY, seed=rng_for(seed, "entities-g2"), scale=scale)
    if config.normalize_inputs:
        for tbl in (e1, e2):
            norms = np.linalg.norm(tbl.values, axis=1, keepdims=True)
            tbl.values /= np.where(norms > 0, norms, 1.0)
    protos = None
    if mode == "rpe":
        p1 = init_table(g1.n_prototypes, k, PROTOTYPE, seed=rng_for(seed, "protos-g1"),
                        scale=scale)
        p2 = init_table(g2.n_prototypes, k, PROTOTYPE, seed=rng_for(seed, "protos-g2"),
                        scale=scale)
        protos = (p1, p2)
    return AlignmentModel(weights=weights, entities=(e1, e2), prototypes=protos,
                          mode=mode, config=config)


@dataclass
class AlignmentTrainResult:
    model: AlignmentModel
    curve: list[tuple[int, float]]           # (epoch, loss)
    final_emb1: np.ndarray
    final_emb2: np.ndarray


def train_alignment(g1, g2, seeds: AlignmentSeedSet, config: GcnConfig,
                    mode: str = "rpe") -> AlignmentTrainResult:
    """Full-batch margin training with Adagrad and periodic negative mining.

    g1/g2 are AugmentedGraph in rpe mode, else KnowledgeGraph or
    AugmentedGraph. Loss adds l2_weight * sum ||W||_F^2.
    """
    if mode not in ("vanilla", "rpe"):
        raise ValueError(f"unknown mode {mode!r}")
    mats = (GraphMatrices(g1), GraphMatrices(g2))
    model = build_alignment_model(g1, g2, config, mode)
    opt_w = [Adagrad(w.shape, config.learning_rate) for w in model.weights]
    opt_e = [Adagrad(t.values.shape, config.learning_rate) for t in model.entities]
    opt_p = ([Adagrad(t.values.shape, config.learning_rate) for t in model.prototypes]
             if model.prototypes else None)
    drop_rngs = [rng_for(config.seed, name) for name in
                 ("dropout-entities-g1", "dropout-protos-g1",
                  "dropout-entities-g2", "dropout-protos-g2")]
    cache: NegativePairCache | None = None
    curve = []
    for epoch in range(config.epochs):
        if cache is None or cache.stale(epoch, config.negative_refresh_epochs):
            e1, e2, _, _ = model.final(mats, training=False)
            cache = mine_negatives(e1, e2, seeds.train,
                                   config.negatives_per_positive, epoch)
        e1, e2, c1, c2 = model.final(mats, training=True, rngs=drop_rngs)
        loss, grad_e1, grad_e2 = alignment_loss(seeds.train, cache, e1, e2,
                                                config.margin)
        loss += config.l2_weight * sum(float((w * w).sum()) for w in model.weights)
        if not math.isfinite(loss):
            raise FloatingPointError(f"alignment training diverged at epoch {epoch}")
        ge1, gp1, gw1 = gcn_backward(mats[0], c1, model.weights, grad_e1, config, mode)
        ge2, gp2, gw2 = gcn_backward(mats[1], c2, model.weights, grad_e2, config, mode)
        for l, w in enumerate(model.weights):
            gw = gw1[l] + gw2[l] + 2.0 * config.l2_weight * w
            opt_w[l].update_rows(w, np.arange(w.shape[0]), gw)
        for tbl, opt, grad in ((model.entities[0], opt_e[0], ge1),
                               (model.entities[1], opt_e[1], ge2)):
            rows = np.nonzero(np.abs(grad).sum(axis=1))[0]
            if rows.size:
                opt.update_rows(tbl.values, rows, grad[rows])
        if model.prototypes:
            for tbl, opt, grad in ((model.prototypes[0], opt_p[0], gp1),
                                   (model.prototypes[1], opt_p[1], gp2)):
                rows = np.nonzero(np.abs(grad).sum(axis=1))[0]
                if rows.size:
                    opt.update_rows(tbl.values, rows, grad[rows])
        curve.append((epoch, loss))
    e1, e2, _, _ = model.final(mats, training=False)
    return AlignmentTrainResult(model=model, curve=curve, final_emb1=e1, final_emb2=e2)
