"""Rotation-based KG completion: baseline complex-rotation scoring and the
prototype-augmented variant, with self-adversarial negative sampling and
analytic gradients for every parameter (entities, relation phases,
prototypes).

Scores are f = -||h o r - t|| with o the coordinatewise complex product and
r unit-modulus by phase parameterization; higher is better, 0 is perfect.
The prototype variant scores f(g(h, P_H(r)), g(t, P_T(r))) with the convex
aggregation g(e, p) = lam*e + (1-lam)*p, which recovers the baseline exactly
at lam = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .kg import AugmentedGraph, CompletionDataset, augment_with_prototypes
from .optim import (ENTITY, PROTOTYPE, RELATION_PHASE, Adam, EmbeddingTable,
                    apply_gradients, init_table, pack_complex, phases_to_complex)
from .seeding import rng_for


@dataclass
class CompletionConfig:
    dim: int = 32
    batch_size: int = 64
    negative_sample_size: int = 16
    margin: float = 6.0
    adversarial_temperature: float = 1.0
    lambda_weight: float = 0.5
    learning_rate: float = 0.001
    max_steps: int = 500
    eval_every: int = 100
    seed: int = 0
    adam_beta2: float = 0.999
    adversarial_detach: bool = True
    corruption_mode: str = "both"   # head | tail | both
    init_scale: float = 1.0
    proto_penalty_weight: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.lambda_weight <= 1.0):
            raise ValueError("lambda_weight must be in (0, 1]")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.adversarial_temperature <= 0:
            raise ValueError("adversarial_temperature must be > 0")
        if self.batch_size < 1 or self.negative_sample_size < 1:
            raise ValueError("batch_size and negative_sample_size must be >= 1")
        if self.corruption_mode not in ("head", "tail", "both"):
            raise ValueError(f"bad corruption_mode {self.corruption_mode!r}")


@dataclass
class TripleBatch:
    """Positives plus per-positive corrupted entities.

    ``neg_entities[i, j]`` replaces the head of positive i when
    ``neg_is_head[i, j]`` is true, else the tail. Corruptions never
    reproduce a training triple.
    """

    positives: np.ndarray      # (B, 3) int
    neg_entities: np.ndarray   # (B, Bn) int
    neg_is_head: np.ndarray    # (B, Bn) bool


def rotate_score(h: np.ndarray, r_phase: np.ndarray, t: np.ndarray) -> np.ndarray:
    """f = -||h o r - t|| over the trailing axis; h, t complex, r_phase real."""
    rot = phases_to_complex(np.asarray(r_phase))
    diff = np.asarray(h) * rot - np.asarray(t)
    return -np.sqrt((diff.real ** 2 + diff.imag ** 2).sum(axis=-1))


def aggregate_with_prototype(e_vec: np.ndarray, p_vec: np.ndarray, lam: float) -> np.ndarray:
    """Convex combination lam*e + (1-lam)*p; lam = 1 returns e exactly."""
    if not (0.0 < lam <= 1.0):
        raise ValueError("lambda must be in (0, 1]")
    return lam * np.asarray(e_vec) + (1.0 - lam) * np.asarray(p_vec)


def rpe_rotate_score(h, r_phase, t, p_head, p_tail, lam: float) -> np.ndarray:
    """Prototype-aggregated rotation score f(g(h, P_H), g(t, P_T))."""
    return rotate_score(aggregate_with_prototype(h, p_head, lam), r_phase,
                        aggregate_with_prototype(t, p_tail, lam))


def adversarial_nll(margin: float, pos_slot, neg_slots, weights) -> float:
    """Core expression -log sig(margin - a) - sum_i w_i log sig(b_i - margin).

    In training the slots hold the positive and negative rotation distances.
    """
    pos = float(np.logaddexp(0.0, float(pos_slot) - margin))
    neg_slots = np.asarray(neg_slots, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    neg = float((weights * np.logaddexp(0.0, margin - neg_slots)).sum())
    return pos + neg


class CompletionModel:
    """Parameter bundle for a completion model over an augmented graph.

    ``kind`` is "rotate" (no prototype table, lam pinned to 1) or
    "rpe-rotate" (prototype rows for every head/tail prototype node).
    """

    def __init__(self, graph: AugmentedGraph, config: CompletionConfig, kind: str):
        if kind not in ("rotate", "rpe-rotate"):
            raise ValueError(f"unknown model kind {kind!r}")
        self.graph = graph
        self.kind = kind
        self.lam = config.lambda_weight if kind == "rpe-rotate" else 1.0
        k, seed, scale = config.dim, config.seed, config.init_scale
        self.entities = init_table(graph.n_entities, k, ENTITY, seed=rng_for(seed, "entities"),
                                   scale=scale, pairs=True)
        self.phases = init_table(graph.n_relations, k, RELATION_PHASE,
                                 seed=rng_for(seed, "phases"))
        if kind == "rpe-rotate":
            self.prototypes = init_table(graph.n_prototypes, k, PROTOTYPE,
                                         seed=rng_for(seed, "prototypes"),
                                         scale=scale, pairs=True)
        else:
            self.prototypes = None

    @property
    def dim(self) -> int:
        return self.entities.dim

    def tables(self) -> dict[str, EmbeddingTable]:
        out = {"entities": self.entities, "phases": self.phases}
        if self.prototypes is not None:
            out["prototypes"] = self.prototypes
        return out

    def copy_tables(self) -> dict[str, EmbeddingTable]:
        return {name: tbl.copy() for name, tbl in self.tables().items()}

    def restore_tables(self, snapshot: dict[str, EmbeddingTable]):
        self.entities = snapshot["entities"].copy()
        self.phases = snapshot["phases"].copy()
        if "prototypes" in snapshot:
            self.prototypes = snapshot["prototypes"].copy()

    def _gather(self, heads, rels, tails):
        """Aggregated head/tail vectors and rotations for id arrays."""
        ent = self.entities.as_complex()
        h = ent[heads]
        t = ent[tails]
        if self.prototypes is not None and self.lam < 1.0:
            proto = self.prototypes.as_complex()
            ph = proto[rels]                            # head prototype rows
            pt = proto[np.asarray(rels) + self.graph.n_relations]
            h = aggregate_with_prototype(h, ph, self.lam)
            t = aggregate_with_prototype(t, pt, self.lam)
        return h, t

    def score(self, heads, rels, tails) -> np.ndarray:
        """Scores for parallel id arrays (broadcastable)."""
        heads = np.asarray(heads)
        rels = np.asarray(rels)
        tails = np.asarray(tails)
        h, t = self._gather(heads, rels, tails)
        return rotate_score(h, self.phases.values[rels], t)

    def score_all_entities(self, fixed_id: int, relation_id: int, side: str) -> np.ndarray:
        """Score every entity as candidate head (side="head") or tail."""
        n = self.graph.n_entities
        cand = np.arange(n)
        if side == "head":
            return self.score(cand, np.full(n, relation_id), np.full(n, fixed_id))
        return self.score(np.full(n, fixed_id), np.full(n, relation_id), cand)


def _neg_forbidden(train_set, h, r, t, is_head):
    return (lambda e: (e, r, t) in train_set) if is_head else (lambda e: (h, r, e) in train_set)


def sample_negatives(positive, n_neg: int, mode: str, rng: np.random.Generator,
                     n_entities: int, train_set: frozenset,
                     max_retries: int = 100):
    """Uniform corrupted entities for one positive, filtered against training
    triples. Bounded resampling, then exact sampling from the complement pool.

    Returns (entities, is_head) arrays of length n_neg.
    """
    h, r, t = positive
    if mode == "head":
        is_head = np.ones(n_neg, dtype=bool)
    elif mode == "tail":
        is_head = np.zeros(n_neg, dtype=bool)
    else:
        is_head = rng.random(n_neg) < 0.5
    ents = np.empty(n_neg, dtype=np.int64)
    for j in range(n_neg):
        forbidden = _neg_forbidden(train_set, h, r, t, bool(is_head[j]))
        picked = -1
        for _ in range(max_retries):
            e = int(rng.integers(0, n_entities))
            if not forbidden(e):
                picked = e
                break
        if picked < 0:
            pool = [e for e in range(n_entities) if not forbidden(e)]
            if not pool:
                raise ValueError(
                    "negative pool exhausted for triple "
                    f"({h},{r},{t}); use a smaller negative_sample_size or a larger KG")
            picked = pool[int(rng.integers(0, len(pool)))]
        ents[j] = picked
    return ents, is_head


def sample_batch(train_triples: np.ndarray, config: CompletionConfig,
                 batch_rng: np.random.Generator, neg_rng: np.random.Generator,
                 n_entities: int, train_set: frozenset) -> TripleBatch:
    idx = batch_rng.integers(0, len(train_triples), size=config.batch_size)
    positives = train_triples[idx]
    bn = config.negative_sample_size
    neg_e = np.empty((len(positives), bn), dtype=np.int64)
    neg_h = np.empty((len(positives), bn), dtype=bool)
    for i, pos in enumerate(positives):
        neg_e[i], neg_h[i] = sample_negatives(tuple(int(x) for x in pos), bn,
                                              config.corruption_mode, neg_rng,
                                              n_entities, train_set)
    return TripleBatch(positives=positives, neg_entities=neg_e, neg_is_head=neg_h)


def adversarial_weights(model: CompletionModel, batch: TripleBatch,
                        config: CompletionConfig) -> np.ndarray:
    """Softmax weights over each positive's negatives at the current state."""
    scores = model.score(
        np.where(batch.neg_is_head, batch.neg_entities, batch.positives[:, 0:1]),
        np.broadcast_to(batch.positives[:, 1:2], batch.neg_entities.shape),
        np.where(batch.neg_is_head, batch.positives[:, 2:3], batch.neg_entities))
    logits = config.adversarial_temperature * scores
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


class _GradAccumulator:
    """Dense per-table gradient buffers with touched-row tracking."""

    def __init__(self, model: CompletionModel):
        self.bufs = {name: np.zeros_like(tbl.values) for name, tbl in model.tables().items()}
        self.touched = {name: set() for name in self.bufs}

    def add(self, name: str, rows: np.ndarray, grads: np.ndarray):
        np.add.at(self.bufs[name], rows, grads)
        self.touched[name].update(int(r) for r in np.asarray(rows).ravel())

    def sparse(self) -> dict[str, list[tuple[int, np.ndarray]]]:
        return {name: [(r, self.bufs[name][r]) for r in sorted(rows)]
                for name, rows in self.touched.items()}


def self_adversarial_loss(model: CompletionModel, batch: TripleBatch,
                          config: CompletionConfig, adversarial_weights=None):
    """Batch loss (mean over positives) and sparse analytic gradients.

    Per positive: -log sig(margin - d_pos) - sum_i p_i log sig(d_neg_i - margin)
    with d the rotation distance and p_i a softmax over the positive's
    negatives of temperature * score. The softmax weights are treated as
    constants when ``adversarial_detach`` is set (the default); passing
    ``adversarial_weights`` pins them explicitly, which the gradient checker
    uses to differentiate the frozen-weights objective.
    """
    lam = model.lam
    gamma = config.margin
    alpha = config.adversarial_temperature
    B, Bn = batch.neg_entities.shape
    n_rel = model.graph.n_relations

    ent = model.entities.as_complex()
    heads = batch.positives[:, 0]
    rels = batch.positives[:, 1]
    tails = batch.positives[:, 2]
    phases = model.phases.values[rels]               # (B, k)
    rot = phases_to_complex(phases)

    if model.prototypes is not None:
        proto = model.prototypes.as_complex()
        ph, pt = proto[rels], proto[rels + n_rel]
    else:
        ph = pt = np.zeros_like(ent[heads])
    h_hat = lam * ent[heads] + (1.0 - lam) * ph      # (B, k)
    t_hat = lam * ent[tails] + (1.0 - lam) * pt

    neg_ent = ent[batch.neg_entities]                # (B, Bn, k)
    neg_agg_h = lam * neg_ent + (1.0 - lam) * ph[:, None, :]
    neg_agg_t = lam * neg_ent + (1.0 - lam) * pt[:, None, :]
    mask = batch.neg_is_head[:, :, None]
    nh_hat = np.where(mask, neg_agg_h, h_hat[:, None, :])   # (B, Bn, k)
    nt_hat = np.where(mask, t_hat[:, None, :], neg_agg_t)

    def _dist(a, b):
        diff = a * rot.reshape((-1,) + (1,) * (a.ndim - 2) + (a.shape[-1],)) - b
        return np.sqrt((diff.real ** 2 + diff.imag ** 2).sum(axis=-1)), diff

    d_pos, u_pos = _dist(h_hat, t_hat)               # (B,), (B, k)
    d_neg, u_neg = _dist(nh_hat, nt_hat)             # (B, Bn), (B, Bn, k)
    if not (np.isfinite(d_pos).all() and np.isfinite(d_neg).all()):
        bad = int(np.argmax(~np.isfinite(d_pos))) if not np.isfinite(d_pos).all() \
            else int(np.argmax(~np.isfinite(d_neg).any(axis=1)))
        raise FloatingPointError(
            f"non-finite score for positive {tuple(batch.positives[bad])}")

    if adversarial_weights is None:
        # softmax over each positive's negatives of alpha * score (score = -d)
        logits = -alpha * d_neg
        logits = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        weights_live = True
    else:
        p = np.asarray(adversarial_weights)
        weights_live = False

    pos_nll = np.logaddexp(0.0, d_pos - gamma)       # (B,)
    neg_nll = np.logaddexp(0.0, gamma - d_neg)       # (B, Bn)
    loss = float((pos_nll + (p * neg_nll).sum(axis=1)).mean())

    # dL/dd for each scored triple (mean reduction over positives)
    dl_dpos = expit(d_pos - gamma) / B               # (B,)
    dl_dneg = -p * expit(gamma - d_neg) / B          # (B, Bn)
    if weights_live and not config.adversarial_detach:
        centered = neg_nll - (p * neg_nll).sum(axis=1, keepdims=True)
        dl_dneg += -alpha * p * centered / B

    acc = _GradAccumulator(model)
    k = model.dim

    def _backward(dl_dd, d, u, hh, h_rows, t_rows, rel_rows):
        """Push dL/dd through d = ||h o rot - t|| for a stack of triples.

        hh is the aggregated head (needed for the phase gradient). Rows with
        d = 0 get zero gradient (the distance kink).
        """
        safe = np.where(d > 0, d, 1.0)
        g_u = (dl_dd / safe * (d > 0))[..., None] * u          # complex, dL/du
        rot_b = rot.reshape((-1,) + (1,) * (g_u.ndim - 2) + (k,))
        g_hhat = np.conj(rot_b) * g_u
        g_that = -g_u
        g_phase = (g_u * np.conj(hh * rot_b)).imag
        flat = lambda z: z.reshape(-1, k)
        h_grads = pack_complex(flat(lam * g_hhat))
        t_grads = pack_complex(flat(lam * g_that))
        acc.add("entities", np.asarray(h_rows).ravel(), h_grads)
        acc.add("entities", np.asarray(t_rows).ravel(), t_grads)
        acc.add("phases", np.asarray(rel_rows).ravel(), flat(g_phase))
        if model.prototypes is not None and lam < 1.0:
            scale = (1.0 - lam) / lam
            acc.add("prototypes", np.asarray(rel_rows).ravel(), h_grads * scale)
            acc.add("prototypes", np.asarray(rel_rows).ravel() + n_rel, t_grads * scale)

    _backward(dl_dpos, d_pos, u_pos, h_hat, heads, tails, rels)

    rel_b = np.broadcast_to(rels[:, None], (B, Bn))
    head_rows = np.where(batch.neg_is_head, batch.neg_entities,
                         np.broadcast_to(heads[:, None], (B, Bn)))
    tail_rows = np.where(batch.neg_is_head,
                         np.broadcast_to(tails[:, None], (B, Bn)), batch.neg_entities)
    _backward(dl_dneg, d_neg, u_neg, nh_hat, head_rows, tail_rows, rel_b)

    if config.proto_penalty_weight > 0 and model.prototypes is not None:
        loss += _proto_penalty(model, np.unique(rels), config.proto_penalty_weight, acc)

    return loss, acc.sparse()


def _proto_penalty(model: CompletionModel, rel_ids: np.ndarray, weight: float,
                   acc: _GradAccumulator) -> float:
    """Optional penalty weight * ||P_H o r - P_T||^2 over the batch relations,
    encouraging the geometry checkers' zero-residual assumption."""
    proto = model.prototypes.as_complex()
    n_rel = model.graph.n_relations
    rot = phases_to_complex(model.phases.values[rel_ids])
    ph, pt = proto[rel_ids], proto[rel_ids + n_rel]
    resid = ph * rot - pt
    value = float(weight * (resid.real ** 2 + resid.imag ** 2).sum())
    g = 2.0 * weight * resid
    acc.add("prototypes", rel_ids, pack_complex(np.conj(rot) * g))
    acc.add("prototypes", rel_ids + n_rel, pack_complex(-g))
    acc.add("phases", rel_ids, (g * np.conj(ph * rot)).imag)
    return value


@dataclass
class CompletionTrainResult:
    model: CompletionModel
    curve: list[tuple[int, float, float | None]]   # (step, loss, valid_mrr)
    best_step: int
    best_valid_mrr: float
    best_tables: dict[str, EmbeddingTable]

    def restore_best(self):
        if self.best_tables:
            self.model.restore_tables(self.best_tables)


def train_completion(dataset: CompletionDataset, config: CompletionConfig,
                     model_kind: str = "rpe-rotate",
                     graph: AugmentedGraph | None = None,
                     eval_fn=None) -> CompletionTrainResult:
    """Mini-batch training with Adam; checkpoint selection by validation MRR.

    ``eval_fn(model) -> float`` defaults to filtered MRR on the validation
    split. Divergence (non-finite loss) aborts with diagnostics.
    """
    from .evaluation import completion_report   # local import avoids a cycle

    graph = graph or augment_with_prototypes(dataset.graph)
    model = CompletionModel(graph, config, model_kind)
    train_triples = np.asarray(dataset.graph.triples, dtype=np.int64)
    train_set = frozenset(dataset.graph.triples)
    batch_rng = rng_for(config.seed, "batches")
    neg_rng = rng_for(config.seed, "negatives")
    opts = {name: Adam(tbl.values.shape, config.learning_rate, beta2=config.adam_beta2)
            for name, tbl in model.tables().items()}

    if eval_fn is None:
        known = dataset.known_triples

        def eval_fn(m):
            if not dataset.valid:
                return 0.0
            report = completion_report(dataset.valid, m.score_all_entities, known,
                                       graph.n_entities)
            return report.mrr

    curve: list[tuple[int, float, float | None]] = []
    best_mrr, best_step, best_tables = -1.0, 0, model.copy_tables()
    for step in range(1, config.max_steps + 1):
        batch = sample_batch(train_triples, config, batch_rng, neg_rng,
                             graph.n_entities, train_set)
        loss, grads = self_adversarial_loss(model, batch, config)
        if not math.isfinite(loss):
            raise FloatingPointError(
                f"training diverged at step {step}: loss={loss!r}; "
                f"lr={config.learning_rate}, margin={config.margin}")
        tables = model.tables()
        for name, g in grads.items():
            apply_gradients(tables[name], g, opts[name])
        mrr = None
        if config.eval_every and step % config.eval_every == 0:
            mrr = eval_fn(model)
            if mrr > best_mrr:
                best_mrr, best_step, best_tables = mrr, step, model.copy_tables()
        curve.append((step, loss, mrr))
    if best_mrr < 0:
        best_mrr, best_step, best_tables = eval_fn(model), config.max_steps, model.copy_tables()
    return CompletionTrainResult(model=model, curve=curve, best_step=best_step,
                                 best_valid_mrr=best_mrr, best_tables=best_tables)
