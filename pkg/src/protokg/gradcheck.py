"""End-to-end gradient validation harnesses: tiny fixed problems whose
analytic gradients are compared against central finite differences. Used by
the `gradcheck` CLI subcommand and by the acceptance suite.

Checks run at dim 8 with batches of at most 8 and tanh activation (no ReLU
kinks); hinge and distance kinks are avoided by seed choice, asserted below.
"""

from __future__ import annotations

import numpy as np

from .gcn import (GcnConfig, GraphMatrices, alignment_loss, build_alignment_model,
                  final_embeddings, gcn_backward, gcn_forward, mine_negatives)
from .kg import KnowledgeGraph, Vocabulary, augment_with_prototypes
from .optim import EmbeddingTable, GradCheckReport, finite_difference_check
from .rotate import (CompletionConfig, CompletionModel, TripleBatch,
                     adversarial_weights, self_adversarial_loss)
from .seeding import rng_for


def _tiny_graph(n_entities: int, triples, n_relations: int, name: str) -> KnowledgeGraph:
    entities, relations = Vocabulary(), Vocabulary()
    for i in range(n_entities):
        entities.add(f"{name}{i}")
    for r in range(n_relations):
        relations.add(f"rel{r}")
    return KnowledgeGraph(entities, relations, triples, name=name)


def _completion_setup(seed: int, dim: int = 8, detach: bool = True,
                      proto_penalty: float = 0.0):
    triples = [(0, 0, 1), (2, 0, 3), (4, 1, 5), (6, 1, 7), (0, 1, 5), (2, 1, 7)]
    kg = _tiny_graph(10, triples, 2, "gck")
    graph = augment_with_prototypes(kg)
    config = CompletionConfig(dim=dim, batch_size=2, negative_sample_size=4,
                              margin=2.0, adversarial_temperature=1.0,
                              lambda_weight=0.6, seed=seed,
                              adversarial_detach=detach,
                              proto_penalty_weight=proto_penalty)
    model = CompletionModel(graph, config, "rpe-rotate")
    rng = rng_for(seed, "gradcheck-batch")
    positives = np.asarray([[0, 0, 1], [4, 1, 5]])
    neg_e = rng.integers(0, 10, size=(2, 4))
    neg_h = rng.random((2, 4)) < 0.5
    batch = TripleBatch(positives=positives, neg_entities=neg_e, neg_is_head=neg_h)
    return model, batch, config


def check_completion_loss(seed: int = 3, dim: int = 8, tolerance: float = 1e-4,
                          detach: bool = True,
                          proto_penalty: float = 0.0) -> dict[str, GradCheckReport]:
    """Validate the self-adversarial loss gradients for every table.

    With detached softmax weights the differentiated objective freezes the
    weights at the evaluation point, so the checker pins them explicitly;
    the coupled variant differentiates through the softmax as well.
    """
    model, batch, config = _completion_setup(seed, dim, detach, proto_penalty)
    frozen = adversarial_weights(model, batch, config) if detach else None

    def loss_fn(_table):
        return self_adversarial_loss(model, batch, config,
                                     adversarial_weights=frozen)[0]

    _, grads = self_adversarial_loss(model, batch, config,
                                     adversarial_weights=frozen)
    reports = {}
    for name, table in model.tables().items():
        analytic = {row: np.asarray(g) for row, g in grads.get(name, [])}
        reports[name] = finite_difference_check(loss_fn, table, analytic,
                                                tolerance=tolerance)
    return reports


def _alignment_setup(seed: int, dim: int = 8):
    rng = rng_for(seed, "gradcheck-graph")
    triples1 = [(0, 0, 1), (2, 0, 3), (4, 0, 5), (6, 1, 7), (8, 1, 9), (0, 1, 9)]
    triples2 = [(1, 0, 0), (3, 0, 2), (5, 0, 4), (7, 1, 6), (9, 1, 8), (1, 1, 8)]
    g1 = augment_with_prototypes(_tiny_graph(10, triples1, 2, "ga"))
    g2 = augment_with_prototypes(_tiny_graph(10, triples2, 2, "gb"))
    config = GcnConfig(dim=dim, num_layers=2, margin=1.0, lambda_weight=0.6,
                       l2_weight=0.01, dropout_rate=0.0, activation="tanh",
                       aggregate_all_layers=True, negatives_per_positive=3,
                       seed=seed)
    model = build_alignment_model(g1, g2, config, "rpe")
    mats = (GraphMatrices(g1), GraphMatrices(g2))
    train_pairs = [(0, 1), (2, 3), (4, 5)]
    e1, e2, _, _ = model.final(mats, training=False)
    cache = mine_negatives(e1, e2, train_pairs, count=3)
    return model, mats, train_pairs, cache, config


def check_alignment_loss(seed: int = 1, dim: int = 8,
                         tolerance: float = 1e-4) -> dict[str, GradCheckReport]:
    """Validate margin-loss gradients through the full layer stack, the
    all-layer aggregation, and the weight penalty, for entity inputs,
    prototype inputs, and every layer weight."""
    model, mats, train_pairs, cache, config = _alignment_setup(seed, dim)

    def full_loss():
        e1, e2, _, _ = model.final(mats, training=False)
        loss, _, _ = alignment_loss(train_pairs, cache, e1, e2, config.margin)
        return loss + config.l2_weight * sum(float((w * w).sum()) for w in model.weights)

    def loss_fn(_table):
        return full_loss()

    # hinge terms must sit away from their kinks for a valid fd comparison
    e1, e2, c1, c2 = model.final(mats, training=False)
    _assert_away_from_kinks(train_pairs, cache, e1, e2, config.margin)

    loss, grad_e1, grad_e2 = alignment_loss(train_pairs, cache, e1, e2, config.margin)
    ge1, gp1, gw1 = gcn_backward(mats[0], c1, model.weights, grad_e1, config, "rpe")
    ge2, gp2, gw2 = gcn_backward(mats[1], c2, model.weights, grad_e2, config, "rpe")

    reports = {}
    for tag, table, grad in (("entities-g1", model.entities[0], ge1),
                             ("entities-g2", model.entities[1], ge2),
                             ("protos-g1", model.prototypes[0], gp1),
                             ("protos-g2", model.prototypes[1], gp2)):
        rows = np.nonzero(np.abs(grad).sum(axis=1))[0][:4]
        analytic = {int(r): grad[r] for r in rows}
        reports[tag] = finite_difference_check(loss_fn, table, analytic,
                                               tolerance=tolerance)
    for l, w in enumerate(model.weights):
        grad_w = gw1[l] + gw2[l] + 2.0 * config.l2_weight * w
        table = EmbeddingTable(w, config.dim, "gcn-weight")
        assert np.shares_memory(table.values, w)
        analytic = {r: grad_w[r] for r in range(w.shape[0])}
        reports[f"weights-l{l}"] = finite_difference_check(loss_fn, table, analytic,
                                                           tolerance=tolerance)
    return reports


def _assert_away_from_kinks(train_pairs, cache, e1, e2, margin, slack=1e-3):
    for idx, (i, j) in enumerate(train_pairs):
        d_pos = np.linalg.norm(e1[i] - e2[j])
        assert d_pos > slack, "positive distance too close to zero"
        for srcs, tgts in ((cache.neg_sources[idx], cache.neg_targets[idx]),):
            d_s = np.linalg.norm(e1[srcs] - e2[j], axis=1)
            d_t = np.linalg.norm(e1[i] - e2[tgts], axis=1)
            for d in np.concatenate([d_s, d_t]):
                assert abs(d_pos + margin - d) > slack, "hinge term at its kink"


def run_gradient_checks(seed: int = 0, tolerance: float = 1e-4) -> dict[str, GradCheckReport]:
    """The full battery used by the CLI and the acceptance suite."""
    out = {}
    for name, rep in check_completion_loss(seed=seed + 3, tolerance=tolerance).items():
        out[f"completion/{name}"] = rep
    for name, rep in check_completion_loss(seed=seed + 3, tolerance=tolerance,
                                           detach=False).items():
        out[f"completion-coupled/{name}"] = rep
    for name, rep in check_alignment_loss(seed=seed + 1, tolerance=tolerance).items():
        out[f"alignment/{name}"] = rep
    return out
