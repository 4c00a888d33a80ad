import math

import numpy as np
import pytest

from protokg.gradcheck import check_completion_loss
from protokg.kg import KnowledgeGraph, Vocabulary, augment_with_prototypes
from protokg.rotate import (CompletionConfig, CompletionModel, TripleBatch,
                            adversarial_nll, aggregate_with_prototype,
                            rotate_score, rpe_rotate_score, sample_negatives,
                            self_adversarial_loss, train_completion)
from protokg.synthetic import make_completion_fixture


def reference_rotation_score(h, phases, t):
    """Independent re-evaluation in scalar Python arithmetic: coordinatewise
    complex product with a unit rotation, then the Euclidean norm over the
    2k underlying reals."""
    total = 0.0
    for hj, pj, tj in zip(h, phases, t):
        rot = complex(math.cos(pj), math.sin(pj))
        diff = hj * rot - tj
        total += diff.real ** 2 + diff.imag ** 2
    return -math.sqrt(total)


class TestRotateScore:
    def test_exact_match_scores_zero(self):
        assert rotate_score(np.array([1 + 0j]), np.array([0.0]), np.array([1 + 0j])) == 0.0

    def test_quarter_turn(self):
        # h=1, phase pi/2 -> h*r = i; distance to t=0 is 1
        s = rotate_score(np.array([1 + 0j]), np.array([np.pi / 2]), np.array([0 + 0j]))
        assert abs(s + 1.0) < 1e-15

    def test_against_reference_arithmetic(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            k = 2
            h = rng.normal(size=k) + 1j * rng.normal(size=k)
            t = rng.normal(size=k) + 1j * rng.normal(size=k)
            phases = rng.uniform(-np.pi, np.pi, size=k)
            got = rotate_score(h, phases, t)
            want = reference_rotation_score(h, phases, t)
            assert abs(got - want) < 1e-12

    def test_score_never_positive(self):
        rng = np.random.default_rng(3)
        h = rng.normal(size=(100, 4)) + 1j * rng.normal(size=(100, 4))
        t = rng.normal(size=(100, 4)) + 1j * rng.normal(size=(100, 4))
        phases = rng.uniform(-np.pi, np.pi, size=(100, 4))
        assert (rotate_score(h, phases, t) <= 0).all()

    def test_lower_bound_by_norms(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            h = rng.normal(size=4) + 1j * rng.normal(size=4)
            t = rng.normal(size=4) + 1j * rng.normal(size=4)
            phases = rng.uniform(-np.pi, np.pi, size=4)
            s = rotate_score(h, phases, t)
            assert s >= -(np.linalg.norm(h) + np.linalg.norm(t)) - 1e-12


class TestAggregation:
    def test_identity_at_lambda_one(self):
        rng = np.random.default_rng(0)
        e = rng.normal(size=4) + 1j * rng.normal(size=4)
        p = rng.normal(size=4) + 1j * rng.normal(size=4)
        assert np.array_equal(aggregate_with_prototype(e, p, 1.0), e)

    def test_midpoint(self):
        assert aggregate_with_prototype(np.array([2.0]), np.array([0.0]), 0.5) == 1.0

    def test_shrinkage_equality(self):
        rng = np.random.default_rng(1)
        for lam in (0.1, 0.5, 0.9):
            e = rng.normal(size=8) + 1j * rng.normal(size=8)
            p = rng.normal(size=8) + 1j * rng.normal(size=8)
            agg = aggregate_with_prototype(e, p, lam)
            assert abs(np.linalg.norm(agg - p) - lam * np.linalg.norm(e - p)) < 1e-12

    def test_lambda_out_of_range(self):
        with pytest.raises(ValueError):
            aggregate_with_prototype(np.ones(2), np.ones(2), 0.0)
        with pytest.raises(ValueError):
            aggregate_with_prototype(np.ones(2), np.ones(2), 1.5)


class TestRpeScore:
    def test_reduces_to_rotate_at_lambda_one(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            h, t, ph, pt = (rng.normal(size=3) + 1j * rng.normal(size=3) for _ in range(4))
            phases = rng.uniform(-np.pi, np.pi, size=3)
            assert rpe_rotate_score(h, phases, t, ph, pt, 1.0) == rotate_score(h, phases, t)

    def test_real_line_example(self):
        # lam=0.5: h=2,P_H=0 -> 1; t=1,P_T=1 -> 1; phase 0 -> perfect score
        s = rpe_rotate_score(np.array([2 + 0j]), np.array([0.0]), np.array([1 + 0j]),
                             np.array([0 + 0j]), np.array([1 + 0j]), 0.5)
        assert abs(s) < 1e-15

    def test_against_reference_arithmetic(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            h, t, ph, pt = (rng.normal(size=2) + 1j * rng.normal(size=2) for _ in range(4))
            phases = rng.uniform(-np.pi, np.pi, size=2)
            lam = rng.uniform(0.1, 1.0)
            got = rpe_rotate_score(h, phases, t, ph, pt, lam)
            want = reference_rotation_score(lam * h + (1 - lam) * ph, phases,
                                            lam * t + (1 - lam) * pt)
            assert abs(got - want) < 1e-12


def tiny_model(lam=0.5, kind="rpe-rotate", dim=4, seed=0):
    entities, relations = Vocabulary(), Vocabulary()
    for i in range(6):
        entities.add(f"e{i}")
    for r in range(2):
        relations.add(f"r{r}")
    kg = KnowledgeGraph(entities, relations,
                        [(0, 0, 1), (2, 0, 3), (4, 1, 5), (0, 1, 3)], name="tiny")
    graph = augment_with_prototypes(kg)
    config = CompletionConfig(dim=dim, batch_size=2, negative_sample_size=3,
                              margin=2.0, lambda_weight=lam, seed=seed)
    return CompletionModel(graph, config, kind), config, kg


class TestSelfAdversarialLoss:
    def test_frozen_expression_value(self):
        # margin 1, slots (0, -2), single unit weight
        value = adversarial_nll(1.0, 0.0, [-2.0], [1.0])
        assert abs(value - 3.361849) < 5e-7

    def test_equal_negatives_get_equal_weights(self):
        model, config, _ = tiny_model()
        batch = TripleBatch(positives=np.array([[0, 0, 1]]),
                            neg_entities=np.array([[2, 2]]),
                            neg_is_head=np.array([[True, True]]))
        from protokg.rotate import adversarial_weights
        p = adversarial_weights(model, batch, config)
        assert np.allclose(p, 0.5)

    def test_matches_expression_core(self):
        model, config, _ = tiny_model(lam=0.7)
        batch = TripleBatch(positives=np.array([[0, 0, 1]]),
                            neg_entities=np.array([[2, 4, 5]]),
                            neg_is_head=np.array([[True, False, True]]))
        loss, _ = self_adversarial_loss(model, batch, config)
        h, r, t = 0, 0, 1
        d_pos = -float(model.score([h], [r], [t])[0])
        d_neg = []
        for e, is_head in zip([2, 4, 5], [True, False, True]):
            trip = (e, r, t) if is_head else (h, r, e)
            d_neg.append(-float(model.score([trip[0]], [trip[1]], [trip[2]])[0]))
        d_neg = np.array(d_neg)
        logits = -config.adversarial_temperature * d_neg
        p = np.exp(logits - logits.max())
        p /= p.sum()
        assert abs(loss - adversarial_nll(config.margin, d_pos, d_neg, p)) < 1e-10

    def test_negative_permutation_invariance(self):
        model, config, _ = tiny_model()
        ents = np.array([[2, 4, 5]])
        heads = np.array([[True, False, True]])
        base = self_adversarial_loss(model, TripleBatch(np.array([[0, 0, 1]]), ents, heads),
                                     config)[0]
        perm = [2, 0, 1]
        shuffled = self_adversarial_loss(
            model, TripleBatch(np.array([[0, 0, 1]]), ents[:, perm], heads[:, perm]),
            config)[0]
        assert abs(base - shuffled) < 1e-12

    def test_gradients_match_finite_differences(self):
        for detach in (True, False):
            reports = check_completion_loss(seed=3, dim=8, detach=detach)
            for name, rep in reports.items():
                assert rep.passed, f"{name} ({'detached' if detach else 'coupled'}): {rep}"

    def test_gradients_with_proto_penalty(self):
        reports = check_completion_loss(seed=5, dim=8, proto_penalty=0.1)
        for name, rep in reports.items():
            assert rep.passed, f"{name}: {rep}"

    def test_nonfinite_reports_triple(self):
        model, config, _ = tiny_model()
        model.entities.values[0] = np.inf
        batch = TripleBatch(positives=np.array([[0, 0, 1]]),
                            neg_entities=np.array([[2]]),
                            neg_is_head=np.array([[True]]))
        with np.errstate(all="ignore"), pytest.raises(FloatingPointError):
            self_adversarial_loss(model, batch, config)


class TestSampleNegatives:
    def test_forced_candidate(self):
        # every head but e4 forms a training triple with (r0, t=1)
        train = frozenset({(0, 0, 1), (1, 0, 1), (2, 0, 1), (3, 0, 1), (5, 0, 1)})
        rng = np.random.default_rng(0)
        ents, _ = sample_negatives((0, 0, 1), 5, "head", rng, 6, train)
        assert (ents == 4).all()

    def test_count_and_determinism(self):
        train = frozenset({(0, 0, 1)})
        a, ah = sample_negatives((0, 0, 1), 4, "both", np.random.default_rng(9), 6, train)
        b, bh = sample_negatives((0, 0, 1), 4, "both", np.random.default_rng(9), 6, train)
        assert len(a) == 4
        assert np.array_equal(a, b) and np.array_equal(ah, bh)

    def test_never_reproduces_training_triple(self):
        rng = np.random.default_rng(1)
        train = frozenset({(0, 0, 1), (1, 0, 1), (0, 0, 2), (3, 0, 1), (0, 0, 4)})
        for _ in range(50):
            ents, is_head = sample_negatives((0, 0, 1), 3, "both", rng, 6, train)
            for e, ih in zip(ents, is_head):
                trip = (int(e), 0, 1) if ih else (0, 0, int(e))
                assert trip not in train

    def test_pool_exhausted(self):
        train = frozenset({(h, 0, 1) for h in range(3)})
        with pytest.raises(ValueError, match="negative_sample_size"):
            sample_negatives((0, 0, 1), 2, "head", np.random.default_rng(0), 3, train)

    def test_mode_restricts_side(self):
        train = frozenset({(0, 0, 1)})
        _, is_head = sample_negatives((0, 0, 1), 6, "tail", np.random.default_rng(2), 6, train)
        assert not is_head.any()


class TestTraining:
    def test_lambda_one_curve_equals_baseline(self):
        ds = make_completion_fixture(n_entities=48, n_relations=2, seed=1)
        curves = {}
        for kind, lam in (("rotate", 1.0), ("rpe-rotate", 1.0)):
            cfg = CompletionConfig(dim=8, batch_size=8, negative_sample_size=4,
                                   margin=4.0, lambda_weight=lam, learning_rate=0.01,
                                   max_steps=40, eval_every=0, seed=7)
            res = train_completion(ds, cfg, kind)
            curves[kind] = [loss for _, loss, _ in res.curve]
        diff = np.abs(np.array(curves["rotate"]) - np.array(curves["rpe-rotate"])).max()
        assert diff <= 1e-9

    def test_lambda_one_scores_equal_coordinatewise(self):
        ds = make_completion_fixture(n_entities=48, n_relations=2, seed=2)
        graph = augment_with_prototypes(ds.graph)
        cfg = CompletionConfig(dim=8, lambda_weight=1.0, seed=3)
        rot = CompletionModel(graph, cfg, "rotate")
        rpe = CompletionModel(graph, cfg, "rpe-rotate")
        rng = np.random.default_rng(0)
        n = graph.n_entities
        h = rng.integers(0, n, size=10000)
        r = rng.integers(0, graph.n_relations, size=10000)
        t = rng.integers(0, n, size=10000)
        diff = np.abs(rot.score(h, r, t) - rpe.score(h, r, t))
        assert diff.max() <= 1e-15

    def test_divergence_aborts(self):
        # Adam steps are learning-rate sized, so the blowup needs a rate that
        # overflows the squared distances within a few steps
        ds = make_completion_fixture(n_entities=48, n_relations=2, seed=3)
        cfg = CompletionConfig(dim=4, batch_size=4, negative_sample_size=2,
                               learning_rate=1e160, max_steps=10, eval_every=0, seed=0)
        with np.errstate(all="ignore"), pytest.raises(FloatingPointError):
            train_completion(ds, cfg, "rotate")

    def test_loss_curve_recorded_and_decreasing_on_average(self):
        ds = make_completion_fixture(n_entities=48, n_relations=2, seed=4)
        cfg = CompletionConfig(dim=8, batch_size=16, negative_sample_size=4,
                               margin=4.0, learning_rate=0.01, max_steps=120,
                               eval_every=0, seed=1)
        res = train_completion(ds, cfg, "rpe-rotate")
        losses = [loss for _, loss, _ in res.curve]
        assert len(losses) == 120
        assert np.mean(losses[-20:]) < np.mean(losses[:20])
