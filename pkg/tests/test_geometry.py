import numpy as np
import pytest

from protokg.geometry import (PrototypeArea, TheoryReport, area_distance,
                              build_areas, check_lemma1, check_theorem_alignment,
                              check_theorem_completion, min_prototype_separation,
                              sample_in_ball)
from protokg.kg import KnowledgeGraph, Vocabulary, augment_with_prototypes
from protokg.optim import phases_to_complex
from protokg.rotate import rotate_score
from protokg.synthetic import make_constructed_theory_instance


def build_kg(triples, n, m=2):
    entities, relations = Vocabulary(), Vocabulary()
    for i in range(n):
        entities.add(f"e{i}")
    for r in range(m):
        relations.add(f"r{r}")
    return KnowledgeGraph(entities, relations, triples, name="geo")


class TestBuildAreas:
    def test_radius_is_max_member_distance(self):
        kg = build_kg([(0, 0, 3), (1, 0, 3), (2, 0, 3)], 4, 1)
        aug = augment_with_prototypes(kg)
        ent = np.array([[1.0], [2.0], [3.0], [0.0]], dtype=complex)
        proto = np.zeros((2, 1), dtype=complex)
        areas = build_areas(ent, proto, aug)
        head = next(a for a in areas if a.side == "head")
        assert head.radius == 3.0

    def test_shrinkage_by_lambda(self):
        rng = np.random.default_rng(0)
        n, m = 60, 3
        triples = sorted({(int(rng.integers(n)), int(rng.integers(m)), int(rng.integers(n)))
                          for _ in range(500)})
        kg = build_kg(triples, n, m)
        aug = augment_with_prototypes(kg)
        k = 6
        ent = rng.normal(size=(n, k)) + 1j * rng.normal(size=(n, k))
        proto = rng.normal(size=(2 * m, k)) + 1j * rng.normal(size=(2 * m, k))
        full = build_areas(ent, proto, aug, lam=1.0)
        for lam in (0.1, 0.5, 0.9):
            shrunk = build_areas(ent, proto, aug, lam=lam)
            for a, b in zip(full, shrunk):
                assert abs(b.radius - lam * a.radius) < 1e-12

    def test_member_equal_to_center_zero_radius(self):
        kg = build_kg([(0, 0, 1)], 2, 1)
        aug = augment_with_prototypes(kg)
        ent = np.array([[2.0 + 1.0j], [5.0]])
        proto = np.array([[2.0 + 1.0j], [0.0]])
        areas = build_areas(ent, proto, aug)
        head = next(a for a in areas if a.side == "head")
        assert head.radius == 0.0

    def test_relation_without_members_rejected(self):
        kg = build_kg([(0, 0, 1)], 2, 2)   # relation 1 never used
        aug = augment_with_prototypes(kg)
        with pytest.raises(ValueError, match="relation 1"):
            build_areas(np.zeros((2, 1), dtype=complex),
                        np.zeros((4, 1), dtype=complex), aug)


class TestAreaDistance:
    def area(self, center, radius):
        return PrototypeArea(center=np.asarray(center, dtype=float), radius=radius,
                             side="head", relation_id=0, member_ids=(0,))

    def test_separated_balls(self):
        a, b = self.area([0.0, 0.0], 1.0), self.area([10.0, 0.0], 2.0)
        assert area_distance(a, b) == 7.0

    def test_overlap_clamps_to_zero(self):
        a, b = self.area([0.0], 2.0), self.area([1.0], 2.0)
        assert area_distance(a, b) == 0.0

    def test_identical_areas(self):
        a = self.area([3.0, 4.0], 0.5)
        assert area_distance(a, a) == 0.0

    def test_symmetry_and_pseudo_triangle(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            a = self.area(rng.normal(size=3), float(abs(rng.normal())))
            b = self.area(rng.normal(size=3), float(abs(rng.normal())))
            c = self.area(rng.normal(size=3), float(abs(rng.normal())))
            assert area_distance(a, b) == area_distance(b, a)
            assert area_distance(a, c) >= (area_distance(a, b) - area_distance(b, c)
                                           - 2 * b.radius) - 1e-12


class TestLemma:
    def test_real_line_equality_case(self):
        # P_H = P_T = 1, phase 0, h = 1.5, t = 0.5: f = -1 meets the lower bound
        check = check_lemma1(np.array([1.5 + 0j]), np.array([0.5 + 0j]),
                             np.array([0.0]), np.array([1.0 + 0j]), np.array([1.0 + 0j]))
        assert check.premise_holds and check.conclusion_holds
        assert abs(check.margin) < 1e-12

    def test_prototype_points_all_bounds_tight(self):
        p = np.array([0.7 - 0.2j, 1.1 + 0.4j])
        phase = np.array([0.3, -1.2])
        pt = p * phases_to_complex(phase)
        check = check_lemma1(p, pt, phase, p, pt)
        assert check.conclusion_holds and abs(check.margin) < 1e-12

    def test_random_instances_never_violate(self):
        rng = np.random.default_rng(2)
        worst = np.inf
        for _ in range(10_000):
            k = 3
            h = rng.normal(size=k) + 1j * rng.normal(size=k)
            t = rng.normal(size=k) + 1j * rng.normal(size=k)
            p_h = rng.normal(size=k) + 1j * rng.normal(size=k)
            phase = rng.uniform(-np.pi, np.pi, size=k)
            p_t = p_h * phases_to_complex(phase)   # assumption by construction
            check = check_lemma1(h, t, phase, p_h, p_t, tol=1e-9)
            assert check.premise_holds
            assert check.conclusion_holds
            worst = min(worst, check.margin)
        assert worst >= -1e-9

    def test_negative_control_flags_broken_assumption(self):
        rng = np.random.default_rng(3)
        k = 2
        h = rng.normal(size=k) + 1j * rng.normal(size=k)
        t = rng.normal(size=k) + 1j * rng.normal(size=k)
        p_h = rng.normal(size=k) + 1j * rng.normal(size=k)
        phase = rng.uniform(-np.pi, np.pi, size=k)
        p_t = p_h * phases_to_complex(phase) + 0.5   # violates the assumption
        check = check_lemma1(h, t, phase, p_h, p_t, tol=1e-9)
        assert not check.premise_holds
        assert check.conclusion_holds is None


class TestTheoremCompletion:
    def test_constructed_instance_passes(self):
        inst = make_constructed_theory_instance(separation=10.0, radius=0.1)
        rng = np.random.default_rng(4)
        for which in ("thm1", "thm2"):
            check = check_theorem_completion(inst.areas, inst.relation_id,
                                             inst.r_phases[0], inst.entity_vecs,
                                             rng, which=which, samples=100)
            assert check.premise_holds
            assert check.premise_margin > 0
            assert check.conclusion_holds, check.margin

    def test_spec_example_premise_margin(self):
        # identical head/tail areas at the origin collapse as a set; the
        # second area sits 10 away with radius 0.1 each side: d = 9.8 > 0.2
        inst = make_constructed_theory_instance(separation=10.0, radius=0.1)
        rng = np.random.default_rng(5)
        check = check_theorem_completion(inst.areas, 0, inst.r_phases[0],
                                         inst.entity_vecs, rng, which="thm1")
        assert abs((check.premise_margin + 2 * 0.1) - 9.8) < 1e-9

    def test_overlapping_areas_premise_failed(self):
        inst = make_constructed_theory_instance(separation=0.05, radius=0.1)
        rng = np.random.default_rng(6)
        check = check_theorem_completion(inst.areas, 0, inst.r_phases[0],
                                         inst.entity_vecs, rng, which="thm1")
        assert not check.premise_holds
        assert check.conclusion_holds is None   # conclusion never asserted

    def test_broken_rotation_assumption_premise_failed(self):
        inst = make_constructed_theory_instance(separation=10.0, radius=0.1)
        rng = np.random.default_rng(7)
        check = check_theorem_completion(inst.areas, 0, np.array([1.0]),
                                         inst.entity_vecs, rng, which="thm1")
        # areas sit at the origin so the rotated head prototype still matches;
        # move them off-origin to break P_H o r = P_T
        shifted = [PrototypeArea(center=a.center + 1.0, radius=a.radius, side=a.side,
                                 relation_id=a.relation_id, member_ids=a.member_ids)
                   for a in inst.areas]
        check = check_theorem_completion(shifted, 0, np.array([1.0]),
                                         inst.entity_vecs + 1.0, rng, which="thm1")
        assert not check.premise_holds

    def test_premise_indicator_monotone_in_lambda(self):
        # with fixed centers, smaller lambda shrinks radii, so the premise
        # can only switch from failing to holding as lambda decreases
        rng = np.random.default_rng(8)
        n, m, k = 40, 2, 2
        triples = sorted({(int(rng.integers(n)), int(rng.integers(m)), int(rng.integers(n)))
                          for _ in range(120)})
        kg = build_kg(triples, n, m)
        aug = augment_with_prototypes(kg)

        def premise_profile(spread):
            proto = (rng.normal(size=(2 * m, k)) + 1j * rng.normal(size=(2 * m, k)))
            proto = proto + spread * np.arange(2 * m)[:, None]
            ent = proto[np.zeros(n, dtype=int)] + 0.3 * (
                rng.normal(size=(n, k)) + 1j * rng.normal(size=(n, k)))
            holds = []
            for lam in np.linspace(0.05, 1.0, 12):
                areas = build_areas(ent, proto, aug, lam=lam)
                anchor = next(a for a in areas if a.side == "head" and a.relation_id == 0)
                tail = next(a for a in areas if a.side == "tail" and a.relation_id == 0)
                rivals = [a for a in areas
                          if not (a.radius == anchor.radius
                                  and np.array_equal(a.center, anchor.center))]
                margin = min(area_distance(a, anchor) - 2 * tail.radius for a in rivals)
                holds.append(margin > 0)
            return holds

        for spread in (3.0, 6.0, 12.0):
            holds = premise_profile(spread)
            # once the premise fails at some lambda it never recovers above it
            seen_fail = False
            for ok in holds:
                if not ok:
                    seen_fail = True
                assert not (seen_fail and ok)


class TestTheoremAlignment:
    def test_identical_corresponding_areas_pass(self):
        inst = make_constructed_theory_instance(separation=10.0, radius=0.1)
        mirror = [PrototypeArea(center=a.center.copy(), radius=a.radius, side=a.side,
                                relation_id=a.relation_id, member_ids=a.member_ids)
                  for a in inst.areas]
        rng = np.random.default_rng(9)
        checks = check_theorem_alignment(inst.areas, mirror,
                                         [(i, i) for i in range(len(inst.areas))], rng)
        assert checks
        for c in checks:
            assert c.premise_holds
            assert c.conclusion_holds

    def test_query_at_center_is_top_score(self):
        center = np.array([2.0 + 1.0j])
        e = center.copy()
        assert np.linalg.norm(e - center) == 0.0   # distance 0: maximal score

    def test_mismatched_correspondence_premise_failed(self):
        inst = make_constructed_theory_instance(separation=10.0, radius=0.1)
        moved = [PrototypeArea(center=a.center + 0.5, radius=a.radius, side=a.side,
                               relation_id=a.relation_id, member_ids=a.member_ids)
                 for a in inst.areas]
        rng = np.random.default_rng(10)
        checks = check_theorem_alignment(inst.areas, moved,
                                         [(0, 0)], rng)
        assert all(not c.premise_holds for c in checks)

    def test_overlapping_target_areas_premise_failed(self):
        inst = make_constructed_theory_instance(separation=0.01, radius=0.1)
        mirror = [PrototypeArea(center=a.center.copy(), radius=a.radius, side=a.side,
                                relation_id=a.relation_id, member_ids=a.member_ids)
                  for a in inst.areas]
        rng = np.random.default_rng(11)
        checks = check_theorem_alignment(inst.areas, mirror, [(0, 0)], rng)
        assert all(not c.premise_holds for c in checks)


class TestReportPlumbing:
    def test_sample_in_ball_stays_inside(self):
        rng = np.random.default_rng(12)
        center = np.array([1.0 + 2.0j, -0.5 + 0.0j])
        pts = sample_in_ball(center, 0.7, 500, rng)
        d = np.linalg.norm(pts - center, axis=1)
        assert (d <= 0.7 + 1e-12).all()

    def test_report_counts_and_json(self):
        inst = make_constructed_theory_instance()
        rng = np.random.default_rng(13)
        good = check_theorem_completion(inst.areas, 0, inst.r_phases[0],
                                        inst.entity_vecs, rng)
        bad_inst = make_constructed_theory_instance(separation=0.05)
        skipped = check_theorem_completion(bad_inst.areas, 0, bad_inst.r_phases[0],
                                           bad_inst.entity_vecs, rng)
        report = TheoryReport(checks=[good, skipped])
        counts = report.counts()
        assert counts["passed"] == 1 and counts["premise_failed"] == 1
        assert report.all_passed   # premise-failed entries do not fail the report
        assert '"all_passed": true' in report.to_json()
        assert "PREMISE-FAILED" in report.to_text()

    def test_min_prototype_separation(self):
        inst = make_constructed_theory_instance(separation=10.0, radius=0.1)
        assert abs(min_prototype_separation(inst.areas) - 10.0) < 1e-12
