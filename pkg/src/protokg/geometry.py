"""Numerical certification of the prototype geometry: per-relation prototype
areas (center + max member distance), the closed-form ball distance, the
score-bound lemma, and the separated-area ordering theorems for completion
and for cross-graph alignment.

Checks never assert a conclusion when a premise fails; such entries are
reported as premise-failed with the measured residual.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .kg import HEAD, TAIL, AugmentedGraph
from .optim import phases_to_complex
from .rotate import aggregate_with_prototype, rotate_score

EXACT_TOL = 1e-9      # residuals of exact-arithmetic claims
SAMPLED_TOL = 1e-6    # sampled strict inequalities


@dataclass
class PrototypeArea:
    center: np.ndarray
    radius: float
    side: str
    relation_id: int
    member_ids: tuple[int, ...]

    def __post_init__(self):
        if not self.member_ids:
            raise ValueError(
                f"prototype area for relation {self.relation_id} ({self.side}) has no members")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")


def build_areas(entity_vecs: np.ndarray, proto_vecs: np.ndarray,
                graph: AugmentedGraph, lam: float = 1.0) -> list[PrototypeArea]:
    """One area per head and tail prototype; with lam applied the members are
    the aggregated embeddings, so radii shrink by exactly lam.

    Vectors may be real or complex; norms are Euclidean over the underlying
    reals. Areas are ordered head r=0.. then tail r=0..
    """
    areas = []
    for side in (HEAD, TAIL):
        for r in range(graph.n_relations):
            pid = graph.proto_head_of(r) if side == HEAD else graph.proto_tail_of(r)
            members = graph.entity_neighbors_of_proto(pid)
            if not members:
                raise ValueError(f"relation {r} has no {side} members")
            center = proto_vecs[graph.proto_row(pid)]
            pts = entity_vecs[list(members)]
            if lam != 1.0:
                pts = aggregate_with_prototype(pts, center, lam)
            radius = float(np.linalg.norm(pts - center, axis=1).max())
            areas.append(PrototypeArea(center=center, radius=radius, side=side,
                                       relation_id=r, member_ids=members))
    return areas


def area_distance(a: PrototypeArea, b: PrototypeArea) -> float:
    """inf distance between two balls: max(0, ||c_a - c_b|| - r_a - r_b)."""
    return max(0.0, float(np.linalg.norm(a.center - b.center)) - a.radius - b.radius)


def _same_area(a: PrototypeArea, b: PrototypeArea) -> bool:
    # the area collection is a set: identical balls collapse to one element
    return a.radius == b.radius and np.array_equal(a.center, b.center)


@dataclass
class TheoryCheck:
    name: str
    premise_holds: bool
    premise_margin: float
    conclusion_holds: bool | None = None
    margin: float | None = None
    counterexample: dict | None = None

    @property
    def failed(self) -> bool:
        return self.premise_holds and self.conclusion_holds is False

    def to_dict(self) -> dict:
        return {"name": self.name, "premise_holds": self.premise_holds,
                "premise_margin": self.premise_margin,
                "conclusion_holds": self.conclusion_holds, "margin": self.margin,
                "counterexample": self.counterexample}


@dataclass
class TheoryReport:
    checks: list[TheoryCheck]

    @property
    def all_passed(self) -> bool:
        return not any(c.failed for c in self.checks)

    def counts(self) -> dict[str, int]:
        passed = sum(1 for c in self.checks if c.premise_holds and c.conclusion_holds)
        failed = sum(1 for c in self.checks if c.failed)
        skipped = sum(1 for c in self.checks if not c.premise_holds)
        return {"passed": passed, "failed": failed, "premise_failed": skipped}

    def to_json(self) -> str:
        return json.dumps({"checks": [c.to_dict() for c in self.checks],
                           "counts": self.counts(), "all_passed": self.all_passed},
                          sort_keys=True, indent=2, default=float)

    def to_text(self) -> str:
        lines = []
        for c in self.checks:
            if not c.premise_holds:
                status = "PREMISE-FAILED"
                detail = f"premise margin {c.premise_margin:.3e}"
            else:
                status = "PASS" if c.conclusion_holds else "FAIL"
                detail = f"margin {c.margin:.3e}"
            lines.append(f"{c.name:<40} {status:<15} {detail}")
        counts = self.counts()
        lines.append(f"passed={counts['passed']} failed={counts['failed']} "
                     f"premise_failed={counts['premise_failed']}")
        return "\n".join(lines)


def check_lemma1(h, t, r_phase, p_head, p_tail, tol: float = EXACT_TOL) -> TheoryCheck:
    """Score bounds under the prototype-consistency assumption P_H o r = P_T:

        f >= -||h - P_H|| - ||t - P_T||
        f <=  ||t - P_T|| - ||h - P_H||
        f <=  ||h - P_H|| - ||t - P_T||
    """
    h, t = np.asarray(h), np.asarray(t)
    p_head, p_tail = np.asarray(p_head), np.asarray(p_tail)
    rot = phases_to_complex(np.asarray(r_phase))
    residual = float(np.linalg.norm(p_head * rot - p_tail))
    if residual > tol:
        return TheoryCheck(name="lemma-score-bounds", premise_holds=False,
                           premise_margin=tol - residual)
    f = float(rotate_score(h, r_phase, t))
    a = float(np.linalg.norm(h - p_head))
    b = float(np.linalg.norm(t - p_tail))
    margins = (f + a + b, (b - a) - f, (a - b) - f)
    worst = min(margins)
    ok = worst >= -tol
    ce = None if ok else {"f": f, "dist_head": a, "dist_tail": b, "margins": list(margins)}
    return TheoryCheck(name="lemma-score-bounds", premise_holds=True,
                       premise_margin=tol - residual, conclusion_holds=ok,
                       margin=worst, counterexample=ce)


def sample_in_ball(center: np.ndarray, radius: float, n: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Uniform samples in a Euclidean ball; complex centers sample the
    underlying real space of twice the dimension."""
    is_complex = np.iscomplexobj(center)
    d = center.size * (2 if is_complex else 1)
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    radii = radius * rng.random(n) ** (1.0 / d)
    pts = g * radii[:, None]
    if is_complex:
        pts = pts[:, :center.size] + 1j * pts[:, center.size:]
    return center[None, :] + pts


def _region_points(area: PrototypeArea, entity_vecs, lam: float, n: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Ball samples plus the actual (aggregated) member embeddings."""
    pts = sample_in_ball(area.center, area.radius, n, rng)
    members = entity_vecs[list(area.member_ids)]
    if lam != 1.0:
        members = aggregate_with_prototype(members, area.center, lam)
    return np.concatenate([pts, members], axis=0)


def check_theorem_completion(areas: list[PrototypeArea], relation_id: int,
                             r_phase: np.ndarray, entity_vecs: np.ndarray,
                             rng: np.random.Generator, which: str = "thm1",
                             lam: float = 1.0, samples: int = 100,
                             tol: float = SAMPLED_TOL,
                             assumption_tol: float = EXACT_TOL) -> TheoryCheck:
    """Ordering of completion scores under the separated-area premise.

    thm1: if every other area is farther than 2 R_T from the head area, then
    f(h1, t) > f(h2, t) for h1 in the head area, t in the tail area, and h2
    in any other area. thm2 swaps the roles of head and tail.
    """
    by_key = {(a.side, a.relation_id): a for a in areas}
    c_head = by_key[(HEAD, relation_id)]
    c_tail = by_key[(TAIL, relation_id)]
    name = f"{which}-r{relation_id}"
    residual = float(np.linalg.norm(
        np.asarray(c_head.center) * phases_to_complex(np.asarray(r_phase))
        - np.asarray(c_tail.center)))
    if residual > assumption_tol:
        return TheoryCheck(name=name, premise_holds=False,
                           premise_margin=assumption_tol - residual)

    anchor, other_radius = (c_head, c_tail.radius) if which == "thm1" else (c_tail, c_head.radius)
    rivals = [a for a in areas if not _same_area(a, anchor)]
    if not rivals:
        return TheoryCheck(name=name, premise_holds=False, premise_margin=0.0)
    premise_margin = min(area_distance(a, anchor) - 2.0 * other_radius for a in rivals)
    if premise_margin <= 0:
        return TheoryCheck(name=name, premise_holds=False, premise_margin=premise_margin)

    in_head = _region_points(c_head, entity_vecs, lam, samples, rng)
    in_tail = _region_points(c_tail, entity_vecs, lam, samples, rng)
    outside = np.concatenate([_region_points(a, entity_vecs, lam, samples, rng)
                              for a in rivals], axis=0)
    worst = np.inf
    ce = None
    if which == "thm1":
        shared, good, bad = in_tail, in_head, outside
        score = lambda x, s: rotate_score(x, r_phase, s)
    else:
        shared, good, bad = in_head, in_tail, outside
        score = lambda x, s: rotate_score(s, r_phase, x)
    for s in shared:
        lo = float(score(good, s[None, :]).min())
        hi = float(score(bad, s[None, :]).max())
        if lo - hi < worst:
            worst = lo - hi
            if worst <= -tol:
                ce = {"shared_point": s.tolist() if not np.iscomplexobj(s)
                      else [complex(z).__repr__() for z in s],
                      "min_inside": lo, "max_outside": hi}
    ok = worst > -tol
    return TheoryCheck(name=name, premise_holds=True, premise_margin=premise_margin,
                       conclusion_holds=ok, margin=worst,
                       counterexample=None if ok else ce)


def check_theorem_alignment(areas_src: list[PrototypeArea],
                            areas_tgt: list[PrototypeArea],
                            correspondence: list[tuple[int, int]],
                            rng: np.random.Generator, samples: int = 100,
                            tol: float = SAMPLED_TOL,
                            match_tol: float = EXACT_TOL) -> list[TheoryCheck]:
    """Cross-graph retrieval ordering for corresponding areas, both
    directions. Requires corresponding areas equal within match_tol; the
    separated-area premise applies within the candidate graph."""
    checks = []
    for si, ti in correspondence:
        a_src, a_tgt = areas_src[si], areas_tgt[ti]
        mismatch = float(np.linalg.norm(a_src.center - a_tgt.center)
                         + abs(a_src.radius - a_tgt.radius))
        for direction, (query_area, cand_area, cand_all) in (
                ("src-to-tgt", (a_src, a_tgt, areas_tgt)),
                ("tgt-to-src", (a_tgt, a_src, areas_src))):
            name = f"align-{direction}-r{cand_area.relation_id}{cand_area.side[0]}"
            if mismatch > match_tol:
                checks.append(TheoryCheck(name=name, premise_holds=False,
                                          premise_margin=match_tol - mismatch))
                continue
            rivals = [a for a in cand_all if not _same_area(a, cand_area)]
            if not rivals:
                checks.append(TheoryCheck(name=name, premise_holds=False,
                                          premise_margin=0.0))
                continue
            premise_margin = min(area_distance(a, cand_area) - 2.0 * cand_area.radius
                                 for a in rivals)
            if premise_margin <= 0:
                checks.append(TheoryCheck(name=name, premise_holds=False,
                                          premise_margin=premise_margin))
                continue
            queries = sample_in_ball(query_area.center, query_area.radius, samples, rng)
            inside = sample_in_ball(cand_area.center, cand_area.radius, samples, rng)
            outside = np.concatenate(
                [sample_in_ball(a.center, a.radius, samples, rng) for a in rivals], axis=0)
            worst = np.inf
            for e in queries:
                near = float(np.linalg.norm(inside - e, axis=1).max())
                far = float(np.linalg.norm(outside - e, axis=1).min())
                worst = min(worst, far - near)
            ok = worst > -tol
            checks.append(TheoryCheck(name=name, premise_holds=True,
                                      premise_margin=premise_margin,
                                      conclusion_holds=ok, margin=worst))
    return checks


def min_prototype_separation(areas: list[PrototypeArea]) -> float:
    """Smallest pairwise center distance over distinct prototype areas; the
    no-identical-prototypes assumption has no quantitative form, so it is
    reported rather than asserted."""
    best = np.inf
    for i in range(len(areas)):
        for j in range(i + 1, len(areas)):
            if _same_area(areas[i], areas[j]):
                continue
            best = min(best, float(np.linalg.norm(areas[i].center - areas[j].center)))
    return best
