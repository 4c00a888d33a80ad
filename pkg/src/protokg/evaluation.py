"""Measurement: filtered-ranking completion metrics, alignment retrieval
metrics, the Davies-Bouldin clustering index, long-tail bucketing, and
embedding export with category labels.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .kg import HEAD, TAIL, KnowledgeGraph

TIE_POLICIES = ("mean", "optimistic", "pessimistic")


@dataclass
class QueryRank:
    head: int
    relation: int
    tail: int
    side: str      # the replaced slot
    rank: int

    @property
    def answer(self) -> int:
        return self.head if self.side == HEAD else self.tail


@dataclass
class RankingReport:
    mrr: float
    hits: dict[int, float]
    query_count: int
    ranks: list[QueryRank] | None = None

    def to_dict(self) -> dict:
        return {"mrr": self.mrr,
                "hits": {str(n): v for n, v in sorted(self.hits.items())},
                "query_count": self.query_count}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_text(self) -> str:
        parts = [f"MRR {self.mrr:.4f}"]
        parts += [f"H@{n} {v:.4f}" for n, v in sorted(self.hits.items())]
        return "  ".join(parts) + f"  ({self.query_count} queries)"


def rank_from_scores(scores: np.ndarray, answer: int, exclude,
                     policy: str = "mean") -> int:
    """Rank of the answer among non-excluded candidates by descending score.

    Ties: "mean" reports the mean rank among tied candidates rounded up,
    "optimistic" the best, "pessimistic" the worst. The answer itself is
    never excluded.
    """
    if policy not in TIE_POLICIES:
        raise ValueError(f"unknown tie policy {policy!r}")
    scores = np.asarray(scores, dtype=np.float64)
    keep = np.ones(len(scores), dtype=bool)
    exclude = np.asarray(list(exclude), dtype=np.int64) if not isinstance(exclude, np.ndarray) \
        else exclude
    if exclude.size:
        keep[exclude] = False
    keep[answer] = True
    target = scores[answer]
    cand = scores[keep]
    higher = int((cand > target).sum())
    ties = int((cand == target).sum()) - 1     # excluding the answer itself
    if policy == "optimistic":
        return 1 + higher
    if policy == "pessimistic":
        return 1 + higher + ties
    # mean rank among the tied block, rounded up: ceil(1 + higher + ties/2)
    twice = 2 * (1 + higher) + ties
    return (twice + 1) // 2


def filtered_rank(triple, side: str, score_fn, known_triples, n_entities: int,
                  policy: str = "mean") -> int:
    """Filtered rank for one query: the candidate set drops every entity that
    forms a known triple other than the query's own answer.

    ``score_fn(fixed_id, relation_id, side) -> scores`` over all entities,
    where ``side`` names the replaced slot.
    """
    h, r, t = triple
    if side == HEAD:
        exclude = [e for e in range(n_entities) if (e, r, t) in known_triples and e != h]
        scores = score_fn(t, r, HEAD)
        answer = h
    elif side == TAIL:
        exclude = [e for e in range(n_entities) if (h, r, e) in known_triples and e != t]
        scores = score_fn(h, r, TAIL)
        answer = t
    else:
        raise ValueError(f"side must be head or tail, got {side!r}")
    return rank_from_scores(scores, answer, np.asarray(exclude, dtype=np.int64), policy)


def _exclusion_index(known_triples):
    """(r, t) -> head ids and (h, r) -> tail ids for fast filtering."""
    by_rt: dict[tuple[int, int], list[int]] = {}
    by_hr: dict[tuple[int, int], list[int]] = {}
    for h, r, t in known_triples:
        by_rt.setdefault((r, t), []).append(h)
        by_hr.setdefault((h, r), []).append(t)
    return by_rt, by_hr


def _metrics(ranks: list[int], hits_at) -> tuple[float, dict[int, float]]:
    n = len(ranks)
    mrr = math.fsum(1.0 / r for r in ranks) / n
    hits = {k: sum(1 for r in ranks if r <= k) / n for k in hits_at}
    return mrr, hits


def completion_report(test_triples, score_fn, known_triples, n_entities: int,
                      policy: str = "mean", hits_at=(1, 3, 10),
                      collect_ranks: bool = False) -> RankingReport:
    """Filtered MRR and H@N over head and tail queries for every test triple."""
    by_rt, by_hr = _exclusion_index(known_triples)
    records: list[QueryRank] = []
    ranks: list[int] = []
    for h, r, t in test_triples:
        excl_h = np.asarray([e for e in by_rt.get((r, t), []) if e != h], dtype=np.int64)
        rank_h = rank_from_scores(score_fn(t, r, HEAD), h, excl_h, policy)
        excl_t = np.asarray([e for e in by_hr.get((h, r), []) if e != t], dtype=np.int64)
        rank_t = rank_from_scores(score_fn(h, r, TAIL), t, excl_t, policy)
        ranks += [rank_h, rank_t]
        if collect_ranks:
            records.append(QueryRank(h, r, t, HEAD, rank_h))
            records.append(QueryRank(h, r, t, TAIL, rank_t))
    mrr, hits = _metrics(ranks, hits_at)
    return RankingReport(mrr=mrr, hits=hits, query_count=len(ranks),
                         ranks=records if collect_ranks else None)


def alignment_report(test_pairs, emb1: np.ndarray, emb2: np.ndarray,
                     hits_at=(1, 10), policy: str = "mean",
                     both_directions: bool = True) -> RankingReport:
    """Rank each pair's true counterpart among all target-graph entities by
    Euclidean distance (ascending); directions pooled when enabled."""
    ranks: list[int] = []

    def _direction(src, tgt, pairs):
        for a, b in pairs:
            dists = np.linalg.norm(tgt - src[a], axis=1)
            ranks.append(rank_from_scores(-dists, b, np.empty(0, dtype=np.int64), policy))

    _direction(emb1, emb2, test_pairs)
    if both_directions:
        _direction(emb2, emb1, [(j, i) for i, j in test_pairs])
    mrr, hits = _metrics(ranks, hits_at)
    return RankingReport(mrr=mrr, hits=hits, query_count=len(ranks))


# ---------------------------------------------------------------------------
# categories and clustering

@dataclass(frozen=True)
class Category:
    relation_id: int
    side: str
    members: tuple[int, ...]

    @property
    def label(self) -> str:
        return f"{self.relation_id}{'h' if self.side == HEAD else 't'}"


class CategoryAssignment:
    """Category membership derived from triples: entity e belongs to
    (r, head) iff some (e, r, t) exists, and to (r, tail) symmetrically."""

    def __init__(self, kg: KnowledgeGraph):
        self.kg = kg
        members: dict[tuple[int, str], set[int]] = {}
        entity_cats: dict[int, set[tuple[int, str]]] = {}
        for h, r, t in kg.triples:
            members.setdefault((r, HEAD), set()).add(h)
            members.setdefault((r, TAIL), set()).add(t)
            entity_cats.setdefault(h, set()).add((r, HEAD))
            entity_cats.setdefault(t, set()).add((r, TAIL))
        self._members = members
        self._entity_cats = entity_cats

    def categories(self, sides=(HEAD, TAIL)) -> list[Category]:
        out = [Category(r, side, tuple(sorted(m)))
               for (r, side), m in self._members.items() if side in sides]
        return sorted(out, key=lambda c: (c.side, c.relation_id))

    def categories_of(self, entity_id: int) -> set[tuple[int, str]]:
        return set(self._entity_cats.get(entity_id, set()))

    def filtered(self, min_members: int = 100, require_disjoint: bool = True,
                 sides=(HEAD, TAIL)) -> list[Category]:
        """Categories with >= min_members whose members (optionally) belong to
        no other category."""
        kept = []
        for cat in self.categories(sides):
            if len(cat.members) < min_members:
                continue
            if require_disjoint and any(len(self._entity_cats[e]) > 1 for e in cat.members):
                continue
            kept.append(cat)
        return kept


def davies_bouldin(embeddings: np.ndarray, categories: list[Category]) -> float:
    """DBI = mean over clusters of max_j (S_i + S_j) / M_ij with S the mean
    member-to-centroid distance and M the centroid separation; lower is
    better. Raises on coincident centroids, naming the categories."""
    if len(categories) < 2:
        raise ValueError("need at least 2 categories")
    cents, scatters = [], []
    for cat in categories:
        if not cat.members:
            raise ValueError(f"category {cat.label} is empty")
        pts = embeddings[list(cat.members)]
        c = pts.mean(axis=0)
        cents.append(c)
        scatters.append(float(np.linalg.norm(pts - c, axis=1).mean()))
    cents = np.asarray(cents)
    total = 0.0
    for i in range(len(categories)):
        worst = -np.inf
        for j in range(len(categories)):
            if i == j:
                continue
            sep = float(np.linalg.norm(cents[i] - cents[j]))
            if sep == 0.0:
                raise ValueError(
                    f"coincident centroids for categories {categories[i].label} "
                    f"and {categories[j].label}")
            worst = max(worst, (scatters[i] + scatters[j]) / sep)
        total += worst
    return total / len(categories)


# ---------------------------------------------------------------------------
# long-tail buckets

@dataclass
class LongTailBucket:
    max_links: int | None      # None = the "all" row
    mrr_baseline: float | None
    mrr_rpe: float | None
    query_count: int


@dataclass
class LongTailReport:
    buckets: list[LongTailBucket]

    def to_dict(self) -> dict:
        return {"buckets": [{"max_links": b.max_links, "mrr_baseline": b.mrr_baseline,
                             "mrr_rpe": b.mrr_rpe, "query_count": b.query_count}
                            for b in self.buckets]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_text(self) -> str:
        lines = [f"{'max links':>10} {'queries':>8} {'baseline':>10} {'ours':>10}"]
        for b in self.buckets:
            tag = "all" if b.max_links is None else str(b.max_links)
            mb = "-" if b.mrr_baseline is None else f"{b.mrr_baseline:.4f}"
            mo = "-" if b.mrr_rpe is None else f"{b.mrr_rpe:.4f}"
            lines.append(f"{tag:>10} {b.query_count:>8} {mb:>10} {mo:>10}")
        return "\n".join(lines)


def long_tail_report(baseline_ranks: list[QueryRank], rpe_ranks: list[QueryRank],
                     degree_fn, thresholds=(5, 10, 20, 50)) -> LongTailReport:
    """Bucketed MRR by the answer-side entity degree.

    Both rank lists must cover the same queries in the same order; bucket N
    holds the queries whose answer entity has degree <= N.
    """
    if len(baseline_ranks) != len(rpe_ranks):
        raise ValueError("rank lists must cover the same queries")
    degrees = [degree_fn(q.answer) for q in baseline_ranks]
    buckets = []
    for n in list(thresholds) + [None]:
        idx = [k for k, d in enumerate(degrees) if n is None or d <= n]
        if not idx:
            buckets.append(LongTailBucket(n, None, None, 0))
            continue
        mrr_b = math.fsum(1.0 / baseline_ranks[k].rank for k in idx) / len(idx)
        mrr_r = math.fsum(1.0 / rpe_ranks[k].rank for k in idx) / len(idx)
        buckets.append(LongTailBucket(n, mrr_b, mrr_r, len(idx)))
    return LongTailReport(buckets=buckets)


def export_embeddings_with_categories(labels: list[str], embeddings: np.ndarray,
                                      categories: list[Category], path):
    """CSV rows: entity label, joined category labels, then the embedding
    floats at full precision. Only entities covered by the given categories
    are exported."""
    cat_of: dict[int, list[str]] = {}
    for cat in categories:
        for e in cat.members:
            cat_of.setdefault(e, []).append(cat.label)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for e in sorted(cat_of):
            writer.writerow([labels[e], "|".join(sorted(cat_of[e]))]
                            + [repr(float(x)) for x in embeddings[e]])
