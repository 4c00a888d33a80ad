"""Knowledge-graph storage: vocabularies, triples, dataset ingestion, and
prototype-node augmentation.

All types are immutable after construction and safe for shared reads. Entity
and relation ids are dense integers assigned in first-appearance order.
Prototype nodes occupy a contiguous id block after the entity ids: the head
prototype of relation r is ``n_entities + r`` and the tail prototype is
``n_entities + n_relations + r``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

Triple = tuple[int, int, int]

HEAD = "head"
TAIL = "tail"


class Vocabulary:
    """Bijective label <-> dense-id map; ids assigned in first-appearance order."""

    __slots__ = ("_label_to_id", "_labels")

    def __init__(self):
        self._label_to_id: dict[str, int] = {}
        self._labels: list[str] = []

    def add(self, label: str) -> int:
        idx = self._label_to_id.get(label)
        if idx is None:
            idx = len(self._labels)
            self._label_to_id[label] = idx
            self._labels.append(label)
        return idx

    def id_of(self, label: str) -> int:
        try:
            return self._label_to_id[label]
        except KeyError:
            raise KeyError(f"unknown label: {label!r}") from None

    def label_of(self, idx: int) -> str:
        return self._labels[idx]

    @property
    def labels(self) -> list[str]:
        return list(self._labels)

    def __len__(self) -> int:
        return len(self._labels)

    def __contains__(self, label: str) -> bool:
        return label in self._label_to_id


@dataclass
class TripleFormat:
    """Descriptor for a triple TSV file.

    ``ids=True`` means the three fields are pre-assigned integer ids, which
    are honored verbatim and validated for density; otherwise fields are
    opaque labels.
    """

    sep: str = "\t"
    ids: bool = False


@dataclass(frozen=True)
class DatasetStats:
    name: str
    relation_count: int
    entity_count: int
    triple_count: int
    train_count: int | None = None
    valid_count: int | None = None
    test_count: int | None = None

    def to_text(self) -> str:
        lines = []
        for key, value in sorted(self.to_dict().items()):
            if value is not None:
                lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "relation_count": self.relation_count,
            "entity_count": self.entity_count,
            "triple_count": self.triple_count,
            "train_count": self.train_count,
            "valid_count": self.valid_count,
            "test_count": self.test_count,
        }

    def to_json(self) -> str:
        return json.dumps({k: v for k, v in self.to_dict().items() if v is not None},
                          sort_keys=True, indent=2)


class KnowledgeGraph:
    """Entity/relation vocabularies plus the deduplicated triple list.

    Immutable after construction. ``duplicates_dropped`` counts input lines
    discarded because an identical (h, r, t) was already ingested.
    """

    def __init__(self, entities: Vocabulary, relations: Vocabulary,
                 triples: list[Triple], name: str = "", duplicates_dropped: int = 0):
        self.entities = entities
        self.relations = relations
        self.triples = list(triples)
        self.name = name
        self.duplicates_dropped = duplicates_dropped
        self._validate()
        self._triple_set = frozenset(self.triples)
        self._neighbors: list[tuple[int, ...]] | None = None

    def _validate(self):
        n, m = len(self.entities), len(self.relations)
        for h, r, t in self.triples:
            if not (0 <= h < n and 0 <= t < n):
                raise ValueError(f"entity id out of range in triple ({h},{r},{t}); |E|={n}")
            if not (0 <= r < m):
                raise ValueError(f"relation id out of range in triple ({h},{r},{t}); |R|={m}")
        if len(self._dedup()) != len(self.triples):
            raise ValueError("duplicate triples in constructed graph")

    def _dedup(self):
        return set(self.triples)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def triple_set(self) -> frozenset:
        return self._triple_set

    def neighbor_sets(self) -> list[tuple[int, ...]]:
        """One-hop entity neighbors per entity: undirected, self excluded, sorted."""
        if self._neighbors is None:
            nbrs: list[set[int]] = [set() for _ in range(self.n_entities)]
            for h, _, t in self.triples:
                if h != t:
                    nbrs[h].add(t)
                    nbrs[t].add(h)
            self._neighbors = [tuple(sorted(s)) for s in nbrs]
        return self._neighbors

    def degree_of(self, entity_id: int) -> int:
        """Number of distinct one-hop entity neighbors (undirected, self excluded)."""
        if not (0 <= entity_id < self.n_entities):
            raise ValueError(f"invalid entity id {entity_id} (|E|={self.n_entities})")
        return len(self.neighbor_sets()[entity_id])

    def stats(self) -> DatasetStats:
        return DatasetStats(name=self.name, relation_count=self.n_relations,
                            entity_count=self.n_entities, triple_count=len(self.triples))


def _parse_triple_lines(path, fmt: TripleFormat):
    """Yield (line_number, field_triple) for each non-empty line."""
    text = Path(path).read_text(encoding="utf-8")
    seen_any = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        fields = line.split(fmt.sep) if fmt.sep else line.split()
        if len(fields) != 3:
            raise ValueError(f"{path}: line {lineno}: expected 3 fields, got {len(fields)}")
        seen_any = True
        yield lineno, fields
    if not seen_any:
        raise ValueError(f"{path}: empty triple file")


def ingest_triples(path, fmt: TripleFormat | None = None, name: str | None = None,
                   entities: Vocabulary | None = None,
                   relations: Vocabulary | None = None) -> KnowledgeGraph:
    """Read a triple TSV file into a KnowledgeGraph.

    Existing vocabularies may be passed in to share id assignment across
    splits. Duplicate (h, r, t) lines are dropped with a counted warning.
    """
    fmt = fmt or TripleFormat()
    entities = entities if entities is not None else Vocabulary()
    relations = relations if relations is not None else Vocabulary()
    triples: list[Triple] = []
    seen: set[Triple] = set()
    duplicates = 0
    for lineno, (h_s, r_s, t_s) in _parse_triple_lines(path, fmt):
        if fmt.ids:
            try:
                h, r, t = int(h_s), int(r_s), int(t_s)
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: non-integer id field") from None
            entities.add(str(h)), relations.add(str(r)), entities.add(str(t))
        else:
            h, r, t = entities.add(h_s), relations.add(r_s), entities.add(t_s)
        trip = (h, r, t)
        if trip in seen:
            duplicates += 1
            continue
        seen.add(trip)
        triples.append(trip)
    if fmt.ids:
        _check_dense(entities, "entity", path)
        _check_dense(relations, "relation", path)
    if duplicates:
        logger.warning("%s: dropped %d duplicate triple line(s)", path, duplicates)
    return KnowledgeGraph(entities, relations, triples,
                          name=name or Path(path).stem, duplicates_dropped=duplicates)


def _check_dense(vocab: Vocabulary, what: str, path):
    ids = sorted(int(lbl) for lbl in vocab.labels)
    if ids != list(range(len(ids))):
        raise ValueError(f"{path}: pre-assigned {what} ids are not dense 0..{len(ids) - 1}")


def export_triples(kg: KnowledgeGraph, path, sep: str = "\t"):
    """Write triples as labels, one per line, preserving ingestion order."""
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in kg.triples:
            fh.write(f"{kg.entities.label_of(h)}{sep}{kg.relations.label_of(r)}"
                     f"{sep}{kg.entities.label_of(t)}\n")


@dataclass
class CompletionDataset:
    """Train graph plus held-out valid/test triples over a shared vocabulary."""

    graph: KnowledgeGraph          # training triples; vocab covers all splits
    valid: list[Triple]
    test: list[Triple]

    @property
    def known_triples(self) -> frozenset:
        return frozenset(self.graph.triples) | frozenset(self.valid) | frozenset(self.test)

    def stats(self) -> DatasetStats:
        return DatasetStats(name=self.graph.name,
                            relation_count=self.graph.n_relations,
                            entity_count=self.graph.n_entities,
                            triple_count=len(self.graph.triples) + len(self.valid) + len(self.test),
                            train_count=len(self.graph.triples),
                            valid_count=len(self.valid),
                            test_count=len(self.test))


def _resolve_split(path, fmt, entities, relations) -> list[Triple]:
    triples, seen = [], set()
    for lineno, (h_s, r_s, t_s) in _parse_triple_lines(path, fmt):
        if fmt.ids:
            h, r, t = int(h_s), int(r_s), int(t_s)
            entities.add(str(h)), relations.add(str(r)), entities.add(str(t))
        else:
            h, r, t = entities.add(h_s), relations.add(r_s), entities.add(t_s)
        if (h, r, t) not in seen:
            seen.add((h, r, t))
            triples.append((h, r, t))
    return triples


def ingest_completion_dataset(train_path, valid_path, test_path,
                              fmt: TripleFormat | None = None,
                              name: str = "") -> CompletionDataset:
    """Ingest train/valid/test triple files with one shared vocabulary.

    Ids are assigned in first-appearance order scanning train, then valid,
    then test, so entities appearing only in held-out splits still get ids.
    """
    fmt = fmt or TripleFormat()
    train = ingest_triples(train_path, fmt, name=name or Path(train_path).stem)
    entities, relations = train.entities, train.relations
    valid = _resolve_split(valid_path, fmt, entities, relations)
    test = _resolve_split(test_path, fmt, entities, relations)
    # re-wrap so the graph revalidates against the grown vocabulary
    graph = KnowledgeGraph(entities, relations, train.triples, name=train.name,
                           duplicates_dropped=train.duplicates_dropped)
    return CompletionDataset(graph=graph, valid=valid, test=test)


class AugmentedGraph:
    """A KnowledgeGraph extended with one head and one tail prototype node per
    relation, plus the entity <-> prototype adjacency.

    The head prototype of relation r connects to every h with (h, r, t) in the
    triple set; the tail prototype symmetrically. An entity heading two
    relations appears in both prototype adjacency lists.
    """

    def __init__(self, base: KnowledgeGraph):
        if base.n_entities == 0 or len(base.triples) == 0:
            raise ValueError("cannot augment an empty graph")
        self.base = base
        n, m = base.n_entities, base.n_relations
        self.n_entities = n
        self.n_relations = m
        self.n_prototypes = 2 * m

        heads: list[set[int]] = [set() for _ in range(m)]
        tails: list[set[int]] = [set() for _ in range(m)]
        ent_protos: list[set[int]] = [set() for _ in range(n)]
        for h, r, t in base.triples:
            heads[r].add(h)
            tails[r].add(t)
            ent_protos[h].add(self.proto_head_of(r))
            ent_protos[t].add(self.proto_tail_of(r))
        self._proto_members: list[tuple[int, ...]] = (
            [tuple(sorted(s)) for s in heads] + [tuple(sorted(s)) for s in tails])
        self._entity_protos: list[tuple[int, ...]] = [tuple(sorted(s)) for s in ent_protos]

    def proto_head_of(self, relation_id: int) -> int:
        return self.n_entities + relation_id

    def proto_tail_of(self, relation_id: int) -> int:
        return self.n_entities + self.n_relations + relation_id

    def proto_row(self, proto_id: int) -> int:
        """Row of a prototype node in a (2|R|, dim) prototype table."""
        return proto_id - self.n_entities

    def entity_neighbors(self, entity_id: int) -> tuple[int, ...]:
        return self.base.neighbor_sets()[entity_id]

    def proto_neighbors_of_entity(self, entity_id: int) -> tuple[int, ...]:
        return self._entity_protos[entity_id]

    def entity_neighbors_of_proto(self, proto_id: int) -> tuple[int, ...]:
        return self._proto_members[self.proto_row(proto_id)]


def augment_with_prototypes(kg: KnowledgeGraph) -> AugmentedGraph:
    """Attach one head and one tail prototype node per relation."""
    return AugmentedGraph(kg)


@dataclass
class AlignmentSeedSet:
    """Pre-aligned entity pairs split into train and test partitions."""

    pairs: list[tuple[int, int]]
    train: list[tuple[int, int]]
    test: list[tuple[int, int]]
    train_fraction: float

    def __post_init__(self):
        if len(set(self.pairs)) != len(self.pairs):
            raise ValueError("duplicate seed pairs")
        if set(self.train) | set(self.test) != set(self.pairs) or set(self.train) & set(self.test):
            raise ValueError("train/test partitions must be disjoint and exhaustive")


def split_seed_pairs(pairs: list[tuple[int, int]], train_fraction: float,
                     seed: int) -> AlignmentSeedSet:
    """Deterministic shuffled split; train count rounds down."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    n_train = int(len(pairs) * train_fraction)
    train = [pairs[i] for i in order[:n_train]]
    test = [pairs[i] for i in order[n_train:]]
    return AlignmentSeedSet(pairs=list(pairs), train=train, test=test,
                            train_fraction=train_fraction)


def ingest_alignment_dataset(kg1_path, kg2_path, seeds_path,
                             train_fraction: float = 0.30, seed: int = 0,
                             fmt: TripleFormat | None = None,
                             names: tuple[str, str] = ("", "")):
    """Ingest two KGs plus a seed-pair file; returns (kg1, kg2, seed set).

    Seed lines hold two fields resolved against the respective graphs; an
    unresolvable label raises an error naming it.
    """
    fmt = fmt or TripleFormat()
    kg1 = ingest_triples(kg1_path, fmt, name=names[0] or Path(kg1_path).stem)
    kg2 = ingest_triples(kg2_path, fmt, name=names[1] or Path(kg2_path).stem)
    pairs: list[tuple[int, int]] = []
    seen = set()
    dup = 0
    text = Path(seeds_path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        fields = raw.split(fmt.sep) if fmt.sep else raw.split()
        if len(fields) != 2:
            raise ValueError(f"{seeds_path}: line {lineno}: expected 2 fields")
        a, b = fields
        try:
            i = kg1.entities.id_of(str(int(a)) if fmt.ids else a)
        except KeyError:
            raise ValueError(f"{seeds_path}: line {lineno}: label {a!r} not in {kg1.name}") from None
        try:
            j = kg2.entities.id_of(str(int(b)) if fmt.ids else b)
        except KeyError:
            raise ValueError(f"{seeds_path}: line {lineno}: label {b!r} not in {kg2.name}") from None
        if (i, j) in seen:
            dup += 1
            continue
        seen.add((i, j))
        pairs.append((i, j))
    if dup:
        logger.warning("%s: dropped %d duplicate seed pair(s)", seeds_path, dup)
    if not pairs:
        raise ValueError(f"{seeds_path}: no seed pairs")
    return kg1, kg2, split_seed_pairs(pairs, train_fraction, seed)


def degree_of(kg: KnowledgeGraph, entity_id: int) -> int:
    return kg.degree_of(entity_id)
