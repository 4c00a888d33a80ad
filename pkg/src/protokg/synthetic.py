"""Deterministic synthetic fixtures: a category-structured completion KG with
a planted degree skew, an isomorphic twin-graph alignment task, and a
constructed separated-area instance for the geometry checkers.

Entities are partitioned into latent categories; relation r connects heads
from category 2r to tails from category 2r+1, so derived categories are
disjoint and match the latent partition exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import PrototypeArea
from .kg import (HEAD, TAIL, AlignmentSeedSet, CompletionDataset, KnowledgeGraph,
                 Vocabulary, split_seed_pairs)
from .optim import phases_to_complex
from .seeding import rng_for


def _block_triples(n_relations: int, block: int, rng: np.random.Generator,
                   mean_extra_degree: float, hub_fraction: float,
                   hub_degree: int, tail_zipf: float):
    """Bipartite triples per relation between its head and tail blocks.

    Head out-degrees are 1 + Poisson(mean_extra_degree) with a few hubs;
    tails are picked with Zipf-like popularity so high-index tails stay rare.
    """
    triples = []
    for r in range(n_relations):
        head_base = 2 * r * block
        tail_base = (2 * r + 1) * block
        weights = 1.0 / np.arange(1, block + 1) ** tail_zipf
        weights /= weights.sum()
        for local in range(block):
            h = head_base + local
            if rng.random() < hub_fraction:
                deg = hub_degree
            else:
                deg = 1 + int(rng.poisson(mean_extra_degree))
            deg = min(deg, block)
            tails = rng.choice(block, size=deg, replace=False, p=weights)
            for t_local in tails:
                triples.append((h, r, tail_base + int(t_local)))
    return triples


def _graph_from_triples(n_entities: int, n_relations: int, triples, name: str,
                        entity_prefix: str = "e") -> KnowledgeGraph:
    entities = Vocabulary()
    relations = Vocabulary()
    for i in range(n_entities):
        entities.add(f"{entity_prefix}{i}")
    for r in range(n_relations):
        relations.add(f"r{r}")
    return KnowledgeGraph(entities, relations, sorted(set(triples)), name=name)


def make_completion_fixture(n_entities: int = 200, n_relations: int = 4,
                            seed: int = 0, mean_extra_degree: float = 2.0,
                            hub_fraction: float = 0.12, hub_degree: int = 12,
                            tail_zipf: float = 1.1, test_fraction: float = 0.10,
                            valid_fraction: float = 0.10) -> CompletionDataset:
    """Category-structured completion dataset with a planted degree skew.

    n_entities must be divisible by 2*n_relations; the latent categories are
    the 2*n_relations head/tail blocks.
    """
    if n_entities % (2 * n_relations):
        raise ValueError("n_entities must be divisible by 2*n_relations")
    block = n_entities // (2 * n_relations)
    rng = rng_for(seed, "completion-fixture")
    triples = sorted(set(_block_triples(n_relations, block, rng, mean_extra_degree,
                                        hub_fraction, hub_degree, tail_zipf)))
    order = rng.permutation(len(triples))
    n_test = int(len(triples) * test_fraction)
    n_valid = int(len(triples) * valid_fraction)
    # hold a triple out only while both endpoints keep at least one training
    # triple, so every entity that occurs at all stays learnable
    remaining = {}
    for h, _, t in triples:
        remaining[h] = remaining.get(h, 0) + 1
        remaining[t] = remaining.get(t, 0) + 1
    held: list[int] = []
    for i in order:
        if len(held) == n_test + n_valid:
            break
        h, _, t = triples[i]
        if remaining[h] > 1 and remaining[t] > 1:
            held.append(i)
            remaining[h] -= 1
            remaining[t] -= 1
    test = [triples[i] for i in held[:n_test]]
    valid = [triples[i] for i in held[n_test:]]
    held_set = set(held)
    train = [triples[i] for i in range(len(triples)) if i not in held_set]
    graph = _graph_from_triples(n_entities, n_relations, train, f"fixture-completion-{seed}")
    return CompletionDataset(graph=graph, valid=valid, test=test)


def make_alignment_fixture(n_entities: int = 150, n_relations: int = 3,
                           seed: int = 0, mean_extra_degree: float = 3.0,
                           hub_fraction: float = 0.10, hub_degree: int = 10,
                           tail_zipf: float = 0.8, train_fraction: float = 0.30):
    """Twin isomorphic graphs plus a 30%-train seed alignment.

    Graph 2 is graph 1 under a random entity permutation and a relation
    relabeling; seed pairs map each entity to its image.
    Returns (kg1, kg2, seeds, permutation).
    """
    if n_entities % (2 * n_relations):
        raise ValueError("n_entities must be divisible by 2*n_relations")
    block = n_entities // (2 * n_relations)
    rng = rng_for(seed, "alignment-fixture")
    triples = sorted(set(_block_triples(n_relations, block, rng, mean_extra_degree,
                                        hub_fraction, hub_degree, tail_zipf)))
    kg1 = _graph_from_triples(n_entities, n_relations, triples,
                              f"fixture-align-src-{seed}", entity_prefix="a")
    perm = rng.permutation(n_entities)
    rel_perm = rng.permutation(n_relations)
    twin = [(int(perm[h]), int(rel_perm[r]), int(perm[t])) for h, r, t in triples]
    kg2 = _graph_from_triples(n_entities, n_relations, twin,
                              f"fixture-align-tgt-{seed}", entity_prefix="b")
    pairs = [(i, int(perm[i])) for i in range(n_entities)]
    seeds = split_seed_pairs(pairs, train_fraction, int(rng_for(seed, "seed-split").integers(2**31)))
    return kg1, kg2, seeds, perm


def write_completion_fixture(out_dir, **kwargs) -> dict[str, Path]:
    """Materialize the completion fixture as train/valid/test TSV files."""
    ds = make_completion_fixture(**kwargs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    labels = ds.graph.entities
    rels = ds.graph.relations
    for split, triples in (("train", ds.graph.triples), ("valid", ds.valid),
                           ("test", ds.test)):
        p = out / f"{split}.tsv"
        with open(p, "w", encoding="utf-8") as fh:
            for h, r, t in triples:
                fh.write(f"{labels.label_of(h)}\t{rels.label_of(r)}\t{labels.label_of(t)}\n")
        paths[split] = p
    return paths


def write_alignment_fixture(out_dir, **kwargs) -> dict[str, Path]:
    """Materialize the twin-graph fixture as kg1/kg2/seed TSV files."""
    kg1, kg2, seeds, _ = make_alignment_fixture(**kwargs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for tag, kg in (("kg1", kg1), ("kg2", kg2)):
        p = out / f"{tag}.tsv"
        with open(p, "w", encoding="utf-8") as fh:
            for h, r, t in kg.triples:
                fh.write(f"{kg.entities.label_of(h)}\t{kg.relations.label_of(r)}\t"
                         f"{kg.entities.label_of(t)}\n")
        paths[tag] = p
    p = out / "seeds.tsv"
    with open(p, "w", encoding="utf-8") as fh:
        for i, j in seeds.pairs:
            fh.write(f"{kg1.entities.label_of(i)}\t{kg2.entities.label_of(j)}\n")
    paths["seeds"] = p
    return paths


@dataclass
class ConstructedTheoryInstance:
    """A hand-placed arrangement of prototype areas that satisfies the
    separated-area premises by construction."""

    areas: list[PrototypeArea]
    entity_vecs: np.ndarray       # complex members referenced by the areas
    r_phases: np.ndarray          # (n_relations, k) phase rows
    relation_id: int              # the relation whose premises hold


def make_constructed_theory_instance(separation: float = 10.0, radius: float = 0.1,
                                     members_per_area: int = 3, k: int = 1,
                                     seed: int = 0,
                                     n_other_relations: int = 1) -> ConstructedTheoryInstance:
    """Relation 0 has coincident head/tail areas at the origin (phase 0, so
    the prototype-consistency assumption holds exactly); each other relation
    contributes areas centered ``separation`` apart. With
    separation >= 10 * radius every premise for relation 0 holds."""
    rng = rng_for(seed, "constructed-theory")
    n_rel = 1 + n_other_relations
    phases = np.zeros((n_rel, k))
    centers_h = [np.zeros(k, dtype=complex)]
    centers_t = [np.zeros(k, dtype=complex)]
    for m in range(1, n_rel):
        direction = np.zeros(k, dtype=complex)
        direction[0] = 1.0
        centers_h.append(direction * separation * m)
        centers_t.append(direction * separation * m)

    entity_vecs = []
    areas = []
    for side, centers in ((HEAD, centers_h), (TAIL, centers_t)):
        for r, center in enumerate(centers):
            member_ids = []
            for m in range(members_per_area):
                offs = rng.standard_normal(2 * k)
                # last member sits exactly on the boundary so the declared
                # radius equals the max member distance
                scale = radius if m == members_per_area - 1 else radius * rng.random()
                offs = offs / np.linalg.norm(offs) * scale
                member_ids.append(len(entity_vecs))
                entity_vecs.append(center + offs[:k] + 1j * offs[k:])
            areas.append(PrototypeArea(center=center, radius=radius, side=side,
                                       relation_id=r, member_ids=tuple(member_ids)))
    return ConstructedTheoryInstance(areas=areas, entity_vecs=np.asarray(entity_vecs),
                                     r_phases=phases, relation_id=0)
