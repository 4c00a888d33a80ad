import numpy as np
import pytest

from protokg.kg import (AugmentedGraph, KnowledgeGraph, TripleFormat, Vocabulary,
                        augment_with_prototypes, degree_of, export_triples,
                        ingest_alignment_dataset, ingest_completion_dataset,
                        ingest_triples, split_seed_pairs)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestIngestTriples:
    def test_counts(self, tmp_path):
        p = write(tmp_path, "t.tsv", "a\tR\tb\nb\tR\tc\n")
        kg = ingest_triples(p)
        assert kg.n_entities == 3
        assert kg.n_relations == 1
        assert len(kg.triples) == 2

    def test_duplicates_dropped_with_count(self, tmp_path):
        p = write(tmp_path, "t.tsv", "a\tR\tb\na\tR\tb\n")
        kg = ingest_triples(p)
        assert len(kg.triples) == 1
        assert kg.duplicates_dropped == 1

    def test_first_appearance_ids(self, tmp_path):
        p = write(tmp_path, "t.tsv", "x\tR\ty\na\tS\tx\n")
        kg = ingest_triples(p)
        assert kg.entities.id_of("x") == 0
        assert kg.entities.id_of("y") == 1
        assert kg.entities.id_of("a") == 2
        assert kg.relations.id_of("R") == 0

    def test_malformed_line_reports_number(self, tmp_path):
        p = write(tmp_path, "t.tsv", "a\tR\tb\nbroken line\n")
        with pytest.raises(ValueError, match="line 2"):
            ingest_triples(p)

    def test_empty_file(self, tmp_path):
        p = write(tmp_path, "t.tsv", "\n\n")
        with pytest.raises(ValueError, match="empty"):
            ingest_triples(p)

    def test_pre_assigned_ids(self, tmp_path):
        p = write(tmp_path, "t.tsv", "0\t0\t1\n2\t0\t0\n")
        kg = ingest_triples(p, TripleFormat(ids=True))
        assert kg.n_entities == 3
        assert (0, 0, 1) in kg.triple_set

    def test_sparse_ids_rejected(self, tmp_path):
        p = write(tmp_path, "t.tsv", "0\t0\t5\n")
        with pytest.raises(ValueError, match="dense"):
            ingest_triples(p, TripleFormat(ids=True))

    def test_vocab_roundtrip(self, tmp_path):
        p = write(tmp_path, "t.tsv", "a\tR\tb\nb\tS\tc\n")
        kg = ingest_triples(p)
        for label in ("a", "b", "c"):
            assert kg.entities.label_of(kg.entities.id_of(label)) == label

    def test_export_ingest_roundtrip(self, tmp_path):
        p = write(tmp_path, "t.tsv", "a\tR\tb\nb\tR\tc\nc\tS\ta\n")
        kg = ingest_triples(p)
        out = tmp_path / "out.tsv"
        export_triples(kg, out)
        kg2 = ingest_triples(out)
        assert kg2.triples == kg.triples
        assert kg2.entities.labels == kg.entities.labels
        assert kg2.relations.labels == kg.relations.labels


class TestAugmentation:
    def build(self, triples, n_entities, n_relations):
        entities, relations = Vocabulary(), Vocabulary()
        for i in range(n_entities):
            entities.add(f"e{i}")
        for r in range(n_relations):
            relations.add(f"r{r}")
        return KnowledgeGraph(entities, relations, triples, name="t")

    def test_prototype_count(self):
        kg = self.build([(0, 0, 1), (1, 1, 2)], 3, 2)
        aug = augment_with_prototypes(kg)
        assert aug.n_prototypes == 4
        ids = {aug.proto_head_of(r) for r in range(2)} | {aug.proto_tail_of(r) for r in range(2)}
        assert len(ids) == 4
        assert min(ids) == kg.n_entities  # disjoint block after entity ids

    def test_multi_relation_head_connects_to_both_prototypes(self):
        # an entity heading two relations joins both head-prototype lists
        kg = self.build([(0, 0, 1), (0, 1, 2)], 3, 2)
        aug = augment_with_prototypes(kg)
        assert aug.proto_neighbors_of_entity(0) == (aug.proto_head_of(0), aug.proto_head_of(1))

    def test_proto_members_deduplicated(self):
        kg = self.build([(0, 0, 2), (1, 0, 2)], 3, 1)
        aug = augment_with_prototypes(kg)
        assert aug.entity_neighbors_of_proto(aug.proto_tail_of(0)) == (2,)
        assert aug.entity_neighbors_of_proto(aug.proto_head_of(0)) == (0, 1)

    def test_membership_iff_head_of_relation(self):
        rng = np.random.default_rng(7)
        n, m = 30, 4
        triples = sorted({(int(rng.integers(n)), int(rng.integers(m)), int(rng.integers(n)))
                          for _ in range(200)})
        kg = self.build(triples, n, m)
        aug = augment_with_prototypes(kg)
        for r in range(m):
            expected_heads = sorted({h for h, rr, t in triples if rr == r})
            expected_tails = sorted({t for h, rr, t in triples if rr == r})
            assert list(aug.entity_neighbors_of_proto(aug.proto_head_of(r))) == expected_heads
            assert list(aug.entity_neighbors_of_proto(aug.proto_tail_of(r))) == expected_tails
        for e in range(n):
            expected = sorted({aug.proto_head_of(r) for h, r, t in triples if h == e}
                              | {aug.proto_tail_of(r) for h, r, t in triples if t == e})
            assert list(aug.proto_neighbors_of_entity(e)) == expected

    def test_rebuild_is_identical(self):
        kg = self.build([(0, 0, 1), (1, 0, 2), (2, 1, 0)], 3, 2)
        a1, a2 = augment_with_prototypes(kg), augment_with_prototypes(kg)
        for e in range(3):
            assert a1.proto_neighbors_of_entity(e) == a2.proto_neighbors_of_entity(e)
            assert a1.entity_neighbors(e) == a2.entity_neighbors(e)
        for p in range(3, 3 + a1.n_prototypes):
            assert a1.entity_neighbors_of_proto(p) == a2.entity_neighbors_of_proto(p)

    def test_empty_graph_rejected(self):
        entities, relations = Vocabulary(), Vocabulary()
        with pytest.raises(ValueError):
            augment_with_prototypes(KnowledgeGraph(entities, relations, [], name="x"))


class TestDegree:
    def build(self, triples, n, m=2):
        entities, relations = Vocabulary(), Vocabulary()
        for i in range(n):
            entities.add(f"e{i}")
        for r in range(m):
            relations.add(f"r{r}")
        return KnowledgeGraph(entities, relations, triples, name="t")

    def test_out_neighbors(self):
        kg = self.build([(0, 0, 1), (0, 1, 2)], 3)
        assert degree_of(kg, 0) == 2

    def test_in_neighbors(self):
        kg = self.build([(0, 0, 1), (2, 0, 1)], 3)
        assert degree_of(kg, 1) == 2

    def test_self_loop_excluded(self):
        kg = self.build([(0, 0, 0)], 1, 1)
        assert degree_of(kg, 0) == 0

    def test_invalid_id(self):
        kg = self.build([(0, 0, 1)], 2)
        with pytest.raises(ValueError):
            degree_of(kg, 5)


class TestAlignmentIngestion:
    def test_split_floor_and_determinism(self):
        pairs = [(i, i) for i in range(10)]
        s1 = split_seed_pairs(pairs, 0.30, seed=5)
        s2 = split_seed_pairs(pairs, 0.30, seed=5)
        assert len(s1.train) == 3 and len(s1.test) == 7
        assert s1.train == s2.train and s1.test == s2.test
        s3 = split_seed_pairs(pairs, 0.30, seed=6)
        assert s3.train != s1.train  # different shuffle

    def test_ingest_alignment(self, tmp_path):
        k1 = write(tmp_path, "k1.tsv", "a\tR\tb\nb\tR\tc\n")
        k2 = write(tmp_path, "k2.tsv", "x\tS\ty\ny\tS\tz\n")
        sp = write(tmp_path, "s.tsv", "a\tx\nb\ty\nc\tz\n")
        kg1, kg2, seeds = ingest_alignment_dataset(k1, k2, sp, train_fraction=0.34, seed=0)
        assert len(seeds.pairs) == 3
        assert len(seeds.train) == 1 and len(seeds.test) == 2
        assert set(seeds.train) | set(seeds.test) == set(seeds.pairs)

    def test_unresolvable_label_named(self, tmp_path):
        k1 = write(tmp_path, "k1.tsv", "a\tR\tb\n")
        k2 = write(tmp_path, "k2.tsv", "x\tS\ty\n")
        sp = write(tmp_path, "s.tsv", "nope\tx\n")
        with pytest.raises(ValueError, match="nope"):
            ingest_alignment_dataset(k1, k2, sp)


class TestCompletionDataset:
    def test_shared_vocab_across_splits(self, tmp_path):
        train = write(tmp_path, "train.tsv", "a\tR\tb\n")
        valid = write(tmp_path, "valid.tsv", "a\tR\tc\n")
        test = write(tmp_path, "test.tsv", "d\tS\tb\n")
        ds = ingest_completion_dataset(train, valid, test)
        assert ds.graph.n_entities == 4   # a, b, c, d
        assert ds.graph.n_relations == 2
        assert len(ds.graph.triples) == 1
        assert len(ds.known_triples) == 3

    def test_stats(self, tmp_path):
        train = write(tmp_path, "train.tsv", "a\tR\tb\nb\tR\tc\n")
        valid = write(tmp_path, "valid.tsv", "a\tR\tc\n")
        test = write(tmp_path, "test.tsv", "c\tR\ta\n")
        ds = ingest_completion_dataset(train, valid, test)
        st = ds.stats()
        assert st.train_count == 2 and st.valid_count == 1 and st.test_count == 1
        assert st.entity_count == 3 and st.relation_count == 1
        assert "entity_count=3" in st.to_text()
        assert '"train_count": 2' in st.to_json()
