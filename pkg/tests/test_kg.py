"""Loader, indexing, and seed-splitting behavior of the KG data model."""

import io
import random

import pytest

from kgalign.kg import (
    KnowledgeGraph,
    ParseError,
    SeedAlignments,
    Triple,
    load_kg,
    load_seed_alignments,
    split_entity_seeds,
)


def kg_from_lines(*lines):
    return load_kg(io.StringIO("".join(line + "\n" for line in lines)))


def random_kg(n_entities, n_relations, n_triples, seed):
    rng = random.Random(seed)
    triples = set()
    while len(triples) < n_triples:
        triples.add(
            Triple(rng.randrange(n_entities), rng.randrange(n_relations), rng.randrange(n_entities))
        )
    return KnowledgeGraph(n_entities, n_relations, triples)


class TestLoadKg:
    def test_dedup_and_interning(self):
        kg = kg_from_lines("a\tp\tb", "b\tq\tc", "a\tp\tb")
        assert kg.num_entities == 3
        assert kg.num_relations == 2
        assert kg.num_triples == 2
        # first-seen interning order
        assert kg.entity_labels == ("a", "b", "c")
        assert kg.relation_labels == ("p", "q")
        assert Triple(0, 0, 1) in kg

    def test_empty_stream(self):
        kg = load_kg(io.StringIO(""))
        assert kg.num_entities == 0
        assert kg.num_relations == 0
        assert kg.num_triples == 0

    def test_comments_and_blanks_skipped(self):
        kg = kg_from_lines("# header", "", "a\tp\tb", "   ")
        assert kg.num_triples == 1

    def test_malformed_line_reports_number(self):
        with pytest.raises(ParseError) as err:
            kg_from_lines("a\tp\tb", "a\tp")
        assert "line 2" in str(err.value)
        assert err.value.line_number == 2

    def test_empty_field_rejected(self):
        with pytest.raises(ParseError):
            kg_from_lines("a\t\tb")

    def test_roundtrip_is_idempotent(self):
        kg = random_kg(20, 4, 50, seed=1)
        first = io.StringIO()
        kg.to_tsv(first)
        reloaded = load_kg(io.StringIO(first.getvalue()))
        assert reloaded.num_entities == kg.num_entities
        assert reloaded.num_relations == kg.num_relations
        assert reloaded.num_triples == kg.num_triples
        second = io.StringIO()
        reloaded.to_tsv(second)
        assert second.getvalue() == first.getvalue()

    def test_roundtrip_preserves_label_triples(self):
        kg = kg_from_lines("a\tp\tb", "c\tq\ta", "b\tp\tc")
        out = io.StringIO()
        kg.to_tsv(out)
        reloaded = load_kg(io.StringIO(out.getvalue()))
        as_labels = lambda g: {
            (g.entity_labels[t.head], g.relation_labels[t.relation], g.entity_labels[t.tail])
            for t in g.triples
        }
        assert as_labels(reloaded) == as_labels(kg)


class TestIndices:
    def test_head_relation_index_roundtrip(self):
        for seed in range(5):
            kg = random_kg(15, 3, 40, seed)
            rebuilt = {
                Triple(h, r, t)
                for (h, r) in [(h, r) for h in range(15) for r in range(3)]
                for t in kg.tails(h, r)
            }
            assert rebuilt == set(kg.triples)

    def test_membership_matches_set(self):
        kg = random_kg(10, 2, 25, seed=3)
        for h in range(10):
            for r in range(2):
                for t in range(10):
                    assert (Triple(h, r, t) in kg) == (Triple(h, r, t) in kg.triples)

    def test_out_neighbors(self):
        kg = kg_from_lines("a\tp\tb", "a\tq\tc", "a\tp\tc", "b\tp\ta")
        assert kg.out_neighbors(0) == (1, 2)
        assert kg.out_neighbors(2) == ()

    def test_with_added_triples_is_monotone(self):
        kg = random_kg(10, 2, 20, seed=5)
        extra = {Triple(0, 0, 9), Triple(9, 1, 0)}
        bigger = kg.with_added_triples(extra)
        assert kg.triples <= bigger.triples
        assert extra <= bigger.triples
        assert bigger.entity_labels == kg.entity_labels


class TestSeedAlignments:
    def make_kgs(self):
        left = kg_from_lines("a\tp\tb", "b\tq\tc")
        right = kg_from_lines("x\tu\ty", "y\tv\tz")
        return left, right

    def test_load_pairs(self):
        left, right = self.make_kgs()
        seeds = load_seed_alignments(
            io.StringIO("a\tx\nb\ty\na\tx\n"),
            io.StringIO("p\tu\n"),
            left,
            right,
        )
        assert seeds.entity_pairs == ((0, 0), (1, 1))
        assert seeds.relation_pairs == ((0, 0),)

    def test_missing_relation_source_gives_empty_pairs(self):
        left, right = self.make_kgs()
        seeds = load_seed_alignments(io.StringIO("a\tx\n"), None, left, right)
        assert seeds.relation_pairs == ()

    def test_unresolvable_token_named_in_error(self):
        left, right = self.make_kgs()
        with pytest.raises(ParseError) as err:
            load_seed_alignments(io.StringIO("nosuch\tx\n"), None, left, right)
        assert "nosuch" in str(err.value)

    def test_conflicting_relation_pair_rejected(self):
        left, right = self.make_kgs()
        with pytest.raises(ParseError):
            load_seed_alignments(
                io.StringIO("a\tx\n"), io.StringIO("p\tu\np\tv\n"), left, right
            )
        with pytest.raises(ParseError):
            load_seed_alignments(
                io.StringIO("a\tx\n"), io.StringIO("p\tu\nq\tu\n"), left, right
            )

    def test_singleton_pair(self):
        left = kg_from_lines("a\tp\ta")
        right = kg_from_lines("x\tq\tx")
        seeds = load_seed_alignments(io.StringIO("a\tx\n"), None, left, right)
        assert seeds.entity_pairs == ((0, 0),)

    def test_relation_mapping_directions(self):
        seeds = SeedAlignments(((0, 0),), ((0, 1), (1, 0)))
        assert seeds.relation_mapping("left_to_right") == {0: 1, 1: 0}
        assert seeds.relation_mapping("right_to_left") == {1: 0, 0: 1}


class TestSplit:
    def make_seeds(self, n):
        return SeedAlignments(tuple((i, i) for i in range(n)))

    def test_thirty_percent_of_15000(self):
        train, test = split_entity_seeds(self.make_seeds(15000), 0.3, seed=0)
        assert len(train) == 4500
        assert len(test) == 10500

    def test_zero_fraction(self):
        train, test = split_entity_seeds(self.make_seeds(10), 0.0, seed=0)
        assert train == []
        assert len(test) == 10

    def test_full_fraction(self):
        train, test = split_entity_seeds(self.make_seeds(10), 1.0, seed=0)
        assert len(train) == 10
        assert test == []

    def test_round_half_up(self):
        train, _ = split_entity_seeds(self.make_seeds(5), 0.5, seed=0)
        assert len(train) == 3  # round(2.5) half-up

    def test_determinism(self):
        seeds = self.make_seeds(100)
        first = split_entity_seeds(seeds, 0.3, seed=42)
        second = split_entity_seeds(seeds, 0.3, seed=42)
        assert first == second
        different = split_entity_seeds(seeds, 0.3, seed=43)
        assert first != different

    def test_partition_property(self):
        seeds = self.make_seeds(37)
        for fraction in (0.0, 0.1, 0.31, 0.5, 0.99, 1.0):
            for rng_seed in (0, 1, 2):
                train, test = split_entity_seeds(seeds, fraction, rng_seed)
                assert set(train) | set(test) == set(seeds.entity_pairs)
                assert not set(train) & set(test)

    def test_fraction_out_of_range(self):
        with pytest.raises(ValueError):
            split_entity_seeds(self.make_seeds(5), 1.5, seed=0)
