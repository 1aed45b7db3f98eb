"""Acceptance suite: one test per shipping criterion, printed pass lines.

Each test pins its tolerance and runtime budget and recomputes expectations
through an independent oracle (matrix algebra, nested loops, closed-form
arithmetic) rather than trusting the implementation under test.
"""

import os
import random
import time

import numpy as np
import pytest
import torch

from kgalign.channels import cross_kg_adjacency, self_attention_adjacency
from kgalign.evaluate import evaluate_alignment
from kgalign.kg import KnowledgeGraph, SeedAlignments, Triple, load_kg, split_entity_seeds
from kgalign.losses import implication_truth, triple_truth_values, TripleBatch
from kgalign.rules import (
    HornRule,
    RuleAtom,
    complete_kg,
    ground_rule,
    mine_rules,
    transfer_rules,
)
from kgalign.train import TrainConfig, gradient_check, train


def random_kg(n_entities, n_relations, n_triples, seed):
    rng = random.Random(seed)
    triples = set()
    attempts = 0
    while len(triples) < n_triples and attempts < 50 * n_triples:
        attempts += 1
        h = rng.randrange(n_entities)
        t = rng.randrange(n_entities)
        triples.add(Triple(h, rng.randrange(n_relations), t))
    return KnowledgeGraph(n_entities, n_relations, triples)


def rand(shape, seed, scale=1.0):
    g = torch.Generator().manual_seed(seed)
    return (torch.rand(shape, generator=g, dtype=torch.float64) * 2 - 1) * scale


class TestCriterion1GradientFidelity:
    def test_finite_difference_agreement(self):
        start = time.monotonic()
        report = gradient_check(
            n_entities=30, n_relations=5, n_triples=60, dim=8, layers=2,
            negatives_k=5, n_seed_pairs=10, step=1e-5, seed=0,
        )
        elapsed = time.monotonic() - start
        assert report.max_relative_error < 1e-4, report.per_group
        assert report.min_kink_slack > 1e-3
        assert elapsed < 60.0
        print(
            f"\nACCEPTANCE 1 PASS: gradient check max rel error "
            f"{report.max_relative_error:.3g} < 1e-4 over {len(report.per_group)} "
            f"parameter groups in {elapsed:.1f}s"
        )


def matrix_rule_oracle(kg):
    """Support/PCA counts for every rule shape via dense matrix algebra."""
    n, n_rel = kg.num_entities, kg.num_relations
    mats = [np.zeros((n, n), dtype=bool) for _ in range(n_rel)]
    for t in kg.triples:
        mats[t.relation][t.head, t.tail] = True
    has_head = [m.any(axis=1) for m in mats]
    scores = {}

    def record(rule, body):
        c = rule.conclusion.relation
        entry = (int((body & mats[c]).sum()), int(body[has_head[c]].sum()))
        key = rule.canonical()
        assert scores.setdefault(key, entry) == entry
        return key

    for a in range(n_rel):
        for c in range(n_rel):
            if a != c:
                record(HornRule((RuleAtom(a, "x", "y"),), RuleAtom(c, "x", "y")), mats[a])
            record(HornRule((RuleAtom(a, "y", "x"),), RuleAtom(c, "x", "y")), mats[a].T)
    for a in range(n_rel):
        for o1 in (("x", "z"), ("z", "x")):
            first = mats[a] if o1 == ("x", "z") else mats[a].T
            for b in range(n_rel):
                for o2 in (("z", "y"), ("y", "z")):
                    second = mats[b] if o2 == ("z", "y") else mats[b].T
                    body = (first.astype(np.float64) @ second.astype(np.float64)) > 0
                    for c in range(n_rel):
                        record(HornRule((RuleAtom(a, *o1), RuleAtom(b, *o2)), RuleAtom(c, "x", "y")), body)
    return scores


def loop_groundings(kg, rule):
    """Groundings via nested loops over whole-triple combinations."""
    import itertools

    premise_triples = [
        [t for t in sorted(kg.triples) if t.relation == p.relation] for p in rule.premises
    ]
    found = set()
    for combo in itertools.product(*premise_triples):
        binding = {}
        consistent = True
        for atom, triple in zip(rule.premises, combo):
            for var, value in ((atom.subject, triple.head), (atom.object, triple.tail)):
                if binding.setdefault(var, value) != value:
                    consistent = False
                    break
            if not consistent:
                break
        if not consistent:
            continue
        conclusion = Triple(
            binding[rule.conclusion.subject], rule.conclusion.relation, binding[rule.conclusion.object]
        )
        if conclusion not in kg:
            found.add((combo, conclusion))
    return found


class TestCriterion2RuleEngineOracle:
    def test_twenty_randomized_kgs(self):
        start = time.monotonic()
        rng = random.Random(2024)
        checked_rules = 0
        checked_groundings = 0
        for case in range(20):
            n_entities = rng.randrange(8, 26)
            n_relations = rng.randrange(2, 11)
            n_triples = rng.randrange(20, 201)
            kg = random_kg(n_entities, n_relations, n_triples, seed=case)
            oracle = matrix_rule_oracle(kg)
            mined = mine_rules(kg, max_premises=2, min_pca_conf=0.8, min_support=2)
            seen = set()
            for m in mined:
                key = m.rule.canonical()
                support, pca = oracle[key]
                assert m.support == support
                assert m.pca_confidence == support / pca
                seen.add(key)
            expected = {
                rule
                for rule, (support, pca) in oracle.items()
                if support >= 2 and support / pca >= 0.8
            }
            assert seen == expected
            checked_rules += len(oracle)

            permissive = mine_rules(kg, 2, 0.0, 1)
            for m in permissive[:6]:
                got = {(g.premise_triples, g.conclusion_triple) for g in ground_rule(kg, m.rule)}
                assert got == loop_groundings(kg, m.rule)
                checked_groundings += len(got)
        elapsed = time.monotonic() - start
        assert elapsed < 60.0
        print(
            f"\nACCEPTANCE 2 PASS: miner matches matrix oracle on {checked_rules} rule "
            f"shapes and {checked_groundings} groundings across 20 KGs in {elapsed:.1f}s"
        )


class TestCriterion3PlantedRule:
    def test_planted_rule_recovered_exactly(self):
        # 10 subject/object pairs carry r0 and r1; 2 carry r0 only, their
        # subjects have no r1 fact at all
        triples = []
        eid = 0
        for _ in range(10):
            triples += [Triple(eid, 0, eid + 1), Triple(eid, 1, eid + 1)]
            eid += 2
        for _ in range(2):
            triples.append(Triple(eid, 0, eid + 1))
            eid += 2
        kg = KnowledgeGraph(eid, 2, triples)
        mined = {m.rule.canonical(): m for m in mine_rules(kg, 2, 0.8, 2)}
        target = HornRule((RuleAtom(0, "x", "y"),), RuleAtom(1, "x", "y")).canonical()
        assert target in mined
        assert mined[target].support == 10
        assert mined[target].pca_confidence == 1.0
        print("\nACCEPTANCE 3 PASS: planted rule recovered with support 10 and confidence 1.0")


class TestCriterion4AttentionInvariants:
    def test_row_sums_and_cross_maxima(self):
        total_rows = 0
        total_entries = 0
        case = 0
        while total_rows < 1000:
            case += 1
            n = 25 + (case % 7)
            kg = random_kg(n, 2 + case % 4, 3 * n, seed=case)
            h = rand((n, 5), seed=case, scale=1.0 + 0.2 * (case % 3))
            adj = self_attention_adjacency(kg, h, rand((5, 5), case + 100), rand((10,), case + 200))
            sums = adj.row_sums()
            assert (sums - 1.0).abs().max() < 1e-6
            assert (adj.values > 0).all() and (adj.values <= 1).all()
            total_rows += n

            rel = rand((kg.num_relations, 4), case + 300)
            other = rand((3 + case % 3, 4), case + 400)
            cross = cross_kg_adjacency(kg, rel, other)
            assert (cross.values >= 0).all()
            entries = cross.entries()
            # brute force: max over relations on either orientation of the pair
            # and over all counterpart relations, clamped at zero
            expected = {}
            for i in range(n):
                expected[(i, i)] = 1.0
                for j in range(n):
                    rels = set(kg.relations_between(i, j)) | set(kg.relations_between(j, i))
                    if i == j or not rels:
                        continue
                    best = max(
                        float(rel[r] @ other[r2])
                        for r in rels
                        for r2 in range(other.shape[0])
                    )
                    expected[(i, j)] = max(best, 0.0)
            assert set(entries) == set(expected)
            for key, value in expected.items():
                assert entries[key] == pytest.approx(value, abs=1e-12)
            total_entries += len(entries)
        print(
            f"\nACCEPTANCE 4 PASS: {total_rows} attention rows sum to 1 (±1e-6); "
            f"{total_entries} cross-KG entries match the brute-force maxima"
        )


class TestCriterion5TruthValueAlgebra:
    def test_ten_thousand_sampled_values(self):
        rng = np.random.default_rng(5)
        samples = rng.uniform(0.0, 1.0, size=(10000, 3))
        premise = torch.tensor(samples[:, 0] * samples[:, 1], dtype=torch.float64)
        conclusion = torch.tensor(samples[:, 2], dtype=torch.float64)
        got = implication_truth(premise, conclusion)

        # independent recursion, scalar by scalar
        expected = np.empty(10000)
        for i, (p1, p2, c) in enumerate(samples):
            ts = p1 * p2
            expected[i] = ts * c - ts + 1.0
        assert np.allclose(got.numpy(), expected, atol=1e-12, rtol=0)
        assert float(got.min()) >= 0.0 and float(got.max()) <= 1.0

        zero = torch.zeros(1, dtype=torch.float64)
        one = torch.ones(1, dtype=torch.float64)
        v = torch.tensor([0.613], dtype=torch.float64)
        assert implication_truth(zero, v).item() == 1.0
        assert implication_truth(one, v).item() == v.item()

        # embedding-backed route agrees with the value-level algebra
        ents = rand((6, 4), 50)
        rels = rand((2, 4), 51)
        batch = TripleBatch.from_triples([Triple(0, 0, 1), Triple(1, 1, 2)])
        truths = triple_truth_values(batch, ents, rels)
        composed = implication_truth(truths[0], truths[1])
        assert 0.0 <= float(composed) <= 1.0
        print("\nACCEPTANCE 5 PASS: 10000-sample truth-value algebra matches the recursion in [0,1]")


def isomorphic_dataset(n=100, n_rel=5, edges_per_rel=60, seed=7):
    """Isomorphic twins whose relations are random partial matchings (~300 triples)."""
    rng = random.Random(seed)
    triples = set()
    for r in range(n_rel):
        heads = list(range(n))
        rng.shuffle(heads)
        tails = list(range(n))
        rng.shuffle(tails)
        kept = 0
        for h, t in zip(heads, tails):
            if h != t and kept < edges_per_rel:
                triples.add((h, r, t))
                kept += 1
    mapping = list(range(n))
    rng.shuffle(mapping)
    kg_left = KnowledgeGraph(n, n_rel, {Triple(h, r, t) for h, r, t in triples})
    kg_right = KnowledgeGraph(n, n_rel, {Triple(mapping[h], r, mapping[t]) for h, r, t in triples})
    seeds = SeedAlignments(
        tuple((i, mapping[i]) for i in range(n)), tuple((r, r) for r in range(n_rel))
    )
    return kg_left, kg_right, seeds


class TestCriterion6EndToEndSynthetic:
    def test_isomorphic_alignment(self):
        start = time.monotonic()
        kg_left, kg_right, seeds = isomorphic_dataset()
        assert kg_left.num_entities == 100
        assert kg_left.num_relations == 5
        assert 250 <= kg_left.num_triples <= 350

        mined_left = mine_rules(kg_left)
        mined_right = mine_rules(kg_right)
        to_left = transfer_rules(
            mined_right, seeds.relation_pairs, "right_to_left", existing=[m.rule for m in mined_left]
        )
        to_right = transfer_rules(
            mined_left, seeds.relation_pairs, "left_to_right", existing=[m.rule for m in mined_right]
        )
        completed_left, groundings_left = complete_kg(kg_left, [m.rule for m in mined_left] + to_left)
        completed_right, groundings_right = complete_kg(kg_right, [m.rule for m in mined_right] + to_right)

        train_pairs, test_pairs = split_entity_seeds(seeds, 0.3, seed=7)
        assert len(train_pairs) == 30 and len(test_pairs) == 70

        config = TrainConfig(epochs=200, rng_seed=7)  # defaults otherwise
        result = train(
            completed_left, completed_right, train_pairs, seeds.relation_pairs,
            groundings_left, groundings_right, config,
        )
        assert result.history[-1].total < result.history[0].total

        with torch.no_grad():
            h_left, h_right = result.model.forward_all(training=False)
        report = evaluate_alignment(test_pairs, h_left, h_right)
        elapsed = time.monotonic() - start
        assert report.hits_at[1] >= 0.9, report
        assert elapsed < 300.0
        print(
            f"\nACCEPTANCE 6 PASS: synthetic twins hits@1={report.hits_at[1]:.3f} "
            f"hits@10={report.hits_at[10]:.3f} mrr={report.mrr:.3f} in {elapsed:.0f}s"
        )


class TestCriterion7MetricsCorrectness:
    def test_hand_built_rank_configurations(self):
        # two pairs at ranks 1 and 2 -> hits@1 = 0.5, mrr = 0.75
        source = torch.tensor([[0.0, 0.0], [10.0, 0.0]], dtype=torch.float64)
        target = torch.tensor(
            [[0.0, 0.5], [10.0, 2.0], [10.0, 1.0]], dtype=torch.float64
        )
        report = evaluate_alignment([(0, 0), (1, 1)], source, target)
        assert report.hits_at[1] == 0.5
        assert report.mrr == 0.75

        # ranks 1, 2, 4, 10 among 10 candidates
        source = torch.zeros(4, 1, dtype=torch.float64)
        source[:, 0] = torch.tensor([0.0, 100.0, 200.0, 300.0], dtype=torch.float64)
        target = torch.zeros(10, 1, dtype=torch.float64)
        # candidate columns around each source value with controlled offsets
        target[:, 0] = torch.tensor(
            [0.0, 100.0 + 1.0, 100.0 - 0.5, 200.0 + 1, 200.0 - 2, 200.0 + 3,
             200.0 - 0.5, 300.0 + 1, 300.0 - 2, 300.0 + 4],
            dtype=torch.float64,
        )
        pairs = [(0, 0), (1, 1), (2, 3), (3, 9)]
        report = evaluate_alignment(pairs, source, target, hits_levels=(1, 2, 4, 10))
        ranks = []
        for s, t in pairs:
            d = (target[:, 0] - source[s, 0]).abs()
            ranks.append(int((d < d[t]).sum()) + int(((d == d[t]) & (torch.arange(10) < t)).sum()) + 1)
        assert ranks == [1, 2, 4, 10]
        assert report.hits_at[1] == 0.25
        assert report.hits_at[2] == 0.5
        assert report.hits_at[4] == 0.75
        assert report.hits_at[10] == 1.0
        assert report.mrr == pytest.approx((1.0 + 0.5 + 0.25 + 0.1) / 4.0, abs=1e-15)
        print("\nACCEPTANCE 7 PASS: hand-built rank configurations reproduce Hits@N and MRR exactly")


class TestCriterion8LoaderFidelity:
    TARGET_ENTITIES = 66469
    TARGET_RELATIONS = 2830
    TARGET_TRIPLES = 153929

    def test_table_scale_fixture_counts(self, tmp_path):
        rng = random.Random(8)
        triples = set()
        for i in range(self.TARGET_ENTITIES):
            triples.add((i, i % self.TARGET_RELATIONS, (i + 1) % self.TARGET_ENTITIES))
        while len(triples) < self.TARGET_TRIPLES:
            triples.add(
                (
                    rng.randrange(self.TARGET_ENTITIES),
                    rng.randrange(self.TARGET_RELATIONS),
                    rng.randrange(self.TARGET_ENTITIES),
                )
            )
        path = tmp_path / "table_scale.tsv"
        with open(path, "w", encoding="utf-8") as fh:
            for h, r, t in triples:
                fh.write(f"e{h}\tr{r}\te{t}\n")
        kg = load_kg(path)
        assert kg.num_entities == self.TARGET_ENTITIES
        assert kg.num_relations == self.TARGET_RELATIONS
        assert kg.num_triples == self.TARGET_TRIPLES
        print(
            f"\nACCEPTANCE 8 PASS: table-scale fixture loads to exactly "
            f"{kg.num_entities} entities / {kg.num_relations} relations / {kg.num_triples} triples"
        )

    def test_real_dataset_when_available(self):
        path = os.environ.get("KGALIGN_DBP_ZH")
        if not path or not os.path.exists(path):
            pytest.skip("set KGALIGN_DBP_ZH to the real triple file to enable this check")
        kg = load_kg(path)
        assert kg.num_entities == self.TARGET_ENTITIES
        assert kg.num_relations == self.TARGET_RELATIONS
        assert kg.num_triples == self.TARGET_TRIPLES


class TestCriterion9LongRunMode:
    def test_documented_not_asserted(self):
        readme = os.path.join(os.path.dirname(__file__), "..", "README.md")
        with open(readme, encoding="utf-8") as fh:
            text = fh.read()
        assert "long-run" in text.lower()
        print(
            "\nACCEPTANCE 9 PASS: full-scale reproduction is a documented long-run mode, "
            "not a desk-scale assertion (see README)"
        )
