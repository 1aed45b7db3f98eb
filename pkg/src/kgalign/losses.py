"""Alignment and rule-constraint objectives.

The align loss is a margin hinge over L2 distances between seed pairs and
their nearest-neighbor negatives, for entities and relations alike. Rule
constraints use fuzzy truth values: a triple's truth decays linearly with its
translational residual, premises conjoin by product, and implication follows
I(ts => tc) = I(ts) * I(tc) - I(ts) + 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import torch

from . import diagnostics
from .kg import Triple
from .rules import RuleGrounding


@dataclass
class TripleBatch:
    """Column tensors (heads, relations, tails) for a batch of triples."""

    heads: torch.Tensor
    rels: torch.Tensor
    tails: torch.Tensor

    @classmethod
    def from_triples(cls, triples: Iterable[Triple]) -> "TripleBatch":
        ts = list(triples)
        return cls(
            torch.tensor([t.head for t in ts], dtype=torch.long),
            torch.tensor([t.relation for t in ts], dtype=torch.long),
            torch.tensor([t.tail for t in ts], dtype=torch.long),
        )

    def __len__(self) -> int:
        return int(self.heads.numel())


@dataclass
class GroundingBatch:
    """Premise triple batches (one per premise slot) plus the conclusion batch."""

    premises: tuple[TripleBatch, ...]
    conclusion: TripleBatch

    @classmethod
    def from_groundings(cls, groundings: Sequence[RuleGrounding]) -> "GroundingBatch":
        n_premises = len(groundings[0].premise_triples)
        if any(len(g.premise_triples) != n_premises for g in groundings):
            raise ValueError("groundings in a batch must share the premise count")
        premises = tuple(
            TripleBatch.from_triples(g.premise_triples[slot] for g in groundings)
            for slot in range(n_premises)
        )
        return cls(premises, TripleBatch.from_triples(g.conclusion_triple for g in groundings))

    def __len__(self) -> int:
        return len(self.conclusion)


def batch_groundings(groundings: Sequence[RuleGrounding]) -> list[GroundingBatch]:
    """Group groundings by premise count into vectorizable batches."""
    by_count: dict[int, list[RuleGrounding]] = {}
    for g in groundings:
        by_count.setdefault(len(g.premise_triples), []).append(g)
    return [GroundingBatch.from_groundings(by_count[p]) for p in sorted(by_count)]


# ---------------------------------------------------------------------------
# negative sampling
# ---------------------------------------------------------------------------


def cosine_nearest_neighbors(
    embeds: torch.Tensor,
    k: int,
    anchors: torch.Tensor | None = None,
    chunk: int = 2048,
) -> torch.Tensor:
    """Indices of the k same-table rows most cosine-similar to each anchor.

    The anchor itself is excluded; ties break toward the smaller row id. When
    the table has fewer than k other rows, all of them are returned.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    n = embeds.shape[0]
    if anchors is None:
        anchors = torch.arange(n, dtype=torch.long)
    k_eff = min(k, n - 1)
    if k_eff <= 0:
        return torch.zeros(anchors.numel(), 0, dtype=torch.long)
    norms = embeds.norm(dim=1, keepdim=True).clamp_min(1e-12)
    unit = embeds / norms
    out = torch.empty(anchors.numel(), k_eff, dtype=torch.long)
    for start in range(0, anchors.numel(), chunk):
        block = anchors[start : start + chunk]
        sims = unit[block] @ unit.T
        sims[torch.arange(block.numel()), block] = float("-inf")
        order = torch.argsort(-sims, dim=1, stable=True)
        out[start : start + block.numel()] = order[:, :k_eff]
    return out


def sample_entity_negatives(
    embeds: torch.Tensor,
    anchors: torch.Tensor | Sequence[int],
    k: int = 25,
) -> torch.Tensor:
    """Per-anchor negatives: the k cosine-closest entities of the same KG."""
    if not isinstance(anchors, torch.Tensor):
        anchors = torch.tensor(list(anchors), dtype=torch.long)
    return cosine_nearest_neighbors(embeds, k, anchors)


# ---------------------------------------------------------------------------
# align loss
# ---------------------------------------------------------------------------


def _l2_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    diff = a - b
    sq = (diff * diff).sum(dim=-1)
    diagnostics.record_slack("distance_norm", sq.detach().sqrt())
    return torch.sqrt(sq)


def _hinge_sum(args: torch.Tensor) -> torch.Tensor:
    diagnostics.record_slack("hinge", args)
    return torch.relu(args).sum()


def _margin_term(
    left: torch.Tensor,
    right: torch.Tensor,
    pairs: torch.Tensor,
    negatives_left: torch.Tensor,
    negatives_right: torch.Tensor,
    margin: float,
) -> torch.Tensor:
    if pairs.numel() == 0:
        return torch.zeros((), dtype=left.dtype)
    pos_left = left[pairs[:, 0]]
    pos_right = right[pairs[:, 1]]
    d_pos = _l2_distance(pos_left, pos_right)
    total = torch.zeros((), dtype=left.dtype)
    if negatives_left.numel():
        d_neg = _l2_distance(left[negatives_left], pos_right.unsqueeze(1))
        total = total + _hinge_sum(d_pos.unsqueeze(1) + margin - d_neg)
    if negatives_right.numel():
        d_neg = _l2_distance(pos_left.unsqueeze(1), right[negatives_right])
        total = total + _hinge_sum(d_pos.unsqueeze(1) + margin - d_neg)
    return total


def align_loss(
    h_left: torch.Tensor,
    h_right: torch.Tensor,
    rel_left: torch.Tensor,
    rel_right: torch.Tensor,
    entity_pairs: torch.Tensor,
    relation_pairs: torch.Tensor,
    entity_negatives_left: torch.Tensor,
    entity_negatives_right: torch.Tensor,
    relation_negatives_left: torch.Tensor,
    relation_negatives_right: torch.Tensor,
    margin_entity: float = 1.0,
    margin_relation: float = 1.0,
) -> torch.Tensor:
    """Margin ranking loss over seed entity pairs plus seed relation pairs.

    Each positive pair is contrasted against negative pairs built by replacing
    one side with one of its same-KG nearest neighbors (both sides corrupted
    independently).
    """
    entity_term = _margin_term(
        h_left, h_right, entity_pairs, entity_negatives_left, entity_negatives_right, margin_entity
    )
    relation_term = _margin_term(
        rel_left, rel_right, relation_pairs, relation_negatives_left, relation_negatives_right, margin_relation
    )
    return entity_term + relation_term


# ---------------------------------------------------------------------------
# truth values and rule loss
# ---------------------------------------------------------------------------


def triple_truth_values(batch: TripleBatch, ents: torch.Tensor, rels: torch.Tensor) -> torch.Tensor:
    """Truth of each triple: 1 - |e_h + r - e_t| / (3 sqrt(dim)), clamped to [0, 1]."""
    dim = ents.shape[1]
    residual = ents[batch.heads] + rels[batch.rels] - ents[batch.tails]
    sq = (residual * residual).sum(dim=-1)
    diagnostics.record_slack("residual_norm", sq.detach().sqrt())
    raw = 1.0 - torch.sqrt(sq) / (3.0 * dim**0.5)
    diagnostics.record_slack("truth_clamp", raw)
    return raw.clamp(0.0, 1.0)


def triple_truth_value(triple: Triple, ents: torch.Tensor, rels: torch.Tensor) -> torch.Tensor:
    """Scalar truth value of a single triple."""
    return triple_truth_values(TripleBatch.from_triples([triple]), ents, rels)[0]


def implication_truth(premise_truth: torch.Tensor, conclusion_truth: torch.Tensor) -> torch.Tensor:
    """Fuzzy implication: I(ts) * I(tc) - I(ts) + 1."""
    return premise_truth * conclusion_truth - premise_truth + 1.0


def grounding_truth_values(batch: GroundingBatch, ents: torch.Tensor, rels: torch.Tensor) -> torch.Tensor:
    """Truth of groundings: premises conjoin by product, then implication."""
    premise_truth = torch.ones(len(batch), dtype=ents.dtype)
    for premise in batch.premises:
        premise_truth = premise_truth * triple_truth_values(premise, ents, rels)
    conclusion_truth = triple_truth_values(batch.conclusion, ents, rels)
    return implication_truth(premise_truth, conclusion_truth)


def grounding_truth_value(grounding: RuleGrounding, ents: torch.Tensor, rels: torch.Tensor) -> torch.Tensor:
    """Scalar truth value of a single grounding."""
    return grounding_truth_values(GroundingBatch.from_groundings([grounding]), ents, rels)[0]


def rule_loss(
    ents: torch.Tensor,
    rels: torch.Tensor,
    positive_groundings: Sequence[GroundingBatch],
    negative_groundings: Sequence[GroundingBatch],
    positive_triples: TripleBatch,
    negative_triples: TripleBatch,
    margin: float = 0.12,
) -> torch.Tensor:
    """Hinge loss holding groundings and triples truer than corrupted copies.

    Negatives replace exactly one entity of one involved triple; the pairing
    of positives to negatives is positional.
    """
    total = torch.zeros((), dtype=ents.dtype)
    for pos, neg in zip(positive_groundings, negative_groundings):
        pos_truth = grounding_truth_values(pos, ents, rels)
        neg_truth = grounding_truth_values(neg, ents, rels)
        total = total + _hinge_sum(margin - pos_truth + neg_truth)
    if len(positive_triples):
        pos_truth = triple_truth_values(positive_triples, ents, rels)
        neg_truth = triple_truth_values(negative_triples, ents, rels)
        total = total + _hinge_sum(margin - pos_truth + neg_truth)
    return total


def total_loss(align: torch.Tensor, rule_left: torch.Tensor, rule_right: torch.Tensor) -> torch.Tensor:
    """Unweighted sum of the align loss and both KGs' rule losses."""
    return align + rule_left + rule_right
