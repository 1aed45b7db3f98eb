"""Immutable knowledge-graph data model, TSV ingestion, and seed splitting."""

from __future__ import annotations

import math
import random
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Union

TextSource = Union[str, Path, IO[str], Iterable[str]]


class ParseError(ValueError):
    """Malformed input file; carries a 1-based line number when known."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


@dataclass(frozen=True, order=True)
class Triple:
    """A directed fact (head, relation, tail) over dense integer ids."""

    head: int
    relation: int
    tail: int


def _iter_lines(source: TextSource) -> Iterator[tuple[int, str]]:
    """Yield (1-based line number, stripped line), skipping blanks and # comments."""
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            yield from _iter_lines(fh)
        return
    for number, raw in enumerate(source, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        yield number, line


class KnowledgeGraph:
    """A directed graph of deduplicated triples with dense, contiguous ids.

    Entity ids live in [0, num_entities) and relation ids in [0, num_relations);
    each id maps bijectively to a source label. Instances are immutable after
    construction and safe to share across threads.
    """

    def __init__(
        self,
        num_entities: int,
        num_relations: int,
        triples: Iterable[Triple],
        entity_labels: tuple[str, ...] | None = None,
        relation_labels: tuple[str, ...] | None = None,
    ):
        self.num_entities = int(num_entities)
        self.num_relations = int(num_relations)
        self.triples = frozenset(triples)
        self.entity_labels = entity_labels or tuple(str(i) for i in range(self.num_entities))
        self.relation_labels = relation_labels or tuple(str(i) for i in range(self.num_relations))
        if len(self.entity_labels) != self.num_entities:
            raise ValueError("entity label count does not match entity count")
        if len(self.relation_labels) != self.num_relations:
            raise ValueError("relation label count does not match relation count")
        if len(set(self.entity_labels)) != self.num_entities:
            raise ValueError("entity labels are not unique")
        if len(set(self.relation_labels)) != self.num_relations:
            raise ValueError("relation labels are not unique")
        self.entity_ids = {label: i for i, label in enumerate(self.entity_labels)}
        self.relation_ids = {label: i for i, label in enumerate(self.relation_labels)}

        by_head: dict[int, list[Triple]] = defaultdict(list)
        by_relation: dict[int, list[Triple]] = defaultdict(list)
        by_head_relation: dict[tuple[int, int], list[int]] = defaultdict(list)
        by_relation_tail: dict[tuple[int, int], list[int]] = defaultdict(list)
        by_head_tail: dict[tuple[int, int], list[int]] = defaultdict(list)
        for t in self.triples:
            if not (0 <= t.head < self.num_entities and 0 <= t.tail < self.num_entities):
                raise ValueError(f"entity id out of range in {t}")
            if not (0 <= t.relation < self.num_relations):
                raise ValueError(f"relation id out of range in {t}")
            by_head[t.head].append(t)
            by_relation[t.relation].append(t)
            by_head_relation[(t.head, t.relation)].append(t.tail)
            by_relation_tail[(t.relation, t.tail)].append(t.head)
            by_head_tail[(t.head, t.tail)].append(t.relation)
        self._by_head = {k: tuple(sorted(v)) for k, v in by_head.items()}
        self._by_relation = {k: tuple(sorted(v)) for k, v in by_relation.items()}
        self._by_head_relation = {k: tuple(sorted(v)) for k, v in by_head_relation.items()}
        self._by_relation_tail = {k: tuple(sorted(v)) for k, v in by_relation_tail.items()}
        self._by_head_tail = {k: tuple(sorted(v)) for k, v in by_head_tail.items()}

    # -- queries ---------------------------------------------------------

    def __contains__(self, triple: Triple) -> bool:
        return triple in self.triples

    def __len__(self) -> int:
        return len(self.triples)

    @property
    def num_triples(self) -> int:
        return len(self.triples)

    def triples_from(self, head: int) -> tuple[Triple, ...]:
        return self._by_head.get(head, ())

    def triples_of_relation(self, relation: int) -> tuple[Triple, ...]:
        return self._by_relation.get(relation, ())

    def tails(self, head: int, relation: int) -> tuple[int, ...]:
        return self._by_head_relation.get((head, relation), ())

    def heads(self, relation: int, tail: int) -> tuple[int, ...]:
        return self._by_relation_tail.get((relation, tail), ())

    def relations_between(self, head: int, tail: int) -> tuple[int, ...]:
        return self._by_head_tail.get((head, tail), ())

    def out_neighbors(self, head: int) -> tuple[int, ...]:
        return tuple(sorted({t.tail for t in self._by_head.get(head, ())}))

    def relation_pairs(self, relation: int) -> set[tuple[int, int]]:
        """All (head, tail) pairs connected by the given relation."""
        return {(t.head, t.tail) for t in self._by_relation.get(relation, ())}

    def relation_head_set(self, relation: int) -> set[int]:
        """All entities appearing as head of at least one fact of the relation."""
        return {t.head for t in self._by_relation.get(relation, ())}

    # -- construction ----------------------------------------------------

    def with_added_triples(self, extra: Iterable[Triple]) -> "KnowledgeGraph":
        """A new graph with the given triples unioned in; ids and labels unchanged."""
        return KnowledgeGraph(
            self.num_entities,
            self.num_relations,
            self.triples | set(extra),
            self.entity_labels,
            self.relation_labels,
        )

    # -- serialization ---------------------------------------------------

    def to_tsv(self, destination: Union[str, Path, IO[str]]) -> None:
        """Write the triple set as 3-column TSV, sorted by labels.

        Reloading the output with ``load_kg`` reproduces the same label-level
        triple set, and re-serializing yields byte-identical output.
        """
        if isinstance(destination, (str, Path)):
            with open(destination, "w", encoding="utf-8") as fh:
                self.to_tsv(fh)
            return
        rows = sorted(
            (self.entity_labels[t.head], self.relation_labels[t.relation], self.entity_labels[t.tail])
            for t in self.triples
        )
        for h, r, t in rows:
            destination.write(f"{h}\t{r}\t{t}\n")


def load_kg(source: TextSource) -> KnowledgeGraph:
    """Parse a 3-column TSV of (head, relation, tail) into a KnowledgeGraph.

    Tokens are interned to dense ids in first-seen order; duplicate lines
    collapse by set semantics. Lines starting with ``#`` and blank lines are
    skipped. Raises ParseError with the line number on a wrong field count.
    """
    entities: dict[str, int] = {}
    relations: dict[str, int] = {}
    triples: set[Triple] = set()

    def intern(table: dict[str, int], token: str) -> int:
        if token not in table:
            table[token] = len(table)
        return table[token]

    for number, line in _iter_lines(source):
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", number)
        head, relation, tail = (f.strip() for f in fields)
        if not head or not relation or not tail:
            raise ParseError("empty field", number)
        triples.add(Triple(intern(entities, head), intern(relations, relation), intern(entities, tail)))

    return KnowledgeGraph(
        len(entities),
        len(relations),
        triples,
        tuple(entities),
        tuple(relations),
    )


@dataclass(frozen=True)
class SeedAlignments:
    """Known entity/relation correspondences between two graphs.

    Pairs are (id in left KG, id in right KG). Relation pairs form a partial
    one-to-one mapping in both directions; entity pairs may be many-to-many.
    """

    entity_pairs: tuple[tuple[int, int], ...]
    relation_pairs: tuple[tuple[int, int], ...] = ()

    def relation_mapping(self, direction: str = "left_to_right") -> dict[int, int]:
        """The relation pairs as a dict, oriented by ``direction``."""
        if direction == "left_to_right":
            return {a: b for a, b in self.relation_pairs}
        if direction == "right_to_left":
            return {b: a for a, b in self.relation_pairs}
        raise ValueError(f"unknown direction {direction!r}")


def _read_pairs(
    source: TextSource,
    left: KnowledgeGraph,
    right: KnowledgeGraph,
    kind: str,
) -> list[tuple[int, int]]:
    left_ids = left.entity_ids if kind == "entity" else left.relation_ids
    right_ids = right.entity_ids if kind == "entity" else right.relation_ids
    pairs: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for number, line in _iter_lines(source):
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(f"expected 2 tab-separated fields, got {len(fields)}", number)
        a, b = (f.strip() for f in fields)
        if a not in left_ids:
            raise ParseError(f"unknown {kind} token {a!r} in left KG", number)
        if b not in right_ids:
            raise ParseError(f"unknown {kind} token {b!r} in right KG", number)
        pair = (left_ids[a], right_ids[b])
        if pair in seen:
            continue
        seen.add(pair)
        pairs.append(pair)
    return pairs


def load_relation_pairs(
    source: TextSource,
    kg: KnowledgeGraph,
    kg2: KnowledgeGraph,
) -> tuple[tuple[int, int], ...]:
    """Load seed relation pairs; must be one-to-one in both directions."""
    relation_pairs = _read_pairs(source, kg, kg2, "relation")
    lefts: dict[int, int] = {}
    rights: dict[int, int] = {}
    for a, b in relation_pairs:
        if lefts.setdefault(a, b) != b:
            raise ParseError(
                f"conflicting relation pairs for {kg.relation_labels[a]!r}: "
                f"maps to both {kg2.relation_labels[lefts[a]]!r} and {kg2.relation_labels[b]!r}"
            )
        if rights.setdefault(b, a) != a:
            raise ParseError(
                f"conflicting relation pairs for {kg2.relation_labels[b]!r}: "
                f"mapped from both {kg.relation_labels[rights[b]]!r} and {kg.relation_labels[a]!r}"
            )
    return tuple(relation_pairs)


def load_seed_alignments(
    entity_source: TextSource,
    relation_source: TextSource | None,
    kg: KnowledgeGraph,
    kg2: KnowledgeGraph,
) -> SeedAlignments:
    """Load seed entity (and optional relation) pairs from 2-column TSV files.

    A missing relation source yields empty relation pairs, which disables rule
    transfer downstream. Relation pairs must be one-to-one per direction;
    conflicting pairs are a load error.
    """
    entity_pairs = _read_pairs(entity_source, kg, kg2, "entity")
    relation_pairs: tuple[tuple[int, int], ...] = ()
    if relation_source is not None:
        relation_pairs = load_relation_pairs(relation_source, kg, kg2)
    return SeedAlignments(tuple(entity_pairs), relation_pairs)


def split_entity_seeds(
    seeds: SeedAlignments,
    train_fraction: float,
    seed: int,
) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Partition entity seed pairs into train/test splits.

    The train size is round-half-up of ``train_fraction * |pairs|`` and the
    shuffle is a pure function of ``seed``, so identical inputs give
    byte-identical splits.
    """
    if not 0.0 <= train_fraction <= 1.0:
        raise ValueError(f"train_fraction must be in [0, 1], got {train_fraction}")
    pairs = sorted(set(seeds.entity_pairs))
    rng = random.Random(seed)
    rng.shuffle(pairs)
    n_train = int(math.floor(train_fraction * len(pairs) + 0.5))
    return pairs[:n_train], pairs[n_train:]
