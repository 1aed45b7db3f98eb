"""Closed Horn rules: mining with PCA confidence, cross-KG transfer, grounding.

Rules have one or two premise atoms and a single conclusion atom over the
variable set {x, y, z}. A rule is closed (every variable occurs at least
twice) and connected (premises chain the conclusion variables together).
Mining scores candidates by support and PCA confidence, where the PCA
denominator counts premise matches whose subject already has some fact of
the conclusion relation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence, Union

from .kg import KnowledgeGraph, ParseError, TextSource, Triple, _iter_lines

VARIABLES = ("x", "y", "z")


@dataclass(frozen=True, order=True)
class RuleAtom:
    """One literal ``relation(subject, object)`` over distinct variables."""

    relation: int
    subject: str
    object: str

    def __post_init__(self):
        if self.subject not in VARIABLES or self.object not in VARIABLES:
            raise ValueError(f"atom variables must be in {VARIABLES}")
        if self.subject == self.object:
            raise ValueError("atom must relate two distinct variables")

    def rename(self, mapping: Mapping[str, str]) -> "RuleAtom":
        return RuleAtom(self.relation, mapping[self.subject], mapping[self.object])

    @property
    def variables(self) -> frozenset[str]:
        return frozenset((self.subject, self.object))


@dataclass(frozen=True)
class HornRule:
    """``premise_1 [and premise_2] implies conclusion`` over shared variables."""

    premises: tuple[RuleAtom, ...]
    conclusion: RuleAtom

    def __post_init__(self):
        if not 1 <= len(self.premises) <= 2:
            raise ValueError("rule must have 1 or 2 premises")
        atoms = (*self.premises, self.conclusion)
        counts: dict[str, int] = {}
        for atom in atoms:
            for v in (atom.subject, atom.object):
                counts[v] = counts.get(v, 0) + 1
        if any(c < 2 for c in counts.values()):
            raise ValueError("rule is not closed: every variable must occur at least twice")
        premise_vars = frozenset().union(*(p.variables for p in self.premises))
        if not self.conclusion.variables <= premise_vars:
            raise ValueError("conclusion variables must appear in the premises")
        if len(self.premises) == 2 and not (self.premises[0].variables & self.premises[1].variables):
            raise ValueError("premises must share a variable")
        if any(p == self.conclusion for p in self.premises):
            raise ValueError("conclusion must differ from every premise atom")

    @property
    def relations(self) -> tuple[int, ...]:
        return (*(p.relation for p in self.premises), self.conclusion.relation)

    def rename(self, mapping: Mapping[str, str]) -> "HornRule":
        return HornRule(tuple(p.rename(mapping) for p in self.premises), self.conclusion.rename(mapping))

    def substitute_relations(self, mapping: Mapping[int, int]) -> "HornRule":
        """The rule with every relation replaced by its counterpart."""
        return HornRule(
            tuple(RuleAtom(mapping[p.relation], p.subject, p.object) for p in self.premises),
            RuleAtom(mapping[self.conclusion.relation], self.conclusion.subject, self.conclusion.object),
        )

    def canonical(self) -> "HornRule":
        """Lexicographically minimal variable renaming over the atom-sorted form.

        Two rules are logically identical exactly when their canonical forms
        compare equal; used for the "already known in the target set" test.
        """
        best = None
        for perm in itertools.permutations(VARIABLES):
            mapping = dict(zip(VARIABLES, perm))
            renamed = self.rename(mapping)
            key = (renamed.conclusion, tuple(sorted(renamed.premises)))
            if best is None or key < best:
                best = key
        conclusion, premises = best
        return HornRule(premises, conclusion)


@dataclass(frozen=True)
class MinedRule:
    """A rule with its exact support and PCA confidence on the mined KG."""

    rule: HornRule
    support: int
    pca_confidence: float


@dataclass(frozen=True)
class RuleGrounding:
    """One instantiation of a rule: premises found in the KG, conclusion absent."""

    premise_triples: tuple[Triple, ...]
    conclusion_triple: Triple
    source_rule: HornRule


# ---------------------------------------------------------------------------
# binding enumeration
# ---------------------------------------------------------------------------


def _premise_assignments(kg: KnowledgeGraph, rule: HornRule) -> list[dict[str, int]]:
    """All variable assignments under which every premise triple is in the KG."""
    assignments: list[dict[str, int]] = [{}]
    for atom in rule.premises:
        extended: list[dict[str, int]] = []
        for bound in assignments:
            s = bound.get(atom.subject)
            o = bound.get(atom.object)
            if s is not None and o is not None:
                if Triple(s, atom.relation, o) in kg:
                    extended.append(bound)
            elif s is not None:
                for tail in kg.tails(s, atom.relation):
                    extended.append({**bound, atom.object: tail})
            elif o is not None:
                for head in kg.heads(atom.relation, o):
                    extended.append({**bound, atom.subject: head})
            else:
                for t in kg.triples_of_relation(atom.relation):
                    extended.append({**bound, atom.subject: t.head, atom.object: t.tail})
        assignments = extended
        if not assignments:
            break
    return assignments


def _score_rule(kg: KnowledgeGraph, rule: HornRule) -> tuple[int, int]:
    """(support, pca_body_count) by exact enumeration of premise bindings.

    support counts distinct conclusion-pair bindings (s, o) whose conclusion
    triple is present; the PCA denominator counts bindings whose subject s has
    at least one fact of the conclusion relation.
    """
    cs, co, cr = rule.conclusion.subject, rule.conclusion.object, rule.conclusion.relation
    body = {(a[cs], a[co]) for a in _premise_assignments(kg, rule)}
    conclusion_pairs = kg.relation_pairs(cr)
    heads_with_fact = kg.relation_head_set(cr)
    support = sum(1 for pair in body if pair in conclusion_pairs)
    pca_body = sum(1 for s, _ in body if s in heads_with_fact)
    return support, pca_body


# ---------------------------------------------------------------------------
# mining
# ---------------------------------------------------------------------------


def _single_premise_candidates(kg: KnowledgeGraph) -> set[HornRule]:
    """Candidate 1-premise rules with at least one supporting instance."""
    candidates: set[HornRule] = set()
    pair_index = kg._by_head_tail
    for (h, t), rels in pair_index.items():
        inverse = pair_index.get((t, h), ())
        for conclusion_rel in rels:
            for premise_rel in rels:
                if premise_rel == conclusion_rel:
                    continue  # conclusion would equal the premise atom
                rule = HornRule(
                    (RuleAtom(premise_rel, "x", "y"),),
                    RuleAtom(conclusion_rel, "x", "y"),
                )
                candidates.add(rule.canonical())
            for premise_rel in inverse:
                rule = HornRule(
                    (RuleAtom(premise_rel, "y", "x"),),
                    RuleAtom(conclusion_rel, "x", "y"),
                )
                candidates.add(rule.canonical())
    return candidates


def _two_premise_candidates(kg: KnowledgeGraph) -> set[HornRule]:
    """Candidate 2-premise rules with at least one supporting instance.

    Premises share exactly one (join) variable and the conclusion relates the
    two unshared variables: for every conclusion triple (s, c, o), every
    intermediate entity m connected to both s and o spawns candidates for all
    four premise orientation combinations.
    """
    candidates: set[HornRule] = set()
    pair_index = kg._by_head_tail

    def incident(e: int) -> set[int]:
        others = {t.tail for t in kg.triples_from(e)}
        others.update(h for (h, t2) in pair_index if t2 == e)
        return others

    incident_cache: dict[int, set[int]] = {}
    for triple in sorted(kg.triples):
        s, c, o = triple.head, triple.relation, triple.tail
        if s not in incident_cache:
            incident_cache[s] = incident(s)
        if o not in incident_cache:
            incident_cache[o] = incident(o)
        for m in incident_cache[s] & incident_cache[o]:
            first = [
                *((RuleAtom(r, "x", "z")) for r in pair_index.get((s, m), ())),
                *((RuleAtom(r, "z", "x")) for r in pair_index.get((m, s), ())),
            ]
            second = [
                *((RuleAtom(r, "z", "y")) for r in pair_index.get((m, o), ())),
                *((RuleAtom(r, "y", "z")) for r in pair_index.get((o, m), ())),
            ]
            conclusion = RuleAtom(c, "x", "y")
            for p1 in first:
                for p2 in second:
                    candidates.add(HornRule((p1, p2), conclusion).canonical())
    return candidates


def mine_rules(
    kg: KnowledgeGraph,
    max_premises: int = 2,
    min_pca_conf: float = 0.8,
    min_support: int = 2,
) -> list[MinedRule]:
    """Mine closed connected Horn rules scored by support and PCA confidence.

    Enumerates every candidate shape with at least one supporting instance
    (shapes without support cannot pass ``min_support >= 1``), scores each by
    exact binding enumeration, and keeps rules with
    ``pca_confidence >= min_pca_conf`` and ``support >= min_support``,
    deduplicated by canonical form.
    """
    if max_premises not in (1, 2):
        raise ValueError("max_premises must be 1 or 2")
    if min_support < 1:
        raise ValueError("min_support must be at least 1")

    candidates = _single_premise_candidates(kg)
    if max_premises == 2:
        candidates |= _two_premise_candidates(kg)

    mined: list[MinedRule] = []
    for rule in candidates:
        support, pca_body = _score_rule(kg, rule)
        if support < min_support:
            continue
        confidence = support / pca_body
        if confidence >= min_pca_conf:
            mined.append(MinedRule(rule, support, confidence))
    mined.sort(key=lambda m: (-m.support, -m.pca_confidence, _rule_sort_key(m.rule)))
    return mined


def _rule_sort_key(rule: HornRule):
    c = rule.conclusion
    return ((c.relation, c.subject, c.object), tuple((p.relation, p.subject, p.object) for p in rule.premises))


# ---------------------------------------------------------------------------
# transfer
# ---------------------------------------------------------------------------


def transfer_rules(
    rules: Sequence[MinedRule | HornRule],
    relation_pairs: Iterable[tuple[int, int]],
    direction: str = "left_to_right",
    existing: Iterable[HornRule] = (),
) -> list[HornRule]:
    """Substitute aligned relations into rules mined on the other KG.

    A rule transfers only if every relation it mentions has a counterpart in
    the (one-to-one) mapping; untransferable rules are skipped silently. Rules
    whose canonical form is already in ``existing`` are not emitted.
    """
    pairs = list(relation_pairs)
    if direction == "left_to_right":
        mapping = {a: b for a, b in pairs}
    elif direction == "right_to_left":
        mapping = {b: a for a, b in pairs}
    else:
        raise ValueError(f"unknown direction {direction!r}")
    if len(mapping) != len(pairs):
        raise ValueError("relation pairs are not one-to-one in the requested direction")

    known = {r.canonical() for r in existing}
    transferred: list[HornRule] = []
    for entry in rules:
        rule = entry.rule if isinstance(entry, MinedRule) else entry
        if not all(r in mapping for r in rule.relations):
            continue
        counterpart = rule.substitute_relations(mapping).canonical()
        if counterpart in known:
            continue
        known.add(counterpart)
        transferred.append(counterpart)
    transferred.sort(key=_rule_sort_key)
    return transferred


# ---------------------------------------------------------------------------
# grounding and completion
# ---------------------------------------------------------------------------


def ground_rule(kg: KnowledgeGraph, rule: HornRule) -> list[RuleGrounding]:
    """All instantiations whose premises are in the KG but conclusion is not.

    Each variable binding yields exactly one grounding; the output is sorted
    by the bound entity ids of the conclusion and premise triples.
    """
    for r in rule.relations:
        if not 0 <= r < kg.num_relations:
            raise ValueError(f"rule relation {r} not valid in this KG")
    groundings = []
    for bound in _premise_assignments(kg, rule):
        conclusion = Triple(bound[rule.conclusion.subject], rule.conclusion.relation, bound[rule.conclusion.object])
        if conclusion in kg:
            continue
        premises = tuple(Triple(bound[p.subject], p.relation, bound[p.object]) for p in rule.premises)
        groundings.append(RuleGrounding(premises, conclusion, rule))
    groundings.sort(key=lambda g: (g.conclusion_triple, g.premise_triples))
    return groundings


def complete_kg(
    kg: KnowledgeGraph,
    rules: Iterable[HornRule],
) -> tuple[KnowledgeGraph, list[RuleGrounding]]:
    """Single-pass completion: add every grounding's conclusion triple to the KG.

    Groundings are collected against the original triple set only (no fixpoint
    iteration) and returned for use as training constraints.
    """
    unique_rules = []
    seen = set()
    for rule in rules:
        c = rule.canonical()
        if c not in seen:
            seen.add(c)
            unique_rules.append(c)
    unique_rules.sort(key=_rule_sort_key)

    groundings: list[RuleGrounding] = []
    for rule in unique_rules:
        groundings.extend(ground_rule(kg, rule))
    completed = kg.with_added_triples(g.conclusion_triple for g in groundings)
    return completed, groundings


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def _format_atom(atom: RuleAtom, kg: KnowledgeGraph) -> str:
    return f"{kg.relation_labels[atom.relation]}({atom.subject},{atom.object})"


def format_rule(rule: HornRule, kg: KnowledgeGraph) -> str:
    premises = ", ".join(_format_atom(p, kg) for p in rule.premises)
    return f"{_format_atom(rule.conclusion, kg)} <- {premises}"


def write_rules(rules: Sequence[MinedRule | HornRule], kg: KnowledgeGraph, destination: Union[str, Path, IO[str]]) -> None:
    """One rule per line: ``conclusion(u,v) <- premise(u,w)[, premise(w,v)]``."""
    if isinstance(destination, (str, Path)):
        with open(destination, "w", encoding="utf-8") as fh:
            write_rules(rules, kg, fh)
        return
    for entry in rules:
        rule = entry.rule if isinstance(entry, MinedRule) else entry
        destination.write(format_rule(rule, kg) + "\n")


def _parse_atom(text: str, kg: KnowledgeGraph, line_number: int) -> RuleAtom:
    text = text.strip()
    if len(text) < 6 or text[-1] != ")" or text[-3] != "," or text[-5] != "(":
        raise ParseError(f"malformed atom {text!r}", line_number)
    label, subject, obj = text[:-5], text[-4], text[-2]
    if label not in kg.relation_ids:
        raise ParseError(f"unknown relation token {label!r}", line_number)
    try:
        return RuleAtom(kg.relation_ids[label], subject, obj)
    except ValueError as exc:
        raise ParseError(str(exc), line_number) from exc


def read_rules(source: TextSource, kg: KnowledgeGraph) -> list[HornRule]:
    """Parse the rule file format written by ``write_rules``."""
    rules: list[HornRule] = []
    for number, line in _iter_lines(source):
        if " <- " not in line:
            raise ParseError("expected 'conclusion <- premises'", number)
        conclusion_text, premise_text = line.split(" <- ", 1)
        pieces = premise_text.split("), ")
        atoms = [p if p.endswith(")") else p + ")" for p in pieces]
        try:
            rule = HornRule(
                tuple(_parse_atom(a, kg, number) for a in atoms),
                _parse_atom(conclusion_text, kg, number),
            )
        except ParseError:
            raise
        except ValueError as exc:
            raise ParseError(str(exc), number) from exc
        rules.append(rule)
    return rules


def write_groundings(
    groundings: Sequence[RuleGrounding],
    kg: KnowledgeGraph,
    destination: Union[str, Path, IO[str]],
) -> None:
    """TSV: rule text, premise count, conclusion h/r/t, then premise h/r/t columns."""
    if isinstance(destination, (str, Path)):
        with open(destination, "w", encoding="utf-8") as fh:
            write_groundings(groundings, kg, fh)
        return

    def triple_cols(t: Triple) -> list[str]:
        return [kg.entity_labels[t.head], kg.relation_labels[t.relation], kg.entity_labels[t.tail]]

    for g in groundings:
        row = [format_rule(g.source_rule, kg), str(len(g.premise_triples))]
        row += triple_cols(g.conclusion_triple)
        for p in g.premise_triples:
            row += triple_cols(p)
        destination.write("\t".join(row) + "\n")


def read_groundings(source: TextSource, kg: KnowledgeGraph) -> list[RuleGrounding]:
    """Parse the grounding records written by ``write_groundings``."""

    def parse_triple(cols: list[str], number: int) -> Triple:
        h, r, t = cols
        for token, table, what in ((h, kg.entity_ids, "entity"), (r, kg.relation_ids, "relation"), (t, kg.entity_ids, "entity")):
            if token not in table:
                raise ParseError(f"unknown {what} token {token!r}", number)
        return Triple(kg.entity_ids[h], kg.relation_ids[r], kg.entity_ids[t])

    groundings: list[RuleGrounding] = []
    for number, line in _iter_lines(source):
        cols = line.split("\t")
        if len(cols) < 5:
            raise ParseError("truncated grounding record", number)
        rule = read_rules([cols[0]], kg)[0]
        n_premises = int(cols[1])
        expected = 2 + 3 * (1 + n_premises)
        if len(cols) != expected:
            raise ParseError(f"expected {expected} columns, got {len(cols)}", number)
        conclusion = parse_triple(cols[2:5], number)
        premises = tuple(parse_triple(cols[5 + 3 * i : 8 + 3 * i], number) for i in range(n_premises))
        groundings.append(RuleGrounding(premises, conclusion, rule))
    return groundings


def write_rule_stats(
    destination: Union[str, Path, IO[str]],
    dataset: str,
    n_rules: int,
    n_transferred_rules: int,
    n_groundings: int,
    n_transferred_groundings: int,
) -> None:
    """Stats TSV with one row per KG: rule and grounding counts by origin."""
    if isinstance(destination, (str, Path)):
        with open(destination, "w", encoding="utf-8") as fh:
            write_rule_stats(fh, dataset, n_rules, n_transferred_rules, n_groundings, n_transferred_groundings)
        return
    destination.write("dataset\tn_rules\tn_transferred_rules\tn_groundings\tn_transferred_groundings\n")
    destination.write(
        f"{dataset}\t{n_rules}\t{n_transferred_rules}\t{n_groundings}\t{n_transferred_groundings}\n"
    )


