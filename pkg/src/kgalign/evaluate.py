"""Alignment ranking metrics (Hits@N, MRR) and the seed-proportion sweep."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import IO, Sequence, Union

import torch

from .kg import KnowledgeGraph, SeedAlignments, split_entity_seeds
from .rules import RuleGrounding
from .train import TrainConfig, TrainResult, train


@dataclass
class MetricsReport:
    """Ranking quality of predicted counterparts over a test pair set."""

    hits_at: dict[int, float]
    mrr: float
    direction: str
    n_test: int
    n_candidates: int

    def to_json_dict(self) -> dict:
        return {
            "hits": {str(n): v for n, v in sorted(self.hits_at.items())},
            "mrr": self.mrr,
            "direction": self.direction,
            "n_test": self.n_test,
        }

    def write_json(self, destination: Union[str, Path, IO[str]]) -> None:
        if isinstance(destination, (str, Path)):
            with open(destination, "w", encoding="utf-8") as fh:
                self.write_json(fh)
            return
        json.dump(self.to_json_dict(), destination, indent=2, sort_keys=True)
        destination.write("\n")


def target_ranks(
    h_source: torch.Tensor,
    h_target: torch.Tensor,
    pairs: torch.Tensor,
    chunk_elements: int = 20_000_000,
) -> torch.Tensor:
    """1-based rank of each true counterpart among all target entities.

    Candidates are ordered by ascending L2 distance to the source entity;
    exact distance ties break toward the smaller entity id.
    """
    n_target, dim = h_target.shape
    ids = torch.arange(n_target)
    ranks = torch.empty(pairs.shape[0], dtype=torch.long)
    rows_per_chunk = max(1, chunk_elements // max(1, n_target * dim))
    for start in range(0, pairs.shape[0], rows_per_chunk):
        block = pairs[start : start + rows_per_chunk]
        diff = h_source[block[:, 0]].unsqueeze(1) - h_target.unsqueeze(0)
        dists = (diff * diff).sum(dim=-1)
        true_ids = block[:, 1]
        d_true = dists[torch.arange(block.shape[0]), true_ids]
        closer = (dists < d_true.unsqueeze(1)).sum(dim=1)
        tied_before = ((dists == d_true.unsqueeze(1)) & (ids.unsqueeze(0) < true_ids.unsqueeze(1))).sum(dim=1)
        ranks[start : start + block.shape[0]] = 1 + closer + tied_before
    return ranks


def _one_direction(
    pairs: torch.Tensor,
    h_source: torch.Tensor,
    h_target: torch.Tensor,
    hits_levels: Sequence[int],
    direction: str,
) -> MetricsReport:
    ranks = target_ranks(h_source, h_target, pairs)
    reciprocal = 1.0 / ranks.to(torch.float64)
    hits = {n: float((ranks <= n).to(torch.float64).mean()) for n in hits_levels}
    return MetricsReport(
        hits_at=hits,
        mrr=float(reciprocal.mean()),
        direction=direction,
        n_test=int(pairs.shape[0]),
        n_candidates=int(h_target.shape[0]),
    )


def evaluate_alignment(
    test_pairs: Sequence[tuple[int, int]],
    h_source: torch.Tensor,
    h_target: torch.Tensor,
    hits_levels: Sequence[int] = (1, 10),
    direction: str = "source_to_target",
) -> MetricsReport:
    """Hits@N and MRR of true counterparts ranked by embedding distance.

    Candidates are all entities of the opposite KG. ``direction`` selects
    which side is ranked; ``both`` averages the two directions (its candidate
    count is the sum over directions).
    """
    if not len(test_pairs):
        raise ValueError("test pairs must be nonempty")
    pairs = torch.tensor(list(test_pairs), dtype=torch.long)
    if direction == "source_to_target":
        return _one_direction(pairs, h_source, h_target, hits_levels, direction)
    if direction == "target_to_source":
        return _one_direction(pairs.flip(1), h_target, h_source, hits_levels, direction)
    if direction == "both":
        fwd = _one_direction(pairs, h_source, h_target, hits_levels, "source_to_target")
        rev = _one_direction(pairs.flip(1), h_target, h_source, hits_levels, "target_to_source")
        return MetricsReport(
            hits_at={n: (fwd.hits_at[n] + rev.hits_at[n]) / 2.0 for n in hits_levels},
            mrr=(fwd.mrr + rev.mrr) / 2.0,
            direction="both",
            n_test=fwd.n_test,
            n_candidates=fwd.n_candidates + rev.n_candidates,
        )
    raise ValueError(f"unknown direction {direction!r}")


# ---------------------------------------------------------------------------
# seed-proportion sweep
# ---------------------------------------------------------------------------


@dataclass
class AlignmentTask:
    """A prepared dataset: completed KGs, seed alignments, grounding records."""

    kg_left: KnowledgeGraph
    kg_right: KnowledgeGraph
    seeds: SeedAlignments
    groundings_left: Sequence[RuleGrounding] = ()
    groundings_right: Sequence[RuleGrounding] = ()


@dataclass
class SweepRow:
    fraction: float
    metrics: MetricsReport


def seed_sweep(
    task: AlignmentTask,
    config: TrainConfig,
    fractions: Sequence[float] = (0.1, 0.2, 0.3, 0.4, 0.5),
    hits_levels: Sequence[int] = (1, 10),
    direction: str = "source_to_target",
    progress: bool = False,
) -> tuple[list[SweepRow], list[str]]:
    """Train once per seed fraction (fixed rng seed) and score the test split.

    Returns the metric rows plus messages for skipped fractions (for example
    a fraction of 1.0 leaves no test pairs).
    """
    rows: list[SweepRow] = []
    skipped: list[str] = []
    for fraction in fractions:
        if not 0.0 < fraction <= 1.0:
            skipped.append(f"fraction {fraction}: outside (0, 1]")
            continue
        train_pairs, test_pairs = split_entity_seeds(task.seeds, fraction, config.rng_seed)
        if not test_pairs:
            skipped.append(f"fraction {fraction}: empty test split")
            continue
        if not train_pairs:
            skipped.append(f"fraction {fraction}: empty train split")
            continue
        if progress:
            print(f"training at seed fraction {fraction} ({len(train_pairs)} train / {len(test_pairs)} test)")
        cfg = replace(config, train_fraction=fraction)
        result: TrainResult = train(
            task.kg_left,
            task.kg_right,
            train_pairs,
            task.seeds.relation_pairs,
            task.groundings_left,
            task.groundings_right,
            cfg,
        )
        with torch.no_grad():
            h_left, h_right = result.model.forward_all(training=False)
        rows.append(SweepRow(fraction, evaluate_alignment(test_pairs, h_left, h_right, hits_levels, direction)))
    return rows, skipped


def write_sweep_csv(
    rows: Sequence[SweepRow],
    destination: Union[str, Path, IO[str]],
    hits_levels: Sequence[int] = (1, 10),
) -> None:
    if isinstance(destination, (str, Path)):
        with open(destination, "w", encoding="utf-8") as fh:
            write_sweep_csv(rows, fh, hits_levels)
        return
    header = ",".join(["fraction", *(f"hits_at_{n}" for n in hits_levels), "mrr"])
    destination.write(header + "\n")
    for row in rows:
        cells = [f"{row.fraction:g}", *(f"{row.metrics.hits_at[n]:.6f}" for n in hits_levels), f"{row.metrics.mrr:.6f}"]
        destination.write(",".join(cells) + "\n")
