"""Weighted connectivity matrices: graph self-attention and cross-KG attention.

Each KG gets two sparse nonnegative adjacencies driving separate propagation
channels: one from attention over an entity's out-neighborhood (row-softmax
normalized), one from the best inner-product match between the relations on
an edge and the other KG's relations (edges with no good counterpart decay
toward zero, pruning exclusive entities).
"""

from __future__ import annotations

from pathlib import Path
from typing import IO, Union

import torch
import torch.nn.functional as F

from . import diagnostics
from .kg import KnowledgeGraph


class GraphIndex:
    """Edge tensors of one KG, precomputed once and reused across layers.

    Neighborhoods are symmetrized: an edge in either direction connects both
    endpoints for propagation purposes. Alignment signal must travel against
    edge direction too, otherwise entities reachable only via incoming edges
    never receive seed information.
    """

    def __init__(self, kg: KnowledgeGraph):
        self.n = kg.num_entities
        self.num_relations = kg.num_relations

        directed = set(kg._by_head_tail)
        undirected = directed | {(j, i) for i, j in directed}
        loops = {(i, i) for i in range(self.n)}
        att_edges = sorted(undirected | loops)
        self.att_src = torch.tensor([e[0] for e in att_edges], dtype=torch.long)
        self.att_dst = torch.tensor([e[1] for e in att_edges], dtype=torch.long)

        cross_pairs = sorted(p for p in undirected if p[0] != p[1])
        self.cross_src = torch.tensor([p[0] for p in cross_pairs], dtype=torch.long)
        self.cross_dst = torch.tensor([p[1] for p in cross_pairs], dtype=torch.long)
        entry_pair: list[int] = []
        entry_rel: list[int] = []
        for idx, (h, t) in enumerate(cross_pairs):
            rels = set(kg.relations_between(h, t)) | set(kg.relations_between(t, h))
            for r in sorted(rels):
                entry_pair.append(idx)
                entry_rel.append(r)
        self.cross_entry_pair = torch.tensor(entry_pair, dtype=torch.long)
        self.cross_entry_rel = torch.tensor(entry_rel, dtype=torch.long)

        triples = sorted(kg.triples)
        self.triple_heads = torch.tensor([t.head for t in triples], dtype=torch.long)
        self.triple_rels = torch.tensor([t.relation for t in triples], dtype=torch.long)
        self.triple_tails = torch.tensor([t.tail for t in triples], dtype=torch.long)


class WeightedAdjacency:
    """Sparse n-by-n nonnegative matrix stored as (row, col, value) entries."""

    def __init__(self, size: int, rows: torch.Tensor, cols: torch.Tensor, values: torch.Tensor):
        self.size = size
        self.rows = rows
        self.cols = cols
        self.values = values

    def propagate(self, h: torch.Tensor) -> torch.Tensor:
        """A @ h via gather/scatter; differentiable in both values and h."""
        out = torch.zeros(self.size, h.shape[1], dtype=h.dtype)
        if self.rows.numel() == 0:
            return out
        return out.index_add(0, self.rows, self.values.unsqueeze(1) * h[self.cols])

    def row_sums(self) -> torch.Tensor:
        out = torch.zeros(self.size, dtype=self.values.dtype)
        if self.rows.numel() == 0:
            return out
        return out.index_add(0, self.rows, self.values)

    def to_dense(self) -> torch.Tensor:
        dense = torch.zeros(self.size, self.size, dtype=self.values.dtype)
        dense[self.rows, self.cols] = self.values
        return dense

    def entries(self) -> dict[tuple[int, int], float]:
        return {
            (int(i), int(j)): float(v)
            for i, j, v in zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist())
        }

    def dump_tsv(self, destination: Union[str, Path, IO[str]]) -> None:
        """Debug dump as ``row<TAB>col<TAB>weight`` lines sorted by (row, col)."""
        if isinstance(destination, (str, Path)):
            with open(destination, "w", encoding="utf-8") as fh:
                self.dump_tsv(fh)
            return
        order = sorted(range(self.rows.numel()), key=lambda k: (int(self.rows[k]), int(self.cols[k])))
        for k in order:
            destination.write(f"{int(self.rows[k])}\t{int(self.cols[k])}\t{float(self.values[k]):.17g}\n")


def _as_graph(graph: GraphIndex | KnowledgeGraph) -> GraphIndex:
    return graph if isinstance(graph, GraphIndex) else GraphIndex(graph)


def segment_softmax(scores: torch.Tensor, segments: torch.Tensor, n_segments: int) -> torch.Tensor:
    """Softmax of ``scores`` within each segment, max-subtracted for stability."""
    maxima = torch.full((n_segments,), float("-inf"), dtype=scores.dtype)
    maxima = maxima.scatter_reduce(0, segments, scores.detach(), reduce="amax", include_self=True)
    shifted = torch.exp(scores - maxima[segments])
    denom = torch.zeros(n_segments, dtype=scores.dtype).index_add(0, segments, shifted)
    return shifted / denom[segments]


def self_attention_adjacency(
    graph: GraphIndex | KnowledgeGraph,
    h: torch.Tensor,
    att_w: torch.Tensor,
    att_p: torch.Tensor,
    negative_slope: float = 0.2,
) -> WeightedAdjacency:
    """Attention weights over each entity's neighbors plus a self-loop.

    Edge coefficients are LeakyReLU of the shared projection of both endpoint
    states dotted with the attention vector, normalized per row by softmax, so
    every stored row sums to one and an isolated entity keeps weight 1 on
    itself.
    """
    g = _as_graph(graph)
    wh = h @ att_w
    pre = torch.cat([wh[g.att_src], wh[g.att_dst]], dim=1) @ att_p
    diagnostics.record_slack("attention_leaky_relu", pre)
    coeff = F.leaky_relu(pre, negative_slope)
    values = segment_softmax(coeff, g.att_src, g.n)
    return WeightedAdjacency(g.n, g.att_src, g.att_dst, values)


def cross_kg_adjacency(
    graph: GraphIndex | KnowledgeGraph,
    rel_embeds: torch.Tensor,
    other_rel_embeds: torch.Tensor,
) -> WeightedAdjacency:
    """Edge weights from the best relation match against the other KG.

    A connected pair (i, j) scores the maximum, over relations on that edge
    and over all counterpart relations, of the embedding inner product,
    clamped below at zero; the diagonal is pinned to one so an entity with no
    matched edge still propagates its own state.
    """
    g = _as_graph(graph)
    dtype = rel_embeds.dtype if rel_embeds.numel() else torch.get_default_dtype()
    n_pairs = g.cross_src.numel()

    if n_pairs and g.cross_entry_rel.numel() and other_rel_embeds.shape[0] > 0:
        sims = rel_embeds @ other_rel_embeds.T
        if sims.shape[1] > 1:
            top2 = sims.detach().topk(2, dim=1).values
            diagnostics.record_gap("cross_counterpart_max_gap", top2[:, 0] - top2[:, 1])
        best_per_relation = sims.max(dim=1).values
        entry_vals = best_per_relation[g.cross_entry_rel]

        maxima = torch.full((n_pairs,), float("-inf"), dtype=dtype)
        maxima = maxima.scatter_reduce(0, g.cross_entry_pair, entry_vals.detach(), reduce="amax", include_self=True)
        at_max = entry_vals.detach() == maxima[g.cross_entry_pair]
        entry_ids = torch.arange(entry_vals.numel())
        chosen = torch.full((n_pairs,), entry_vals.numel(), dtype=torch.long)
        chosen = chosen.scatter_reduce(0, g.cross_entry_pair[at_max], entry_ids[at_max], reduce="amin", include_self=True)
        runner_up = torch.full((n_pairs,), float("-inf"), dtype=dtype)
        others = torch.ones(entry_vals.numel(), dtype=torch.bool)
        others[chosen] = False
        if others.any():
            runner_up = runner_up.scatter_reduce(
                0, g.cross_entry_pair[others], entry_vals.detach()[others], reduce="amax", include_self=True
            )
            contested = runner_up > float("-inf")
            diagnostics.record_gap("cross_edge_max_gap", (maxima - runner_up)[contested])
        raw = entry_vals[chosen]
        diagnostics.record_slack("cross_clamp", raw)
        pair_vals = raw.clamp(min=0.0)
    else:
        pair_vals = torch.zeros(n_pairs, dtype=dtype)

    diag = torch.arange(g.n, dtype=torch.long)
    rows = torch.cat([g.cross_src, diag])
    cols = torch.cat([g.cross_dst, diag])
    values = torch.cat([pair_vals, torch.ones(g.n, dtype=dtype)])
    order = torch.argsort(rows * max(g.n, 1) + cols, stable=True)
    return WeightedAdjacency(g.n, rows[order], cols[order], values[order])
