"""Two-channel GNN encoder with per-layer channel pooling.

Each layer propagates the current entity states through both weighted
adjacencies (self-attention and cross-KG attention channels), applies a
per-channel linear map and ReLU, and averages the channel outputs. The same
parameter instances encode both KGs, which is what transfers structural
knowledge between them.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from . import diagnostics
from .channels import (
    GraphIndex,
    WeightedAdjacency,
    cross_kg_adjacency,
    self_attention_adjacency,
)
from .kg import KnowledgeGraph


def uniform_init(
    shape,
    scale: float,
    generator: torch.Generator | None = None,
    dtype: torch.dtype = torch.float64,
) -> torch.Tensor:
    """Zero-mean uniform tensor on [-scale, scale]."""
    return (torch.rand(shape, generator=generator, dtype=dtype) * 2.0 - 1.0) * scale


class EncoderParams(nn.Module):
    """Trainable encoder parameters: attention (W, p) and per-layer channel maps.

    One instance serves both KGs; the attention parameters are additionally
    shared across layers. Initialization is zero-mean uniform at the
    variance-preserving scale sqrt(3/dim), so stacked layers neither shrink
    nor blow up the state magnitude.
    """

    def __init__(
        self,
        dim: int,
        layers: int = 2,
        dropout: float = 0.2,
        negative_slope: float = 0.2,
        generator: torch.Generator | None = None,
        dtype: torch.dtype = torch.float64,
        init_scale: float | None = None,
    ):
        super().__init__()
        self.dim = dim
        self.layers = layers
        self.dropout = dropout
        self.negative_slope = negative_slope
        scale = math.sqrt(3.0 / dim) if init_scale is None else init_scale
        self.att_w = nn.Parameter(uniform_init((dim, dim), scale, generator, dtype))
        self.att_p = nn.Parameter(uniform_init((2 * dim,), scale, generator, dtype))
        self.w_self = nn.ParameterList(
            nn.Parameter(uniform_init((dim, dim), scale, generator, dtype)) for _ in range(layers)
        )
        self.w_cross = nn.ParameterList(
            nn.Parameter(uniform_init((dim, dim), scale, generator, dtype)) for _ in range(layers)
        )


def gnn_layer(adj: WeightedAdjacency, h: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    """One propagation step: ReLU(A @ H @ W)."""
    pre = adj.propagate(h) @ w
    diagnostics.record_slack("relu_preactivation", pre)
    return torch.relu(pre)


def apply_dropout(h: torch.Tensor, rate: float, generator: torch.Generator | None) -> torch.Tensor:
    """Inverted dropout with an explicit generator for reproducibility."""
    if rate <= 0.0:
        return h
    keep = (torch.rand(h.shape, generator=generator, dtype=h.dtype) >= rate).to(h.dtype)
    return h * keep / (1.0 - rate)


def multi_channel_forward(
    graph: GraphIndex | KnowledgeGraph,
    params: EncoderParams,
    h0: torch.Tensor,
    rel_embeds: torch.Tensor,
    other_rel_embeds: torch.Tensor,
    *,
    training: bool = False,
    dropout_generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Stacked two-channel propagation from initial entity states to H^L.

    The self-attention adjacency is recomputed from the current layer's hidden
    states; the cross-KG adjacency depends only on relation embeddings and is
    built once per forward pass. Channel outputs are combined by average
    pooling, and dropout acts on the pooled states between layers in training
    mode only.
    """
    g = graph if isinstance(graph, GraphIndex) else GraphIndex(graph)
    a_cross = cross_kg_adjacency(g, rel_embeds, other_rel_embeds)
    h = h0
    for layer in range(params.layers):
        a_self = self_attention_adjacency(g, h, params.att_w, params.att_p, params.negative_slope)
        h_self = gnn_layer(a_self, h, params.w_self[layer])
        h_cross = gnn_layer(a_cross, h, params.w_cross[layer])
        h = (h_self + h_cross) / 2.0
        if training and layer < params.layers - 1:
            h = apply_dropout(h, params.dropout, dropout_generator)
    return h
