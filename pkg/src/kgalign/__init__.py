"""Entity alignment between knowledge graphs.

Pipeline: mine closed Horn rules on each KG, transfer them through aligned
relations, ground them to complete both KGs, then train a two-channel graph
attention encoder with margin-based alignment and fuzzy rule-constraint
losses, and score counterpart retrieval by Hits@N / MRR.
"""

from .kg import (
    KnowledgeGraph,
    ParseError,
    SeedAlignments,
    Triple,
    load_kg,
    load_seed_alignments,
    split_entity_seeds,
)
from .rules import (
    HornRule,
    MinedRule,
    RuleAtom,
    RuleGrounding,
    complete_kg,
    ground_rule,
    mine_rules,
    transfer_rules,
)
from .channels import (
    GraphIndex,
    WeightedAdjacency,
    cross_kg_adjacency,
    self_attention_adjacency,
)
from .encoder import EncoderParams, gnn_layer, multi_channel_forward
from .losses import (
    align_loss,
    grounding_truth_value,
    rule_loss,
    sample_entity_negatives,
    total_loss,
    triple_truth_value,
)
from .train import (
    AlignmentModel,
    ConfigError,
    TrainConfig,
    TrainingDivergence,
    gradient_check,
    train,
)
from .evaluate import AlignmentTask, MetricsReport, evaluate_alignment, seed_sweep

__all__ = [
    "AlignmentModel",
    "AlignmentTask",
    "ConfigError",
    "EncoderParams",
    "GraphIndex",
    "HornRule",
    "KnowledgeGraph",
    "MetricsReport",
    "MinedRule",
    "ParseError",
    "RuleAtom",
    "RuleGrounding",
    "SeedAlignments",
    "TrainConfig",
    "TrainingDivergence",
    "Triple",
    "WeightedAdjacency",
    "align_loss",
    "complete_kg",
    "cross_kg_adjacency",
    "evaluate_alignment",
    "gnn_layer",
    "gradient_check",
    "ground_rule",
    "grounding_truth_value",
    "load_kg",
    "load_seed_alignments",
    "mine_rules",
    "multi_channel_forward",
    "rule_loss",
    "sample_entity_negatives",
    "seed_sweep",
    "self_attention_adjacency",
    "split_entity_seeds",
    "total_loss",
    "train",
    "transfer_rules",
    "triple_truth_value",
]
