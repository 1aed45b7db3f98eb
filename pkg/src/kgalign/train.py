"""End-to-end trainer: Adagrad over the align and rule losses, plus checks.

Training is full-batch and deterministic given the configured seed: all
randomness (initialization, dropout) flows from one generator, negative
caches refresh on a fixed epoch schedule, and corruption choices are a pure
function of item index and epoch. Math runs single-threaded in float64.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import IO, Callable, Sequence, Union

import torch
from torch import nn

from . import diagnostics
from .channels import GraphIndex
from .encoder import EncoderParams, multi_channel_forward, uniform_init
from .kg import KnowledgeGraph, ParseError, Triple, _iter_lines
from .losses import (
    GroundingBatch,
    TripleBatch,
    align_loss,
    batch_groundings,
    cosine_nearest_neighbors,
    rule_loss,
    total_loss,
)
from .rules import RuleGrounding


class ConfigError(ValueError):
    """Invalid training configuration file or field value."""


class TrainingDivergence(RuntimeError):
    """A loss term became non-finite; carries the offending term's name."""


_INT_FIELDS = {
    "embedding_dim",
    "layers",
    "negatives_k",
    "negative_refresh_epochs",
    "epochs",
    "updates_per_epoch",
    "rng_seed",
}
_FLOAT_FIELDS = {
    "learning_rate",
    "l2",
    "dropout",
    "margin_entity",
    "margin_relation",
    "margin_rule",
    "train_fraction",
}


@dataclass
class TrainConfig:
    """All training hyperparameters; defaults are the tuned configuration."""

    embedding_dim: int = 128
    layers: int = 2
    learning_rate: float = 0.001
    l2: float = 0.01
    dropout: float = 0.2
    margin_entity: float = 1.0
    margin_relation: float = 1.0
    margin_rule: float = 0.12
    negatives_k: int = 25
    negative_refresh_epochs: int = 5
    epochs: int = 500
    updates_per_epoch: int = 20
    train_fraction: float = 0.3
    rng_seed: int = 17
    pooling: str = "average"

    def validate(self) -> None:
        if self.embedding_dim < 1 or self.layers < 1:
            raise ConfigError("embedding_dim and layers must be positive")
        if self.learning_rate < 0 or self.l2 < 0:
            raise ConfigError("learning_rate and l2 must be nonnegative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if min(self.margin_entity, self.margin_relation, self.margin_rule) <= 0:
            raise ConfigError("margins must be positive")
        if self.negatives_k < 1 or self.negative_refresh_epochs < 1:
            raise ConfigError("negatives_k and negative_refresh_epochs must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.updates_per_epoch < 1:
            raise ConfigError("updates_per_epoch must be positive")
        if not 0.0 <= self.train_fraction <= 1.0:
            raise ConfigError("train_fraction must be in [0, 1]")
        if self.pooling != "average":
            raise ConfigError(f"unsupported pooling {self.pooling!r}; only 'average' is implemented")

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    @classmethod
    def from_text(cls, source) -> "TrainConfig":
        """Parse flat ``key = value`` lines; unknown keys are errors."""
        known = {f.name for f in fields(cls)}
        values: dict[str, object] = {}
        for number, line in _iter_lines(source):
            if "=" not in line:
                raise ConfigError(f"line {number}: expected 'key = value', got {line!r}")
            key, _, raw = line.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key not in known:
                raise ConfigError(f"line {number}: unknown config key {key!r}")
            try:
                if key in _INT_FIELDS:
                    values[key] = int(raw)
                elif key in _FLOAT_FIELDS:
                    values[key] = float(raw)
                else:
                    values[key] = raw
            except ValueError as exc:
                raise ConfigError(f"line {number}: bad value for {key}: {raw!r}") from exc
        config = cls(**values)
        config.validate()
        return config

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh)


class AlignmentModel(nn.Module):
    """Entity/relation embeddings of both KGs plus the shared encoder.

    Embedding tables start small (uniform with scale 1/(8 sqrt(dim))): Adagrad
    moves coordinates by roughly the learning rate per step, so the initial
    spread must be within reach of the configured step budget for alignment to
    converge.
    """

    def __init__(
        self,
        kg_left: KnowledgeGraph,
        kg_right: KnowledgeGraph,
        config: TrainConfig,
        generator: torch.Generator | None = None,
    ):
        super().__init__()
        dim = config.embedding_dim
        scale = 1.0 / (8.0 * dim**0.5)
        self.config = config
        self.graph_left = GraphIndex(kg_left)
        self.graph_right = GraphIndex(kg_right)
        self.ent_left = nn.Parameter(uniform_init((kg_left.num_entities, dim), scale, generator))
        self.ent_right = nn.Parameter(uniform_init((kg_right.num_entities, dim), scale, generator))
        self.rel_left = nn.Parameter(uniform_init((kg_left.num_relations, dim), scale, generator))
        self.rel_right = nn.Parameter(uniform_init((kg_right.num_relations, dim), scale, generator))
        self.encoder = EncoderParams(dim, config.layers, config.dropout, generator=generator)
        # both sides deliberately reference one parameter set
        self._channel_views = (self.encoder, self.encoder)

    def shares_channel_weights(self) -> bool:
        left, right = self._channel_views
        pairs = zip(left.parameters(), right.parameters())
        return all(a is b for a, b in pairs)

    def forward_all(
        self,
        training: bool = False,
        dropout_generator: torch.Generator | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        h_left = multi_channel_forward(
            self.graph_left, self.encoder, self.ent_left, self.rel_left, self.rel_right,
            training=training, dropout_generator=dropout_generator,
        )
        h_right = multi_channel_forward(
            self.graph_right, self.encoder, self.ent_right, self.rel_right, self.rel_left,
            training=training, dropout_generator=dropout_generator,
        )
        return h_left, h_right

    def parameter_groups(self) -> dict[str, nn.Parameter]:
        groups = {
            "entities_left": self.ent_left,
            "entities_right": self.ent_right,
            "relations_left": self.rel_left,
            "relations_right": self.rel_right,
            "attention_w": self.encoder.att_w,
            "attention_p": self.encoder.att_p,
        }
        for layer in range(self.encoder.layers):
            groups[f"channel_self_{layer}"] = self.encoder.w_self[layer]
            groups[f"channel_cross_{layer}"] = self.encoder.w_cross[layer]
        return groups


# ---------------------------------------------------------------------------
# per-epoch loss assembly
# ---------------------------------------------------------------------------


@dataclass
class NegativeCaches:
    """Nearest-neighbor index tables per KG, refreshed on a fixed schedule."""

    ent_left: torch.Tensor
    ent_right: torch.Tensor
    rel_left: torch.Tensor
    rel_right: torch.Tensor


@dataclass
class TrainingData:
    """Epoch-independent tensors derived from the aligned dataset."""

    entity_pairs: torch.Tensor
    relation_pairs: torch.Tensor
    groundings_left: list[GroundingBatch]
    groundings_right: list[GroundingBatch]
    triples_left: TripleBatch
    triples_right: TripleBatch

    @classmethod
    def build(
        cls,
        model: AlignmentModel,
        entity_pairs: Sequence[tuple[int, int]],
        relation_pairs: Sequence[tuple[int, int]],
        groundings_left: Sequence[RuleGrounding],
        groundings_right: Sequence[RuleGrounding],
    ) -> "TrainingData":
        return cls(
            entity_pairs=_pair_tensor(entity_pairs),
            relation_pairs=_pair_tensor(relation_pairs),
            groundings_left=batch_groundings(groundings_left),
            groundings_right=batch_groundings(groundings_right),
            triples_left=TripleBatch(
                model.graph_left.triple_heads, model.graph_left.triple_rels, model.graph_left.triple_tails
            ),
            triples_right=TripleBatch(
                model.graph_right.triple_heads, model.graph_right.triple_rels, model.graph_right.triple_tails
            ),
        )


def _pair_tensor(pairs: Sequence[tuple[int, int]]) -> torch.Tensor:
    if not len(pairs):
        return torch.empty(0, 2, dtype=torch.long)
    return torch.tensor(list(pairs), dtype=torch.long)


def build_negative_caches(model: AlignmentModel, k: int) -> NegativeCaches:
    """Cosine nearest-neighbor tables from a dropout-free forward pass."""
    with torch.no_grad():
        h_left, h_right = model.forward_all(training=False)
        return NegativeCaches(
            ent_left=cosine_nearest_neighbors(h_left, k),
            ent_right=cosine_nearest_neighbors(h_right, k),
            rel_left=cosine_nearest_neighbors(model.rel_left.detach(), k),
            rel_right=cosine_nearest_neighbors(model.rel_right.detach(), k),
        )


def corrupt_triples(batch: TripleBatch, cache: torch.Tensor, epoch: int) -> TripleBatch:
    """Replace one entity per triple: side and neighbor rank cycle with epoch."""
    m = len(batch)
    width = cache.shape[1]
    idx = torch.arange(m)
    use_tail = (idx + epoch) % 2 == 1
    victims = torch.where(use_tail, batch.tails, batch.heads)
    replacements = cache[victims, (idx + epoch) % width]
    heads = torch.where(use_tail, batch.heads, replacements)
    tails = torch.where(use_tail, replacements, batch.tails)
    return TripleBatch(heads, batch.rels, tails)


def corrupt_groundings(batch: GroundingBatch, cache: torch.Tensor, epoch: int) -> GroundingBatch:
    """Replace one entity in one involved triple, round-robin over slots/sides."""
    m = len(batch)
    width = cache.shape[1]
    slots = len(batch.premises) + 1
    idx = torch.arange(m)
    slot = (idx + epoch) % slots
    use_tail = ((idx + epoch) // slots) % 2 == 1
    ranks = (idx + epoch) % width

    def corrupted(tb: TripleBatch, this_slot: int) -> TripleBatch:
        hit = slot == this_slot
        victims = torch.where(use_tail, tb.tails, tb.heads)
        replacements = cache[victims, ranks]
        heads = torch.where(hit & ~use_tail, replacements, tb.heads)
        tails = torch.where(hit & use_tail, replacements, tb.tails)
        return TripleBatch(heads, tb.rels, tails)

    return GroundingBatch(
        premises=tuple(corrupted(p, s + 1) for s, p in enumerate(batch.premises)),
        conclusion=corrupted(batch.conclusion, 0),
    )


@dataclass
class EpochLosses:
    epoch: int
    align: float
    rule_left: float
    rule_right: float
    total: float


def compute_losses(
    model: AlignmentModel,
    data: TrainingData,
    caches: NegativeCaches,
    epoch: int,
    training: bool,
    dropout_generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(align, rule_left, rule_right) loss tensors for one epoch."""
    h_left, h_right = model.forward_all(training=training, dropout_generator=dropout_generator)

    ep = data.entity_pairs
    rp = data.relation_pairs
    la = align_loss(
        h_left, h_right, model.rel_left, model.rel_right,
        ep, rp,
        caches.ent_left[ep[:, 0]] if ep.numel() else torch.empty(0, 0, dtype=torch.long),
        caches.ent_right[ep[:, 1]] if ep.numel() else torch.empty(0, 0, dtype=torch.long),
        caches.rel_left[rp[:, 0]] if rp.numel() else torch.empty(0, 0, dtype=torch.long),
        caches.rel_right[rp[:, 1]] if rp.numel() else torch.empty(0, 0, dtype=torch.long),
        model.config.margin_entity,
        model.config.margin_relation,
    )

    def side_rule_loss(h, rel, grounding_batches, triples, cache) -> torch.Tensor:
        if cache.shape[1] == 0:
            return torch.zeros((), dtype=h.dtype)
        neg_groundings = [corrupt_groundings(b, cache, epoch) for b in grounding_batches]
        neg_triples = corrupt_triples(triples, cache, epoch) if len(triples) else triples
        return rule_loss(h, rel, grounding_batches, neg_groundings, triples, neg_triples, model.config.margin_rule)

    lr_left = side_rule_loss(h_left, model.rel_left, data.groundings_left, data.triples_left, caches.ent_left)
    lr_right = side_rule_loss(h_right, model.rel_right, data.groundings_right, data.triples_right, caches.ent_right)
    return la, lr_left, lr_right


def regularization(model: AlignmentModel, l2: float) -> torch.Tensor:
    reg = torch.zeros((), dtype=torch.float64)
    if l2 == 0.0:
        return reg
    for p in model.parameters():
        reg = reg + p.pow(2).sum()
    return l2 * reg


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: AlignmentModel
    history: list[EpochLosses]
    config: TrainConfig


def train(
    kg_left: KnowledgeGraph,
    kg_right: KnowledgeGraph,
    train_entity_pairs: Sequence[tuple[int, int]],
    relation_pairs: Sequence[tuple[int, int]],
    groundings_left: Sequence[RuleGrounding],
    groundings_right: Sequence[RuleGrounding],
    config: TrainConfig,
    epoch_callback: Callable[[EpochLosses, AlignmentModel, torch.optim.Optimizer], None] | None = None,
) -> TrainResult:
    """Full-batch training of the alignment model on completed KGs.

    Negative caches refresh every ``negative_refresh_epochs`` epochs; the
    optimizer is Adagrad with the L2 penalty added to the objective. Aborts
    with TrainingDivergence naming the offending term if any loss goes
    non-finite.
    """
    config.validate()
    if not len(train_entity_pairs):
        raise ValueError("training requires at least one entity seed pair")
    torch.set_num_threads(1)

    generator = torch.Generator().manual_seed(config.rng_seed)
    model = AlignmentModel(kg_left, kg_right, config, generator)
    data = TrainingData.build(model, train_entity_pairs, relation_pairs, groundings_left, groundings_right)
    optimizer = torch.optim.Adagrad(model.parameters(), lr=config.learning_rate, eps=1e-10)

    caches: NegativeCaches | None = None
    stamp = 0
    history: list[EpochLosses] = []
    for epoch in range(config.epochs):
        if caches is None or epoch - stamp >= config.negative_refresh_epochs:
            caches = build_negative_caches(model, config.negatives_k)
            stamp = epoch
        if not model.shares_channel_weights():
            raise AssertionError("channel weights are no longer shared between KGs")

        sums = [0.0, 0.0, 0.0]
        for _ in range(config.updates_per_epoch):
            la, lr_left, lr_right = compute_losses(
                model, data, caches, epoch, training=True, dropout_generator=generator
            )
            objective = total_loss(la, lr_left, lr_right) + regularization(model, config.l2) / config.updates_per_epoch
            for name, term in (("align", la), ("rule_left", lr_left), ("rule_right", lr_right), ("objective", objective)):
                if not torch.isfinite(term):
                    raise TrainingDivergence(f"non-finite {name} loss at epoch {epoch}")

            optimizer.zero_grad()
            objective.backward()
            optimizer.step()
            for i, term in enumerate((la, lr_left, lr_right)):
                sums[i] += float(term.detach())

        la_val, lr_left_val, lr_right_val = (s / config.updates_per_epoch for s in sums)
        row = EpochLosses(epoch, la_val, lr_left_val, lr_right_val, la_val + lr_left_val + lr_right_val)
        history.append(row)
        if epoch_callback is not None:
            epoch_callback(row, model, optimizer)

    return TrainResult(model, history, config)


def write_history_csv(history: Sequence[EpochLosses], destination: Union[str, Path, IO[str]]) -> None:
    if isinstance(destination, (str, Path)):
        with open(destination, "w", encoding="utf-8") as fh:
            write_history_csv(history, fh)
        return
    destination.write("epoch,L_a,L_r,L_r_prime,total\n")
    for row in history:
        destination.write(f"{row.epoch},{row.align:.17g},{row.rule_left:.17g},{row.rule_right:.17g},{row.total:.17g}\n")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path: Union[str, Path], model: AlignmentModel, epoch: int) -> None:
    """Persist all parameter tensors plus epoch and config hash; exact round-trip."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "epoch": epoch,
        "config": asdict(model.config),
        "config_hash": model.config.content_hash(),
        "params": {name: p.detach().clone() for name, p in model.parameter_groups().items()},
    }
    torch.save(payload, path)


def load_checkpoint(path: Union[str, Path]) -> dict:
    payload = torch.load(path, weights_only=False)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('format_version')!r}")
    return payload


def model_from_checkpoint(
    payload: dict,
    kg_left: KnowledgeGraph,
    kg_right: KnowledgeGraph,
) -> tuple[AlignmentModel, TrainConfig, int]:
    """Rebuild the model on the given KGs and restore all parameters."""
    config = TrainConfig(**payload["config"])
    config.validate()
    model = AlignmentModel(kg_left, kg_right, config)
    groups = model.parameter_groups()
    saved = payload["params"]
    if set(groups) != set(saved):
        raise ValueError("checkpoint parameter groups do not match the model")
    with torch.no_grad():
        for name, param in groups.items():
            if tuple(param.shape) != tuple(saved[name].shape):
                raise ValueError(
                    f"checkpoint shape mismatch for {name}: "
                    f"saved {tuple(saved[name].shape)}, KG implies {tuple(param.shape)}"
                )
            param.copy_(saved[name])
    return model, config, int(payload["epoch"])


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


@dataclass
class GradientReport:
    """Finite-difference comparison per parameter group."""

    per_group: dict[str, float]
    max_relative_error: float
    min_kink_slack: float
    slack_sites: dict[str, float]
    seed_used: int


def _random_instance(
    n_entities: int,
    n_relations: int,
    n_triples: int,
    seed: int,
) -> tuple[KnowledgeGraph, list[Triple]]:
    import random as _random

    rng = _random.Random(seed)
    triples = set()
    while len(triples) < n_triples:
        h = rng.randrange(n_entities)
        t = rng.randrange(n_entities)
        if h == t:
            continue
        triples.add(Triple(h, rng.randrange(n_relations), t))
    kg = KnowledgeGraph(n_entities, n_relations, triples)
    return kg, sorted(triples)


def _chain_groundings(kg: KnowledgeGraph, limit: int, rng_seed: int) -> list[RuleGrounding]:
    """Groundings harvested from the KG with low mining thresholds."""
    from .rules import complete_kg, mine_rules

    mined = mine_rules(kg, max_premises=2, min_pca_conf=0.05, min_support=1)
    _, groundings = complete_kg(kg, [m.rule for m in mined[: max(4, limit // 8)]])
    return groundings[:limit]


def gradient_check(
    n_entities: int = 30,
    n_relations: int = 5,
    n_triples: int = 60,
    dim: int = 8,
    layers: int = 2,
    negatives_k: int = 5,
    n_seed_pairs: int = 10,
    step: float = 1e-5,
    min_kink_slack: float = 1e-3,
    seed: int = 0,
    max_attempts: int = 400,
    init_scale: float = 1.0,
) -> GradientReport:
    """Compare autograd against central finite differences on a small instance.

    Builds random twin KGs with seeds and groundings, requires every kink
    argument (hinges, ReLU/LeakyReLU inputs, clamps, max gaps, norms) to have
    slack above ``min_kink_slack`` so both sides are differentiable, then
    reports the max relative error per parameter group, normalized by the
    group's gradient magnitude.

    Parameters are redrawn uniform on [-init_scale, init_scale]: order-one
    activations keep kink arguments far from zero relative to the step, which
    is what makes the slack filter satisfiable.
    """
    import random as _random

    torch.set_num_threads(1)
    last_slack = 0.0
    structure = None
    for attempt in range(max_attempts):
        instance_seed = seed + attempt
        if structure is None or attempt % 20 == 0:
            rng = _random.Random(instance_seed)
            kg_left, _ = _random_instance(n_entities, n_relations, n_triples, instance_seed)
            kg_right, _ = _random_instance(n_entities, n_relations, n_triples, instance_seed + 1000)
            entity_pairs = [(i, i) for i in rng.sample(range(n_entities), n_seed_pairs)]
            relation_pairs = [(r, r) for r in range(min(3, n_relations))]
            groundings_left = _chain_groundings(kg_left, 12, instance_seed)
            groundings_right = _chain_groundings(kg_right, 12, instance_seed + 1)
            structure = (kg_left, kg_right, entity_pairs, relation_pairs, groundings_left, groundings_right)
        kg_left, kg_right, entity_pairs, relation_pairs, groundings_left, groundings_right = structure

        config = TrainConfig(
            embedding_dim=dim,
            layers=layers,
            dropout=0.0,
            negatives_k=negatives_k,
            rng_seed=instance_seed,
        )
        generator = torch.Generator().manual_seed(instance_seed)
        model = AlignmentModel(kg_left, kg_right, config, generator)
        with torch.no_grad():
            for param in model.parameters():
                param.copy_(uniform_init(param.shape, init_scale, generator))

        data = TrainingData.build(model, entity_pairs, relation_pairs, groundings_left, groundings_right)
        caches = build_negative_caches(model, negatives_k)

        def objective() -> torch.Tensor:
            la, lr_left, lr_right = compute_losses(model, data, caches, epoch=0, training=False)
            return total_loss(la, lr_left, lr_right) + regularization(model, config.l2)

        with diagnostics.collect_kink_slacks() as slacks:
            loss = objective()
        slack_sites: dict[str, float] = {}
        for site, value in slacks:
            slack_sites[site] = min(value, slack_sites.get(site, float("inf")))
        min_slack = min(slack_sites.values()) if slack_sites else float("inf")
        last_slack = min_slack
        if min_slack <= min_kink_slack or not torch.isfinite(loss):
            continue

        groups = model.parameter_groups()
        analytic = torch.autograd.grad(loss, list(groups.values()))
        per_group: dict[str, float] = {}
        with torch.no_grad():
            for (name, param), grad in zip(groups.items(), analytic):
                flat = param.data.view(-1)
                fd = torch.zeros_like(flat)
                for i in range(flat.numel()):
                    original = flat[i].item()
                    flat[i] = original + step
                    upper = objective().item()
                    flat[i] = original - step
                    lower = objective().item()
                    flat[i] = original
                    fd[i] = (upper - lower) / (2.0 * step)
                fd = fd.view_as(param)
                scale = torch.maximum(fd.abs(), grad.abs()).max().clamp_min(1e-12)
                per_group[name] = float(((fd - grad).abs().max() / scale))
        return GradientReport(
            per_group=per_group,
            max_relative_error=max(per_group.values()),
            min_kink_slack=min_slack,
            slack_sites=slack_sites,
            seed_used=instance_seed,
        )
    raise RuntimeError(
        f"no instance with kink slack > {min_kink_slack} found in {max_attempts} attempts "
        f"(last min slack {last_slack:.3g})"
    )
