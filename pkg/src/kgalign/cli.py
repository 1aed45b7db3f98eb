"""Subcommand front-end chaining the pipeline through files on disk.

``mine -> transfer -> ground -> train -> eval`` compose via TSV/CSV/JSON
artifacts only; every run is reproducible from its inputs and the ``--seed``
flag. Report-producing commands additionally render a figure next to the
delimited output. Outputs are never overwritten without ``--force``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .evaluate import AlignmentTask, evaluate_alignment, seed_sweep, write_sweep_csv
from .kg import ParseError, load_kg, load_relation_pairs, load_seed_alignments, split_entity_seeds
from .rules import (
    complete_kg,
    mine_rules,
    read_groundings,
    read_rules,
    transfer_rules,
    write_groundings,
    write_rule_stats,
    write_rules,
)
from .train import (
    ConfigError,
    TrainConfig,
    TrainingDivergence,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    train,
    write_history_csv,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_BAD_INPUT = 4
EXIT_OUTPUT_EXISTS = 5


class OutputExists(RuntimeError):
    pass


def _require_inputs(*paths: str | None) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise FileNotFoundError(f"input file not found: {p}")


def _check_outputs(force: bool, *paths: str | Path | None) -> None:
    for p in paths:
        if p is not None and Path(p).exists() and not force:
            raise OutputExists(f"output exists (use --force to overwrite): {p}")


def _figure_path(report_path: str | Path) -> Path:
    return Path(report_path).with_suffix(".png")


def _load_config(args: argparse.Namespace) -> TrainConfig:
    if getattr(args, "config", None):
        _require_inputs(args.config)
        config = TrainConfig.from_file(args.config)
    else:
        config = TrainConfig()
    if getattr(args, "seed", None) is not None:
        config.rng_seed = args.seed
    if getattr(args, "epochs", None) is not None:
        config.epochs = args.epochs
    config.validate()
    return config


def _parse_fractions(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad fraction list {text!r}") from exc


def _parse_hits(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad hits list {text!r}") from exc


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_mine(args: argparse.Namespace) -> int:
    _require_inputs(args.kg)
    _check_outputs(args.force, args.out, args.stats)
    kg = load_kg(args.kg)
    mined = mine_rules(kg, args.max_premises, args.min_pca_conf, args.min_support)
    write_rules(mined, kg, args.out)
    if args.stats:
        write_rule_stats(args.stats, Path(args.kg).name, len(mined), 0, 0, 0)
    print(f"mined {len(mined)} rules from {args.kg} -> {args.out}")
    return EXIT_OK


def _cmd_transfer(args: argparse.Namespace) -> int:
    _require_inputs(args.rules, args.kg_left, args.kg_right, args.relation_seeds, args.existing)
    _check_outputs(args.force, args.out, args.stats)
    kg_left = load_kg(args.kg_left)
    kg_right = load_kg(args.kg_right)
    pairs = load_relation_pairs(args.relation_seeds, kg_left, kg_right)
    direction = args.direction.replace("-", "_")
    source_kg, target_kg = (kg_left, kg_right) if direction == "left_to_right" else (kg_right, kg_left)
    rules = read_rules(args.rules, source_kg)
    existing = read_rules(args.existing, target_kg) if args.existing else ()
    transferred = transfer_rules(rules, pairs, direction, existing)
    write_rules(transferred, target_kg, args.out)
    if args.stats:
        write_rule_stats(args.stats, Path(args.out).name, len(rules), len(transferred), 0, 0)
    print(f"transferred {len(transferred)} of {len(rules)} rules -> {args.out}")
    return EXIT_OK


def _cmd_ground(args: argparse.Namespace) -> int:
    _require_inputs(args.kg, args.rules, args.transferred)
    _check_outputs(args.force, args.out_kg, args.out_groundings, args.stats)
    kg = load_kg(args.kg)
    native = read_rules(args.rules, kg)
    transferred = read_rules(args.transferred, kg) if args.transferred else []
    completed, groundings = complete_kg(kg, [*native, *transferred])
    native_canonical = {r.canonical() for r in native}
    n_native = sum(1 for g in groundings if g.source_rule in native_canonical)
    completed.to_tsv(args.out_kg)
    write_groundings(groundings, kg, args.out_groundings)
    if args.stats:
        write_rule_stats(
            args.stats, Path(args.kg).name,
            len(native), len(transferred), n_native, len(groundings) - n_native,
        )
    print(
        f"grounded {len(groundings)} rule instances "
        f"({len(groundings) - n_native} from transferred rules); "
        f"KG grew {len(kg)} -> {len(completed)} triples"
    )
    return EXIT_OK


def _load_task(args: argparse.Namespace) -> tuple[AlignmentTask, TrainConfig]:
    _require_inputs(
        args.kg_left, args.kg_right, args.entity_seeds,
        args.relation_seeds, args.groundings_left, args.groundings_right,
    )
    config = _load_config(args)
    kg_left = load_kg(args.kg_left)
    kg_right = load_kg(args.kg_right)
    seeds = load_seed_alignments(args.entity_seeds, args.relation_seeds, kg_left, kg_right)
    groundings_left = read_groundings(args.groundings_left, kg_left) if args.groundings_left else ()
    groundings_right = read_groundings(args.groundings_right, kg_right) if args.groundings_right else ()
    return AlignmentTask(kg_left, kg_right, seeds, groundings_left, groundings_right), config


def _cmd_train(args: argparse.Namespace) -> int:
    task, config = _load_task(args)
    history_figure = _figure_path(args.out_history)
    _check_outputs(args.force, args.out_checkpoint, args.out_history, history_figure)

    train_pairs, test_pairs = split_entity_seeds(task.seeds, config.train_fraction, config.rng_seed)
    print(
        f"training on {len(train_pairs)} seed pairs "
        f"({len(test_pairs)} held out) for {config.epochs} epochs"
    )
    result = train(
        task.kg_left, task.kg_right, train_pairs, task.seeds.relation_pairs,
        task.groundings_left, task.groundings_right, config,
    )
    save_checkpoint(args.out_checkpoint, result.model, config.epochs)
    write_history_csv(result.history, args.out_history)
    from .figures import save_loss_figure

    if result.history:
        save_loss_figure(result.history, history_figure)
    if result.history:
        last = result.history[-1]
        print(f"final losses: align={last.align:.4f} rules={last.rule_left:.4f}/{last.rule_right:.4f}")
    print(f"checkpoint -> {args.out_checkpoint}; history -> {args.out_history}; figure -> {history_figure}")
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    _require_inputs(args.checkpoint, args.kg_left, args.kg_right, args.entity_seeds)
    _check_outputs(args.force, args.out)
    kg_left = load_kg(args.kg_left)
    kg_right = load_kg(args.kg_right)
    payload = load_checkpoint(args.checkpoint)
    model, config, _ = model_from_checkpoint(payload, kg_left, kg_right)
    seeds = load_seed_alignments(args.entity_seeds, None, kg_left, kg_right)
    _, test_pairs = split_entity_seeds(seeds, config.train_fraction, config.rng_seed)
    import torch

    with torch.no_grad():
        h_left, h_right = model.forward_all(training=False)
    direction = args.direction.replace("-", "_")
    report = evaluate_alignment(test_pairs, h_left, h_right, _parse_hits(args.hits), direction)
    report.write_json(args.out)
    hits_text = " ".join(f"hits@{n}={v:.4f}" for n, v in sorted(report.hits_at.items()))
    print(f"{report.n_test} test pairs: {hits_text} mrr={report.mrr:.4f} -> {args.out}")
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    task, config = _load_task(args)
    sweep_figure = _figure_path(args.out)
    _check_outputs(args.force, args.out, sweep_figure)
    fractions = _parse_fractions(args.fractions)
    hits_levels = _parse_hits(args.hits)
    rows, skipped = seed_sweep(task, config, fractions, hits_levels, progress=True)
    for message in skipped:
        print(f"skipped: {message}", file=sys.stderr)
    write_sweep_csv(rows, args.out, hits_levels)
    from .figures import save_sweep_figure

    if rows:
        save_sweep_figure(rows, sweep_figure, hits_levels)
    print(f"{len(rows)} sweep rows -> {args.out}; figure -> {sweep_figure}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgalign",
        description="Entity alignment pipeline: rule completion, two-channel GNN training, ranking evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    mine = sub.add_parser("mine", help="mine closed Horn rules from a KG")
    mine.add_argument("--kg", required=True, help="triple TSV file")
    mine.add_argument("--out", required=True, help="rule file to write")
    mine.add_argument("--stats", help="stats TSV to write")
    mine.add_argument("--min-pca-conf", type=float, default=0.8)
    mine.add_argument("--max-premises", type=int, default=2, choices=(1, 2))
    mine.add_argument("--min-support", type=int, default=2)
    mine.add_argument("--force", action="store_true", help="overwrite existing outputs")
    mine.set_defaults(handler=_cmd_mine)

    transfer = sub.add_parser("transfer", help="transfer rules through aligned relations")
    transfer.add_argument("--rules", required=True, help="rule file mined on the source KG")
    transfer.add_argument("--kg-left", required=True)
    transfer.add_argument("--kg-right", required=True)
    transfer.add_argument("--relation-seeds", required=True, help="TSV: left relation, right relation")
    transfer.add_argument("--direction", choices=("left-to-right", "right-to-left"), default="left-to-right")
    transfer.add_argument("--existing", help="target-side rule file; already-known rules are skipped")
    transfer.add_argument("--out", required=True)
    transfer.add_argument("--stats")
    transfer.add_argument("--force", action="store_true")
    transfer.set_defaults(handler=_cmd_transfer)

    ground = sub.add_parser("ground", help="ground rules and write the completed KG")
    ground.add_argument("--kg", required=True)
    ground.add_argument("--rules", required=True, help="rules mined on this KG")
    ground.add_argument("--transferred", help="rules transferred into this KG")
    ground.add_argument("--out-kg", required=True, help="completed KG TSV")
    ground.add_argument("--out-groundings", required=True, help="grounding records TSV")
    ground.add_argument("--stats")
    ground.add_argument("--force", action="store_true")
    ground.set_defaults(handler=_cmd_ground)

    def add_task_arguments(p: argparse.ArgumentParser) -> None:
        p.add_argument("--kg-left", required=True, help="completed KG TSV (left)")
        p.add_argument("--kg-right", required=True, help="completed KG TSV (right)")
        p.add_argument("--entity-seeds", required=True, help="TSV: left entity, right entity")
        p.add_argument("--relation-seeds", help="TSV: left relation, right relation")
        p.add_argument("--groundings-left", help="grounding records for the left KG")
        p.add_argument("--groundings-right", help="grounding records for the right KG")
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="overrides rng_seed from the config")
        p.add_argument("--epochs", type=int, help="overrides epochs from the config")
        p.add_argument("--force", action="store_true")

    train_cmd = sub.add_parser("train", help="train the alignment model")
    add_task_arguments(train_cmd)
    train_cmd.add_argument("--out-checkpoint", default="checkpoint.pt")
    train_cmd.add_argument("--out-history", default="loss_history.csv")
    train_cmd.set_defaults(handler=_cmd_train)

    eval_cmd = sub.add_parser("eval", help="evaluate a checkpoint on the held-out seed pairs")
    eval_cmd.add_argument("--checkpoint", required=True)
    eval_cmd.add_argument("--kg-left", required=True)
    eval_cmd.add_argument("--kg-right", required=True)
    eval_cmd.add_argument("--entity-seeds", required=True)
    eval_cmd.add_argument("--direction", choices=("source-to-target", "target-to-source", "both"),
                          default="source-to-target")
    eval_cmd.add_argument("--hits", default="1,10", help="comma-separated Hits@N levels")
    eval_cmd.add_argument("--out", default="metrics.json")
    eval_cmd.add_argument("--force", action="store_true")
    eval_cmd.set_defaults(handler=_cmd_eval)

    sweep_cmd = sub.add_parser("sweep", help="train at several seed fractions and tabulate metrics")
    add_task_arguments(sweep_cmd)
    sweep_cmd.add_argument("--fractions", default="0.1,0.2,0.3,0.4,0.5")
    sweep_cmd.add_argument("--hits", default="1,10")
    sweep_cmd.add_argument("--out", default="seed_sweep.csv")
    sweep_cmd.set_defaults(handler=_cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.handler(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (ParseError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except OutputExists as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OUTPUT_EXISTS
    except (TrainingDivergence, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
