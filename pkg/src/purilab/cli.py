"""
purilab command line.

Every subcommand reads the experiment YAML given by ``--config``; ``--seed`` and ``--out`` override
its seeds and output directory.
"""

from __future__ import annotations

__all__ = ["build_parser", "main"]

import argparse
import logging
import sys
from collections.abc import Sequence
from dataclasses import replace
from pathlib import Path

from .backend.error_handling import ConfigurationError, PipelineError, PurilabError
from .backend.utilities import DefenseSpec, ExperimentConfig, PurifierHyper, configure_logging, infer_mode
from .baselines import build_defense
from .data import Splits, load_csv, read_manifest, save_csv, write_manifest
from .evaluation import (
    AttackResult,
    compare_reports,
    load_report,
    save_attack_result,
    save_report,
    write_comparison_csv,
)
from .nn_core import Network, load_network, save_network
from .pipeline import (
    SeedContext,
    evaluate_defense,
    make_context,
    manifest_digest,
    prepare_splits,
    run_attacks,
    run_pipeline,
    run_tradeoff_sweep,
    stage,
    validate_config,
)
from .purifier import PurifierBundle, load_bundle, reference_features, save_bundle, train_purifier
from .target import Oracle, accuracy, train_target
from .version import __version__

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2


# =============================================================================
# Helpers
# =============================================================================


def _config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is None:
        raise ConfigurationError("this command needs --config <file>", "config")
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if args.out is not None and args.command in ("run", "sweep"):
        overrides["output_dir"] = args.out
    return validate_config(args.config, overrides, write_echo=args.command in ("run", "sweep"))


def _out(args: argparse.Namespace, default: str = ".") -> Path:
    path = Path(args.out or default)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _splits(args: argparse.Namespace) -> Splits:
    return read_manifest(args.data)


def _target(path: str) -> Network:
    net = load_network(path)
    if not isinstance(net, Network):
        raise ConfigurationError(f"{path} is not a target classifier", "target")
    return net


def parse_defense(text: str) -> tuple[DefenseSpec, PurifierBundle | None]:
    """
    Read a ``--defense`` value.

    ``none``, ``one_hot``, ``random_noise:<magnitude>`` or the directory of a saved purifier bundle.
    """
    if text in ("none", "one_hot"):
        return DefenseSpec(text), None
    if text.startswith("random_noise"):
        _, _, magnitude = text.partition(":")
        try:
            return DefenseSpec("random_noise", magnitude=float(magnitude or 0.3)).validate("defense"), None
        except ValueError as err:
            raise ConfigurationError(f"bad noise magnitude {magnitude!r}", "defense") from err
    if Path(text).is_dir():
        bundle = load_bundle(text)
        return DefenseSpec("purifier", purifier=bundle.hyper), bundle
    raise ConfigurationError(f"unknown defense {text!r}", "defense")


def _context(args: argparse.Namespace, out: Path) -> SeedContext:
    return make_context(_splits(args), _target(args.target), manifest_digest(args.data), out)


# =============================================================================
# Subcommands
# =============================================================================


def cmd_gen_data(args: argparse.Namespace) -> int:
    config = _config(args)
    seed = config.seeds[0]
    out = _out(args)
    splits = prepare_splits(config, seed)
    csv_path = save_csv(splits.dataset, out / "dataset.csv")
    manifest = write_manifest(out / "manifest.yaml", splits, config.dataset_path or config.dataset)
    print(f"wrote {len(splits.dataset)} samples to {csv_path} and splits to {manifest}")
    return EXIT_OK


def cmd_train_target(args: argparse.Namespace) -> int:
    config = _config(args)
    splits = _splits(args)
    target = train_target(splits.train, replace(config.target, seed=splits.seed), eval_set=splits.test)
    path = save_network(target, _out(args) / "F.json")
    oracle = Oracle(target)
    print(f"train acc {accuracy(oracle, splits.train):.4f}  test acc {accuracy(oracle, splits.test):.4f}  -> {path}")
    return EXIT_OK


def cmd_train_purifier(args: argparse.Namespace) -> int:
    config = _config(args)
    splits = _splits(args)
    template = next((d.purifier for d in config.defenses if d.purifier is not None), None) or PurifierHyper()
    values = {"lam": args.lam, "alpha": args.alpha, "beta": args.beta, "epochs": args.epochs}
    hyper = replace(template, **{k: v for k, v in values.items() if v is not None})
    hyper.mode = args.mode or infer_mode(hyper.alpha, hyper.beta)
    if args.refset in (None, "d1", "d2", "random"):
        hyper.reference = args.refset or hyper.reference
        reference = reference_features(splits, hyper.reference, splits.seed)
    else:
        reference = load_csv(args.refset, splits.dataset.num_classes)
    hyper.validate()
    bundle = train_purifier(_target(args.target), reference, hyper, splits.seed)
    directory = save_bundle(bundle, _out(args, "purifier"))
    print(f"trained {hyper.label} in {bundle.train_seconds:.1f}s -> {directory}")
    return EXIT_OK


def cmd_attack(args: argparse.Namespace) -> int:
    config = _config(args)
    out = _out(args)
    context = _context(args, out)
    spec, bundle = parse_defense(args.defense)
    oracle = Oracle(context.target, build_defense(replace(spec, seed=context.seed), bundle))
    inference, inversion, _ = run_attacks(oracle, spec, context, replace(config, attacks=(args.kind,)))
    if inversion is not None:
        result = AttackResult.from_inversion(inversion, oracle.label, context.seed, context.split_digest)
        print(f"inversion error against {oracle.label}: {inversion.overall:.6f}")
    else:
        result = AttackResult(
            args.kind, oracle.label, context.seed, inference[args.kind], split_digest=context.split_digest
        )
        print(f"{args.kind} accuracy against {oracle.label}: {inference[args.kind]:.4f}")
    print(f"-> {save_attack_result(result, out / f'attack-{args.kind}.json')}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _config(args)
    out = _out(args)
    context = _context(args, out)
    spec, bundle = parse_defense(args.defense)
    report, timing = evaluate_defense(spec, context, config, bundle=bundle)
    path = save_report(report, out / "report.json", timing)
    print(compare_reports([report]))
    print(f"-> {path}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    reports = [load_report(path) for path in args.compare]
    print(compare_reports(reports))
    if args.csv:
        print(f"-> {write_comparison_csv(reports, args.csv)}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    result = run_pipeline(_config(args), overwrite=args.force)
    print(compare_reports(result.reports))
    print(f"-> {result.directory}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    path, rows = run_tradeoff_sweep(_config(args))
    for row in rows:
        print(
            f"{row['defense']:<32} acc {row['test_accuracy']:.4f}  dist {row['confidence_distortion']:.4f}  "
            f"inv {row['inversion_error']:.4f}  nsh {row['nsh_accuracy']:.4f}"
        )
    print(f"-> {path}")
    return EXIT_OK


# =============================================================================
# Parser
# =============================================================================


def build_parser() -> argparse.ArgumentParser:
    """The ``purilab`` argument parser with one subparser per pipeline stage."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment YAML file")
    common.add_argument("--seed", type=int, help="run only this seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("-v", "--verbose", action="store_true", help="shorthand for --log-level DEBUG")

    parser = argparse.ArgumentParser(
        prog="purilab", description="Confidence-score purification against membership and inversion attacks."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", parents=[common], help="generate or ingest data and allocate the splits")
    gen.set_defaults(func=cmd_gen_data)

    target = sub.add_parser("train-target", parents=[common], help="train the target classifier on D1")
    target.add_argument("--data", required=True, help="split manifest written by gen-data")
    target.set_defaults(func=cmd_train_target)

    purifier = sub.add_parser("train-purifier", parents=[common], help="train a purifier on the reference set")
    purifier.add_argument("--data", required=True, help="split manifest")
    purifier.add_argument("--target", required=True, help="target network JSON")
    purifier.add_argument("--refset", help="d2 (default), d1, random, or a CSV file")
    purifier.add_argument("--mode", choices=["base", "inv", "mem", "both"])
    purifier.add_argument("--lambda", dest="lam", type=float)
    purifier.add_argument("--alpha", type=float)
    purifier.add_argument("--beta", type=float)
    purifier.add_argument("--epochs", type=int)
    purifier.set_defaults(func=cmd_train_purifier)

    attack = sub.add_parser("attack", parents=[common], help="train one attack against a (defended) target")
    attack.add_argument("--data", required=True, help="split manifest")
    attack.add_argument("--target", required=True, help="target network JSON")
    attack.add_argument("--kind", required=True, choices=["mlleaks", "mlleaks-a", "nsh", "label", "inversion"])
    attack.add_argument("--defense", default="none", help="none, one_hot, random_noise:<m> or a purifier directory")
    attack.set_defaults(func=cmd_attack)

    evaluate = sub.add_parser("evaluate", parents=[common], help="run every configured attack and write a report")
    evaluate.add_argument("--data", required=True, help="split manifest")
    evaluate.add_argument("--target", required=True, help="target network JSON")
    evaluate.add_argument("--defense", default="none", help="none, one_hot, random_noise:<m> or a purifier directory")
    evaluate.set_defaults(func=cmd_evaluate)

    report = sub.add_parser("report", parents=[common], help="compare saved reports")
    report.add_argument("--compare", nargs="+", required=True, metavar="REPORT")
    report.add_argument("--csv", help="also write the comparison as CSV")
    report.set_defaults(func=cmd_report)

    run = sub.add_parser("run", parents=[common], help="run the full pipeline")
    run.add_argument("--force", action="store_true", help="overwrite a finished experiment directory")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", parents=[common], help="security-utility trade-off sweep")
    sweep.set_defaults(func=cmd_sweep)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """
    Entry point of the ``purilab`` console script.

    Returns
    -------
    int
        0 on success, 2 for configuration errors and 1 for any other failure.
    """
    args = build_parser().parse_args(argv)
    configure_logging("DEBUG" if args.verbose else args.log_level)
    logger.debug("purilab %s: %s", __version__, args.command)
    try:
        with stage(args.command):
            return args.func(args)
    except PurilabError as err:
        failed = err.stage if isinstance(err, PipelineError) else args.command
        cause = err.cause if isinstance(err, PipelineError) else err
        print(f"purilab: error: [{failed}] {cause}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(cause, ConfigurationError) else EXIT_FAILURE
