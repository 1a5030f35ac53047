"""
Command-line entry point.

    qaug train-hqcnn | train-qgan | train-cgan | augment | compare | evaluate

Exit codes: 0 success, 2 config error, 3 data error, 4 runtime/numeric error.
"""

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence

from .config import COMPARE_STRATEGIES, ExperimentConfig, load_experiment_config
from .errors import DataError, QaugError
from .experiments import run_augment, run_compare, run_evaluate, run_train_gan, run_train_hqcnn

logger = logging.getLogger(__name__)

GAN_COMMANDS = ("train-qgan", "train-cgan")


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", action="append", metavar="PATH",
                        help="YAML experiment config (compare accepts several)")
    common.add_argument("--seed", type=int, help="seed for data, training and generation")
    common.add_argument("--out", metavar="DIR", help="output folder (default: timestamped)")
    common.add_argument("--epochs", type=int, help="training epochs for the command's model")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qaug", description="Quantum GAN data augmentation for hybrid classifiers")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings only, no progress bars")
    common = _common_parser()
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train-hqcnn", parents=[common], help="train and evaluate the hybrid classifier")
    sub.add_parser("train-qgan", parents=[common], help="train one quantum GAN per class")
    sub.add_parser("train-cgan", parents=[common], help="train one classical GAN per class")

    augment = sub.add_parser("augment", parents=[common], help="build an augmented dataset")
    augment.add_argument("--strategy", required=True, choices=COMPARE_STRATEGIES)
    augment.add_argument("--n-gen", type=int, help="total samples to generate")
    augment.add_argument("--classifier", metavar="CHECKPOINT", help="trained HQCNN checkpoint for profiling")
    augment.add_argument("--generators", metavar="DIR", help="output folder of train-qgan/train-cgan")

    compare = sub.add_parser("compare", parents=[common], help="compare strategies over seeds")
    compare.add_argument("--strategies", help="comma-separated strategies to run besides the baseline")
    compare.add_argument("--gan-epochs", type=int, help="epochs for the generators")

    evaluate = sub.add_parser("evaluate", parents=[common], help="evaluate a saved classifier")
    evaluate.add_argument("--checkpoint", required=True)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Flags always win over the config file."""
    overrides: Dict[str, Any] = {}
    if args.seed is not None:
        overrides.update({"train": {"seed": args.seed}, "gan": {"seed": args.seed},
                          "augment": {"seed": args.seed}, "seeds": [args.seed]})
    if args.epochs is not None:
        section = "gan" if args.command in GAN_COMMANDS else "train"
        overrides.setdefault(section, {})["epochs"] = args.epochs
    if getattr(args, "gan_epochs", None) is not None:
        overrides.setdefault("gan", {})["epochs"] = args.gan_epochs
    if getattr(args, "n_gen", None) is not None:
        overrides.setdefault("augment", {})["n_gen"] = args.n_gen
    if getattr(args, "strategies", None):
        overrides["strategies"] = [s.strip() for s in args.strategies.split(",") if s.strip()]
    return overrides


def _load_configs(args: argparse.Namespace) -> List[ExperimentConfig]:
    overrides = _overrides(args)
    return [load_experiment_config(path, overrides) for path in (args.config or [None])]


def run_command(args: argparse.Namespace) -> None:
    configs = _load_configs(args)
    config = configs[-1]
    if args.command == "train-hqcnn":
        run_train_hqcnn(config, args.out)
    elif args.command in GAN_COMMANDS:
        run_train_gan(config, "qgan" if args.command == "train-qgan" else "cgan", args.out)
    elif args.command == "augment":
        run_augment(config, args.strategy, args.out, args.classifier, args.generators)
    elif args.command == "compare":
        run_compare(configs, args.out, quiet=args.quiet)
    elif args.command == "evaluate":
        run_evaluate(config, args.checkpoint, args.out)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        run_command(args)
    except QaugError as e:
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
