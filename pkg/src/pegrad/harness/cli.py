"""``pegrad`` command line: bench, verify, maxbatch and train."""

import argparse
import logging
import sys
from typing import Optional, Sequence, get_args

from pegrad.config import Settings, load_settings
from pegrad.dpsgd import DpConfig, Trainer, accuracy
from pegrad.harness.bench import (
    DEFAULT_BATCH_SIZES,
    DEFAULT_EPOCHS,
    DEFAULT_EXAMPLES,
    bench_model,
    max_batch_search,
    run_bench,
)
from pegrad.harness.datasets import dataset_for
from pegrad.harness.records import RecordFormat, emit
from pegrad.harness.verify import run_verification
from pegrad.models.builders import SEQ_LEN, ModelKind
from pegrad.strategies import ExecutionMode, StrategyName, get_strategy

logger = logging.getLogger(__name__)


def _batch_sizes(value: str) -> list[int]:
    try:
        sizes = [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"batch sizes must be comma separated integers, got {value!r}")
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError(f"batch sizes must be positive, got {value!r}")
    return sizes


def _add_model_args(parser: argparse.ArgumentParser, strategy_default: str = "vmap") -> None:
    parser.add_argument("--model", required=True, choices=get_args(ModelKind))
    parser.add_argument("--strategy", default=strategy_default, choices=get_args(StrategyName))
    parser.add_argument("--mode", default="graph", choices=get_args(ExecutionMode))
    parser.add_argument("--seq-len", type=int, default=SEQ_LEN, help="Sequence length of token models")


def _add_dp_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--clip", type=float, default=1.0, help="Per-example l2 clip norm")
    parser.add_argument("--noise-multiplier", type=float, default=1.0)
    parser.add_argument("--lr", type=float, default=0.1)
    parser.add_argument("--microbatch", type=int, default=1, help="Examples averaged before clipping")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--examples", type=int, default=DEFAULT_EXAMPLES, help="Training set size")


def _dp_config(args: argparse.Namespace) -> DpConfig:
    return DpConfig(
        clip_norm=args.clip,
        noise_multiplier=args.noise_multiplier,
        learning_rate=args.lr,
        microbatch_size=args.microbatch,
        seed=args.seed,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pegrad", description="Per-example gradients for DPSGD")
    commands = parser.add_subparsers(dest="command", required=True)

    bench = commands.add_parser("bench", help="Median epoch time of training per batch size")
    _add_model_args(bench)
    bench.add_argument(
        "--vectorize",
        default="on",
        choices=("on", "off"),
        help="off replaces the strategy by the per-example loop",
    )
    bench.add_argument("--batch-sizes", type=_batch_sizes, default=list(DEFAULT_BATCH_SIZES))
    bench.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS)
    bench.add_argument("--mem-cap", type=int, default=None, help="Byte cap; larger footprints are recorded as oom")
    bench.add_argument("--out", required=True)
    bench.add_argument("--format", default="json", choices=get_args(RecordFormat))
    bench.add_argument("--no-private", action="store_true", help="Time plain SGD, the non-private baseline")
    _add_dp_args(bench)

    verify = commands.add_parser("verify", help="Run the equivalence and oracle checks")
    verify.add_argument("--models", nargs="*", choices=get_args(ModelKind), default=None)

    maxbatch = commands.add_parser("maxbatch", help="Largest batch size under a memory cap")
    _add_model_args(maxbatch)
    maxbatch.add_argument("--mem-cap", type=int, required=True)

    train = commands.add_parser("train", help="Train and report the final train accuracy")
    _add_model_args(train)
    train.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS)
    train.add_argument("--batch-size", type=int, default=64)
    train.add_argument("--no-private", action="store_true", help="Plain SGD without clipping or noise")
    _add_dp_args(train)
    return parser


def _bench(args: argparse.Namespace, settings: Settings) -> int:
    strategy = args.strategy if args.vectorize == "on" else "naive"
    records = run_bench(
        args.model,
        strategy,
        args.mode,
        args.batch_sizes,
        args.epochs,
        _dp_config(args),
        mem_cap=args.mem_cap,
        dtype=settings.dtype,
        seq_len=args.seq_len,
        data_dir=settings.data_dir,
        num_examples=args.examples,
        private=not args.no_private,
    )
    emit(records, args.format, args.out)
    return 0


def _verify(args: argparse.Namespace, settings: Settings) -> int:
    results = run_verification(args.models)
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error(f"{len(failed)} checks failed: {failed}")
        return 1
    return 0


def _maxbatch(args: argparse.Namespace, settings: Settings) -> int:
    result = max_batch_search(args.model, args.strategy, args.mode, args.mem_cap, settings.dtype, args.seq_len)
    print(result)
    return 0


def _train(args: argparse.Namespace, settings: Settings) -> int:
    cfg = _dp_config(args)
    model = bench_model(args.model, args.mode, cfg.seed, settings.dtype, args.seq_len)
    data = dataset_for(model.kind, args.examples, cfg.seed, settings.dtype, args.seq_len, settings.data_dir)
    strategy = get_strategy(args.strategy, args.mode)
    trainer = Trainer(model, cfg, strategy, private=not args.no_private)
    result = trainer.fit(data.x, data.y, args.epochs, args.batch_size)
    print(f"train accuracy: {accuracy(model, result.params, data.x, data.y):.4f}")
    print(f"loss trajectory: {len(result.epoch_losses)} epochs, final loss {result.epoch_losses[-1]:.4f}")
    return 0


_COMMANDS = {"bench": _bench, "verify": _verify, "maxbatch": _maxbatch, "train": _train}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = load_settings()
    logging.basicConfig(level=settings.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    return _COMMANDS[args.command](args, settings)


if __name__ == "__main__":
    sys.exit(main())
