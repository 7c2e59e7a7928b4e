"""
Command-line entry point: `python -m cli <command> [options]`

Parses the global flags (--config, --seed, --deterministic, --out, --steps,
--log-level, --set) and the per-command options, loads and validates the run
config, then hands a CommandContext to the plugin that owns the command.
Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import yaml
from dotenv import load_dotenv

from core.config import RunConfig, load_run_config
from core.errors import EXIT_VALIDATION, LabError, ValidationError
from core.plugin import CommandContext, PluginManager

logger = logging.getLogger("lab.cli")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _global_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config YAML, deep-merged over core/config.yaml")
    common.add_argument("--seed", type=int, help="overrides run.seed")
    common.add_argument("--deterministic", action="store_true", default=None,
                        help="deterministic kernels, single-worker loading, no wall-clock fields in metrics")
    common.add_argument("--out", help="run directory (default: <run.out_dir>/<run.name>)")
    common.add_argument("--steps", type=int, help="number of update steps")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="config override such as encoder.num_layers=2 (repeatable)")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="lab", description="Desk-scale lab for fast masked-prediction speech pre-training")
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    extract = commands.add_parser("extract", parents=[common], help="offline Fbank / MFCC extraction")
    extract.add_argument("--manifest")
    extract.add_argument("--kind", choices=["fbank", "mfcc"], default="fbank")
    extract.add_argument("--feature-dir", dest="feature_dir")

    kmeans = commands.add_parser("kmeans", parents=[common], help="k-means frame labels")
    kmeans.add_argument("--manifest")
    kmeans.add_argument("--clusters", type=int)
    kmeans.add_argument("--checkpoint", help="cluster encoder latents of this pre-trained checkpoint")
    kmeans.add_argument("--layer", type=int, help="encoder layer to tap with --checkpoint")
    kmeans.add_argument("--feature-dir", dest="feature_dir")
    kmeans.add_argument("--iterations", type=int)
    kmeans.add_argument("--max-frames", dest="max_frames", type=int, help="subsample frames for fitting")
    kmeans.add_argument("--labels-out", dest="labels_out")
    kmeans.add_argument("--truth", help="ground-truth label file, reports cluster purity")

    pretrain = commands.add_parser("pretrain", parents=[common], help="masked-prediction pre-training")
    pretrain.add_argument("--resume", help="checkpoint to resume from")

    finetune = commands.add_parser("finetune", parents=[common], help="CTC fine-tuning")
    finetune.add_argument("--checkpoint", help="pre-trained checkpoint (default: finetune.checkpoint)")

    decode = commands.add_parser("decode", parents=[common], help="CTC decoding of a manifest")
    decode.add_argument("--checkpoint", required=True)
    decode.add_argument("--manifest")
    decode.add_argument("--beam", type=int)
    decode.add_argument("--ref", help="reference transcripts, scores the hypotheses")

    score = commands.add_parser("score", parents=[common], help="word error rate")
    score.add_argument("--hyp", required=True)
    score.add_argument("--ref", required=True)

    compare = commands.add_parser("compare", parents=[common], help="per-component timing of two configs")
    compare.add_argument("config_a")
    compare.add_argument("config_b")
    compare.add_argument("--repeats", type=int, default=1)

    synth = commands.add_parser("synth", parents=[common], help="synthetic tone-letter corpus")
    synth.add_argument("--n-utts", dest="num_utts", type=int)
    synth.add_argument("--tone-classes", dest="tone_classes", type=int, choices=[3, 8])
    synth.add_argument("--words", type=int, nargs=2, metavar=("MIN", "MAX"))
    synth.add_argument("--letter-seconds", dest="letter_seconds", type=float, nargs=2, metavar=("MIN", "MAX"))
    synth.add_argument("--gap-seconds", dest="gap_seconds", type=float)
    synth.add_argument("--dev-fraction", dest="dev_fraction", type=float)

    return parser


def parse_overrides(items: Sequence[str]) -> Dict[str, Any]:
    """["a.b=1", "c=x"] -> {"a": {"b": 1}, "c": "x"}; values are parsed as YAML scalars"""
    overrides: Dict[str, Any] = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ValidationError(f"--set {item!r}: expected KEY=VALUE")
        *parents, leaf = key.strip().split(".")
        node = overrides
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValidationError(f"--set {item!r}: {part} is already a value")
        node[leaf] = yaml.safe_load(raw) if raw.strip() else ""
    return overrides


def _run_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = parse_overrides(args.overrides)
    run = overrides.setdefault("run", {})
    if args.seed is not None:
        run["seed"] = args.seed
    if args.deterministic:
        run["deterministic"] = True
    return overrides


def build_context(args: argparse.Namespace) -> CommandContext:
    overrides = _run_overrides(args)
    config: Optional[RunConfig] = None
    if args.config:
        if not Path(args.config).exists():
            raise ValidationError(f"--config: {args.config} does not exist")
        config = load_run_config(args.config, overrides)
    if args.command == "compare":
        args.config_overrides = overrides

    seed = config.run.seed if config else (args.seed or 0)
    deterministic = config.run.deterministic if config else bool(args.deterministic)
    return CommandContext(
        command=args.command,
        args=args,
        config=config,
        seed=seed,
        deterministic=deterministic,
        out_dir=Path(args.out) if args.out else None,
        steps=args.steps,
    )


async def run_command(context: CommandContext, manager: Optional[PluginManager] = None) -> int:
    manager = manager or PluginManager()
    loaded = await manager.load_plugins()
    logger.debug(f"{loaded} plugins loaded, commands: {sorted(manager.get_all_commands())}")
    try:
        outcome = await manager.dispatch(context)
    finally:
        await manager.cleanup()
    print(outcome.message, file=sys.stdout if outcome.ok else sys.stderr)
    return outcome.exit_code


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    try:
        context = build_context(args)
    except LabError as e:
        print(f"❌ {args.command}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"❌ {args.command}: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    return asyncio.run(run_command(context))


if __name__ == "__main__":
    sys.exit(main())
