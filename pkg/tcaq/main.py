"""Entry point for the tcaq command line."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .commands import CommandExecutor, CommandType
from .config import FLAG_TO_KEY, RunConfig, load_config
from .errors import TcaqError

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    handlers=[
        logging.StreamHandler(sys.stdout),
    ],
)
logger = logging.getLogger(__name__)

# Flags that negate a boolean config value
NEGATED_FLAGS = frozenset({"--no-tcr", "--no-daq"})


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="Path to configuration file")
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")

    parser.add_argument("--bits-w", type=int, default=None, help="Weight bit width (2..8, 32 = full precision)")
    parser.add_argument("--bits-a", type=int, default=None, help="Activation bit width (2..8, 32 = full precision)")
    parser.add_argument("--bits-s", type=int, default=None, help="Post-Softmax bit width (4, 6, 8, 32)")
    parser.add_argument("--no-tcr", action="store_true", default=None, help="Disable timestep-channel reparameterization")
    parser.add_argument("--no-daq", action="store_true", default=None, help="Disable the adaptive post-Softmax quantizer")
    parser.add_argument("--par-rounds", type=int, default=None, help="PAR rounds after the basic reconstruction")
    parser.add_argument("--clamp", type=float, default=None, help="Clamp range R for the scaling vector")
    parser.add_argument("--groups", type=int, default=None, help="Timestep groups for activation quantizers")
    parser.add_argument("--seed", type=int, default=None, help="Run seed")
    parser.add_argument("--full-scale", action="store_true", default=None,
                        help="Use 20000 / 10000 reconstruction iterations")
    parser.add_argument("--out", type=str, default=None, help="Output directory")


def build_parser() -> argparse.ArgumentParser:
    """The CLI parser: one subcommand per CommandType, sharing the run flags."""
    parser = argparse.ArgumentParser(
        prog="tcaq",
        description="tcaq - Timestep-channel aware post-training quantization of a toy diffusion model",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    helps = {
        CommandType.TRAIN: "Train the toy UNet",
        CommandType.QUANTIZE: "Quantize and reconstruct the trained model",
        CommandType.SAMPLE: "Sample the quantized model and dump PNG grids",
        CommandType.EVALUATE: "Score the quantized model",
        CommandType.ABLATE: "Run the ablation grid and sweeps",
    }
    for cmd_type in CommandType:
        sub = subparsers.add_parser(cmd_type.value, help=helps[cmd_type])
        _add_run_flags(sub)
    return parser


def flag_dest(flag: str) -> str:
    return flag.lstrip("-").replace("-", "_")


def apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    """Write every flag that was given into its config key."""
    for flag, (section, key) in FLAG_TO_KEY.items():
        value = getattr(args, flag_dest(flag), None)
        if value is None:
            continue
        if flag in NEGATED_FLAGS:
            value = not value
        config.set_value(section, key, value)
    return config


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments."""
    return build_parser().parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point."""
    args = parse_args(argv)

    try:
        config = apply_overrides(load_config(args.config), args).validate()
    except TcaqError as e:
        logger.error(f"Invalid configuration: {e}")
        return e.exit_code

    # Configure logging level
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
        logger.debug("Verbose logging enabled")
    else:
        logging.getLogger().setLevel(config.logging.level.upper())

    try:
        result = CommandExecutor(config).execute(CommandType(args.command))
    except Exception as e:
        logger.error(f"Fatal error: {e}", exc_info=True)
        return 1

    if result.success:
        logger.info(f"{args.command} finished: {result.data}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
