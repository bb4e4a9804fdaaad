#!/usr/bin/env python3
"""
acmamba CLI

Main entry point for the acmamba command-line interface.
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from acmamba.launchers.pipeline import (
    ABLATION_VARIANTS,
    SWEEP_PARAMS,
    RunPaths,
    apply_overrides,
    load_run_config,
    run_ablation,
    run_detect,
    run_eval,
    run_pipeline,
    run_rx,
    run_segment,
    run_sweep,
    run_synth,
    run_train,
)
from acmamba.models.config import RunConfig

# Global verbose flag that can be imported by other modules
VERBOSE_MODE = False


def setup_logging(level: str = "INFO", verbose: bool = False, log_file: Optional[str] = "acmamba.log") -> None:
    """Set up logging configuration.

    Args:
        level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        verbose: Whether to enable verbose mode
        log_file: Log file in the working directory; None disables the file handler
    """
    global VERBOSE_MODE
    VERBOSE_MODE = verbose

    numeric_level = getattr(logging, level.upper(), None)
    if not isinstance(numeric_level, int):
        raise ValueError(f"Invalid log level: {level}")

    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=numeric_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=handlers,
    )

    # imageio's PIL plugin logs every PNG chunk at DEBUG
    logging.getLogger("PIL").setLevel(logging.WARNING)


def build_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then flags.

    Args:
        args: Command-line arguments

    Returns:
        RunConfig: Validated run configuration
    """
    config = load_run_config(args.config) if args.config else RunConfig()
    return apply_overrides(config, seed=args.seed, output_dir=args.out, assignments=args.set or [])


def synth_command(config: RunConfig, args: argparse.Namespace) -> None:
    summary = run_synth(config)
    print(f"cube: {summary['cube']}")
    print(f"mask: {summary['mask']}")
    print(f"dimensions: {summary['height']}x{summary['width']}x{summary['bands']}")
    print(f"anomaly_fraction: {summary['anomaly_fraction']:.6f}")


def segment_command(config: RunConfig, args: argparse.Namespace) -> None:
    region_map = run_segment(config)
    print(f"regions: {region_map.n_regions}")


def train_command(config: RunConfig, args: argparse.Namespace) -> None:
    _, history = run_train(config)
    if history.epochs:
        print(f"final loss_ori: {history.final.loss_ori:.6f}")
        print(f"final loss_mask: {history.final.loss_mask:.6f}")
    print(f"model: {RunPaths.from_config(config).model}")


def detect_command(config: RunConfig, args: argparse.Namespace) -> None:
    detection = run_detect(config, preview=args.preview)
    print(f"detection: {RunPaths.from_config(config).detection}")
    print(f"max score: {detection.scores.max():.6f}")


def eval_command(config: RunConfig, args: argparse.Namespace) -> None:
    print(f"AUC: {run_eval(config, args.map):.6f}")


def rx_command(config: RunConfig, args: argparse.Namespace) -> None:
    _, value = run_rx(config, preview=args.preview)
    print(f"rx: {RunPaths.from_config(config).rx}")
    if value is not None:
        print(f"RX AUC: {value:.6f}")


def run_command(config: RunConfig, args: argparse.Namespace) -> None:
    outcome = run_pipeline(config, preview=args.preview)
    print(f"regions: {outcome.region_map.n_regions}")
    print(f"train_seconds: {outcome.bench.train_seconds:.3f}")
    print(f"infer_seconds: {outcome.bench.infer_seconds:.3f}")
    if outcome.auc is not None:
        print(f"AUC: {outcome.auc:.6f}")


def sweep_command(config: RunConfig, args: argparse.Namespace) -> None:
    rows = run_sweep(config, args.param, args.values)
    for param, value, auc_value, seconds in rows:
        print(f"{param}={value}: AUC {auc_value:.6f}, train {seconds:.3f}s")


def ablate_command(config: RunConfig, args: argparse.Namespace) -> None:
    rows = run_ablation(config, args.variants)
    for variant, auc_value, seconds, n_regions in rows:
        print(f"{variant}: AUC {auc_value:.6f}, train {seconds:.3f}s, {n_regions} regions")


def show_config_command(config: RunConfig, args: argparse.Namespace) -> None:
    print(json.dumps(config.model_dump(mode="json"), indent=2))


COMMANDS = {
    "synth": synth_command,
    "segment": segment_command,
    "train": train_command,
    "detect": detect_command,
    "eval": eval_command,
    "rx": rx_command,
    "run": run_command,
    "sweep": sweep_command,
    "ablate": ablate_command,
    "show-config": show_config_command,
}


def create_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="acmamba - region-based hyperspectral anomaly detection with selective state space models"
    )
    parser.add_argument("--log-level", default=None,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
                        help="Logging level (default: the config's log_level)")
    parser.add_argument("--verbose", "-v", action="store_true",
                        help="Print per-epoch training progress")
    parser.add_argument("--config", help="Path to a YAML run configuration")
    parser.add_argument("--seed", type=int, help="Seed for scene synthesis and training (overrides config)")
    parser.add_argument("--out", help="Output directory (overrides config)")
    parser.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="Override one configuration value; may be repeated")

    subparsers = parser.add_subparsers(dest="command", help="Command to run")

    subparsers.add_parser("synth", help="Synthesize a scene: cube.hsc and mask.hsc")
    subparsers.add_parser("segment", help="Segment the cube into regions")
    subparsers.add_parser("train", help="Train the autoencoder on the segmented cube")

    detect_parser = subparsers.add_parser("detect", help="Score the cube with the trained model")
    detect_parser.add_argument("--preview", action="store_true", help="Also write an 8-bit PNG preview")

    eval_parser = subparsers.add_parser("eval", help="AUC of a score map against the mask")
    eval_parser.add_argument("--map", help="Score map to evaluate (default: detection.hsc)")

    rx_parser = subparsers.add_parser("rx", help="Global RX baseline")
    rx_parser.add_argument("--preview", action="store_true", help="Also write an 8-bit PNG preview")

    run_parser = subparsers.add_parser("run", help="Segment, train, detect and evaluate end to end")
    run_parser.add_argument("--preview", action="store_true", help="Also write an 8-bit PNG preview")

    sweep_parser = subparsers.add_parser("sweep", help="Repeat the run over values of one parameter")
    sweep_parser.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS), help="Parameter to sweep")
    sweep_parser.add_argument("--values", required=True, nargs="+", type=float, help="Values to try")

    ablate_parser = subparsers.add_parser("ablate", help="Compare the component variants on one scene")
    ablate_parser.add_argument("--variants", nargs="+", choices=list(ABLATION_VARIANTS),
                               help="Variants to run (default: all)")

    subparsers.add_parser("show-config", help="Print the effective configuration")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the CLI.

    Args:
        argv: Command-line arguments (defaults to sys.argv[1:])

    Returns:
        int: Exit code
    """
    parser = create_parser()
    args = parser.parse_args(argv)

    if args.command not in COMMANDS:
        parser.print_help()
        return 1

    try:
        config = build_config(args)
    except Exception as e:
        setup_logging(args.log_level or "INFO", args.verbose)
        logging.error(f"Error: {e}")
        return 1

    setup_logging(args.log_level or config.log_level, args.verbose)
    try:
        COMMANDS[args.command](config, args)
        return 0
    except Exception as e:
        logging.error(f"Error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
