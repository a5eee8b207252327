"""Argument handling, exit codes and output bookkeeping shared by the cedf-* commands."""
import argparse
import json
import os
import sys
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from tabulate import tabulate

from ncedfpy import fileutil
from ncedfpy.cedf import RobotCedf, load_robot_cedf
from ncedfpy.common import CedfError, ConfigError, fatal, logger, setup_logging
from ncedfpy.kinematics import LinkGeometry

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("'{}' is not an integer".format(text)) from None
    if value < 1:
        raise argparse.ArgumentTypeError("'{}' is not a positive integer".format(text))
    return value


def int_list(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("'{}' is not a comma-separated list of integers".format(text)) from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "-l",
        "--log-level",
        default="WARNING",
        type=str.upper,
        choices=LOG_LEVELS,
        help="Logging level on the standard error. Default: WARNING",
    )
    parser.add_argument(
        "--threads",
        type=positive_int,
        default=os.cpu_count() or 1,
        help="Maximum number of worker threads. It never changes the results. Default: number of CPUs",
    )


def config_path(path: str) -> str:
    """Existing paths are used as given; otherwise the name of a shipped config."""
    if os.path.exists(path):
        return path
    shipped = os.path.join(CONFIG_DIR, os.path.basename(path))
    if os.path.exists(shipped):
        return shipped
    return path


def run(command: Callable[[], int]) -> int:
    """Runs a command body and maps failures to exit codes."""
    try:
        return command()
    except (ConfigError, json.JSONDecodeError, KeyError) as e:
        logger().error("Invalid configuration: %s", e)
        return EXIT_CONFIG
    except (CedfError, OSError, ValueError) as e:
        logger().error("Run failed: %s", e)
        return EXIT_RUNTIME


def main_wrapper(
    handle_parameters: Callable[[Optional[List[str]]], argparse.Namespace],
    execute: Callable[[argparse.Namespace], int],
    argv: Optional[List[str]] = None,
) -> None:
    """Parses argv, sets up logging and exits with the code of the command body."""
    options = handle_parameters(argv)
    setup_logging(options.log_level)
    code = run(lambda: execute(options))
    if code != EXIT_OK:
        fatal("giving up with exit code {}".format(code), code)
    sys.exit(code)


def print_summary(values: Dict[str, Any]) -> None:
    """One key=value line per entry on the standard output."""
    for key, value in values.items():
        print("{}={}".format(key, value))


def print_table(headers: List[str], rows: List[List[Any]]) -> None:
    print(tabulate(rows, headers=headers, floatfmt=".4f"), file=sys.stderr)


def write_manifest(
    command: str, config: Dict[str, Any], seeds: Dict[str, int], outputs: Dict[str, str]
) -> None:
    """Writes the run manifest next to every output file."""
    manifest = fileutil.RunManifest(command=command, config=config, seeds=seeds)
    manifest.finish({name: os.path.abspath(path) for name, path in outputs.items()})
    for path in outputs.values():
        fileutil.write_manifest(manifest, path)
        logger().info("Wrote %s", path)


def add_model_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--model",
        action="append",
        default=[],
        help="Link model file. Give it once for a network shared by all links, or once per link",
    )
    parser.add_argument(
        "--float32",
        action="store_true",
        help="Evaluate the link networks in single precision",
    )


def robot_cedf(
    options: argparse.Namespace, geometries: List[LinkGeometry], modes: List[str]
) -> Optional[RobotCedf]:
    """The learned robot distance when a shape mode needs it."""
    if "ncedf" not in modes:
        return None
    if not options.model:
        raise ConfigError("Shape mode 'ncedf' needs at least one --model")
    return load_robot_cedf(options.model, geometries, np.float32 if options.float32 else np.float64)
