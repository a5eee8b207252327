#!/usr/bin/python3

import argparse
from typing import List, Optional

import numpy as np

from ncedfpy import datagen, fileutil, neural
from ncedfpy.cli_cedf import cliutil
from ncedfpy.common import ConfigError, logger
from ncedfpy.kinematics import LinkGeometry

METRIC_COLUMNS = ["mae", "rmse", "moe", "eikonal_residual", "lipschitz_bound", "query_ms"]
TIMED_QUERIES = 1000


def handle_parameters(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description="Reports the errors of a trained link model on a validation dataset"
    )
    parser.add_argument("--model", required=True, help="Model file written by cedf-train")
    parser.add_argument("--val", required=True, help="Validation dataset (JSON lines)")
    parser.add_argument("--out", help="Also write the metrics to this CSV file")
    parser.add_argument(
        "--omit-timing",
        action="store_true",
        help="Report the query time as 0, so that outputs compare byte for byte",
    )
    cliutil.add_common_arguments(parser)
    return parser.parse_args(argv)


def execute(options: argparse.Namespace) -> int:
    model = neural.load_model(options.model)
    validation = datagen.read_dataset(options.val)
    if LinkGeometry.from_dict(validation.meta["geometry"]) != model.geometry:
        raise ConfigError("'{}' was not generated for the link of '{}'".format(options.val, options.model))

    inputs = neural.encode_dataset(validation)
    metrics = datagen.compute_error_metrics(neural.mlp_forward_batch(model.params, inputs), validation.d)
    query_ms = 0.0 if options.omit_timing else neural.mean_query_ms(model.params, inputs[:TIMED_QUERIES])
    row = [
        metrics.mae,
        metrics.rmse,
        metrics.moe,
        neural.eikonal_residual(model.params, inputs),
        neural.lipschitz_bound(model.params),
        query_ms,
    ]
    if not np.all(np.isfinite(row)):
        logger().warning("Non-finite metrics for %s: %s", options.model, row)
    cliutil.print_table(METRIC_COLUMNS, [row])

    if options.out:
        out = fileutil.resolve_output_path(options.out)
        fileutil.write_csv(out, METRIC_COLUMNS, [row])
        cliutil.write_manifest(
            "cedf-eval",
            {"model": options.model, "val": options.val},
            {},
            {"metrics": out},
        )
    cliutil.print_summary(dict(zip(METRIC_COLUMNS, row)))
    return cliutil.EXIT_OK


def main(argv: Optional[List[str]] = None) -> None:
    cliutil.main_wrapper(handle_parameters, execute, argv)


if __name__ == "__main__":
    main()
