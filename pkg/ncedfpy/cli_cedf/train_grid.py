#!/usr/bin/python3

import argparse
import os
from typing import List, Optional

from ncedfpy import fileutil, neural, simulator
from ncedfpy.cedf import RobotCedf
from ncedfpy.cli_cedf import cliutil
from ncedfpy.cli_cedf.train import add_training_arguments, load_datasets, train_config, training_meta
from ncedfpy.common import ConfigError, prefix_logger

GRID_COLUMNS = ["layers", "width", "inference_ms", "mppi_s", "mae", "rmse", "moe"]
TIMED_QUERIES = 1000


def handle_parameters(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description=(
            "Trains one link network per depth and width of a grid and tabulates "
            "accuracy against query and controller time"
        )
    )
    add_training_arguments(parser)
    parser.add_argument(
        "--layers", type=cliutil.int_list, default=[2, 3, 4, 5], help="Hidden layer counts. Default: 2,3,4,5"
    )
    parser.add_argument(
        "--widths", type=cliutil.int_list, default=[16, 24, 32], help="Hidden widths. Default: 16,24,32"
    )
    parser.add_argument("--out", required=True, help="Output CSV table")
    parser.add_argument("--model-dir", help="Also keep every trained model in this directory")
    parser.add_argument(
        "--scenario",
        help="Time the controller on this scenario with every network shared by all links",
    )
    parser.add_argument(
        "--mppi-steps",
        type=cliutil.positive_int,
        default=5,
        help="Controller steps timed per network. Default: %(default)s",
    )
    parser.add_argument(
        "--omit-timing",
        action="store_true",
        help="Write all times as 0, so that repeated runs compare byte for byte",
    )
    cliutil.add_common_arguments(parser)
    return parser.parse_args(argv)


def execute(options: argparse.Namespace) -> int:
    dataset, validation, geometry = load_datasets(options.data, options.val)
    cfg = train_config(options)
    scenario = simulator.load_scenario(cliutil.config_path(options.scenario)) if options.scenario else None
    if scenario is not None and any(g != geometry for g in scenario.robot.geometries):
        raise ConfigError("The scenario links differ from the link of '{}'".format(options.data))
    if options.model_dir:
        os.makedirs(fileutil.resolve_output_path(options.model_dir), exist_ok=True)

    inputs = neural.encode_dataset(validation)[:TIMED_QUERIES]
    rows = []
    for layers in options.layers:
        for width in options.widths:
            log = prefix_logger("net {},{}".format(layers, width))
            params, history = neural.train(dataset, validation, neural.network_shape(layers, width), cfg)
            final = history[-1]
            inference_ms, mppi_s = 0.0, ""
            if not options.omit_timing:
                inference_ms = neural.mean_query_ms(params, inputs)
            if scenario is not None:
                mppi_s = 0.0
                if not options.omit_timing:
                    meta = training_meta(dataset, cfg, history, options.data)
                    cedf = RobotCedf.from_models(
                        [neural.LinkModel(params, geometry, meta)], scenario.robot.geometries
                    )
                    mppi_s = simulator.time_controller(scenario, cedf, options.mppi_steps, options.threads)
            if options.model_dir:
                neural.save_model(
                    fileutil.resolve_output_path(
                        os.path.join(options.model_dir, "link_{}x{}.json".format(layers, width))
                    ),
                    params,
                    geometry,
                    training_meta(dataset, cfg, history, options.data),
                )
            log.info("MAE %.5f query %.4f ms controller %s s", final.val_mae, inference_ms, mppi_s)
            rows.append([layers, width, inference_ms, mppi_s, final.val_mae, final.val_rmse, final.val_moe])

    out = fileutil.resolve_output_path(options.out)
    fileutil.write_csv(out, GRID_COLUMNS, rows)
    cliutil.write_manifest(
        "cedf-train-grid",
        {
            "layers": options.layers,
            "widths": options.widths,
            "train": cfg.to_dict(),
            "data": options.data,
            "val": options.val,
            "scenario": scenario.to_dict() if scenario is not None else None,
            "mppi_steps": options.mppi_steps,
        },
        {"training": cfg.seed},
        {"table": out},
    )
    cliutil.print_table(GRID_COLUMNS, rows)
    cliutil.print_summary({"networks": len(rows), "out": out})
    return cliutil.EXIT_OK


def main(argv: Optional[List[str]] = None) -> None:
    cliutil.main_wrapper(handle_parameters, execute, argv)


if __name__ == "__main__":
    main()
