#!/usr/bin/python3

import argparse
from typing import List, Optional

from ncedfpy import fileutil, simulator
from ncedfpy.cli_cedf import cliutil

TABLE_COLUMNS = list(simulator.BenchmarkRow._fields)
DEFAULT_MODES = "ncedf,spheres,pcloud:1000"


def shape_modes(text: str) -> List[str]:
    modes = [m.strip() for m in text.split(",") if m.strip()]
    if not modes:
        raise argparse.ArgumentTypeError("no shape mode given")
    for mode in modes:
        simulator.parse_shape_mode(mode)
    return modes


def handle_parameters(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description=(
            "Runs every robot shape mode on the same set of random environments and "
            "tabulates success, collision and stuck rates"
        )
    )
    parser.add_argument(
        "--scenario-template",
        required=True,
        help="Scenario file whose seed is replaced by each environment seed",
    )
    parser.add_argument(
        "--n-envs", type=cliutil.positive_int, default=100, help="Number of environments. Default: %(default)s"
    )
    parser.add_argument(
        "--base-seed",
        type=int,
        help="Seed of the first environment; the others follow consecutively. Default: the template seed",
    )
    parser.add_argument(
        "--modes",
        type=shape_modes,
        default=shape_modes(DEFAULT_MODES),
        help="Comma-separated shape modes. Default: " + DEFAULT_MODES,
    )
    cliutil.add_model_arguments(parser)
    parser.add_argument("--out", required=True, help="Output CSV table")
    parser.add_argument(
        "--omit-timing",
        action="store_true",
        help="Write controller times as 0, so that repeated runs compare byte for byte",
    )
    cliutil.add_common_arguments(parser)
    return parser.parse_args(argv)


def execute(options: argparse.Namespace) -> int:
    template = simulator.load_scenario(cliutil.config_path(options.scenario_template))
    base_seed = template.seed if options.base_seed is None else options.base_seed
    cedf = cliutil.robot_cedf(options, template.robot.geometries, options.modes)

    rows, _ = simulator.run_benchmark(
        options.n_envs, base_seed, template, options.modes, cedf=cedf, threads=options.threads
    )
    if options.omit_timing:
        rows = [row._replace(mppi_ms_mean=0.0, mppi_ms_sd=0.0) for row in rows]

    out = fileutil.resolve_output_path(options.out)
    fileutil.write_csv(out, TABLE_COLUMNS, rows)
    cliutil.write_manifest(
        "cedf-bench",
        {
            "template": template.to_dict(),
            "n_envs": options.n_envs,
            "modes": options.modes,
            "models": options.model,
        },
        {"base_seed": base_seed, "mppi": template.mppi.seed},
        {"table": out},
    )
    cliutil.print_table(TABLE_COLUMNS, rows)
    for row in rows:
        print(" ".join("{}={}".format(k, v) for k, v in row._asdict().items()))
    return cliutil.EXIT_OK


def main(argv: Optional[List[str]] = None) -> None:
    cliutil.main_wrapper(handle_parameters, execute, argv)


if __name__ == "__main__":
    main()
