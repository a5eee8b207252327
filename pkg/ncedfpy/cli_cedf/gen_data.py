#!/usr/bin/python3

import argparse
from typing import List, Optional

from ncedfpy import datagen, fileutil, streams
from ncedfpy.cli_cedf import cliutil


def handle_parameters(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description=(
            "Generates the distance dataset of one link: sampled link configurations "
            "times workspace points, labelled with the distance to the sampled link surface"
        )
    )
    parser.add_argument(
        "--config",
        required=True,
        help=(
            'Dataset config with "geometry" and "dataset" sections. The name of a '
            "shipped config, like desk_dataset.json, is accepted too."
        ),
    )
    parser.add_argument("--out", required=True, help="Output JSON-lines file")
    parser.add_argument(
        "--validation",
        action="store_true",
        help="Generate the validation set: its own random streams and the validation sizes",
    )
    cliutil.add_common_arguments(parser)
    return parser.parse_args(argv)


def execute(options: argparse.Namespace) -> int:
    geometry, spec = datagen.load_dataset_config(cliutil.config_path(options.config))
    tag = streams.DATASET
    if options.validation:
        spec, tag = spec.validation(), streams.VALIDATION
    dataset = datagen.generate_dataset(geometry, spec, threads=options.threads, tag=tag)
    out = fileutil.resolve_output_path(options.out)
    count = datagen.write_dataset(out, dataset)
    cliutil.write_manifest(
        "cedf-gen-data",
        {"geometry": geometry.to_dict(), "dataset": spec.to_dict(), "validation": options.validation},
        {"dataset": spec.seed, "tag": tag},
        {"dataset": out},
    )
    cliutil.print_summary({"samples": count, "out": out})
    return cliutil.EXIT_OK


def main(argv: Optional[List[str]] = None) -> None:
    cliutil.main_wrapper(handle_parameters, execute, argv)


if __name__ == "__main__":
    main()
