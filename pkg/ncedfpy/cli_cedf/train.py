#!/usr/bin/python3

import argparse
import os
from typing import Any, Dict, List, Optional, Tuple

from ncedfpy import datagen, fileutil, neural
from ncedfpy.cli_cedf import cliutil
from ncedfpy.common import ConfigError
from ncedfpy.kinematics import LinkGeometry

HISTORY_COLUMNS = ["epoch", "train_loss", "val_mae", "val_rmse", "val_moe"]


def add_training_arguments(parser: argparse.ArgumentParser) -> None:
    defaults = neural.TrainConfig()
    parser.add_argument("--data", required=True, help="Training dataset (JSON lines)")
    parser.add_argument("--val", required=True, help="Validation dataset (JSON lines)")
    parser.add_argument(
        "--epochs", type=cliutil.positive_int, default=defaults.epochs, help="Default: %(default)s"
    )
    parser.add_argument(
        "--batch-size", type=cliutil.positive_int, default=defaults.batch_size, help="Default: %(default)s"
    )
    parser.add_argument(
        "--learning-rate", type=float, default=defaults.learning_rate, help="Adam step size. Default: %(default)s"
    )
    parser.add_argument(
        "--lambda-e", type=float, default=defaults.lambda_E, help="Eikonal loss weight. Default: %(default)s"
    )
    parser.add_argument(
        "--lambda-o",
        type=float,
        default=defaults.lambda_O,
        help="Over-estimation loss weight. Default: %(default)s",
    )
    parser.add_argument(
        "--no-overestimation",
        action="store_true",
        help="Drop the over-estimation penalty (same as --lambda-o 0)",
    )
    parser.add_argument("--seed", type=int, default=defaults.seed, help="Default: %(default)s")


def train_config(options: argparse.Namespace) -> neural.TrainConfig:
    return neural.TrainConfig(
        learning_rate=options.learning_rate,
        batch_size=options.batch_size,
        epochs=options.epochs,
        lambda_E=options.lambda_e,
        lambda_O=0.0 if options.no_overestimation else options.lambda_o,
        seed=options.seed,
    )


def load_datasets(data_path: str, val_path: str) -> Tuple[datagen.Dataset, datagen.Dataset, LinkGeometry]:
    """Both datasets, and the link geometry they were generated for."""
    dataset = datagen.read_dataset(data_path)
    validation = datagen.read_dataset(val_path)
    geometry = LinkGeometry.from_dict(dataset.meta["geometry"])
    if LinkGeometry.from_dict(validation.meta["geometry"]) != geometry:
        raise ConfigError("'{}' and '{}' were generated for different links".format(data_path, val_path))
    return dataset, validation, geometry


def training_meta(
    dataset: datagen.Dataset, cfg: neural.TrainConfig, history: List[neural.EpochRecord], data_path: str
) -> Dict[str, Any]:
    final = history[-1]
    return {
        "train_config": cfg.to_dict(),
        "dataset": dataset.meta.get("spec", {}),
        "data_checksum": fileutil.checksum(data_path),
        "final": {"val_mae": final.val_mae, "val_rmse": final.val_rmse, "val_moe": final.val_moe},
    }


def history_path(model_path: str) -> str:
    return os.path.splitext(model_path)[0] + ".history.csv"


def handle_parameters(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description="Trains the distance network of one link and writes it as a model file"
    )
    add_training_arguments(parser)
    parser.add_argument(
        "--net",
        type=neural.parse_net_shape,
        default=(4, 16),
        help='Hidden layers and width as "layers,width". Default: 4,16',
    )
    parser.add_argument("--out", required=True, help="Output model file (JSON)")
    parser.add_argument(
        "--history", help="Per-epoch CSV of loss and validation metrics. Default: <out>.history.csv"
    )
    cliutil.add_common_arguments(parser)
    return parser.parse_args(argv)


def execute(options: argparse.Namespace) -> int:
    dataset, validation, geometry = load_datasets(options.data, options.val)
    cfg = train_config(options)
    layers, width = options.net
    params, history = neural.train(dataset, validation, neural.network_shape(layers, width), cfg)

    out = fileutil.resolve_output_path(options.out)
    history_out = fileutil.resolve_output_path(options.history) if options.history else history_path(out)
    neural.save_model(out, params, geometry, training_meta(dataset, cfg, history, options.data))
    fileutil.write_csv(history_out, HISTORY_COLUMNS, history)
    cliutil.write_manifest(
        "cedf-train",
        {"net": [layers, width], "train": cfg.to_dict(), "data": options.data, "val": options.val},
        {"training": cfg.seed},
        {"model": out, "history": history_out},
    )
    final = history[-1]
    cliutil.print_summary(
        {"mae": final.val_mae, "rmse": final.val_rmse, "moe": final.val_moe, "out": out}
    )
    return cliutil.EXIT_OK


def main(argv: Optional[List[str]] = None) -> None:
    cliutil.main_wrapper(handle_parameters, execute, argv)


if __name__ == "__main__":
    main()
