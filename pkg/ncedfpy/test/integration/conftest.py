import os

import pytest

from ncedfpy import datagen, neural, streams
from ncedfpy.cli_cedf.cliutil import CONFIG_DIR

DESK_GEOMETRY, DESK_SPEC = datagen.load_dataset_config(os.path.join(CONFIG_DIR, "desk_dataset.json"))
DESK_NET = (4, 16)
DESK_EPOCHS = 60


@pytest.fixture(scope="session")
def desk_datasets():
    dataset = datagen.generate_dataset(DESK_GEOMETRY, DESK_SPEC)
    validation = datagen.generate_dataset(DESK_GEOMETRY, DESK_SPEC.validation(), tag=streams.VALIDATION)
    return dataset, validation


def train_desk(datasets, lambda_O):
    dataset, validation = datasets
    cfg = neural.TrainConfig(epochs=DESK_EPOCHS, lambda_O=lambda_O)
    return neural.train(dataset, validation, neural.network_shape(*DESK_NET), cfg)


@pytest.fixture(scope="session")
def desk_model(desk_datasets):
    """The 4x16 network trained with the default loss weights."""
    return train_desk(desk_datasets, neural.TrainConfig().lambda_O)


@pytest.fixture(scope="session")
def desk_model_without_overestimation(desk_datasets):
    return train_desk(desk_datasets, 0.0)


@pytest.fixture(scope="session")
def desk_link_model(desk_model):
    """desk_model with the metadata the train command stores next to it."""
    params, history = desk_model
    final = history[-1]
    meta = {
        "dataset": DESK_SPEC.to_dict(),
        "final": {"val_mae": final.val_mae, "val_rmse": final.val_rmse, "val_moe": final.val_moe},
    }
    return neural.LinkModel(params, DESK_GEOMETRY, meta)
