"""Utils for testing ncedfpy."""

import numpy as np

from ncedfpy import datagen, neural, streams
from ncedfpy.kinematics import LinkConfig, LinkGeometry


def central_difference(f, x, h=1e-5):
    """Central finite-difference gradient of the scalar function f at x."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step.flat[i] = h
        grad.flat[i] = (f(x + step) - f(x - step)) / (2.0 * h)
    return grad


def random_configs(n, seed=0, geom=None):
    """n valid link configurations drawn the same way the dataset draws them."""
    geom = geom or LinkGeometry()
    return datagen.sample_configurations(geom, n, streams.stream(seed, 99))


def random_params(layers, width, seed=0, scale=1.0):
    params = neural.init_params(neural.network_shape(layers, width), streams.stream(seed, 98))
    if scale != 1.0:
        params = neural.MlpParams.from_arrays(params.layer_dims, [a * scale for a in params.arrays()])
    return params


def constant_params(value, layers=1, width=4):
    """A network with zero weights whose output is `value` everywhere."""
    dims = neural.network_shape(layers, width)
    weights = [np.zeros((o, i)) for i, o in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(o) for o in dims[1:]]
    biases[-1][0] = value
    return neural.MlpParams(dims, weights, biases)


def tiny_dataset(n_configs=2, n_points=8, seed=0):
    """A small dataset with exact analytic distances, for fast training tests."""
    geom = LinkGeometry()
    configs = random_configs(n_configs, seed, geom)
    rng = streams.stream(seed, 97)
    samples = []
    for cfg in configs:
        points = rng.uniform(datagen.DEFAULT_BOX_MIN, datagen.DEFAULT_BOX_MAX, size=(n_points, 3))
        for p, d in zip(points, datagen.analytic_link_distances(points, cfg, geom)):
            samples.append(datagen.TrainingSample(cfg.theta, cfg.phi, tuple(p), float(d)))
    dataset = datagen.Dataset.from_samples(samples)
    dataset.meta = {
        "geometry": geom.to_dict(),
        "spec": datagen.DatasetSpec(n_configs=n_configs, n_workspace=n_points, n_surface=100).to_dict(),
    }
    return dataset


STRAIGHT = LinkConfig(0.0, 0.0)
