import math
import os

import numpy as np
import pytest

from ncedfpy import datagen, kinematics, streams
from ncedfpy.cli_cedf.cliutil import CONFIG_DIR
from ncedfpy.common import ConfigError
from ncedfpy.kinematics import LinkConfig, LinkGeometry
from ncedfpy.test.utils import STRAIGHT, random_configs


class MidpointRng:
    """Stands in for a generator that always returns the middle of the range."""

    def uniform(self, low, high, size=None):
        return np.full(size, 0.5 * (low + high))


def test_sample_configurations_midpoint(geom):
    configs = datagen.sample_configurations(geom, 1, MidpointRng())
    assert configs == [LinkConfig(0.0, 0.0)]


def test_sample_configurations_valid(geom):
    configs = datagen.sample_configurations(geom, 300, streams.stream(0, streams.DATASET, 0))
    assert len(configs) == 300
    for cfg in configs:
        lengths = kinematics.config_to_arc_lengths(cfg, geom)
        assert lengths.mean() == pytest.approx(geom.L, abs=1e-9)
        assert np.all(lengths >= geom.l_min - 1e-9)
        assert np.all(lengths <= geom.l_max + 1e-9)


def test_sample_configurations_deterministic(geom):
    a = datagen.sample_configurations(geom, 20, streams.stream(4, streams.DATASET, 0))
    b = datagen.sample_configurations(geom, 20, streams.stream(4, streams.DATASET, 0))
    assert a == b


def test_sample_configurations_invalid(geom):
    with pytest.raises(ValueError):
        datagen.sample_configurations(geom, 0, streams.stream(0, 1))


def test_sample_workspace_points_grid():
    spec = datagen.DatasetSpec(n_workspace=8, box_min=(0, 0, 0), box_max=(1, 1, 1))
    points = datagen.sample_workspace_points(spec)
    expected = {(x, y, z) for x in (0.25, 0.75) for y in (0.25, 0.75) for z in (0.25, 0.75)}
    assert {tuple(p) for p in points} == expected


def test_sample_workspace_points_random():
    spec = datagen.DatasetSpec(n_workspace=10, box_min=(0, 0, 0), box_max=(1, 2, 3), seed=3)
    points = datagen.sample_workspace_points(spec)
    assert points.shape == (10, 3)
    assert np.all(points >= 0) and np.all(points <= [1, 2, 3])
    np.testing.assert_array_equal(points, datagen.sample_workspace_points(spec))
    assert not np.array_equal(points, datagen.sample_workspace_points(spec, streams.VALIDATION))


@pytest.mark.parametrize(
    "values",
    [
        {"n_configs": 0, "n_workspace": 8, "n_surface": 10},
        {"n_configs": 1, "n_workspace": 8, "n_surface": 10, "box_min": [0, 0, 0], "box_max": [1, 0, 1]},
        {"n_configs": 1, "n_workspace": 8, "n_surface": 10, "seed": -1},
        {"n_configs": 1, "n_workspace": 8},
    ],
)
def test_dataset_spec_invalid(values):
    with pytest.raises(ConfigError):
        datagen.DatasetSpec.from_dict(values)


def test_dataset_spec_validation():
    spec = datagen.DatasetSpec(n_configs=7, n_workspace=27, n_surface=100, seed=2)
    validation = spec.validation()
    assert validation.n_configs == datagen.VALIDATION_CONFIGS
    assert validation.n_workspace == 16 ** 3
    assert validation.box_min == spec.box_min


def test_brute_force_distance_on_surface(geom):
    cfg = LinkConfig(0.9, 1.1)
    surface = kinematics.surface_points(cfg, geom, 20, 20).points
    assert datagen.brute_force_distance(surface[37], cfg, geom, 20, 20) == 0.0


@pytest.mark.parametrize("point, expected", [((1.0, 0.0, 1.0), 0.8), ((0.0, 0.0, 3.0), 1.0)])
def test_brute_force_distance_straight(geom, point, expected):
    n = datagen.DEFAULT_N_AXIAL
    bound = math.hypot(geom.L / (n - 1), 2 * math.pi * geom.r / datagen.DEFAULT_N_CIRC)
    assert datagen.brute_force_distance(point, STRAIGHT, geom) == pytest.approx(expected, abs=bound)


@pytest.mark.parametrize(
    "point, expected",
    [
        ((1.0, 0.0, 1.0), 0.8),
        ((0.0, 0.0, 1.0), 0.2),
        ((0.0, 0.0, 3.0), 1.0),
        ((0.1, 0.0, -0.5), 0.5),
        ((0.5, 0.0, 2.4), 0.5),
    ],
)
def test_analytic_link_distance_straight(geom, point, expected):
    assert datagen.analytic_link_distance(point, STRAIGHT, geom) == pytest.approx(expected, abs=1e-12)


def test_analytic_link_distance_torus(geom):
    # a point at the center of curvature sees the tube at distance rho - r
    cfg = LinkConfig(math.pi / 2, 0.0)
    rho = cfg.rho(geom.L)
    assert datagen.analytic_link_distance((rho, 0.0, 0.0), cfg, geom) == pytest.approx(rho - geom.r, abs=1e-9)


def test_analytic_agrees_with_brute_force(geom):
    rng = np.random.default_rng(2)
    for cfg in random_configs(4, seed=1):
        points = rng.uniform(datagen.DEFAULT_BOX_MIN, datagen.DEFAULT_BOX_MAX, size=(50, 3))
        surface = kinematics.surface_points(cfg, geom, 80, 80).points
        brute = datagen.nearest_surface_distances(points, surface)
        analytic = datagen.analytic_link_distances(points, cfg, geom)
        # sampling only ever overestimates, by less than the sample spacing
        assert np.all(analytic <= brute + 1e-9)
        assert np.all(brute - analytic < 0.04)
        assert np.all(brute - analytic <= 2 * datagen.sample_spacing_bound(geom, 80, 80))


@pytest.mark.slow
def test_brute_force_bounds_on_random_pairs(geom):
    rng = np.random.default_rng(5)
    configs = random_configs(1000, seed=5)
    points = rng.uniform(datagen.DEFAULT_BOX_MIN, datagen.DEFAULT_BOX_MAX, size=(1000, 3))
    spacing = datagen.sample_spacing_bound(geom, datagen.DEFAULT_N_AXIAL, datagen.DEFAULT_N_CIRC)
    for cfg, p in zip(configs, points):
        brute = datagen.brute_force_distance(p, cfg, geom)
        analytic = datagen.analytic_link_distance(p, cfg, geom)
        assert brute >= analytic - 1e-9
        assert brute - analytic <= 2 * spacing


def test_analytic_agrees_with_dense_mesh_at_right_angle(geom):
    cfg = LinkConfig(math.pi / 2, 0.3)
    points = np.random.default_rng(6).uniform(datagen.DEFAULT_BOX_MIN, datagen.DEFAULT_BOX_MAX, size=(100, 3))
    surface = kinematics.surface_points(cfg, geom, 200, 200).points
    brute = datagen.nearest_surface_distances(points, surface)
    analytic = datagen.analytic_link_distances(points, cfg, geom)
    # cap rings stay r/5 apart at any mesh size
    far = analytic >= 0.1
    assert np.count_nonzero(far) >= 90
    np.testing.assert_allclose(analytic[far], brute[far], atol=2e-3)


@pytest.mark.parametrize("n_axial, n_circ", [(40, 40), (10, 60), (80, 8)])
def test_sample_spacing_bound(geom, n_axial, n_circ):
    bound = datagen.sample_spacing_bound(geom, n_axial, n_circ)
    for cfg in random_configs(5, seed=3) + [LinkConfig(math.pi, 1.0)]:
        sample = kinematics.surface_points(cfg, geom, n_axial, n_circ)
        lateral = sample.points[:sample.n_lateral].reshape(n_axial, n_circ, 3)
        assert np.linalg.norm(np.diff(lateral, axis=0), axis=-1).max() <= bound + 1e-12
        assert np.linalg.norm(lateral - np.roll(lateral, 1, axis=1), axis=-1).max() <= bound + 1e-12


def test_label_error_bound(geom):
    spec = datagen.DatasetSpec(n_surface=1600)
    assert spec.surface_grid() == (40, 40)
    assert spec.label_error_bound(geom) == 2 * datagen.sample_spacing_bound(geom, 40, 40)


def test_nearest_surface_distances_chunks(mocker):
    mocker.patch("ncedfpy.datagen.CHUNK_PAIRS", 10)
    rng = np.random.default_rng(0)
    points, surface = rng.standard_normal((23, 3)), rng.standard_normal((7, 3))
    expected = np.linalg.norm(points[:, None] - surface[None], axis=-1).min(axis=1)
    np.testing.assert_allclose(datagen.nearest_surface_distances(points, surface), expected, atol=1e-12)


def test_generate_dataset_straight_point(geom, mocker):
    mocker.patch(
        "ncedfpy.datagen.sample_configurations", return_value=[STRAIGHT]
    )
    mocker.patch(
        "ncedfpy.datagen.sample_workspace_points", return_value=np.array([[1.0, 0.0, 1.0]])
    )
    spec = datagen.DatasetSpec(n_configs=1, n_workspace=1, n_surface=1600)
    dataset = datagen.generate_dataset(geom, spec, threads=1)
    assert len(dataset) == 1
    assert dataset.d[0] == pytest.approx(0.8, abs=0.02)
    assert dataset.meta["geometry"] == geom.to_dict()


def test_generate_dataset_thread_independent(geom):
    spec = datagen.DatasetSpec(n_configs=4, n_workspace=27, n_surface=100, seed=5)
    one = datagen.generate_dataset(geom, spec, threads=1)
    many = datagen.generate_dataset(geom, spec, threads=4)
    np.testing.assert_array_equal(one.d, many.d)
    np.testing.assert_array_equal(one.theta, many.theta)
    # config-major layout
    assert np.all(one.theta[:27] == one.theta[0])
    np.testing.assert_array_equal(one.points[:27], one.points[27:54])


def test_generate_dataset_box_too_small(geom):
    spec = datagen.DatasetSpec(
        n_configs=1, n_workspace=8, n_surface=100, box_min=(-1, -1, 0), box_max=(1, 1, 1)
    )
    with pytest.raises(ConfigError):
        datagen.generate_dataset(geom, spec, threads=1)


@pytest.mark.parametrize(
    "predictions, targets, expected",
    [
        ((1.0, 2.0), (1.0, 2.0), (0.0, 0.0, 0.0)),
        ((1.1, 0.9), (1.0, 1.0), (0.1, 0.1, 0.05)),
        ((0.5, 0.9), (1.0, 1.0), (0.3, math.sqrt(0.13), 0.0)),
    ],
)
def test_compute_error_metrics(predictions, targets, expected):
    metrics = datagen.compute_error_metrics(predictions, targets)
    assert tuple(metrics) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("predictions, targets", [((), ()), ((1.0,), (1.0, 2.0))])
def test_compute_error_metrics_invalid(predictions, targets):
    with pytest.raises(ValueError):
        datagen.compute_error_metrics(predictions, targets)


def test_dataset_file(tmp_path, small_dataset):
    path = str(tmp_path / "data.jsonl")
    assert datagen.write_dataset(path, small_dataset) == len(small_dataset)
    read = datagen.read_dataset(path)
    np.testing.assert_array_equal(read.points, small_dataset.points)
    np.testing.assert_array_equal(read.d, small_dataset.d)
    assert read.meta["geometry"] == small_dataset.meta["geometry"]


def test_read_dataset_wrong_format(tmp_path):
    path = tmp_path / "other.jsonl"
    path.write_text('{"format": "something-else"}\n')
    with pytest.raises(ConfigError):
        datagen.read_dataset(str(path))


def test_load_dataset_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text('{"geometry": {"L": 2, "r": 0.2, "l_min": 1.6, "l_max": 2.4}, '
                    '"dataset": {"n_configs": 3, "n_workspace": 8, "n_surface": 100}}')
    geom, spec = datagen.load_dataset_config(str(path))
    assert geom == LinkGeometry()
    assert spec.n_configs == 3
    (tmp_path / "broken.json").write_text('{"dataset": {}}')
    with pytest.raises(ConfigError):
        datagen.load_dataset_config(str(tmp_path / "broken.json"))


@pytest.mark.parametrize(
    "name, expected",
    [
        ("desk_dataset.json", datagen.DatasetSpec(n_configs=100, n_workspace=16 ** 3, n_surface=800)),
        ("full_dataset.json", datagen.DatasetSpec()),
    ],
)
def test_shipped_dataset_configs(name, expected):
    geom, spec = datagen.load_dataset_config(os.path.join(CONFIG_DIR, name))
    assert geom == LinkGeometry()
    assert spec == expected
