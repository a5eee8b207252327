import numpy as np
import pytest

from ncedfpy import cedf, kinematics, neural
from ncedfpy.cedf import QueryDiagnostics, RobotCedf
from ncedfpy.common import ConfigError
from ncedfpy.kinematics import LinkConfig, LinkGeometry, RobotConfig
from ncedfpy.test.utils import random_configs, random_params


def distance_params():
    """A tiny network whose output is p_z: enough to check the frame handling."""
    W = np.zeros((1, 6))
    W[0, 2] = 1.0
    return neural.MlpParams([6, 1], [W], [np.zeros(1)])


def straight(M):
    return RobotConfig(tuple(LinkConfig(0.0, 0.0) for _ in range(M)))


def test_box_distances():
    box = (np.zeros(3), np.ones(3))
    points = np.array([[0.5, 0.5, 0.5], [2.0, 0.5, 0.5], [2.0, 2.0, 0.5], [-1.0, 0.5, 0.5]])
    np.testing.assert_allclose(cedf.box_distances(points, box), [0.0, 1.0, np.sqrt(2.0), 1.0])


def test_link_distance_world_uses_link_frame(two_links):
    robot = RobotCedf([distance_params(), distance_params()], two_links)
    q = straight(2)
    fk = kinematics.forward_kinematics(q, two_links)
    # p_z in the frame of link 2 is the world z minus 2
    assert robot.link_distance_world(1, (0.3, 0.0, 3.0), q, fk) == pytest.approx(3.0)
    assert robot.link_distance_world(2, (0.3, 0.0, 3.0), q, fk) == pytest.approx(1.0)
    assert robot.robot_distance((0.3, 0.0, 3.0), q, fk) == pytest.approx(1.0)


def test_link_distance_world_index(geom):
    robot = RobotCedf([distance_params()], [geom])
    q = straight(1)
    fk = kinematics.forward_kinematics(q, [geom])
    for i in (0, 2):
        with pytest.raises(IndexError):
            robot.link_distance_world(i, (0, 0, 0), q, fk)


def test_robot_distance_single_link_equals_link(geom):
    params = random_params(2, 8, seed=1)
    robot = RobotCedf([params], [geom])
    q = RobotConfig((LinkConfig(0.7, 0.3),))
    fk = kinematics.forward_kinematics(q, [geom])
    p = (0.4, -0.2, 1.1)
    expected = neural.mlp_forward(params, neural.encode_input(p, q.links[0]))
    assert robot.link_distance_world(1, p, q, fk) == pytest.approx(expected, abs=1e-12)
    assert robot.robot_distance(p, q, fk) == robot.link_distance_world(1, p, q, fk)


def test_robot_distance_is_min(two_links):
    robot = RobotCedf([random_params(2, 8, seed=2), random_params(2, 8, seed=3)], two_links)
    configs = random_configs(2, seed=4)
    q = RobotConfig(tuple(configs))
    fk = kinematics.forward_kinematics(q, two_links)
    points = np.random.default_rng(0).uniform(-2, 2, size=(30, 3))
    values = robot.robot_distances(points, q, fk)
    links = np.stack([robot.link_distances_world(i, points, q, fk) for i in (1, 2)])
    np.testing.assert_array_equal(values, links.min(axis=0))


def test_frame_invariance(geom):
    # moving the robot base and the point together leaves the value unchanged
    params = random_params(2, 8, seed=5)
    robot = RobotCedf([params], [geom])
    q = RobotConfig((LinkConfig(1.1, -0.4),))
    p = np.array([0.5, 0.3, 1.2])
    base = kinematics.link_transform(LinkConfig(0.9, 2.0), 3.0)
    moved = base[:3, :3] @ p + base[:3, 3]
    value = robot.link_distance_world(1, p, q, [np.eye(4)])
    assert robot.link_distance_world(1, moved, q, [base]) == pytest.approx(value, abs=1e-12)


def test_cloud_min_distance(two_links):
    robot = RobotCedf([distance_params(), distance_params()], two_links)
    cloud = np.array([[0.0, 0.0, 3.5], [0.0, 0.0, 2.5], [1.0, 1.0, 2.5]])
    distance, index = robot.cloud_min_distance(cloud, straight(2))
    assert distance == pytest.approx(0.5)
    assert index == 1


def test_cloud_min_distance_single_point(two_links):
    robot = RobotCedf([random_params(1, 4, seed=1)] * 2, two_links)
    q = RobotConfig(tuple(random_configs(2, seed=6)))
    fk = kinematics.forward_kinematics(q, two_links)
    distance, index = robot.cloud_min_distance(np.array([[0.2, 0.1, 2.0]]), q)
    assert index == 0
    assert distance == robot.robot_distance((0.2, 0.1, 2.0), q, fk)


def test_cloud_min_distance_first_duplicate(two_links):
    robot = RobotCedf([random_params(1, 4, seed=1)] * 2, two_links)
    q = straight(2)
    cloud = np.random.default_rng(1).uniform(-2, 2, size=(5, 3))
    _, best = robot.cloud_min_distance(cloud, q)
    doubled = np.concatenate([cloud, cloud])
    distance, index = robot.cloud_min_distance(doubled, q)
    assert index == best
    assert distance == robot.cloud_min_distance(cloud, q)[0]


def test_cloud_min_distance_matches_loop(two_links):
    robot = RobotCedf([random_params(2, 8, seed=7)] * 2, two_links)
    q = RobotConfig(tuple(random_configs(2, seed=8)))
    fk = kinematics.forward_kinematics(q, two_links)
    cloud = np.random.default_rng(2).uniform(-3, 3, size=(40, 3))
    distance, index = robot.cloud_min_distance(cloud, q)
    loop = [robot.robot_distance(p, q, fk) for p in cloud]
    assert index == int(np.argmin(loop))
    assert distance == min(loop)
    np.testing.assert_array_equal(robot.robot_distances(cloud, q, fk), loop)


@pytest.mark.parametrize("seed", range(5))
def test_cloud_min_distance_matches_loop_bitwise(two_links, seed):
    robot = RobotCedf([random_params(3, 16, seed=seed), random_params(2, 12, seed=seed + 10)], two_links)
    q = RobotConfig(tuple(random_configs(2, seed=seed)))
    fk = kinematics.forward_kinematics(q, two_links)
    cloud = np.random.default_rng(seed).uniform(-3, 3, size=(100, 3))
    distance, index = robot.cloud_min_distance(cloud, q)
    loop = np.array([robot.robot_distance(p, q, fk) for p in cloud])
    assert distance == loop.min()
    assert index == int(np.argmin(loop))


def test_cloud_min_distance_single_fk(two_links, mocker):
    robot = RobotCedf([random_params(1, 4)] * 2, two_links)
    spy = mocker.spy(kinematics, "forward_kinematics")
    robot.cloud_min_distance(np.random.default_rng(3).uniform(-2, 2, size=(25, 3)), straight(2))
    assert spy.call_count == 1


def test_cloud_min_distance_empty(geom):
    robot = RobotCedf([random_params(1, 4)], [geom])
    with pytest.raises(ValueError):
        robot.cloud_min_distance(np.zeros((0, 3)), straight(1))


def test_min_distances_matches_cloud_min(two_links):
    robot = RobotCedf([random_params(2, 8, seed=9), random_params(2, 8, seed=10)], two_links)
    configs = random_configs(6, seed=11)
    thetas = np.array([[c.theta for c in configs[k:k + 2]] for k in (0, 2, 4)])
    phis = np.array([[c.phi for c in configs[k:k + 2]] for k in (0, 2, 4)])
    poses = kinematics.batch_forward_kinematics(thetas, phis, two_links)
    cloud = np.random.default_rng(4).uniform(-3, 3, size=(15, 3))
    batch = robot.min_distances(poses, thetas, phis, cloud)
    for b in range(3):
        q = RobotConfig.from_arrays(thetas[b], phis[b])
        assert batch[b] == pytest.approx(robot.cloud_min_distance(cloud, q)[0], abs=1e-12)


def test_flooring_outside_box(geom, caplog):
    # a network that claims zero distance everywhere
    zero = neural.MlpParams([6, 1], [np.zeros((1, 6))], [np.zeros(1)])
    box = (np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 3.0]))
    robot = RobotCedf([zero], [geom], [box])
    cloud = np.array([[0.0, 0.0, 5.0], [4.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    distance, index, diagnostics = robot.cloud_min_distance_with_diagnostics(cloud, straight(1))
    assert distance == 0.0 and index == 2
    assert diagnostics.floored == 2
    assert diagnostics.queries == 3
    assert "floored" in caplog.text
    fk = kinematics.forward_kinematics(straight(1), [geom])
    assert robot.robot_distance((0.0, 0.0, 5.0), straight(1), fk) == pytest.approx(2.0)


def test_flooring_keeps_larger_network_values(geom):
    far = neural.MlpParams([6, 1], [np.zeros((1, 6))], [np.array([10.0])])
    box = (np.zeros(3), np.ones(3))
    diagnostics = QueryDiagnostics()
    robot = RobotCedf([far], [geom], [box])
    values = robot.link_distances_world(
        1, np.array([[5.0, 0.0, 0.0]]), straight(1), [np.eye(4)], diagnostics
    )
    assert values[0] == 10.0
    assert diagnostics.floored == 0


def test_from_models_shared_and_per_link(two_links):
    model = neural.LinkModel(random_params(1, 4), LinkGeometry())
    assert RobotCedf.from_models([model], two_links).M == 2
    assert RobotCedf.from_models([model, model], two_links).M == 2
    with pytest.raises(ConfigError):
        RobotCedf.from_models([model, model, model], two_links)


def test_from_models_audit_slack(two_links):
    spec = {"n_configs": 1, "n_workspace": 1, "n_surface": 1600}

    def model(moe):
        return neural.LinkModel(random_params(1, 4), LinkGeometry(), {"dataset": spec, "final": {"val_moe": moe}})

    first, second = model(0.01), model(0.03)
    assert RobotCedf.from_models([first, second], two_links).audit_slack == second.audit_slack
    bare = neural.LinkModel(random_params(1, 4), LinkGeometry())
    assert RobotCedf.from_models([first, bare], two_links).audit_slack is None
    assert RobotCedf([random_params(1, 4)], [LinkGeometry()]).audit_slack is None


def test_from_models_geometry_mismatch(two_links):
    other = LinkGeometry(L=2.0, r=0.25, l_min=1.6, l_max=2.4)
    model = neural.LinkModel(random_params(1, 4), other)
    with pytest.raises(ConfigError):
        RobotCedf.from_models([model], two_links)


def test_load_robot_cedf(tmp_path, two_links):
    path = str(tmp_path / "link.json")
    meta = {"dataset": {"box_min": [-2.4, -2.4, -0.4], "box_max": [2.4, 2.4, 2.8]}}
    neural.save_model(path, random_params(1, 4), LinkGeometry(), meta)
    robot = cedf.load_robot_cedf([path], two_links, dtype=np.float32)
    assert robot.M == 2
    assert robot.link_params[0].dtype == np.float32
    np.testing.assert_array_equal(robot.boxes[1][1], [2.4, 2.4, 2.8])
