"""
Dynamic sphere environments and closed-loop navigation episodes.

The planner only ever sees a point cloud sampled on the obstacle surfaces; the
ground-truth clearance computed here from the exact sphere geometry is used to
classify episodes and is never passed to the controller.
"""
import hashlib
import math
import time
from dataclasses import dataclass, field, replace
from multiprocessing.pool import ThreadPool
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ncedfpy import datagen, fileutil, streams
from ncedfpy.cedf import CollisionBackend, QueryDiagnostics, RobotCedf
from ncedfpy.common import CedfError, ConfigError, logger, prefix_logger
from ncedfpy.kinematics import (
    LinkGeometry,
    RobotConfig,
    backbone_frames,
    batch_forward_kinematics,
    check_arc_lengths,
    forward_kinematics,
    initial_arc_lengths,
    robot_angles,
    step_dynamics,
    surface_points_batch,
)
from ncedfpy.mppi import MppiConfig, MppiController

GT_BACKBONE_POINTS = 200
SPHERE_INFLATION = 1.2
DEFAULT_SPHERES_PER_LINK = 5
MAX_SPAWN_ATTEMPTS = 1000
# configurations per batch in the shape baselines
BASELINE_CHUNK = 4
OUTCOMES = ("success", "collision", "stuck")


@dataclass(frozen=True)
class SphereObstacle:
    center: Tuple[float, float, float]
    radius: float
    velocity: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))
        if self.radius <= 0:
            raise ValueError("Obstacle radius must be positive, got {}".format(self.radius))

    @property
    def speed(self) -> float:
        return math.sqrt(sum(v * v for v in self.velocity))

    def to_dict(self) -> Dict[str, Any]:
        return {"center": list(self.center), "radius": self.radius, "velocity": list(self.velocity)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SphereObstacle":
        return cls(tuple(data["center"]), float(data["radius"]), tuple(data.get("velocity", (0, 0, 0))))


@dataclass(frozen=True)
class Environment:
    obstacles: Tuple[SphereObstacle, ...]
    bounds_min: Tuple[float, float, float]
    bounds_max: Tuple[float, float, float]
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        lo, hi = np.array(self.bounds_min), np.array(self.bounds_max)
        for obstacle in self.obstacles:
            c = np.array(obstacle.center)
            if np.any(c < lo) or np.any(c > hi):
                raise ValueError("Obstacle center {} outside the workspace".format(obstacle.center))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "obstacles": [o.to_dict() for o in self.obstacles],
            "bounds_min": list(self.bounds_min),
            "bounds_max": list(self.bounds_max),
            "time": self.time,
        }

    def digest(self) -> str:
        return hashlib.sha256(fileutil.dumps(self.to_dict()).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class EnvironmentSpec:
    n_dynamic: int = 8
    n_static: int = 0
    radius_min: float = 0.3
    radius_max: float = 0.6
    max_speed: float = math.sqrt(3.0)
    bounds_min: Tuple[float, float, float] = (-5.0, -5.0, 0.0)
    bounds_max: Tuple[float, float, float] = (5.0, 5.0, 6.0)
    spawn_margin: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "bounds_min", tuple(float(v) for v in self.bounds_min))
        object.__setattr__(self, "bounds_max", tuple(float(v) for v in self.bounds_max))
        if self.n_dynamic < 0 or self.n_static < 0:
            raise ConfigError("Obstacle counts must be non-negative")
        if not 0 < self.radius_min <= self.radius_max:
            raise ConfigError("Need 0 < radius_min <= radius_max")
        if self.max_speed < 0 or self.spawn_margin < 0:
            raise ConfigError("max_speed and spawn_margin must be non-negative")
        if any(hi - lo <= 2 * self.radius_max for lo, hi in zip(self.bounds_min, self.bounds_max)):
            raise ConfigError("Workspace bounds too small for the obstacle radii")
        if self.n_dynamic + self.n_static < 1:
            raise ConfigError("An environment needs at least one obstacle")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_dynamic": self.n_dynamic,
            "n_static": self.n_static,
            "radius_min": self.radius_min,
            "radius_max": self.radius_max,
            "max_speed": self.max_speed,
            "bounds_min": list(self.bounds_min),
            "bounds_max": list(self.bounds_max),
            "spawn_margin": self.spawn_margin,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EnvironmentSpec":
        defaults = cls()
        try:
            return cls(
                n_dynamic=int(data.get("n_dynamic", defaults.n_dynamic)),
                n_static=int(data.get("n_static", defaults.n_static)),
                radius_min=float(data.get("radius_min", defaults.radius_min)),
                radius_max=float(data.get("radius_max", defaults.radius_max)),
                max_speed=float(data.get("max_speed", defaults.max_speed)),
                bounds_min=tuple(data.get("bounds_min", defaults.bounds_min)),
                bounds_max=tuple(data.get("bounds_max", defaults.bounds_max)),
                spawn_margin=float(data.get("spawn_margin", defaults.spawn_margin)),
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError("Invalid environment spec {!r}: {}".format(data, e)) from None


@dataclass(frozen=True)
class RobotSpec:
    geometries: Tuple[LinkGeometry, ...]
    initial_arc_lengths: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "geometries", tuple(self.geometries))
        if not self.geometries:
            raise ConfigError("A robot needs at least one link")
        if not self.initial_arc_lengths:
            x0 = initial_arc_lengths(self.geometries)
        else:
            x0 = np.array(self.initial_arc_lengths, dtype=float)
        try:
            check_arc_lengths(x0, self.geometries)
        except ValueError as e:
            raise ConfigError("Invalid initial arc lengths: {}".format(e)) from None
        object.__setattr__(self, "initial_arc_lengths", tuple(float(v) for v in x0))

    @property
    def M(self) -> int:
        return len(self.geometries)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "geometries": [g.to_dict() for g in self.geometries],
            "initial_arc_lengths": list(self.initial_arc_lengths),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RobotSpec":
        """Either {"geometries": [...]} or {"n_links": M, "geometry": {...}}."""
        try:
            if "geometries" in data:
                geometries = tuple(LinkGeometry.from_dict(g) for g in data["geometries"])
            else:
                geometries = (LinkGeometry.from_dict(data["geometry"]),) * int(data["n_links"])
            return cls(geometries, tuple(data.get("initial_arc_lengths", ())))
        except (KeyError, TypeError) as e:
            raise ConfigError("Invalid robot spec {!r}: {}".format(data, e)) from None


@dataclass(frozen=True)
class Scenario:
    robot: RobotSpec
    environment: EnvironmentSpec
    goal: Optional[Tuple[float, ...]] = None
    mppi: MppiConfig = field(default_factory=MppiConfig)
    t_max: int = 300
    cloud_points: int = 500
    seed: int = 0
    success_threshold: float = 0.3

    def __post_init__(self):
        if self.goal is not None:
            object.__setattr__(self, "goal", tuple(float(v) for v in self.goal))
            if len(self.goal) != 16:
                raise ConfigError("The goal pose needs 16 row-major entries")
        if self.t_max < 0 or self.cloud_points < 1 or self.seed < 0:
            raise ConfigError("Need t_max >= 0, cloud_points >= 1 and seed >= 0")
        if self.success_threshold <= 0:
            raise ConfigError("success_threshold must be positive")

    def goal_pose(self) -> np.ndarray:
        """The fixed goal, or the end-effector pose of a configuration drawn for this seed."""
        if self.goal is not None:
            return np.array(self.goal).reshape(4, 4)
        rng = streams.stream(self.seed, streams.GOAL, 0)
        links = [datagen.sample_configurations(g, 1, rng)[0] for g in self.robot.geometries]
        return forward_kinematics(RobotConfig(links), self.robot.geometries)[-1]

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "robot": self.robot.to_dict(),
            "environment": self.environment.to_dict(),
            "goal": {"pose": list(self.goal)} if self.goal is not None else {"random": True},
            "mppi": self.mppi.to_dict(),
            "t_max": self.t_max,
            "cloud_points": self.cloud_points,
            "seed": self.seed,
            "success_threshold": self.success_threshold,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Scenario":
        try:
            goal = data.get("goal", {"random": True})
            return cls(
                robot=RobotSpec.from_dict(data["robot"]),
                environment=EnvironmentSpec.from_dict(data.get("environment", {})),
                goal=tuple(goal["pose"]) if "pose" in goal else None,
                mppi=MppiConfig.from_dict(data.get("mppi", {})),
                t_max=int(data.get("t_max", 300)),
                cloud_points=int(data.get("cloud_points", 500)),
                seed=int(data.get("seed", 0)),
                success_threshold=float(data.get("success_threshold", 0.3)),
            )
        except (KeyError, TypeError, AttributeError) as e:
            raise ConfigError("Invalid scenario: {}".format(e)) from None


def load_scenario(path: str) -> Scenario:
    return Scenario.from_dict(fileutil.read_json(path))


class StepRecord(NamedTuple):
    step: int
    x: List[float]
    q: List[float]
    ee_pose: List[float]
    min_cedf: float
    gt_clearance: float
    ee_goal_dist: float
    cost_goal: Optional[float] = None
    cost_coll: Optional[float] = None
    cost_state: Optional[float] = None
    solve_ms: Optional[float] = None
    planned_ee: Optional[List[List[float]]] = None
    gt_cloud_min: Optional[float] = None

    def to_dict(self, omit_timing: bool = False) -> Dict[str, Any]:
        row = self._asdict()
        del row["ee_goal_dist"]
        if row["gt_cloud_min"] is None:
            del row["gt_cloud_min"]
        if omit_timing and row["solve_ms"] is not None:
            row["solve_ms"] = 0.0
        return row


@dataclass
class EpisodeResult:
    outcome: str
    steps: int
    records: List[StepRecord]
    env_hash: str
    query: QueryDiagnostics = field(default_factory=QueryDiagnostics)

    @property
    def solve_times(self) -> List[float]:
        return [r.solve_ms for r in self.records if r.solve_ms is not None]

    @property
    def mean_solve_ms(self) -> float:
        times = self.solve_times
        return float(np.mean(times)) if times else 0.0


def create_environment(
    spec: EnvironmentSpec, robot: RobotSpec, seed: int
) -> Environment:
    """
    Random obstacles for `seed`: centers uniform inside the bounds (kept a radius
    away from the walls), radii uniform, velocities uniform in the cube of
    half-side max_speed/sqrt(3). Obstacles overlapping the initial robot plus
    spawn_margin are drawn again.
    """
    rng = streams.stream(seed, streams.ENVIRONMENT, 0)
    lo, hi = np.array(spec.bounds_min), np.array(spec.bounds_max)
    x0 = np.array(robot.initial_arc_lengths)
    q0 = RobotConfig.from_arrays(*robot_angles(x0, robot.geometries))
    obstacles: List[SphereObstacle] = []
    for k in range(spec.n_dynamic + spec.n_static):
        for _ in range(MAX_SPAWN_ATTEMPTS):
            radius = float(rng.uniform(spec.radius_min, spec.radius_max))
            center = rng.uniform(lo + radius, hi - radius)
            velocity = rng.uniform(-1.0, 1.0, size=3) * spec.max_speed / math.sqrt(3.0)
            if k >= spec.n_dynamic:
                velocity = np.zeros(3)
            candidate = SphereObstacle(tuple(center), radius, tuple(velocity))
            single = Environment((candidate,), spec.bounds_min, spec.bounds_max)
            if ground_truth_robot_distance(q0, robot.geometries, single) >= spec.spawn_margin:
                obstacles.append(candidate)
                break
        else:
            raise ConfigError(
                "Could not place obstacle {} clear of the robot in {} attempts".format(
                    k + 1, MAX_SPAWN_ATTEMPTS
                )
            )
    return Environment(tuple(obstacles), spec.bounds_min, spec.bounds_max)


def advance_obstacles(env: Environment, dt: float) -> Environment:
    """Moves every obstacle by velocity*dt, bouncing elastically off the workspace bounds."""
    lo, hi = np.array(env.bounds_min), np.array(env.bounds_max)
    moved = []
    for obstacle in env.obstacles:
        center = np.array(obstacle.center) + np.array(obstacle.velocity) * dt
        velocity = np.array(obstacle.velocity)
        above, below = center > hi, center < lo
        center = np.where(above, 2.0 * hi - center, center)
        center = np.where(below, 2.0 * lo - center, center)
        velocity = np.where(above | below, -velocity, velocity)
        moved.append(SphereObstacle(tuple(center), obstacle.radius, tuple(velocity)))
    return Environment(tuple(moved), env.bounds_min, env.bounds_max, env.time + dt)


def sample_point_cloud(env: Environment, n_points: int, rng: np.random.Generator) -> np.ndarray:
    """
    n_points uniform samples on the obstacle surfaces, split proportionally to
    the surface areas; leftover points go one each to the first obstacles.
    """
    if not env.obstacles:
        raise ValueError("Cannot sample a point cloud from an empty environment")
    areas = np.array([o.radius ** 2 for o in env.obstacles])
    counts = np.floor(n_points * areas / areas.sum()).astype(int)
    remainder = n_points - int(counts.sum())
    counts[: remainder] += 1
    parts = []
    for obstacle, count in zip(env.obstacles, counts):
        directions = rng.standard_normal((count, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        parts.append(np.array(obstacle.center) + obstacle.radius * directions)
    return np.concatenate(parts)


def _world_backbones(q: RobotConfig, geoms: Sequence[LinkGeometry], n: int) -> List[np.ndarray]:
    fk = forward_kinematics(q, geoms)
    out = []
    for i, (link, geom) in enumerate(zip(q.links, geoms)):
        local, _ = backbone_frames(link.theta, link.phi, geom.L, np.linspace(0.0, geom.L, n))
        out.append(local @ fk[i][:3, :3].T + fk[i][:3, 3])
    return out


def ground_truth_robot_distance(q: RobotConfig, geoms: Sequence[LinkGeometry], env: Environment) -> float:
    """
    Signed clearance between the robot tube and the obstacle spheres, from
    GT_BACKBONE_POINTS backbone samples per link. Negative means collision;
    +inf without obstacles.
    """
    if not env.obstacles:
        return math.inf
    centers = np.array([o.center for o in env.obstacles])
    radii = np.array([o.radius for o in env.obstacles])
    best = np.full(len(centers), np.inf)
    for backbone, geom in zip(_world_backbones(q, geoms, GT_BACKBONE_POINTS), geoms):
        diff = centers[:, None, :] - backbone[None, :, :]
        best = np.minimum(best, np.sqrt(np.einsum("oni,oni->on", diff, diff)).min(axis=1) - geom.r)
    return float(np.min(best - radii))


def sphere_radius(geom: LinkGeometry, k_per_link: int) -> float:
    """Radius of k equally spaced spheres covering a link tube."""
    spacing = geom.L if k_per_link == 1 else geom.L / (k_per_link - 1)
    return max(SPHERE_INFLATION * geom.r, math.sqrt(geom.r ** 2 + (0.5 * spacing) ** 2))


def _sphere_offsets(geom: LinkGeometry, k_per_link: int) -> np.ndarray:
    if k_per_link == 1:
        return np.array([0.5 * geom.L])
    return np.linspace(0.0, geom.L, k_per_link)


def robot_shape_spheres(q: RobotConfig, geoms: Sequence[LinkGeometry], k_per_link: int) -> List[SphereObstacle]:
    """k spheres per link, centered on equally spaced backbone points, in the world frame."""
    if k_per_link < 1:
        raise ValueError("Need at least one sphere per link")
    fk = forward_kinematics(q, geoms)
    spheres = []
    for i, (link, geom) in enumerate(zip(q.links, geoms)):
        local, _ = backbone_frames(link.theta, link.phi, geom.L, _sphere_offsets(geom, k_per_link))
        radius = sphere_radius(geom, k_per_link)
        for c in local @ fk[i][:3, :3].T + fk[i][:3, 3]:
            spheres.append(SphereObstacle(tuple(c), radius))
    return spheres


def _surface_grid(count: int) -> Tuple[int, int]:
    n_circ = max(3, int(round(math.sqrt(count))))
    n_axial = max(2, -(-count // n_circ))
    return n_axial, n_circ


def _link_point_counts(P: int, M: int) -> List[int]:
    return [P // M + (1 if i < P % M else 0) for i in range(M)]


def _stratified(K: int, count: int) -> np.ndarray:
    """count indices spread evenly over range(K); identity when count == K."""
    return np.floor((np.arange(count) + 0.5) * K / count).astype(int)


def _surface_cloud_batch(
    poses: np.ndarray, thetas: np.ndarray, phis: np.ndarray, geoms: Sequence[LinkGeometry], P: int
) -> np.ndarray:
    parts = []
    for i, (geom, count) in enumerate(zip(geoms, _link_point_counts(P, len(geoms)))):
        n_axial, n_circ = _surface_grid(count)
        local = surface_points_batch(thetas[:, i], phis[:, i], geom, n_axial, n_circ)
        local = local[:, _stratified(local.shape[1], count)]
        rotation, translation = poses[:, i, :3, :3], poses[:, i, :3, 3]
        parts.append(np.einsum("bij,bpj->bpi", rotation, local) + translation[:, None, :])
    return np.concatenate(parts, axis=1)


def robot_surface_cloud(q: RobotConfig, geoms: Sequence[LinkGeometry], P: int) -> np.ndarray:
    """Exactly P world-frame points on the robot surface, split evenly over the links."""
    if P < q.M:
        raise ValueError("Need at least one point per link, got P={}".format(P))
    poses = batch_forward_kinematics(q.thetas[None], q.phis[None], geoms)
    return _surface_cloud_batch(poses, q.thetas[None], q.phis[None], geoms, P)[0]


def _squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared distances (B, n, P) between batched points a (B, n, 3) and the set b (P, 3)."""
    sq = np.sum(a * a, axis=-1)[:, :, None] + np.sum(b * b, axis=-1)[None, None, :] - 2.0 * (a @ b.T)
    return np.maximum(sq, 0.0)


class SphereBackend(CollisionBackend):
    """The robot abstracted as k inflated spheres per link."""

    def __init__(self, geoms: Sequence[LinkGeometry], k_per_link: int = DEFAULT_SPHERES_PER_LINK):
        if k_per_link < 1:
            raise ValueError("Need at least one sphere per link")
        self.geoms = list(geoms)
        self.k_per_link = k_per_link
        self.radii = np.repeat([sphere_radius(g, k_per_link) for g in self.geoms], k_per_link)

    def centers(self, poses: np.ndarray, thetas: np.ndarray, phis: np.ndarray) -> np.ndarray:
        """World sphere centers (B, M*k, 3), link-major."""
        parts = []
        for i, geom in enumerate(self.geoms):
            local, _ = backbone_frames(thetas[:, i], phis[:, i], geom.L, _sphere_offsets(geom, self.k_per_link))
            rotation, translation = poses[:, i, :3, :3], poses[:, i, :3, 3]
            parts.append(np.einsum("bij,bkj->bki", rotation, local) + translation[:, None, :])
        return np.concatenate(parts, axis=1)

    def min_distances(self, poses, thetas, phis, cloud, diagnostics=None) -> np.ndarray:
        cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
        if len(cloud) == 0:
            raise ValueError("Cannot query an empty point cloud")
        centers = self.centers(poses, thetas, phis)
        per_sphere = np.sqrt(_squared_distances(centers, cloud).min(axis=2)) - self.radii
        if diagnostics is not None:
            diagnostics.queries += len(poses) * len(cloud)
        return per_sphere.min(axis=1)


class PointCloudBackend(CollisionBackend):
    """The robot modelled by P surface points; distance is the closest point pair."""

    def __init__(self, geoms: Sequence[LinkGeometry], P: int):
        if P < len(geoms):
            raise ValueError("Need at least one point per link, got P={}".format(P))
        self.geoms = list(geoms)
        self.P = P

    def min_distances(self, poses, thetas, phis, cloud, diagnostics=None) -> np.ndarray:
        cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
        if len(cloud) == 0:
            raise ValueError("Cannot query an empty point cloud")
        out = np.empty(len(poses))
        for start in range(0, len(poses), BASELINE_CHUNK):
            sl = slice(start, start + BASELINE_CHUNK)
            robot = _surface_cloud_batch(poses[sl], thetas[sl], phis[sl], self.geoms, self.P)
            out[sl] = np.sqrt(_squared_distances(robot, cloud).min(axis=(1, 2)))
        if diagnostics is not None:
            diagnostics.queries += len(poses) * len(cloud)
        return out


def parse_shape_mode(mode: str) -> Tuple[str, Optional[int]]:
    """"ncedf", "spheres", "spheres:K" or "pcloud:P"."""
    name, _, arg = mode.partition(":")
    try:
        if name == "ncedf" and not arg:
            return name, None
        if name == "spheres":
            return name, int(arg) if arg else DEFAULT_SPHERES_PER_LINK
        if name == "pcloud" and arg:
            return name, int(arg)
    except ValueError:
        pass
    raise ConfigError("Invalid shape mode '{}'".format(mode))


def make_backend(mode: str, cedf: Optional[RobotCedf], geoms: Sequence[LinkGeometry]) -> CollisionBackend:
    name, arg = parse_shape_mode(mode)
    if name == "ncedf":
        if cedf is None:
            raise ConfigError("Shape mode 'ncedf' needs a model")
        if cedf.M != len(geoms):
            raise ConfigError("Model has {} links, scenario has {}".format(cedf.M, len(geoms)))
        return cedf
    if name == "spheres":
        return SphereBackend(geoms, arg)
    return PointCloudBackend(geoms, arg)


def cloud_ground_truth(q: RobotConfig, geoms: Sequence[LinkGeometry], cloud: np.ndarray) -> float:
    """Exact minimum distance between the cloud points and the robot surface."""
    fk = forward_kinematics(q, geoms)
    best = math.inf
    for i, (link, geom) in enumerate(zip(q.links, geoms)):
        local = (cloud - fk[i][:3, 3]) @ fk[i][:3, :3]
        best = min(best, float(datagen.analytic_link_distances(local, link, geom).min()))
    return best


def run_episode(
    scenario: Scenario,
    backend: CollisionBackend,
    threads: Optional[int] = 1,
    environment: Optional[Environment] = None,
    audit: bool = False,
) -> EpisodeResult:
    """
    Closed-loop navigation until the first of: ground-truth collision, the end
    effector within success_threshold of the goal, or t_max executed steps.
    """
    log = prefix_logger("env {}".format(scenario.seed))
    geoms = scenario.robot.geometries
    env = environment if environment is not None else create_environment(
        scenario.environment, scenario.robot, scenario.seed
    )
    env_hash = env.digest()
    goal = scenario.goal_pose()
    pool = ThreadPool(processes=threads) if threads != 1 else None
    controller = MppiController(backend, geoms, scenario.mppi, episode=scenario.seed, pool=pool)
    query = QueryDiagnostics()
    x = np.array(scenario.robot.initial_arc_lengths)
    records = []
    outcome = None
    try:
        for step in range(scenario.t_max + 1):
            thetas, phis = robot_angles(x, geoms)
            q = RobotConfig.from_arrays(thetas, phis)
            poses = batch_forward_kinematics(thetas[None], phis[None], geoms)
            ee_pose = poses[0, -1]
            cloud = sample_point_cloud(
                env, scenario.cloud_points, streams.stream(scenario.mppi.seed, streams.CLOUD, scenario.seed, step)
            )
            record = StepRecord(
                step=step,
                x=x.tolist(),
                q=q.as_vector(),
                ee_pose=ee_pose.reshape(-1).tolist(),
                min_cedf=float(backend.min_distances(poses, thetas[None], phis[None], cloud, query)[0]),
                gt_clearance=ground_truth_robot_distance(q, geoms, env),
                ee_goal_dist=float(np.linalg.norm(ee_pose - goal)),
                gt_cloud_min=cloud_ground_truth(q, geoms, cloud) if audit else None,
            )
            if record.gt_clearance < 0:
                outcome = "collision"
            elif record.ee_goal_dist <= scenario.success_threshold:
                outcome = "success"
            elif step == scenario.t_max:
                outcome = "stuck"
            if outcome is not None:
                records.append(record)
                break
            control, diagnostics = controller.step(x, cloud, goal)
            query.merge(diagnostics.query)
            records.append(
                record._replace(
                    cost_goal=diagnostics.costs.goal,
                    cost_coll=diagnostics.costs.collision,
                    cost_state=diagnostics.costs.state,
                    solve_ms=diagnostics.solve_ms,
                    planned_ee=diagnostics.planned_ee.tolist(),
                )
            )
            x = step_dynamics(x, control, scenario.mppi.tau)
            env = advance_obstacles(env, scenario.mppi.tau)
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    if query.floored:
        log.warning("%d of %d link queries were floored at the training box", query.floored, query.queries)
    log.info("%s after %d steps", outcome, len(records) - 1)
    return EpisodeResult(outcome, len(records) - 1, records, env_hash, query)


def audit_fraction(records: Sequence[StepRecord], slack: float) -> float:
    """
    Share of audited steps where the estimated minimum distance exceeds the
    exact cloud-to-robot distance by at most `slack`.
    """
    audited = [r for r in records if r.gt_cloud_min is not None]
    if not audited:
        raise ValueError("The episode was run without the distance audit")
    return sum(1 for r in audited if r.min_cedf <= r.gt_cloud_min + slack) / len(audited)


def time_controller(
    scenario: Scenario, backend: CollisionBackend, steps: int, threads: Optional[int] = 1
) -> float:
    """Mean wall-clock seconds of one controller step over the first `steps` steps of the episode."""
    if steps < 1:
        raise ValueError("Need at least one timed step")
    geoms = scenario.robot.geometries
    env = create_environment(scenario.environment, scenario.robot, scenario.seed)
    goal = scenario.goal_pose()
    pool = ThreadPool(processes=threads) if threads != 1 else None
    controller = MppiController(backend, geoms, scenario.mppi, episode=scenario.seed, pool=pool)
    x = np.array(scenario.robot.initial_arc_lengths)
    elapsed = 0.0
    try:
        for step in range(steps):
            cloud = sample_point_cloud(
                env, scenario.cloud_points, streams.stream(scenario.mppi.seed, streams.CLOUD, scenario.seed, step)
            )
            start = time.perf_counter()
            control, _ = controller.step(x, cloud, goal)
            elapsed += time.perf_counter() - start
            x = step_dynamics(x, control, scenario.mppi.tau)
            env = advance_obstacles(env, scenario.mppi.tau)
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    return elapsed / steps


class BenchmarkRow(NamedTuple):
    mode: str
    success: float
    collision: float
    stuck: float
    mppi_ms_mean: float
    mppi_ms_sd: float
    reach_steps_mean: float
    reach_steps_sd: float


def _mean_sd(values: Sequence[float]) -> Tuple[float, float]:
    if not values:
        return 0.0, 0.0
    return float(np.mean(values)), float(np.std(values))


def run_benchmark(
    n_envs: int,
    base_seed: int,
    template: Scenario,
    shape_modes: Sequence[str],
    cedf: Optional[RobotCedf] = None,
    threads: Optional[int] = None,
) -> Tuple[List[BenchmarkRow], Dict[str, List[EpisodeResult]]]:
    """
    Runs every shape mode on the environments of seeds base_seed .. base_seed+n_envs-1.
    All modes see the same environments; episodes run in parallel.
    """
    if n_envs < 1:
        raise ValueError("Need at least one environment")
    geoms = template.robot.geometries
    backends = [(mode, make_backend(mode, cedf, geoms)) for mode in shape_modes]
    scenarios = [template.with_seed(base_seed + k) for k in range(n_envs)]
    pool = ThreadPool(processes=threads)
    try:
        environments = [
            pool.apply_async(create_environment, (s.environment, s.robot, s.seed)) for s in scenarios
        ]
        environments = [e.get() for e in environments]
        async_result = {
            mode: [
                pool.apply_async(run_episode, (s, backend, 1, env))
                for s, env in zip(scenarios, environments)
            ]
            for mode, backend in backends
        }
        results = {mode: [r.get() for r in async_result[mode]] for mode, _ in backends}
    finally:
        pool.close()
        pool.join()

    hashes = [env.digest() for env in environments]
    rows = []
    for mode, _ in backends:
        episodes = results[mode]
        if [e.env_hash for e in episodes] != hashes:
            raise CedfError("Mode {} did not run on the paired environments".format(mode))
        counts = {o: sum(1 for e in episodes if e.outcome == o) for o in OUTCOMES}
        times = [t for e in episodes for t in e.solve_times]
        reach = [e.steps for e in episodes if e.outcome == "success"]
        rows.append(
            BenchmarkRow(
                mode,
                counts["success"] / n_envs,
                counts["collision"] / n_envs,
                counts["stuck"] / n_envs,
                *_mean_sd(times),
                *_mean_sd(reach),
            )
        )
        logger().info("mode %s: %s", mode, rows[-1])
    return rows, results

