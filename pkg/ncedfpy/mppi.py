"""
Model predictive path integral (MPPI) control in arc-length space.

Each step samples N noisy control sequences around a reference, rolls them
out through the arc-length dynamics, scores them with the goal, collision and
state costs, and averages them with exponential weights. Rollouts are
evaluated in fixed chunks on an optional thread pool and reduced in index
order, so the result never depends on the number of threads.
"""
import math
import time
from dataclasses import dataclass, field, fields
from multiprocessing.pool import ThreadPool
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ncedfpy import streams
from ncedfpy.cedf import CollisionBackend, QueryDiagnostics
from ncedfpy.common import ConfigError, logger
from ncedfpy.kinematics import (
    LinkGeometry,
    RobotConfig,
    batch_forward_kinematics,
    project_control,
    robot_angles,
    step_dynamics,
)

ROLLOUT_CHUNK = 32


@dataclass(frozen=True)
class MppiConfig:
    n_rollouts: int = 800
    horizon: int = 20
    sigma: float = math.sqrt(0.05)
    temperature: float = 0.02
    alpha: float = 0.9
    w_goal: float = 12.0
    w_coll: float = 1.1
    w_state: float = 50.0
    safety_margin: float = 0.05
    epsilon: float = 1e-3
    tau: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_rollouts < 1 or self.horizon < 1:
            raise ConfigError("n_rollouts and horizon must be >= 1")
        if self.temperature <= 0 or self.epsilon <= 0 or self.tau <= 0:
            raise ConfigError("temperature, epsilon and tau must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must be in (0, 1), got {}".format(self.alpha))
        if self.sigma < 0 or min(self.w_goal, self.w_coll, self.w_state) < 0:
            raise ConfigError("sigma and cost weights must be non-negative")
        if self.seed < 0:
            raise ConfigError("Seed must be non-negative")

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MppiConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError("Unknown MPPI settings: {}".format(", ".join(sorted(unknown))))
        try:
            return cls(
                **{k: (int(v) if k in ("n_rollouts", "horizon", "seed") else float(v)) for k, v in data.items()}
            )
        except (TypeError, ValueError) as e:
            raise ConfigError("Invalid MPPI settings {!r}: {}".format(data, e)) from None


class CostBreakdown(NamedTuple):
    goal: float
    collision: float
    state: float

    @property
    def total(self) -> float:
        return self.goal + self.collision + self.state


class Trajectory(NamedTuple):
    """H+1 arc-length states (H+1, 3M) and link angles (H+1, M), state 0 first."""

    arc_lengths: np.ndarray
    thetas: np.ndarray
    phis: np.ndarray

    def configs(self) -> List[RobotConfig]:
        return [RobotConfig.from_arrays(t, p) for t, p in zip(self.thetas, self.phis)]


class RolloutResult(NamedTuple):
    """A priced control sequence: per-step minimum distances (H,) and ee positions (H+1, 3)."""

    trajectory: Trajectory
    costs: CostBreakdown
    min_distances: np.ndarray
    ee_positions: np.ndarray

    @property
    def total(self) -> float:
        return self.costs.total


@dataclass
class Diagnostics:
    min_distance: float
    best_cost: float
    mean_cost: float
    solve_ms: float
    costs: CostBreakdown
    planned_ee: np.ndarray
    query: QueryDiagnostics = field(default_factory=QueryDiagnostics)


def zero_sequence(cfg: MppiConfig, n_links: int) -> np.ndarray:
    """The initial reference: H zero controls."""
    return np.zeros((cfg.horizon, 3 * n_links))


def sample_rollouts(
    ref: np.ndarray,
    cfg: MppiConfig,
    iteration: int,
    episode: int = 0,
    indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    Control sequences (n, H, 3M) around ref. Rollout j draws its noise from the
    stream (seed, ROLLOUT, episode, iteration, j), whatever thread asks for it.
    """
    ref = np.asarray(ref, dtype=float)
    if indices is None:
        indices = range(cfg.n_rollouts)
    noise = np.stack(
        [
            streams.stream(cfg.seed, streams.ROLLOUT, episode, iteration, j).standard_normal(ref.shape)
            for j in indices
        ]
    )
    return project_control(ref[None] + cfg.sigma * noise)


def rollout_states(
    x0: np.ndarray, U: np.ndarray, tau: float, geoms: Sequence[LinkGeometry]
) -> Trajectory:
    """
    Propagates arc lengths x0 (3M,) through control sequences U shaped (H, 3M)
    or (n, H, 3M). Leading dimensions of U carry over to the result.
    """
    U = np.asarray(U, dtype=float)
    H = U.shape[-2]
    x = np.broadcast_to(np.asarray(x0, dtype=float), U.shape[:-2] + U.shape[-1:])
    arcs = np.empty(U.shape[:-2] + (H + 1, U.shape[-1]))
    arcs[..., 0, :] = x
    for t in range(H):
        x = step_dynamics(x, U[..., t, :], tau)
        arcs[..., t + 1, :] = x
    thetas, phis = robot_angles(arcs, geoms)
    return Trajectory(arcs, thetas, phis)


def cost_goal(ee_poses: np.ndarray, goal: np.ndarray, w_goal: float) -> np.ndarray:
    """w_goal * sum_k ||T_ee^k - T_G||_F over end-effector poses (..., K, 4, 4)."""
    diff = np.asarray(ee_poses) - np.asarray(goal)
    return w_goal * np.sum(np.sqrt(np.sum(diff * diff, axis=(-2, -1))), axis=-1)


def cost_collision(
    min_distances: np.ndarray, w_coll: float, safety_margin: float, epsilon: float
) -> np.ndarray:
    """w_coll * sum_k 1 / max(d_k - margin, eps) over minimum cloud distances (..., K)."""
    clearance = np.maximum(np.asarray(min_distances) - safety_margin, epsilon)
    return w_coll * np.sum(1.0 / clearance, axis=-1)


def cost_state(arc_lengths: np.ndarray, geoms: Sequence[LinkGeometry], w_state: float) -> np.ndarray:
    """w_state times the total violation of the chamber bounds over arc lengths (..., K, 3M)."""
    lo = np.repeat([g.l_min for g in geoms], 3)
    hi = np.repeat([g.l_max for g in geoms], 3)
    arc_lengths = np.asarray(arc_lengths)
    violation = np.maximum(lo - arc_lengths, 0.0) + np.maximum(arc_lengths - hi, 0.0)
    return w_state * np.sum(violation, axis=(-2, -1))


def _evaluate(
    trajectory: Trajectory,
    cloud: np.ndarray,
    goal: np.ndarray,
    backend: CollisionBackend,
    geoms: Sequence[LinkGeometry],
    cfg: MppiConfig,
    diagnostics: QueryDiagnostics,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cost terms (n, 3), minimum distances (n, H) and ee positions (n, H+1, 3)."""
    thetas, phis = trajectory.thetas, trajectory.phis
    n, K, M = thetas.shape
    poses = batch_forward_kinematics(thetas, phis, geoms)
    H = K - 1
    distances = backend.min_distances(
        poses[:, :H].reshape(n * H, M + 1, 4, 4),
        thetas[:, :H].reshape(n * H, M),
        phis[:, :H].reshape(n * H, M),
        cloud,
        diagnostics,
    ).reshape(n, H)
    costs = np.stack(
        [
            cost_goal(poses[:, :H, -1], goal, cfg.w_goal),
            cost_collision(distances, cfg.w_coll, cfg.safety_margin, cfg.epsilon),
            cost_state(trajectory.arc_lengths[:, :H], geoms, cfg.w_state),
        ],
        axis=-1,
    )
    return costs, distances, poses[:, :, -1, :3, 3]


def evaluate_rollout(
    state: np.ndarray,
    U: np.ndarray,
    cloud: np.ndarray,
    goal: np.ndarray,
    backend: CollisionBackend,
    geoms: Sequence[LinkGeometry],
    cfg: MppiConfig,
    diagnostics: Optional[QueryDiagnostics] = None,
) -> RolloutResult:
    """Propagates one control sequence (H, 3M) from `state` and prices it."""
    trajectory = rollout_states(state, np.asarray(U, dtype=float)[None], cfg.tau, geoms)
    if diagnostics is None:
        diagnostics = QueryDiagnostics()
    costs, distances, ee = _evaluate(trajectory, cloud, goal, backend, geoms, cfg, diagnostics)
    return RolloutResult(
        Trajectory(*(a[0] for a in trajectory)),
        CostBreakdown(*(float(c) for c in costs[0])),
        distances[0],
        ee[0],
    )


def _evaluate_chunk(state, ref, cfg, iteration, episode, indices, cloud, goal, backend, geoms):
    rollouts = sample_rollouts(ref, cfg, iteration, episode, indices)
    trajectory = rollout_states(state, rollouts, cfg.tau, geoms)
    diagnostics = QueryDiagnostics()
    costs, _, _ = _evaluate(trajectory, cloud, goal, backend, geoms, cfg, diagnostics)
    return rollouts, costs, diagnostics


def mppi_update(
    costs: np.ndarray, rollouts: np.ndarray, ref: np.ndarray, temperature: float, alpha: float
) -> np.ndarray:
    """Exponentially weighted average of the rollouts, blended with ref and re-projected."""
    costs = np.asarray(costs, dtype=float)
    if len(costs) < 1 or len(costs) != len(rollouts):
        raise ValueError("Got {} costs for {} rollouts".format(len(costs), len(rollouts)))
    low, high = costs.min(), costs.max()
    if high > low:
        normalized = (costs - low) / (high - low)
    else:
        normalized = np.zeros_like(costs)
    weights = np.exp(-normalized / temperature)
    average = np.tensordot(weights, rollouts, axes=1) / weights.sum()
    return project_control((1.0 - alpha) * np.asarray(ref) + alpha * average)


def mppi_step(
    state: np.ndarray,
    cloud: np.ndarray,
    goal: np.ndarray,
    backend: CollisionBackend,
    cfg: MppiConfig,
    warm: np.ndarray,
    geoms: Sequence[LinkGeometry],
    iteration: int = 0,
    episode: int = 0,
    pool: Optional[ThreadPool] = None,
) -> Tuple[np.ndarray, np.ndarray, Diagnostics]:
    """
    One receding-horizon step from the arc lengths `state`. Returns the control
    to execute, the next warm start (shifted sequence padded with a zero
    control) and the step diagnostics.
    """
    start = time.perf_counter()
    state = np.asarray(state, dtype=float)
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(cloud) == 0:
        raise ValueError("Cannot plan against an empty point cloud")
    chunks = [
        range(j, min(j + ROLLOUT_CHUNK, cfg.n_rollouts))
        for j in range(0, cfg.n_rollouts, ROLLOUT_CHUNK)
    ]
    args = [(state, warm, cfg, iteration, episode, c, cloud, goal, backend, geoms) for c in chunks]
    if pool is None:
        results = [_evaluate_chunk(*a) for a in args]
    else:
        async_result = [pool.apply_async(_evaluate_chunk, a) for a in args]
        results = [r.get() for r in async_result]
    rollouts = np.concatenate([r[0] for r in results])
    costs = np.concatenate([r[1] for r in results])
    query = QueryDiagnostics()
    for r in results:
        query.merge(r[2])
    totals = costs.sum(axis=1)

    updated = mppi_update(totals, rollouts, warm, cfg.temperature, cfg.alpha)
    planned = evaluate_rollout(state, updated, cloud, goal, backend, geoms, cfg, query)
    next_warm = np.concatenate([updated[1:], np.zeros((1, updated.shape[1]))])
    diagnostics = Diagnostics(
        min_distance=float(planned.min_distances[0]),
        best_cost=float(totals.min()),
        mean_cost=float(totals.mean()),
        solve_ms=1000.0 * (time.perf_counter() - start),
        costs=planned.costs,
        planned_ee=planned.ee_positions,
        query=query,
    )
    logger().debug(
        "iteration %d min distance %.4f best cost %.4f solve %.1f ms",
        iteration, diagnostics.min_distance, diagnostics.best_cost, diagnostics.solve_ms,
    )
    return updated[0], next_warm, diagnostics


class MppiController:
    """
    Keeps the warm start and iteration counter of one episode. Used from one
    thread at a time; the optional pool parallelises the rollouts.
    """

    def __init__(
        self,
        backend: CollisionBackend,
        geoms: Sequence[LinkGeometry],
        cfg: MppiConfig,
        episode: int = 0,
        pool: Optional[ThreadPool] = None,
    ):
        self.backend = backend
        self.geoms = list(geoms)
        self.cfg = cfg
        self.episode = episode
        self.pool = pool
        self.iteration = 0
        self.warm = zero_sequence(cfg, len(self.geoms))

    def step(self, state: np.ndarray, cloud: np.ndarray, goal: np.ndarray) -> Tuple[np.ndarray, Diagnostics]:
        control, self.warm, diagnostics = mppi_step(
            state,
            cloud,
            goal,
            self.backend,
            self.cfg,
            self.warm,
            self.geoms,
            iteration=self.iteration,
            episode=self.episode,
            pool=self.pool,
        )
        self.iteration += 1
        return control, diagnostics
