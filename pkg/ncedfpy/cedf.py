"""
Whole-robot distance queries composed from per-link learned distance fields.

A world point is expressed in the base frame of every link through the
forward-kinematics chain, each link network is evaluated on it, and the robot
distance is the minimum over the links.
"""
import abc
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from ncedfpy import kinematics
from ncedfpy.common import ConfigError, logger
from ncedfpy.kinematics import LinkConfig, LinkGeometry, RobotConfig
from ncedfpy.neural import LinkModel, MlpParams, encode_batch, load_model, mlp_forward_batch, mlp_forward_rows

Box = Tuple[np.ndarray, np.ndarray]


@dataclass
class QueryDiagnostics:
    """Counters filled by distance queries; one instance per caller."""

    queries: int = 0
    floored: int = 0

    def merge(self, other: "QueryDiagnostics") -> None:
        self.queries += other.queries
        self.floored += other.floored


def box_distances(points: np.ndarray, box: Box) -> np.ndarray:
    """Euclidean distance from every point (..., 3) to an axis-aligned box; 0 inside."""
    lo, hi = box
    excess = np.maximum(np.maximum(lo - points, points - hi), 0.0)
    return np.sqrt(np.sum(excess * excess, axis=-1))


def _to_link_frame(points: np.ndarray, base: np.ndarray) -> np.ndarray:
    """Row-wise R^T (p - t) for points (P, 3), one row at a time."""
    diff = points - base[:3, 3]
    rotation = base[:3, :3]
    return diff[:, 0, None] * rotation[0] + diff[:, 1, None] * rotation[1] + diff[:, 2, None] * rotation[2]


def _encode_link(local: np.ndarray, link: LinkConfig) -> np.ndarray:
    inputs = np.empty((len(local), 6))
    inputs[:, :3] = local
    inputs[:, 3] = link.theta
    inputs[:, 4] = math.cos(link.phi)
    inputs[:, 5] = math.sin(link.phi)
    return inputs


class CollisionBackend(metaclass=abc.ABCMeta):
    """
    Interface of the robot-to-obstacle distance used by the collision cost of
    the controller.
    """

    @abc.abstractmethod
    def min_distances(
        self,
        poses: np.ndarray,
        thetas: np.ndarray,
        phis: np.ndarray,
        cloud: np.ndarray,
        diagnostics: Optional[QueryDiagnostics] = None,
    ) -> np.ndarray:
        """
        For B robot configurations given by their cumulative poses (B, M+1, 4, 4)
        and link angles (B, M), returns the minimum distance (B,) between the
        robot and the obstacle point cloud (P, 3).
        """
        pass


class RobotCedf(CollisionBackend):
    """
    Per-link networks (possibly one shared network) and geometries of an M-link
    robot. Read-only after construction, so queries may run from any thread.
    """

    def __init__(
        self,
        link_params: Sequence[MlpParams],
        geometries: Sequence[LinkGeometry],
        boxes: Optional[Sequence[Optional[Box]]] = None,
        dtype=np.float64,
        audit_slack: Optional[float] = None,
    ):
        if len(link_params) < 1:
            raise ConfigError("A robot needs at least one link")
        if len(link_params) != len(geometries):
            raise ConfigError(
                "Got {} link networks for {} geometries".format(len(link_params), len(geometries))
            )
        if boxes is None:
            boxes = [None] * len(link_params)
        if len(boxes) != len(link_params):
            raise ConfigError("Got {} boxes for {} links".format(len(boxes), len(link_params)))
        self.link_params = [p.astype(dtype) for p in link_params]
        self.geometries = list(geometries)
        self.boxes = list(boxes)
        # largest amount any link estimate may exceed the exact distance, when known
        self.audit_slack = audit_slack

    @classmethod
    def from_models(
        cls,
        models: Sequence[LinkModel],
        geometries: Sequence[LinkGeometry],
        dtype=np.float64,
    ) -> "RobotCedf":
        """
        One model shared by all links, or one model per link. Every link geometry
        has to equal the geometry its model was trained with.
        """
        M = len(geometries)
        if len(models) == 1:
            models = list(models) * M
        if len(models) != M:
            raise ConfigError("Got {} model files for a {}-link robot".format(len(models), M))
        for i, (model, geometry) in enumerate(zip(models, geometries), start=1):
            if model.geometry != geometry:
                raise ConfigError(
                    "Link {} geometry {} differs from the training geometry {}".format(
                        i, geometry.to_dict(), model.geometry.to_dict()
                    )
                )
        slacks = [m.audit_slack for m in models if m.audit_slack is not None]
        audit_slack = max(slacks) if len(slacks) == M else None
        return cls([m.params for m in models], geometries, [m.box for m in models], dtype, audit_slack)

    @property
    def M(self) -> int:
        return len(self.link_params)

    def _link_values(
        self,
        index: int,
        local: np.ndarray,
        inputs: np.ndarray,
        diagnostics: Optional[QueryDiagnostics],
        forward=mlp_forward_batch,
    ) -> np.ndarray:
        """Network values for link-frame points (n, 3) and their encoded inputs, floored outside the training box."""
        values = forward(self.link_params[index], inputs)
        values = values.astype(float)
        box = self.boxes[index]
        if box is not None:
            floor = box_distances(local, box)
            floored = (floor > 0.0) & (values < floor)
            count = int(np.count_nonzero(floored))
            if count:
                values = np.where(floored, floor, values)
            if diagnostics is not None:
                diagnostics.floored += count
        if diagnostics is not None:
            diagnostics.queries += len(values)
        return values

    def _check_index(self, i: int) -> None:
        if not 1 <= i <= self.M:
            raise IndexError("Link index {} out of range 1..{}".format(i, self.M))

    def link_distances_world(
        self,
        i: int,
        points: np.ndarray,
        q: RobotConfig,
        fk: Sequence[np.ndarray],
        diagnostics: Optional[QueryDiagnostics] = None,
    ) -> np.ndarray:
        """Γ̂_i for world points (P, 3); fk = forward_kinematics(q), i is 1-based."""
        self._check_index(i)
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        local = _to_link_frame(points, fk[i - 1])
        inputs = _encode_link(local, q.links[i - 1])
        return self._link_values(i - 1, local, inputs, diagnostics, forward=mlp_forward_rows)

    def link_distance_world(
        self, i: int, p_world: Sequence[float], q: RobotConfig, fk: Sequence[np.ndarray]
    ) -> float:
        return float(self.link_distances_world(i, np.asarray(p_world), q, fk)[0])

    def robot_distances(
        self,
        points: np.ndarray,
        q: RobotConfig,
        fk: Sequence[np.ndarray],
        diagnostics: Optional[QueryDiagnostics] = None,
    ) -> np.ndarray:
        """Minimum over links of Γ̂_i, for world points (P, 3)."""
        values = self.link_distances_world(1, points, q, fk, diagnostics)
        for i in range(2, self.M + 1):
            values = np.minimum(values, self.link_distances_world(i, points, q, fk, diagnostics))
        return values

    def robot_distance(self, p_world: Sequence[float], q: RobotConfig, fk: Sequence[np.ndarray]) -> float:
        return float(self.robot_distances(np.asarray(p_world), q, fk)[0])

    def cloud_min_distance_with_diagnostics(
        self, cloud: np.ndarray, q: RobotConfig
    ) -> Tuple[float, int, QueryDiagnostics]:
        cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
        if len(cloud) == 0:
            raise ValueError("Cannot query an empty point cloud")
        fk = kinematics.forward_kinematics(q, self.geometries)
        diagnostics = QueryDiagnostics()
        values = self.robot_distances(cloud, q, fk, diagnostics)
        if diagnostics.floored:
            logger().warning(
                "%d of %d link queries were outside the training box and floored",
                diagnostics.floored, diagnostics.queries,
            )
        index = int(np.argmin(values))
        return float(values[index]), index, diagnostics

    def cloud_min_distance(self, cloud: np.ndarray, q: RobotConfig) -> Tuple[float, int]:
        """Minimum robot distance over the cloud and the first index attaining it."""
        distance, index, _ = self.cloud_min_distance_with_diagnostics(cloud, q)
        return distance, index

    def min_distances(
        self,
        poses: np.ndarray,
        thetas: np.ndarray,
        phis: np.ndarray,
        cloud: np.ndarray,
        diagnostics: Optional[QueryDiagnostics] = None,
    ) -> np.ndarray:
        cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
        if len(cloud) == 0:
            raise ValueError("Cannot query an empty point cloud")
        B, P = len(poses), len(cloud)
        best = np.full(B, np.inf)
        for index in range(self.M):
            rotation = poses[:, index, :3, :3]
            translation = poses[:, index, :3, 3]
            local = np.einsum("bji,bpj->bpi", rotation, cloud[None, :, :] - translation[:, None, :])
            local = local.reshape(B * P, 3)
            inputs = encode_batch(local, np.repeat(thetas[:, index], P), np.repeat(phis[:, index], P))
            values = self._link_values(index, local, inputs, diagnostics)
            best = np.minimum(best, values.reshape(B, P).min(axis=1))
        return best


def load_robot_cedf(
    model_paths: Sequence[str], geometries: Sequence[LinkGeometry], dtype=np.float64
) -> RobotCedf:
    """RobotCedf from one shared model file or one model file per link."""
    return RobotCedf.from_models([load_model(path) for path in model_paths], geometries, dtype)
