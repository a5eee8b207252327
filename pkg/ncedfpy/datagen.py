"""
Per-link training data: sampled link configurations, workspace points and the
distance from every point to the link surface.

Distances used as training targets are brute-force minima over a sampled
surface (an upper bound of the true distance). The analytic oracle computes
the distance to the capped constant-curvature tube from a dense backbone
discretisation and is used as validation ground truth.
"""
import math
from dataclasses import dataclass, field
from multiprocessing.pool import ThreadPool
from typing import Any, Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ncedfpy import fileutil, streams
from ncedfpy.common import ConfigError, logger
from ncedfpy.kinematics import (
    CAP_RINGS,
    MEAN_TOL,
    LinkConfig,
    LinkGeometry,
    arc_lengths_to_config,
    backbone_frames,
    surface_points,
)

DEFAULT_BOX_MIN = (-2.4, -2.4, -0.4)
DEFAULT_BOX_MAX = (2.4, 2.4, 2.8)
DEFAULT_N_AXIAL = 40
DEFAULT_N_CIRC = 40
VALIDATION_CONFIGS = 50
VALIDATION_WORKSPACE = 16 ** 3
ANALYTIC_BACKBONE_SAMPLES = 2000
ANALYTIC_REFINE_ROUNDS = 3
ANALYTIC_REFINE_SAMPLES = 65
# number of (point, surface sample) pairs held in memory at once
CHUNK_PAIRS = 1 << 21
DATASET_FORMAT = "ncedf-dataset"


@dataclass(frozen=True)
class TrainingSample:
    theta: float
    phi: float
    p: Tuple[float, float, float]
    d: float

    @property
    def q(self) -> LinkConfig:
        return LinkConfig(self.theta, self.phi)

    def to_dict(self) -> Dict[str, Any]:
        return {"theta": self.theta, "phi": self.phi, "p": list(self.p), "d": self.d}


@dataclass(frozen=True)
class DatasetSpec:
    n_configs: int = 250
    n_workspace: int = 32 ** 3
    n_surface: int = 1600
    box_min: Tuple[float, float, float] = DEFAULT_BOX_MIN
    box_max: Tuple[float, float, float] = DEFAULT_BOX_MAX
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "box_min", tuple(float(v) for v in self.box_min))
        object.__setattr__(self, "box_max", tuple(float(v) for v in self.box_max))
        if min(self.n_configs, self.n_workspace, self.n_surface) < 1:
            raise ConfigError("Dataset counts must all be >= 1")
        if len(self.box_min) != 3 or len(self.box_max) != 3:
            raise ConfigError("Bounding box corners must be 3-vectors")
        if any(lo >= hi for lo, hi in zip(self.box_min, self.box_max)):
            raise ConfigError(
                "Empty bounding box {} .. {}".format(self.box_min, self.box_max)
            )
        if self.seed < 0:
            raise ConfigError("Seed must be non-negative")

    def surface_grid(self) -> Tuple[int, int]:
        """(n_axial, n_circ) of the lateral surface grid used for N_s samples."""
        n_circ = max(3, int(round(math.sqrt(self.n_surface))))
        n_axial = max(2, self.n_surface // n_circ)
        return n_axial, n_circ

    def label_error_bound(self, geom: LinkGeometry) -> float:
        """How far a brute-force label of this recipe can exceed the true surface distance."""
        return 2.0 * sample_spacing_bound(geom, *self.surface_grid())

    def validation(self) -> "DatasetSpec":
        """The validation recipe: fewer configurations on a 16^3 grid, same box."""
        return DatasetSpec(
            n_configs=VALIDATION_CONFIGS,
            n_workspace=VALIDATION_WORKSPACE,
            n_surface=self.n_surface,
            box_min=self.box_min,
            box_max=self.box_max,
            seed=self.seed,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_configs": self.n_configs,
            "n_workspace": self.n_workspace,
            "n_surface": self.n_surface,
            "box_min": list(self.box_min),
            "box_max": list(self.box_max),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DatasetSpec":
        try:
            return cls(
                n_configs=int(data["n_configs"]),
                n_workspace=int(data["n_workspace"]),
                n_surface=int(data["n_surface"]),
                box_min=tuple(data.get("box_min", DEFAULT_BOX_MIN)),
                box_max=tuple(data.get("box_max", DEFAULT_BOX_MAX)),
                seed=int(data.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError("Invalid dataset spec {!r}: {}".format(data, e)) from None


class ErrorMetrics(NamedTuple):
    mae: float
    rmse: float
    moe: float


@dataclass
class Dataset:
    """
    Column-oriented training samples: theta (n,), phi (n,), points (n, 3), d (n,).
    Indexing and iteration yield TrainingSample objects.
    """

    theta: np.ndarray
    phi: np.ndarray
    points: np.ndarray
    d: np.ndarray
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.theta)
        if not (len(self.phi) == len(self.points) == len(self.d) == n):
            raise ValueError("Dataset columns have different lengths")

    def __len__(self) -> int:
        return len(self.d)

    def __getitem__(self, i: int) -> TrainingSample:
        p = self.points[i]
        return TrainingSample(
            float(self.theta[i]),
            float(self.phi[i]),
            (float(p[0]), float(p[1]), float(p[2])),
            float(self.d[i]),
        )

    def __iter__(self) -> Iterator[TrainingSample]:
        for i in range(len(self)):
            yield self[i]

    def take(self, indices: np.ndarray) -> "Dataset":
        return Dataset(
            self.theta[indices], self.phi[indices], self.points[indices], self.d[indices], self.meta
        )

    @classmethod
    def from_samples(cls, samples: Sequence[TrainingSample]) -> "Dataset":
        return cls(
            np.array([s.theta for s in samples], dtype=float),
            np.array([s.phi for s in samples], dtype=float),
            np.array([s.p for s in samples], dtype=float).reshape(-1, 3),
            np.array([s.d for s in samples], dtype=float),
        )


def sample_configurations(geom: LinkGeometry, N: int, rng) -> List[LinkConfig]:
    """
    N configurations drawn uniformly in arc-length space: three i.i.d. uniform
    lengths, shifted to mean L and clamped to the chamber bounds. Triples whose
    clamping breaks the mean are drawn again.
    """
    if N < 1:
        raise ValueError("Need at least one configuration, got {}".format(N))
    configs = []
    while len(configs) < N:
        l = np.asarray(rng.uniform(geom.l_min, geom.l_max, size=3), dtype=float)
        l = np.clip(l + (geom.L - l.mean()), geom.l_min, geom.l_max)
        if abs(l.mean() - geom.L) > MEAN_TOL:
            continue
        configs.append(arc_lengths_to_config(l, geom))
    return configs


def _cube_root(n: int) -> Optional[int]:
    root = int(round(n ** (1.0 / 3.0)))
    for k in (root - 1, root, root + 1):
        if k > 0 and k ** 3 == n:
            return k
    return None


def sample_workspace_points(spec: DatasetSpec, tag: int = streams.DATASET) -> np.ndarray:
    """
    N_w points inside the bounding box: the cell centers of a regular grid when
    N_w is a perfect cube, uniformly random points otherwise.
    """
    lo = np.array(spec.box_min)
    hi = np.array(spec.box_max)
    k = _cube_root(spec.n_workspace)
    if k is None:
        return streams.stream(spec.seed, tag, 1).uniform(lo, hi, size=(spec.n_workspace, 3))
    axes = [lo[i] + (np.arange(k) + 0.5) * (hi[i] - lo[i]) / k for i in range(3)]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.reshape(-1) for g in grid], axis=-1)


def nearest_surface_distances(points: np.ndarray, surface: np.ndarray) -> np.ndarray:
    """For every row of points (P, 3), the distance to the closest row of surface (K, 3)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    chunk = max(1, CHUNK_PAIRS // max(1, len(surface)))
    out = np.empty(len(points))
    for start in range(0, len(points), chunk):
        diff = points[start:start + chunk, None, :] - surface[None, :, :]
        out[start:start + chunk] = np.sqrt(np.einsum("pki,pki->pk", diff, diff).min(axis=1))
    return out


def sample_spacing_bound(geom: LinkGeometry, n_axial: int, n_circ: int) -> float:
    """
    Largest gap between neighbouring surface samples of any configuration: the
    outer fibre of a link bent by theta <= pi is at most L + pi*r long, rings
    are regular n_circ-gons and the caps hold CAP_RINGS inner rings.
    """
    axial = (geom.L + math.pi * geom.r) / (n_axial - 1)
    around = 2.0 * geom.r * math.sin(math.pi / n_circ)
    return max(axial, around, geom.r / (CAP_RINGS + 1))


def brute_force_distance(
    p: Sequence[float],
    cfg: LinkConfig,
    geom: LinkGeometry,
    n_axial: int = DEFAULT_N_AXIAL,
    n_circ: int = DEFAULT_N_CIRC,
) -> float:
    """Distance from p (link frame) to the nearest sample of the link surface."""
    surface = surface_points(cfg, geom, n_axial, n_circ).points
    return float(nearest_surface_distances(np.asarray(p, dtype=float), surface)[0])


def _circle_distances(points: np.ndarray, centers: np.ndarray, frames: np.ndarray, r: float) -> np.ndarray:
    # distance from each point to the circle of radius r around each backbone
    # sample, in the cross-section plane normal to the tangent
    offset = points - centers
    tangent = frames[..., :, 2]
    axial = np.einsum("...i,...i->...", offset, tangent)
    radial = np.linalg.norm(offset - axial[..., None] * tangent, axis=-1)
    return np.sqrt(axial ** 2 + (radial - r) ** 2)


def _disk_distances(points: np.ndarray, center: np.ndarray, frame: np.ndarray, r: float) -> np.ndarray:
    offset = points - center
    tangent = frame[:, 2]
    axial = offset @ tangent
    radial = np.linalg.norm(offset - axial[:, None] * tangent, axis=-1)
    return np.where(radial <= r, np.abs(axial), np.sqrt(axial ** 2 + (radial - r) ** 2))


def analytic_link_distances(
    points: np.ndarray,
    cfg: LinkConfig,
    geom: LinkGeometry,
    n_backbone: int = ANALYTIC_BACKBONE_SAMPLES,
) -> np.ndarray:
    """
    Distances from points (P, 3), link frame, to the surface of the capped tube:
    the minimum over the lateral surface (dense backbone samples refined around
    the best one) and the two end-cap disks.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    L, r = geom.L, geom.r
    s = np.linspace(0.0, L, n_backbone)
    ends, end_frames = backbone_frames(cfg.theta, cfg.phi, L, np.array([0.0, L]))
    centers, frames = backbone_frames(cfg.theta, cfg.phi, L, s)
    chunk = max(1, CHUNK_PAIRS // n_backbone)
    out = np.empty(len(points))
    for start in range(0, len(points), chunk):
        block = points[start:start + chunk]
        lateral = _circle_distances(block[:, None, :], centers[None], frames[None], r)
        distance = lateral.min(axis=1)
        best = np.argmin(lateral, axis=1)
        step = L / (n_backbone - 1)
        lo = np.clip(s[best] - step, 0.0, L)
        hi = np.clip(s[best] + step, 0.0, L)
        for _ in range(ANALYTIC_REFINE_ROUNDS):
            fine = lo[:, None] + (hi - lo)[:, None] * np.linspace(0.0, 1.0, ANALYTIC_REFINE_SAMPLES)
            fine_centers, fine_frames = backbone_frames(cfg.theta, cfg.phi, L, fine)
            lateral = _circle_distances(block[:, None, :], fine_centers, fine_frames, r)
            distance = np.minimum(distance, lateral.min(axis=1))
            best = np.argmin(lateral, axis=1)
            width = (hi - lo) / (ANALYTIC_REFINE_SAMPLES - 1)
            at = fine[np.arange(len(block)), best]
            lo = np.clip(at - width, 0.0, L)
            hi = np.clip(at + width, 0.0, L)
        distance = np.minimum(distance, _disk_distances(block, ends[0], end_frames[0], r))
        distance = np.minimum(distance, _disk_distances(block, ends[1], end_frames[1], r))
        out[start:start + chunk] = distance
    return out


def analytic_link_distance(p: Sequence[float], cfg: LinkConfig, geom: LinkGeometry) -> float:
    """High-accuracy distance from p (link frame) to the link surface."""
    return float(analytic_link_distances(np.asarray(p, dtype=float), cfg, geom)[0])


def _config_distances(
    cfg: LinkConfig, geom: LinkGeometry, spec: DatasetSpec, points: np.ndarray
) -> np.ndarray:
    n_axial, n_circ = spec.surface_grid()
    surface = surface_points(cfg, geom, n_axial, n_circ).points
    if np.any(surface < np.array(spec.box_min)) or np.any(surface > np.array(spec.box_max)):
        logger().warning(
            "Link surface for theta=%.6f phi=%.6f leaves the bounding box", cfg.theta, cfg.phi
        )
        raise ConfigError(
            "The bounding box {} .. {} does not contain the link volume".format(
                spec.box_min, spec.box_max
            )
        )
    return nearest_surface_distances(points, surface)


def generate_dataset(
    geom: LinkGeometry,
    spec: DatasetSpec,
    threads: Optional[int] = None,
    tag: int = streams.DATASET,
) -> Dataset:
    """
    The cartesian product of N sampled configurations and N_w workspace points,
    config-major, with brute-force surface distances. Configurations run in
    parallel; the result does not depend on the number of threads.
    """
    configs = sample_configurations(geom, spec.n_configs, streams.stream(spec.seed, tag, 0))
    points = sample_workspace_points(spec, tag)
    pool = ThreadPool(processes=threads)
    try:
        async_result = [
            pool.apply_async(_config_distances, (cfg, geom, spec, points)) for cfg in configs
        ]
        distances = [result.get() for result in async_result]
    finally:
        pool.close()
        pool.join()
    n_w = len(points)
    logger().info("Generated %d samples (%d configs x %d points)", len(configs) * n_w, len(configs), n_w)
    return Dataset(
        theta=np.repeat([c.theta for c in configs], n_w),
        phi=np.repeat([c.phi for c in configs], n_w),
        points=np.tile(points, (len(configs), 1)),
        d=np.concatenate(distances),
        meta={"geometry": geom.to_dict(), "spec": spec.to_dict()},
    )


def compute_error_metrics(predictions: Sequence[float], targets: Sequence[float]) -> ErrorMetrics:
    predictions = np.asarray(predictions, dtype=float).reshape(-1)
    targets = np.asarray(targets, dtype=float).reshape(-1)
    if len(predictions) != len(targets):
        raise ValueError(
            "Got {} predictions for {} targets".format(len(predictions), len(targets))
        )
    if len(targets) == 0:
        raise ValueError("Cannot compute metrics over an empty set")
    error = predictions - targets
    return ErrorMetrics(
        mae=float(np.mean(np.abs(error))),
        rmse=float(np.sqrt(np.mean(error ** 2))),
        moe=float(np.mean(np.maximum(0.0, error))),
    )


def load_dataset_config(path: str) -> Tuple[LinkGeometry, DatasetSpec]:
    """Reads {"geometry": {...}, "dataset": {...}} config files."""
    config = fileutil.read_json(path)
    try:
        return LinkGeometry.from_dict(config["geometry"]), DatasetSpec.from_dict(config["dataset"])
    except (KeyError, TypeError) as e:
        raise ConfigError("Invalid dataset config '{}': {}".format(path, e)) from None


def write_dataset(path: str, dataset: Dataset) -> int:
    header = dict(dataset.meta)
    header["format"] = DATASET_FORMAT
    header["samples"] = len(dataset)
    return fileutil.write_jsonl(path, header, (s.to_dict() for s in dataset))


def read_dataset(path: str) -> Dataset:
    header, rows = fileutil.read_jsonl(path)
    if header.get("format") != DATASET_FORMAT:
        raise ConfigError("'{}' is not a dataset file".format(path))
    try:
        samples = [
            TrainingSample(float(row["theta"]), float(row["phi"]), tuple(row["p"]), float(row["d"]))
            for row in rows
        ]
    except (KeyError, TypeError) as e:
        raise ConfigError("Invalid sample in '{}': {}".format(path, e)) from None
    if not samples:
        raise ConfigError("Dataset '{}' has no samples".format(path))
    dataset = Dataset.from_samples(samples)
    dataset.meta = {k: v for k, v in header.items() if k not in ("format", "samples")}
    return dataset
