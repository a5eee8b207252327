"""
Piecewise-constant-curvature (PCC) geometry of a multi-link continuum robot.

Every link is a circular arc of fixed backbone length L, bent by the angle
theta inside the plane rotated by phi around the link base z axis. Three
chambers placed at 2*pi/3 intervals around the backbone, at distance r, set
the bending through their arc lengths. Lengths are in meters and angles in
radians everywhere.

Scalar helpers (LinkConfig, RobotConfig, Pose as a 4x4 numpy array) are thin
wrappers around vectorised kernels that accept arbitrary leading batch
dimensions; the MPPI rollouts use the kernels directly.
"""
import math
from dataclasses import dataclass
from typing import Any, Dict, List, NamedTuple, Sequence, Tuple

import numpy as np

from ncedfpy.common import ConfigError, ControlProjectionError

STRAIGHT_THETA = 1e-6
RADICAND_EPS = 1e-15
MEAN_TOL = 1e-9
CAP_RINGS = 4
CHAMBER_OFFSETS = np.array([0.0, 2.0 * math.pi / 3.0, 4.0 * math.pi / 3.0])


@dataclass(frozen=True)
class LinkGeometry:
    """Backbone length, link radius and chamber arc-length bounds of one link."""

    L: float = 2.0
    r: float = 0.2
    l_min: float = 1.6
    l_max: float = 2.4

    def __post_init__(self):
        if not (0 < self.l_min < self.L < self.l_max):
            raise ConfigError(
                "Link geometry needs 0 < l_min < L < l_max, got l_min={} L={} l_max={}".format(
                    self.l_min, self.L, self.l_max
                )
            )
        if self.r <= 0:
            raise ConfigError("Link radius must be positive, got {}".format(self.r))

    def to_dict(self) -> Dict[str, float]:
        return {"L": self.L, "r": self.r, "l_min": self.l_min, "l_max": self.l_max}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LinkGeometry":
        try:
            return cls(
                L=float(data["L"]),
                r=float(data["r"]),
                l_min=float(data["l_min"]),
                l_max=float(data["l_max"]),
            )
        except (KeyError, TypeError) as e:
            raise ConfigError("Invalid link geometry {!r}: {}".format(data, e)) from None


@dataclass(frozen=True)
class LinkConfig:
    theta: float
    phi: float

    def __post_init__(self):
        if not (0.0 <= self.theta <= math.pi):
            raise ValueError("theta must be in [0, pi], got {}".format(self.theta))
        if not (-math.pi <= self.phi < math.pi):
            raise ValueError("phi must be in [-pi, pi), got {}".format(self.phi))

    def rho(self, L: float) -> float:
        """Radius of the backbone arc; undefined for a straight link."""
        if self.theta <= 0.0:
            raise ValueError("The curvature radius of a straight link is undefined")
        return L / self.theta


@dataclass(frozen=True)
class RobotConfig:
    links: Tuple[LinkConfig, ...]

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        if len(self.links) < 1:
            raise ValueError("A robot needs at least one link")

    @property
    def M(self) -> int:
        return len(self.links)

    @property
    def thetas(self) -> np.ndarray:
        return np.array([link.theta for link in self.links])

    @property
    def phis(self) -> np.ndarray:
        return np.array([link.phi for link in self.links])

    def as_vector(self) -> List[float]:
        """q in R^{2M}, ordered (theta_1, phi_1, ..., theta_M, phi_M)."""
        vector = []
        for link in self.links:
            vector.extend((link.theta, link.phi))
        return vector

    @classmethod
    def from_arrays(cls, thetas: Sequence[float], phis: Sequence[float]) -> "RobotConfig":
        return cls(
            tuple(LinkConfig(float(t), float(p)) for t, p in zip(thetas, phis))
        )


class SurfaceSample(NamedTuple):
    points: np.ndarray
    n_lateral: int
    n_cap: int

    @property
    def count(self) -> int:
        return self.n_lateral + 2 * self.n_cap


def radii(geoms: Sequence[LinkGeometry]) -> np.ndarray:
    return np.array([g.r for g in geoms])


def lengths(geoms: Sequence[LinkGeometry]) -> np.ndarray:
    return np.array([g.L for g in geoms])


def _lengths_to_angles(l: np.ndarray, r) -> Tuple[np.ndarray, np.ndarray]:
    l1, l2, l3 = l[..., 0], l[..., 1], l[..., 2]
    # Same value as l1^2 + l2^2 + l3^2 - l1*l2 - l1*l3 - l2*l3, written with
    # differences so that a common shift of the three lengths cancels exactly.
    radicand = 0.5 * ((l1 - l2) ** 2 + (l1 - l3) ** 2 + (l2 - l3) ** 2)
    straight = radicand <= RADICAND_EPS
    theta = np.clip(2.0 * np.sqrt(radicand) / (3.0 * np.asarray(r)), 0.0, math.pi)
    phi = np.arctan2(math.sqrt(3.0) * (l2 - l3), l2 + l3 - 2.0 * l1)
    phi = np.where(phi >= math.pi, -math.pi, phi)
    return np.where(straight, 0.0, theta), np.where(straight, 0.0, phi)


def _angles_to_lengths(theta, phi, L, r) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)[..., None]
    phi = np.asarray(phi, dtype=float)[..., None]
    L = np.asarray(L, dtype=float)[..., None]
    r = np.asarray(r, dtype=float)[..., None]
    return L - r * theta * np.cos(phi + CHAMBER_OFFSETS)


def arc_lengths_to_config(l: Sequence[float], geom: LinkGeometry) -> LinkConfig:
    """Bending angle and bending-plane angle of one link from its three arc lengths."""
    l = np.asarray(l, dtype=float)
    if l.shape != (3,):
        raise ValueError("Expected 3 arc lengths, got shape {}".format(l.shape))
    if np.any(l <= 0):
        raise ValueError("Arc lengths must be positive, got {}".format(l))
    theta, phi = _lengths_to_angles(l, geom.r)
    return LinkConfig(float(theta), float(phi))


def config_to_arc_lengths(cfg: LinkConfig, geom: LinkGeometry) -> np.ndarray:
    """Inverse of arc_lengths_to_config: the chamber lengths that produce cfg."""
    return _angles_to_lengths(cfg.theta, cfg.phi, geom.L, geom.r)


def robot_angles(x: np.ndarray, geoms: Sequence[LinkGeometry]) -> Tuple[np.ndarray, np.ndarray]:
    """(theta, phi), each shaped (..., M), for arc-length vectors shaped (..., 3M)."""
    x = np.asarray(x, dtype=float)
    M = len(geoms)
    if x.shape[-1] != 3 * M:
        raise ValueError("Expected {} arc lengths, got {}".format(3 * M, x.shape[-1]))
    return _lengths_to_angles(x.reshape(x.shape[:-1] + (M, 3)), radii(geoms))


def robot_config_from_arc_lengths(x: np.ndarray, geoms: Sequence[LinkGeometry]) -> RobotConfig:
    thetas, phis = robot_angles(x, geoms)
    return RobotConfig.from_arrays(thetas, phis)


def robot_arc_lengths(thetas, phis, geoms: Sequence[LinkGeometry]) -> np.ndarray:
    """Arc-length vectors shaped (..., 3M) for angles shaped (..., M)."""
    thetas = np.asarray(thetas, dtype=float)
    l = _angles_to_lengths(thetas, phis, lengths(geoms), radii(geoms))
    return l.reshape(thetas.shape[:-1] + (3 * len(geoms),))


def initial_arc_lengths(geoms: Sequence[LinkGeometry]) -> np.ndarray:
    """The straight robot: every chamber at the backbone length."""
    return np.repeat(lengths(geoms), 3)


def check_arc_lengths(x: np.ndarray, geoms: Sequence[LinkGeometry], tol: float = MEAN_TOL) -> None:
    """Raise ValueError unless every link's mean arc length equals its backbone length."""
    x = np.asarray(x, dtype=float)
    if x.shape != (3 * len(geoms),):
        raise ValueError("Expected {} arc lengths, got shape {}".format(3 * len(geoms), x.shape))
    means = x.reshape(-1, 3).mean(axis=1)
    drift = np.abs(means - lengths(geoms))
    if np.any(drift > tol):
        raise ValueError(
            "Arc lengths violate the backbone length constraint (max drift {:.3e})".format(
                float(drift.max())
            )
        )


def _rot_z(angle) -> np.ndarray:
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    z, o = np.zeros_like(c), np.ones_like(c)
    return np.stack(
        [np.stack([c, -s, z], -1), np.stack([s, c, z], -1), np.stack([z, z, o], -1)],
        -2,
    )


def _rot_y(angle) -> np.ndarray:
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    z, o = np.zeros_like(c), np.ones_like(c)
    return np.stack(
        [np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)],
        -2,
    )


def _arc_frames(theta, phi, L, a) -> Tuple[np.ndarray, np.ndarray]:
    """
    Position and orientation at the arc angle a (0 <= a <= theta) of links with
    the given theta, phi and L; every argument broadcasts. Straight links
    (theta below STRAIGHT_THETA) use the series limit.
    """
    theta, phi, L, a = np.broadcast_arrays(
        np.asarray(theta, dtype=float),
        np.asarray(phi, dtype=float),
        np.asarray(L, dtype=float),
        np.asarray(a, dtype=float),
    )
    straight = theta < STRAIGHT_THETA
    safe_theta = np.where(straight, 1.0, theta)
    rho = L / safe_theta
    # rho * (1 - cos a) without the cancellation of 1 - cos for small a
    radial = rho * 2.0 * np.sin(0.5 * a) ** 2
    axial = rho * np.sin(a)
    position = np.stack([np.cos(phi) * radial, np.sin(phi) * radial, axial], -1)
    rotation = _rot_z(phi) @ _rot_y(a) @ _rot_z(-phi)
    position = np.where(straight[..., None], 0.0, position)
    rotation = np.where(straight[..., None, None], np.eye(3), rotation)
    return position, rotation


def backbone_frames(theta, phi, L: float, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Backbone positions (..., n, 3) and frames (..., n, 3, 3) at the arc parameters
    s (n,) in [0, L], for links with theta and phi shaped (...).
    """
    theta = np.asarray(theta, dtype=float)[..., None]
    phi = np.asarray(phi, dtype=float)[..., None]
    s = np.asarray(s, dtype=float)
    position, rotation = _arc_frames(theta, phi, L, s * theta / L)
    straight = np.broadcast_to(theta < STRAIGHT_THETA, position.shape[:-1])
    along_z = np.stack(
        np.broadcast_arrays(np.zeros_like(s), np.zeros_like(s), s), -1
    )
    position = np.where(straight[..., None], along_z, position)
    return position, rotation


def link_transforms(theta, phi, L) -> np.ndarray:
    """Homogeneous transforms (..., 4, 4) from a link base to its tip."""
    theta = np.asarray(theta, dtype=float)
    position, rotation = _arc_frames(theta, phi, L, theta)
    straight = theta < STRAIGHT_THETA
    L = np.broadcast_to(np.asarray(L, dtype=float), theta.shape)
    tip = np.stack([np.zeros_like(L), np.zeros_like(L), L], -1)
    position = np.where(straight[..., None], tip, position)
    transform = np.zeros(theta.shape + (4, 4))
    transform[..., :3, :3] = rotation
    transform[..., :3, 3] = position
    transform[..., 3, 3] = 1.0
    return transform


def link_transform(cfg: LinkConfig, L: float) -> np.ndarray:
    """Pose of the tip of a link in the frame of its base."""
    return link_transforms(cfg.theta, cfg.phi, L)


def batch_forward_kinematics(thetas, phis, geoms: Sequence[LinkGeometry]) -> np.ndarray:
    """
    Cumulative poses (..., M+1, 4, 4) for angles shaped (..., M). Element 0 is the
    global base frame, element i the base frame of link i+1, the last one T_ee.
    """
    thetas = np.asarray(thetas, dtype=float)
    M = len(geoms)
    if thetas.shape[-1] != M:
        raise ValueError("Expected {} links, got {}".format(M, thetas.shape[-1]))
    local = link_transforms(thetas, phis, lengths(geoms))
    poses = np.empty(thetas.shape[:-1] + (M + 1, 4, 4))
    poses[..., 0, :, :] = np.eye(4)
    for i in range(M):
        poses[..., i + 1, :, :] = poses[..., i, :, :] @ local[..., i, :, :]
    return poses


def forward_kinematics(q: RobotConfig, geoms: Sequence[LinkGeometry]) -> List[np.ndarray]:
    """The M+1 cumulative poses of q: identity, base of link 2, ..., T_ee."""
    if len(geoms) != q.M:
        raise ValueError(
            "Configuration has {} links but {} geometries were given".format(q.M, len(geoms))
        )
    poses = batch_forward_kinematics(q.thetas, q.phis, geoms)
    return [poses[i] for i in range(q.M + 1)]


def backbone_points(cfg: LinkConfig, L: float, n: int) -> np.ndarray:
    """n points equally spaced in arc length along the backbone, in the link frame."""
    if n < 2:
        raise ValueError("Need at least 2 backbone points, got {}".format(n))
    position, _ = backbone_frames(cfg.theta, cfg.phi, L, np.linspace(0.0, L, n))
    return position


def _cap_disk(r: float, n_circ: int) -> np.ndarray:
    """Center plus CAP_RINGS concentric rings inside the end-cap disk, in the cap plane."""
    beta = 2.0 * math.pi * np.arange(n_circ) / n_circ
    ring = np.stack([np.cos(beta), np.sin(beta), np.zeros(n_circ)], -1)
    radii = r * np.arange(1, CAP_RINGS + 1) / (CAP_RINGS + 1)
    rings = (radii[:, None, None] * ring[None, :, :]).reshape(-1, 3)
    return np.concatenate([np.zeros((1, 3)), rings], axis=0)


def surface_points_batch(
    thetas, phis, geom: LinkGeometry, n_axial: int, n_circ: int
) -> np.ndarray:
    """
    Surface samples (..., K, 3) of links with angles shaped (...), in their link
    frames. The first n_axial*n_circ points are the lateral tube (axial-major),
    followed by the base cap and the tip cap.
    """
    if n_axial < 2 or n_circ < 3:
        raise ValueError(
            "Need n_axial >= 2 and n_circ >= 3, got {} and {}".format(n_axial, n_circ)
        )
    centers, frames = backbone_frames(thetas, phis, geom.L, np.linspace(0.0, geom.L, n_axial))
    beta = 2.0 * math.pi * np.arange(n_circ) / n_circ
    circle = geom.r * np.stack([np.cos(beta), np.sin(beta), np.zeros(n_circ)], -1)
    lateral = centers[..., :, None, :] + np.einsum("...nij,cj->...nci", frames, circle)
    lateral = lateral.reshape(lateral.shape[:-3] + (n_axial * n_circ, 3))
    disk = _cap_disk(geom.r, n_circ)
    base = centers[..., :1, :] + np.einsum("...ij,cj->...ci", frames[..., 0, :, :], disk)
    tip = centers[..., -1:, :] + np.einsum("...ij,cj->...ci", frames[..., -1, :, :], disk)
    return np.concatenate([lateral, base, tip], axis=-2)


def surface_points(
    cfg: LinkConfig, geom: LinkGeometry, n_axial: int, n_circ: int
) -> SurfaceSample:
    points = surface_points_batch(cfg.theta, cfg.phi, geom, n_axial, n_circ)
    return SurfaceSample(points, n_axial * n_circ, 1 + CAP_RINGS * n_circ)


def project_control(u_raw: np.ndarray) -> np.ndarray:
    """Removes the per-link mean of every chamber triple; works on (..., 3M) arrays."""
    u_raw = np.asarray(u_raw, dtype=float)
    if u_raw.shape[-1] % 3 != 0:
        raise ValueError("Control dimension {} is not a multiple of 3".format(u_raw.shape[-1]))
    triples = u_raw.reshape(u_raw.shape[:-1] + (-1, 3))
    return (triples - triples.mean(axis=-1, keepdims=True)).reshape(u_raw.shape)


def step_dynamics(x: np.ndarray, u: np.ndarray, tau: float) -> np.ndarray:
    """x' = x + u * tau for arc lengths x and projected arc-length rates u."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1] != u.shape[-1] or x.shape[-1] % 3 != 0:
        raise ValueError("Incompatible state {} and control {} shapes".format(x.shape, u.shape))
    means = u.reshape(u.shape[:-1] + (-1, 3)).mean(axis=-1)
    if np.any(np.abs(means) > MEAN_TOL):
        raise ControlProjectionError(
            "Control is not per-link zero-mean (max |mean| {:.3e})".format(
                float(np.abs(means).max())
            )
        )
    return x + u * tau
