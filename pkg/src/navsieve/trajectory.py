"""Departure-angle trajectory family, collision checking and distance labels.

A trajectory turns at the maximum yaw rate until the heading offset equals the
departure angle, then drives straight, all at a constant forward speed. Poses
are evaluated in closed form at every time step, so there is no integration
drift.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose2D, Scene, boundary_clearance, wrap_angle


@dataclass(frozen=True)
class TrajectoryConfig:
    angle_count: int = 51
    angle_range: float = 0.4
    forward_speed: float = 0.5
    max_yaw_rate: float = 1.0
    time_step: float = 0.1
    max_path_length: float = 5.0
    robot_radius: float = 0.18
    label_threshold: float = 4.0

    def __post_init__(self):
        if self.angle_count < 3 or self.angle_count % 2 == 0:
            raise ValueError("angle_count must be odd and >= 3")
        if not self.forward_speed > 0:
            raise ValueError("forward_speed must be positive")
        if not self.max_yaw_rate > 0 or not self.time_step > 0:
            raise ValueError("max_yaw_rate and time_step must be positive")

    @property
    def angles(self) -> np.ndarray:
        i = np.arange(self.angle_count)
        return self.angle_range * (2.0 * i / (self.angle_count - 1) - 1.0)

    @property
    def step_length(self) -> float:
        return self.forward_speed * self.time_step


@dataclass(frozen=True)
class PoseSequence:
    """Poses as an (N, 3) array of x, y, heading plus arc length per pose."""

    states: np.ndarray
    cumulative_length: np.ndarray

    def __len__(self):
        return len(self.states)

    @property
    def poses(self) -> list[Pose2D]:
        return [Pose2D(*row) for row in self.states]

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]

    def truncated(self, count: int) -> PoseSequence:
        return PoseSequence(self.states[:count], self.cumulative_length[:count])


@dataclass(frozen=True)
class TrajectoryCandidate:
    departure_angle: float
    poses: PoseSequence
    clear_distance: float
    collided: bool


@dataclass(frozen=True)
class DistanceLabels:
    distances: np.ndarray
    threshold: float = 4.0

    @property
    def binary(self) -> np.ndarray:
        return self.distances >= self.threshold


# rollout -------------------------------------------------------------------


def sample_times(config: TrajectoryConfig, path_length: float | None = None) -> np.ndarray:
    length = config.max_path_length if path_length is None else path_length
    total = length / config.forward_speed
    steps = math.ceil(total / config.time_step - 1e-9)
    t = np.arange(steps + 1) * config.time_step
    t[-1] = total
    return t


def body_family(angles, config: TrajectoryConfig, path_length: float | None = None) -> np.ndarray:
    """Body-frame rollouts for each departure angle, shape (A, N, 3)."""
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    return _body_family(tuple(angles.tolist()), config, path_length)


@functools.lru_cache(maxsize=256)
def _body_family(angles: tuple, config: TrajectoryConfig, path_length: float | None) -> np.ndarray:
    out = body_states(np.array(angles), sample_times(config, path_length), config)
    out.setflags(write=False)
    return out


def body_states(angles, times, config: TrajectoryConfig) -> np.ndarray:
    """Closed-form body-frame pose of each angle's rollout at each time, (A, T, 3)."""
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    t = np.atleast_1d(np.asarray(times, dtype=float))
    v, w = config.forward_speed, config.max_yaw_rate
    turn_time = np.abs(angles) / w  # (A,)
    sign = np.sign(angles)

    tau = np.minimum(t[None, :], turn_time[:, None])  # time spent turning
    phi = sign[:, None] * w * tau  # heading after the turn portion
    small = np.abs(phi) < 1e-12
    safe_phi = np.where(small, 1.0, phi)
    x_arc = np.where(small, v * tau, v * tau * np.sin(safe_phi) / safe_phi)
    y_arc = np.where(small, 0.0, v * tau * (1.0 - np.cos(safe_phi)) / safe_phi)

    straight = v * (t[None, :] - tau)
    x = x_arc + straight * np.cos(phi)
    y = y_arc + straight * np.sin(phi)
    return np.stack([x, y, phi], axis=-1)


def to_world(body: np.ndarray, start: Pose2D) -> np.ndarray:
    c, s = math.cos(start.heading), math.sin(start.heading)
    out = np.empty_like(body)
    out[..., 0] = start.x + c * body[..., 0] - s * body[..., 1]
    out[..., 1] = start.y + s * body[..., 0] + c * body[..., 1]
    out[..., 2] = wrap_angle(start.heading + body[..., 2])
    return out


def rollout_family(start: Pose2D, angles, config: TrajectoryConfig, path_length: float | None = None) -> np.ndarray:
    return to_world(body_family(angles, config, path_length), start)


def generate_poses(start: Pose2D, departure_angle: float, config: TrajectoryConfig = TrajectoryConfig(),
                   path_length: float | None = None) -> PoseSequence:
    if abs(departure_angle) > config.angle_range + 1e-12:
        raise ValueError(f"departure angle {departure_angle} outside +/-{config.angle_range}")
    states = rollout_family(start, [departure_angle], config, path_length)[0]
    return PoseSequence(states, sample_times(config, path_length) * config.forward_speed)


# obstacle sources ----------------------------------------------------------


class DiscSource:
    """A scene: disc obstacles plus walls. Segments between poses are checked
    exactly against the discs, so grazing contacts between samples are caught."""

    def __init__(self, scene: Scene):
        self.scene = scene

    def clearance(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        c = boundary_clearance(self.scene.bounds, p)
        if self.scene.obstacles:
            d = np.linalg.norm(p[..., None, :] - self.scene.centers, axis=-1) - self.scene.radii
            c = np.minimum(c, d.min(axis=-1))
        return c

    def collision_mask(self, positions: np.ndarray, robot_radius: float) -> np.ndarray:
        """(..., N) mask: pose i collides, or the segment from pose i-1 does."""
        hit = boundary_clearance(self.scene.bounds, positions) < robot_radius
        if not self.scene.obstacles:
            return hit
        px, py = positions[..., 0], positions[..., 1]
        n = positions.shape[-2]
        for (cx, cy), r in zip(self.scene.centers, self.scene.radii):
            reach2 = (r + robot_radius) ** 2
            dx, dy = px - cx, py - cy
            hit |= dx * dx + dy * dy < reach2
            if n < 2:
                continue
            # closest approach of each segment to the disc center
            sx, sy = np.diff(px, axis=-1), np.diff(py, axis=-1)
            ax, ay = dx[..., :-1], dy[..., :-1]
            len2 = sx * sx + sy * sy
            with np.errstate(invalid="ignore", divide="ignore"):
                u = np.where(len2 > 0, -(ax * sx + ay * sy) / len2, 0.0)
            u = np.clip(u, 0.0, 1.0)
            qx, qy = ax + u * sx, ay + u * sy
            hit[..., 1:] |= qx * qx + qy * qy < reach2
        return hit


class PointSource:
    """Point obstacles of a common radius (scan endpoints or grid cells)."""

    def __init__(self, points: np.ndarray, radius: float = 0.0):
        self.points = np.asarray(points, dtype=float).reshape(-1, 2)
        self.radius = radius
        self._tree = cKDTree(self.points) if len(self.points) else None

    def clearance(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        if self._tree is None:
            return np.full(p.shape[:-1], np.inf)
        d, _ = self._tree.query(p.reshape(-1, 2))
        return d.reshape(p.shape[:-1]) - self.radius

    def collision_mask(self, positions: np.ndarray, robot_radius: float) -> np.ndarray:
        return self.clearance(positions) < robot_radius


class UnionSource:
    """Several obstacle sources checked together."""

    def __init__(self, *sources):
        self.sources = sources

    def clearance(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        out = np.full(p.shape[:-1], np.inf)
        for src in self.sources:
            out = np.minimum(out, src.clearance(p))
        return out

    def collision_mask(self, positions: np.ndarray, robot_radius: float) -> np.ndarray:
        return self.clearance(positions) < robot_radius


def as_source(obstacles):
    if isinstance(obstacles, Scene):
        return DiscSource(obstacles)
    if isinstance(obstacles, (DiscSource, PointSource, UnionSource)):
        return obstacles
    return PointSource(np.asarray(obstacles, dtype=float))


def first_collision_indices(states: np.ndarray, obstacles, robot_radius: float) -> np.ndarray:
    """Index of the first colliding pose per trajectory in (A, N, 3), -1 if none."""
    mask = as_source(obstacles).collision_mask(states[..., :2], robot_radius)
    idx = np.argmax(mask, axis=-1)
    return np.where(mask.any(axis=-1), idx, -1)


def first_collision(poses: PoseSequence, obstacles, robot_radius: float) -> int | None:
    idx = int(first_collision_indices(poses.states[None], obstacles, robot_radius)[0])
    return None if idx < 0 else idx


def clear_distances(states: np.ndarray, first: np.ndarray) -> np.ndarray:
    """Euclidean distance from the start to the last retained pose."""
    n = states.shape[-2]
    last = np.where(first < 0, n - 1, np.maximum(first - 1, 0))
    end = np.take_along_axis(states[..., :2], last[..., None, None], axis=-2)[..., 0, :]
    return np.linalg.norm(end - states[..., 0, :2], axis=-1)


def make_candidate(start: Pose2D, departure_angle: float, obstacles, config: TrajectoryConfig = TrajectoryConfig(),
                   path_length: float | None = None) -> TrajectoryCandidate:
    poses = generate_poses(start, departure_angle, config, path_length)
    idx = first_collision(poses, obstacles, config.robot_radius)
    kept = poses if idx is None else poses.truncated(max(idx, 1))
    dist = float(np.linalg.norm(kept.positions[-1] - kept.positions[0]))
    if idx is not None and idx == 0:
        dist = 0.0
    return TrajectoryCandidate(departure_angle, kept, dist, idx is not None)


def label_scene(scene: Scene, start: Pose2D = Pose2D(), config: TrajectoryConfig = TrajectoryConfig()) -> DistanceLabels:
    states = rollout_family(start, config.angles, config)
    first = first_collision_indices(states, scene, config.robot_radius)
    return DistanceLabels(clear_distances(states, first), config.label_threshold)
