"""Planar world model: disc obstacles inside a rectangle, clearance queries and
a raycast depth sensor."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

Rect = tuple[float, float, float, float]  # xmin, ymin, xmax, ymax


def wrap_angle(theta):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    wrapped = np.mod(np.asarray(theta, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    wrapped = np.where(wrapped <= -math.pi, wrapped + 2.0 * math.pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Pose2D:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def to_world(self, points: np.ndarray) -> np.ndarray:
        """Map body-frame points (N, 2) into the world frame."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        pts = np.asarray(points, dtype=float)
        x = self.x + c * pts[..., 0] - s * pts[..., 1]
        y = self.y + s * pts[..., 0] + c * pts[..., 1]
        return np.stack([x, y], axis=-1)

    def to_body(self, points: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.heading), math.sin(self.heading)
        pts = np.asarray(points, dtype=float)
        dx, dy = pts[..., 0] - self.x, pts[..., 1] - self.y
        return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=-1)


@dataclass(frozen=True)
class Obstacle:
    x: float
    y: float
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"obstacle radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class WorldSpec:
    """Recipe for a random scene.

    ``spawn_region`` is expressed in the frame of ``start`` as
    (longitudinal_min, lateral_min, longitudinal_max, lateral_max).
    """

    bounds: Rect = (-2.0, -8.0, 12.0, 8.0)
    spawn_region: Rect = (1.0, -3.0, 5.0, 3.0)
    obstacle_count: int = 3
    obstacle_radius: float = 0.28
    seed: int = 0
    start: Pose2D = field(default_factory=Pose2D)

    def __post_init__(self):
        if self.obstacle_count < 0:
            raise ValueError("obstacle_count must be >= 0")
        if not self.obstacle_radius > 0:
            raise ValueError("obstacle_radius must be positive")
        xmin, ymin, xmax, ymax = self.bounds
        if xmax <= xmin or ymax <= ymin:
            raise ValueError(f"empty bounds {self.bounds}")
        lo_x, lo_y, hi_x, hi_y = self.spawn_region
        if hi_x < lo_x or hi_y < lo_y:
            raise ValueError(f"inverted spawn region {self.spawn_region}")


@dataclass(frozen=True)
class Scene:
    obstacles: tuple[Obstacle, ...]
    bounds: Rect
    sectors: dict[str, Rect] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        xmin, ymin, xmax, ymax = self.bounds
        for ob in self.obstacles:
            if not (xmin <= ob.x <= xmax and ymin <= ob.y <= ymax):
                raise ValueError(f"obstacle center {ob} outside bounds {self.bounds}")
        centers = np.array([[o.x, o.y] for o in self.obstacles], dtype=float).reshape(-1, 2)
        radii = np.array([o.radius for o in self.obstacles], dtype=float)
        object.__setattr__(self, "_centers", centers)
        object.__setattr__(self, "_radii", radii)

    @property
    def centers(self) -> np.ndarray:
        return self._centers

    @property
    def radii(self) -> np.ndarray:
        return self._radii

    def mirrored(self, about: Pose2D = Pose2D()) -> Scene:
        """Reflect the scene across the heading axis of ``about``."""
        if self.obstacles:
            body = about.to_body(self.centers)
            body[:, 1] *= -1.0
            world = about.to_world(body)
        else:
            world = np.zeros((0, 2))
        obs = tuple(Obstacle(float(p[0]), float(p[1]), o.radius) for p, o in zip(world, self.obstacles))
        if about.heading == 0.0:
            xmin, ymin, xmax, ymax = self.bounds
            bounds = (xmin, 2 * about.y - ymax, xmax, 2 * about.y - ymin)
        else:
            bounds = self.bounds
        return Scene(obs, bounds)

    def with_obstacles(self, extra) -> Scene:
        return Scene(self.obstacles + tuple(extra), self.bounds, self.sectors)


@dataclass(frozen=True)
class SensorConfig:
    beam_count: int = 140
    fov: float = 1.0
    max_range: float = 4.5
    min_range: float = 0.45

    def __post_init__(self):
        if self.beam_count < 2:
            raise ValueError("beam_count must be >= 2")
        if not self.fov > 0:
            raise ValueError("fov must be positive")
        if not 0 <= self.min_range < self.max_range:
            raise ValueError("need 0 <= min_range < max_range")

    @property
    def beam_angles(self) -> np.ndarray:
        i = np.arange(self.beam_count)
        return self.fov * (i / (self.beam_count - 1) - 0.5)


@dataclass(frozen=True)
class DepthScan:
    ranges: np.ndarray
    config: SensorConfig

    def __post_init__(self):
        ranges = np.asarray(self.ranges, dtype=float)
        if ranges.shape != (self.config.beam_count,):
            raise ValueError(f"scan length {ranges.shape} != beam_count {self.config.beam_count}")
        ranges.setflags(write=False)
        object.__setattr__(self, "ranges", ranges)

    def __eq__(self, other):
        return (
            isinstance(other, DepthScan)
            and self.config == other.config
            and np.array_equal(self.ranges, other.ranges)
        )

    def endpoints(self, pose: Pose2D, hits_only: bool = True) -> np.ndarray:
        """World-frame beam endpoints; beams at max range are dropped by default."""
        ang = self.config.beam_angles
        pts = np.stack([self.ranges * np.cos(ang), self.ranges * np.sin(ang)], axis=1)
        if hits_only:
            pts = pts[self.ranges < self.config.max_range]
        return pose.to_world(pts)


def generate_scene(spec: WorldSpec) -> Scene:
    """Place ``obstacle_count`` discs uniformly in the spawn region."""
    rng = np.random.default_rng(spec.seed)
    lo_x, lo_y, hi_x, hi_y = spec.spawn_region
    local = np.column_stack(
        [
            rng.uniform(lo_x, hi_x, spec.obstacle_count) if hi_x > lo_x else np.full(spec.obstacle_count, lo_x),
            rng.uniform(lo_y, hi_y, spec.obstacle_count) if hi_y > lo_y else np.full(spec.obstacle_count, lo_y),
        ]
    )
    world = spec.start.to_world(local).reshape(-1, 2)
    xmin, ymin, xmax, ymax = spec.bounds
    world[:, 0] = np.clip(world[:, 0], xmin, xmax)
    world[:, 1] = np.clip(world[:, 1], ymin, ymax)
    obstacles = tuple(Obstacle(float(x), float(y), spec.obstacle_radius) for x, y in world)
    return Scene(obstacles, spec.bounds)


def boundary_clearance(bounds: Rect, points: np.ndarray) -> np.ndarray:
    """Signed distance from points to the nearest wall; negative outside."""
    xmin, ymin, xmax, ymax = bounds
    p = np.asarray(points, dtype=float)
    return np.minimum.reduce([p[..., 0] - xmin, xmax - p[..., 0], p[..., 1] - ymin, ymax - p[..., 1]])


def obstacle_clearance(scene: Scene, points: np.ndarray) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    if not scene.obstacles:
        return np.full(p.shape[:-1], np.inf)
    d = np.linalg.norm(p[..., None, :] - scene.centers, axis=-1) - scene.radii
    return d.min(axis=-1)


def clearance(scene: Scene, point) -> float | np.ndarray:
    """Distance from ``point`` to the nearest obstacle surface or wall.

    Accepts a single (2,) point or an (..., 2) array.
    """
    p = np.asarray(point, dtype=float)
    c = np.minimum(obstacle_clearance(scene, p), boundary_clearance(scene.bounds, p))
    if p.ndim == 1:
        return float(c)
    return c


def cast_rays(scene: Scene, origin: np.ndarray, angles: np.ndarray):
    """Exact ray/disc and ray/wall intersection.

    Returns (distances, hit_index) with hit_index == -1 for wall hits. Rays from
    inside an obstacle report distance 0.
    """
    o = np.asarray(origin, dtype=float)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)

    xmin, ymin, xmax, ymax = scene.bounds
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(dirs[:, 0] > 0, (xmax - o[0]) / dirs[:, 0], np.where(dirs[:, 0] < 0, (xmin - o[0]) / dirs[:, 0], np.inf))
        ty = np.where(dirs[:, 1] > 0, (ymax - o[1]) / dirs[:, 1], np.where(dirs[:, 1] < 0, (ymin - o[1]) / dirs[:, 1], np.inf))
    dist = np.maximum(np.minimum(tx, ty), 0.0)
    hit = np.full(len(angles), -1, dtype=int)
    if not scene.obstacles:
        return dist, hit

    rel = scene.centers - o  # (M, 2)
    # elementwise rather than a matmul so each (beam, obstacle) value rounds the same whatever the obstacle count
    b = dirs[:, :1] * rel[:, 0] + dirs[:, 1:] * rel[:, 1]  # (B, M) projection of center on the ray
    c = np.sum(rel * rel, axis=1) - scene.radii**2  # (M,)
    disc = b * b - c
    with np.errstate(invalid="ignore"):
        t = b - np.sqrt(disc)
    inside = c <= 0
    t = np.where(inside[None, :], 0.0, t)
    valid = (disc >= 0) & ((t >= 0) | inside[None, :])
    t = np.where(valid, t, np.inf)
    best = np.argmin(t, axis=1)
    tbest = t[np.arange(len(angles)), best]
    closer = tbest < dist
    dist = np.where(closer, tbest, dist)
    hit = np.where(closer, best, hit)
    return dist, hit


def raycast_scan(scene: Scene, pose: Pose2D, config: SensorConfig = SensorConfig()) -> DepthScan:
    dist, _ = cast_rays(scene, pose.position, pose.heading + config.beam_angles)
    return DepthScan(np.clip(dist, config.min_range, config.max_range), config)


def visible_obstacles(scene: Scene, pose: Pose2D, config: SensorConfig = SensorConfig()) -> set[int]:
    """Indices of obstacles struck by at least one in-range beam."""
    dist, hit = cast_rays(scene, pose.position, pose.heading + config.beam_angles)
    mask = (hit >= 0) & (dist < config.max_range)
    return set(int(i) for i in hit[mask])


# world files ---------------------------------------------------------------


class WorldFileError(ValueError):
    pass


def parse_world(text: str, source: str = "<world>") -> Scene:
    """Parse the line-oriented world format (bounds / obstacle / sector)."""
    bounds = None
    obstacles = []
    sectors: dict[str, Rect] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            if parts[0] == "bounds" and len(parts) == 5:
                bounds = tuple(float(v) for v in parts[1:])
            elif parts[0] == "obstacle" and len(parts) == 4:
                obstacles.append(Obstacle(*(float(v) for v in parts[1:])))
            elif parts[0] == "sector" and len(parts) == 6:
                sectors[parts[1]] = tuple(float(v) for v in parts[2:])
            else:
                raise WorldFileError(f"{source}:{lineno}: unrecognised directive {line!r}")
        except ValueError as exc:
            if isinstance(exc, WorldFileError):
                raise
            raise WorldFileError(f"{source}:{lineno}: {exc}") from exc
    if bounds is None:
        raise WorldFileError(f"{source}: missing bounds directive")
    try:
        return Scene(tuple(obstacles), bounds, sectors)
    except ValueError as exc:
        raise WorldFileError(f"{source}: {exc}") from exc


def load_world(path) -> Scene:
    path = Path(path)
    return parse_world(path.read_text(), str(path))


def format_world(scene: Scene) -> str:
    lines = ["bounds " + " ".join(repr(float(v)) for v in scene.bounds)]
    for ob in scene.obstacles:
        lines.append(f"obstacle {ob.x!r} {ob.y!r} {ob.radius!r}")
    for name, rect in scene.sectors.items():
        lines.append(f"sector {name} " + " ".join(repr(float(v)) for v in rect))
    return "\n".join(lines) + "\n"
