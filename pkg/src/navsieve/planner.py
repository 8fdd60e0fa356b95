"""Closed-loop navigation: local candidate scoring, replanning and recovery."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose2D, Scene, SensorConfig, cast_rays, clearance, DepthScan, wrap_angle
from .grid import OCCUPIED, GlobalPath, OccupancyGrid, Unreachable, plan_global, update_occupancy
from .learner import HeadKind, Model, predict_angle, predict_confidences
from .sampler import SamplerConfig, SamplerMode, gaussian_goal_bias, goal_departure_angle, sample_candidates
from .trajectory import (PointSource, PoseSequence, TrajectoryCandidate, TrajectoryConfig, UnionSource, as_source,
                         body_states, rollout_family, sample_times, to_world)


@dataclass(frozen=True)
class CostWeights:
    w_goal_heading: float = 1.0
    w_path_heading: float = 1.0
    w_path_distance: float = 2.0
    w_goal_distance: float = 2.0
    w_obstacle: float = 3.0
    nose_offset: float = 0.2
    safe_clearance: float = 0.3
    lookahead: float = 3.0

    def __post_init__(self):
        if min(self.w_goal_heading, self.w_path_heading, self.w_path_distance, self.w_goal_distance, self.w_obstacle) < 0:
            raise ValueError("cost weights must be non-negative")
        if not self.nose_offset > 0 or not self.safe_clearance > 0:
            raise ValueError("nose_offset and safe_clearance must be positive")

    def scaled(self, factor: float) -> CostWeights:
        return CostWeights(self.w_goal_heading * factor, self.w_path_heading * factor, self.w_path_distance * factor,
                           self.w_goal_distance * factor, self.w_obstacle * factor, self.nose_offset,
                           self.safe_clearance, self.lookahead)


class PlannerType(str, enum.Enum):
    EXHAUSTIVE = "exhaustive"
    LEARNED_CARTESIAN = "learned-cartesian"
    LEARNED_PERCEPTION = "learned-perception"
    NAIVE_LEARNED = "naive-learned"
    REGRESSION = "regression"


@dataclass(frozen=True)
class PlannerKind:
    type: PlannerType
    sampler: SamplerConfig | None = None
    head: HeadKind | None = None
    name: str = ""
    candidate_count: int = 200

    @property
    def uses_memory(self) -> bool:
        return self.type in (PlannerType.EXHAUSTIVE, PlannerType.LEARNED_CARTESIAN)

    @property
    def checks_collisions(self) -> bool:
        return self.type in (PlannerType.EXHAUSTIVE, PlannerType.LEARNED_CARTESIAN, PlannerType.LEARNED_PERCEPTION)


def _learned(type_, mode, name):
    return PlannerKind(type_, SamplerConfig(mode=mode), HeadKind.COLLISION_FREE, name)


PLANNERS: dict[str, PlannerKind] = {
    "exhaustive": PlannerKind(PlannerType.EXHAUSTIVE, name="exhaustive"),
    "pips-to-goal": _learned(PlannerType.LEARNED_PERCEPTION, SamplerMode.TO_GOAL, "pips-to-goal"),
    "pips-gaussian": _learned(PlannerType.LEARNED_PERCEPTION, SamplerMode.GAUSSIAN_BIAS, "pips-gaussian"),
    "cartesian-to-goal": _learned(PlannerType.LEARNED_CARTESIAN, SamplerMode.TO_GOAL, "cartesian-to-goal"),
    "cartesian-gaussian": _learned(PlannerType.LEARNED_CARTESIAN, SamplerMode.GAUSSIAN_BIAS, "cartesian-gaussian"),
    "naive": PlannerKind(PlannerType.NAIVE_LEARNED, SamplerConfig(k=1, mode=SamplerMode.NAIVE_ARGMAX),
                         HeadKind.BEST_ANGLE, "naive"),
    "regress": PlannerKind(PlannerType.REGRESSION, None, HeadKind.REGRESS_ANGLE, "regress"),
    "regress-goal": PlannerKind(PlannerType.REGRESSION, None, HeadKind.REGRESS_ANGLE_GOAL, "regress-goal"),
}


def resolve_planner(name: str, k: int | None = None, bias_sigma: float | None = None) -> PlannerKind:
    try:
        kind = PLANNERS[name]
    except KeyError:
        raise KeyError(f"unknown planner {name!r}; choose from {', '.join(PLANNERS)}") from None
    if kind.sampler is not None and kind.type is not PlannerType.NAIVE_LEARNED and (k is not None or bias_sigma is not None):
        sampler = SamplerConfig(k if k is not None else kind.sampler.k,
                                bias_sigma if bias_sigma is not None else kind.sampler.bias_sigma, kind.sampler.mode)
        kind = PlannerKind(kind.type, sampler, kind.head, kind.name, kind.candidate_count)
    elif bias_sigma is not None and kind.sampler is not None:
        kind = PlannerKind(kind.type, SamplerConfig(1, bias_sigma, kind.sampler.mode), kind.head, kind.name)
    return kind


class Recovery(str, enum.Enum):
    DISABLED = "disabled"
    GLOBAL_REPLAN = "global-replan"
    ROTATE_360 = "rotate-360"


class Outcome(str, enum.Enum):
    SUCCESS = "success"
    COLLISION = "collision"
    STUCK = "stuck"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class EpisodeConfig:
    replan_period: float = 1.0
    completion_fraction: float = 0.6
    control_step: float = 0.05
    goal_tolerance: float = 0.5
    timeout: float = 120.0
    recovery: Recovery = Recovery.DISABLED
    horizon: float = 4.0
    sensor_period: float = 0.1
    grid_resolution: float = 0.1
    max_recoveries: int = 5
    wedge_inner: float = 0.4
    wedge_depth: float = 3.0
    check_predicted_collision: bool = False
    hold_valid_plan: bool = True

    def __post_init__(self):
        object.__setattr__(self, "recovery", Recovery(self.recovery))
        if not 0 < self.completion_fraction < 1:
            raise ValueError("completion_fraction must lie in (0, 1)")
        if not self.control_step > 0:
            raise ValueError("control_step must be positive")


@dataclass(frozen=True)
class TrialResult:
    outcome: Outcome
    elapsed: float
    path_length: float
    candidates: int
    replans: int
    recoveries: int = 0
    collided_with: int | None = None  # obstacle index, -1 for a wall
    collision_seen: bool | None = None  # obstacle was ever hit by a beam before impact
    collision_in_plan_scan: bool | None = None  # ... by the scan the active plan was made from


# scoring -------------------------------------------------------------------


def local_goal(path: GlobalPath | None, goal, position, lookahead: float) -> np.ndarray:
    if path is None or len(path) < 2:
        return np.asarray(goal, dtype=float)
    _, s, _ = path.project(position)
    return path.point_at(float(s[0]) + lookahead)


def score_states(states: np.ndarray, path: GlobalPath | None, goal, weights: CostWeights, source,
                 robot_radius: float = 0.18, max_path_length: float = 5.0):
    """Cost per rollout in (A, N, 3); rejected (colliding) rollouts cost inf.

    Returns (costs, terms) where terms maps each term name to its (A,) values.
    """
    states = np.asarray(states, dtype=float)
    if states.ndim == 2:
        states = states[None]
    if states.shape[1] == 0:
        raise ValueError("candidate has no poses")
    goal = np.asarray(goal, dtype=float)
    source = as_source(source)
    pos = states[..., :2]
    rejected = source.collision_mask(pos, robot_radius).any(axis=-1)

    end = states[:, -1, :2]
    heading = states[:, -1, 2]
    to_goal = goal - end
    goal_heading = np.abs(wrap_angle(heading - np.arctan2(to_goal[:, 1], to_goal[:, 0]))) / math.pi
    goal_heading = np.where(np.hypot(to_goal[:, 0], to_goal[:, 1]) > 1e-12, goal_heading, 0.0)

    target = local_goal(path, goal, states[0, 0, :2], weights.lookahead)
    goal_distance = np.linalg.norm(end - target, axis=1) / max_path_length
    if path is None or len(path) < 2:
        path_heading = goal_heading
        path_distance = goal_distance
    else:
        nose = end + weights.nose_offset * np.column_stack([np.cos(heading), np.sin(heading)])
        _, _, tangent = path.project(nose)
        path_heading = np.abs(wrap_angle(heading - tangent)) / math.pi
        near, _, _ = path.project(end)
        path_distance = np.linalg.norm(end - near, axis=1) / max_path_length

    gap = source.clearance(pos) - robot_radius
    obstacle = (np.maximum(0.0, weights.safe_clearance - gap) / weights.safe_clearance).max(axis=1)

    terms = {
        "goal_heading": goal_heading,
        "path_heading": path_heading,
        "path_distance": path_distance,
        "goal_distance": goal_distance,
        "obstacle": obstacle,
    }
    cost = (weights.w_goal_heading * goal_heading + weights.w_path_heading * path_heading
            + weights.w_path_distance * path_distance + weights.w_goal_distance * goal_distance
            + weights.w_obstacle * obstacle)
    return np.where(rejected, np.inf, cost), terms


def score_candidate(candidate, global_path: GlobalPath | None, goal, weights: CostWeights, obstacles,
                    robot_radius: float = 0.18, max_path_length: float = 5.0) -> float | None:
    """Weighted five-term cost, or None when any pose collides."""
    states = candidate.poses.states if isinstance(candidate, TrajectoryCandidate) else (
        candidate.states if isinstance(candidate, PoseSequence) else candidate)
    cost, _ = score_states(states, global_path, goal, weights, as_source(obstacles), robot_radius, max_path_length)
    return None if not np.isfinite(cost[0]) else float(cost[0])


# navigation state ------------------------------------------------------------


@dataclass
class Execution:
    """The trajectory currently being driven, as a velocity profile from ``start``."""

    angle: float
    start: Pose2D
    length: float
    begin_step: int
    plan_visible: frozenset = frozenset()
    next_check: float = math.inf  # execution time of the next scheduled replan

    def pose_at(self, t: float, config: TrajectoryConfig) -> np.ndarray:
        t = min(t, self.length / config.forward_speed)
        return to_world(body_states([self.angle], [t], config), self.start)[0, 0]


@dataclass
class NavState:
    scene: Scene
    goal: np.ndarray
    pose: Pose2D
    grid: OccupancyGrid
    config: EpisodeConfig
    trajectory: TrajectoryConfig
    sensor: SensorConfig
    weights: CostWeights
    models: dict = field(default_factory=dict)
    path: GlobalPath | None = None
    avoid: np.ndarray | None = None  # cells the global planner must route around; never seen by local checks
    scan: DepthScan | None = None
    visible: frozenset = frozenset()
    seen: set = field(default_factory=set)
    step: int = 0
    candidates: int = 0
    replans: int = 0
    recoveries: int = 0
    path_length: float = 0.0

    @property
    def time(self) -> float:
        return self.step * self.config.control_step

    def sense(self) -> None:
        dist, hit = cast_rays(self.scene, self.pose.position, self.pose.heading + self.sensor.beam_angles)
        self.scan = DepthScan(np.clip(dist, self.sensor.min_range, self.sensor.max_range), self.sensor)
        in_range = (hit >= 0) & (dist < self.sensor.max_range)
        self.visible = frozenset(int(i) for i in np.unique(hit[in_range]))
        self.seen |= self.visible
        update_occupancy(self.grid, self.pose, self.scan)

    def replan_global(self) -> None:
        """Recompute the global path from the sensed grid plus any avoided cells.

        Raises Unreachable when no route remains."""
        grid = self.grid
        if self.avoid is not None:
            grid = grid.copy()
            grid.cells[self.avoid] = OCCUPIED
        self.path = plan_global(grid, self.pose.position, self.goal, self.trajectory.robot_radius)

    def local_goal(self) -> np.ndarray:
        return local_goal(self.path, self.goal, self.pose.position, self.weights.lookahead)

    def horizon(self) -> float:
        lg = self.local_goal()
        reach = float(np.linalg.norm(lg - self.pose.position))
        return float(np.clip(reach, self.trajectory.step_length, self.config.horizon))

    def model_for(self, head: HeadKind) -> Model:
        try:
            return self.models[head]
        except KeyError:
            raise KeyError(f"planner needs a {head.value} model") from None


def _source_for(nav: NavState, kind: PlannerKind):
    if kind.uses_memory:
        hits, bare = nav.grid.surface_points()
        # a recorded hit only samples the surface once per cell, so keep a quarter-cell margin around it;
        # cells without one could hold the obstacle anywhere, hence the half-diagonal
        res = nav.grid.resolution
        return UnionSource(PointSource(hits, res / 4.0), PointSource(bare, res * math.sqrt(0.5)))
    return PointSource(nav.scan.endpoints(nav.pose), 0.0)


def plan_local(nav: NavState, kind: PlannerKind) -> TrajectoryCandidate | None:
    """Pick the trajectory to drive next, or None when every candidate collides."""
    if nav.scan is None:
        raise ValueError("plan_local needs a current scan")
    tc = nav.trajectory
    nav.replans += 1
    lg = nav.local_goal()
    if np.allclose(lg, nav.pose.position):
        lg = nav.goal
    goal_angle = 0.0 if np.allclose(lg, nav.pose.position) else goal_departure_angle(nav.pose, lg, tc.angle_range)
    length = nav.horizon()

    if kind.type is PlannerType.REGRESSION:
        angle = predict_angle(nav.model_for(kind.head), nav.scan, goal_angle)
        return _unscored(nav, angle, length)
    if kind.type is PlannerType.NAIVE_LEARNED:
        model = nav.model_for(kind.head)
        conf = predict_confidences(model, nav.scan)
        weighted = gaussian_goal_bias(conf, model.angles, goal_angle, kind.sampler.bias_sigma)
        best = int(np.lexsort((np.arange(len(weighted)), np.abs(model.angles - goal_angle), -weighted))[0])
        return _unscored(nav, float(model.angles[best]), length)

    if kind.type is PlannerType.EXHAUSTIVE:
        angles = np.linspace(-tc.angle_range, tc.angle_range, kind.candidate_count)
    else:
        model = nav.model_for(kind.head)
        conf = predict_confidences(model, nav.scan)
        chosen = sample_candidates(conf, model.angles, goal_angle, kind.sampler)
        angles = model.angles[list(chosen.indices)]

    states = rollout_family(nav.pose, angles, tc, length)
    nav.candidates += len(angles)
    costs, _ = score_states(states, nav.path, nav.goal, nav.weights, _source_for(nav, kind), tc.robot_radius,
                            tc.max_path_length)
    if not np.isfinite(costs).any():
        return None
    best = int(np.lexsort((np.arange(len(angles)), np.abs(angles - goal_angle), costs))[0])
    seq = PoseSequence(states[best], sample_times(tc, length) * tc.forward_speed)
    return TrajectoryCandidate(float(angles[best]), seq, float(np.linalg.norm(seq.positions[-1] - seq.positions[0])), False)


def _unscored(nav: NavState, angle: float, length: float) -> TrajectoryCandidate:
    tc = nav.trajectory
    states = rollout_family(nav.pose, [angle], tc, length)[0]
    seq = PoseSequence(states, sample_times(tc, length) * tc.forward_speed)
    return TrajectoryCandidate(angle, seq, float(np.linalg.norm(states[-1, :2] - states[0, :2])), False)


# recovery --------------------------------------------------------------------


def _rotate(nav: NavState, delta: float) -> bool:
    """Turn in place by ``delta`` radians at the maximum yaw rate, sensing as we
    go. Returns False if the episode timed out mid-turn."""
    cfg = nav.config
    rate = nav.trajectory.max_yaw_rate * cfg.control_step
    sense_every = max(1, round(cfg.sensor_period / cfg.control_step))
    remaining = abs(delta)
    sign = 1.0 if delta >= 0 else -1.0
    heading = nav.pose.heading
    while remaining > 1e-12:
        turn = min(rate, remaining)
        remaining -= turn
        heading += sign * turn
        nav.pose = Pose2D(nav.pose.x, nav.pose.y, heading)
        nav.step += 1
        if nav.time >= cfg.timeout:
            return False
        if nav.step % sense_every == 0 or remaining <= 1e-12:
            nav.sense()
    return True


def mark_blocked_wedge(nav: NavState) -> None:
    """Mark the departure-angle sector ahead of the robot as blocked for global planning."""
    cfg, grid = nav.config, nav.grid
    ix, iy = np.meshgrid(np.arange(grid.shape[0]), np.arange(grid.shape[1]), indexing="ij")
    centers = grid.centers(ix.ravel(), iy.ravel())
    body = nav.pose.to_body(centers)
    r = np.hypot(body[:, 0], body[:, 1])
    bearing = np.arctan2(body[:, 1], body[:, 0])
    inside = (r >= cfg.wedge_inner) & (r <= cfg.wedge_inner + cfg.wedge_depth) & (np.abs(bearing) <= nav.trajectory.angle_range)
    if nav.avoid is None:
        nav.avoid = np.zeros(grid.shape, dtype=bool)
    nav.avoid[ix.ravel()[inside], iy.ravel()[inside]] = True


def recover(nav: NavState, mode: Recovery) -> str:
    """React to a failed local plan. Returns "resume", "stuck" or "timeout"."""
    mode = Recovery(mode)
    if mode is Recovery.DISABLED or nav.recoveries >= nav.config.max_recoveries:
        return "stuck"
    nav.recoveries += 1
    if mode is Recovery.ROTATE_360:
        return "resume" if _rotate(nav, 2.0 * math.pi) else "timeout"

    mark_blocked_wedge(nav)
    try:
        nav.replan_global()
    except Unreachable:
        return "stuck"
    target = nav.local_goal()
    if np.allclose(target, nav.pose.position):
        return "resume"
    bearing = wrap_angle(math.atan2(target[1] - nav.pose.y, target[0] - nav.pose.x) - nav.pose.heading)
    return "resume" if _rotate(nav, bearing) else "timeout"


# episode -------------------------------------------------------------------

_NOT_PLANNED = object()


def _collision_target(scene: Scene, position: np.ndarray, robot_radius: float) -> int:
    if scene.obstacles:
        d = np.linalg.norm(scene.centers - position, axis=1) - scene.radii
        i = int(np.argmin(d))
        if d[i] < robot_radius:
            return i
    return -1


def run_episode(scene: Scene, start: Pose2D, goal, kind: PlannerKind, config: EpisodeConfig = EpisodeConfig(),
                models: dict | Model | None = None, *, weights: CostWeights = CostWeights(),
                trajectory: TrajectoryConfig = TrajectoryConfig(), sensor: SensorConfig = SensorConfig()) -> TrialResult:
    """Drive from ``start`` to ``goal`` until success, collision, stuck or timeout."""
    if isinstance(models, Model):
        models = {models.head: models}
    goal = np.asarray(goal, dtype=float)
    nav = NavState(scene, goal, start, OccupancyGrid(scene.bounds, config.grid_resolution), config, trajectory,
                   sensor, weights, dict(models or {}))
    try:
        nav.replan_global()
    except Unreachable:
        nav.path = None
    nav.sense()

    rr = trajectory.robot_radius
    sense_every = max(1, round(config.sensor_period / config.control_step))
    failures_here = 0

    def result(outcome: Outcome, **extra) -> TrialResult:
        return TrialResult(outcome, round(nav.time, 10), nav.path_length, nav.candidates, nav.replans,
                           nav.recoveries, **extra)

    if clearance(scene, start.position) < rr:
        return result(Outcome.COLLISION, collided_with=_collision_target(scene, start.position, rr),
                      collision_seen=False, collision_in_plan_scan=False)
    if np.linalg.norm(start.position - goal) <= config.goal_tolerance:
        return result(Outcome.SUCCESS)

    def start_execution(cand: TrajectoryCandidate) -> Execution:
        length = float(cand.poses.cumulative_length[-1])
        if not kind.uses_memory:  # scan-driven planners replan partway along the trajectory
            first_check = config.completion_fraction * length / trajectory.forward_speed
        else:
            first_check = config.replan_period
        return Execution(cand.departure_angle, nav.pose, length, nav.step, nav.visible, first_check)

    active: Execution | None = None
    cand = _NOT_PLANNED
    while True:
        if active is None:
            if nav.time >= config.timeout:
                return result(Outcome.TIMEOUT)
            if cand is _NOT_PLANNED:
                cand = plan_local(nav, kind)
            if cand is None:
                cand = _NOT_PLANNED
                failures_here += 1
                if config.recovery is Recovery.ROTATE_360 and failures_here > 1:
                    return result(Outcome.STUCK)  # rotating again shows the same scene
                action = recover(nav, config.recovery)
                if action == "stuck":
                    return result(Outcome.STUCK)
                if action == "timeout":
                    return result(Outcome.TIMEOUT)
                continue
            active = start_execution(cand)
            cand = _NOT_PLANNED

        nav.step += 1
        tau = (nav.step - active.begin_step) * config.control_step
        x, y, h = active.pose_at(tau, trajectory)
        moved = math.hypot(x - nav.pose.x, y - nav.pose.y)
        nav.pose = Pose2D(x, y, h)
        nav.path_length += moved
        if moved > 0:
            failures_here = 0

        if clearance(scene, nav.pose.position) < rr:
            target = _collision_target(scene, nav.pose.position, rr)
            return result(Outcome.COLLISION, collided_with=target,
                          collision_seen=target in nav.seen, collision_in_plan_scan=target in active.plan_visible)
        if math.hypot(x - goal[0], y - goal[1]) <= config.goal_tolerance:
            return result(Outcome.SUCCESS)
        if nav.time >= config.timeout:
            return result(Outcome.TIMEOUT)

        sensed = False
        if nav.step % sense_every == 0:
            nav.sense()
            sensed = True

        exhausted = tau >= active.length / trajectory.forward_speed - 1e-9
        due = tau >= active.next_check - 1e-9
        if (not due and sensed and config.check_predicted_collision
                and kind.type is PlannerType.LEARNED_PERCEPTION):
            due = _predicted_collision(nav, active, tau)
        if due or exhausted:
            if not sensed:
                nav.sense()
            if not exhausted and config.hold_valid_plan and kind.checks_collisions:
                cand = plan_local(nav, kind)
                if cand is None and _remainder_clear(nav, kind, active, tau):
                    # nothing new is acceptable but the current plan still is: keep it
                    active.next_check = tau + config.replan_period
                    cand = _NOT_PLANNED
                    continue
            active = None


def _remainder_clear(nav: NavState, kind: PlannerKind, active: Execution, tau: float) -> bool:
    tc = nav.trajectory
    times = sample_times(tc, active.length)
    times = np.concatenate([[tau], times[times > tau]])
    rest = to_world(body_states([active.angle], times, tc), active.start)[0]
    return not _source_for(nav, kind).collision_mask(rest[:, :2], tc.robot_radius).any()


def _predicted_collision(nav: NavState, active: Execution, tau: float) -> bool:
    tc = nav.trajectory
    times = sample_times(tc, active.length)
    times = times[times > tau]
    if not len(times):
        return False
    rest = to_world(body_states([active.angle], times, tc), active.start)[0]
    source = PointSource(nav.scan.endpoints(nav.pose), 0.0)
    return bool(source.collision_mask(rest[:, :2], tc.robot_radius).any())
