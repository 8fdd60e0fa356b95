import math

import numpy as np
import pytest

from navsieve.geometry import Obstacle, Pose2D, Scene, SensorConfig, WorldSpec, clearance, generate_scene
from navsieve.grid import GlobalPath, OccupancyGrid, plan_global
from navsieve.planner import (PLANNERS, CostWeights, EpisodeConfig, NavState, Outcome, PlannerType, Recovery,
                              plan_local, recover, resolve_planner, run_episode, score_candidate, score_states)
from navsieve.trajectory import TrajectoryConfig, generate_poses, rollout_family

from fakes import all_heads, constant_model

TC = TrajectoryConfig()
BOUNDS = (0.0, -3.0, 10.0, 3.0)
EMPTY = Scene((), BOUNDS)
STRAIGHT = GlobalPath([[1.0, 0.0], [10.0, 0.0]])


def nav_state(scene, pose, goal, models=None, config=EpisodeConfig()):
    nav = NavState(scene, np.asarray(goal, float), pose, OccupancyGrid(scene.bounds), config, TC, SensorConfig(),
                   CostWeights(), dict(models or {}))
    nav.replan_global()
    nav.sense()
    return nav


def wall(x, y0, y1):
    return [Obstacle(x, y, 0.15) for y in np.arange(y0, y1 + 1e-9, 0.25)]


def cul_de_sac():
    """A pocket open toward the start, closed ahead, with free corridors either side."""
    obs = wall(4.0, -1.5, 1.5)
    obs += [Obstacle(x, s * 1.5, 0.15) for x in np.arange(2.5, 4.0, 0.25) for s in (-1, 1)]
    return Scene(tuple(obs), (0.0, -4.0, 10.0, 4.0))


# scoring -------------------------------------------------------------------


def test_straight_candidate_on_straight_path_has_zero_heading_and_path_terms():
    states = generate_poses(Pose2D(1.0, 0.0, 0.0), 0.0).states
    cost, terms = score_states(states, STRAIGHT, (10.0, 0.0), CostWeights(), EMPTY)
    for name in ("goal_heading", "path_heading", "path_distance", "obstacle"):
        assert terms[name][0] == 0.0
    # the end pose is 2 m past the 3 m lookahead point
    assert terms["goal_distance"][0] == pytest.approx(2.0 / 5.0)
    assert cost[0] == pytest.approx(2.0 * 0.4)


def test_colliding_candidate_rejected_for_any_weights():
    scene = Scene((Obstacle(3.0, 0.0, 0.3),), BOUNDS)
    seq = generate_poses(Pose2D(1.0, 0.0, 0.0), 0.0)
    for w in (CostWeights(), CostWeights(0, 0, 0, 0, 0), CostWeights(w_obstacle=100.0)):
        assert score_candidate(seq, STRAIGHT, (10.0, 0.0), w, scene) is None


def test_farther_from_path_costs_more():
    w = CostWeights(0.0, 0.0, 2.0, 0.0, 0.0)
    near = np.array([[5.0, 0.5, 0.0]])
    far = np.array([[5.0, 1.0, 0.0]])
    a = score_candidate(near, STRAIGHT, (10.0, 0.0), w, EMPTY)
    b = score_candidate(far, STRAIGHT, (10.0, 0.0), w, EMPTY)
    assert b > a > 0


def test_obstacle_term_grows_as_clearance_shrinks():
    states = generate_poses(Pose2D(1.0, 0.0, 0.0), 0.0).states
    costs = [score_candidate(states, STRAIGHT, (10.0, 0.0), CostWeights(), Scene((Obstacle(3.0, y, 0.2),), BOUNDS))
             for y in (1.0, 0.6, 0.5, 0.45)]
    assert costs[0] < costs[1] < costs[2] < costs[3]


def test_doubling_weights_doubles_costs_and_keeps_argmin():
    scene = generate_scene(WorldSpec(seed=11))
    states = rollout_family(Pose2D(), TC.angles, TC)
    path = GlobalPath([[0.0, 0.0], [6.0, 1.5]])
    base, _ = score_states(states, path, (6.0, 1.5), CostWeights(), scene)
    doubled, _ = score_states(states, path, (6.0, 1.5), CostWeights().scaled(2.0), scene)
    finite = np.isfinite(base)
    assert finite.any() and np.array_equal(finite, np.isfinite(doubled))
    assert np.allclose(doubled[finite], 2.0 * base[finite])
    assert np.argmin(base) == np.argmin(doubled)


def test_no_path_falls_back_to_goal_terms():
    states = np.array([[5.0, 1.0, 0.3]])
    _, terms = score_states(states, None, (9.0, 0.0), CostWeights(), EMPTY)
    assert terms["path_heading"][0] == terms["goal_heading"][0]
    assert terms["path_distance"][0] == terms["goal_distance"][0]


def test_weights_validated():
    with pytest.raises(ValueError):
        CostWeights(w_obstacle=-1.0)
    with pytest.raises(ValueError):
        CostWeights(nose_offset=0.0)
    with pytest.raises(ValueError):
        EpisodeConfig(completion_fraction=1.0)


# local planning ------------------------------------------------------------


@pytest.mark.parametrize("name", list(PLANNERS))
def test_empty_world_selects_straight_ahead(name):
    nav = nav_state(EMPTY, Pose2D(1.0, 0.0, 0.0), (9.0, 0.0), all_heads(0.9, 0.0))
    cand = plan_local(nav, PLANNERS[name])
    step = 0.8 / 199 if name == "exhaustive" else 0.016
    assert abs(cand.departure_angle) <= step + 1e-12


def test_candidate_budget_per_replan():
    nav = nav_state(EMPTY, Pose2D(1.0, 0.0, 0.0), (9.0, 0.3), all_heads())
    plan_local(nav, PLANNERS["exhaustive"])
    assert nav.candidates == 200
    for name in ("cartesian-gaussian", "pips-gaussian", "cartesian-to-goal", "pips-to-goal"):
        before = nav.candidates
        plan_local(nav, PLANNERS[name])
        assert nav.candidates - before <= 6
    before = nav.candidates
    plan_local(nav, PLANNERS["naive"])
    assert nav.candidates == before


def test_wall_ahead_gives_no_candidate():
    scene = Scene(tuple(wall(2.0, -3.0, 3.0)), BOUNDS)
    nav = nav_state(scene, Pose2D(1.0, 0.0, 0.0), (9.0, 0.0), all_heads())
    for name in ("exhaustive", "cartesian-gaussian", "pips-to-goal"):
        assert plan_local(nav, PLANNERS[name]) is None


def test_learned_planner_needs_model():
    nav = nav_state(EMPTY, Pose2D(1.0, 0.0, 0.0), (9.0, 0.0))
    with pytest.raises(KeyError, match="collision-free"):
        plan_local(nav, PLANNERS["pips-gaussian"])


def test_resolve_planner():
    kind = resolve_planner("cartesian-gaussian", k=3, bias_sigma=0.5)
    assert kind.sampler.k == 3 and kind.sampler.bias_sigma == 0.5 and kind.type is PlannerType.LEARNED_CARTESIAN
    assert resolve_planner("naive", k=7).sampler.k == 1
    with pytest.raises(KeyError):
        resolve_planner("astar")


# episodes ------------------------------------------------------------------


@pytest.mark.parametrize("name", ["exhaustive", "cartesian-gaussian", "pips-to-goal", "naive", "regress"])
def test_empty_world_reaches_goal_by_straight_line(name):
    cfg = EpisodeConfig(goal_tolerance=0.1)
    res = run_episode(EMPTY, Pose2D(1.0, 0.0, 0.0), (9.0, 0.0), PLANNERS[name], cfg, all_heads())
    assert res.outcome is Outcome.SUCCESS
    assert res.path_length == pytest.approx(8.0, rel=0.05)
    assert res.elapsed == pytest.approx(res.path_length / 0.5, abs=0.06)


def ring_scene():
    angles = np.linspace(0, 2 * np.pi, 24, endpoint=False)
    # 24 discs of radius 0.16 on a 1.2 m ring touch their neighbours
    return Scene(tuple(Obstacle(5 + 1.2 * math.cos(a), 1.2 * math.sin(a), 0.16) for a in angles), BOUNDS)


@pytest.mark.parametrize("name", list(PLANNERS))
def test_ring_never_succeeds(name):
    res = run_episode(ring_scene(), Pose2D(5.0, 0.0, 0.0), (9.0, 0.0), PLANNERS[name],
                      EpisodeConfig(timeout=30.0), all_heads())
    assert res.outcome in (Outcome.STUCK, Outcome.COLLISION)


def test_episode_is_deterministic():
    scene = generate_scene(WorldSpec(obstacle_count=6, seed=5, bounds=BOUNDS, start=Pose2D(1.0, 0.0, 0.0)))
    runs = [run_episode(scene, Pose2D(1.0, 0.0, 0.0), (9.0, 0.0), PLANNERS[n], models=all_heads())
            for n in ("exhaustive", "exhaustive", "pips-gaussian", "pips-gaussian")]
    assert runs[0] == runs[1] and runs[2] == runs[3]


def test_exhaustive_budget_accounting():
    scene = generate_scene(WorldSpec(obstacle_count=4, seed=9, bounds=BOUNDS, start=Pose2D(1.0, 0.0, 0.0)))
    res = run_episode(scene, Pose2D(1.0, 0.0, 0.0), (9.0, 0.0), PLANNERS["exhaustive"])
    assert res.replans > 0 and res.candidates == 200 * res.replans
    res = run_episode(scene, Pose2D(1.0, 0.0, 0.0), (9.0, 0.0), PLANNERS["cartesian-to-goal"], models=all_heads())
    assert res.candidates <= 6 * res.replans


def test_naive_drives_into_obstacle_it_never_checks():
    scene = Scene((Obstacle(4.0, 0.0, 0.3),), BOUNDS)
    models = {h: constant_model(h, 0.0 if h.is_regression else 1.0) for h in all_heads()}
    res = run_episode(scene, Pose2D(1.0, 0.0, 0.0), (9.0, 0.0), PLANNERS["naive"], models=models)
    assert res.outcome is Outcome.COLLISION and res.collided_with == 0 and res.collision_seen


@pytest.mark.parametrize("seed", range(4))
def test_checked_planners_only_hit_unseen_obstacles(seed):
    scene = generate_scene(WorldSpec(obstacle_count=7, seed=seed, bounds=BOUNDS, start=Pose2D(1.0, 0.0, 0.0)))
    for name in ("exhaustive", "cartesian-gaussian", "pips-gaussian"):
        res = run_episode(scene, Pose2D(1.0, 0.0, 0.0), (9.0, 0.0), PLANNERS[name], models=all_heads())
        if res.outcome is Outcome.COLLISION:
            seen = res.collision_seen if PLANNERS[name].uses_memory else res.collision_in_plan_scan
            assert not seen


def test_start_in_collision_and_at_goal():
    scene = Scene((Obstacle(1.1, 0.0, 0.2),), BOUNDS)
    assert run_episode(scene, Pose2D(1.0, 0.0, 0.0), (9.0, 0.0), PLANNERS["exhaustive"]).outcome is Outcome.COLLISION
    assert run_episode(EMPTY, Pose2D(8.8, 0.0, 0.0), (9.0, 0.0), PLANNERS["exhaustive"]).outcome is Outcome.SUCCESS


def test_timeout():
    res = run_episode(EMPTY, Pose2D(1.0, 0.0, 0.0), (9.0, 0.0), PLANNERS["exhaustive"], EpisodeConfig(timeout=3.0))
    assert res.outcome is Outcome.TIMEOUT and res.elapsed == pytest.approx(3.0)


# recovery ------------------------------------------------------------------


def test_cul_de_sac_has_a_route():
    scene = cul_de_sac()
    grid = OccupancyGrid(scene.bounds)
    ix, iy = np.meshgrid(np.arange(grid.shape[0]), np.arange(grid.shape[1]), indexing="ij")
    c = grid.centers(ix.ravel(), iy.ravel())
    grid.mark_occupied(c[clearance(scene, c) < 0.05])
    path = plan_global(grid, (1.0, 0.0), (9.0, 0.0))
    assert np.abs(path.points[:, 1]).max() > 1.5  # the only route leaves the pocket sideways


def test_cul_de_sac_recovery_modes():
    scene, start, goal = cul_de_sac(), Pose2D(1.0, 0.0, 0.0), (9.0, 0.0)
    kind = PLANNERS["exhaustive"]
    disabled = run_episode(scene, start, goal, kind, EpisodeConfig(recovery=Recovery.DISABLED))
    assert disabled.outcome is Outcome.STUCK and disabled.recoveries == 0
    replan = run_episode(scene, start, goal, kind, EpisodeConfig(recovery=Recovery.GLOBAL_REPLAN))
    assert replan.outcome is Outcome.SUCCESS and replan.recoveries >= 1
    spin = run_episode(scene, start, goal, kind, EpisodeConfig(recovery=Recovery.ROTATE_360))
    assert spin.outcome is Outcome.STUCK


def test_rotate_in_front_of_wall_faces_same_scene():
    scene = Scene(tuple(wall(2.5, -3.0, 3.0)), BOUNDS)
    nav = nav_state(scene, Pose2D(1.0, 0.0, 0.0), (9.0, 0.0), all_heads(),
                    EpisodeConfig(recovery=Recovery.ROTATE_360))
    kind = PLANNERS["pips-gaussian"]
    assert plan_local(nav, kind) is None
    before = nav.scan.ranges.copy()
    assert recover(nav, Recovery.ROTATE_360) == "resume"
    assert math.isclose(math.cos(nav.pose.heading), 1.0, abs_tol=1e-9)
    assert np.allclose(nav.scan.ranges, before, atol=1e-9)
    assert plan_local(nav, kind) is None
    res = run_episode(scene, Pose2D(1.0, 0.0, 0.0), (9.0, 0.0), kind, EpisodeConfig(recovery=Recovery.ROTATE_360),
                      all_heads())
    assert res.outcome is Outcome.STUCK and res.path_length == 0.0


def test_disabled_recovery_is_immediately_stuck():
    nav = nav_state(EMPTY, Pose2D(1.0, 0.0, 0.0), (9.0, 0.0))
    assert recover(nav, Recovery.DISABLED) == "stuck"
    assert nav.recoveries == 0 and nav.step == 0
