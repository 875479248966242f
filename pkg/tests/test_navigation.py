import math

import numpy as np
import pytest

from toponav.bench import metric_from_grid
from toponav.geometry import FREE, IDENTITY, OCCUPIED, OccupancyGrid, Pose2D
from toponav.navigation import (
    TRACE_FIELDS,
    EmptyPath,
    GoalSpec,
    MetricNavigator,
    NavConfig,
    Phase,
    TopoNavigator,
    follow_step,
    goal_reached,
    plan_with_snapping,
    turn_magnitude,
)
from toponav.planning import LocalPath, PlanConfig, build_local_grid
from toponav.sim import LidarParams, MotionKind, raycast_scan, relative_motion, step
from toponav.topomap import NavState, TopoGraph, add_location, connect
from toponav.worlds import square_room

LIDAR = LidarParams()


def test_goal_reached_examples():
    goal = GoalSpec(2, Pose2D(1.0, 1.0, 0.5))
    assert goal_reached(NavState(2, Pose2D(1.0, 1.0, 0.5)), goal, 0.3)
    assert not goal_reached(NavState(3, Pose2D(1.0, 1.0, 0.5)), goal, 0.3)
    assert goal_reached(NavState(2, Pose2D(1.29, 1.0, -2.0)), goal, 0.3)
    assert not goal_reached(NavState(2, Pose2D(1.31, 1.0, 0.5)), goal, 0.3)


def test_follow_step_examples():
    path = LocalPath([(0.0, 0.0), (2.0, 0.0)])
    assert follow_step(0.0, (0.0, 0.0), path).kind is MotionKind.FORWARD
    left = LocalPath([(0.0, 0.0), (0.0, 2.0)])
    assert follow_step(0.0, (0.0, 0.0), left).kind is MotionKind.TURN_LEFT
    assert follow_step(math.pi, (0.0, 0.0), left).kind is MotionKind.TURN_RIGHT
    # the active waypoint is the last one; being within reach of it ends the path
    assert follow_step(0.0, (1.85, 0.05), path, cursor=1).kind is MotionKind.STOP
    assert follow_step(0.0, (1.85, 0.05), path).kind is MotionKind.TURN_RIGHT
    with pytest.raises(EmptyPath):
        follow_step(0.0, (0.0, 0.0), LocalPath([]))


def test_forward_only_when_aligned():
    rng = np.random.default_rng(0)
    cfg = NavConfig()
    for _ in range(500):
        xy = tuple(rng.uniform(-5, 5, 2))
        wp = tuple(rng.uniform(-5, 5, 2))
        heading = rng.uniform(-math.pi, math.pi)
        cmd = follow_step(heading, xy, LocalPath([wp]), cfg)
        alpha = math.remainder(math.atan2(wp[1] - xy[1], wp[0] - xy[0]) - heading, 2 * math.pi)
        if cmd.kind is MotionKind.FORWARD:
            assert abs(alpha) <= cfg.angle_threshold
            assert cmd.magnitude <= cfg.forward_speed
        elif cmd.kind is MotionKind.TURN_LEFT:
            assert alpha > cfg.angle_threshold and 0 < cmd.magnitude <= cfg.turn_speed
        elif cmd.kind is MotionKind.TURN_RIGHT:
            assert alpha < -cfg.angle_threshold and 0 < cmd.magnitude <= cfg.turn_speed


def test_config_validation():
    with pytest.raises(ValueError):
        NavConfig(forward_speed=0.0)
    with pytest.raises(ValueError):
        NavConfig(epsilon=0.15, waypoint_radius=0.2)


def test_turn_magnitude_finishes_on_bearing():
    assert turn_magnitude(1.0, 0.4) == pytest.approx(0.2)
    assert turn_magnitude(0.8, 0.4) == pytest.approx(0.4)
    assert turn_magnitude(0.1, 0.4) == pytest.approx(0.1)


def test_snapping_keeps_true_start():
    cells = np.full((20, 40), FREE, dtype=np.uint8)
    cells[0, :] = cells[-1, :] = OCCUPIED
    g = OccupancyGrid(0.1, IDENTITY, cells)
    path = plan_with_snapping(g, (0.5, 0.15), (3.5, 1.0), PlanConfig())
    assert path.waypoints[0] == (0.5, 0.15) and path.waypoints[-1] == (3.5, 1.0)


def simulate(nav, world, pose, max_ticks=2000):
    """Closed loop with exact odometry; returns (phases, final pose, traveled)."""
    phases = []
    odom = IDENTITY
    scan = raycast_scan(world, pose, LIDAR)
    traveled = 0.0
    for _ in range(max_ticks):
        cmd, status = nav.tick(scan, odom, pose)
        phases.append(status.phase)
        if status.phase in (Phase.REACHED, Phase.FAILED):
            return phases, pose, traveled, status
        new = step(pose, cmd, world)
        odom = relative_motion(pose, new)
        traveled += math.dist((pose.x, pose.y), (new.x, new.y))
        pose = new
        scan = raycast_scan(world, pose, LIDAR)
    raise AssertionError("navigator neither reached nor failed")


def test_nearby_goal_reached_in_a_few_ticks():
    w = square_room(10.0)
    start = Pose2D(5.0, 5.0, 0.0)
    g = TopoGraph()
    add_location(g, raycast_scan(w, start, LIDAR))
    nav = TopoNavigator(g)
    nav.start(raycast_scan(w, start, LIDAR))
    nav.submit(GoalSpec(0, Pose2D(0.1, 0.0, 0.0)))
    phases, *_ = simulate(nav, w, start)
    assert phases[-1] is Phase.REACHED and len(phases) <= 3
    nav = TopoNavigator(g, NavConfig(epsilon=0.15, waypoint_radius=0.1))
    nav.start(raycast_scan(w, start, LIDAR))
    nav.submit(GoalSpec(0, Pose2D(0.0, 1.0, 0.0)))
    phases, pose, traveled, _ = simulate(nav, w, start)
    assert phases[-1] is Phase.REACHED and len(phases) <= 15
    assert math.dist((pose.x, pose.y), (5.0, 6.0)) < 0.3


def corridor_graph(world, connected=True):
    a, b = Pose2D(9.0, 20.0, 0.0), Pose2D(15.0, 20.0, 0.0)
    g = TopoGraph()
    add_location(g, raycast_scan(world, a, LIDAR))
    add_location(g, raycast_scan(world, b, LIDAR))
    if connected:
        connect(g, 0, 1, relative_motion(a, b))
    return g, a, b


def test_goal_across_one_edge(world):
    g, a, b = corridor_graph(world)
    nav = TopoNavigator(g, NavConfig(epsilon=0.15, waypoint_radius=0.1))
    start = Pose2D(9.0, 20.0, 2.0)
    assert nav.start(raycast_scan(world, start, LIDAR)).v_cur == 0
    nav.submit(GoalSpec(1, Pose2D(1.0, 0.0, 0.0)))
    assert nav.status.phase is Phase.PLANNING
    phases, pose, traveled, _ = simulate(nav, world, start)
    assert Phase.FOLLOWING in phases and phases[-1] is Phase.REACHED
    assert set(phases[:-1]) == {Phase.FOLLOWING}
    assert math.isfinite(traveled) and 6.0 <= traveled <= 9.0
    assert math.dist((pose.x, pose.y), (16.0, 20.0)) < 0.3
    assert nav.state.v_cur == 1 and g.num_edges() == 1 and len(g) == 2
    # every local plan was made on a grid whose cells it does not cross
    assert nav.timings


def test_tick_is_deterministic(world):
    traces = []
    for _ in range(2):
        g, _, _ = corridor_graph(world)
        nav = TopoNavigator(g)
        start = Pose2D(9.0, 20.0, 0.0)
        nav.start(raycast_scan(world, start, LIDAR))
        nav.submit(GoalSpec(1, IDENTITY))
        simulate(nav, world, start)
        traces.append([row[:5] for row in nav.trace.rows])
    assert traces[0] == traces[1]


def test_disconnected_goal_fails(world):
    g, a, b = corridor_graph(world, connected=False)
    nav = TopoNavigator(g)
    nav.start(raycast_scan(world, a, LIDAR))
    nav.submit(GoalSpec(1, IDENTITY))
    phases, _, traveled, status = simulate(nav, world, a)
    assert phases[-1] is Phase.FAILED and status.reason == "Unreachable" and traveled == 0.0


def test_removed_edge_forces_global_replan(world):
    g, a, b = corridor_graph(world)
    nav = TopoNavigator(g)
    nav.start(raycast_scan(world, a, LIDAR))
    nav.submit(GoalSpec(1, IDENTITY))
    cmd, status = nav.tick(raycast_scan(world, a, LIDAR), IDENTITY)
    assert status.phase is Phase.FOLLOWING
    g.remove_edge(0, 1)
    cmd, status = nav.tick(raycast_scan(world, a, LIDAR), IDENTITY)
    assert status.phase is Phase.FAILED and status.reason == "Unreachable"
    assert cmd.kind is MotionKind.STOP


def test_submit_rejects_unknown_goal(world):
    g, a, _ = corridor_graph(world)
    nav = TopoNavigator(g)
    with pytest.raises(KeyError):
        nav.submit(GoalSpec(9))
    with pytest.raises(RuntimeError):
        nav.tick(raycast_scan(world, a, LIDAR), IDENTITY)


def test_metric_navigator_in_known_room():
    w = square_room(10.0)
    m = metric_from_grid(w.truth)
    nav = MetricNavigator(m, NavConfig(epsilon=0.15, waypoint_radius=0.1))
    start = Pose2D(2.0, 2.0, 0.0)
    nav.start(start)
    nav.submit((7.0, 6.0))
    phases, pose, traveled, _ = simulate(nav, w, start)
    assert phases[-1] is Phase.REACHED
    assert math.dist((pose.x, pose.y), (7.0, 6.0)) < 0.15
    assert traveled <= 1.1 * math.dist((2.0, 2.0), (7.0, 6.0))
    assert nav.trace.to_csv().splitlines()[0] == ",".join(TRACE_FIELDS)


def test_metric_navigator_fails_on_sealed_goal():
    cells = np.full((40, 40), FREE, dtype=np.uint8)
    cells[:, 20] = OCCUPIED
    w_grid = OccupancyGrid(0.1, IDENTITY, cells)
    nav = MetricNavigator(metric_from_grid(w_grid))
    nav.start(Pose2D(0.5, 2.0, 0.0))
    nav.submit((3.5, 2.0))
    cmd, status = nav.tick(None, IDENTITY)
    assert status.phase is Phase.FAILED and status.reason == "GoalUnreachable"


def test_followed_paths_avoid_occupied_cells(world):
    g, a, b = corridor_graph(world)
    nav = TopoNavigator(g, NavConfig(epsilon=0.15, waypoint_radius=0.1))
    pose = Pose2D(9.0, 20.0, 2.0)
    nav.start(raycast_scan(world, pose, LIDAR))
    nav.submit(GoalSpec(1, Pose2D(1.0, 0.0, 0.0)))
    odom = IDENTITY
    checked = 0
    for _ in range(500):
        cmd, status = nav.tick(raycast_scan(world, pose, LIDAR), odom)
        if status.phase is not Phase.FOLLOWING:
            break
        if nav.local is not None:
            grid, _ = build_local_grid(g, nav.state.v_cur, nav.plan_config)
            for p, q in zip(nav.local.waypoints, nav.local.waypoints[1:]):
                t = np.linspace(0.0, 1.0, max(2, int(math.dist(p, q) / (grid.resolution / 4)) + 2))
                vals = grid.lookup(p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))
                assert not (vals == OCCUPIED).any()
            checked += 1
        new = step(pose, cmd, world)
        odom = relative_motion(pose, new)
        pose = new
    assert status.phase is Phase.REACHED and checked > 10
