"""Goal executive: path following, goal checks, and per-tick navigation servers."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import IDENTITY, Pose2D, Scan2D, compose, inverse, normalize_angle, translation_norm
from .metric import GlobalMetricMap
from .perception import NoMatch, match_scans, overlap
from .planning import (
    GlobalPath,
    GoalUnreachable,
    LocalPath,
    PlanConfig,
    StartInObstacle,
    Unreachable,
    build_local_grid,
    next_target,
    plan_global,
    theta_star,
    traversable,
)
from .sim import MotionCommand, MotionKind
from .topomap import NavState, TopoConfig, TopoGraph, add_location, update_state


class EmptyPath(ValueError):
    pass


@dataclass(frozen=True)
class GoalSpec:
    v_goal: int
    t_goal: Pose2D = IDENTITY


@dataclass(frozen=True)
class NavConfig:
    epsilon: float = 0.3
    angle_threshold: float = 0.35
    forward_speed: float = 0.25
    turn_speed: float = 0.4
    replan_period: int = 10
    max_ticks: int = 3000
    waypoint_radius: float = 0.2

    def __post_init__(self):
        for name in ("epsilon", "angle_threshold", "forward_speed", "turn_speed", "replan_period",
                     "max_ticks", "waypoint_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        # a final waypoint counted as passed outside the goal tolerance would stop the robot short for good
        if not self.waypoint_radius < self.epsilon:
            raise ValueError("waypoint_radius must be smaller than epsilon")


class Phase(str, Enum):
    PLANNING = "planning"
    FOLLOWING = "following"
    REACHED = "reached"
    FAILED = "failed"


@dataclass(frozen=True)
class NavStatus:
    phase: Phase
    reason: str = ""


def goal_reached(state: NavState, goal: GoalSpec, epsilon: float) -> bool:
    if state.v_cur != goal.v_goal:
        return False
    return translation_norm(compose(inverse(goal.t_goal), state.t_cur)) < epsilon


# ---------------------------------------------------------------- following


def active_index(path: LocalPath, xy, cursor: int, radius: float) -> int:
    """First waypoint at or after ``cursor`` farther than ``radius`` from xy.

    Returns len(path) when every remaining waypoint is within reach.
    """
    i = max(0, cursor)
    while i < len(path) and math.dist(path.waypoints[i], xy) <= radius:
        i += 1
    return i


def turn_magnitude(angle: float, turn_speed: float) -> float:
    """Size of the next turn so that whole ``turn_speed`` steps finish the rest.

    The remainder goes first: turning 1.0 rad at 0.4 rad/tick yields
    0.2, 0.4, 0.4 and ends exactly on the bearing rather than leaving a
    residual error just under the forward threshold.
    """
    k = math.ceil(angle / turn_speed - 1e-9) - 1
    return angle - k * turn_speed


def follow_step(robot_heading: float, robot_xy, path: LocalPath, config: NavConfig = NavConfig(),
                cursor: int = 0) -> MotionCommand:
    """Turn towards the active waypoint, or drive at it once roughly aligned."""
    if len(path) == 0:
        raise EmptyPath("cannot follow an empty path")
    i = active_index(path, robot_xy, cursor, config.waypoint_radius)
    if i >= len(path):
        return MotionCommand.stop()
    wx, wy = path.waypoints[i]
    dx, dy = wx - robot_xy[0], wy - robot_xy[1]
    alpha = normalize_angle(math.atan2(dy, dx) - robot_heading)
    if alpha > config.angle_threshold:
        return MotionCommand(MotionKind.TURN_LEFT, turn_magnitude(alpha, config.turn_speed))
    if alpha < -config.angle_threshold:
        return MotionCommand(MotionKind.TURN_RIGHT, turn_magnitude(-alpha, config.turn_speed))
    return MotionCommand(MotionKind.FORWARD, min(config.forward_speed, math.hypot(dx, dy)))


# ---------------------------------------------------------------- trace


TRACE_FIELDS = ("tick", "phase", "v_cur", "action", "magnitude", "plan_ms")


@dataclass
class Trace:
    """Per-tick log; ``plan_ms`` is empty on ticks without planning."""

    rows: list = field(default_factory=list)

    def add(self, tick: int, status: NavStatus, v_cur, cmd: MotionCommand, plan_ms):
        self.rows.append((tick, status.phase.value, "" if v_cur is None else v_cur, cmd.kind.value,
                          f"{cmd.magnitude:.6f}", "" if plan_ms is None else f"{plan_ms:.3f}"))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        w.writerows(self.rows)
        return buf.getvalue()


def _snap(trav: np.ndarray, grid, xy, max_dist: float):
    """Nearest traversable cell center to xy within max_dist, or None."""
    col, row = grid.coord_to_index(*xy)
    r = int(math.ceil(max_dist / grid.resolution))
    h, w = trav.shape
    r0, r1 = max(0, row - r), min(h, row + r + 1)
    c0, c1 = max(0, col - r), min(w, col + r + 1)
    if r0 >= r1 or c0 >= c1:
        return None
    rr, cc = np.nonzero(trav[r0:r1, c0:c1])
    if len(rr) == 0:
        return None
    x, y = grid.index_to_coord(cc + c0, rr + r0)
    d = np.hypot(x - xy[0], y - xy[1])
    k = int(np.lexsort((cc, rr, d))[0])
    if d[k] > max_dist:
        return None
    return (float(x[k]), float(y[k]))


def plan_with_snapping(grid, start, goal, config: PlanConfig, snap_dist: float = 1.0) -> LocalPath:
    """Theta* that tolerates start or goal lying in inflated or unknown cells.

    Either endpoint is moved to the nearest traversable cell within
    ``snap_dist``; a moved start keeps the true start as first waypoint.
    """
    trav = traversable(grid, config.inflation_radius)
    s, g = tuple(start), tuple(goal)
    try:
        return theta_star(trav, grid, s, g)
    except StartInObstacle:
        s2 = _snap(trav, grid, s, snap_dist)
        if s2 is None:
            raise
    except GoalUnreachable:
        s2 = s
    g2 = g
    try:
        path = theta_star(trav, grid, s2, g2)
    except GoalUnreachable:
        g2 = _snap(trav, grid, g, snap_dist)
        if g2 is None:
            raise
        path = theta_star(trav, grid, s2, g2)
    wps = list(path.waypoints)
    if s2 != s:
        wps.insert(0, s)
    return LocalPath(wps)


# ---------------------------------------------------------------- servers


@dataclass
class PlanTiming:
    """Wall-clock of one planning round.

    ``planner_ms`` covers the planners proper (graph search plus grid
    search); ``grid_ms`` is the time spent assembling the grid they search.
    """

    global_ms: float
    local_ms: float
    grid_ms: float = 0.0

    @property
    def planner_ms(self) -> float:
        return self.global_ms + self.local_ms

    @property
    def total_ms(self) -> float:
        return self.global_ms + self.local_ms + self.grid_ms


def resolve_scan(graph: TopoGraph, topo: TopoConfig, scan: Scan2D):
    """Best (location id, pose in it) for a scan taken anywhere in the map, or None.

    Each location is tried together with its neighbours, fused into one
    grid, so a scan taken between two locations still finds most of its
    returns covered. The winning pose is then handed to whichever of
    those locations has its origin closest. Ties go to the lower id.
    """
    best = None
    for v in sorted(graph.locations):
        grid, offset = build_local_grid(graph, v, PlanConfig(local_window=None))
        try:
            m = match_scans(scan, grid, topo.resolve, prior=inverse(offset))
        except NoMatch:
            continue
        in_union = inverse(m.rel_pose)
        if overlap(scan, grid, in_union) < topo.overlap_threshold:
            continue
        if best is None or m.score > best[0]:
            best = (m.score, v, compose(inverse(offset), in_union))
    if best is None:
        return None
    _, v, pose = best
    choices = [(translation_norm(pose), v, pose)]
    for u in graph.neighbors(v):
        in_u = compose(inverse(graph.edge(v, u).t_uv), pose)
        choices.append((translation_norm(in_u), u, in_u))
    _, lid, pose = min(choices, key=lambda c: (c[0], c[1]))
    return lid, pose


class TopoNavigator:
    """Goal action server over a location graph.

    Each tick feeds the observation to ``update_state``, checks the goal,
    replans globally when the location changed or the path lost an edge,
    replans locally every ``replan_period`` ticks or when the target
    moved, and finally emits a follower command.
    """

    def __init__(self, graph: TopoGraph, config: NavConfig = NavConfig(), topo: TopoConfig = TopoConfig(),
                 plan: PlanConfig = PlanConfig()):
        self.graph = graph
        self.config = config
        self.topo = topo
        self.plan_config = plan
        self.state: NavState | None = None
        self.goal: GoalSpec | None = None
        self.path: GlobalPath | None = None
        self.local: LocalPath | None = None
        self._offset = IDENTITY
        self._cursor = 0
        self._target: Pose2D | None = None
        self._plan_v = None
        self._since_local = 0
        self.ticks = 0
        self.timings: list[PlanTiming] = []
        self.trace = Trace()
        self.status = NavStatus(Phase.PLANNING)

    # goal submission -------------------------------------------------

    def start(self, scan: Scan2D) -> NavState:
        """Place the first observation in the graph.

        With no placement the scan becomes a new, unconnected location and
        any goal elsewhere is unreachable.
        """
        found = resolve_scan(self.graph, self.topo, scan)
        if found is None:
            self.state = NavState(add_location(self.graph, scan, self.topo), IDENTITY, "new_location")
        else:
            self.state = NavState(found[0], found[1], "relocalized")
        return self.state

    def submit(self, goal: GoalSpec) -> None:
        if goal.v_goal not in self.graph.locations:
            raise KeyError(f"unknown goal location {goal.v_goal}")
        self.goal = goal
        self.path = None
        self.local = None
        self.status = NavStatus(Phase.PLANNING)

    def resolve_goal(self, goal_scan: Scan2D) -> GoalSpec | None:
        """Goal location and pose from a scan taken at the goal point."""
        found = resolve_scan(self.graph, self.topo, goal_scan)
        return None if found is None else GoalSpec(*found)

    # per tick ----------------------------------------------------------

    def tick(self, scan: Scan2D, odom_delta: Pose2D, true_pose=None):
        if self.goal is None or self.state is None:
            raise RuntimeError("start() and submit() must precede tick()")
        self.ticks += 1
        cmd, status, plan_ms = self._tick(scan, odom_delta)
        self.status = status
        self.trace.add(self.ticks, status, self.state.v_cur, cmd, plan_ms)
        return cmd, status

    def _tick(self, scan, odom_delta):
        cfg = self.config
        if self.ticks > 1 or odom_delta != IDENTITY:
            route = self.path if self.path else None
            self.state = update_state(self.graph, self.state, odom_delta, scan, route, self.topo)
        if goal_reached(self.state, self.goal, cfg.epsilon):
            return MotionCommand.stop(), NavStatus(Phase.REACHED), None
        if self.ticks > cfg.max_ticks:
            return MotionCommand.stop(), NavStatus(Phase.FAILED, "max_ticks"), None

        v = self.state.v_cur
        g_ms = l_ms = b_ms = 0.0
        planned = False
        if self.path is None or self._plan_v != v or not self._path_intact():
            t0 = time.perf_counter()
            try:
                self.path = plan_global(self.graph, v, self.goal.v_goal)
            except Unreachable:
                return MotionCommand.stop(), NavStatus(Phase.FAILED, "Unreachable"), None
            g_ms = (time.perf_counter() - t0) * 1e3
            planned = True
            self.local = None
        target = next_target(self.state, self.goal, self.path)
        self._since_local += 1
        if (self.local is None or self._plan_v != v or target != self._target
                or self._since_local >= cfg.replan_period):
            t0 = time.perf_counter()
            grid, offset = build_local_grid(self.graph, v, self.plan_config)
            b_ms = (time.perf_counter() - t0) * 1e3
            start = offset.apply(np.array([[self.state.t_cur.x, self.state.t_cur.y]]))[0]
            goal = offset.apply(np.array([[target.x, target.y]]))[0]
            t0 = time.perf_counter()
            try:
                self.local = plan_with_snapping(grid, start, goal, self.plan_config)
            except (GoalUnreachable, StartInObstacle):
                # no grid path: head straight for the target and let the next replan recover
                self.local = LocalPath([tuple(start), tuple(goal)])
            l_ms = (time.perf_counter() - t0) * 1e3
            planned = True
            self._offset = offset
            self._cursor = 0
            self._target = target
            self._plan_v = v
            self._since_local = 0
        if planned:
            self.timings.append(PlanTiming(g_ms, l_ms, b_ms))

        xy = self._offset.apply(np.array([[self.state.t_cur.x, self.state.t_cur.y]]))[0]
        self._cursor = active_index(self.local, xy, self._cursor, cfg.waypoint_radius)
        cmd = follow_step(self.state.t_cur.theta + self._offset.theta, xy, self.local, cfg, self._cursor)
        if cmd.kind is MotionKind.STOP:
            # local path exhausted without reaching the goal; replan next tick
            self.local = None
        plan_ms = (g_ms + l_ms + b_ms) if planned else None
        return cmd, NavStatus(Phase.FOLLOWING), plan_ms

    def _path_intact(self) -> bool:
        if self.path is None:
            return False
        edges = self.path.edges
        if edges and edges[0].u != self.state.v_cur:
            return False
        return all(self.graph.has_edge(e.u, e.v) for e in edges)


class MetricNavigator:
    """Dead-reckoning navigator over a global metric map."""

    def __init__(self, gmap: GlobalMetricMap, config: NavConfig = NavConfig(), plan: PlanConfig = PlanConfig()):
        self.map = gmap
        self.config = config
        self.plan_config = plan
        self.pose: Pose2D | None = None
        self.goal: tuple[float, float] | None = None
        self.local: LocalPath | None = None
        self._cursor = 0
        self._since = 0
        self.ticks = 0
        self.timings: list[PlanTiming] = []
        self.trace = Trace()
        self.status = NavStatus(Phase.PLANNING)

    def start(self, pose: Pose2D) -> None:
        self.pose = pose

    def submit(self, goal_xy) -> None:
        self.goal = (float(goal_xy[0]), float(goal_xy[1]))
        self.local = None
        self.status = NavStatus(Phase.PLANNING)

    def tick(self, scan: Scan2D, odom_delta: Pose2D, true_pose=None):
        self.ticks += 1
        cmd, status, plan_ms = self._tick(odom_delta)
        self.status = status
        self.trace.add(self.ticks, status, None, cmd, plan_ms)
        return cmd, status

    def _tick(self, odom_delta):
        cfg = self.config
        self.pose = compose(self.pose, odom_delta)
        if math.hypot(self.pose.x - self.goal[0], self.pose.y - self.goal[1]) < cfg.epsilon:
            return MotionCommand.stop(), NavStatus(Phase.REACHED), None
        if self.ticks > cfg.max_ticks:
            return MotionCommand.stop(), NavStatus(Phase.FAILED, "max_ticks"), None
        plan_ms = None
        self._since += 1
        if self.local is None or self._since >= cfg.replan_period:
            # the same steps as plan_metric, timed separately: threshold the map, then search it
            t0 = time.perf_counter()
            grid = self.map.to_grid()
            b_ms = (time.perf_counter() - t0) * 1e3
            t0 = time.perf_counter()
            try:
                self.local = plan_with_snapping(grid, (self.pose.x, self.pose.y), self.goal, self.plan_config)
            except (GoalUnreachable, StartInObstacle) as exc:
                return MotionCommand.stop(), NavStatus(Phase.FAILED, type(exc).__name__), None
            l_ms = (time.perf_counter() - t0) * 1e3
            plan_ms = l_ms + b_ms
            self.timings.append(PlanTiming(0.0, l_ms, b_ms))
            self._cursor = 0
            self._since = 0
        xy = (self.pose.x, self.pose.y)
        self._cursor = active_index(self.local, xy, self._cursor, cfg.waypoint_radius)
        cmd = follow_step(self.pose.theta, xy, self.local, cfg, self._cursor)
        if cmd.kind is MotionKind.STOP:
            self.local = None
        return cmd, NavStatus(Phase.FOLLOWING), plan_ms
