"""Mapping runs, navigation episodes and the two-pipeline comparison."""

from __future__ import annotations

import csv
import io
import json
import math
import tempfile
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .geometry import FREE, OCCUPIED, OccupancyGrid, Pose2D, Scan2D, compose
from .metric import GlobalMetricMap, integrate_scan, metric_map_bytes
from .navigation import MetricNavigator, NavConfig, Phase, TopoNavigator, active_index, follow_step
from .planning import LocalPath, PlanConfig, Unreachable, plan_global
from .sim import (
    EpisodeConfig,
    LidarParams,
    MotionKind,
    NoiseParams,
    World,
    noisy_odometry,
    raycast_scan,
    relative_motion,
    step,
)
from .topomap import NavState, TopoConfig, TopoGraph, directory_bytes, initial_state, update_state

PIPELINES = ("topo", "metric")
STUCK_TICKS = 200


# an episode succeeds when the true final position is this close to the goal
SUCCESS_EPSILON = 0.3
# navigators stop at half of it, leaving room for their own pose error
EPISODE_NAV = NavConfig(epsilon=0.15, waypoint_radius=0.1)


class MappingAborted(RuntimeError):
    pass


# ---------------------------------------------------------------- mapping


class MappingRun:
    """Drives the agent along waypoint routes and feeds one map pipeline.

    The agent follows the route using its true pose; the pipeline only sees
    scans and (possibly noisy) odometry. ``drive`` may be called repeatedly
    to continue from where the agent stopped.
    """

    def __init__(self, world: World, start: Pose2D, pipeline: str, noise: NoiseParams = NoiseParams(),
                 lidar: LidarParams = LidarParams(), nav: NavConfig = NavConfig(),
                 topo: TopoConfig = TopoConfig(), metric_resolution: float = 0.1):
        if pipeline not in PIPELINES:
            raise ValueError(f"unknown pipeline {pipeline!r}")
        self.world = world
        self.pipeline = pipeline
        self.noise = noise
        self.lidar = lidar
        self.nav = nav
        self.topo = topo
        self.rng = noise.rng()
        self.pose = start
        self.ticks = 0
        self.traveled = 0.0
        scan = raycast_scan(world, start, lidar)
        self.graph: TopoGraph | None = None
        self.metric: GlobalMetricMap | None = None
        if pipeline == "topo":
            self.graph = TopoGraph()
            self.state: NavState = initial_state(self.graph, scan, topo)
            self.new_locations = 1
        else:
            self.metric = GlobalMetricMap(metric_resolution)
            self.estimate = start
            integrate_scan(self.metric, self.estimate, scan)

    def drive(self, waypoints) -> None:
        path = LocalPath([(p[0], p[1]) if not isinstance(p, Pose2D) else (p.x, p.y) for p in waypoints])
        if len(path) == 0:
            return
        cursor = 0
        stuck = 0
        while True:
            xy = (self.pose.x, self.pose.y)
            cursor = active_index(path, xy, cursor, self.nav.waypoint_radius)
            cmd = follow_step(self.pose.theta, xy, path, self.nav, cursor)
            if cmd.kind is MotionKind.STOP:
                return
            new = step(self.pose, cmd, self.world)
            moved = math.hypot(new.x - self.pose.x, new.y - self.pose.y)
            stuck = stuck + 1 if moved < 1e-6 else 0
            if stuck >= STUCK_TICKS:
                raise MappingAborted(f"agent stuck at ({self.pose.x:.2f}, {self.pose.y:.2f})")
            odom = noisy_odometry(relative_motion(self.pose, new), self.noise, self.rng)
            self.pose = new
            self.traveled += moved
            self.ticks += 1
            self.observe(raycast_scan(self.world, new, self.lidar), odom)

    def observe(self, scan: Scan2D, odom: Pose2D) -> None:
        if self.pipeline == "topo":
            before = len(self.graph)
            self.state = update_state(self.graph, self.state, odom, scan, None, self.topo)
            self.new_locations += len(self.graph) - before
        else:
            self.estimate = compose(self.estimate, odom)
            integrate_scan(self.metric, self.estimate, scan)

    def save(self, out_dir) -> int:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if self.pipeline == "topo":
            return self.graph.save(out / "topo")
        return self.metric.save(out / "metric.grid")


@dataclass
class MappingResult:
    pipeline: str
    map: object
    bytes: int
    ticks: int
    traveled: float
    path: Path | None = None


def run_mapping(world: World, route, pipeline: str, out_dir=None, noise: NoiseParams = NoiseParams(),
                lidar: LidarParams = LidarParams(), nav: NavConfig = NavConfig(),
                topo: TopoConfig = TopoConfig()) -> MappingResult:
    """Drive ``route`` (Pose2D list, start first) and build one pipeline's map."""
    route = list(route)
    if not route:
        raise ValueError("route must contain at least the start pose")
    run = MappingRun(world, route[0], pipeline, noise, lidar, nav, topo)
    run.drive(route[1:])
    path = None
    if out_dir is not None:
        run.save(out_dir)
        path = Path(out_dir) / ("topo" if pipeline == "topo" else "metric.grid")
    obj = run.graph if pipeline == "topo" else run.metric
    return MappingResult(pipeline, obj, map_bytes(obj), run.ticks, run.traveled, path)


def map_bytes(obj) -> int:
    """Serialized size: the graph directory for topo, the grid file for metric."""
    if isinstance(obj, GlobalMetricMap):
        return metric_map_bytes(obj)
    return topo_map_bytes(obj)


def topo_map_bytes(graph: TopoGraph) -> int:
    with tempfile.TemporaryDirectory() as tmp:
        graph.save(tmp)
        return directory_bytes(tmp)


def load_map(path, pipeline: str):
    p = Path(path)
    if pipeline == "topo":
        return TopoGraph.load(p / "topo" if (p / "topo").is_dir() else p)
    grid = OccupancyGrid.load(p / "metric.grid" if p.is_dir() else p)
    return metric_from_grid(grid)


def metric_from_grid(grid) -> GlobalMetricMap:
    """Rebuild a metric map whose thresholded view equals ``grid``."""
    m = GlobalMetricMap(grid.resolution)
    m._c0 = int(round(grid.origin.x / grid.resolution))
    m._r0 = int(round(grid.origin.y / grid.resolution))
    lo = np.zeros(grid.cells.shape)
    lo[grid.cells == FREE] = -m.clamp
    lo[grid.cells == OCCUPIED] = m.clamp
    m.log_odds = lo
    return m


# ---------------------------------------------------------------- ground truth


@lru_cache(maxsize=4)
def _truth_graph(world: World):
    free = world.truth.cells == FREE
    h, w = free.shape
    idx = np.arange(h * w).reshape(h, w)
    rows, cols, wts = [], [], []
    for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
        r0, r1 = max(0, -dr), h - max(0, dr)
        c0, c1 = max(0, -dc), w - max(0, dc)
        a = free[r0:r1, c0:c1] & free[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        if dr and dc:
            # diagonal moves may not cut a blocked corner
            a &= free[r0 + dr : r1 + dr, c0:c1] & free[r0:r1, c0 + dc : c1 + dc]
        src = idx[r0:r1, c0:c1][a]
        dst = idx[r0 + dr : r1 + dr, c0 + dc : c1 + dc][a]
        rows.append(src)
        cols.append(dst)
        wts.append(np.full(len(src), math.sqrt(2.0) if dr and dc else 1.0))
    g = coo_matrix((np.concatenate(wts), (np.concatenate(rows), np.concatenate(cols))), shape=(h * w, h * w))
    return g.tocsr()


def shortest_path_length(world: World, start, goal) -> float:
    """8-connected Dijkstra on the ground-truth grid, in meters (inf if cut off)."""
    truth = world.truth
    sc, sr = truth.coord_to_index(start[0], start[1])
    gc, gr = truth.coord_to_index(goal[0], goal[1])
    s, g = int(sr) * truth.width + int(sc), int(gr) * truth.width + int(gc)
    if s == g:
        return 0.0
    d = dijkstra(_truth_graph(world), directed=False, indices=s)
    return float(d[g]) * truth.resolution


# ---------------------------------------------------------------- episodes


@dataclass
class EpisodeResult:
    pipeline: str
    success: bool
    traveled: float
    shortest: float
    efficiency: float
    planning_times: list = field(default_factory=list)
    ticks: int = 0
    final_error: float = 0.0
    reason: str = ""
    # time spent assembling the searched grid, per planning call
    grid_times: list = field(default_factory=list)
    # edges between the start and goal locations (topo only; -1 when not applicable)
    graph_hops: int = -1

    @staticmethod
    def efficiency_of(success: bool, shortest: float, traveled: float) -> float:
        if not success:
            return 0.0
        if traveled <= 0:
            return 1.0
        return min(1.0, shortest / traveled)


def run_episode(world: World, map_obj, start: Pose2D, goal, pipeline: str, config: NavConfig = EPISODE_NAV,
                noise: NoiseParams = NoiseParams(), lidar: LidarParams = LidarParams(),
                topo: TopoConfig = TopoConfig(), plan: PlanConfig = PlanConfig(), trace_out=None,
                success_epsilon: float = SUCCESS_EPSILON) -> EpisodeResult:
    """Navigate from ``start`` to the world point ``goal`` with one pipeline.

    Success requires the navigator to report the goal reached and the true
    final position to lie within ``success_epsilon`` of the goal.
    """
    goal = (float(goal[0]), float(goal[1]))
    shortest = shortest_path_length(world, (start.x, start.y), goal)
    rng = noise.rng()
    scan = raycast_scan(world, start, lidar)
    if pipeline == "topo":
        nav = TopoNavigator(map_obj.copy(), config, topo, plan)
        nav.start(scan)
        spec = nav.resolve_goal(raycast_scan(world, Pose2D(goal[0], goal[1], 0.0), lidar))
        if spec is None:
            return EpisodeResult(pipeline, False, 0.0, shortest, 0.0, [], 0,
                                 math.dist((start.x, start.y), goal), "goal not localized")
        nav.submit(spec)
        try:
            hops = len(plan_global(nav.graph, nav.state.v_cur, spec.v_goal))
        except Unreachable:
            hops = -1
    elif pipeline == "metric":
        hops = -1
        nav = MetricNavigator(map_obj, config, plan)
        nav.start(start)
        nav.submit(goal)
    else:
        raise ValueError(f"unknown pipeline {pipeline!r}")

    pose = start
    odom = Pose2D()
    traveled = 0.0
    status = nav.status
    while True:
        cmd, status = nav.tick(scan, odom, pose)
        if status.phase in (Phase.REACHED, Phase.FAILED):
            break
        new = step(pose, cmd, world)
        odom = noisy_odometry(relative_motion(pose, new), noise, rng)
        traveled += math.hypot(new.x - pose.x, new.y - pose.y)
        pose = new
        scan = raycast_scan(world, pose, lidar)
    if trace_out is not None:
        Path(trace_out).write_text(nav.trace.to_csv())
    err = math.hypot(pose.x - goal[0], pose.y - goal[1])
    success = status.phase is Phase.REACHED and err < success_epsilon
    reason = status.reason
    if status.phase is Phase.REACHED and not success:
        reason = "reached estimate only"
    times = [t.planner_ms for t in nav.timings]
    grid_times = [t.grid_ms for t in nav.timings]
    return EpisodeResult(pipeline, success, traveled, shortest, EpisodeResult.efficiency_of(success, shortest, traveled),
                         times, nav.ticks, err, reason, grid_times, hops)


# ---------------------------------------------------------------- report


ROW_FIELDS = ("episode", "pipeline", "seed", "start_x", "start_y", "start_theta", "goal_x", "goal_y",
              "success", "reason", "ticks", "traveled", "shortest", "efficiency", "final_error", "plan_calls",
              "graph_hops")
TIMING_FIELDS = ("episode", "pipeline", "plan_calls", "median_ms", "p95_ms", "max_ms")
REPORT_VERSION = 1


@dataclass
class BenchReport:
    rows: list  # (EpisodeConfig, EpisodeResult) pairs in run order
    map_bytes: dict

    def results(self, pipeline: str) -> list[EpisodeResult]:
        return [r for _, r in self.rows if r.pipeline == pipeline]

    def aggregates(self) -> dict:
        out = {"version": REPORT_VERSION, "episodes": len(self.rows) // max(1, len(PIPELINES)), "pipelines": {}}
        for p in PIPELINES:
            res = self.results(p)
            succ = [r for r in res if r.success]
            out["pipelines"][p] = {
                "map_bytes": self.map_bytes.get(p),
                "success_count": len(succ),
                "mean_efficiency": _round(sum(r.efficiency for r in succ) / len(succ)) if succ else 0.0,
                "mean_efficiency_all": _round(sum(r.efficiency for r in res) / len(res)) if res else 0.0,
                "plan_calls": sum(len(r.planning_times) for r in res),
            }
        return out

    def timing(self) -> dict:
        out = {}
        for p in PIPELINES:
            ms = [t for r in self.results(p) for t in r.planning_times]
            grid = [t for r in self.results(p) for t in r.grid_times]
            out[p] = {
                "plan_calls": len(ms),
                "median_ms": float(np.median(ms)) if ms else 0.0,
                "p95_ms": float(np.percentile(ms, 95)) if ms else 0.0,
                "grid_median_ms": float(np.median(grid)) if grid else 0.0,
            }
        return out

    def rows_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for i, (ep, r) in enumerate(self.rows):
            w.writerow((i // len(PIPELINES), r.pipeline, ep.seed, ep.start_x, ep.start_y, ep.start_theta,
                        ep.goal_x, ep.goal_y, int(r.success), r.reason, r.ticks, _fmt(r.traveled),
                        _fmt(r.shortest), _fmt(r.efficiency), _fmt(r.final_error), len(r.planning_times),
                        r.graph_hops))
        return buf.getvalue()

    def timing_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TIMING_FIELDS)
        for i, (_, r) in enumerate(self.rows):
            ms = r.planning_times
            w.writerow((i // len(PIPELINES), r.pipeline, len(ms),
                        f"{np.median(ms):.3f}" if ms else "", f"{np.percentile(ms, 95):.3f}" if ms else "",
                        f"{max(ms):.3f}" if ms else ""))
        return buf.getvalue()

    def write(self, out_dir, timing: bool = False) -> Path:
        """Write episodes.csv and summary.json, which depend only on the inputs.

        With ``timing`` also write timing.csv and timing.json; those hold
        wall-clock measurements and differ from run to run.
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "episodes.csv").write_text(self.rows_csv())
        (out / "summary.json").write_text(json.dumps(self.aggregates(), indent=2, sort_keys=True) + "\n")
        if timing:
            (out / "timing.csv").write_text(self.timing_csv())
            (out / "timing.json").write_text(json.dumps(self.timing(), indent=2, sort_keys=True) + "\n")
        return out


def _round(x: float) -> float:
    return round(float(x), 9)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def read_report(report_dir) -> dict:
    d = Path(report_dir)
    summary = json.loads((d / "summary.json").read_text())
    timing_path = d / "timing.json"
    timing = json.loads(timing_path.read_text()) if timing_path.exists() else {}
    with open(d / "episodes.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {"summary": summary, "timing": timing, "rows": rows}


def format_summary(report: dict) -> str:
    """Table-style comparison of the two pipelines."""
    s, t = report["summary"]["pipelines"], report["timing"]
    lines = [f"{'':24}{'topo':>14}{'metric':>14}"]

    def row(label, f):
        lines.append(f"{label:24}" + "".join(f"{f(p):>14}" for p in PIPELINES))

    row("map bytes", lambda p: str(s[p]["map_bytes"]))
    row("success", lambda p: f"{s[p]['success_count']}/{report['summary']['episodes']}")
    row("mean efficiency", lambda p: f"{s[p]['mean_efficiency']:.3f}")
    row("median planning ms", lambda p: f"{t[p]['median_ms']:.2f}" if p in t else "n/a")
    row("p95 planning ms", lambda p: f"{t[p]['p95_ms']:.2f}" if p in t else "n/a")
    row("median grid build ms", lambda p: f"{t[p].get('grid_median_ms', 0.0):.2f}" if p in t else "n/a")
    return "\n".join(lines)


def compare(world: World, episodes: list[EpisodeConfig], route, config: NavConfig = EPISODE_NAV,
            maps: dict | None = None, map_noise: NoiseParams = NoiseParams(), topo: TopoConfig = TopoConfig(),
            plan: PlanConfig = PlanConfig(), progress=None) -> BenchReport:
    """Build (or reuse) both maps on ``route`` and run every episode with both pipelines."""
    if not episodes:
        raise ValueError("at least one episode is required")
    maps = dict(maps or {})
    for p in PIPELINES:
        if p not in maps:
            maps[p] = run_mapping(world, route, p, noise=map_noise, topo=topo).map
    rows = []
    for i, ep in enumerate(episodes):
        for p in PIPELINES:
            t0 = time.perf_counter()
            r = run_episode(world, maps[p], ep.start, ep.goal, p, config, ep.noise, ep.lidar, topo, plan)
            rows.append((ep, r))
            if progress:
                progress(i, p, r, time.perf_counter() - t0)
    return BenchReport(rows, {p: map_bytes(maps[p]) for p in PIPELINES})
