"""Built-in worlds, mapping routes and episode suites."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .geometry import FREE, OCCUPIED, OccupancyGrid, Pose2D
from .sim import EpisodeConfig, World

DEFAULT_RESOLUTION = 0.1


class _Carver:
    def __init__(self, width_m: float, height_m: float, res: float):
        self.res = res
        self.cells = np.full((round(height_m / res), round(width_m / res)), OCCUPIED, dtype=np.uint8)
        self.xs = np.arange(self.cells.shape[1]) * res
        self.ys = np.arange(self.cells.shape[0]) * res

    def _mask(self, x0, y0, x1, y1):
        cols = (self.xs >= min(x0, x1)) & (self.xs <= max(x0, x1))
        rows = (self.ys >= min(y0, y1)) & (self.ys <= max(y0, y1))
        return np.ix_(rows, cols)

    def carve(self, x0, y0, x1, y1):
        self.cells[self._mask(x0, y0, x1, y1)] = FREE

    def fill(self, x0, y0, x1, y1):
        self.cells[self._mask(x0, y0, x1, y1)] = OCCUPIED

    def grid(self) -> OccupancyGrid:
        # seal the border so rays and robots never leave the raster
        self.cells[0, :] = self.cells[-1, :] = OCCUPIED
        self.cells[:, 0] = self.cells[:, -1] = OCCUPIED
        return OccupancyGrid(self.res, Pose2D(), self.cells)


# corridors as (x0, y0, x1, y1) free rectangles, meters
_CORRIDORS = [
    (2.0, 19.0, 58.0, 21.0),  # main east-west spine
    (5.0, 6.0, 7.0, 20.0),  # west branch, south
    (17.0, 20.0, 19.0, 35.0),  # loop, west leg
    (17.0, 33.0, 43.0, 35.0),  # loop, top
    (41.0, 20.0, 43.0, 35.0),  # loop, east leg
    (29.0, 5.0, 31.0, 20.0),  # middle branch, south
    (47.0, 4.0, 49.0, 20.0),  # east branch, south
    (53.0, 20.0, 55.0, 35.0),  # east branch, north
]
_ROOMS = [
    (2.5, 1.5, 10.0, 7.0),
    (25.0, 1.5, 35.0, 5.5),
    (50.0, 34.0, 58.0, 38.5),
]
_WALL_DEPTHS = (0.0, 0.0, 0.3, 0.6, 0.9)
_PILLARS = [
    (7.5, 3.5, 8.0, 4.0),
    (27.0, 3.0, 27.5, 3.5),
    (32.5, 3.5, 33.0, 4.0),
    (56.0, 36.5, 56.5, 37.0),
]


def default_world(seed: int = 7) -> World:
    """Branched-corridor maze, 60 m x 40 m at 0.1 m, with one loop.

    Corridor walls are textured from ``seed``: each side is cut into
    segments of random length recessed by a random depth, the way door
    frames, alcoves and cabinets break up real walls. Without it straight
    corridors of equal width are indistinguishable to a range sensor.
    """
    c = _Carver(60.0, 40.0, DEFAULT_RESOLUTION)
    for rect in _CORRIDORS + _ROOMS:
        c.carve(*rect)
    rng = np.random.default_rng(seed)
    for x0, y0, x1, y1 in _CORRIDORS:
        horizontal = (x1 - x0) > (y1 - y0)
        length = (x1 - x0) if horizontal else (y1 - y0)
        for side in (0, 1):
            pos = rng.uniform(0.0, 0.5)
            while pos < length - 0.3:
                span = min(rng.uniform(0.5, 2.0), length - pos)
                depth = rng.choice(_WALL_DEPTHS)
                if depth > 0:
                    if horizontal:
                        ax = x0 + pos
                        ay = (y1, y1 + depth) if side else (y0 - depth, y0)
                        c.carve(ax, ay[0], ax + span, ay[1])
                    else:
                        ay = y0 + pos
                        ax = (x1, x1 + depth) if side else (x0 - depth, x0)
                        c.carve(ax[0], ay, ax[1], ay + span)
                pos += span
    for rect in _PILLARS:
        c.fill(*rect)
    return World(c.grid(), name="default")


# waypoint chain covering every corridor, the loop twice, and back home (~350 m)
DEFAULT_ROUTE = [
    (3.0, 20.0), (6.0, 20.0), (6.0, 4.5), (6.0, 20.0), (18.0, 20.0), (18.0, 34.0),
    (42.0, 34.0), (42.0, 20.0), (30.0, 20.0), (30.0, 3.5), (30.0, 20.0), (48.0, 20.0),
    (48.0, 5.0), (48.0, 20.0), (54.0, 20.0), (54.0, 36.0), (54.0, 20.0), (57.0, 20.0),
    (42.0, 20.0), (18.0, 20.0), (18.0, 34.0), (42.0, 34.0), (42.0, 20.0), (3.0, 20.0),
]

# the loop (spine -> west leg -> top -> east leg), starting mid-spine
LOOP_ROUTE = [(30.0, 20.0), (18.0, 20.0), (18.0, 34.0), (42.0, 34.0), (42.0, 20.0), (30.0, 20.0)]

# top loop corridor including its recessed walls, away from the junctions
DRIFT_CORRIDOR = (20.0, 31.5, 40.0, 36.5)

# named goal/start spots on the default world
SPOTS = {
    "west_end": (3.5, 20.0),
    "west_room": (7.0, 4.0),
    "loop_west": (18.0, 27.0),
    "loop_top": (30.0, 34.0),
    "loop_east": (42.0, 27.0),
    "mid_room": (30.0, 3.5),
    "mid_spine": (24.0, 20.0),
    "east_spine": (36.0, 20.0),
    "south_east": (48.0, 6.0),
    "north_room": (54.0, 36.0),
    "east_end": (55.0, 20.0),
}


def route_poses(route) -> list[Pose2D]:
    poses = []
    for i, (x, y) in enumerate(route):
        nxt = route[i + 1] if i + 1 < len(route) else None
        th = math.atan2(nxt[1] - y, nxt[0] - x) if nxt else (poses[-1].theta if poses else 0.0)
        poses.append(Pose2D(x, y, th))
    return poses


def default_episodes(seed: int = 0, count: int = 20, noise_trans_sigma: float = 0.0) -> list[EpisodeConfig]:
    """Deterministic start/goal pairs between named spots at least 15 m apart."""
    names = sorted(SPOTS)
    rng = np.random.default_rng(seed + 1000)
    pairs = []
    while len(pairs) < count:
        a, b = rng.choice(len(names), size=2, replace=False)
        sa, sb = SPOTS[names[a]], SPOTS[names[b]]
        if math.dist(sa, sb) < 15.0 or (a, b) in pairs:
            continue
        pairs.append((a, b))
    out = []
    for i, (a, b) in enumerate(pairs):
        sa, sb = SPOTS[names[a]], SPOTS[names[b]]
        out.append(
            EpisodeConfig(
                world="default",
                start_x=sa[0],
                start_y=sa[1],
                start_theta=round(float(rng.uniform(-math.pi, math.pi)), 3),
                goal_x=sb[0],
                goal_y=sb[1],
                seed=seed + i,
                noise_trans_sigma=noise_trans_sigma,
            )
        )
    return out


def random_room(rng: np.random.Generator, size_m: float = 10.0, res: float = DEFAULT_RESOLUTION,
                n_obstacles: int = 6) -> World:
    """Square walled room with random rectangular obstacles, free around the center."""
    margin = 1.0
    c = _Carver(size_m + 2 * margin, size_m + 2 * margin, res)
    c.carve(margin, margin, margin + size_m, margin + size_m)
    mid = margin + size_m / 2
    for _ in range(n_obstacles):
        w, h = rng.uniform(0.3, 1.5, size=2)
        while True:
            x, y = rng.uniform(margin + 0.5, margin + size_m - 0.5 - max(w, h), size=2)
            if not (x - 1.5 < mid < x + w + 1.5 and y - 1.5 < mid < y + h + 1.5):
                break
        c.fill(x, y, x + w, y + h)
    return World(c.grid(), name="room")


def square_room(size_m: float = 10.0, res: float = DEFAULT_RESOLUTION) -> World:
    """Empty room whose interior spans [0, size] x [0, size] after a one-cell wall."""
    n = round(size_m / res)
    cells = np.full((n + 2, n + 2), OCCUPIED, dtype=np.uint8)
    cells[1:-1, 1:-1] = FREE
    # interior cell centers from res/2 to size - res/2
    return World(OccupancyGrid(res, Pose2D(-res / 2, -res / 2, 0.0), cells), name="square_room")


def load_world(spec: str) -> World:
    """A built-in world name or a path to a grid file."""
    if spec == "default":
        return default_world()
    path = Path(spec)
    grid = OccupancyGrid.load(path)
    return World(grid, name=path.stem)


def load_route(spec: str) -> list[Pose2D]:
    """A built-in route name or a text file of ``x y [theta]`` lines."""
    builtin = {"default": DEFAULT_ROUTE, "loop": LOOP_ROUTE}
    if spec in builtin:
        return route_poses(builtin[spec])
    pts = []
    for line in Path(spec).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            vals = [float(v) for v in line.replace(",", " ").split()]
            pts.append(vals)
    if all(len(p) >= 3 for p in pts):
        return [Pose2D(*p[:3]) for p in pts]
    return route_poses([(p[0], p[1]) for p in pts])
