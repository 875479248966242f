import math

import numpy as np
import pytest

from toponav.bench import run_mapping
from toponav.geometry import FREE, OCCUPIED, OccupancyGrid, Pose2D
from toponav.sim import World
from toponav.worlds import default_world, load_route


@pytest.fixture(scope="session")
def world():
    return default_world()


@pytest.fixture(scope="session")
def topo_mapping(world):
    return run_mapping(world, load_route("default"), "topo")


@pytest.fixture(scope="session")
def metric_mapping(world):
    return run_mapping(world, load_route("default"), "metric")


def box_world(width_m, height_m, res=0.1, blocks=()):
    """Walled rectangle with interior [0, w] x [0, h]; blocks are filled (x0, y0, x1, y1) boxes."""
    nw, nh = round(width_m / res), round(height_m / res)
    cells = np.full((nh + 2, nw + 2), OCCUPIED, dtype=np.uint8)
    cells[1:-1, 1:-1] = FREE
    origin = Pose2D(-res / 2, -res / 2, 0.0)
    grid = OccupancyGrid(res, origin, cells)
    for x0, y0, x1, y1 in blocks:
        c0, r0 = grid.coord_to_index(x0, y0)
        c1, r1 = grid.coord_to_index(x1, y1)
        cells[r0 : r1 + 1, c0 : c1 + 1] = OCCUPIED
    return World(OccupancyGrid(res, origin, cells))


def pose_close(a, b, tol=1e-9):
    d = math.remainder(a.theta - b.theta, 2 * math.pi)
    return abs(a.x - b.x) <= tol and abs(a.y - b.y) <= tol and abs(d) <= tol


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
