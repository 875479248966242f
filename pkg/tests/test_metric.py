import math

import numpy as np
import pytest
from scipy import ndimage

from toponav.bench import metric_from_grid, shortest_path_length
from toponav.geometry import FREE, OCCUPIED, UNKNOWN, OccupancyGrid, Pose2D, Scan2D
from toponav.metric import GlobalMetricMap, integrate_scan, metric_map_bytes, plan_metric, wall_separation
from toponav.perception import scan_to_grid
from toponav.planning import GoalUnreachable, PlanConfig
from toponav.sim import LidarParams, raycast_scan
from toponav.worlds import SPOTS, square_room


def test_empty_scan_leaves_map_unchanged():
    m = GlobalMetricMap(0.1)
    before = (m.origin, m.log_odds.copy())
    integrate_scan(m, Pose2D(3.0, 4.0, 1.0), Scan2D(np.zeros((0, 2)), 10.0))
    assert m.origin == before[0] and np.array_equal(m.log_odds, before[1])


def test_repeated_scan_reaches_fixed_point():
    w = square_room(10.0)
    p = Pose2D(4.0, 5.5, 0.3)
    s = raycast_scan(w, p, LidarParams())
    m = GlobalMetricMap(0.1)
    views = []
    for _ in range(40):
        integrate_scan(m, p, s)
        views.append(m.to_grid())
    assert np.abs(m.log_odds).max() <= m.clamp
    assert all(v == views[19] for v in views[19:])


def test_single_scan_agrees_with_rasterization():
    w = square_room(10.0)
    p = Pose2D(4.0, 5.5, 0.3)
    s = raycast_scan(w, p, LidarParams())
    m = GlobalMetricMap(0.1)
    integrate_scan(m, p, s)
    g = m.to_grid()
    ref = scan_to_grid(s, p, 0.1)
    r, c = np.nonzero(g.cells != UNKNOWN)
    x, y = g.index_to_coord(c, r)
    assert len(r) > 1000
    assert np.array_equal(ref.lookup(x, y), g.cells[r, c])
    # the map never observes a cell the rasterization leaves unknown
    r, c = np.nonzero(ref.cells == UNKNOWN)
    x, y = ref.index_to_coord(c, r)
    assert (g.lookup(x, y) == UNKNOWN).all()


def test_plan_metric_trivial_and_unreachable():
    cells = np.array([[FREE, FREE]], dtype=np.uint8)
    m = metric_from_grid(OccupancyGrid(0.1, Pose2D(0, 0, 0), cells))
    path = plan_metric(m, Pose2D(0.0, 0.0, 0.0), Pose2D(0.1, 0.0, 0.0), PlanConfig(inflation_radius=0.0))
    assert path.waypoints == ((0.0, 0.0), (0.1, 0.0))
    cells = np.full((5, 9), FREE, dtype=np.uint8)
    cells[:, 4] = OCCUPIED
    m = metric_from_grid(OccupancyGrid(0.1, Pose2D(0, 0, 0), cells))
    with pytest.raises(GoalUnreachable):
        plan_metric(m, Pose2D(0.0, 0.2, 0.0), Pose2D(0.8, 0.2, 0.0), PlanConfig(inflation_radius=0.0))


def test_metric_map_bytes_arithmetic():
    m = metric_from_grid(OccupancyGrid(0.1, Pose2D(0, 0, 0), np.full((10, 10), FREE, dtype=np.uint8)))
    header = f"grid 10 10 0.1 0.0 0.0 0.0\n"
    assert metric_map_bytes(m) == len(header) + 10 * 11
    g = GlobalMetricMap(0.1)
    sizes = [metric_map_bytes(g)]
    w = square_room(10.0)
    for x in (2.0, 5.0, 8.0):
        p = Pose2D(x, 2.0, 0.0)
        integrate_scan(g, p, raycast_scan(w, p, LidarParams(max_range=3.0)))
        sizes.append(metric_map_bytes(g))
    assert all(a < b for a, b in zip(sizes, sizes[1:]))


def test_zero_noise_map_is_within_a_cell_of_truth(world, metric_mapping):
    g = metric_mapping.map.to_grid()
    truth = world.truth
    dilated = ndimage.binary_dilation(world.occupied, np.ones((3, 3), bool))
    r, c = np.nonzero(g.cells == OCCUPIED)
    x, y = g.index_to_coord(c, r)
    tc, tr = truth.coord_to_index(x, y)
    assert truth.in_bounds(tc, tr).all()
    assert dilated[tr, tc].all()


def test_metric_path_close_to_ground_truth(world, metric_mapping):
    m = metric_mapping.map
    pairs = [("west_end", "east_end"), ("loop_west", "south_east"), ("mid_room", "north_room")]
    for a, b in pairs:
        sa, sb = SPOTS[a], SPOTS[b]
        path = plan_metric(m, Pose2D(*sa, 0.0), Pose2D(*sb, 0.0))
        truth = shortest_path_length(world, sa, sb)
        assert abs(path.length - truth) <= 0.05 * truth


def test_wall_separation_measures_offset():
    cells = np.full((20, 40), FREE, dtype=np.uint8)
    cells[5, 5:35] = OCCUPIED
    a = OccupancyGrid(0.1, Pose2D(0, 0, 0), cells)
    b = OccupancyGrid(0.1, Pose2D(0, 0, 0), np.roll(cells, 3, axis=0))
    box = (0.0, 0.0, 4.0, 2.0)
    assert wall_separation(a, a, box) == 0.0
    assert wall_separation(a, b, box) == pytest.approx(3.0)
    assert math.isinf(wall_separation(a, b, (3.8, 1.5, 4.0, 2.0)))
