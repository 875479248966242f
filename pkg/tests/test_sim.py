import math

import numpy as np
import pytest

from conftest import box_world
from toponav.geometry import FREE, IDENTITY, OccupancyGrid, Pose2D
from toponav.sim import (
    ConfigError,
    EpisodeConfig,
    LidarParams,
    MotionCommand,
    MotionKind,
    NoiseParams,
    PoseInObstacle,
    World,
    dump_episodes,
    load_episode,
    load_episodes,
    noisy_odometry,
    raycast_scan,
    step,
)
from toponav.worlds import default_world, square_room


def test_free_world_gives_empty_scan():
    w = World(OccupancyGrid(0.1, Pose2D(-5, -5, 0), np.full((101, 101), FREE, dtype=np.uint8)))
    assert len(raycast_scan(w, IDENTITY, LidarParams(max_range=20.0))) == 0


def test_square_room_ray_hits_wall_at_analytic_distance():
    w = square_room(10.0)
    res = w.truth.resolution
    scan = raycast_scan(w, Pose2D(5.0, 5.0, 0.0), LidarParams(num_rays=360, max_range=20.0))
    ahead = scan.points[np.abs(scan.points[:, 1]) < 1e-9]
    ahead = ahead[ahead[:, 0] > 0]
    assert len(ahead) == 1
    assert abs(ahead[0, 0] - (5.0 - res / 2)) <= res


def test_first_hit_only():
    # two walls across +x; only the nearer one returns
    w = box_world(10.0, 4.0, blocks=[(3.0, 0.0, 3.0, 4.0), (6.0, 0.0, 6.0, 4.0)])
    scan = raycast_scan(w, Pose2D(1.0, 2.0, 0.0), LidarParams(num_rays=1, fov=0.001, max_range=9.0))
    assert len(scan) == 1
    assert scan.points[0, 0] == pytest.approx(1.95, abs=0.1)


def test_raycast_properties():
    w = default_world()
    params = LidarParams(num_rays=180, max_range=8.0)
    for p in (Pose2D(3.0, 20.0, 0.3), Pose2D(30.0, 34.0, -2.0), Pose2D(48.0, 10.0, 1.0)):
        scan = raycast_scan(w, p, params)
        assert len(scan) <= params.num_rays
        assert (scan.ranges() <= params.max_range + 1e-9).all()
        # every return, mapped to the world, lies in or next to an occupied cell
        world_pts = p.apply(scan.points)
        c, r = w.truth.coord_to_index(world_pts[:, 0], world_pts[:, 1])
        for ci, ri in zip(c, r):
            assert w.occupied[max(0, ri - 1) : ri + 2, max(0, ci - 1) : ci + 2].any()


def test_raycast_from_obstacle_raises():
    w = box_world(4.0, 4.0, blocks=[(1.0, 1.0, 2.0, 2.0)])
    with pytest.raises(PoseInObstacle):
        raycast_scan(w, Pose2D(1.5, 1.5, 0.0), LidarParams())


def test_step_examples():
    w = box_world(10.0, 10.0)
    assert step(Pose2D(2, 5, 0), MotionCommand(MotionKind.FORWARD, 1.0), w) == Pose2D(3, 5, 0)
    assert step(Pose2D(2, 5, 0), MotionCommand(MotionKind.TURN_LEFT, math.pi / 4), w) == Pose2D(2, 5, math.pi / 4)
    assert step(Pose2D(2, 5, 0), MotionCommand(MotionKind.TURN_RIGHT, 0.5), w) == Pose2D(2, 5, -0.5)
    assert step(Pose2D(2, 5, 0), MotionCommand.stop(), w) == Pose2D(2, 5, 0)


def test_step_clamps_at_wall():
    w = box_world(10.0, 10.0, blocks=[(5.0, 0.0, 5.0, 10.0)])
    res = w.truth.resolution
    wall_face = 5.0 - res / 2
    start = Pose2D(wall_face - 0.3, 5.0, 0.0)
    new = step(start, MotionCommand(MotionKind.FORWARD, 1.0), w)
    advance = new.x - start.x
    assert 0.3 - res <= advance < 0.3
    assert w.is_free(new.x, new.y)


def test_step_never_enters_obstacles():
    w = default_world()
    rng = np.random.default_rng(0)
    pose = Pose2D(30.0, 20.0, 0.0)
    for _ in range(2000):
        kind = (MotionKind.FORWARD, MotionKind.TURN_LEFT, MotionKind.TURN_RIGHT)[rng.integers(3)]
        pose = step(pose, MotionCommand(kind, float(rng.uniform(0, 1.5))), w)
        assert w.is_free(pose.x, pose.y)


def test_command_validation():
    with pytest.raises(ValueError):
        MotionCommand(MotionKind.FORWARD, -1.0)
    with pytest.raises(ValueError):
        MotionCommand(MotionKind.STOP, 1.0)
    with pytest.raises(ValueError):
        LidarParams(num_rays=0)
    with pytest.raises(ValueError):
        NoiseParams(trans_sigma=-0.1)


def test_noise_free_odometry_passes_through():
    d = Pose2D(0.25, 0.0, 0.1)
    assert noisy_odometry(d, NoiseParams(), np.random.default_rng(0)) == d


def test_noisy_odometry_is_deterministic_per_seed():
    n = NoiseParams(0.05, 0.0, 42)
    a = noisy_odometry(Pose2D(1, 0, 0), n, n.rng())
    b = noisy_odometry(Pose2D(1, 0, 0), n, n.rng())
    assert a == b and a != Pose2D(1, 0, 0)


def test_noisy_odometry_is_unbiased():
    n = NoiseParams(0.05, 0.02, 7)
    rng = n.rng()
    samples = np.array([noisy_odometry(Pose2D(1, 0, 0), n, rng).as_tuple() for _ in range(10000)])
    bound = 3 * 0.05 / math.sqrt(len(samples))
    assert abs(samples[:, 0].mean() - 1.0) <= bound
    assert abs(samples[:, 1].mean()) <= bound
    assert samples[:, 0].std() == pytest.approx(0.05, rel=0.05)


def test_episode_file_round_trip(tmp_path):
    eps = [EpisodeConfig(start_x=1.0, start_y=2.0, goal_x=5.0, goal_y=6.0, seed=i, noise_trans_sigma=0.03)
           for i in range(3)]
    path = tmp_path / "suite.cfg"
    path.write_text(dump_episodes(eps))
    assert load_episodes(path) == eps
    single = tmp_path / "one.cfg"
    single.write_text("# one episode\nstart_x = 3\nstart_y = 4.5\ngoal_x = 1\ngoal_y = 1\nseed = 9\n")
    ep = load_episode(single)
    assert (ep.start_x, ep.start_y, ep.seed) == (3.0, 4.5, 9)


def test_episode_file_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("start_x 3\n")
    with pytest.raises(ConfigError):
        load_episode(bad)
    bad.write_text("start_x = abc\n")
    with pytest.raises(ConfigError):
        load_episode(bad)
