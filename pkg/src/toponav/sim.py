"""Deterministic 2D gridworld: raycast lidar, point-robot kinematics, odometry noise."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import _kernels
from .geometry import FREE, OCCUPIED, UNKNOWN, OccupancyGrid, Pose2D, Scan2D, compose, inverse

# raycast endpoints are nudged this fraction of a cell past the wall face so
# they rasterize into the wall cell regardless of ray direction
_HIT_NUDGE = 1e-3
_STOP_MARGIN = 1e-6


class PoseInObstacle(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class World:
    truth: OccupancyGrid
    name: str = "world"

    def __post_init__(self):
        if (self.truth.cells == UNKNOWN).any():
            raise ValueError("ground-truth world may only contain free and occupied cells")
        object.__setattr__(self, "_occupied", self.truth.cells == OCCUPIED)

    @property
    def occupied(self) -> np.ndarray:
        return self._occupied

    def is_free(self, x: float, y: float) -> bool:
        return bool(self.truth.lookup(x, y, default=OCCUPIED) == FREE)


@dataclass(frozen=True)
class LidarParams:
    num_rays: int = 360
    max_range: float = 15.0
    fov: float = 2 * math.pi

    def __post_init__(self):
        if self.num_rays < 1 or not self.max_range > 0 or not 0 < self.fov <= 2 * math.pi:
            raise ValueError(f"invalid lidar parameters: {self}")

    def relative_angles(self) -> np.ndarray:
        if self.fov >= 2 * math.pi - 1e-12:
            return -math.pi + np.arange(self.num_rays) * (2 * math.pi / self.num_rays)
        if self.num_rays == 1:
            return np.zeros(1)
        return np.linspace(-self.fov / 2, self.fov / 2, self.num_rays)


@dataclass(frozen=True)
class NoiseParams:
    trans_sigma: float = 0.0
    rot_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.trans_sigma < 0 or self.rot_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


class MotionKind(str, Enum):
    FORWARD = "forward"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    STOP = "stop"


@dataclass(frozen=True)
class MotionCommand:
    kind: MotionKind
    magnitude: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", MotionKind(self.kind))
        if self.magnitude < 0:
            raise ValueError("command magnitude must be non-negative")
        if self.kind is MotionKind.STOP and self.magnitude != 0:
            raise ValueError("stop carries no magnitude")

    @classmethod
    def stop(cls) -> "MotionCommand":
        return cls(MotionKind.STOP, 0.0)


def raycast_scan(world: World, pose: Pose2D, params: LidarParams) -> Scan2D:
    truth = world.truth
    col, row = truth.coord_to_index(pose.x, pose.y)
    if truth.in_bounds(col, row) and truth.cells[row, col] == OCCUPIED:
        raise PoseInObstacle(f"pose ({pose.x:.3f}, {pose.y:.3f}) lies in an occupied cell")
    fx, fy = truth.coord_to_fractional(pose.x, pose.y)
    rel = params.relative_angles()
    grid_angles = rel + (pose.theta - truth.origin.theta)
    res = truth.resolution
    max_len = params.max_range / res - 2 * _HIT_NUDGE
    hits = _kernels.raycast(world.occupied, float(fx), float(fy), grid_angles, max_len)
    ok = hits >= 0
    d = (hits[ok] + _HIT_NUDGE) * res
    pts = np.column_stack([d * np.cos(rel[ok]), d * np.sin(rel[ok])])
    return Scan2D(pts, params.max_range)


def step(pose: Pose2D, cmd: MotionCommand, world: World) -> Pose2D:
    """Advance the point robot one tick; forward motion clamps at walls."""
    if cmd.kind is MotionKind.TURN_LEFT:
        return Pose2D(pose.x, pose.y, pose.theta + cmd.magnitude)
    if cmd.kind is MotionKind.TURN_RIGHT:
        return Pose2D(pose.x, pose.y, pose.theta - cmd.magnitude)
    if cmd.kind is MotionKind.STOP or cmd.magnitude == 0:
        return pose
    truth = world.truth
    fx, fy = truth.coord_to_fractional(pose.x, pose.y)
    res = truth.resolution
    ang = np.array([pose.theta - truth.origin.theta])
    hit = _kernels.raycast(world.occupied, float(fx), float(fy), ang, cmd.magnitude / res)[0]
    dist = cmd.magnitude
    if hit >= 0:
        dist = max(0.0, min(dist, hit * res - _STOP_MARGIN))
    return Pose2D(pose.x + dist * math.cos(pose.theta), pose.y + dist * math.sin(pose.theta), pose.theta)


def relative_motion(before: Pose2D, after: Pose2D) -> Pose2D:
    """Odometry delta expressed in the ``before`` frame."""
    return compose(inverse(before), after)


def noisy_odometry(true_delta: Pose2D, noise: NoiseParams, rng: np.random.Generator) -> Pose2D:
    """Perturb a body-frame motion delta with zero-mean Gaussian noise.

    Translation noise has standard deviation ``trans_sigma`` per meter
    moved on each axis; heading noise ``rot_sigma`` per radian turned.
    Three normals are always drawn so the stream stays aligned whatever
    the sigmas are.
    """
    n = rng.standard_normal(3)
    d = math.hypot(true_delta.x, true_delta.y)
    st = noise.trans_sigma * d
    sr = noise.rot_sigma * abs(true_delta.theta)
    return Pose2D(true_delta.x + st * n[0], true_delta.y + st * n[1], true_delta.theta + sr * n[2])


# ---------------------------------------------------------------- episode config


@dataclass
class EpisodeConfig:
    world: str = "default"
    start_x: float = 0.0
    start_y: float = 0.0
    start_theta: float = 0.0
    goal_x: float = 0.0
    goal_y: float = 0.0
    seed: int = 0
    noise_trans_sigma: float = 0.0
    noise_rot_sigma: float = 0.0
    lidar_num_rays: int = 360
    lidar_max_range: float = 15.0
    lidar_fov: float = 2 * math.pi
    extra: dict = field(default_factory=dict)

    @property
    def start(self) -> Pose2D:
        return Pose2D(self.start_x, self.start_y, self.start_theta)

    @property
    def goal(self) -> tuple[float, float]:
        return (self.goal_x, self.goal_y)

    @property
    def lidar(self) -> LidarParams:
        return LidarParams(self.lidar_num_rays, self.lidar_max_range, self.lidar_fov)

    @property
    def noise(self) -> NoiseParams:
        return NoiseParams(self.noise_trans_sigma, self.noise_rot_sigma, self.seed)

    @classmethod
    def from_mapping(cls, kv: dict) -> "EpisodeConfig":
        kwargs, extra = {}, {}
        fields = cls.__dataclass_fields__
        for key, value in kv.items():
            if key in fields and key != "extra":
                typ = type(getattr(cls, key))
                kwargs[key] = typ(value) if typ is not str else value
            else:
                extra[key] = value
        return cls(**kwargs, extra=extra)

    def to_mapping(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "extra"}
        out.update(self.extra)
        return out


class ConfigError(ValueError):
    pass


def parse_kv(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def load_episode(path) -> EpisodeConfig:
    try:
        return EpisodeConfig.from_mapping(parse_kv(Path(path).read_text()))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_episodes(path) -> list[EpisodeConfig]:
    """Episode suite: blocks separated by ``---`` lines.

    Keys in the first block are defaults inherited by every later block;
    a file with a single block describes a single episode.
    """
    text = Path(path).read_text()
    blocks = [b for b in _split_blocks(text)]
    try:
        if len(blocks) == 1:
            return [EpisodeConfig.from_mapping(parse_kv(blocks[0]))]
        base = parse_kv(blocks[0])
        return [EpisodeConfig.from_mapping({**base, **parse_kv(b)}) for b in blocks[1:]]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _split_blocks(text: str):
    block: list[str] = []
    for line in text.splitlines():
        if line.strip() == "---":
            yield "\n".join(block)
            block = []
        else:
            block.append(line)
    yield "\n".join(block)


def dump_episodes(episodes: list[EpisodeConfig], header: dict | None = None) -> str:
    parts = ["\n".join(f"{k} = {v}" for k, v in (header or {}).items())]
    for ep in episodes:
        parts.append("\n".join(f"{k} = {v}" for k, v in ep.to_mapping().items()))
    return "\n---\n".join(parts) + "\n"
