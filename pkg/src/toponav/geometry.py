"""Planar poses, 2D scans and tri-state occupancy grids.

Conventions used throughout the package: x forward, y left, theta
counterclockwise. Grids are row-major (``cells[row, col]``); cell
``(col, row)`` has its center at ``origin * (col * res, row * res)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FREE = 0
OCCUPIED = 1
UNKNOWN = 2

_CHAR_LUT = np.full(256, 255, dtype=np.uint8)
_CHAR_LUT[ord(".")] = FREE
_CHAR_LUT[ord("#")] = OCCUPIED
_CHAR_LUT[ord("?")] = UNKNOWN


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.remainder(theta, 2.0 * math.pi)
    if a <= -math.pi:
        a = math.pi
    return a


@dataclass(frozen=True)
class Pose2D:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    @classmethod
    def identity(cls) -> "Pose2D":
        return cls(0.0, 0.0, 0.0)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)

    def as_matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s, self.x], [s, c, self.y], [0.0, 0.0, 1.0]])

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an (N, 2) array of points through this transform."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        c, s = math.cos(self.theta), math.sin(self.theta)
        out = np.empty_like(pts)
        out[:, 0] = c * pts[:, 0] - s * pts[:, 1] + self.x
        out[:, 1] = s * pts[:, 0] + c * pts[:, 1] + self.y
        return out

    def __matmul__(self, other: "Pose2D") -> "Pose2D":
        return compose(self, other)


IDENTITY = Pose2D()


def compose(a: Pose2D, b: Pose2D) -> Pose2D:
    """Rigid transform "a then b" (b expressed in a's frame)."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2D(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.theta + b.theta,
    )


def inverse(p: Pose2D) -> Pose2D:
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose2D(-c * p.x - s * p.y, s * p.x - c * p.y, -p.theta)


def translation_norm(p: Pose2D) -> float:
    return math.hypot(p.x, p.y)


@dataclass(frozen=True, eq=False)
class Scan2D:
    """Lidar returns in the sensor frame. Point order carries no meaning."""

    points: np.ndarray
    max_range: float

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "max_range", float(self.max_range))
        if len(pts):
            r = np.hypot(pts[:, 0], pts[:, 1]).max()
            if r > self.max_range + 1e-6:
                raise ValueError(f"scan point at range {r:.6f} exceeds max_range {self.max_range}")

    def __len__(self) -> int:
        return len(self.points)

    def ranges(self) -> np.ndarray:
        return np.hypot(self.points[:, 0], self.points[:, 1])


def transform_scan(s: Scan2D, t: Pose2D) -> Scan2D:
    """Map every point of ``s`` through ``t``.

    The result may place points beyond ``max_range`` of the original sensor
    origin; max_range is widened just enough to keep the scan valid.
    """
    pts = t.apply(s.points)
    max_r = s.max_range
    if len(pts):
        max_r = max(max_r, float(np.hypot(pts[:, 0], pts[:, 1]).max()))
    return Scan2D(pts, max_r)


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    resolution: float
    origin: Pose2D
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        cells = np.array(self.cells, dtype=np.uint8)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise ValueError("grid needs at least one cell")
        if cells.max(initial=0) > UNKNOWN:
            raise ValueError("cells must be FREE, OCCUPIED or UNKNOWN")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "resolution", float(self.resolution))

    @classmethod
    def unknown(cls, width: int, height: int, resolution: float, origin: Pose2D = IDENTITY):
        return cls(resolution, origin, np.full((height, width), UNKNOWN, dtype=np.uint8))

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            self.resolution == other.resolution
            and self.origin == other.origin
            and np.array_equal(self.cells, other.cells)
        )

    def __hash__(self):
        return hash((self.cells.shape, self.resolution, self.origin))

    def index_to_coord(self, col, row):
        """Cell center(s) in the grid's reference frame."""
        col = np.asarray(col, dtype=float)
        row = np.asarray(row, dtype=float)
        c, s = math.cos(self.origin.theta), math.sin(self.origin.theta)
        lx, ly = col * self.resolution, row * self.resolution
        return (self.origin.x + c * lx - s * ly, self.origin.y + s * lx + c * ly)

    def coord_to_index(self, x, y):
        """Index of the cell containing the point(s); may be out of bounds."""
        fx, fy = self.coord_to_fractional(x, y)
        return np.floor(fx + 0.5).astype(np.int64), np.floor(fy + 0.5).astype(np.int64)

    def coord_to_fractional(self, x, y):
        """Continuous index coordinates: cell k spans [k - 0.5, k + 0.5)."""
        dx = np.asarray(x, dtype=float) - self.origin.x
        dy = np.asarray(y, dtype=float) - self.origin.y
        c, s = math.cos(self.origin.theta), math.sin(self.origin.theta)
        return (c * dx + s * dy) / self.resolution, (-s * dx + c * dy) / self.resolution

    def in_bounds(self, col, row):
        col = np.asarray(col)
        row = np.asarray(row)
        return (col >= 0) & (col < self.width) & (row >= 0) & (row < self.height)

    def lookup(self, x, y, default: int = UNKNOWN) -> np.ndarray:
        """Cell values at metric points; out-of-bounds points read ``default``."""
        col, row = self.coord_to_index(x, y)
        inside = self.in_bounds(col, row)
        out = np.full(np.shape(col), default, dtype=np.uint8)
        out[inside] = self.cells[row[inside], col[inside]]
        return out

    def count(self, value: int) -> int:
        return int(np.count_nonzero(self.cells == value))

    def with_cells(self, cells: np.ndarray) -> "OccupancyGrid":
        return OccupancyGrid(self.resolution, self.origin, cells)

    # serialization

    def to_text(self) -> str:
        o = self.origin
        header = f"grid {self.width} {self.height} {self.resolution!r} {o.x!r} {o.y!r} {o.theta!r}\n"
        lut = np.frombuffer(b".#?", dtype=np.uint8)
        rows = lut[self.cells]
        body = b"\n".join(r.tobytes() for r in rows).decode("ascii")
        return header + body + "\n"

    @classmethod
    def from_text(cls, text: str) -> "OccupancyGrid":
        lines = text.split("\n")
        head = lines[0].split()
        if len(head) != 7 or head[0] != "grid":
            raise ValueError(f"bad grid header: {lines[0]!r}")
        width, height = int(head[1]), int(head[2])
        res, ox, oy, oth = (float(v) for v in head[3:7])
        rows = lines[1 : 1 + height]
        if len(rows) != height or any(len(r) != width for r in rows):
            raise ValueError("grid body does not match header dimensions")
        raw = np.frombuffer("".join(rows).encode("ascii"), dtype=np.uint8)
        cells = _CHAR_LUT[raw]
        if (cells == 255).any():
            raise ValueError("bad grid character")
        cells = cells.reshape(height, width)
        # origin theta is stored already normalized, so construction is lossless
        return cls(res, Pose2D(ox, oy, oth), cells)

    def save(self, path) -> int:
        data = self.to_text().encode("ascii")
        Path(path).write_bytes(data)
        return len(data)

    @classmethod
    def load(cls, path) -> "OccupancyGrid":
        return cls.from_text(Path(path).read_text(encoding="ascii"))
