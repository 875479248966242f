"""Compiled inner loops over grids.

All coordinates here are continuous *index* coordinates: cell ``k`` spans
``[k - 0.5, k + 0.5)`` on each axis, so cell centers sit on integers.
"""

import heapq
import math

import numpy as np
from numba import njit

_CORNER_EPS = 1e-12
SQRT2 = math.sqrt(2.0)


@njit(cache=True)
def _setup_axis(u0, d):
    # returns step, t_delta, t_max for a unit-cell DDA along one axis
    c = math.floor(u0)
    if d > 0.0:
        return 1, 1.0 / d, (c + 1.0 - u0) / d
    if d < 0.0:
        return -1, -1.0 / d, (u0 - c) / -d
    return 0, np.inf, np.inf


@njit(cache=True)
def segment_clear(blocked, x0, y0, x1, y1):
    """True when every cell the segment touches is in bounds and unblocked.

    Supercover semantics: a segment passing exactly through a cell corner
    must find both side cells clear.
    """
    h, w = blocked.shape
    u0, v0, u1, v1 = x0 + 0.5, y0 + 0.5, x1 + 0.5, y1 + 0.5
    cx, cy = int(math.floor(u0)), int(math.floor(v0))
    ex, ey = int(math.floor(u1)), int(math.floor(v1))
    if cx < 0 or cy < 0 or cx >= w or cy >= h or blocked[cy, cx]:
        return False
    sx, tdx, tmx = _setup_axis(u0, u1 - u0)
    sy, tdy, tmy = _setup_axis(v0, v1 - v0)
    while cx != ex or cy != ey:
        if abs(tmx - tmy) < _CORNER_EPS:
            if tmx > 1.0:
                break
            ax, ay = cx + sx, cy + sy
            if ax < 0 or ax >= w or ay < 0 or ay >= h:
                return False
            if blocked[cy, ax] or blocked[ay, cx]:
                return False
            cx, cy = ax, ay
            tmx += tdx
            tmy += tdy
        elif tmx < tmy:
            if tmx > 1.0:
                break
            cx += sx
            tmx += tdx
        else:
            if tmy > 1.0:
                break
            cy += sy
            tmy += tdy
        if cx < 0 or cy < 0 or cx >= w or cy >= h or blocked[cy, cx]:
            return False
    return True


@njit(cache=True)
def raycast(occupied, x0, y0, angles, max_len):
    """First-hit distance (index units) along each ray, or -1 for no hit.

    Rays leaving the grid or exceeding ``max_len`` produce no hit.
    """
    h, w = occupied.shape
    out = np.full(angles.shape[0], -1.0)
    u0, v0 = x0 + 0.5, y0 + 0.5
    for k in range(angles.shape[0]):
        dx, dy = math.cos(angles[k]), math.sin(angles[k])
        cx, cy = int(math.floor(u0)), int(math.floor(v0))
        sx, tdx, tmx = _setup_axis(u0, dx)
        sy, tdy, tmy = _setup_axis(v0, dy)
        while True:
            if abs(tmx - tmy) < _CORNER_EPS:
                t = tmx
                if t > max_len:
                    break
                ax, ay = cx + sx, cy + sy
                hit = False
                if 0 <= ax < w and 0 <= cy < h and occupied[cy, ax]:
                    hit = True
                if 0 <= cx < w and 0 <= ay < h and occupied[ay, cx]:
                    hit = True
                if hit:
                    out[k] = t
                    break
                cx, cy = ax, ay
                tmx += tdx
                tmy += tdy
            elif tmx < tmy:
                t = tmx
                if t > max_len:
                    break
                cx += sx
                tmx += tdx
            else:
                t = tmy
                if t > max_len:
                    break
                cy += sy
                tmy += tdy
            if cx < 0 or cy < 0 or cx >= w or cy >= h:
                break
            if occupied[cy, cx]:
                out[k] = t
                break
    return out


@njit(cache=True)
def rasterize_rays(cells, x0, y0, ends, free_val, occ_val):
    """Mark cells along sensor->endpoint free, endpoint cells occupied.

    Endpoints are written after all free traversals so an occupied mark is
    never overwritten by another ray.
    """
    h, w = cells.shape
    u0, v0 = x0 + 0.5, y0 + 0.5
    for k in range(ends.shape[0]):
        u1, v1 = ends[k, 0] + 0.5, ends[k, 1] + 0.5
        cx, cy = int(math.floor(u0)), int(math.floor(v0))
        ex, ey = int(math.floor(u1)), int(math.floor(v1))
        sx, tdx, tmx = _setup_axis(u0, u1 - u0)
        sy, tdy, tmy = _setup_axis(v0, v1 - v0)
        guard = abs(ex - cx) + abs(ey - cy) + 2
        while (cx != ex or cy != ey) and guard > 0:
            guard -= 1
            if 0 <= cx < w and 0 <= cy < h:
                cells[cy, cx] = free_val
            if abs(tmx - tmy) < _CORNER_EPS:
                cx += sx
                cy += sy
                tmx += tdx
                tmy += tdy
            elif tmx < tmy:
                cx += sx
                tmx += tdx
            else:
                cy += sy
                tmy += tdy
    for k in range(ends.shape[0]):
        ex = int(math.floor(ends[k, 0] + 0.5))
        ey = int(math.floor(ends[k, 1] + 0.5))
        if 0 <= ex < w and 0 <= ey < h:
            cells[ey, ex] = occ_val


@njit(cache=True)
def ray_cells(h, w, x0, y0, ends):
    """Visit counts and hit counts per cell for a fan of rays.

    Returns (free_hits, occ_hits): how many rays passed through each cell
    (excluding their endpoint cell) and how many rays ended in it.
    """
    free_hits = np.zeros((h, w), dtype=np.int32)
    occ_hits = np.zeros((h, w), dtype=np.int32)
    u0, v0 = x0 + 0.5, y0 + 0.5
    for k in range(ends.shape[0]):
        u1, v1 = ends[k, 0] + 0.5, ends[k, 1] + 0.5
        cx, cy = int(math.floor(u0)), int(math.floor(v0))
        ex, ey = int(math.floor(u1)), int(math.floor(v1))
        sx, tdx, tmx = _setup_axis(u0, u1 - u0)
        sy, tdy, tmy = _setup_axis(v0, v1 - v0)
        guard = abs(ex - cx) + abs(ey - cy) + 2
        while (cx != ex or cy != ey) and guard > 0:
            guard -= 1
            if 0 <= cx < w and 0 <= cy < h:
                free_hits[cy, cx] += 1
            if abs(tmx - tmy) < _CORNER_EPS:
                cx += sx
                cy += sy
                tmx += tdx
                tmy += tdy
            elif tmx < tmy:
                cx += sx
                tmx += tdx
            else:
                cy += sy
                tmy += tdy
        if 0 <= ex < w and 0 <= ey < h:
            occ_hits[ey, ex] += 1
    return free_hits, occ_hits


_NB_DX = np.array([1, 1, 0, -1, -1, -1, 0, 1])
_NB_DY = np.array([0, 1, 1, 1, 0, -1, -1, -1])


@njit(cache=True)
def _move_ok(trav, cx, cy, k):
    h, w = trav.shape
    nx, ny = cx + _NB_DX[k], cy + _NB_DY[k]
    if nx < 0 or ny < 0 or nx >= w or ny >= h or not trav[ny, nx]:
        return False
    if _NB_DX[k] != 0 and _NB_DY[k] != 0:
        # no corner cutting: both orthogonal side cells must be open
        if not trav[cy, nx] or not trav[ny, cx]:
            return False
    return True


@njit(cache=True)
def lazy_theta_star(trav, sx, sy, gx, gy):
    """Lazy Theta* from the start point to the goal cell.

    ``trav`` marks traversable cells. The start vertex sits at the exact
    start point; every other vertex is a cell center. Returns the vertex
    chain as (K, 2) index-space coordinates, start first; empty when the
    goal cannot be reached. Ties are broken by smaller g, then row-major
    cell index.
    """
    h, w = trav.shape
    scx, scy = int(math.floor(sx + 0.5)), int(math.floor(sy + 0.5))
    gcx, gcy = int(math.floor(gx + 0.5)), int(math.floor(gy + 0.5))
    n = h * w
    start = scy * w + scx
    goal = gcy * w + gcx
    g = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    closed = np.zeros(n, dtype=np.bool_)
    px = np.empty(n)
    py = np.empty(n)
    for idx in range(n):
        px[idx] = idx % w
        py[idx] = idx // w
    px[start] = sx
    py[start] = sy
    gpx, gpy = float(gcx), float(gcy)

    blocked = np.logical_not(trav)
    g[start] = 0.0
    parent[start] = start
    heap = [(math.hypot(sx - gpx, sy - gpy), 0.0, start)]
    found = False
    while len(heap) > 0:
        f, gv, s = heapq.heappop(heap)
        if closed[s] or gv > g[s]:
            continue
        cx, cy = s % w, s // w
        p = parent[s]
        if p != s and not segment_clear(blocked, px[p], py[p], px[s], py[s]):
            # lazy LOS failed: re-parent to the best closed neighbour
            best, bestp = np.inf, -1
            for k in range(8):
                if not _move_ok(trav, cx, cy, k):
                    continue
                m = (cy + _NB_DY[k]) * w + cx + _NB_DX[k]
                if closed[m]:
                    c = g[m] + math.hypot(px[m] - px[s], py[m] - py[s])
                    if c < best:
                        best, bestp = c, m
            g[s] = best
            parent[s] = bestp
        closed[s] = True
        if s == goal:
            found = True
            break
        p = parent[s]
        for k in range(8):
            if not _move_ok(trav, cx, cy, k):
                continue
            m = (cy + _NB_DY[k]) * w + cx + _NB_DX[k]
            if closed[m]:
                continue
            cand = g[p] + math.hypot(px[p] - px[m], py[p] - py[m])
            if cand < g[m] - 1e-12:
                g[m] = cand
                parent[m] = p
                heapq.heappush(heap, (cand + math.hypot(px[m] - gpx, py[m] - gpy), cand, m))
    if not found:
        return np.empty((0, 2))
    chain = [goal]
    s = goal
    while s != start:
        s = parent[s]
        chain.append(s)
    out = np.empty((len(chain), 2))
    for i in range(len(chain)):
        node = chain[len(chain) - 1 - i]
        out[i, 0] = px[node]
        out[i, 1] = py[node]
    return out


@njit(cache=True)
def correlate_poses(lik, pts, thetas, offsets):
    """Score (theta, offset) poses: mean likelihood of the transformed points.

    ``pts`` and ``offsets`` are in index units; ``lik`` cell centers sit on
    integer coordinates and points falling outside it score zero.
    Returns an array of shape (len(thetas), len(offsets)).
    """
    h, w = lik.shape
    npts = pts.shape[0]
    out = np.zeros((thetas.shape[0], offsets.shape[0]))
    rx = np.empty(npts)
    ry = np.empty(npts)
    for a in range(thetas.shape[0]):
        c, s = math.cos(thetas[a]), math.sin(thetas[a])
        for k in range(npts):
            rx[k] = c * pts[k, 0] - s * pts[k, 1] + 0.5
            ry[k] = s * pts[k, 0] + c * pts[k, 1] + 0.5
        for m in range(offsets.shape[0]):
            ox, oy = offsets[m, 0], offsets[m, 1]
            acc = 0.0
            for k in range(npts):
                cx = int(math.floor(rx[k] + ox))
                cy = int(math.floor(ry[k] + oy))
                if 0 <= cx < w and 0 <= cy < h:
                    acc += lik[cy, cx]
            out[a, m] = acc / npts
    return out
