"""Occupancy rasters and the point-goal controller.

The agent keeps two 0.1 m rasters in the birth frame: obstacle hits from
every depth scan, and the cells its rays have swept (explored).  The
controller plans on a cost raster grown from the hits (an impassable core
about the robot radius wide, then a penalized safety margin) with unknown
cells treated as free.  It checks the current path against new hits every
step and replans when the path is blocked or has aged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.graph import MCP_Geometric

from .sim import FORWARD, LEFT, RIGHT, wrap_angle


class Rasters:
    """Obstacle and explored masks on a square grid centered on the birth pose."""

    def __init__(self, res: float = 0.1, half_extent: float = 32.0, inflate: float = 0.3,
                 core_radius: float = 0.2):
        self.res = res
        self.n = int(round(2 * half_extent / res))
        self.origin = np.array([-half_extent, -half_extent])
        self.hits = np.zeros((self.n, self.n), dtype=bool)
        self.explored = np.zeros((self.n, self.n), dtype=bool)
        self.inflate = inflate
        self._r = int(np.ceil(inflate / res))
        self._disk = _disk(self._r)
        self._blocked = np.zeros((self.n, self.n), dtype=bool)
        # The hard core: cells whose center the robot body cannot occupy.
        self.core_radius = core_radius
        self._rc = int(np.ceil(core_radius / res))
        self._core_disk = _disk(self._rc)
        self._core = np.zeros((self.n, self.n), dtype=bool)

    def cells(self, pts):
        pts = np.atleast_2d(pts)
        ij = np.floor((pts - self.origin) / self.res).astype(int)[:, ::-1]
        ok = (ij >= 0).all(axis=1) & (ij < self.n).all(axis=1)
        return ij, ok

    def center(self, i, j):
        return self.origin + (np.array([j, i]) + 0.5) * self.res

    def add_scan(self, pose, rays, max_range: float):
        """Mark ray hits as obstacles and every swept cell as explored."""
        b, r = rays[:, 0], rays[:, 1]
        reach = np.where(np.isfinite(r), r, max_range)
        steps = np.arange(0.0, max_range + 1e-9, self.res * 0.7)
        ang = pose[2] + b
        t = np.minimum(steps[None, :], reach[:, None])
        xs = pose[0] + t * np.cos(ang)[:, None]
        ys = pose[1] + t * np.sin(ang)[:, None]
        ij, ok = self.cells(np.column_stack([xs.ravel(), ys.ravel()]))
        ij = ij[ok]
        self.explored[ij[:, 0], ij[:, 1]] = True
        hit = np.isfinite(r)
        if hit.any():
            pts = np.column_stack([pose[0] + r[hit] * np.cos(ang[hit]), pose[1] + r[hit] * np.sin(ang[hit])])
            self.add_obstacle(pts)

    def add_obstacle(self, p):
        ij, ok = self.cells(p)
        ij = ij[ok]
        if not len(ij):
            return
        new = ij[~self.hits[ij[:, 0], ij[:, 1]]]
        if not len(new):
            return
        self.hits[new[:, 0], new[:, 1]] = True
        self._grow(new, self._r, self._disk, self._blocked)
        self._grow(new, self._rc, self._core_disk, self._core)

    def _grow(self, new, r, disk, out):
        # Re-dilate only the window the new hits can affect.
        lo = np.maximum(new.min(axis=0) - 2 * r, 0)
        hi = np.minimum(new.max(axis=0) + 2 * r + 1, self.n)
        inner_lo = np.maximum(new.min(axis=0) - r, 0)
        inner_hi = np.minimum(new.max(axis=0) + r + 1, self.n)
        grown = ndimage.binary_dilation(self.hits[lo[0]:hi[0], lo[1]:hi[1]], structure=disk)
        a, b = inner_lo - lo, inner_hi - lo
        out[inner_lo[0]:inner_hi[0], inner_lo[1]:inner_hi[1]] = grown[a[0]:b[0], a[1]:b[1]]

    @property
    def blocked(self) -> np.ndarray:
        """Inflated obstacles: hits grown by the full safety margin."""
        return self._blocked

    @property
    def core(self) -> np.ndarray:
        """Hits grown by the robot radius only: never traversable."""
        return self._core

    def cost(self, margin_penalty: float = 4.0) -> np.ndarray:
        """Per-cell traversal cost: 1 in the clear, higher in the margin, inf in the core."""
        c = np.where(self._blocked, margin_penalty, 1.0)
        c[self._core] = np.inf
        return c

    def is_free(self, p) -> bool:
        ij, ok = self.cells(p)
        return bool(ok[0] and not self.core[ij[0, 0], ij[0, 1]])

    def line_free(self, a, b, raw: bool = True) -> bool:
        """No obstacle cell on the straight segment ab (raw hits by default)."""
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        n = max(2, int(np.ceil(np.linalg.norm(b - a) / (self.res * 0.5))) + 1)
        pts = a + np.linspace(0.0, 1.0, n)[:, None] * (b - a)
        ij, ok = self.cells(pts)
        grid = self.hits if raw else self.blocked
        return not bool(np.any(grid[ij[ok, 0], ij[ok, 1]]))

    def frontiers(self, min_cells: int = 4) -> list:
        """Centers of frontier clusters: explored free cells touching unexplored ones."""
        unexplored = ~self.explored
        touch = ndimage.binary_dilation(unexplored, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], bool))
        front = self.explored & touch & ~self.blocked
        lab, k = ndimage.label(front, structure=np.ones((3, 3), bool))
        out = []
        if k == 0:
            return out
        idx = ndimage.find_objects(lab)
        for c in range(1, k + 1):
            sl = idx[c - 1]
            sub = np.argwhere(lab[sl] == c)
            if len(sub) < min_cells:
                continue
            sub = sub + [sl[0].start, sl[1].start]
            mean = sub.mean(axis=0)
            i, j = sub[int(np.argmin(np.sum((sub - mean) ** 2, axis=1)))]
            out.append((self.center(i, j), len(sub)))
        return out

    def is_frontier_near(self, p, radius: float) -> bool:
        ij, ok = self.cells(p)
        if not ok[0]:
            return False
        r = int(np.ceil(radius / self.res))
        i, j = ij[0]
        sl = (slice(max(0, i - r), i + r + 1), slice(max(0, j - r), j + r + 1))
        ex = self.explored[sl]
        if ex.all():
            return False
        touch = ndimage.binary_dilation(~ex, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], bool))
        return bool(np.any(ex & touch & ~self.blocked[sl]))

    def unexplored_near(self, p, radius: float = 1.5):
        """Mean position of unexplored cells within ``radius`` of ``p``, or None."""
        ij, ok = self.cells(p)
        if not ok[0]:
            return None
        r = int(np.ceil(radius / self.res))
        i, j = ij[0]
        i0, j0 = max(0, i - r), max(0, j - r)
        sub = ~self.explored[i0:i + r + 1, j0:j + r + 1]
        cells = np.argwhere(sub)
        if not len(cells):
            return None
        return self.origin + (cells.mean(axis=0)[::-1] + [j0, i0] + 0.5) * self.res

    def copy(self):
        out = Rasters.__new__(Rasters)
        out.__dict__.update(self.__dict__)
        out.hits = self.hits.copy()
        out.explored = self.explored.copy()
        out._blocked = self._blocked.copy()
        out._core = self._core.copy()
        return out


def _disk(r: int) -> np.ndarray:
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    return (x * x + y * y) <= r * r


def plan_path(cost, start_ij, goal_mask, margin_cells: int = 40):
    """Cheapest cell path from ``start_ij`` to any goal cell on a cropped window, or None.

    ``cost`` holds per-cell traversal costs (inf = impassable); a boolean
    grid is read as blocked cells on unit cost.
    """
    cost = np.asarray(cost)
    if cost.dtype == bool:
        cost = np.where(cost, np.inf, 1.0)
    goals = np.argwhere(goal_mask)
    if not len(goals):
        return None
    lo = np.minimum(goals.min(axis=0), start_ij) - margin_cells
    hi = np.maximum(goals.max(axis=0), start_ij) + margin_cells + 1
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, cost.shape)
    sub = cost[lo[0]:hi[0], lo[1]:hi[1]].copy()
    s = tuple(np.asarray(start_ij) - lo)
    if not np.isfinite(sub[s]):
        sub[s] = 1.0
    g = goals - lo
    mcp = MCP_Geometric(sub, fully_connected=True)
    cum, _ = mcp.find_costs([s], [tuple(x) for x in g], find_all_ends=False)
    vals = cum[g[:, 0], g[:, 1]]
    k = int(np.argmin(vals))
    if not np.isfinite(vals[k]):
        return None
    path = np.array(mcp.traceback(tuple(g[k]))) + lo
    return path


@dataclass
class ControlStatus:
    action: int | None
    blocked: bool = False
    arrived: bool = False


class PointGoalController:
    """Follows a grid shortest path toward a goal point on the agent's rasters."""

    def __init__(self, rasters: Rasters, turn_deg: float = 30.0, lookahead: float = 0.6, replan_every: int = 10,
                 margin_penalty: float = 4.0, escape_penalty: float = 25.0):
        self.rasters = rasters
        self.replan_every = replan_every
        self.margin_penalty = margin_penalty
        self.escape_penalty = escape_penalty
        self.since_plan = 0
        self.turn = np.radians(turn_deg)
        self.lookahead = lookahead
        self.goal = None
        self.tol = None
        self.path = None
        self.replans = 0

    def set_goal(self, goal, tol: float):
        self.goal = np.asarray(goal, dtype=float)
        self.tol = float(tol)
        self.path = None

    def _goal_mask(self, blocked):
        ra = self.rasters
        r = int(np.ceil((self.tol + 0.5) / ra.res))
        ij, ok = ra.cells(self.goal)
        mask = np.zeros_like(blocked)
        if not ok[0]:
            return mask
        i, j = ij[0]
        i0, i1 = max(0, i - r), min(ra.n, i + r + 1)
        j0, j1 = max(0, j - r), min(ra.n, j + r + 1)
        ii, jj = np.mgrid[i0:i1, j0:j1]
        cx = ra.origin[0] + (jj + 0.5) * ra.res
        cy = ra.origin[1] + (ii + 0.5) * ra.res
        d = np.hypot(cx - self.goal[0], cy - self.goal[1])
        sub = (d <= self.tol) & ~blocked[i0:i1, j0:j1]
        mask[i0:i1, j0:j1] = sub
        return mask

    def _replan(self, pose):
        ra = self.rasters
        ij, ok = ra.cells(pose[:2])
        if not ok[0]:
            return None
        start = tuple(ij[0])
        cost = ra.cost(self.margin_penalty)
        # A robot already touching an obstacle must still be able to back
        # out: near the start the core is expensive rather than impassable.
        r = ra._r + 1
        win = (slice(max(0, start[0] - r), start[0] + r + 1), slice(max(0, start[1] - r), start[1] + r + 1))
        sub = cost[win]
        sub[np.isinf(sub) & ~ra.hits[win]] = self.escape_penalty
        self.replans += 1
        self.since_plan = 0
        goal = self._goal_mask(ra.core)
        return plan_path(cost, start, goal)

    def _path_ok(self, pose):
        if self.path is None or self.since_plan >= self.replan_every:
            return False
        blocked = self.rasters.core
        ij, ok = self.rasters.cells(pose[:2])
        if not ok[0]:
            return False
        d = np.abs(self.path - ij[0]).max(axis=1)
        k = int(np.argmin(d))
        if d[k] > 3:
            return False
        self.path = self.path[k:]
        rest = self.path[1:]
        return not bool(np.any(blocked[rest[:, 0], rest[:, 1]])) if len(rest) else True

    def act(self, pose) -> ControlStatus:
        if self.goal is None:
            raise RuntimeError("no goal set")
        if np.linalg.norm(self.goal - pose[:2]) <= self.tol:
            return ControlStatus(None, arrived=True)
        if not self._path_ok(pose):
            self.path = self._replan(pose)
            if self.path is None:
                return ControlStatus(None, blocked=True)
        self.since_plan += 1
        ra = self.rasters
        pts = ra.origin + (self.path[:, ::-1] + 0.5) * ra.res
        d = np.linalg.norm(pts - pose[:2], axis=1)
        ahead = np.flatnonzero(d >= self.lookahead)
        target = pts[ahead[0]] if len(ahead) else pts[-1]
        if len(ahead) == 0 and np.linalg.norm(target - pose[:2]) < 0.05:
            target = self.goal
        return ControlStatus(heading_action(pose, target, self.turn))


def heading_action(pose, target, turn) -> int:
    """Forward when roughly facing ``target``, else the shorter rotation."""
    want = np.arctan2(target[1] - pose[1], target[0] - pose[0])
    err = wrap_angle(want - pose[2])
    if abs(err) <= turn / 2 + 1e-9:
        return FORWARD
    return LEFT if err > 0 else RIGHT


def point_goal_control(rel_goal, points, tol: float = 0.25, inflate: float = 0.3, res: float = 0.1,
                       turn_deg: float = 30.0) -> ControlStatus:
    """One controller decision for a robot at the origin facing +x.

    ``rel_goal`` is the goal in the robot frame and ``points`` the known
    obstacle scatter in that frame.
    """
    ra = Rasters(res=res, half_extent=max(8.0, float(np.linalg.norm(rel_goal)) + 4.0), inflate=inflate)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts):
        ra.add_obstacle(pts)
    ctl = PointGoalController(ra, turn_deg)
    ctl.set_goal(rel_goal, tol)
    return ctl.act(np.zeros(3))
