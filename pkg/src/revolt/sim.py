"""2D raycast house simulator with discrete actions and exact odometry.

Walls are the room sides with a door-wide gap at every door; objects are
discs.  The robot is a disc of ``robot_radius`` that moves forward by a
fixed stride (stopping at first contact) or turns in place.  Each step
returns a depth fan and the objects it can see.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from skimage.graph import MCP_Geometric

from .config import SimConfig
from .house import HouseSpec

FORWARD, LEFT, RIGHT, STOP = 0, 1, 2, 3
ACTIONS = (FORWARD, LEFT, RIGHT, STOP)
ACTION_NAMES = ("forward", "left", "right", "stop")


def wrap_angle(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


@dataclass
class World:
    house: HouseSpec
    walls: np.ndarray  # (W, 4) segments x0, y0, x1, y1
    centers: np.ndarray  # (O, 2)
    radii: np.ndarray  # (O,)
    categories: np.ndarray  # (O,)
    config: SimConfig


def wall_segments(house: HouseSpec, door_width: float = 1.0) -> np.ndarray:
    """Room sides minus door gaps; shared walls appear once per room."""
    segs = []
    half = door_width / 2
    for room in house.rooms:
        x0, y0, x1, y1 = room.bounds
        sides = [((x0, y0), (x1, y0)), ((x1, y0), (x1, y1)), ((x0, y1), (x1, y1)), ((x0, y0), (x0, y1))]
        for a, b in sides:
            vertical = abs(a[0] - b[0]) < 1e-9
            lo, hi = (a[1], b[1]) if vertical else (a[0], b[0])
            fixed = a[0] if vertical else a[1]
            gaps = []
            for d in house.doors:
                if room.id not in d.rooms:
                    continue
                px, py = d.pos
                if vertical and d.axis == "x" and abs(px - fixed) < 1e-6 and lo <= py <= hi:
                    gaps.append((py - half, py + half))
                if not vertical and d.axis == "y" and abs(py - fixed) < 1e-6 and lo <= px <= hi:
                    gaps.append((px - half, px + half))
            pieces = [(lo, hi)]
            for g0, g1 in sorted(gaps):
                nxt = []
                for s0, s1 in pieces:
                    if g1 <= s0 or g0 >= s1:
                        nxt.append((s0, s1))
                        continue
                    if g0 > s0:
                        nxt.append((s0, g0))
                    if g1 < s1:
                        nxt.append((g1, s1))
                pieces = nxt
            for s0, s1 in pieces:
                if s1 - s0 > 1e-9:
                    segs.append((fixed, s0, fixed, s1) if vertical else (s0, fixed, s1, fixed))
    return np.array(segs, dtype=float).reshape(-1, 4)


def build_world(house: HouseSpec, config: SimConfig | None = None, door_width: float = 1.0) -> World:
    config = config or SimConfig()
    objs = house.objects
    return World(
        house,
        wall_segments(house, door_width),
        np.array([o.pos for o in objs], dtype=float).reshape(-1, 2),
        np.array([o.radius for o in objs], dtype=float),
        np.array([o.category for o in objs], dtype=int),
        config,
    )


def _ray_segments(origin, dirs, segs):
    """(R, W) hit distances of rays against segments (inf where missed)."""
    if len(segs) == 0:
        return np.full((len(dirs), 0), np.inf)
    a = segs[:, :2]
    e = segs[:, 2:] - a
    dx, dy = dirs[:, 0:1], dirs[:, 1:2]
    den = dx * e[:, 1] - dy * e[:, 0]
    w = a - origin
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[:, 0] * e[:, 1] - w[:, 1] * e[:, 0]) / den
        s = (w[:, 0] * dy - w[:, 1] * dx) / den
    ok = (np.abs(den) > 1e-12) & (t >= 0) & (s >= 0) & (s <= 1)
    return np.where(ok, t, np.inf)


def _ray_circles(origin, dirs, centers, radii):
    """(R, O) first non-negative hit distance of rays against discs."""
    if len(centers) == 0:
        return np.full((len(dirs), 0), np.inf)
    oc = origin - centers  # (O, 2)
    b = dirs @ oc.T  # (R, O)
    c = np.sum(oc * oc, axis=1) - radii ** 2
    disc = b * b - c
    with np.errstate(invalid="ignore"):
        sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
    t1 = -b - sq
    t2 = -b + sq
    t = np.where(t1 >= 0, t1, np.where(t2 >= 0, 0.0, np.nan))
    # inside a disc (c < 0) counts as an immediate hit
    t = np.where(c[None, :] < 0, 0.0, t)
    return np.where(np.isnan(t), np.inf, t)


def raycast(world: World, pose, bearings=None) -> np.ndarray:
    """(n, 2) rays of (bearing, range); range is inf when nothing is hit."""
    cfg = world.config
    if bearings is None:
        half = np.radians(cfg.fov_deg) / 2
        bearings = np.linspace(-half, half, cfg.n_rays)
    ang = pose[2] + bearings
    dirs = np.column_stack([np.cos(ang), np.sin(ang)])
    origin = np.asarray(pose[:2], dtype=float)
    t = np.full(len(dirs), np.inf)
    if len(world.walls):
        t = np.minimum(t, _ray_segments(origin, dirs, world.walls).min(axis=1))
    if len(world.centers):
        t = np.minimum(t, _ray_circles(origin, dirs, world.centers, world.radii).min(axis=1))
    t = np.where(t <= cfg.max_range, t, np.inf)
    return np.column_stack([bearings, t])


def sweep_distance(world: World, pos, direction, limit: float) -> float:
    """How far the robot disc can travel along ``direction`` before contact."""
    cfg = world.config
    R = cfg.robot_radius
    p = np.asarray(pos, dtype=float)
    d = np.asarray(direction, dtype=float)[None, :]
    best = limit
    if len(world.centers):
        best = min(best, float(_ray_circles(p, d, world.centers, world.radii + R).min()))
    if len(world.walls):
        a, b = world.walls[:, :2], world.walls[:, 2:]
        # capsule = two end discs + two offset sides
        best = min(best, float(_ray_circles(p, d, a, np.full(len(a), R)).min()))
        best = min(best, float(_ray_circles(p, d, b, np.full(len(b), R)).min()))
        e = b - a
        n = np.column_stack([-e[:, 1], e[:, 0]]) / np.linalg.norm(e, axis=1)[:, None]
        for sgn in (1.0, -1.0):
            off = np.hstack([a + sgn * R * n, b + sgn * R * n])
            best = min(best, float(_ray_segments(p, d, off).min()))
    return max(0.0, best - 1e-6) if best < limit else limit


def detect(world: World, pose, rng=None):
    """Visible objects: (category, robot-frame position, object index)."""
    cfg = world.config
    if not len(world.centers):
        return []
    rel = world.centers - np.asarray(pose[:2])
    dist = np.linalg.norm(rel, axis=1)
    bearing = wrap_angle(np.arctan2(rel[:, 1], rel[:, 0]) - pose[2])
    cand = np.flatnonzero((dist <= cfg.detect_range) & (np.abs(bearing) <= np.radians(cfg.fov_deg) / 2))
    out = []
    c, s = np.cos(pose[2]), np.sin(pose[2])
    for i in cand:
        if dist[i] > 0 and len(world.walls):
            d = rel[i] / dist[i]
            hit = _ray_segments(np.asarray(pose[:2], dtype=float), d[None, :], world.walls).min()
            if hit < dist[i]:
                continue
        if cfg.false_negative > 0 and rng is not None and rng.random() < cfg.false_negative:
            continue
        local = np.array([c * rel[i, 0] + s * rel[i, 1], -s * rel[i, 0] + c * rel[i, 1]])
        out.append((int(world.categories[i]), local, int(i)))
    return out


@dataclass
class SensorBundle:
    rays: np.ndarray
    detections: list


@dataclass
class RobotState:
    pose: np.ndarray
    steps: int = 0
    path_length: float = 0.0
    stopped: bool = False
    trace: list = field(default_factory=list)  # poses, one per step including the start
    actions: list = field(default_factory=list)


def new_state(pose) -> RobotState:
    pose = np.asarray(pose, dtype=float)
    return RobotState(pose=pose.copy(), trace=[pose.copy()])


def sense(world: World, pose, rng=None) -> SensorBundle:
    return SensorBundle(raycast(world, pose), detect(world, pose, rng))


def step(state: RobotState, action: int, world: World, rng=None) -> tuple:
    """Apply one action; returns (new state, sensor bundle)."""
    if state.stopped:
        raise RuntimeError("episode already stopped")
    if action not in ACTIONS:
        raise ValueError(f"unknown action {action!r}")
    cfg = world.config
    pose = state.pose.copy()
    moved = 0.0
    if action == FORWARD:
        d = np.array([np.cos(pose[2]), np.sin(pose[2])])
        moved = sweep_distance(world, pose[:2], d, cfg.forward)
        pose[:2] = pose[:2] + moved * d
    elif action == LEFT:
        pose[2] = wrap_angle(pose[2] + np.radians(cfg.turn_deg))
    elif action == RIGHT:
        pose[2] = wrap_angle(pose[2] - np.radians(cfg.turn_deg))
    new = RobotState(
        pose=pose,
        steps=state.steps + 1,
        path_length=state.path_length + moved,
        stopped=action == STOP,
        trace=state.trace + [pose.copy()],
        actions=state.actions + [int(action)],
    )
    return new, sense(world, pose, rng)


def clearance_grid(world: World, res: float | None = None, inflate: float | None = None):
    """True-map free mask: cells whose center keeps the robot clear of everything.

    Returns (free mask, origin) with cell (i, j) centered at
    ``origin + (j + 0.5, i + 0.5) * res``.
    """
    cfg = world.config
    res = res or cfg.grid_res
    inflate = cfg.robot_radius if inflate is None else inflate
    x0, y0, x1, y1 = world.house.bounds
    origin = np.array([x0, y0])
    nx, ny = int(np.ceil((x1 - x0) / res)), int(np.ceil((y1 - y0) / res))
    xs = x0 + (np.arange(nx) + 0.5) * res
    ys = y0 + (np.arange(ny) + 0.5) * res
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    inside = np.zeros(len(pts), dtype=bool)
    for r in world.house.rooms:
        bx0, by0, bx1, by1 = r.bounds
        inside |= (pts[:, 0] > bx0) & (pts[:, 0] < bx1) & (pts[:, 1] > by0) & (pts[:, 1] < by1)
    free = inside.copy()
    if len(world.walls):
        free &= _min_segment_distance(pts, world.walls) >= inflate
    if len(world.centers):
        d = np.linalg.norm(pts[:, None, :] - world.centers[None], axis=2) - world.radii[None]
        free &= d.min(axis=1) >= inflate
    return free.reshape(ny, nx), origin


def _min_segment_distance(pts, segs, chunk: int = 4096):
    out = np.empty(len(pts))
    a, b = segs[:, :2], segs[:, 2:]
    e = b - a
    ee = np.maximum(np.sum(e * e, axis=1), 1e-18)
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk]
        w = p[:, None, :] - a[None]
        t = np.clip(np.sum(w * e[None], axis=2) / ee[None], 0.0, 1.0)
        d = np.linalg.norm(w - t[..., None] * e[None], axis=2)
        out[s:s + chunk] = d.min(axis=1)
    return out


def target_distance(world: World, pos, category: int) -> float:
    """Distance from ``pos`` to the nearest surface of a ``category`` instance."""
    idx = np.flatnonzero(world.categories == category)
    if not len(idx):
        return np.inf
    d = np.linalg.norm(world.centers[idx] - np.asarray(pos[:2]), axis=1) - world.radii[idx]
    return float(max(0.0, d.min()))


def shortest_path_length(world: World, start, category: int, grid=None) -> float:
    """Geodesic meters from ``start`` to the success boundary of ``category``."""
    cfg = world.config
    if target_distance(world, start, category) <= cfg.success_radius:
        return 0.0
    free, origin = grid if grid is not None else clearance_grid(world)
    res = cfg.grid_res
    ny, nx = free.shape
    xs = origin[0] + (np.arange(nx) + 0.5) * res
    ys = origin[1] + (np.arange(ny) + 0.5) * res
    gx, gy = np.meshgrid(xs, ys)
    idx = np.flatnonzero(world.categories == category)
    d = np.full(free.shape, np.inf)
    for i in idx:
        d = np.minimum(d, np.hypot(gx - world.centers[i, 0], gy - world.centers[i, 1]) - world.radii[i])
    goal = free & (d <= cfg.success_radius)
    if not goal.any():
        return np.inf
    cell = _cell(start, origin, res, free.shape)
    if cell is None or not free[cell]:
        return np.inf
    cost = np.where(free, 1.0, np.inf)
    mcp = MCP_Geometric(cost, fully_connected=True)
    cum, _ = mcp.find_costs([cell])
    best = float(np.min(cum[goal]))
    if not np.isfinite(best):
        return np.inf
    # snap offset from the start point to its cell center
    center = origin + (np.array([cell[1], cell[0]]) + 0.5) * res
    return best * res + float(np.linalg.norm(center - np.asarray(start[:2])))


def _cell(p, origin, res, shape):
    j = int(np.floor((p[0] - origin[0]) / res))
    i = int(np.floor((p[1] - origin[1]) / res))
    if 0 <= i < shape[0] and 0 <= j < shape[1]:
        return (i, j)
    return None


@dataclass
class EpisodeSpec:
    house: int  # house seed
    start: tuple  # (x, y, heading)
    target: int  # category id
    mode: str = "independent"
    index: int = 0


@dataclass
class EpisodeResult:
    index: int
    house: int
    target: int
    success: int
    shortest: float
    path: float
    dts: float
    steps: int
    claimed: bool

    @property
    def spl(self) -> float:
        if not self.success:
            return 0.0
        den = max(self.path, self.shortest)
        return 1.0 if den == 0 else self.shortest / den


def adjudicate(world: World, spec: EpisodeSpec, state: RobotState, shortest: float) -> EpisodeResult:
    """Success needs a stop claim with a true target within the success radius."""
    d = target_distance(world, state.pose, spec.target)
    r = world.config.success_radius
    success = int(state.stopped and d <= r)
    return EpisodeResult(spec.index, spec.house, spec.target, success, float(shortest),
                         float(state.path_length), float(max(0.0, d - r)), state.steps, state.stopped)


def sample_start(world: World, rng, category: int, grid=None, tries: int = 200):
    """A free start pose outside the success boundary with a finite geodesic."""
    free, origin = grid if grid is not None else clearance_grid(world)
    res = world.config.grid_res
    cells = np.argwhere(free)
    for _ in range(tries):
        i, j = cells[int(rng.integers(len(cells)))]
        p = origin + (np.array([j, i]) + 0.5) * res
        if target_distance(world, p, category) <= world.config.success_radius + 0.5:
            continue
        heading = float(rng.uniform(-np.pi, np.pi))
        return (float(p[0]), float(p[1]), heading)
    raise RuntimeError("no valid start pose")
