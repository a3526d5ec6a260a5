"""Local obstacle geometry: scan projection, DBSCAN, hulls, Delaunay/Voronoi.

Everything here works in the birth frame (meters, radians) unless a
function says it returns robot-frame coordinates.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

MERGE_TOL = 1e-6


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def to_robot_frame(points, pose):
    """Birth-frame points into the frame of ``pose = (x, y, heading)``."""
    p = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(pose[:2])
    return p @ rotation(pose[2])


def to_world_frame(points, pose):
    p = np.atleast_2d(np.asarray(points, dtype=float))
    return p @ rotation(pose[2]).T + np.asarray(pose[:2])


def project_scans(rays, pose, max_range: float = np.inf) -> np.ndarray:
    """World endpoints of the rays that hit something.

    ``rays`` is an (n, 2) array of (bearing relative to heading, range).
    Rays with a non-finite range or one at/over ``max_range`` are dropped.
    """
    rays = np.asarray(rays, dtype=float).reshape(-1, 2)
    r = rays[:, 1]
    if np.any(r <= 0):
        raise ValueError("ranges must be positive")
    hit = np.isfinite(r) & (r < max_range)
    ang = pose[2] + rays[hit, 0]
    return np.column_stack([pose[0] + r[hit] * np.cos(ang), pose[1] + r[hit] * np.sin(ang)])


class ScatterBuffer:
    """Obstacle points of the last ``window`` steps, optionally voxel-thinned."""

    def __init__(self, window: int = 60, voxel: float = 0.0):
        if window < 1:
            raise ValueError("window must be at least 1")
        self.window = window
        self.voxel = voxel
        self._frames = deque()

    def add(self, step: int, points):
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(points)):
            raise ValueError("non-finite scatter point")
        if self.voxel > 0 and len(points):
            points = voxel_thin(points, self.voxel)
        self._frames.append((step, points))
        while self._frames and self._frames[0][0] <= step - self.window:
            self._frames.popleft()

    def points(self) -> np.ndarray:
        if not self._frames:
            return np.zeros((0, 2))
        pts = np.concatenate([p for _, p in self._frames])
        return voxel_thin(pts, self.voxel) if self.voxel > 0 and len(pts) else pts

    def __len__(self):
        return sum(len(p) for _, p in self._frames)


def voxel_thin(points, voxel):
    """One representative point (the first) per occupied ``voxel`` cell."""
    keys = np.floor(points / voxel).astype(np.int64)
    _, idx = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(idx)]


def dbscan(points, eps: float, min_pts: int) -> np.ndarray:
    """Labels per point (cluster ids from 0, -1 for noise).

    Clusters are seeded by scanning points in index order and grown
    breadth-first; a border point joins the first cluster that reaches it.
    """
    if eps <= 0 or min_pts < 1:
        raise ValueError("eps must be positive and min_pts at least 1")
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(points)
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return labels
    nbrs = cKDTree(points).query_ball_point(points, eps)
    core = np.array([len(nb) >= min_pts for nb in nbrs])
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            p = queue.popleft()
            if not core[p]:
                continue
            for q in sorted(nbrs[p]):
                if labels[q] == -1:
                    labels[q] = cluster
                    if core[q]:
                        queue.append(q)
        cluster += 1
    return labels


@dataclass
class Hull:
    vertices: np.ndarray  # (k, 2), counter-clockwise
    degenerate: bool  # fewer than 3 non-collinear points


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> Hull:
    """Monotone-chain hull; collinear inputs give their two extreme points."""
    pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 2), axis=0)
    if len(pts) == 0:
        raise ValueError("hull of no points")
    if len(pts) <= 2:
        return Hull(pts, True)
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        return Hull(hull, True)
    return Hull(hull, False)


def point_in_hull(p, hull: Hull, tol: float = 1e-9) -> bool:
    """Inside-or-on test for a hull (segments and points count their span)."""
    v = hull.vertices
    p = np.asarray(p, dtype=float)
    if hull.degenerate:
        if len(v) == 1:
            return bool(np.linalg.norm(p - v[0]) <= tol)
        return bool(segment_distance(p, v[0], v[-1]) <= tol)
    for i in range(len(v)):
        if _cross(v[i], v[(i + 1) % len(v)], p) < -tol:
            return False
    return True


def segment_distance(p, a, b) -> float:
    px, py = float(p[0]), float(p[1])
    ax, ay = float(a[0]), float(a[1])
    abx, aby = float(b[0]) - ax, float(b[1]) - ay
    den = abx * abx + aby * aby
    t = 0.0 if den == 0 else min(1.0, max(0.0, ((px - ax) * abx + (py - ay) * aby) / den))
    return math.hypot(px - (ax + t * abx), py - (ay + t * aby))


def hull_distance(p, hull: Hull) -> float:
    """Distance from ``p`` to the hull region (0 inside)."""
    if not hull.degenerate and point_in_hull(p, hull):
        return 0.0
    v = hull.vertices
    if len(v) == 1:
        return float(np.linalg.norm(np.asarray(p) - v[0]))
    return min(segment_distance(p, v[i], v[(i + 1) % len(v)]) for i in range(len(v)))


def segments_intersect(a, b, c, d) -> bool:
    d1, d2 = _cross(c, d, a), _cross(c, d, b)
    d3, d4 = _cross(a, b, c), _cross(a, b, d)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0:
        return True
    return False


def segment_hull_distance(a, b, hull: Hull) -> float:
    """Smallest distance between segment ab and the hull region."""
    if hull_distance(a, hull) == 0.0 or hull_distance(b, hull) == 0.0:
        return 0.0
    v = hull.vertices
    if len(v) == 1:
        return segment_distance(v[0], a, b)
    edges = [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))] if len(v) > 2 else [(v[0], v[1])]
    best = np.inf
    for c, d in edges:
        if segments_intersect(a, b, c, d):
            return 0.0
        best = min(best, segment_distance(a, c, d), segment_distance(b, c, d),
                   segment_distance(c, a, b), segment_distance(d, a, b))
    return float(best)


def circumcircle(a, b, c):
    """(center, radius) of the circle through three points; None if collinear."""
    ax, ay = a
    bx, by = b
    cx, cy = c
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if abs(d) < 1e-14:
        return None
    a2, b2, c2 = ax * ax + ay * ay, bx * bx + by * by, cx * cx + cy * cy
    ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    center = np.array([ux, uy])
    return center, float(np.linalg.norm(center - np.asarray(a, dtype=float)))


def merge_duplicates(points, tol: float = MERGE_TOL):
    """(unique points, index map) with points closer than ``tol`` merged."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    keep, index = [], np.zeros(len(points), dtype=int)
    for i, p in enumerate(points):
        for k, q in enumerate(keep):
            if np.linalg.norm(p - q) < tol:
                index[i] = k
                break
        else:
            index[i] = len(keep)
            keep.append(p)
    return np.array(keep).reshape(-1, 2), index


def delaunay(points) -> np.ndarray:
    """Bowyer-Watson triangulation; (T, 3) indices into ``points``, CCW."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    if n < 3:
        return np.zeros((0, 3), dtype=int)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = max(float(np.max(hi - lo)), 1.0)
    mid = (lo + hi) / 2
    big = 1e3 * span
    allp = np.vstack([pts, mid + [-big, -big], mid + [big, -big], mid + [0.0, big]])
    tris = [(n, n + 1, n + 2)]
    circles = {tris[0]: circumcircle(*allp[list(tris[0])])}
    for i in range(n):
        p = allp[i]
        bad = []
        for t in tris:
            cc = circles[t]
            if cc is not None and np.linalg.norm(p - cc[0]) < cc[1] * (1 + 1e-12):
                bad.append(t)
        # Boundary of the cavity: edges of exactly one bad triangle.
        count = {}
        for t in bad:
            for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                key = tuple(sorted(e))
                count[key] = count.get(key, 0) + 1
        bad_set = set(bad)
        tris = [t for t in tris if t not in bad_set]
        for t in bad:
            circles.pop(t, None)
        for t in bad:
            for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                if count[tuple(sorted(e))] == 1:
                    nt = (e[0], e[1], i)
                    if _cross(allp[nt[0]], allp[nt[1]], allp[nt[2]]) < 0:
                        nt = (e[1], e[0], i)
                    tris.append(nt)
                    circles[nt] = circumcircle(*allp[list(nt)])
    out = [t for t in tris if max(t) < n and circles[t] is not None]
    return np.array(out, dtype=int).reshape(-1, 3)


@dataclass
class ObstacleClique:
    points: np.ndarray
    hull: Hull
    centroid: np.ndarray
    objects: list = field(default_factory=list)  # (category, position) detections

    @classmethod
    def from_points(cls, points, objects=None):
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        return cls(points, convex_hull(points), points.mean(axis=0), list(objects or []))


@dataclass
class VoronoiLocalGraph:
    vertices: np.ndarray  # (V, 2)
    edges: list  # (i, j) index pairs into vertices
    clearance: list  # per edge, meters
    vertex_cliques: list  # per vertex, indices of the sites whose cells meet there
    sites: np.ndarray  # (S, 2) clique centroids after merging
    site_of_clique: np.ndarray  # clique index -> site index

    def adjacent_vertices(self, site: int):
        return [v for v, ss in enumerate(self.vertex_cliques) if site in ss]


def _clearance(a, b, tree, step=0.05):
    if tree is None:
        return np.inf
    n = max(2, int(np.ceil(np.linalg.norm(b - a) / step)) + 1)
    samples = a + np.linspace(0.0, 1.0, n)[:, None] * (b - a)
    d, _ = tree.query(samples)
    return float(np.min(d))


def build_voronoi(cliques, robot_radius: float = 0.18) -> VoronoiLocalGraph:
    """Dual of the Delaunay triangulation of clique centroids, pruned for the robot.

    Vertices inside an inflated hull are dropped, as are edges that pass
    within ``robot_radius`` of any hull or obstacle point.  With fewer than
    three sites, or collinear sites, each neighboring pair contributes a
    piece of its perpendicular bisector instead.
    """
    if not cliques:
        raise ValueError("need at least one clique")
    sites, site_of = merge_duplicates(np.array([c.centroid for c in cliques]))
    all_pts = np.concatenate([c.points for c in cliques]) if cliques else np.zeros((0, 2))
    tree = cKDTree(all_pts) if len(all_pts) else None
    hulls = [c.hull for c in cliques]
    tris = delaunay(sites) if len(sites) >= 3 else np.zeros((0, 3), dtype=int)
    verts, vsites = [], []
    if len(tris):
        for t in tris:
            cc = circumcircle(*sites[t])
            verts.append(cc[0])
            vsites.append(set(int(s) for s in t))
        verts, vsites = _merge_vertex_sets(verts, vsites)
        # Voronoi edges join circumcenters of triangles sharing a side.
        tri_vertex = [_find(verts, circumcircle(*sites[t])[0]) for t in tris]
        by_edge = {}
        for k, t in enumerate(tris):
            for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                by_edge.setdefault(tuple(sorted(e)), []).append(tri_vertex[k])
        raw_edges = sorted({tuple(sorted(v)) for v in by_edge.values() if len(v) == 2 and v[0] != v[1]})
    else:
        verts, vsites, raw_edges = _bisector_fallback(sites)
    verts = np.array(verts, dtype=float).reshape(-1, 2)
    boxes = np.array([np.r_[h.vertices.min(axis=0), h.vertices.max(axis=0)] for h in hulls])

    def near(lo, hi):
        # Hulls whose bounding box comes within the robot radius of [lo, hi].
        return [hulls[k] for k in np.flatnonzero(
            (boxes[:, 0] - robot_radius <= hi[0]) & (boxes[:, 2] + robot_radius >= lo[0])
            & (boxes[:, 1] - robot_radius <= hi[1]) & (boxes[:, 3] + robot_radius >= lo[1]))]

    ok = np.array([all(hull_distance(v, h) > robot_radius for h in near(v, v)) for v in verts], dtype=bool)
    if tree is not None and len(verts):
        d, _ = tree.query(verts)
        ok &= d > robot_radius
    keep = np.flatnonzero(ok)
    remap = {int(k): i for i, k in enumerate(keep)}
    edges, clear = [], []
    for a, b in raw_edges:
        if a not in remap or b not in remap:
            continue
        pa, pb = verts[a], verts[b]
        lo, hi = np.minimum(pa, pb), np.maximum(pa, pb)
        if any(segment_hull_distance(pa, pb, h) <= robot_radius for h in near(lo, hi)):
            continue
        c = _clearance(pa, pb, tree)
        if c < robot_radius:
            continue
        edges.append((remap[a], remap[b]))
        clear.append(c)
    return VoronoiLocalGraph(verts[keep], edges, clear, [vsites[k] for k in keep], sites, site_of)


def _find(verts, p):
    for i, v in enumerate(verts):
        if np.linalg.norm(v - p) < 1e-9:
            return i
    raise KeyError("vertex not found")


def _merge_vertex_sets(verts, vsites, tol=1e-9):
    out, sets = [], []
    for v, s in zip(verts, vsites):
        for i, u in enumerate(out):
            if np.linalg.norm(u - v) < tol:
                sets[i] |= s
                break
        else:
            out.append(v)
            sets.append(set(s))
    return out, sets


def _bisector_fallback(sites, half_length: float = 2.0):
    verts, vsites, edges = [], [], []
    if len(sites) < 2:
        return verts, vsites, edges
    d = sites[-1] - sites[0]
    order = np.argsort(sites @ d) if np.linalg.norm(d) > 0 else np.arange(len(sites))
    for a, b in zip(order[:-1], order[1:]):
        mid = (sites[a] + sites[b]) / 2
        u = sites[b] - sites[a]
        perp = np.array([-u[1], u[0]]) / np.linalg.norm(u)
        i = len(verts)
        verts += [mid - half_length * perp, mid + half_length * perp]
        vsites += [{int(a), int(b)}, {int(a), int(b)}]
        edges.append((i, i + 1))
    return verts, vsites, edges


def subgoal_to_coords(graph: VoronoiLocalGraph, node_pos, pose) -> np.ndarray:
    """Nearest navigable Voronoi vertex to ``node_pos``, in the robot frame.

    With an empty graph the node position itself is used.
    """
    node_pos = np.asarray(node_pos, dtype=float)
    if len(graph.vertices):
        target = graph.vertices[int(np.argmin(np.linalg.norm(graph.vertices - node_pos, axis=1)))]
    else:
        target = node_pos
    return to_robot_frame(target, pose)[0]


VIEW_BINS = 36
VIEW_HALF_ANGLE = np.pi / 3


def view_bins(center, view) -> set:
    """Angular bins (around ``center``) of the hull side seen from ``view``."""
    a = np.arctan2(view[1] - center[1], view[0] - center[0])
    width = 2 * np.pi / VIEW_BINS
    mids = (np.arange(VIEW_BINS) + 0.5) * width - np.pi
    diff = np.abs((mids - a + np.pi) % (2 * np.pi) - np.pi)
    return set(np.flatnonzero(diff <= VIEW_HALF_ANGLE).tolist())


def next_best_view(clique: ObstacleClique, graph: VoronoiLocalGraph, visited_views, pose) -> np.ndarray:
    """Robot-frame offset to the adjacent vertex that uncovers most of the hull.

    ``visited_views`` are birth-frame points the clique was already seen
    from.  Ties go to the vertex nearer the robot; once no view adds
    coverage the nearest adjacent vertex is returned.
    """
    c = np.asarray(clique.centroid, dtype=float)
    site = _nearest_site(graph, c)
    cand = graph.adjacent_vertices(site) if site is not None else []
    robot = np.asarray(pose[:2], dtype=float)
    if not cand:
        raise ValueError("clique has no adjacent Voronoi vertex")
    seen = set()
    for v in visited_views:
        seen |= view_bins(c, v)
    visited = [np.asarray(v, dtype=float) for v in visited_views]

    def is_visited(p):
        return any(np.linalg.norm(p - v) < 1e-6 for v in visited)

    best, key = None, None
    for k in cand:
        p = graph.vertices[k]
        if is_visited(p):
            continue
        gain = len(view_bins(c, p) - seen)
        cand_key = (-gain, float(np.linalg.norm(p - robot)), k)
        if key is None or cand_key < key:
            best, key = p, cand_key
    if best is None or key[0] == 0:
        best = min((graph.vertices[k] for k in cand), key=lambda p: float(np.linalg.norm(p - robot)))
    return to_robot_frame(best, pose)[0]


def _nearest_site(graph, p):
    if not len(graph.sites):
        return None
    return int(np.argmin(np.linalg.norm(graph.sites - p, axis=1)))


def split_cluster(points, max_extent: float) -> list:
    """Cut a cluster into pieces no longer than ``max_extent`` along its main axis.

    Long wall runs would otherwise form one room-sized hull with a single
    centroid; splitting keeps sites near the obstacles they stand for.
    """
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return [points]
    centered = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    t = centered @ vt[0]
    span = float(t.max() - t.min())
    k = max(1, int(np.ceil(span / max_extent)))
    if k == 1:
        return [points]
    edges = np.linspace(t.min(), t.max(), k + 1)
    idx = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, k - 1)
    return [points[idx == i] for i in range(k) if np.any(idx == i)]


def scatter_cliques(points, eps: float, min_pts: int, max_extent: float) -> list:
    """Obstacle cliques from raw scatter: DBSCAN, drop noise, split long clusters."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    labels = dbscan(points, eps, min_pts)
    out = []
    for lab in range(labels.max() + 1 if len(labels) else 0):
        for piece in split_cluster(points[labels == lab], max_extent):
            if len(piece):
                out.append(ObstacleClique.from_points(piece))
    return out
