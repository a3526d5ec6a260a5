"""Procedural semantic houses and the training graphs extracted from them.

A house is a tree of axis-aligned rooms grown from an entrance room: each
new room is drawn from the label transition table of its parent and glued
to a free side of it, with a door in the middle of the shared wall.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import GeneratorConfig

FORMAT_VERSION = 1
_SNAP = 0.1


@dataclass(frozen=True)
class Room:
    id: int
    label: int
    bounds: tuple  # (x0, y0, x1, y1)

    @property
    def center(self):
        x0, y0, x1, y1 = self.bounds
        return np.array([(x0 + x1) / 2, (y0 + y1) / 2])

    @property
    def diagonal(self) -> float:
        x0, y0, x1, y1 = self.bounds
        return float(np.hypot(x1 - x0, y1 - y0))

    def contains(self, p, margin=0.0) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 + margin <= p[0] <= x1 - margin and y0 + margin <= p[1] <= y1 - margin


@dataclass(frozen=True)
class Door:
    rooms: tuple  # (a, b), a < b
    pos: tuple  # midpoint (x, y)
    axis: str  # "x" if the door wall is vertical (constant x), else "y"


@dataclass(frozen=True)
class SceneObject:
    id: int
    category: int
    pos: tuple
    room: int
    radius: float


@dataclass
class HouseSpec:
    rooms: list
    doors: list
    objects: list
    labels: tuple
    categories: tuple
    seed: int = 0
    connectivity: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.connectivity is None:
            n = len(self.rooms)
            adj = np.zeros((n, n), dtype=bool)
            for d in self.doors:
                a, b = d.rooms
                adj[a, b] = adj[b, a] = True
            self.connectivity = adj

    @property
    def mean_diagonal(self) -> float:
        return float(np.mean([r.diagonal for r in self.rooms]))

    @property
    def bounds(self):
        b = np.array([r.bounds for r in self.rooms])
        return (b[:, 0].min(), b[:, 1].min(), b[:, 2].max(), b[:, 3].max())

    def room_at(self, p):
        for r in self.rooms:
            if r.contains(p):
                return r.id
        return None

    def objects_in(self, room_id):
        return [o for o in self.objects if o.room == room_id]

    def category_id(self, name: str) -> int:
        return self.categories.index(name)

    # ---- persistence -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": FORMAT_VERSION,
            "seed": self.seed,
            "labels": list(self.labels),
            "categories": list(self.categories),
            "rooms": [
                {"id": r.id, "label": self.labels[r.label], "bounds": list(r.bounds)}
                for r in self.rooms
            ],
            "doors": [
                {"rooms": list(d.rooms), "pos": list(d.pos), "axis": d.axis}
                for d in self.doors
            ],
            "objects": [
                {
                    "id": o.id,
                    "category": self.categories[o.category],
                    "pos": list(o.pos),
                    "room": o.room,
                    "radius": o.radius,
                }
                for o in self.objects
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HouseSpec":
        if data.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported house format {data.get('format')!r}")
        labels = tuple(data["labels"])
        cats = tuple(data["categories"])
        rooms = [Room(r["id"], labels.index(r["label"]), tuple(r["bounds"])) for r in data["rooms"]]
        doors = [Door(tuple(d["rooms"]), tuple(d["pos"]), d["axis"]) for d in data["doors"]]
        objects = [
            SceneObject(o["id"], cats.index(o["category"]), tuple(o["pos"]), o["room"], o["radius"])
            for o in data["objects"]
        ]
        return cls(rooms, doors, objects, labels, cats, seed=data.get("seed", 0))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "HouseSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def validate_config(config: GeneratorConfig):
    lo, hi = config.room_count
    if hi < 1 or lo < 1 or lo > hi:
        raise ValueError(f"room_count must be a positive range, got {config.room_count}")
    for label in config.labels:
        dist = config.placement.get(label, {})
        if not dist or sum(dist.values()) <= 0:
            raise ValueError(f"empty category distribution for label {label!r}")
        for cat in dist:
            if cat not in config.categories:
                raise ValueError(f"unknown category {cat!r} in placement of {label!r}")
    if not config.entrance_probs or sum(config.entrance_probs.values()) <= 0:
        raise ValueError("empty entrance distribution")


def _choice(rng, dist: dict, names: tuple) -> int:
    keys = sorted(dist)
    p = np.array([dist[k] for k in keys], dtype=float)
    k = keys[int(rng.choice(len(keys), p=p / p.sum()))]
    return names.index(k)


def _snap(v):
    return round(round(v / _SNAP) * _SNAP, 6)


def _overlaps(a, b) -> bool:
    eps = 1e-6
    return a[0] < b[2] - eps and b[0] < a[2] - eps and a[1] < b[3] - eps and b[1] < a[3] - eps


def _place_child(rng, parent, size, config, rooms):
    """Try to glue a (w, h) rectangle to a free side of ``parent``."""
    w, h = size
    px0, py0, px1, py1 = parent.bounds
    need = config.door_width + 0.6
    sides = rng.permutation(4)
    for side in sides:
        for _ in range(6):
            if side in (0, 1):  # east / west: shared wall is vertical
                lo, hi = py0 - h + need, py1 - need
                if lo > hi:
                    break
                y0 = _snap(rng.uniform(lo, hi))
                x0 = px1 if side == 0 else _snap(px0 - w)
                rect = (x0, y0, _snap(x0 + w), _snap(y0 + h))
                ov = (max(py0, rect[1]), min(py1, rect[3]))
                wall_x = px1 if side == 0 else px0
            else:  # north / south: shared wall is horizontal
                lo, hi = px0 - w + need, px1 - need
                if lo > hi:
                    break
                x0 = _snap(rng.uniform(lo, hi))
                y0 = py1 if side == 2 else _snap(py0 - h)
                rect = (x0, y0, _snap(x0 + w), _snap(y0 + h))
                ov = (max(px0, rect[0]), min(px1, rect[2]))
                wall_y = py1 if side == 2 else py0
            if ov[1] - ov[0] < need - 1e-6:
                continue
            if any(_overlaps(rect, r.bounds) for r in rooms):
                continue
            half = config.door_width / 2 + 0.3
            a, b = ov[0] + half, ov[1] - half
            t = _snap(rng.uniform(a, max(a, b)))
            if side in (0, 1):
                return rect, (wall_x, t), "x"
            return rect, (t, wall_y), "y"
    return None


def generate_house(seed: int, config: GeneratorConfig | None = None) -> HouseSpec:
    """Deterministically grow a house from ``seed``."""
    config = config or GeneratorConfig()
    validate_config(config)
    rng = np.random.default_rng(seed)
    labels, cats = tuple(config.labels), tuple(config.categories)
    lo, hi = config.room_count
    target_rooms = int(rng.integers(lo, hi + 1))

    def sample_size(label):
        (wl, wh), (hl, hh) = config.room_size[labels[label]]
        w, h = _snap(rng.uniform(wl, wh)), _snap(rng.uniform(hl, hh))
        return (w, h) if rng.random() < 0.5 else (h, w)

    first = _choice(rng, config.entrance_probs, labels)
    w, h = sample_size(first)
    rooms = [Room(0, first, (0.0, 0.0, w, h))]
    doors = []
    children = [0]
    attempts = 0
    while len(rooms) < target_rooms and attempts < 60:
        attempts += 1
        open_rooms = [
            r for r in rooms
            if children[r.id] < config.max_children.get(labels[r.label], 0)
            and config.transitions.get(labels[r.label])
        ]
        if not open_rooms:
            break
        parent = open_rooms[int(rng.integers(len(open_rooms)))]
        label = _choice(rng, config.transitions[labels[parent.label]], labels)
        placed = _place_child(rng, parent, sample_size(label), config, rooms)
        if placed is None:
            continue
        rect, door_pos, axis = placed
        rid = len(rooms)
        rooms.append(Room(rid, label, rect))
        children.append(0)
        children[parent.id] += 1
        doors.append(Door((parent.id, rid), door_pos, axis))

    objects = []
    for room in rooms:
        room_doors = [np.array(d.pos) for d in doors if room.id in d.rooms]
        wanted = []
        dist = config.placement[labels[room.label]]
        for cat_name in sorted(dist):
            if rng.random() >= dist[cat_name]:
                continue
            cmin, cmax = config.counts.get(cat_name, (1, 1))
            radius = config.object_radius.get(cat_name, config.default_radius)
            wanted += [(cats.index(cat_name), radius)] * int(rng.integers(cmin, cmax + 1))
        # Presence is decided above; geometry retries whole layouts so the
        # configured frequencies survive crowded rooms.
        wanted.sort(key=lambda cr: (-cr[1], cr[0]))
        best = []
        for _ in range(40):
            placed = []
            for cat, radius in wanted:
                pos = _place_object(rng, room, radius, placed, room_doors, config)
                if pos is None:
                    break
                placed.append((pos, radius, cat))
            if len(placed) > len(best):
                best = placed
            if len(placed) == len(wanted):
                break
        for pos, radius, cat in best:
            objects.append(SceneObject(len(objects), cat, pos, room.id, radius))
    return HouseSpec(rooms, doors, objects, labels, cats, seed=seed)


def _place_object(rng, room, radius, placed, door_pts, config):
    x0, y0, x1, y1 = room.bounds
    m = radius + config.wall_margin
    if x1 - x0 <= 2 * m or y1 - y0 <= 2 * m:
        return None
    for _ in range(30):
        # Furniture hugs walls: pick a wall band first, then a spot along it.
        if rng.random() < 0.75:
            side = int(rng.integers(4))
            depth = rng.uniform(0.0, 0.35)
            if side == 0:
                p = (x0 + m + depth, rng.uniform(y0 + m, y1 - m))
            elif side == 1:
                p = (x1 - m - depth, rng.uniform(y0 + m, y1 - m))
            elif side == 2:
                p = (rng.uniform(x0 + m, x1 - m), y0 + m + depth)
            else:
                p = (rng.uniform(x0 + m, x1 - m), y1 - m - depth)
        else:
            p = (rng.uniform(x0 + m, x1 - m), rng.uniform(y0 + m, y1 - m))
        p = (round(float(p[0]), 4), round(float(p[1]), 4))
        if not room.contains(p, m - 1e-9):
            continue
        if any(np.hypot(p[0] - q[0][0], p[1] - q[0][1]) < radius + q[1] + config.object_gap for q in placed):
            continue
        if any(np.hypot(p[0] - d[0], p[1] - d[1]) < radius + config.door_clearance for d in door_pts):
            continue
        return p
    return None


# ---- training graph forms ------------------------------------------------

@dataclass
class ObjectGraph:
    categories: np.ndarray  # (N,) int
    rooms: np.ndarray  # (N,) int
    edges: np.ndarray  # (E, 2) int, u < v
    weights: np.ndarray  # (E,)
    features: np.ndarray  # (N, dim)

    @property
    def n(self) -> int:
        return len(self.categories)

    def neighbors(self) -> list:
        nb = [set() for _ in range(self.n)]
        for u, v in self.edges:
            nb[u].add(int(v))
            nb[v].add(int(u))
        return nb


@dataclass
class RegionSubgraph:
    room: int
    label: int
    categories: np.ndarray  # member categories, one per object instance
    positions: np.ndarray
    edges: np.ndarray
    weights: np.ndarray

    @property
    def empty(self) -> bool:
        return len(self.categories) == 0


@dataclass
class HouseSequence:
    order: list  # room ids in BFS order
    steps: list  # steps[i] has length i: links of order[i] to order[:i]
    labels: list  # label per position in ``order``

    def rebuild(self) -> np.ndarray:
        n = len(self.order)
        adj = np.zeros((n, n), dtype=bool)
        for i, a in enumerate(self.steps):
            for j, bit in enumerate(a):
                if bit:
                    u, v = self.order[i], self.order[j]
                    adj[u, v] = adj[v, u] = True
        return adj


def category_features(categories, feature_seed: int, dim: int = 16) -> np.ndarray:
    """Unit-norm pseudo-random vectors, a pure function of (category, seed)."""
    out = np.empty((len(categories), dim))
    for i, c in enumerate(categories):
        v = np.random.default_rng([feature_seed, int(c)]).standard_normal(dim)
        out[i] = v / np.linalg.norm(v)
    return out


# Decay length as a fraction of the mean room diagonal.
WEIGHT_SCALE = 0.5


def edge_weight(d, scale):
    return np.exp(-np.asarray(d) / scale)


def extract_object_graph(house: HouseSpec, feature_seed: int = 0, dim: int = 16) -> ObjectGraph:
    objs = house.objects
    pos = np.array([o.pos for o in objs]).reshape(-1, 2)
    cats = np.array([o.category for o in objs], dtype=int)
    rooms = np.array([o.room for o in objs], dtype=int)
    lam = WEIGHT_SCALE * house.mean_diagonal
    edges = []
    for r in house.rooms:
        idx = np.flatnonzero(rooms == r.id)
        for a in range(len(idx)):
            for b in range(a + 1, len(idx)):
                edges.append((idx[a], idx[b]))
    for d in house.doors:
        ra, rb = d.rooms
        ia, ib = np.flatnonzero(rooms == ra), np.flatnonzero(rooms == rb)
        if len(ia) == 0 or len(ib) == 0:
            continue
        door = np.array(d.pos)
        u = ia[np.argmin(np.linalg.norm(pos[ia] - door, axis=1))]
        v = ib[np.argmin(np.linalg.norm(pos[ib] - door, axis=1))]
        edges.append((min(u, v), max(u, v)))
    edges = np.array(edges, dtype=int).reshape(-1, 2)
    dist = np.linalg.norm(pos[edges[:, 0]] - pos[edges[:, 1]], axis=1) if len(edges) else np.zeros(0)
    return ObjectGraph(cats, rooms, edges, edge_weight(dist, lam), category_features(cats, feature_seed, dim))


def extract_region_subgraphs(house: HouseSpec) -> list:
    lam = WEIGHT_SCALE * house.mean_diagonal
    subs = []
    for r in house.rooms:
        members = house.objects_in(r.id)
        pos = np.array([o.pos for o in members]).reshape(-1, 2)
        n = len(members)
        edges = np.array([(a, b) for a in range(n) for b in range(a + 1, n)], dtype=int).reshape(-1, 2)
        d = np.linalg.norm(pos[edges[:, 0]] - pos[edges[:, 1]], axis=1) if len(edges) else np.zeros(0)
        subs.append(RegionSubgraph(
            r.id, r.label, np.array([o.category for o in members], dtype=int), pos, edges, edge_weight(d, lam)
        ))
    return subs


def extract_house_sequence(house: HouseSpec, entrance: int = 0) -> HouseSequence:
    """Breadth-first node order from ``entrance``; neighbors visited by id."""
    adj = house.connectivity
    order, seen = [], {entrance}
    queue = deque([entrance])
    while queue:
        u = queue.popleft()
        order.append(u)
        for v in np.flatnonzero(adj[u]):
            if v not in seen:
                seen.add(int(v))
                queue.append(int(v))
    steps = [np.array([adj[order[i], order[j]] for j in range(i)], dtype=np.int8) for i in range(len(order))]
    labels = [house.rooms[u].label for u in order]
    return HouseSequence(order, steps, labels)


def split_seeds(seeds, test_fraction=0.2):
    """Deterministic train/test split by seed value."""
    seeds = sorted(seeds)
    n_test = int(round(len(seeds) * test_fraction))
    cut = len(seeds) - n_test
    return seeds[:cut], seeds[cut:]


def generate_dataset(seeds, config=None) -> list:
    return [generate_house(s, config) for s in seeds]


def save_dataset(houses, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for h in houses:
        h.save(out / f"house_{h.seed:05d}.json")


def load_dataset(data_dir) -> list:
    return [HouseSpec.load(p) for p in sorted(Path(data_dir).glob("house_*.json"))]
