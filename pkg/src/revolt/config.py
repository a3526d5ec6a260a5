"""Run-wide constants for every module, grouped per subsystem.

Every group is a plain dataclass so a whole configuration can round-trip
through JSON (``Config.to_json`` / ``Config.from_json``).  The environment
variable ``REVOLT_SEED`` overrides ``Config.seed`` when a config is loaded.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

LABELS = (
    "hallway",
    "living_room",
    "kitchen",
    "dining_room",
    "bedroom",
    "bathroom",
    "office",
    "laundry",
    "gym",
    "closet",
)

# 21 target categories first, then 9 context-only categories.
TARGET_CATEGORIES = (
    "chair", "table", "picture", "cabinet", "cushion", "sofa", "bed",
    "chest_of_drawers", "plant", "sink", "toilet", "stool", "towel",
    "tv_monitor", "shower", "bathtub", "counter", "fireplace",
    "gym_equipment", "seating", "clothes",
)
CATEGORIES = TARGET_CATEGORIES + (
    "refrigerator", "stove", "desk", "bookshelf", "lamp", "washer",
    "nightstand", "shoe_rack", "dishwasher",
)
SMALL_TARGETS = ("chair", "sofa", "plant", "bed", "toilet", "tv_monitor")


def _placement():
    return {
        "hallway": {"shoe_rack": 0.7, "picture": 0.6, "plant": 0.35, "stool": 0.2},
        "living_room": {
            "sofa": 0.9, "tv_monitor": 0.75, "cushion": 0.7, "table": 0.5,
            "fireplace": 0.45, "lamp": 0.5, "plant": 0.3, "seating": 0.4,
        },
        "kitchen": {
            "refrigerator": 0.9, "stove": 0.9, "counter": 0.85, "sink": 0.8,
            "dishwasher": 0.5, "cabinet": 0.4, "stool": 0.3,
        },
        "dining_room": {"table": 0.95, "chair": 0.95, "picture": 0.4, "plant": 0.3, "cabinet": 0.35},
        "bedroom": {
            "bed": 0.95, "nightstand": 0.7, "chest_of_drawers": 0.6,
            "clothes": 0.35, "lamp": 0.35, "cushion": 0.25,
        },
        "bathroom": {"toilet": 0.9, "sink": 0.85, "towel": 0.7, "shower": 0.5, "bathtub": 0.45},
        "office": {"desk": 0.9, "chair": 0.8, "bookshelf": 0.65, "tv_monitor": 0.3, "plant": 0.25},
        "laundry": {"washer": 0.9, "clothes": 0.6, "cabinet": 0.5, "towel": 0.35, "sink": 0.3},
        "gym": {"gym_equipment": 0.95, "seating": 0.45, "towel": 0.35, "tv_monitor": 0.3},
        "closet": {"clothes": 0.85, "chest_of_drawers": 0.35, "shoe_rack": 0.3, "cabinet": 0.3},
    }


def _transitions():
    return {
        "hallway": {"bedroom": 0.55, "bathroom": 0.25, "office": 0.1, "living_room": 0.05, "closet": 0.05},
        "living_room": {"dining_room": 0.5, "hallway": 0.3, "gym": 0.1, "office": 0.1},
        "kitchen": {"dining_room": 0.55, "laundry": 0.35, "hallway": 0.1},
        "dining_room": {"kitchen": 0.7, "hallway": 0.2, "living_room": 0.1},
        "bedroom": {"bathroom": 0.65, "closet": 0.35},
        "bathroom": {},
        "office": {"closet": 0.6, "bathroom": 0.4},
        "laundry": {},
        "gym": {},
        "closet": {},
    }


@dataclass
class GeneratorConfig:
    labels: tuple = LABELS
    categories: tuple = CATEGORIES
    target_categories: tuple = TARGET_CATEGORIES
    small_targets: tuple = SMALL_TARGETS
    room_count: tuple = (4, 10)
    entrance_probs: dict = field(default_factory=lambda: {"hallway": 0.6, "living_room": 0.3, "kitchen": 0.1})
    transitions: dict = field(default_factory=_transitions)
    max_children: dict = field(default_factory=lambda: {
        "hallway": 4, "living_room": 3, "kitchen": 2, "dining_room": 2,
        "bedroom": 1, "office": 1, "bathroom": 0, "laundry": 0, "gym": 0, "closet": 0,
    })
    # (width range, depth range) in meters.  Rooms are sized so that covering a
    # whole house takes longer than the 500-step episode budget.
    room_size: dict = field(default_factory=lambda: {
        "hallway": ((2.2, 2.6), (7.2, 10.4)),
        "living_room": ((7.2, 9.6), (6.4, 8.8)),
        "kitchen": ((5.6, 7.2), (5.6, 7.2)),
        "dining_room": ((5.6, 7.2), (5.6, 7.2)),
        "bedroom": ((5.6, 7.2), (5.6, 7.2)),
        "bathroom": ((5.12, 6.08), (5.12, 6.08)),
        "office": ((4.8, 6.4), (4.8, 6.4)),
        "laundry": ((4.8, 5.76), (4.8, 5.76)),
        "gym": ((5.6, 7.2), (5.6, 7.2)),
        "closet": ((4.48, 5.12), (4.48, 5.12)),
    })
    placement: dict = field(default_factory=_placement)
    counts: dict = field(default_factory=lambda: {"chair": (2, 3), "gym_equipment": (1, 2)})
    object_radius: dict = field(default_factory=lambda: {
        "bed": 0.6, "sofa": 0.5, "table": 0.45, "counter": 0.4, "bathtub": 0.45,
        "desk": 0.4, "fireplace": 0.35, "refrigerator": 0.35, "gym_equipment": 0.4,
        "shower": 0.35, "bookshelf": 0.35, "stove": 0.3, "washer": 0.3,
    })
    default_radius: float = 0.25
    door_width: float = 1.0
    wall_margin: float = 0.15
    object_gap: float = 0.45
    door_clearance: float = 0.9


@dataclass
class ObjectEmbedConfig:
    dim: int = 16
    depth: int = 1
    negatives: int = 5
    lr: float = 0.05
    epochs: int = 20
    init_scale: float = 4.0
    activation: str = "tanh"
    feature_seed: int = 0
    seed: int = 0


@dataclass
class RegionEmbedConfig:
    hidden: int = 32
    negatives: int = 5
    lr: float = 0.5
    epochs: int = 30
    batch: int = 16
    seed: int = 0


@dataclass
class RolloutConfig:
    n_max: int = 12
    hidden: int = 64
    lr: float = 0.5
    epochs: int = 25
    batch: int = 16
    clip: float = 5.0
    depth: int = 3
    samples: int = 8
    seed: int = 0


@dataclass
class TopoConfig:
    merge_radius: float = 0.5
    clique_radius: float = 3.0
    clique_cap: int = 3
    vertex_merge_radius: float = 1.5
    vertex_min_clearance: float = 0.35
    ghost_merge_radius: float = 1.5
    frontier_attach_radius: float = 4.0
    region_scale: float = 2.75


@dataclass
class ReasonerConfig:
    c1: float = 1.0
    c2: float = 0.5
    depth: int = 3
    samples: int = 8
    diameter: float = 15.0
    ablate: tuple = ()
    visit_cap: int = 2


@dataclass
class PlannerConfig:
    eps: float = 0.4
    min_pts: int = 4
    window: int = 60
    robot_radius: float = 0.18
    max_piece: float = 1.2
    voxel: float = 0.1


@dataclass
class SimConfig:
    max_steps: int = 500
    forward: float = 0.25
    turn_deg: float = 30.0
    n_rays: int = 180
    fov_deg: float = 90.0
    max_range: float = 5.0
    detect_range: float = 3.5
    success_radius: float = 1.0
    robot_radius: float = 0.18
    grid_res: float = 0.1
    false_negative: float = 0.0


@dataclass
class EvalConfig:
    episodes: int = 200
    small: bool = False
    train_houses: int = 500
    test_fraction: float = 0.2
    replan_every: int = 10
    subgoal_timeout: int = 60


_GROUPS = {
    "generator": GeneratorConfig,
    "object_embed": ObjectEmbedConfig,
    "region_embed": RegionEmbedConfig,
    "rollout": RolloutConfig,
    "topo": TopoConfig,
    "reasoner": ReasonerConfig,
    "planner": PlannerConfig,
    "sim": SimConfig,
    "eval": EvalConfig,
}


@dataclass
class Config:
    seed: int = 0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    object_embed: ObjectEmbedConfig = field(default_factory=ObjectEmbedConfig)
    region_embed: RegionEmbedConfig = field(default_factory=RegionEmbedConfig)
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    topo: TopoConfig = field(default_factory=TopoConfig)
    reasoner: ReasonerConfig = field(default_factory=ReasonerConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Config":
        kwargs: dict[str, Any] = {}
        for key, value in data.items():
            if key == "seed":
                kwargs["seed"] = int(value)
            elif key in _GROUPS:
                kwargs[key] = _build(_GROUPS[key], value)
            else:
                raise ValueError(f"unknown config group {key!r}")
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "Config":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | Path | None = None) -> "Config":
        cfg = cls.from_json(Path(path).read_text()) if path else cls()
        env = os.environ.get("REVOLT_SEED")
        if env is not None:
            cfg.seed = int(env)
        return cfg


def _build(klass, values: dict):
    defaults = {f.name: f for f in dataclasses.fields(klass)}
    kwargs = {}
    for key, value in values.items():
        if key not in defaults:
            raise ValueError(f"unknown field {klass.__name__}.{key}")
        kwargs[key] = _tuplify(value)
    return klass(**kwargs)


def _tuplify(value):
    # JSON turns tuples into lists; ranges and vocabularies are tuples here.
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    if isinstance(value, dict):
        return {k: _tuplify(v) for k, v in value.items()}
    return value
