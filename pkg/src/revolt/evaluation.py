"""Training pipeline, episode batches, continuous sessions and ablations."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import Memory, Models, make_agent
from .config import Config
from .house import generate_dataset, generate_house, split_seeds
from .object_embed import CategoryEmbeddingTable, train_object_embedder
from .region_embed import train_region_embedder
from .rollout import train_rollout
from .sim import (
    EpisodeResult, EpisodeSpec, adjudicate, build_world, clearance_grid, new_state, sample_start, sense,
    shortest_path_length, step,
)

log = logging.getLogger(__name__)


# ---- training ------------------------------------------------------------

@dataclass
class TrainSummary:
    object_accuracy: float
    membership_accuracy: float
    classification_accuracy: float
    rollout_accuracy: float
    rollout_chance: float
    seconds: dict = field(default_factory=dict)


def dataset_split(config: Config):
    seeds = list(range(config.eval.train_houses))
    train, test = split_seeds(seeds, config.eval.test_fraction)
    return train, test


def train_models(config: Config, houses=None) -> tuple:
    """Train the three relation networks on the training split; returns (Models, TrainSummary)."""
    train_s, test_s = dataset_split(config)
    if houses is None:
        houses = generate_dataset(range(config.eval.train_houses), config.generator)
    tr = [houses[i] for i in train_s]
    te = [houses[i] for i in test_s]
    n_labels = len(config.generator.labels)
    secs = {}
    t = time.perf_counter()
    obj = train_object_embedder(tr, config.object_embed, te)
    secs["object"] = time.perf_counter() - t
    t = time.perf_counter()
    reg = train_region_embedder(tr, obj.table, n_labels, config.region_embed, te)
    secs["region"] = time.perf_counter() - t
    t = time.perf_counter()
    rol = train_rollout(tr, reg.label_table, n_labels, config.rollout, te)
    secs["rollout"] = time.perf_counter() - t
    models = Models(obj.table, reg.params, reg.label_table, rol.params, n_labels)
    summary = TrainSummary(obj.accuracy, reg.membership_accuracy, reg.classification_accuracy,
                           rol.accuracy, rol.chance, secs)
    return models, summary


def training_fingerprint(config: Config) -> str:
    keys = ("generator", "object_embed", "region_embed", "rollout")
    d = config.to_dict()
    blob = json.dumps({k: d[k] for k in keys} | {"houses": config.eval.train_houses,
                                                 "test": config.eval.test_fraction}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_stage(path, stage: str, arrays: dict, meta: dict | None = None):
    """One training stage's arrays (``objects``, ``regions`` or ``rollout``) plus metadata."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    np.savez(path / f"{stage}.npz", **{k: np.asarray(v) for k, v in arrays.items()})
    (path / f"{stage}.json").write_text(json.dumps(meta or {}, indent=1, sort_keys=True))


def load_stage(path, stage: str) -> tuple:
    path = Path(path)
    with np.load(path / f"{stage}.npz") as data:
        arrays = {k: data[k] for k in data.files}
    meta = json.loads((path / f"{stage}.json").read_text())
    return arrays, meta


def object_arrays(table: CategoryEmbeddingTable) -> dict:
    return {f"table/{c}": v for c, v in table.vectors.items()}


def region_arrays(params: dict, label_table: dict) -> dict:
    return {f"region/{k}": v for k, v in params.items()} | {f"label/{k}": v for k, v in label_table.items()}


def _split(arrays: dict, prefix: str) -> dict:
    return {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith(prefix + "/")}


def load_table(path) -> CategoryEmbeddingTable:
    arrays, _ = load_stage(path, "objects")
    return CategoryEmbeddingTable({int(c): v for c, v in _split(arrays, "table").items()})


def load_regions(path) -> tuple:
    arrays, meta = load_stage(path, "regions")
    labels = {int(k): v for k, v in _split(arrays, "label").items()}
    return _split(arrays, "region"), labels, meta


def save_models(models: Models, path, summary: TrainSummary | None = None):
    secs = summary.seconds if summary else {}
    save_stage(path, "objects", object_arrays(models.table),
               {"accuracy": summary.object_accuracy if summary else None, "seconds": secs.get("object")})
    save_stage(path, "regions", region_arrays(models.region_params, models.label_table),
               {"n_labels": models.n_labels,
                "membership_accuracy": summary.membership_accuracy if summary else None,
                "classification_accuracy": summary.classification_accuracy if summary else None,
                "seconds": secs.get("region")})
    save_stage(path, "rollout", models.rollout_params,
               {"accuracy": summary.rollout_accuracy if summary else None,
                "chance": summary.rollout_chance if summary else None, "seconds": secs.get("rollout")})


def load_models(path) -> tuple:
    table = load_table(path)
    region_params, labels, rmeta = load_regions(path)
    rollout, ometa = load_stage(path, "rollout")
    _, tmeta = load_stage(path, "objects")
    models = Models(table, region_params, labels, rollout, rmeta["n_labels"])
    summary = None
    if tmeta.get("accuracy") is not None:
        summary = TrainSummary(tmeta["accuracy"], rmeta["membership_accuracy"], rmeta["classification_accuracy"],
                               ometa["accuracy"], ometa["chance"],
                               {"object": tmeta["seconds"], "region": rmeta["seconds"], "rollout": ometa["seconds"]})
    return models, summary


def cached_models(config: Config, cache_dir) -> tuple:
    """Trained models for ``config``, reusing a cache keyed by the training settings."""
    path = Path(cache_dir) / training_fingerprint(config)
    if (path / "rollout.json").exists():
        return load_models(path)
    models, summary = train_models(config)
    save_models(models, path, summary)
    return models, summary


# ---- episodes ------------------------------------------------------------

class WorldCache:
    """House seed -> (world, true clearance grid), built on demand."""

    def __init__(self, config: Config):
        self.config = config
        self._items = {}

    def get(self, seed: int):
        if seed not in self._items:
            house = generate_house(seed, self.config.generator)
            world = build_world(house, self.config.sim, self.config.generator.door_width)
            self._items[seed] = (world, clearance_grid(world))
        return self._items[seed]


def target_pool(house, config: Config) -> list:
    names = config.generator.small_targets if config.eval.small else config.generator.target_categories
    ids = {house.category_id(n) for n in names if n in house.categories}
    return sorted({o.category for o in house.objects if o.category in ids})


def make_episodes(config: Config, n: int, seed: int | None = None, worlds: WorldCache | None = None) -> list:
    """``n`` episodes on unseen houses: one per house, cycling through the test split."""
    seed = config.seed if seed is None else seed
    worlds = worlds or WorldCache(config)
    _, test = dataset_split(config)
    # Navigation houses come from a separate seed range so they are unseen by any trainer.
    base = 10_000 + seed * 1_000
    out = []
    k = 0
    while len(out) < n:
        hs = base + k
        k += 1
        world, grid = worlds.get(hs)
        rng = np.random.default_rng([seed, hs])
        pool = target_pool(world.house, config)
        if not pool:
            continue
        target = int(pool[int(rng.integers(len(pool)))])
        start = sample_start(world, rng, target, grid)
        out.append(EpisodeSpec(hs, start, target, "independent", len(out)))
    return out


@dataclass
class EpisodeRun:
    result: EpisodeResult
    trace: np.ndarray
    decisions: list
    memory: Memory | None


def run_episode(spec: EpisodeSpec, agent, config: Config, worlds: WorldCache, memory=None) -> EpisodeRun:
    world, grid = worlds.get(spec.house)
    shortest = shortest_path_length(world, spec.start[:2], spec.target, grid)
    state = new_state(spec.start)
    sim_rng = np.random.default_rng([config.seed, spec.house, spec.index, 7])
    bundle = sense(world, state.pose, sim_rng)
    memory = agent.begin(state.pose, spec.target, memory, episode_seed=spec.index)
    while state.steps < config.sim.max_steps and not state.stopped:
        agent.observe(state.pose, bundle)
        action = agent.act(state.pose)
        state, bundle = step(state, action, world, sim_rng)
    result = adjudicate(world, spec, state, shortest)
    return EpisodeRun(result, np.array(state.trace), list(getattr(agent, "decisions", [])), memory)


@dataclass
class BatchReport:
    agent: str
    seed: int
    fingerprint: str
    rows: list  # EpisodeResult

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def sr(self) -> float:
        return float(np.mean([r.success for r in self.rows])) if self.rows else 0.0

    @property
    def spl(self) -> float:
        return float(np.mean([r.spl for r in self.rows])) if self.rows else 0.0

    @property
    def dts(self) -> float:
        return float(np.mean([r.dts for r in self.rows])) if self.rows else 0.0

    def summary(self) -> dict:
        return {"agent": self.agent, "episodes": self.n, "SR": self.sr, "SPL": self.spl, "DTS": self.dts}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "house", "target", "success", "shortest", "path", "spl", "dts", "steps", "claimed"])
        for r in self.rows:
            w.writerow([r.index, r.house, r.target, r.success, f"{r.shortest:.6f}", f"{r.path:.6f}",
                        f"{r.spl:.6f}", f"{r.dts:.6f}", r.steps, int(r.claimed)])
        return buf.getvalue()


def config_fingerprint(config: Config) -> str:
    return hashlib.sha256(config.to_json().encode()).hexdigest()[:16]


def run_batch(episodes, agent_kind: str, config: Config, models: Models | None = None, ablate=(),
              worlds: WorldCache | None = None, runs: list | None = None) -> BatchReport:
    """Independent-mode batch: memory is cleared before every episode."""
    worlds = worlds or WorldCache(config)
    rows = []
    name = agent_kind
    for spec in episodes:
        agent = make_agent(agent_kind, models, config, seed=config.seed, ablate=ablate)
        name = agent.name
        run = run_episode(spec, agent, config, worlds)
        rows.append(run.result)
        if runs is not None:
            runs.append(run)
    return BatchReport(name, config.seed, config_fingerprint(config), rows)


def session_targets(world, config: Config, rng, length: int = 2, repeat: bool = True) -> list:
    pool = target_pool(world.house, config)
    first = int(pool[int(rng.integers(len(pool)))])
    if repeat:
        return [first] * length
    return [first] + [int(pool[int(rng.integers(len(pool)))]) for _ in range(length - 1)]


def run_continuous_session(house: int, targets, config: Config, models: Models, starts=None,
                           worlds: WorldCache | None = None, mode: str = "continuous", index: int = 0) -> BatchReport:
    """Episodes in one house in order; in continuous mode the memory carries over.

    ``mode="independent"`` runs the same episodes with the memory cleared.
    """
    worlds = worlds or WorldCache(config)
    world, grid = worlds.get(house)
    rng = np.random.default_rng([config.seed, house, index, 11])
    rows = []
    memory = None
    for k, target in enumerate(targets):
        start = starts[k] if starts is not None else sample_start(world, rng, int(target), grid)
        spec = EpisodeSpec(house, start, int(target), mode, index * 100 + k)
        agent = make_agent("revolt", models, config, seed=config.seed)
        run = run_episode(spec, agent, config, worlds, memory if mode == "continuous" else None)
        memory = run.memory
        rows.append(run.result)
    return BatchReport(f"revolt-{mode}", config.seed, config_fingerprint(config), rows)


def continuous_study(config: Config, models: Models, sessions: int = 50, length: int = 2,
                     worlds: WorldCache | None = None) -> dict:
    """Paired repeated-target sessions in continuous and independent mode."""
    worlds = worlds or WorldCache(config)
    episodes = make_episodes(config, sessions, seed=config.seed + 1, worlds=worlds)
    cont, indep = [], []
    for spec in episodes:
        world, grid = worlds.get(spec.house)
        rng = np.random.default_rng([config.seed, spec.house, 13])
        starts = [spec.start] + [sample_start(world, rng, spec.target, grid) for _ in range(length - 1)]
        targets = [spec.target] * length
        cont.append(run_continuous_session(spec.house, targets, config, models, starts, worlds, "continuous",
                                           spec.index))
        indep.append(run_continuous_session(spec.house, targets, config, models, starts, worlds, "independent",
                                            spec.index))
    return {"continuous": cont, "independent": indep}


def steps_dropped(report: BatchReport) -> bool:
    """Second episode succeeds in fewer steps than the first (a failed first counts as the full budget)."""
    a, b = report.rows[0], report.rows[1]
    if not b.success:
        return False
    return (not a.success) or b.steps < a.steps


ABLATIONS = (("full", ()), ("no-priors", ("priors",)), ("no-bonus", ("bonus",)), ("no-distance", ("distance",)))


def ablation_suite(config: Config, models: Models, n: int = 100, worlds: WorldCache | None = None) -> dict:
    worlds = worlds or WorldCache(config)
    episodes = make_episodes(config, n, worlds=worlds)
    return {name: run_batch(episodes, "revolt", config, models, ablate, worlds) for name, ablate in ABLATIONS}


def ablation_csv(reports: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "episodes", "SR", "SPL", "DTS"])
    for name, rep in reports.items():
        w.writerow([name, rep.n, f"{rep.sr:.4f}", f"{rep.spl:.4f}", f"{rep.dts:.4f}"])
    return buf.getvalue()
