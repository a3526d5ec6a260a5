"""Navigation agents: the hierarchical reasoner/planner/controller and baselines.

Each step the hierarchical agent folds the new scan and detections into
its memory (rasters plus topological tree).  When the target has been
seen it walks to it and claims success inside the success radius.
Otherwise the reasoner picks a sub-goal node, the planner turns it into
coordinates and the controller drives there.  A new sub-goal is chosen on
arrival, when the controller reports the goal blocked, or on timeout.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .control import PointGoalController, Rasters, heading_action
from .geometry import (
    ObstacleClique, ScatterBuffer, build_voronoi, next_best_view, project_scans, scatter_cliques,
    subgoal_to_coords, to_world_frame,
)
from .reasoner import all_biases, check_termination, select_subgoal
from .sim import FORWARD, LEFT, RIGHT, STOP
from .topo import (
    CLIQUE, FRONTIER, OBJECT, VERTEX, RelationPriors, TopoTree, integrate_object, locate_vertex, nearest,
)

log = logging.getLogger(__name__)


@dataclass
class Models:
    table: object  # CategoryEmbeddingTable
    region_params: dict | None = None
    label_table: dict | None = None
    rollout_params: dict | None = None
    n_labels: int = 10


@dataclass
class Memory:
    """What the robot keeps about one house: rasters and the topological tree."""

    rasters: Rasters
    tree: TopoTree
    episodes: int = 0


@dataclass
class Decision:
    step: int
    node: int
    kind: str
    bias: float
    bonus: float
    distance: float
    total: float


class RandomAgent:
    """Uniform over every action, stop included."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.decisions = []

    def begin(self, pose, target, memory=None, episode_seed: int = 0):
        self.rng = np.random.default_rng([self.seed, episode_seed])
        return memory

    def observe(self, pose, bundle):
        pass

    def act(self, pose) -> int:
        return int(self.rng.integers(4))


class RevoltAgent:
    name = "revolt"

    def __init__(self, models: Models, config: Config | None = None, ablate=(), greedy: bool = False,
                 seed: int = 0):
        self.config = config or Config()
        ablate = tuple(sorted(set(ablate) | ({"priors", "bonus"} if greedy else set())))
        for a in ablate:
            if a not in ("priors", "bonus", "distance"):
                raise ValueError(f"unknown ablation {a!r}")
        rc = self.config.reasoner
        self.reasoner = dataclasses.replace(rc, ablate=ablate, c1=0.0 if greedy else rc.c1)
        self.greedy = greedy
        self.name = "greedy" if greedy else ("revolt" if not ablate else "revolt-no-" + "-".join(ablate))
        self.models = models
        self.priors = RelationPriors(
            models.table, models.region_params, models.label_table, models.rollout_params,
            n_labels=models.n_labels, n_max=self.config.rollout.n_max, depth=rc.depth, samples=rc.samples,
            region_scale=self.config.topo.region_scale, enabled="priors" not in ablate, seed=seed,
        )
        self.seed = seed
        self.decisions: list = []

    # ---- episode ---------------------------------------------------------
    def new_memory(self, pose) -> Memory:
        r = self.config.planner.robot_radius
        return Memory(Rasters(self.config.sim.grid_res, inflate=r + 0.12, core_radius=r + 0.02),
                      TopoTree(root_pos=pose[:2]))

    def begin(self, pose, target: int, memory: Memory | None = None, episode_seed: int = 0) -> Memory:
        pose = np.asarray(pose, dtype=float)
        self.mem = memory or self.new_memory(pose)
        tree = self.mem.tree
        self.target = int(target)
        pc = self.config.planner
        self.scatter = ScatterBuffer(pc.window, pc.voxel)
        self.ctl = PointGoalController(self.mem.rasters, self.config.sim.turn_deg,
                                       replan_every=self.config.eval.replan_every)
        if self.mem.episodes == 0:
            self.vertex = tree.root
            tree.record_visit(tree.root)
        else:
            home = nearest(tree, VERTEX, pose[:2])
            self.vertex = locate_vertex(tree, pose[:2], home, self.config.topo, self._visible)
            tree.record_visit(self.vertex)
        self.mem.episodes += 1
        self.step_i = 0
        self.goal = None  # (node id, kind)
        self.goal_steps = 0
        self.look_at = None
        self.blocked_targets = set()
        self.excluded = set()
        self.spent_spots = []
        self.bumps = 0
        self.escape = []
        self.last_pose = pose.copy()
        self.last_action = None
        self.decisions = []
        self.graph = None
        return self.mem

    def _visible(self, a, b) -> bool:
        return self.mem.rasters.line_free(a, b)

    def observe(self, pose, bundle):
        pose = np.asarray(pose, dtype=float)
        sc = self.config.sim
        ra = self.mem.rasters
        if self.last_action == FORWARD and np.linalg.norm(pose[:2] - self.last_pose[:2]) < 0.01:
            # Bumped into something the scan missed: remember it as an obstacle.
            # Contact may lie outside the field of view, so mark a wide arc
            # and turn a little to bring it into the scan.
            ang = pose[2] + np.radians(np.arange(-60.0, 61.0, 15.0))
            d = np.column_stack([np.cos(ang), np.sin(ang)])
            ra.add_obstacle(pose[:2] + (sc.robot_radius + 0.05) * d)
            self.ctl.path = None
            self.bumps += 1
            self.escape = [LEFT if self.bumps % 2 else RIGHT] * 2
        ra.add_scan(pose, bundle.rays, sc.max_range)
        self.scatter.add(self.step_i, project_scans(bundle.rays, pose, sc.max_range))
        tree = self.mem.tree
        v = locate_vertex(tree, pose[:2], self.vertex, self.config.topo, self._visible)
        if v != self.vertex:
            tree.record_visit(v)
            self.vertex = v
        for cat, rel, _ in bundle.detections:
            world = to_world_frame(rel, pose)[0]
            integrate_object(tree, cat, world, self.vertex, self.config.topo, self._visible)
        self.last_pose = pose.copy()

    # ---- decisions -------------------------------------------------------
    def _targets(self):
        tree = self.mem.tree
        return [i for i in tree.of_kind(OBJECT) if tree.nodes[i].category == self.target]

    def act(self, pose) -> int:
        pose = np.asarray(pose, dtype=float)
        self.step_i += 1
        action = self._act(pose)
        self.last_action = action
        return action

    def _act(self, pose) -> int:
        tree = self.mem.tree
        seen = [(tree.nodes[i].category, tree.nodes[i].pos) for i in self._targets()]
        if check_termination(seen, self.target, pose, self.config.sim.success_radius - 0.05):
            return STOP
        if self.escape:
            return self.escape.pop()
        tgt = [i for i in self._targets() if i not in self.blocked_targets]
        if tgt:
            return self._approach(pose, tgt)
        if self.look_at is not None:
            a = heading_action(pose, self.look_at, np.radians(self.config.sim.turn_deg))
            if a != FORWARD:
                return a
            self.look_at = None
        for _ in range(4):
            if self.goal is None or self.goal_steps >= self.config.eval.subgoal_timeout or self._goal_stale():
                if not self._choose(pose):
                    return self._fallback(pose)
            status = self.ctl.act(pose)
            if status.arrived:
                self._arrive(pose)
                if self.look_at is not None:
                    a = heading_action(pose, self.look_at, np.radians(self.config.sim.turn_deg))
                    if a != FORWARD:
                        return a
                    self.look_at = None
                continue
            if status.blocked:
                self._fail()
                continue
            self.goal_steps += 1
            return status.action
        return self._fallback(pose)

    def _fallback(self, pose) -> int:
        # No usable sub-goal: turn in place to reveal more of the room.
        return LEFT

    def _approach(self, pose, tgt) -> int:
        tree = self.mem.tree
        tgt = sorted(tgt, key=lambda i: float(np.linalg.norm(tree.nodes[i].pos - pose[:2])))
        for i in tgt:
            goal = tree.nodes[i].pos
            if self.goal != (i, OBJECT):
                self.goal = (i, OBJECT)
                self.ctl.set_goal(goal, self.config.sim.success_radius - 0.1)
            status = self.ctl.act(pose)
            if status.blocked:
                self.blocked_targets.add(i)
                self.goal = None
                continue
            if status.arrived:
                return heading_action(pose, goal, np.radians(self.config.sim.turn_deg))
            return status.action
        return self._act(pose)

    def _goal_stale(self) -> bool:
        node_id, kind = self.goal
        if kind == FRONTIER:
            node = self.mem.tree.nodes[node_id]
            if not self.mem.rasters.is_frontier_near(node.pos, 0.5):
                node.active = False
                return True
        return False

    def _refresh_frontiers(self):
        tree = self.mem.tree
        ra = self.mem.rasters
        for i in tree.of_kind(FRONTIER):
            node = tree.nodes[i]
            if node.active and not ra.is_frontier_near(node.pos, 0.5):
                node.active = False
        cfg = self.config.topo
        for p, size in ra.frontiers():
            if nearest(tree, FRONTIER, p, cfg.ghost_merge_radius, where=lambda n: n.active) is not None:
                continue
            if any(np.linalg.norm(p - q) < 1.0 for q in self.spent_spots):
                continue
            home = nearest(tree, VERTEX, p, cfg.frontier_attach_radius, visible=self._visible)
            tree.add_frontier(p, self.vertex if home is None else home)

    def _choose(self, pose) -> bool:
        tree = self.mem.tree
        self._refresh_frontiers()
        pts = self.scatter.points()
        pc = self.config.planner
        self.graph = None
        cls = scatter_cliques(pts, pc.eps, pc.min_pts, pc.max_piece) if len(pts) else []
        if cls:
            self.graph = build_voronoi(cls, pc.robot_radius)
        _, entries = select_subgoal(tree, self.target, self.reasoner, self.vertex, self.priors, self.excluded)
        for e in entries:
            node = tree.nodes[e.node]
            goal, tol = self._coords(node, pose)
            if goal is None:
                continue
            self.goal = (e.node, node.kind)
            self.goal_steps = 0
            self.ctl.set_goal(goal, tol)
            self.decisions.append(Decision(self.step_i, e.node, node.kind, e.bias, e.bonus, e.distance, e.total))
            return True
        self.goal = None
        return False

    def _coords(self, node, pose):
        ra = self.mem.rasters
        if node.kind == FRONTIER:
            return node.pos, 0.5
        if node.kind == VERTEX:
            goal = node.pos
            if self.graph is not None and len(self.graph.vertices):
                rel = subgoal_to_coords(self.graph, node.pos, pose)
                cand = to_world_frame(rel, pose)[0]
                if np.linalg.norm(cand - node.pos) <= 1.0:
                    goal = cand
            return goal, 0.5
        if node.kind == CLIQUE:
            view = None
            if self.graph is not None and len(self.graph.vertices):
                cl = ObstacleClique(np.atleast_2d(node.pos), None, node.pos)
                try:
                    rel = next_best_view(cl, self.graph, node.views, pose)
                    view = to_world_frame(rel, pose)[0]
                except ValueError:
                    view = None
                if view is not None and (np.linalg.norm(view - node.pos) > 3.0 or not ra.is_free(view)):
                    view = None
            if view is None:
                gap = pose[:2] - node.pos
                d = float(np.linalg.norm(gap))
                view = node.pos + (gap / d if d > 0 else np.array([1.0, 0.0])) * 1.2
            return view, 0.5
        return None, None

    def _arrive(self, pose):
        node_id, kind = self.goal
        tree = self.mem.tree
        node = tree.nodes[node_id]
        tree.record_visit(node_id)
        if kind == CLIQUE:
            node.views.append((float(pose[0]), float(pose[1])))
            self.look_at = node.pos.copy()
        if kind == FRONTIER:
            node.active = False
            self.spent_spots.append(node.pos.copy())
            self.look_at = self.mem.rasters.unexplored_near(node.pos)
        self.goal = None

    def _fail(self):
        node_id, kind = self.goal
        node = self.mem.tree.nodes[node_id]
        node.failures += 1
        if kind == FRONTIER:
            node.active = False
            self.spent_spots.append(node.pos.copy())
        self.excluded.add(node_id)
        self.goal = None


def make_agent(kind: str, models: Models | None, config: Config, seed: int = 0, ablate=()):
    if kind == "random":
        return RandomAgent(seed)
    if kind == "greedy":
        return RevoltAgent(models, config, ablate, greedy=True, seed=seed)
    if kind == "revolt":
        return RevoltAgent(models, config, ablate, seed=seed)
    raise ValueError(f"unknown agent {kind!r}")
