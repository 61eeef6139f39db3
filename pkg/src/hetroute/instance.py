"""Problem instances for min-max multi-agent Hamiltonian path planning.

An instance is a complete graph over target nodes plus per-agent start
and goal entries. Node ids: targets are 0..n-1, agent i's start is
n + i, its goal is n + n_agents + i. Starts and goals always get their
own ids even when their cells coincide, so "agent retired" is simply
"agent sits on its goal id".
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .gridmap import (
    DEFAULT_CLASSES,
    UNREACHABLE,
    AgentClass,
    Cell,
    Terrain,
    TerrainGrid,
    build_cost_matrices,
    class_mask,
    resolve_map_ref,
)


class GenerationError(Exception):
    """Random instance generation could not satisfy its constraints."""


class InfeasibleInstanceError(Exception):
    """No capability-respecting solution exists."""


@dataclass
class Solution:
    """Per-agent node-id paths (start..targets..goal) with cost metrics."""

    paths: list
    makespan: float
    total: float

    def to_json(self) -> dict:
        return {"paths": [list(p) for p in self.paths],
                "makespan": self.makespan, "total": self.total}


@dataclass
class ValidationReport:
    ok: bool
    makespan: Optional[float] = None
    total: Optional[float] = None
    kind: Optional[str] = None
    message: Optional[str] = None


class MhppInstance:
    """Immutable problem data: nodes, agents, assignment sets, costs.

    `matrices[i]` is agent i's cost matrix over the full id space
    (targets, then starts, then goals); agents of one class share the
    same underlying list. Assignment masking lives in `cost`.
    """

    def __init__(self, n_nodes: int, agent_classes: Sequence, assign: Sequence,
                 matrices: Sequence, node_cells=None, start_cells=None,
                 goal_cells=None, map_ref=None, seed=None):
        self.n = n_nodes
        self.agent_classes = list(agent_classes)
        self.na = len(self.agent_classes)
        self.assign = [frozenset(a) for a in assign]
        self.matrices = list(matrices)
        self.node_cells = list(node_cells) if node_cells is not None else None
        self.start_cells = list(start_cells) if start_cells is not None else None
        self.goal_cells = list(goal_cells) if goal_cells is not None else None
        self.map_ref = map_ref
        self.seed = seed
        if len(self.assign) != self.n:
            raise ValueError("assign must have one entry per target node")
        if len(self.matrices) != self.na:
            raise ValueError("need one cost matrix per agent")
        self._feasible = None

    # -- id helpers ----------------------------------------------------
    @property
    def n_ids(self) -> int:
        return self.n + 2 * self.na

    def start_id(self, i: int) -> int:
        return self.n + i

    def goal_id(self, i: int) -> int:
        return self.n + self.na + i

    def is_target(self, v: int) -> bool:
        return v < self.n

    # -- costs ---------------------------------------------------------
    def raw_cost(self, i: int, u: int, v: int):
        """Cost ignoring assignment constraints."""
        return self.matrices[i][u][v]

    def cost(self, i: int, u: int, v: int):
        """Agent i's travel cost, infinite if either end is a target
        node the agent is not assigned to."""
        if u < self.n and i not in self.assign[u]:
            return UNREACHABLE
        if v < self.n and i not in self.assign[v]:
            return UNREACHABLE
        return self.matrices[i][u][v]

    def path_cost(self, i: int, path: Sequence):
        c = 0
        for u, v in zip(path, path[1:]):
            step = self.cost(i, u, v)
            if step == UNREACHABLE:
                return UNREACHABLE
            c += step
        return c

    def feasible_agents(self, v: int) -> frozenset:
        """Agents that are assigned to v and can actually reach it."""
        if self._feasible is None:
            self._feasible = [
                frozenset(i for i in self.assign[u]
                          if self.raw_cost(i, self.start_id(i), u) != UNREACHABLE)
                for u in range(self.n)
            ]
        return self._feasible[v]

    # -- construction --------------------------------------------------
    @classmethod
    def from_grid(cls, grid: TerrainGrid, node_cells: Sequence,
                  agent_classes: Sequence, start_cells: Sequence,
                  goal_cells=None, assign=None, map_ref=None, seed=None):
        """Build an instance on a terrain grid, computing all matrices.

        Default assignment derives from terrain: agent i may visit node v
        iff its class can stand on v's cell.
        """
        node_cells = [Cell(*c) for c in node_cells]
        start_cells = [Cell(*c) for c in start_cells]
        goal_cells = [Cell(*c) for c in (goal_cells if goal_cells is not None else start_cells)]
        if len(start_cells) != len(agent_classes) or len(goal_cells) != len(agent_classes):
            raise ValueError("one start and goal cell per agent")
        if assign is None:
            assign = [
                frozenset(i for i, k in enumerate(agent_classes)
                          if grid.terrain(c) in k.passable)
                for c in node_cells
            ]
        all_cells = node_cells + start_cells + goal_cells
        uniq = []
        index = {}
        for c in all_cells:
            if tuple(c) not in index:
                index[tuple(c)] = len(uniq)
                uniq.append(c)
        classes = []
        for k in agent_classes:
            if all(k.name != c.name for c in classes):
                classes.append(k)
        by_class = build_cost_matrices(grid, uniq, classes)
        per_class_full = {}
        for k in classes:
            small = by_class[k.name]
            full = [[small[index[tuple(a)]][index[tuple(b)]] for b in all_cells]
                    for a in all_cells]
            per_class_full[k.name] = full
        matrices = [per_class_full[k.name] for k in agent_classes]
        return cls(len(node_cells), agent_classes, assign, matrices,
                   node_cells=node_cells, start_cells=start_cells,
                   goal_cells=goal_cells, map_ref=map_ref, seed=seed)

    @classmethod
    def from_matrix(cls, matrix: Sequence, n_nodes: int, agent_classes: Sequence,
                    assign=None):
        """Hand-built instance where every agent shares one cost matrix."""
        na = len(agent_classes)
        if assign is None:
            assign = [frozenset(range(na)) for _ in range(n_nodes)]
        return cls(n_nodes, agent_classes, assign, [matrix] * na)

    def check(self):
        """Raise if the instance is unsolvable by construction."""
        for v in range(self.n):
            if not self.assign[v]:
                raise InfeasibleInstanceError(f"node {v} has no capable agent")
            if not self.feasible_agents(v):
                raise InfeasibleInstanceError(f"node {v} unreachable by every capable agent")


def validate_solution(inst: MhppInstance, sol: Solution) -> ValidationReport:
    """Check partition, assignment, endpoint and finiteness constraints.

    On success the makespan and total are recomputed from the cost
    matrices, overriding whatever the solution object stored.
    """
    if len(sol.paths) != inst.na:
        return ValidationReport(False, kind="endpoints",
                                message=f"expected {inst.na} paths, got {len(sol.paths)}")
    for i, path in enumerate(sol.paths):
        if len(path) < 2 or path[0] != inst.start_id(i) or path[-1] != inst.goal_id(i):
            return ValidationReport(False, kind="endpoints",
                                    message=f"agent {i} path must run start..goal")
        for v in path[1:-1]:
            if not inst.is_target(v):
                return ValidationReport(False, kind="endpoints",
                                        message=f"agent {i} visits non-target id {v}")
    seen = {}
    for i, path in enumerate(sol.paths):
        for v in path[1:-1]:
            if v in seen:
                return ValidationReport(False, kind="duplicate_visit",
                                        message=f"node {v} on agents {seen[v]} and {i}")
            seen[v] = i
    for v in range(inst.n):
        if v not in seen:
            return ValidationReport(False, kind="unvisited",
                                    message=f"node {v} unvisited")
    for v, i in seen.items():
        if i not in inst.assign[v]:
            return ValidationReport(False, kind="assignment",
                                    message=f"agent {i} not assigned to node {v}")
    costs = []
    for i, path in enumerate(sol.paths):
        c = inst.path_cost(i, path)
        if c == UNREACHABLE:
            return ValidationReport(False, kind="infinite_cost",
                                    message=f"agent {i} path has an unreachable leg")
        costs.append(c)
    return ValidationReport(True, makespan=max(costs), total=sum(costs))


def solution_from_orders(inst: MhppInstance, orders: Sequence) -> Solution:
    """Build a Solution from per-agent target-node visit orders."""
    paths = [[inst.start_id(i)] + list(orders[i]) + [inst.goal_id(i)]
             for i in range(inst.na)]
    costs = [inst.path_cost(i, p) for i, p in enumerate(paths)]
    return Solution(paths, max(costs), sum(costs))


_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def generate_random_instance(grid: TerrainGrid, n_nodes: int, agent_spec,
                             seed: int, classes=DEFAULT_CLASSES,
                             distinct_goals: bool = False,
                             map_ref=None) -> MhppInstance:
    """Sample a random instance on a grid, deterministic for a fixed seed.

    Normal nodes (2/3 of n_nodes, rounded up) come from ground cells and
    are open to every agent; the rest come from swamp or water cells and
    are only open to classes that can stand there. All sampled cells are
    taken from one connected component of the most capable class, so they
    are mutually reachable for that class. Starts (= goals by default)
    are ground cells from the same component.

    agent_spec maps class name to agent count, e.g. {"GV": 3, "AV": 3}.
    """
    if n_nodes < 1:
        raise GenerationError("need at least one node")
    by_name = {k.name: k for k in classes}
    agent_classes = []
    for k in classes:
        count = agent_spec.get(k.name, 0)
        if count < 0:
            raise GenerationError("agent counts must be nonnegative")
        agent_classes.extend([k] * count)
    if not agent_classes:
        raise GenerationError("need at least one agent")

    n_normal = math.ceil(2 * n_nodes / 3)
    n_avonly = n_nodes - n_normal
    wet = {Terrain.SWAMP, Terrain.WATER}
    if n_avonly > 0 and not any(wet & k.passable for k in agent_classes):
        raise GenerationError("restricted nodes required but no agent class can stand on swamp/water")

    best = max(by_name.values(), key=lambda k: (len(k.passable), k.name))
    labels, n_comp = ndimage.label(class_mask(grid, best), structure=_FOUR_CONN)
    ground = grid.data == Terrain.GROUND
    wet_mask = (grid.data == Terrain.SWAMP) | (grid.data == Terrain.WATER)

    pick = None
    pick_size = -1
    need_ground = n_normal + len(agent_classes) * (2 if distinct_goals else 1)
    for comp in range(1, n_comp + 1):
        in_comp = labels == comp
        n_g = int(np.count_nonzero(in_comp & ground))
        n_w = int(np.count_nonzero(in_comp & wet_mask))
        if n_g >= need_ground and n_w >= n_avonly:
            size = n_g + n_w
            if size > pick_size:
                pick, pick_size = comp, size
    if pick is None:
        raise GenerationError(
            f"no connected region with {need_ground} ground and {n_avonly} swamp/water cells")

    in_comp = labels == pick
    ground_cells = [Cell(int(x), int(y)) for y, x in np.argwhere(in_comp & ground)]
    wet_cells = [Cell(int(x), int(y)) for y, x in np.argwhere(in_comp & wet_mask)]

    rng = random.Random(seed)
    normal = rng.sample(ground_cells, n_normal)
    avonly = rng.sample(wet_cells, n_avonly) if n_avonly else []
    used = set(map(tuple, normal))
    remaining = [c for c in ground_cells if tuple(c) not in used]
    starts = rng.sample(remaining, len(agent_classes))
    if distinct_goals:
        used.update(map(tuple, starts))
        remaining = [c for c in remaining if tuple(c) not in used]
        goals = rng.sample(remaining, len(agent_classes))
    else:
        goals = list(starts)

    node_cells = normal + avonly
    inst = MhppInstance.from_grid(grid, node_cells, agent_classes, starts,
                                  goal_cells=goals, map_ref=map_ref, seed=seed)
    inst.check()
    return inst


# -- serialization -----------------------------------------------------

def instance_to_json(inst: MhppInstance) -> str:
    if inst.node_cells is None or inst.map_ref is None:
        raise ValueError("only grid-backed instances with a map reference serialize")
    doc = {
        "map": inst.map_ref,
        "seed": inst.seed,
        "classes": [
            {"name": k.name, "passable": sorted(t.name for t in k.passable),
             "priority": k.priority}
            for k in _unique_classes(inst.agent_classes)
        ],
        "nodes": [
            {"id": v, "x": inst.node_cells[v].x, "y": inst.node_cells[v].y,
             "capable": sorted({inst.agent_classes[i].name for i in inst.assign[v]})}
            for v in range(inst.n)
        ],
        "agents": [
            {"id": i, "class": inst.agent_classes[i].name,
             "start": list(inst.start_cells[i]), "goal": list(inst.goal_cells[i])}
            for i in range(inst.na)
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _unique_classes(agent_classes):
    out = []
    for k in agent_classes:
        if all(k.name != c.name for c in out):
            out.append(k)
    return out


def save_instance(inst: MhppInstance, path):
    Path(path).write_text(instance_to_json(inst))


def instance_from_json(text: str, base_dir=None) -> MhppInstance:
    """Rebuild an instance from its JSON form; cost matrices are
    recomputed from the referenced map, never deserialized."""
    doc = json.loads(text)
    classes = [
        AgentClass(c["name"], frozenset(Terrain[t] for t in c["passable"]),
                   c.get("priority", 0))
        for c in doc["classes"]
    ]
    by_name = {k.name: k for k in classes}
    grid = resolve_map_ref(doc["map"], base_dir=base_dir)
    agents = sorted(doc["agents"], key=lambda a: a["id"])
    agent_classes = [by_name[a["class"]] for a in agents]
    starts = [Cell(*a["start"]) for a in agents]
    goals = [Cell(*a["goal"]) for a in agents]
    nodes = sorted(doc["nodes"], key=lambda nd: nd["id"])
    node_cells = [Cell(nd["x"], nd["y"]) for nd in nodes]
    assign = [
        frozenset(i for i, k in enumerate(agent_classes) if k.name in nd["capable"])
        for nd in nodes
    ]
    return MhppInstance.from_grid(grid, node_cells, agent_classes, starts,
                                  goal_cells=goals, assign=assign,
                                  map_ref=doc["map"], seed=doc.get("seed"))


def load_instance(path) -> MhppInstance:
    p = Path(path)
    return instance_from_json(p.read_text(), base_dir=p.parent)
