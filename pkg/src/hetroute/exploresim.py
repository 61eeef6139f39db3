"""Deterministic discrete-time exploration of an unknown terrain grid by
a heterogeneous robot team.

Robots share one known-world grid (the team is assumed always in
communication). Each tick every robot senses, frontiers are clustered,
clusters are assigned (priority rules locally, a min-max routing solve
globally), and every robot advances one 8-connected step. Two local
rules handle heterogeneity: clusters rich in frontiers that only part of
the fleet can visit get a first-leg cost discount, and overlapping-
window clusters go to the capable robot with the highest priority.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import baselines, peaf
from .gridmap import (
    CARDINAL_COST,
    DIAGONAL_COST,
    UNREACHABLE,
    AgentClass,
    Cell,
    Terrain,
    TerrainGrid,
    astar_mask,
    multisource_costs,
)
from .instance import MhppInstance

UNKNOWN = -1
_SIGHT_BLOCKERS = (Terrain.OBSTACLE, Terrain.TREE)


@dataclass
class ExploConfig:
    """Simulator parameters; every value is part of the deterministic
    episode identity."""

    alpha: float = 0.6            # hetero-cost gain
    c0: int = 14000               # first-leg discount scale (2 * sense_radius * 1000)
    rho: float = 3.0              # frontier cluster radius, cells
    window_radius: int = 10       # local window half-side
    sense_radius: int = 7
    tg: int = 20                  # global replan period, ticks
    tick_cap: int = 20000
    priority_assignment: bool = True
    hetero_cost: bool = True
    global_budget: int = 800      # label-generation budget per global solve
    local_tsp_exact_max: int = 10


@dataclass
class RobotState:
    id: int
    cls: AgentClass
    cell: Cell
    xi: int
    trace: list = field(default_factory=list)
    distance: int = 0
    target: Optional[Cell] = None
    path: list = field(default_factory=list)


@dataclass(frozen=True)
class Frontier:
    cell: Cell
    capable: frozenset  # robot ids able to stand on the cell


@dataclass
class Cluster:
    cells: list
    representative: Cell
    capable: frozenset       # capable set of the representative
    hetero_fraction: float   # share of members not visitable by the full team

    @property
    def hetero(self) -> bool:
        return self.hetero_fraction > 0.0


@dataclass
class EpisodeMetrics:
    ticks: int
    complete: bool
    reason: str               # explored | no_reachable_frontier | tick_cap
    total_length: int
    per_robot_length: dict
    coverage: list
    known_cells: int
    unresolved_frontiers: int
    traces: list              # rows (tick, robot, x, y, known_cells)

    def to_json(self):
        return {
            "ticks": self.ticks, "complete": self.complete, "reason": self.reason,
            "total_length": self.total_length,
            "per_robot_length": {str(k): v for k, v in self.per_robot_length.items()},
            "coverage": self.coverage, "known_cells": self.known_cells,
            "unresolved_frontiers": self.unresolved_frontiers,
        }


def _passable_lut(cls: AgentClass) -> np.ndarray:
    lut = np.zeros(len(Terrain), dtype=bool)
    for t in cls.passable:
        lut[int(t)] = True
    return lut


def class_known_mask(known: np.ndarray, cls: AgentClass) -> np.ndarray:
    """Cells known to be traversable by the class."""
    lut = _passable_lut(cls)
    return (known >= 0) & lut[np.clip(known, 0, len(Terrain) - 1)]


def optimistic_mask(known: np.ndarray, cls: AgentClass) -> np.ndarray:
    """Known-traversable or still unknown; used for global costs only."""
    return class_known_mask(known, cls) | (known < 0)


def _disk_offsets(radius: int):
    out = []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dx == 0 and dy == 0:
                continue
            if dx * dx + dy * dy <= radius * radius:
                out.append((dx, dy))
    return out


def _line_blocked(blockers: np.ndarray, x0, y0, x1, y1) -> bool:
    """True when a sight-blocking cell lies strictly between the endpoints
    (Bresenham trace)."""
    dx = abs(x1 - x0)
    dy = abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx - dy
    x, y = x0, y0
    while True:
        if (x, y) != (x0, y0) and (x, y) != (x1, y1) and blockers[y, x]:
            return True
        if (x, y) == (x1, y1):
            return False
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy


def sense(grid: TerrainGrid, known: np.ndarray, origin: Cell, radius: int,
          offsets=None, blockers=None) -> int:
    """Reveal every cell within Euclidean `radius` of origin that has an
    unobstructed line of sight. Obstacles and trees block sight beyond
    themselves but are revealed when looked at. Returns the number of
    newly known cells; knowledge is monotone."""
    h, w = known.shape
    if blockers is None:
        blockers = np.isin(grid.data, [int(t) for t in _SIGHT_BLOCKERS])
    ox, oy = origin
    revealed = 0
    if known[oy, ox] == UNKNOWN:
        known[oy, ox] = grid.data[oy, ox]
        revealed += 1
    if offsets is None:
        offsets = _disk_offsets(radius)
    for dx, dy in offsets:
        x, y = ox + dx, oy + dy
        if not (0 <= x < w and 0 <= y < h):
            continue
        if known[y, x] != UNKNOWN:
            continue
        if _line_blocked(blockers, ox, oy, x, y):
            continue
        known[y, x] = grid.data[y, x]
        revealed += 1
    return revealed


def detect_frontiers(known: np.ndarray, robots: Sequence) -> list:
    """Known cells traversable by at least one present robot class and
    8-adjacent to unknown space, in row-major order."""
    h, w = known.shape
    classes = {}
    for r in robots:
        classes.setdefault(r.cls.name, (r.cls, []))[1].append(r.id)
    trav_any = np.zeros((h, w), dtype=bool)
    for cls, _ids in classes.values():
        trav_any |= class_known_mask(known, cls)
    unk = known < 0
    adj = np.zeros((h, w), dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            ys = slice(max(0, dy), h + min(0, dy))
            xs = slice(max(0, dx), w + min(0, dx))
            ys_src = slice(max(0, -dy), h + min(0, -dy))
            xs_src = slice(max(0, -dx), w + min(0, -dx))
            adj[ys, xs] |= unk[ys_src, xs_src]
    mask = (known >= 0) & trav_any & adj
    out = []
    for y, x in np.argwhere(mask):
        t = int(known[y, x])
        cap = frozenset(i for cls, ids in classes.values() if _passable_lut(cls)[t]
                        for i in ids)
        out.append(Frontier(Cell(int(x), int(y)), cap))
    return out


def cluster_frontiers(frontiers: Sequence, rho: float, all_ids: frozenset) -> list:
    """Single-linkage clusters at Euclidean threshold rho. The
    representative minimizes the summed distance to its cluster (ties to
    the first in row-major order); hetero_fraction counts members whose
    capable set is not the whole team."""
    n = len(frontiers)
    if n == 0:
        return []
    index = {tuple(f.cell): i for i, f in enumerate(frontiers)}
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    reach = int(math.floor(rho))
    offsets = [(dx, dy) for dy in range(-reach, reach + 1)
               for dx in range(-reach, reach + 1)
               if (dx or dy) and dx * dx + dy * dy <= rho * rho]
    for i, f in enumerate(frontiers):
        x, y = f.cell
        for dx, dy in offsets:
            j = index.get((x + dx, y + dy))
            if j is not None:
                union(i, j)

    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    clusters = []
    for root in sorted(groups):
        members = groups[root]  # already row-major (frontier order)
        cells = [frontiers[i].cell for i in members]
        best = None
        for c in cells:
            s = sum(math.dist(c, o) for o in cells)
            if best is None or s < best[0] - 1e-9:
                best = (s, c)
        rep = best[1]
        rep_cap = next(frontiers[i].capable for i in members
                       if frontiers[i].cell == rep)
        hetero = sum(1 for i in members if frontiers[i].capable != all_ids)
        clusters.append(Cluster(cells, rep, rep_cap, hetero / len(members)))
    return clusters


def in_window(robot: RobotState, cell: Cell, window_radius: int) -> bool:
    return (abs(cell[0] - robot.cell[0]) <= window_radius
            and abs(cell[1] - robot.cell[1]) <= window_radius)


def priority_assign(robots: Sequence, clusters: Sequence, window_radius: int,
                    priority_enabled: bool = True) -> dict:
    """Owner per in-window cluster: hetero clusters go to the capable
    window robot with the highest priority (ties to the lowest id),
    others to the nearest capable window robot. Clusters outside every
    window, or without a capable window robot, map to None."""
    owners = {}
    for idx, cl in enumerate(clusters):
        cands = [r for r in robots
                 if r.id in cl.capable and in_window(r, cl.representative, window_radius)]
        if not cands:
            owners[idx] = None
            continue
        if cl.hetero and priority_enabled:
            owner = max(cands, key=lambda r: (r.xi, -r.id))
        else:
            rx, ry = cl.representative
            owner = min(cands, key=lambda r: ((r.cell[0] - rx) ** 2
                                              + (r.cell[1] - ry) ** 2, r.id))
        owners[idx] = owner.id
    return owners


def _open_tsp_order(cost, adj_first, k: int, exact_max: int) -> list:
    """Visit order (vertex indices 1..k) of an open path from vertex 0.
    Edge (0, v) uses adj_first; all other edges use cost. Exact subset DP
    up to exact_max total vertices, nearest-neighbor plus 2-opt above."""
    verts = list(range(1, k + 1))
    if not verts:
        return []
    if k + 1 <= exact_max:
        size = 1 << k
        dp = [[math.inf] * k for _ in range(size)]
        back = [[None] * k for _ in range(size)]
        for a in range(k):
            if adj_first[a + 1] != UNREACHABLE:
                dp[1 << a][a] = adj_first[a + 1]
        for mask in range(size):
            for a in range(k):
                if not (mask >> a) & 1 or dp[mask][a] == math.inf:
                    continue
                for b in range(k):
                    if (mask >> b) & 1:
                        continue
                    c = cost[a + 1][b + 1]
                    if c == UNREACHABLE:
                        continue
                    nm = mask | (1 << b)
                    if dp[mask][a] + c < dp[nm][b]:
                        dp[nm][b] = dp[mask][a] + c
                        back[nm][b] = a
        full = size - 1
        last = min(range(k), key=lambda a: (dp[full][a], a))
        if dp[full][last] == math.inf:
            return []
        order = []
        mask, a = full, last
        while a is not None:
            order.append(a + 1)
            prev = back[mask][a]
            mask &= ~(1 << a)
            a = prev
        order.reverse()
        return order
    # nearest neighbor from vertex 0, then open-path 2-opt
    order = []
    cur = 0
    rest = set(verts)
    while rest:
        nxt = min(rest, key=lambda v: (adj_first[v] if cur == 0 else cost[cur][v], v))
        order.append(nxt)
        rest.discard(nxt)
        cur = nxt

    def edge(a, b):
        return adj_first[b] if a == 0 else cost[a][b]

    improved = True
    while improved:
        improved = False
        seq = [0] + order
        best = None
        for i in range(1, len(seq) - 1):
            for j in range(i + 1, len(seq)):
                old = edge(seq[i - 1], seq[i])
                new = edge(seq[i - 1], seq[j])
                if j + 1 < len(seq):
                    old += edge(seq[j], seq[j + 1])
                    new += edge(seq[i], seq[j + 1])
                delta = new - old
                if best is None or delta < best[0]:
                    best = (delta, i, j)
        if best and best[0] < 0:
            _, i, j = best
            order[i - 1:j] = reversed(order[i - 1:j])
            improved = True
    return order


def local_plan(robot: RobotState, reps: Sequence, known: np.ndarray,
               alpha: float, c0: int, exact_max: int = 10):
    """Choose the next representative for a robot inside its window.

    reps: list of (cell, hetero_fraction). Edge costs are known-space
    grid distances for the robot's class; the first leg toward a cluster
    with hetero fraction p is discounted by floor(alpha * p * c0), never
    below zero. Solves an open-path visit order from the robot cell and
    returns (target_cell, grid_path, order) or None when nothing is
    reachable."""
    if not reps:
        return None
    mask = class_known_mask(known, robot.cls)
    cells = [robot.cell] + [c for c, _ in reps]
    w = known.shape[1]
    dist = multisource_costs(mask, cells)
    k = len(reps)
    cost = [[dist[a][cells[b][1] * w + cells[b][0]] for b in range(k + 1)]
            for a in range(k + 1)]
    adj_first = [UNREACHABLE] * (k + 1)
    for b in range(1, k + 1):
        raw = cost[0][b]
        if raw == math.inf:
            continue
        p = reps[b - 1][1]
        adj = raw - int(alpha * p * c0) if alpha > 0 else raw
        adj_first[b] = max(adj, 0)
    order = _open_tsp_order(cost, adj_first, k, exact_max)
    if not order:
        return None
    target = cells[order[0]]
    _, path = astar_mask(mask, robot.cell, target, want_path=True)
    if path is None:
        return None
    return target, path, [cells[v] for v in order]


def build_global_instance(known: np.ndarray, robots: Sequence,
                          clusters: Sequence, idxs: Sequence):
    """Induced min-max routing instance over cluster representatives.

    Costs are known-space shortest paths with unknown cells treated as
    traversable (optimistic, global planning only); each agent's goal is
    virtual with zero-cost legs, making paths open-ended. Clusters no
    capable robot can reach even optimistically are deferred. Returns
    (instance, kept cluster indexes, deferred cluster indexes)."""
    w = known.shape[1]
    agent_classes = [r.cls for r in robots]
    rep_cells = [clusters[i].representative for i in idxs]
    fields = {}
    for r in robots:
        if r.cls.name not in fields:
            m = optimistic_mask(known, r.cls)
            fields[r.cls.name] = multisource_costs(
                m, rep_cells + [rb.cell for rb in robots])

    def fcost(cls_name, a, cell):
        d = fields[cls_name][a][cell[1] * w + cell[0]]
        return int(d) if math.isfinite(d) else UNREACHABLE

    kept, deferred = [], []
    for pos, ci in enumerate(idxs):
        cl = clusters[ci]
        ok = any(
            r.id in cl.capable
            and fcost(r.cls.name, len(rep_cells) + r.id, cl.representative) != UNREACHABLE
            for r in robots)
        (kept if ok else deferred).append((pos, ci))
    if not kept:
        return None, [], [ci for _, ci in deferred]

    n = len(kept)
    na = len(robots)
    n_ids = n + 2 * na
    matrices = []
    for r in robots:
        f = fields[r.cls.name]

        def dist_between(a_pos, b_cell):
            d = f[a_pos][b_cell[1] * w + b_cell[0]]
            return int(d) if math.isfinite(d) else UNREACHABLE

        mat = [[0] * n_ids for _ in range(n_ids)]
        for a in range(n):
            pa = kept[a][0]
            for b in range(n):
                mat[a][b] = 0 if a == b else dist_between(pa, rep_cells[kept[b][0]])
            for j in range(na):
                d = dist_between(len(rep_cells) + j, rep_cells[pa])
                mat[n + j][a] = d
                mat[a][n + j] = d
        for j in range(na):
            for jj in range(na):
                d = 0 if j == jj else dist_between(len(rep_cells) + j, robots[jj].cell)
                mat[n + j][n + jj] = d
        # virtual goals: zero-cost legs everywhere
        for u in range(n_ids):
            for j in range(na):
                mat[u][n + na + j] = 0
                mat[n + na + j][u] = 0
        matrices.append(mat)

    assign = [frozenset(r.id for r in robots if r.id in clusters[ci].capable)
              for _, ci in kept]
    inst = MhppInstance(n, agent_classes, assign, matrices)
    return inst, [ci for _, ci in kept], [ci for _, ci in deferred]


def global_plan(known: np.ndarray, robots: Sequence, clusters: Sequence,
                idxs: Sequence, budget: int = 800):
    """Allocate and order global clusters per robot via the min-max
    solver (greedy fallback when the budget yields no incumbent).
    Returns (routes: robot id -> representative cells, deferred ids)."""
    if not idxs:
        return {r.id: [] for r in robots}, []
    inst, kept, deferred = build_global_instance(known, robots, clusters, idxs)
    routes = {r.id: [] for r in robots}
    if inst is None:
        return routes, deferred
    report = peaf.solve(inst, max_generated=budget)
    sol = report.best
    if sol is None:
        sol = baselines.greedy_b2(inst)
    for i, path in enumerate(sol.paths):
        routes[robots[i].id] = [clusters[kept[v]].representative for v in path[1:-1]]
    return routes, deferred


class ExploSim:
    """Single deterministic episode."""

    def __init__(self, grid: TerrainGrid, robots: Sequence, config: ExploConfig):
        self.grid = grid
        self.config = config
        self.robots = list(robots)
        for r in self.robots:
            if grid.terrain(r.cell) not in r.cls.passable:
                raise ValueError(f"robot {r.id} starts on impassable terrain")
            r.trace.append(r.cell)
        self.known = np.full(grid.data.shape, UNKNOWN, dtype=np.int8)
        self.all_ids = frozenset(r.id for r in self.robots)
        self._offsets = _disk_offsets(config.sense_radius)
        self._blockers = np.isin(grid.data, [int(t) for t in _SIGHT_BLOCKERS])
        self._routes = {r.id: [] for r in self.robots}
        self._last_global = -10**9
        self.tick = 0
        self.traces = []
        self.coverage = []

    # -- per-tick pieces -------------------------------------------------
    def _sense_all(self):
        for r in self.robots:
            sense(self.grid, self.known, r.cell, self.config.sense_radius,
                  self._offsets, self._blockers)

    def _alpha(self):
        return self.config.alpha if self.config.hetero_cost else 0.0

    def _choose_local(self, robot, clusters, owners):
        reps = [(clusters[i].representative, clusters[i].hetero_fraction)
                for i, o in sorted(owners.items())
                if o == robot.id and in_window(robot, clusters[i].representative,
                                               self.config.window_radius)]
        if not reps:
            return None
        got = local_plan(robot, reps, self.known, self._alpha(), self.config.c0,
                         self.config.local_tsp_exact_max)
        if got is None:
            return None
        target, path, _ = got
        return target, path

    def _choose_global(self, robot, frontier_cells):
        mask = class_known_mask(self.known, robot.cls)
        route = self._routes.get(robot.id, [])
        while route:
            cell = route[0]
            if cell not in frontier_cells:
                route.pop(0)
                continue
            _, path = astar_mask(mask, robot.cell, cell, want_path=True)
            if path is None:
                route.pop(0)
                continue
            return cell, path
        return None

    def _choose_fallback(self, robot, frontiers):
        mask = class_known_mask(self.known, robot.cls)
        w = self.known.shape[1]
        dist = multisource_costs(mask, [robot.cell])[0]
        best = None
        for f in frontiers:
            if robot.id not in f.capable:
                continue
            d = dist[f.cell[1] * w + f.cell[0]]
            if not math.isfinite(d):
                continue
            key = (d, f.cell[1], f.cell[0])
            if best is None or key < best[0]:
                best = (key, f.cell)
        if best is None:
            return None
        _, path = astar_mask(mask, robot.cell, best[1], want_path=True)
        if path is None:
            return None
        return best[1], path

    def _step_cost(self, a: Cell, b: Cell) -> int:
        return DIAGONAL_COST if (a[0] != b[0] and a[1] != b[1]) else CARDINAL_COST

    def run(self) -> EpisodeMetrics:
        cfg = self.config
        reason = "tick_cap"
        frontiers = []
        while self.tick < cfg.tick_cap:
            self._sense_all()
            frontiers = detect_frontiers(self.known, self.robots)
            if not frontiers:
                reason = "explored"
                break
            frontier_cells = {f.cell for f in frontiers}
            clusters = cluster_frontiers(frontiers, cfg.rho, self.all_ids)
            owners = priority_assign(self.robots, clusters, cfg.window_radius,
                                     cfg.priority_assignment)
            needs_global = [i for i, o in owners.items() if o is None]
            stale = self.tick - self._last_global >= cfg.tg
            missing = any(r.target is None or r.target not in frontier_cells
                          for r in self.robots)
            if needs_global and (stale or missing):
                self._routes, _ = global_plan(self.known, self.robots, clusters,
                                              needs_global, cfg.global_budget)
                self._last_global = self.tick

            moved_any = False
            for r in self.robots:
                if (r.target is None or r.target not in frontier_cells
                        or not r.path):
                    r.target, r.path = None, []
                    choice = (self._choose_local(r, clusters, owners)
                              or self._choose_global(r, frontier_cells)
                              or self._choose_fallback(r, frontiers))
                    if choice is not None:
                        r.target, path = choice
                        r.path = list(path[1:])  # drop current cell
                if r.path:
                    nxt = r.path.pop(0)
                    r.distance += self._step_cost(r.cell, nxt)
                    r.cell = nxt
                    r.trace.append(nxt)
                    moved_any = True
            self.tick += 1
            known_cells = int(np.count_nonzero(self.known >= 0))
            self.coverage.append(known_cells / self.known.size)
            for r in self.robots:
                self.traces.append((self.tick, r.id, r.cell[0], r.cell[1], known_cells))
            if not moved_any:
                reason = "no_reachable_frontier"
                break

        known_cells = int(np.count_nonzero(self.known >= 0))
        return EpisodeMetrics(
            ticks=self.tick,
            complete=(reason == "explored"),
            reason=reason,
            total_length=sum(r.distance for r in self.robots),
            per_robot_length={r.id: r.distance for r in self.robots},
            coverage=self.coverage,
            known_cells=known_cells,
            unresolved_frontiers=len(frontiers),
            traces=self.traces,
        )


def run_episode(grid: TerrainGrid, robot_specs: Sequence, config: ExploConfig,
                seed: int = 0) -> EpisodeMetrics:
    """Run one episode. robot_specs entries are (AgentClass, start or
    None, xi or None); missing starts are sampled from class-traversable
    cells with the seeded generator, missing xi falls back to the class
    priority. Identical arguments give identical metrics and traces."""
    import random

    rng = random.Random(seed)
    robots = []
    for rid, spec in enumerate(robot_specs):
        cls, start, xi = spec
        if start is None:
            cells = [Cell(int(x), int(y))
                     for y, x in np.argwhere(
                         np.isin(grid.data, [int(t) for t in cls.passable]))]
            if not cells:
                raise ValueError(f"no traversable start cell for class {cls.name}")
            start = rng.choice(cells)
        robots.append(RobotState(rid, cls, Cell(*start),
                                 cls.priority if xi is None else xi))
    return ExploSim(grid, robots, config).run()
