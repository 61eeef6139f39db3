"""Anytime bounded-suboptimal search for min-max multi-agent
Hamiltonian paths with node-agent assignment constraints.

The search runs over labels (joint vertex, per-agent cost vector,
visited-node set). Expansion is partial: only the cheapest active agent
moves, which keeps the branching factor linear in the node count.
Labels at one joint vertex are pruned by dominance, and a focal list
expands promising labels (many visited nodes) within a (1+eps) bound of
the best f-value. Whenever a complete label is found it is locally
optimized and recorded as the incumbent, eps shrinks, and the search
restarts with the incumbent as an upper bound. Exhausting the open list
proves the incumbent optimal (or the instance infeasible).
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .gridmap import UNREACHABLE
from .instance import MhppInstance, Solution
from .postopt import post_optimize

EPS_FLOOR = 1e-3  # eps below this is treated as exactly 0


class Label:
    """One partial joint solution; treated as immutable once created."""

    __slots__ = ("v", "g", "mask", "nvis", "active", "gmax", "gsum",
                 "h", "f", "parent", "moved_agent", "moved_to", "seq", "popped")

    def __init__(self, v, g, mask, nvis, active, gmax, gsum, h, f,
                 parent, moved_agent, moved_to, seq):
        self.v = v              # joint vertex: per-agent current node id
        self.g = g              # per-agent cumulative cost
        self.mask = mask        # visited targets as a bit vector
        self.nvis = nvis
        self.active = active    # agents not yet at their goal, as a bit mask
        self.gmax = gmax
        self.gsum = gsum
        self.h = h
        self.f = f
        self.parent = parent
        self.moved_agent = moved_agent
        self.moved_to = moved_to
        self.seq = seq
        self.popped = False

    def __repr__(self):
        return f"Label(v={self.v}, g={self.g}, |B|={self.nvis}, f={self.f})"


def dominates(l1: Label, l2: Label) -> bool:
    """Weak dominance: same joint vertex, element-wise cheaper costs,
    and at least the same visited set."""
    if l1.v != l2.v:
        return False
    if l2.mask & ~l1.mask:
        return False
    return all(a <= b for a, b in zip(l1.g, l2.g))


class FrontierSet:
    """Per joint-vertex store of mutually non-dominated labels."""

    def __init__(self):
        self._by_vertex = {}

    @staticmethod
    def _dom(e1, e2):
        mask1, g1 = e1
        mask2, g2 = e2
        if mask2 & ~mask1:
            return False
        return all(a <= b for a, b in zip(g1, g2))

    def is_dominated(self, label: Label) -> bool:
        bucket = self._by_vertex.get(label.v)
        if not bucket:
            return False
        entry = (label.mask, label.g)
        return any(self._dom(e, entry) for e in bucket)

    def filter_and_add(self, label: Label):
        """Drop stored labels dominated by `label`, then store it."""
        bucket = self._by_vertex.setdefault(label.v, [])
        entry = (label.mask, label.g)
        bucket[:] = [e for e in bucket if not self._dom(entry, e)]
        bucket.append(entry)


@dataclass
class Counters:
    generated: int = 0
    expanded: int = 0
    dominated: int = 0
    infeasible: int = 0
    bound_pruned: int = 0

    def to_json(self):
        return {"generated": self.generated, "expanded": self.expanded,
                "pruned_dominated": self.dominated,
                "pruned_infeasible": self.infeasible,
                "pruned_bound": self.bound_pruned}


@dataclass
class Incumbent:
    makespan: float
    total: float
    at_ms: float
    eps: float


@dataclass
class SolverReport:
    """Anytime solver outcome: incumbents in discovery order (strictly
    improving makespans), the final best solution, and search counters.

    status: 'optimal' (open list exhausted, incumbent proven optimal),
    'feasible' (budget hit with an incumbent), 'infeasible' (exhausted
    with no solution at all), 'no_solution' (budget hit, nothing found).
    """

    status: str
    best: Optional[Solution]
    incumbents: list = field(default_factory=list)
    counters: Counters = field(default_factory=Counters)
    eps_trace: list = field(default_factory=list)
    proven_optimal: bool = False

    def to_json(self):
        return {
            "status": self.status,
            "proven_optimal": self.proven_optimal,
            "incumbents": [
                {"makespan": inc.makespan, "total": inc.total,
                 "at_ms": inc.at_ms, "eps": inc.eps}
                for inc in self.incumbents
            ],
            "counters": self.counters.to_json(),
            "eps_trace": self.eps_trace,
            "solution": self.best.to_json() if self.best else None,
        }


class _Problem:
    """Instance data reshaped for the search hot path."""

    def __init__(self, inst: MhppInstance):
        self.inst = inst
        n, na = inst.n, inst.na
        self.n = n
        self.na = na
        self.full_mask = (1 << n) - 1
        self.goal_ids = tuple(inst.goal_id(i) for i in range(na))
        self.start_ids = tuple(inst.start_id(i) for i in range(na))
        # candidate targets per agent: assigned and reachable
        self.cand = [sorted(v for v in range(n) if i in inst.feasible_agents(v))
                     for i in range(na)]
        self.feas_mask = [0] * n
        for v in range(n):
            for i in inst.feasible_agents(v):
                self.feas_mask[v] |= 1 << i
        # min over agents of the assignment-masked cost, for the MST bound
        n_ids = inst.n_ids
        self.cmin = [[min(inst.cost(i, u, v) for i in range(na))
                      for v in range(n_ids)] for u in range(n_ids)]
        self._mst_cache = {}

    def cost(self, i, u, v):
        return self.inst.cost(i, u, v)

    def mst_bound(self, positions, unvisited):
        """MST cost over unvisited targets with all current positions
        contracted into one super-node; None when disconnected."""
        if not unvisited:
            return 0
        cmin = self.cmin
        cost_to = {u: min(cmin[p][u] for p in positions) for u in unvisited}
        total = 0
        rest = set(unvisited)
        while rest:
            u = min(rest, key=lambda w: (cost_to[w], w))
            if cost_to[u] == UNREACHABLE:
                return None
            total += cost_to[u]
            rest.discard(u)
            row = cmin[u]
            for w in rest:
                c = row[w]
                if c < cost_to[w]:
                    cost_to[w] = c
        return total

    def mst_bound_cached(self, v, mask):
        """Memoized wrapper keyed by (positions, visited mask): restarts
        of the anytime loop revisit the same states."""
        positions = frozenset(v)
        key = (positions, mask)
        hit = self._mst_cache.get(key, -1)
        if hit == -1:
            unvisited = [u for u in range(self.n) if not (mask >> u) & 1]
            hit = self.mst_bound(positions, unvisited)
            self._mst_cache[key] = hit
        return hit


def mst_heuristic(label: Label, inst: MhppInstance):
    """Cost-to-go lower bound for a label: MST over unvisited targets and
    the contracted current positions (zero-cost virtual edges), each edge
    priced at the cheapest agent, divided by the active agent count.
    None means some unvisited node is unreachable by every agent."""
    prob = _Problem(inst)
    unvisited = [v for v in range(inst.n) if not (label.mask >> v) & 1]
    n_active = label.active.bit_count()
    cmst = prob.mst_bound(set(label.v), unvisited)
    if cmst is None:
        return None
    if n_active == 0:
        return 0
    return cmst // n_active


def is_feasible(label: Label, inst: MhppInstance) -> bool:
    """Assignment constraints, completion consistency, and a forward
    check that every unvisited node still has a capable active agent."""
    for i, v in enumerate(label.v):
        if inst.is_target(v) and i not in inst.assign[v]:
            return False
    full = (1 << inst.n) - 1
    if label.active == 0 and label.mask != full:
        return False
    for v in range(inst.n):
        if not (label.mask >> v) & 1:
            feas = 0
            for i in inst.feasible_agents(v):
                feas |= 1 << i
            if not feas & label.active:
                return False
    return True


def expand(label: Label, inst: MhppInstance) -> list:
    """Successors of a label under partial expansion: the cheapest active
    agent either visits one more target it can serve, or retires to its
    goal (allowed once other agents remain active or nothing is left)."""
    return _Search(_Problem(inst), eps=0.0).successors(label)


class _Queues:
    """Open list plus focal list with lazy deletion.

    _all tracks live labels by f (giving f_min); _rest holds labels not
    yet inside the focal bound; _focal orders in-bound labels by the
    focal priority. f_min, and hence the bound (1+eps)*f_min, only grows
    within one search, so labels migrate from _rest to _focal at most
    once and never fall back out.
    """

    def __init__(self, eps, prefer_larger_f):
        self.eps = eps
        self.prefer_larger_f = prefer_larger_f
        self._all = []
        self._rest = []
        self._focal = []
        self._bound = -1.0

    def _focal_key(self, label):
        mid = -label.f if self.prefer_larger_f else label.f
        return (-label.nvis, mid, label.gsum, label.seq)

    def push(self, label):
        heapq.heappush(self._all, (label.f, label.seq, label))
        if label.f <= self._bound:
            heapq.heappush(self._focal, self._focal_key(label) + (label,))
        else:
            heapq.heappush(self._rest, (label.f, label.seq, label))

    def pop(self):
        """Remove and return the focal-best live label, or None when the
        open list is exhausted."""
        while self._all and self._all[0][2].popped:
            heapq.heappop(self._all)
        if not self._all:
            return None
        f_min = self._all[0][0]
        bound = (1.0 + self.eps) * f_min
        if bound > self._bound:
            self._bound = bound
            while self._rest and self._rest[0][0] <= bound:
                _, _, label = heapq.heappop(self._rest)
                if not label.popped:
                    heapq.heappush(self._focal, self._focal_key(label) + (label,))
        while self._focal:
            label = heapq.heappop(self._focal)[-1]
            if not label.popped:
                assert label.f <= self._bound + 1e-9  # focal integrity
                label.popped = True
                return label
        return None


class _Search:
    """One focal search pass at a fixed eps."""

    def __init__(self, prob: _Problem, eps, prefer_larger_f=True):
        self.prob = prob
        self.eps = eps
        self.prefer_larger_f = prefer_larger_f
        self.seq = 0

    def next_seq(self):
        self.seq += 1
        return self.seq

    def make_root(self):
        prob = self.prob
        v = prob.start_ids
        active = (1 << prob.na) - 1
        h = self._h(v, 0, active)
        if h is None:
            return None
        return Label(v, (0,) * prob.na, 0, 0, active, 0, 0, h, h,
                     None, None, None, self.next_seq())

    def _h(self, v, mask, active):
        cmst = self.prob.mst_bound_cached(v, mask)
        if cmst is None:
            return None
        n_active = active.bit_count()
        if n_active == 0:
            return 0
        return cmst // n_active

    def successors(self, label: Label) -> list:
        prob = self.prob
        # cheapest active agent moves; ties to the lowest agent id
        i = min((idx for idx in range(prob.na) if (label.active >> idx) & 1),
                key=lambda idx: (label.g[idx], idx))
        out = []
        pos = label.v[i]
        for u in prob.cand[i]:
            if (label.mask >> u) & 1:
                continue
            c = prob.cost(i, pos, u)
            if c == UNREACHABLE:
                continue
            child = self._child(label, i, u, c, retire=False)
            if child is not None:
                out.append(child)
        # goal move: only if someone else stays active or nothing is left
        others = label.active & ~(1 << i)
        if others or label.mask == prob.full_mask:
            c = prob.cost(i, pos, prob.goal_ids[i])
            if c != UNREACHABLE:
                child = self._child(label, i, prob.goal_ids[i], c, retire=True)
                if child is not None:
                    out.append(child)
        return out

    def _child(self, label, i, dest, c, retire):
        prob = self.prob
        v = label.v[:i] + (dest,) + label.v[i + 1:]
        gi = label.g[i] + c
        g = label.g[:i] + (gi,) + label.g[i + 1:]
        mask = label.mask if retire else label.mask | (1 << dest)
        nvis = label.nvis if retire else label.nvis + 1
        active = label.active & ~(1 << i) if retire else label.active
        gmax = gi if gi > label.gmax else label.gmax
        gsum = label.gsum + c
        h = self._h(v, mask, active)
        if h is None:
            return None  # some node unreachable by every agent: dead branch
        if active:
            g_min = min(g[j] for j in range(prob.na) if (active >> j) & 1)
            f_est = g_min + h
        else:
            f_est = gmax
        f = max(gmax, f_est, label.f)  # f never decreases along a chain
        return Label(v, g, mask, nvis, active, gmax, gsum, h, f,
                     label, i, dest, self.next_seq())

    def fast_feasible(self, child: Label) -> bool:
        """Feasibility for freshly generated children. Target moves are
        assignment-safe by construction and cannot invalidate the forward
        check, so only retire moves need work."""
        prob = self.prob
        if child.active == 0:
            return child.mask == prob.full_mask
        mask = child.mask
        active = child.active
        feas = prob.feas_mask
        for v in range(prob.n):
            if not (mask >> v) & 1 and not (feas[v] & active):
                return False
        return True


def extract_solution(label: Label, inst: MhppInstance) -> Solution:
    """Rebuild per-agent paths by walking the parent chain."""
    steps = []
    node = label
    while node.parent is not None:
        steps.append((node.moved_agent, node.moved_to))
        node = node.parent
    orders = [[] for _ in range(inst.na)]
    for i, dest in reversed(steps):
        if inst.is_target(dest):
            orders[i].append(dest)
    paths = [[inst.start_id(i)] + orders[i] + [inst.goal_id(i)]
             for i in range(inst.na)]
    costs = [inst.path_cost(i, p) for i, p in enumerate(paths)]
    return Solution(paths, max(costs), sum(costs))


def solve(inst: MhppInstance, eps0: float = 0.5, eps_decay: float = 0.5,
          time_limit_ms: Optional[float] = None,
          max_generated: Optional[int] = None,
          use_dominance: bool = True, prefer_larger_f: bool = True,
          warm_start: bool = True,
          label_hook: Optional[Callable] = None) -> SolverReport:
    """Anytime search: repeated focal passes with shrinking eps and the
    incumbent makespan as an upper bound (labels with f at or above it
    are discarded). With no limits it runs until a pass exhausts its
    open list, which proves the incumbent optimal, or the instance
    infeasible when there is none. Fully deterministic when budgeted via
    `max_generated`; `time_limit_ms` is checked at every pop.

    warm_start primes the upper bound with the greedy-plus-improvement
    solution (threshold bound + 1, so every label on an optimal path
    survives). The warm solution is not an incumbent: the first recorded
    incumbent is always found by the search itself and so keeps the
    (1 + eps0) suboptimality guarantee. The warm solution is returned
    only if the budget expires before the search completes anything.
    """
    t0 = time.monotonic()
    deadline = None if time_limit_ms is None else t0 + time_limit_ms / 1000.0
    prob = _Problem(inst)
    counters = Counters()
    incumbents = []
    best: Optional[Solution] = None
    warm: Optional[Solution] = None
    bound = UNREACHABLE
    if warm_start:
        from .baselines import greedy_b2
        from .instance import InfeasibleInstanceError
        try:
            warm = greedy_b2(inst)
            bound = warm.makespan + 1
        except InfeasibleInstanceError:
            warm = None
    eps = eps0
    eps_trace = [eps]
    out_of_budget = False
    proven = False

    while True:
        search = _Search(prob, eps, prefer_larger_f)
        frontier = FrontierSet()
        queues = _Queues(eps, prefer_larger_f)
        root = search.make_root()
        if root is None:
            proven = True  # some node unreachable by every agent
            break
        counters.generated += 1
        if label_hook:
            label_hook(root)
        queues.push(root)
        found = None

        while True:
            if deadline is not None and time.monotonic() > deadline:
                out_of_budget = True
                break
            if max_generated is not None and counters.generated >= max_generated:
                out_of_budget = True
                break
            label = queues.pop()
            if label is None:
                break  # open list exhausted
            if label.f >= bound:
                counters.bound_pruned += 1
                continue
            if use_dominance:
                if frontier.is_dominated(label):
                    counters.dominated += 1
                    continue
                frontier.filter_and_add(label)
            if label.mask == prob.full_mask and label.active == 0:
                found = label
                break
            counters.expanded += 1
            for child in search.successors(label):
                counters.generated += 1
                if label_hook:
                    label_hook(child)
                if not search.fast_feasible(child):
                    counters.infeasible += 1
                    continue
                if use_dominance and frontier.is_dominated(child):
                    counters.dominated += 1
                    continue
                if child.f >= bound:
                    counters.bound_pruned += 1
                    continue
                queues.push(child)

        if out_of_budget:
            break
        if found is not None:
            sol = post_optimize(extract_solution(found, inst), inst)
            if best is None or sol.makespan < best.makespan:
                best = sol
                bound = best.makespan
                incumbents.append(Incumbent(sol.makespan, sol.total,
                                            (time.monotonic() - t0) * 1000.0, eps))
            eps = eps * eps_decay
            if eps < EPS_FLOOR:
                eps = 0.0
            eps_trace.append(eps)
            continue
        # exhausted: nothing beats the current bound at any eps
        proven = True
        break

    if best is None and warm is not None and (proven or out_of_budget):
        # search never completed anything within the budget; fall back to
        # the warm solution (with an exhausted open list it is optimal)
        best = warm
        incumbents.append(Incumbent(warm.makespan, warm.total,
                                    (time.monotonic() - t0) * 1000.0, eps))
    if best is None:
        status = "infeasible" if proven else "no_solution"
    else:
        status = "optimal" if proven else "feasible"
    return SolverReport(status=status, best=best, incumbents=incumbents,
                        counters=counters, eps_trace=eps_trace,
                        proven_optimal=proven and best is not None)
