"""Local improvement of complete solutions.

Three moves, applied in a fixed scheme: per-path 2-opt, node transfers
from the longest to the shortest path inside a capability group, and
node transfers from the globally longest path into the least-loaded
other group. Every applied move strictly reduces the relevant makespan,
so all loops terminate; the global makespan never increases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .gridmap import UNREACHABLE
from .instance import MhppInstance, Solution


@dataclass
class PathGroup:
    """Agents sharing one capability footprint, with their current paths."""

    footprint: frozenset
    members: list
    paths: dict = field(default_factory=dict)

    def cost(self, inst: MhppInstance, i: int):
        return inst.path_cost(i, self.paths[i])

    def makespan(self, inst: MhppInstance):
        return max(self.cost(inst, i) for i in self.members)


def group_by_type(inst: MhppInstance, sol: Solution) -> list:
    """Partition agents by capability footprint, ordered by smallest member id."""
    buckets = {}
    for i in range(inst.na):
        fp = frozenset(v for v in range(inst.n) if i in inst.assign[v])
        buckets.setdefault(fp, []).append(i)
    groups = [PathGroup(fp, sorted(members),
                        {i: list(sol.paths[i]) for i in members})
              for fp, members in buckets.items()]
    groups.sort(key=lambda g: g.members[0])
    return groups


def two_opt(path: Sequence, cost) -> list:
    """Best-improvement 2-opt on a path with fixed endpoints.

    `cost(u, v)` must be symmetric; reversing path[i..j] then only
    changes the two boundary edges. Repeats until no reversal helps.
    """
    p = list(path)
    if len(p) < 4:
        return p
    improved = True
    while improved:
        improved = False
        best_delta = 0
        best = None
        for i in range(1, len(p) - 2):
            for j in range(i + 1, len(p) - 1):
                old = cost(p[i - 1], p[i]) + cost(p[j], p[j + 1])
                new = cost(p[i - 1], p[j]) + cost(p[i], p[j + 1])
                if new == UNREACHABLE:
                    continue
                delta = new - old
                if delta < best_delta:
                    best_delta = delta
                    best = (i, j)
        if best:
            i, j = best
            p[i:j + 1] = reversed(p[i:j + 1])
            improved = True
    return p


def _best_insertion(inst, agent, path, v):
    """Cheapest position to splice v into agent's path; (delta, pos) or None."""
    best = None
    for pos in range(1, len(path)):
        a, b = path[pos - 1], path[pos]
        ca, cb = inst.cost(agent, a, v), inst.cost(agent, v, b)
        if ca == UNREACHABLE or cb == UNREACHABLE:
            continue
        delta = ca + cb - inst.cost(agent, a, b)
        if best is None or delta < best[0]:
            best = (delta, pos)
    return best


def _removal_gain(inst, agent, path, idx):
    a, v, b = path[idx - 1], path[idx], path[idx + 1]
    return inst.cost(agent, a, v) + inst.cost(agent, v, b) - inst.cost(agent, a, b)


def inner_group_opt(group: PathGroup, inst: MhppInstance) -> PathGroup:
    """2-opt each member, then rebalance by moving single nodes from the
    group's longest path into its shortest, while that strictly lowers
    the inner-group makespan."""
    for i in group.members:
        group.paths[i] = two_opt(group.paths[i], lambda u, v, i=i: inst.cost(i, u, v))
    if len(group.members) < 2:
        return group
    while True:
        costs = {i: group.cost(inst, i) for i in group.members}
        longest = max(group.members, key=lambda i: (costs[i], -i))
        shortest = min(group.members, key=lambda i: (costs[i], i))
        if longest == shortest:
            return group
        cur_mk = costs[longest]
        cur_total = sum(costs.values())
        donor = group.paths[longest]
        recv = group.paths[shortest]
        best = None  # (new_mk, -total_gain, node, pos)
        for idx in range(1, len(donor) - 1):
            v = donor[idx]
            gain = _removal_gain(inst, longest, donor, idx)
            ins = _best_insertion(inst, shortest, recv, v)
            if ins is None:
                continue
            delta, pos = ins
            new_costs = dict(costs)
            new_costs[longest] = costs[longest] - gain
            new_costs[shortest] = costs[shortest] + delta
            new_mk = max(new_costs.values())
            if new_mk >= cur_mk:
                continue
            key = (new_mk, -(cur_total - sum(new_costs.values())), v, pos)
            if best is None or key < best[:4]:
                best = (new_mk, key[1], v, pos, idx)
        if best is None:
            return group
        _, _, v, pos, idx = best
        del donor[idx]
        recv.insert(pos, v)
        group.paths[longest] = two_opt(donor, lambda u, w: inst.cost(longest, u, w))
        group.paths[shortest] = two_opt(recv, lambda u, w: inst.cost(shortest, u, w))


def inter_group_opt(groups: Sequence, inst: MhppInstance):
    """One transfer from the globally longest path into the shortest path
    of the least-loaded other group, if it strictly lowers the global
    makespan. Returns (groups, improved)."""
    if len(groups) < 2:
        return groups, False
    costs = {}
    for g in groups:
        for i in g.members:
            costs[i] = g.cost(inst, i)
    donor_agent = max(costs, key=lambda i: (costs[i], -i))
    donor_group = next(g for g in groups if donor_agent in g.members)
    others = [g for g in groups if g is not donor_group]
    recv_group = min(others, key=lambda g: (g.makespan(inst), g.members[0]))
    recv_agent = min(recv_group.members, key=lambda i: (costs[i], i))

    cur_mk = max(costs.values())
    cur_total = sum(costs.values())
    donor = donor_group.paths[donor_agent]
    recv = recv_group.paths[recv_agent]
    best = None
    for idx in range(1, len(donor) - 1):
        v = donor[idx]
        if v not in recv_group.footprint:
            continue  # receiving agents not capable of v
        gain = _removal_gain(inst, donor_agent, donor, idx)
        ins = _best_insertion(inst, recv_agent, recv, v)
        if ins is None:
            continue
        delta, pos = ins
        new_costs = dict(costs)
        new_costs[donor_agent] = costs[donor_agent] - gain
        new_costs[recv_agent] = costs[recv_agent] + delta
        new_mk = max(new_costs.values())
        if new_mk >= cur_mk:
            continue
        key = (new_mk, -(cur_total - sum(new_costs.values())), v, pos)
        if best is None or key < best[:4]:
            best = (new_mk, key[1], v, pos, idx)
    if best is None:
        return groups, False
    _, _, v, pos, idx = best
    del donor[idx]
    recv.insert(pos, v)
    return groups, True


def post_optimize(sol: Solution, inst: MhppInstance) -> Solution:
    """Full improvement pass: inner-group balancing, inter-group transfers
    to a fixpoint, then a final inner-group pass."""
    groups = group_by_type(inst, sol)
    for g in groups:
        inner_group_opt(g, inst)
    improved = True
    while improved:
        groups, improved = inter_group_opt(groups, inst)
    for g in groups:
        inner_group_opt(g, inst)
    paths = [None] * inst.na
    for g in groups:
        for i in g.members:
            paths[i] = g.paths[i]
    costs = [inst.path_cost(i, p) for i, p in enumerate(paths)]
    return Solution(paths, max(costs), sum(costs))
