"""Reference solvers: greedy baselines and an exact small-instance oracle."""

from __future__ import annotations

import itertools
import math

from .gridmap import UNREACHABLE
from .instance import InfeasibleInstanceError, MhppInstance, Solution, solution_from_orders
from .postopt import post_optimize

ORACLE_MAX_NODES = 10
ORACLE_MAX_AGENTS = 3


def greedy_b1(inst: MhppInstance) -> Solution:
    """Greedy construction: repeatedly append the (node, agent) pair that
    keeps the running makespan smallest.

    Paths grow at the end, before the goal leg; goal legs are appended
    once every node is assigned. Ties break on smaller node id, then
    agent id.
    """
    orders = [[] for _ in range(inst.na)]
    g = [0] * inst.na
    last = [inst.start_id(i) for i in range(inst.na)]
    unassigned = set(range(inst.n))
    while unassigned:
        best = None  # (new_makespan, node, agent)
        for v in sorted(unassigned):
            for i in sorted(inst.feasible_agents(v)):
                c = inst.cost(i, last[i], v)
                if c == UNREACHABLE:
                    continue
                new_mk = max(g[i] + c, max((g[j] for j in range(inst.na) if j != i),
                                           default=0))
                key = (new_mk, v, i)
                if best is None or key < best:
                    best = key
        if best is None:
            raise InfeasibleInstanceError("a node has no capable agent that can reach it")
        _, v, i = best
        orders[i].append(v)
        g[i] += inst.cost(i, last[i], v)
        last[i] = v
        unassigned.discard(v)
    sol = solution_from_orders(inst, orders)
    if sol.makespan == UNREACHABLE:
        raise InfeasibleInstanceError("goal leg unreachable")
    return sol


def greedy_b2(inst: MhppInstance) -> Solution:
    """Greedy construction followed by the full post-optimization pass."""
    return post_optimize(greedy_b1(inst), inst)


def _held_karp(inst: MhppInstance, i: int):
    """Exact path-cost tables for agent i over its candidate targets.

    Returns (cand, best_end, choice) where best_end[mask] is the optimal
    cost start -> (visit mask) -> goal and choice lets the order be
    reconstructed. Masks index into cand, the agent's usable targets.
    """
    cand = [v for v in range(inst.n) if i in inst.feasible_agents(v)]
    m = len(cand)
    start, goal = inst.start_id(i), inst.goal_id(i)
    size = 1 << m
    dp = [[UNREACHABLE] * m for _ in range(size)]
    back = [[None] * m for _ in range(size)]
    for a, v in enumerate(cand):
        dp[1 << a][a] = inst.cost(i, start, v)
    for mask in range(size):
        row = dp[mask]
        for a in range(m):
            if not (mask >> a) & 1 or row[a] == UNREACHABLE:
                continue
            ca = inst.cost
            va = cand[a]
            base = row[a]
            for b in range(m):
                if (mask >> b) & 1:
                    continue
                step = ca(i, va, cand[b])
                if step == UNREACHABLE:
                    continue
                nm = mask | (1 << b)
                if base + step < dp[nm][b]:
                    dp[nm][b] = base + step
                    back[nm][b] = a
    best_end = [UNREACHABLE] * size
    end_choice = [None] * size
    best_end[0] = inst.cost(i, start, goal)
    for mask in range(1, size):
        for a in range(m):
            if not (mask >> a) & 1 or dp[mask][a] == UNREACHABLE:
                continue
            leg = inst.cost(i, cand[a], goal)
            if leg == UNREACHABLE:
                continue
            if dp[mask][a] + leg < best_end[mask]:
                best_end[mask] = dp[mask][a] + leg
                end_choice[mask] = a
    return cand, dp, back, best_end, end_choice


def _reconstruct(cand, dp, back, end_choice, mask):
    order = []
    a = end_choice[mask]
    while a is not None:
        order.append(cand[a])
        prev = back[mask][a]
        mask &= ~(1 << a)
        a = prev
    order.reverse()
    return order


def brute_force_oracle(inst: MhppInstance, max_nodes: int = ORACLE_MAX_NODES,
                       max_agents: int = ORACLE_MAX_AGENTS) -> Solution:
    """Exact minimum-makespan solution by enumerating node-to-agent
    assignments, with per-agent optimal orders from subset DP.

    Guarded: refuses instances beyond max_nodes or max_agents.
    """
    if inst.n > max_nodes:
        raise ValueError(f"oracle refuses {inst.n} nodes (> {max_nodes})")
    if inst.na > max_agents:
        raise ValueError(f"oracle refuses {inst.na} agents (> {max_agents})")
    for v in range(inst.n):
        if not inst.feasible_agents(v):
            raise InfeasibleInstanceError(f"node {v} has no capable agent")

    tables = [_held_karp(inst, i) for i in range(inst.na)]
    pos_of = [{v: a for a, v in enumerate(t[0])} for t in tables]

    choices = [sorted(inst.feasible_agents(v)) for v in range(inst.n)]
    best_val = UNREACHABLE
    best_masks = None
    for combo in itertools.product(*choices):
        masks = [0] * inst.na
        for v, i in enumerate(combo):
            masks[i] |= 1 << pos_of[i][v]
        val = max(tables[i][3][masks[i]] for i in range(inst.na))
        if val < best_val:
            best_val = val
            best_masks = masks
    if best_masks is None or best_val == UNREACHABLE:
        raise InfeasibleInstanceError("no capability-respecting assignment is finite")

    orders = []
    for i in range(inst.na):
        cand, dp, back, best_end, end_choice = tables[i]
        orders.append(_reconstruct(cand, dp, back, end_choice, best_masks[i]))
    return solution_from_orders(inst, orders)
