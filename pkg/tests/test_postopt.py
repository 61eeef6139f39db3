import itertools
import random

import pytest

from hetroute.gridmap import AV, GV, Cell, UNREACHABLE
from hetroute.instance import (
    MhppInstance,
    generate_random_instance,
    solution_from_orders,
    validate_solution,
)
from hetroute.postopt import (
    PathGroup,
    group_by_type,
    inner_group_opt,
    inter_group_opt,
    post_optimize,
    two_opt,
)

from conftest import random_grid


def planar_instance(points, start, na=1, classes=None, assign=None):
    """Instance over 2D points with scaled Euclidean costs (one shared
    matrix); start doubles as every agent's start and goal."""
    cells = list(points) + [start] * (2 * na)
    n = len(points)

    def d(a, b):
        return round(1000 * ((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2) ** 0.5)

    m = [[d(a, b) for b in cells] for a in cells]
    classes = classes or [GV] * na
    if assign is None:
        assign = [frozenset(range(na))] * n
    return MhppInstance(n, classes, assign, [m] * na)


class TestGroupByType:
    def test_two_classes_two_groups(self, river_grid=None):
        grid = random_grid(10, w=12, h=10)
        inst = generate_random_instance(grid, 6, {"GV": 3, "AV": 3}, seed=2)
        sol = solution_from_orders(
            inst, [[v] for v in range(6)])
        groups = group_by_type(inst, sol)
        assert len(groups) == 2
        assert groups[0].members == [0, 1, 2]
        assert groups[1].members == [3, 4, 5]

    def test_single_class_single_group(self):
        inst = planar_instance([(0, 1), (0, 2)], (0, 0), na=2)
        sol = solution_from_orders(inst, [[0], [1]])
        groups = group_by_type(inst, sol)
        assert len(groups) == 1 and groups[0].members == [0, 1]

    def test_unique_footprints_singletons(self):
        m = [[0] * 6 for _ in range(6)]
        inst = MhppInstance(2, [GV, AV], [frozenset({0}), frozenset({1})], [m, m])
        sol = solution_from_orders(inst, [[0], [1]])
        groups = group_by_type(inst, sol)
        assert [g.members for g in groups] == [[0], [1]]


class TestTwoOpt:
    def test_short_paths_unchanged(self):
        inst = planar_instance([(1, 0)], (0, 0))
        path = [1, 0, 2]
        assert two_opt(path, lambda u, v: inst.cost(0, u, v)) == path

    def test_uncrosses_matches_exhaustive(self):
        pts = [(0, 0), (10, 10), (10, 0), (0, 10)]  # crossing order
        inst = planar_instance(pts, (0, 5))
        cost = lambda u, v: inst.cost(0, u, v)
        crossed = [4, 0, 1, 2, 3, 5]
        out = two_opt(crossed, cost)
        best = min(
            (sum(cost(a, b) for a, b in zip([4] + list(p) + [5],
                                            list(p) + [5]))
             for p in itertools.permutations(range(4))),
        )
        got = sum(cost(a, b) for a, b in zip(out, out[1:]))
        assert got == best
        assert out[0] == 4 and out[-1] == 5

    def test_optimal_is_fixpoint(self):
        pts = [(1, 0), (2, 0), (3, 0)]
        inst = planar_instance(pts, (0, 0))
        path = [3, 0, 1, 2, 4]
        assert two_opt(path, lambda u, v: inst.cost(0, u, v)) == path

    def test_never_increases_cost(self):
        rng = random.Random(0)
        for trial in range(20):
            pts = [(rng.randrange(20), rng.randrange(20)) for _ in range(6)]
            inst = planar_instance(pts, (0, 0))
            cost = lambda u, v: inst.cost(0, u, v)
            perm = list(range(6))
            rng.shuffle(perm)
            path = [6] + perm + [7]
            out = two_opt(path, cost)
            assert sum(cost(a, b) for a, b in zip(out, out[1:])) <= \
                sum(cost(a, b) for a, b in zip(path, path[1:]))


class TestInnerGroupOpt:
    def test_single_agent_is_two_opt(self):
        pts = [(0, 0), (10, 10), (10, 0), (0, 10)]
        inst = planar_instance(pts, (0, 5))
        sol = solution_from_orders(inst, [[0, 1, 2, 3]])
        g = group_by_type(inst, sol)[0]
        inner_group_opt(g, inst)
        expect = two_opt([4, 0, 1, 2, 3, 5], lambda u, v: inst.cost(0, u, v))
        assert g.paths[0] == expect

    def test_balances_line_to_exhaustive_optimum(self):
        # two identical agents, all nodes on one line, one agent overloaded
        pts = [(i + 1, 0) for i in range(6)]
        inst = planar_instance(pts, (0, 0), na=2)
        sol = solution_from_orders(inst, [[0, 1, 2, 3, 4, 5], []])
        g = group_by_type(inst, sol)[0]
        inner_group_opt(g, inst)
        got = max(inst.path_cost(i, g.paths[i]) for i in (0, 1))

        cost = lambda u, v: inst.cost(0, u, v)
        best = UNREACHABLE
        for size in range(7):
            for part in itertools.combinations(range(6), size):
                rest = [v for v in range(6) if v not in part]
                def opt_order(nodes):
                    if not nodes:
                        return 0
                    return min(
                        sum(cost(a, b) for a, b in zip([6] + list(p) + [7],
                                                       list(p) + [7]))
                        for p in itertools.permutations(nodes))
                best = min(best, max(opt_order(part), opt_order(rest)))
        # local search reaches within one hop of the true optimum here
        assert got == best

    def test_balanced_input_unchanged(self):
        pts = [(0, 5), (0, -5)]
        inst = planar_instance(pts, (0, 0), na=2)
        sol = solution_from_orders(inst, [[0], [1]])
        g = group_by_type(inst, sol)[0]
        before = {i: list(p) for i, p in g.paths.items()}
        inner_group_opt(g, inst)
        assert g.paths == before

    def test_makespan_never_increases(self):
        rng = random.Random(4)
        for trial in range(15):
            pts = [(rng.randrange(15), rng.randrange(15)) for _ in range(7)]
            inst = planar_instance(pts, (7, 7), na=2)
            split = rng.randrange(8)
            order = list(range(7))
            rng.shuffle(order)
            sol = solution_from_orders(inst, [order[:split], order[split:]])
            g = group_by_type(inst, sol)[0]
            before = g.makespan(inst)
            inner_group_opt(g, inst)
            assert g.makespan(inst) <= before


def overloaded_two_group_instance():
    """2 GVs + 1 AV; one GV carries every shared node, and the shared
    column sits right next to the AV-only node, so handing the column tip
    to the AV strictly drops the global makespan."""
    pts = [(10, 0), (10, 1), (10, 2), (10, 3), (10, 4)]
    assign = [frozenset({0, 1, 2})] * 4 + [frozenset({2})]
    inst = planar_instance(pts, (0, 0), na=3, classes=[GV, GV, AV], assign=assign)
    sol = solution_from_orders(inst, [[0, 1, 2, 3], [], [4]])
    return inst, sol


class TestInterGroupOpt:
    def test_single_group_no_improvement(self):
        pts = [(1, 0), (2, 0)]
        inst = planar_instance(pts, (0, 0), na=2)
        sol = solution_from_orders(inst, [[0, 1], []])
        groups = group_by_type(inst, sol)
        _, improved = inter_group_opt(groups, inst)
        assert improved is False

    def test_assignment_blocks_transfer(self):
        # AV path holds an AV-only node; GV group cannot take it
        pts = [(1, 0), (5, 5)]
        assign = [frozenset({0, 1}), frozenset({1})]
        inst = planar_instance(pts, (0, 0), na=2, classes=[GV, AV], assign=assign)
        sol = solution_from_orders(inst, [[], [0, 1]])
        groups = group_by_type(inst, sol)
        groups, improved = inter_group_opt(groups, inst)
        # only node 0 may move; node 1 must stay on the AV
        av_group = next(g for g in groups if 1 in g.members)
        assert 1 in av_group.paths[1]

    def test_transfer_happens_and_improves(self):
        inst, sol = overloaded_two_group_instance()
        groups = group_by_type(inst, sol)
        before = max(inst.path_cost(i, sol.paths[i]) for i in range(3))
        groups, improved = inter_group_opt(groups, inst)
        assert improved
        paths = {i: g.paths[i] for g in groups for i in g.members}
        after = max(inst.path_cost(i, p) for i, p in paths.items())
        assert after < before


class TestPostOptimize:
    def test_fixpoint_on_optimal(self):
        pts = [(1, 0), (2, 0)]
        inst = planar_instance(pts, (0, 0))
        sol = solution_from_orders(inst, [[0, 1]])
        out = post_optimize(sol, inst)
        assert out.makespan == sol.makespan

    def test_output_validates_and_never_worse(self):
        rng = random.Random(9)
        for trial in range(25):
            grid = random_grid(trial + 300, w=12, h=10)
            try:
                inst = generate_random_instance(grid, 8, {"GV": 2, "AV": 1},
                                                seed=trial)
            except Exception:
                continue
            # random valid solution
            orders = [[] for _ in range(inst.na)]
            for v in range(inst.n):
                i = rng.choice(sorted(inst.feasible_agents(v)))
                orders[i].append(v)
            for o in orders:
                rng.shuffle(o)
            sol = solution_from_orders(inst, orders)
            assert validate_solution(inst, sol).ok
            out = post_optimize(sol, inst)
            rep = validate_solution(inst, out)
            assert rep.ok
            assert rep.makespan <= sol.makespan
