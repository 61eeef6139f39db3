import math

import pytest

from hetroute import gridmap
from hetroute.gridmap import AV, GV, UNREACHABLE, Cell, Terrain, parse_map
from hetroute.instance import (
    GenerationError,
    MhppInstance,
    Solution,
    generate_random_instance,
    instance_from_json,
    instance_to_json,
    solution_from_orders,
    validate_solution,
)

from conftest import make_text, random_grid


@pytest.fixture(scope="module")
def river_grid():
    return gridmap.load_builtin_map("riverlands")


def line_instance(costs=(3, 4)):
    """1 agent, 2 collinear nodes: start -1- n0 -a- n1 (ids 2/3 = start/goal)."""
    a, _ = costs
    m = [
        [0, a, 1, 1],
        [a, 0, 1 + a, 1 + a],
        [1, 1 + a, 0, 0],
        [1, 1 + a, 0, 0],
    ]
    return MhppInstance.from_matrix(m, 2, [GV])


class TestGenerate:
    def test_setting_a_counts(self, river_grid):
        inst = generate_random_instance(river_grid, 60, {"GV": 3, "AV": 3}, seed=1)
        normal = [v for v in range(inst.n) if inst.assign[v] == frozenset(range(6))]
        avonly = [v for v in range(inst.n) if inst.assign[v] == frozenset({3, 4, 5})]
        assert len(normal) == 40
        assert len(avonly) == 20
        for v in avonly:
            assert river_grid.terrain(inst.node_cells[v]) in (Terrain.SWAMP, Terrain.WATER)
        for v in normal:
            assert river_grid.terrain(inst.node_cells[v]) == Terrain.GROUND

    def test_tiny_ratio(self, river_grid):
        inst = generate_random_instance(river_grid, 3, {"GV": 1, "AV": 1}, seed=2)
        avonly = [v for v in range(inst.n) if inst.assign[v] == frozenset({1})]
        assert inst.n == 3 and len(avonly) == 1

    def test_deterministic(self, river_grid):
        a = generate_random_instance(river_grid, 12, {"GV": 2, "AV": 1}, seed=9,
                                     map_ref="builtin:riverlands")
        b = generate_random_instance(river_grid, 12, {"GV": 2, "AV": 1}, seed=9,
                                     map_ref="builtin:riverlands")
        assert instance_to_json(a) == instance_to_json(b)
        c = generate_random_instance(river_grid, 12, {"GV": 2, "AV": 1}, seed=10,
                                     map_ref="builtin:riverlands")
        assert instance_to_json(a) != instance_to_json(c)

    def test_nodes_distinct_and_reachable(self, river_grid):
        inst = generate_random_instance(river_grid, 20, {"GV": 2, "AV": 2}, seed=4)
        cells = [tuple(c) for c in inst.node_cells]
        assert len(set(cells)) == inst.n
        inst.check()
        # mutual reachability for the most capable class (AV agents are 2, 3)
        for u in range(inst.n):
            for v in range(inst.n):
                assert inst.raw_cost(2, u, v) != UNREACHABLE

    def test_insufficient_cells(self):
        tiny = parse_map(make_text(["...", "..."]))
        with pytest.raises(GenerationError):
            generate_random_instance(tiny, 30, {"GV": 1, "AV": 1}, seed=0)

    def test_avonly_needs_capable_class(self):
        g = parse_map(make_text(["......", "..SS..", "......"]))
        with pytest.raises(GenerationError):
            generate_random_instance(g, 3, {"GV": 2}, seed=0)

    def test_distinct_goals(self, river_grid):
        inst = generate_random_instance(river_grid, 6, {"GV": 1, "AV": 1}, seed=5,
                                        distinct_goals=True)
        for i in range(inst.na):
            assert tuple(inst.start_cells[i]) != tuple(inst.goal_cells[i])


class TestValidate:
    def test_unvisited_node(self):
        inst = line_instance()
        sol = solution_from_orders(inst, [[0]])
        rep = validate_solution(inst, sol)
        assert not rep.ok and rep.kind == "unvisited" and "1" in rep.message

    def test_duplicate_visit(self):
        inst = line_instance()
        sol = solution_from_orders(inst, [[0, 1, 0]])
        rep = validate_solution(inst, sol)
        assert not rep.ok and rep.kind == "duplicate_visit"

    def test_assignment_violation(self):
        m = [[0, 2, 1, 1, 1, 1],
             [2, 0, 1, 1, 1, 1],
             [1, 1, 0, 2, 0, 2],
             [1, 1, 2, 0, 2, 0],
             [1, 1, 0, 2, 0, 2],
             [1, 1, 2, 0, 2, 0]]
        inst = MhppInstance(2, [GV, AV], [frozenset({0, 1}), frozenset({1})],
                            [m, m])
        sol = solution_from_orders(inst, [[0, 1], []])
        rep = validate_solution(inst, sol)
        assert not rep.ok and rep.kind == "assignment" and "agent 0" in rep.message

    def test_endpoint_violation(self):
        inst = line_instance()
        sol = Solution([[inst.start_id(0), 0, 1]], 0, 0)
        rep = validate_solution(inst, sol)
        assert not rep.ok and rep.kind == "endpoints"

    def test_recomputes_makespan_from_matrices(self):
        inst = line_instance(costs=(7, 0))
        sol = solution_from_orders(inst, [[1, 0]])
        sol.makespan = 123456  # stored value must be ignored
        rep = validate_solution(inst, sol)
        # start->n1 = 8, n1->n0 = 7, n0->goal = 1
        assert rep.ok and rep.makespan == 16 and rep.total == 16

    def test_two_agent_hand_sum(self):
        g = parse_map(make_text(["......", "......", "......"]))
        inst = MhppInstance.from_grid(
            g, [Cell(1, 1), Cell(4, 1)], [GV, GV], [Cell(0, 0), Cell(5, 2)])
        sol = solution_from_orders(inst, [[0], [1]])
        rep = validate_solution(inst, sol)
        hand = max(2 * gridmap.shortest_path_cost(g, Cell(0, 0), Cell(1, 1), GV),
                   2 * gridmap.shortest_path_cost(g, Cell(5, 2), Cell(4, 1), GV))
        assert rep.ok and rep.makespan == hand


class TestSerialization:
    def test_roundtrip(self, river_grid, tmp_path):
        inst = generate_random_instance(river_grid, 9, {"GV": 2, "AV": 1}, seed=11,
                                        map_ref="builtin:riverlands")
        text = instance_to_json(inst)
        again = instance_from_json(text)
        assert again.n == inst.n
        assert [tuple(c) for c in again.node_cells] == [tuple(c) for c in inst.node_cells]
        assert again.assign == inst.assign
        for i in range(inst.na):
            for u in range(inst.n_ids):
                for v in range(inst.n_ids):
                    assert again.cost(i, u, v) == inst.cost(i, u, v)
        assert instance_to_json(again) == text

    def test_file_roundtrip(self, river_grid, tmp_path):
        from hetroute.instance import load_instance, save_instance

        inst = generate_random_instance(river_grid, 5, {"GV": 1, "AV": 1}, seed=3,
                                        map_ref="builtin:riverlands")
        p = tmp_path / "inst.json"
        save_instance(inst, p)
        again = load_instance(p)
        assert instance_to_json(again) == instance_to_json(inst)


class TestInstanceInvariants:
    def test_generator_outputs_valid_instances(self, river_grid):
        for seed in range(8):
            inst = generate_random_instance(river_grid, 8, {"GV": 1, "AV": 1},
                                            seed=seed)
            inst.check()
            for v in range(inst.n):
                assert inst.assign[v]
                # masked costs: unassigned agent sees infinity
                for i in range(inst.na):
                    if i not in inst.assign[v]:
                        assert inst.cost(i, v, inst.start_id(i)) == UNREACHABLE
