import random

import numpy as np
import pytest

from hetroute.gridmap import AV, GV, Cell, Terrain, TerrainGrid


def make_text(rows):
    return (f"type octile\nheight {len(rows)}\nwidth {len(rows[0])}\nmap\n"
            + "\n".join(rows) + "\n")


def random_grid(seed, w=10, h=8, p_obstacle=0.12, p_tree=0.05, p_swamp=0.08,
                p_water=0.1):
    """Seeded random terrain grid for property tests."""
    rng = random.Random(seed)
    data = np.zeros((h, w), dtype=np.int8)
    for y in range(h):
        for x in range(w):
            r = rng.random()
            if r < p_obstacle:
                t = Terrain.OBSTACLE
            elif r < p_obstacle + p_tree:
                t = Terrain.TREE
            elif r < p_obstacle + p_tree + p_swamp:
                t = Terrain.SWAMP
            elif r < p_obstacle + p_tree + p_swamp + p_water:
                t = Terrain.WATER
            else:
                t = Terrain.GROUND
            data[y, x] = t
    return TerrainGrid(data)


def dijkstra_oracle(grid, start, k):
    """Independent reference: O(V^2) Dijkstra over the 8-connected grid
    with 1000/1414 step costs and the no-corner-cut rule."""
    passable = {Cell(x, y)
                for y in range(grid.height) for x in range(grid.width)
                if grid.terrain(Cell(x, y)) in k.passable}
    if Cell(*start) not in passable:
        return {}
    dist = {Cell(*start): 0}
    done = set()
    while True:
        cand = [(d, c) for c, d in dist.items() if c not in done]
        if not cand:
            return dist
        d, c = min(cand, key=lambda t: (t[0], t[1].y, t[1].x))
        done.add(c)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                n = Cell(c.x + dx, c.y + dy)
                if n not in passable:
                    continue
                if dx and dy and (Cell(c.x + dx, c.y) not in passable
                                  or Cell(c.x, c.y + dy) not in passable):
                    continue
                step = 1414 if dx and dy else 1000
                if d + step < dist.get(n, float("inf")):
                    dist[n] = d + step


@pytest.fixture
def open_grid():
    return random_grid(0, w=8, h=8, p_obstacle=0, p_tree=0, p_swamp=0, p_water=0)
