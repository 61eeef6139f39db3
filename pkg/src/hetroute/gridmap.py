"""Heterogeneous-terrain grid maps and per-agent-class path costs.

Maps follow the MovingAI octile benchmark text format. Movement is
8-connected with fixed-point step costs (1000 cardinal, 1414 diagonal)
so every path cost is an exact, platform-independent integer. Diagonal
moves may not cut corners: a diagonal step is legal only if both
orthogonally adjacent cells are traversable too.
"""

from __future__ import annotations

import heapq
import math
import re
from dataclasses import dataclass
from enum import IntEnum
from importlib import resources
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra as _sp_dijkstra

CARDINAL_COST = 1000
DIAGONAL_COST = 1414  # fixed-point sqrt(2)
UNREACHABLE = math.inf


class Terrain(IntEnum):
    GROUND = 0
    TREE = 1
    SWAMP = 2
    WATER = 3
    OBSTACLE = 4


_CHAR_TO_TERRAIN = {
    ".": Terrain.GROUND,
    "G": Terrain.GROUND,
    "T": Terrain.TREE,
    "S": Terrain.SWAMP,
    "W": Terrain.WATER,
    "@": Terrain.OBSTACLE,
    "O": Terrain.OBSTACLE,
}

_TERRAIN_TO_CHAR = {
    Terrain.GROUND: ".",
    Terrain.TREE: "T",
    Terrain.SWAMP: "S",
    Terrain.WATER: "W",
    Terrain.OBSTACLE: "@",
}


class MapError(Exception):
    """Base class for map parsing and lookup failures."""


class MapFormatError(MapError):
    """Header does not follow the octile map convention."""


class MapDimensionError(MapError):
    """Row count or row length disagrees with the declared size."""


class MapContentError(MapError):
    """A terrain character is not part of the format."""


class BoundsError(MapError):
    """Cell lies outside the grid."""


class Cell(NamedTuple):
    x: int
    y: int


@dataclass(frozen=True)
class AgentClass:
    """A vehicle class: which terrain it can stand on, and its priority rank.

    Higher `priority` means the class is preferred when a frontier can only
    be visited by a subset of the fleet.
    """

    name: str
    passable: frozenset
    priority: int = 0

    def __post_init__(self):
        if Terrain.OBSTACLE in self.passable:
            raise ValueError("obstacles are never passable")

    def can_stand(self, terrain: Terrain) -> bool:
        return terrain in self.passable


GV = AgentClass("GV", frozenset({Terrain.GROUND}), priority=1)
AV = AgentClass("AV", frozenset({Terrain.GROUND, Terrain.SWAMP, Terrain.WATER}), priority=2)
DEFAULT_CLASSES = (GV, AV)


class TerrainGrid:
    """A 2D terrain map backed by an int8 array indexed [y, x]."""

    def __init__(self, data: np.ndarray):
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise MapDimensionError("grid must be at least 1x1")
        self.data = data.astype(np.int8)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def cells(self) -> list:
        """Row-major flat list of Terrain values."""
        return [Terrain(v) for v in self.data.ravel()]

    def in_bounds(self, c: Cell) -> bool:
        return 0 <= c[0] < self.width and 0 <= c[1] < self.height

    def terrain(self, c: Cell) -> Terrain:
        if not self.in_bounds(c):
            raise BoundsError(f"cell {tuple(c)} outside {self.width}x{self.height} grid")
        return Terrain(self.data[c[1], c[0]])

    def count(self, terrain: Terrain) -> int:
        return int(np.count_nonzero(self.data == terrain))

    def __eq__(self, other):
        return isinstance(other, TerrainGrid) and np.array_equal(self.data, other.data)


def parse_map(text: str) -> TerrainGrid:
    """Parse MovingAI octile map text into a TerrainGrid.

    Accepts LF or CRLF line endings. Rows must contain exactly `width`
    terrain characters; trailing whitespace is rejected.
    """
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    lines = [ln[:-1] if ln.endswith("\r") else ln for ln in lines]
    if len(lines) < 4:
        raise MapFormatError("expected 4 header lines")
    if lines[0] != "type octile":
        raise MapFormatError(f"bad type line: {lines[0]!r}")
    m = re.fullmatch(r"height (\d+)", lines[1])
    if not m:
        raise MapFormatError(f"bad height line: {lines[1]!r}")
    height = int(m.group(1))
    m = re.fullmatch(r"width (\d+)", lines[2])
    if not m:
        raise MapFormatError(f"bad width line: {lines[2]!r}")
    width = int(m.group(1))
    if lines[3] != "map":
        raise MapFormatError(f"bad map line: {lines[3]!r}")
    if height < 1 or width < 1:
        raise MapDimensionError("height and width must be >= 1")
    rows = lines[4:]
    if len(rows) != height:
        raise MapDimensionError(f"expected {height} rows, got {len(rows)}")
    data = np.empty((height, width), dtype=np.int8)
    for y, row in enumerate(rows):
        if len(row) != width:
            raise MapDimensionError(f"row {y} has length {len(row)}, expected {width}")
        for x, ch in enumerate(row):
            t = _CHAR_TO_TERRAIN.get(ch)
            if t is None:
                raise MapContentError(f"unknown terrain character {ch!r} at ({x},{y})")
            data[y, x] = t
    return TerrainGrid(data)


def grid_to_text(grid: TerrainGrid) -> str:
    """Serialize a grid back to MovingAI map text (canonical characters)."""
    rows = [
        "".join(_TERRAIN_TO_CHAR[Terrain(v)] for v in grid.data[y])
        for y in range(grid.height)
    ]
    header = f"type octile\nheight {grid.height}\nwidth {grid.width}\nmap\n"
    return header + "\n".join(rows) + "\n"


def load_map(path) -> TerrainGrid:
    return parse_map(Path(path).read_text())


def builtin_map_names() -> list:
    """Names of the map files bundled with the package."""
    pkg = resources.files("hetroute.maps")
    return sorted(p.name[: -len(".map")] for p in pkg.iterdir() if p.name.endswith(".map"))


def load_builtin_map(name: str) -> TerrainGrid:
    pkg = resources.files("hetroute.maps")
    f = pkg / f"{name}.map"
    if not f.is_file():
        raise MapError(f"no builtin map named {name!r}; have {builtin_map_names()}")
    return parse_map(f.read_text())


def resolve_map_ref(ref: str, base_dir=None) -> TerrainGrid:
    """Load a map by reference: 'builtin:NAME' or a filesystem path."""
    if ref.startswith("builtin:"):
        return load_builtin_map(ref[len("builtin:"):])
    p = Path(ref)
    if not p.is_absolute() and base_dir is not None:
        cand = Path(base_dir) / p
        if cand.exists():
            p = cand
    if not p.exists():
        raise MapError(f"map file not found: {ref}")
    return load_map(p)


def traversable(grid: TerrainGrid, c: Cell, k: AgentClass) -> bool:
    """True iff class k can stand on cell c. Raises BoundsError out of bounds."""
    return grid.terrain(c) in k.passable


def class_mask(grid: TerrainGrid, k: AgentClass) -> np.ndarray:
    """Boolean [y, x] mask of cells class k can stand on."""
    mask = np.zeros(grid.data.shape, dtype=bool)
    for t in k.passable:
        mask |= grid.data == t
    return mask


# Move table: (dx, dy, step cost). Diagonals carry the corner-cut rule.
_MOVES = [
    (1, 0, CARDINAL_COST), (-1, 0, CARDINAL_COST),
    (0, 1, CARDINAL_COST), (0, -1, CARDINAL_COST),
    (1, 1, DIAGONAL_COST), (1, -1, DIAGONAL_COST),
    (-1, 1, DIAGONAL_COST), (-1, -1, DIAGONAL_COST),
]


def _octile(ax, ay, bx, by):
    dx = abs(ax - bx)
    dy = abs(ay - by)
    lo, hi = (dx, dy) if dx < dy else (dy, dx)
    return DIAGONAL_COST * lo + CARDINAL_COST * (hi - lo)


def astar_mask(mask: np.ndarray, start: Cell, goal: Cell, want_path: bool = False):
    """Octile A* over a boolean traversability mask.

    Returns (cost, path) where path is a Cell list including both
    endpoints, or (UNREACHABLE, None). start == goal yields (0, [start]).
    """
    h, w = mask.shape
    sx, sy = start
    gx, gy = goal
    if (sx, sy) == (gx, gy):
        return 0, ([Cell(sx, sy)] if want_path else None)
    if not (mask[sy, sx] and mask[gy, gx]):
        return UNREACHABLE, None
    dist = {(sx, sy): 0}
    parent = {}
    pq = [(_octile(sx, sy, gx, gy), 0, sx, sy)]
    while pq:
        f, g, x, y = heapq.heappop(pq)
        if g > dist.get((x, y), -1):
            continue
        if (x, y) == (gx, gy):
            if not want_path:
                return g, None
            path = [Cell(x, y)]
            while (x, y) in parent:
                x, y = parent[(x, y)]
                path.append(Cell(x, y))
            path.reverse()
            return g, path
        for dx, dy, step in _MOVES:
            nx, ny = x + dx, y + dy
            if not (0 <= nx < w and 0 <= ny < h) or not mask[ny, nx]:
                continue
            if dx and dy and not (mask[y, nx] and mask[ny, x]):
                continue  # corner cut
            ng = g + step
            if ng < dist.get((nx, ny), math.inf):
                dist[(nx, ny)] = ng
                if want_path:
                    parent[(nx, ny)] = (x, y)
                heapq.heappush(pq, (ng + _octile(nx, ny, gx, gy), ng, nx, ny))
    return UNREACHABLE, None


def shortest_path_cost(grid: TerrainGrid, a: Cell, b: Cell, k: AgentClass):
    """Cheapest 8-connected path cost for class k, or UNREACHABLE."""
    if not grid.in_bounds(a) or not grid.in_bounds(b):
        raise BoundsError(f"cell outside {grid.width}x{grid.height} grid")
    if tuple(a) == tuple(b):
        return 0
    cost, _ = astar_mask(class_mask(grid, k), Cell(*a), Cell(*b), want_path=False)
    return cost


def shortest_path(grid: TerrainGrid, a: Cell, b: Cell, k: AgentClass):
    """Like shortest_path_cost but also returns the cell path."""
    if not grid.in_bounds(a) or not grid.in_bounds(b):
        raise BoundsError(f"cell outside {grid.width}x{grid.height} grid")
    return astar_mask(class_mask(grid, k), Cell(*a), Cell(*b), want_path=True)


def _mask_graph(mask: np.ndarray):
    """Sparse CSR move graph over a traversability mask (node id = y*w + x)."""
    h, w = mask.shape
    n = h * w
    rows, cols, data = [], [], []

    def arcs(dy, dx, cost, ok):
        src_y, src_x = np.nonzero(ok)
        rows.append(src_y * w + src_x)
        cols.append((src_y + dy) * w + (src_x + dx))
        data.append(np.full(len(src_y), cost, dtype=np.float64))

    # cardinal: both endpoints traversable
    ok = mask[:, :-1] & mask[:, 1:]
    pad = np.zeros_like(mask)
    pad[:, :-1] = ok
    arcs(0, 1, CARDINAL_COST, pad)
    pad = np.zeros_like(mask)
    pad[:, 1:] = ok
    arcs(0, -1, CARDINAL_COST, pad)
    ok = mask[:-1, :] & mask[1:, :]
    pad = np.zeros_like(mask)
    pad[:-1, :] = ok
    arcs(1, 0, CARDINAL_COST, pad)
    pad = np.zeros_like(mask)
    pad[1:, :] = ok
    arcs(-1, 0, CARDINAL_COST, pad)
    # diagonal: endpoints plus both corner cells
    for dy, dx in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        ok = np.zeros_like(mask)
        ys = slice(max(0, -dy), h - max(0, dy))
        xs = slice(max(0, -dx), w - max(0, dx))
        ys2 = slice(max(0, dy), h - max(0, -dy))
        xs2 = slice(max(0, dx), w - max(0, -dx))
        ok[ys, xs] = mask[ys, xs] & mask[ys2, xs2] & mask[ys, xs2] & mask[ys2, xs]
        arcs(dy, dx, DIAGONAL_COST, ok)

    rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    data = np.concatenate(data) if data else np.empty(0, dtype=np.float64)
    return coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def multisource_costs(mask: np.ndarray, sources: Sequence) -> np.ndarray:
    """Exact grid distances from each source cell to every cell.

    Returns a float array of shape (len(sources), h*w); unreachable cells
    hold inf. Distances are integers stored exactly in float64.
    """
    h, w = mask.shape
    graph = _mask_graph(mask)
    idx = [c[1] * w + c[0] for c in sources]
    dist = _sp_dijkstra(graph, directed=True, indices=idx)
    if dist.ndim == 1:
        dist = dist[None, :]
    return dist


def build_cost_matrices(grid: TerrainGrid, nodes: Sequence, classes: Sequence) -> dict:
    """Per-class symmetric cost matrices over a node list.

    matrix[u][v] is the shortest-path cost between nodes[u] and nodes[v]
    for that class, UNREACHABLE when no path exists. One multi-goal
    Dijkstra per (class, source).
    """
    seen = set()
    for c in nodes:
        if not grid.in_bounds(c):
            raise BoundsError(f"node {tuple(c)} outside grid")
        if tuple(c) in seen:
            raise ValueError(f"duplicate node cell {tuple(c)}")
        seen.add(tuple(c))
    out = {}
    for k in classes:
        dist = multisource_costs(class_mask(grid, k), nodes)
        mat = []
        for i, c in enumerate(nodes):
            row = dist[i]
            mat.append([
                0 if i == j else
                (int(row[nodes[j][1] * grid.width + nodes[j][0]])
                 if math.isfinite(row[nodes[j][1] * grid.width + nodes[j][0]])
                 else UNREACHABLE)
                for j in range(len(nodes))
            ])
        out[k.name] = mat
    return out
