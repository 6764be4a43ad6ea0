"""Desk-scale sparse-reward environments.

Two tasks share one interface: a key-door-treasure grid world (reward 200
only at the treasure) and a 1-D sparse-line locomotion analog (reward 100
only past a threshold distance). Both expose landmark "nodes" that the
scripted preference oracle scores trajectories against.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

GRID_ACTIONS = ("up", "down", "left", "right")
_MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))

GRID_REWARD = 200.0
LINE_REWARD = 100.0


class MapError(ValueError):
    """Raised for ASCII maps that violate the layout invariants."""


@dataclass(frozen=True)
class GridLayout:
    """Static grid geometry loaded from an ASCII map."""

    width: int
    height: int
    walls: frozenset
    start: tuple[int, int]
    key: tuple[int, int]
    door: tuple[int, int]
    treasure: tuple[int, int]

    def in_bounds(self, cell: tuple[int, int]) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def is_wall(self, cell: tuple[int, int]) -> bool:
        return not self.in_bounds(cell) or cell in self.walls


@dataclass(frozen=True)
class GridState:
    x: int
    y: int
    has_key: bool = False
    door_open: bool = False
    t: int = 0


@dataclass(frozen=True)
class LineCfg:
    """Sparse-line dynamics constants; reward fires at position >= length."""

    length: float = 5.0
    v_max: float = 1.0


@dataclass(frozen=True)
class LineState:
    position: float = 0.0
    velocity: float = 0.0
    t: int = 0


@dataclass(frozen=True)
class NodeSpec:
    """Ordered landmark predicates used by the preference oracle.

    Grid: reached the key, opened the door, entered the treasure room.
    Line: crossed L/4, L/2, 3L/4. Satisfaction is monotone: once a
    landmark is hit it stays hit for the rest of the trajectory.
    """

    kind: str
    room_cells: frozenset | None = None
    thresholds: tuple[float, ...] | None = None

    def count(self) -> int:
        return 3 if self.kind == "grid" else len(self.thresholds)


def _flood(layout: GridLayout, origin: tuple[int, int], door_passable: bool) -> set:
    blocked = set(layout.walls)
    if not door_passable:
        blocked.add(layout.door)
    if origin in blocked:
        return set()
    seen = {origin}
    stack = [origin]
    while stack:
        x, y = stack.pop()
        for dx, dy in _MOVES:
            nxt = (x + dx, y + dy)
            if layout.in_bounds(nxt) and nxt not in blocked and nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def load_map(text: str) -> GridLayout:
    """Parse an ASCII map ('#' wall, '.' floor, S/K/D/T markers) and validate it.

    Validation is by flood fill: key and door must be reachable from the
    start with the door closed, while the treasure must be reachable only
    once the door opens.
    """
    rows = [r for r in text.splitlines() if r.strip()]
    if not rows:
        raise MapError("empty map")
    width = max(len(r) for r in rows)
    height = len(rows)
    walls, marks = set(), {}
    for y, row in enumerate(rows):
        padded = row.ljust(width, "#")
        for x, ch in enumerate(padded):
            if ch == "#":
                walls.add((x, y))
            elif ch in "SKDT":
                if ch in marks:
                    raise MapError(f"duplicate marker {ch!r}")
                marks[ch] = (x, y)
            elif ch != ".":
                raise MapError(f"unknown map character {ch!r} at {(x, y)}")
    missing = [c for c in "SKDT" if c not in marks]
    if missing:
        raise MapError(f"missing markers: {missing}")
    layout = GridLayout(width, height, frozenset(walls), marks["S"],
                        marks["K"], marks["D"], marks["T"])
    cells = (layout.start, layout.key, layout.door, layout.treasure)
    if len(set(cells)) != 4:
        raise MapError("start, key, door, treasure must be distinct cells")
    closed = _flood(layout, layout.start, door_passable=False)
    if layout.key not in closed:
        raise MapError("key not reachable from start with the door closed")
    if layout.treasure in closed:
        raise MapError("treasure reachable without passing the door")
    opened = _flood(layout, layout.start, door_passable=True)
    if layout.treasure not in opened:
        raise MapError("treasure not reachable even with the door open")
    return layout


def load_map_file(path) -> GridLayout:
    with open(path, encoding="utf-8") as fh:
        return load_map(fh.read())


def default_layout() -> GridLayout:
    """The packaged 36x26 key-door-treasure map."""
    text = resources.files("prefguide").joinpath("maps/key_door_treasure.txt").read_text()
    return load_map(text)


def treasure_room_cells(layout: GridLayout) -> frozenset:
    """Cells on the treasure's side of the closed door."""
    return frozenset(_flood(layout, layout.treasure, door_passable=False))


def grid_nodes(layout: GridLayout) -> NodeSpec:
    return NodeSpec(kind="grid", room_cells=treasure_room_cells(layout))


def line_nodes(cfg: LineCfg) -> NodeSpec:
    q = cfg.length / 4.0
    return NodeSpec(kind="line", thresholds=(q, 2 * q, 3 * q))


def grid_reset(layout: GridLayout, rng=None) -> GridState:
    x, y = layout.start
    return GridState(x, y)


def grid_step(state: GridState, action: int, layout: GridLayout,
              max_steps: int = 240) -> tuple[GridState, float, bool]:
    """One move; walls and the closed door block (the agent stays put)."""
    dx, dy = _MOVES[action]
    target = (state.x + dx, state.y + dy)
    x, y = state.x, state.y
    has_key, door_open = state.has_key, state.door_open
    if not layout.is_wall(target):
        if target == layout.door and not door_open:
            if has_key:
                door_open = True
                x, y = target
            # no key: blocked, stay in place
        else:
            x, y = target
            if target == layout.key:
                has_key = True
    t = state.t + 1
    new = GridState(x, y, has_key, door_open, t)
    if (x, y) == layout.treasure:
        return new, GRID_REWARD, True
    return new, 0.0, t >= max_steps


def line_reset(cfg: LineCfg, rng=None) -> LineState:
    return LineState()


def line_step(state: LineState, action: float, cfg: LineCfg,
              max_steps: int = 500) -> tuple[LineState, float, bool]:
    """Velocity integrator with clipped controls and a terminal threshold."""
    a = float(action)
    if not np.isfinite(a):
        raise ValueError("non-finite action")
    a = min(1.0, max(-1.0, a))
    v = min(cfg.v_max, max(-cfg.v_max, state.velocity + 0.1 * a))
    pos = state.position + 0.1 * v
    t = state.t + 1
    new = LineState(pos, v, t)
    if pos >= cfg.length:
        return new, LINE_REWARD, True
    return new, 0.0, t >= max_steps


def obs_encode(state, env) -> np.ndarray:
    """Normalized observation vector for either environment."""
    if isinstance(state, GridState):
        layout = env.layout if isinstance(env, Environment) else env
        return np.array([state.x / layout.width, state.y / layout.height,
                         float(state.has_key), float(state.door_open)])
    cfg = env.line_cfg if isinstance(env, Environment) else env
    return np.array([state.position / cfg.length, state.velocity / cfg.v_max])


def node_score(states, nodes: NodeSpec, control_cost: float = 0.0):
    """Score a trajectory's state sequence against the landmark list.

    Returns (nodes_reached, steps_used, control_cost) where steps_used is
    the step index at which the last newly-satisfied landmark was hit, or
    the trajectory length when no landmark was reached.
    """
    if not states:
        raise ValueError("empty trajectory")
    if nodes.kind == "grid":
        first = [_first_index(states, lambda s: s.has_key),
                 _first_index(states, lambda s: s.door_open),
                 _first_index(states, lambda s: (s.x, s.y) in nodes.room_cells)]
    else:
        first = [_first_index(states, lambda s, th=th: s.position >= th)
                 for th in nodes.thresholds]
    hit = [i for i in first if i is not None]
    reached = len(hit)
    steps_used = max(hit) if hit else len(states) - 1
    return reached, steps_used, float(control_cost)


def _first_index(states, pred):
    for i, s in enumerate(states):
        if pred(s):
            return i
    return None


def render_path(states, kind: str):
    """Render payload for the UI: grid cell path or line position series."""
    if kind == "grid":
        return [[s.x, s.y] for s in states]
    return [s.position for s in states]


@dataclass(frozen=True)
class Environment:
    """Bundle of everything rollout code needs about one task."""

    kind: str
    max_steps: int
    layout: GridLayout | None = None
    line_cfg: LineCfg | None = None
    nodes: NodeSpec = None

    @property
    def obs_dim(self) -> int:
        return 4 if self.kind == "grid" else 2

    @property
    def action_dim(self) -> int:
        return 4 if self.kind == "grid" else 1

    @property
    def discrete(self) -> bool:
        return self.kind == "grid"

    def reset(self, rng=None):
        if self.kind == "grid":
            return grid_reset(self.layout, rng)
        return line_reset(self.line_cfg, rng)

    def step(self, state, action):
        if self.kind == "grid":
            return grid_step(state, int(action), self.layout, self.max_steps)
        return line_step(state, float(action), self.line_cfg, self.max_steps)

    def encode(self, state) -> np.ndarray:
        return obs_encode(state, self)


def grid_environment(layout: GridLayout | None = None, max_steps: int = 240) -> Environment:
    layout = layout or default_layout()
    return Environment(kind="grid", max_steps=max_steps, layout=layout,
                       nodes=grid_nodes(layout))


def line_environment(cfg: LineCfg | None = None, max_steps: int = 500) -> Environment:
    cfg = cfg or LineCfg()
    return Environment(kind="line", max_steps=max_steps, line_cfg=cfg,
                       nodes=line_nodes(cfg))
