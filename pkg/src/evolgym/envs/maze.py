"""Grid maze with partial observability.

Coordinates are 1-based (x, y); moving down increases x, moving right
increases y.  The agent sees the goal, its own position and the walls
around its cell.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass

import numpy as np

from ..protocol import EnvDescriptor, EnvSpec, Transition, World

Cell = tuple[int, int]

MOVES: dict[str, Cell] = {
    "move up": (-1, 0),
    "move down": (1, 0),
    "move left": (0, -1),
    "move right": (0, 1),
}
# order walls are listed in the observation
_WALL_PHRASES = (("move left", "to your left"), ("move right", "to your right"),
                 ("move up", "above you"), ("move down", "below you"))

MAX_ROUNDS = 15
LOOP_PROB = 0.1
MIN_SIZE, MAX_SIZE = 5, 9
MIN_GOAL_DIST = 3
MAX_GOAL_DIST = 10

SYSTEM_PROMPT = (
    "You are an expert maze solver. Your objective is to reach the goal in as few steps as "
    "possible. At each step you will be given information about where the goal is, your current "
    "position, and the walls that surround you. When you move right you increase your y position "
    "by 1, when you move down you increase your x position by 1. Your possible actions are "
    "\"move up\", \"move down\", \"move left\", \"move right\". Formally, your return should be "
    "in this format:\n\nThought: <Your Thought>\nAction: <Your Action>"
)
INSTRUCTION_PREFIX = (
    "Now let's start a new game. Return your action and your thought in the format above "
    "strictly. Now, make the optimal action given the current environment state:\n"
)

DESCRIPTOR = EnvDescriptor("maze", MAX_ROUNDS, "binary", SYSTEM_PROMPT)

_POS_RE = re.compile(r"The goal is at position (\d+), (\d+)\. Your current position is at position (\d+), (\d+)\.")


def _edge(a: Cell, b: Cell) -> frozenset:
    return frozenset((a, b))


@dataclass(frozen=True)
class MazeLayout:
    size: int
    open_edges: frozenset  # passages between adjacent cells
    start: Cell
    goal: Cell

    def inside(self, c: Cell) -> bool:
        return 1 <= c[0] <= self.size and 1 <= c[1] <= self.size

    def can_move(self, c: Cell, move: str) -> bool:
        dx, dy = MOVES[move]
        n = (c[0] + dx, c[1] + dy)
        return self.inside(n) and _edge(c, n) in self.open_edges

    def neighbors(self, c: Cell) -> list[tuple[str, Cell]]:
        out = []
        for move, (dx, dy) in MOVES.items():
            if self.can_move(c, move):
                out.append((move, (c[0] + dx, c[1] + dy)))
        return out

    def distances(self, src: Cell) -> dict[Cell, int]:
        dist = {src: 0}
        q = deque([src])
        while q:
            c = q.popleft()
            for _, n in self.neighbors(c):
                if n not in dist:
                    dist[n] = dist[c] + 1
                    q.append(n)
        return dist

    def shortest_path(self, src: Cell, dst: Cell | None = None) -> list[str]:
        """Moves of a shortest path, ties broken by lexicographic move name."""
        dst = self.goal if dst is None else dst
        dist = self.distances(dst)
        if src not in dist:
            raise ValueError(f"{dst} unreachable from {src}")
        path, c = [], src
        while c != dst:
            move, c = min(((m, n) for m, n in self.neighbors(c) if dist.get(n) == dist[c] - 1),
                          key=lambda mn: mn[0])
            path.append(move)
        return path


def carve(size: int, rng: np.random.Generator) -> frozenset:
    """Randomized depth-first carving followed by loop injection."""
    cells = [(x, y) for x in range(1, size + 1) for y in range(1, size + 1)]
    start = cells[int(rng.integers(len(cells)))]
    seen = {start}
    stack = [start]
    open_edges = set()
    while stack:
        c = stack[-1]
        options = [(c[0] + dx, c[1] + dy) for dx, dy in MOVES.values()]
        options = [n for n in options if 1 <= n[0] <= size and 1 <= n[1] <= size and n not in seen]
        if not options:
            stack.pop()
            continue
        n = options[int(rng.integers(len(options)))]
        open_edges.add(_edge(c, n))
        seen.add(n)
        stack.append(n)
    for c in cells:
        for n in ((c[0] + 1, c[1]), (c[0], c[1] + 1)):
            if n[0] <= size and n[1] <= size and _edge(c, n) not in open_edges and rng.random() < LOOP_PROB:
                open_edges.add(_edge(c, n))
    return frozenset(open_edges)


def generate_layout(seed: int, size: int) -> MazeLayout:
    if not MIN_SIZE <= size <= MAX_SIZE:
        raise ValueError(f"maze size must be in [{MIN_SIZE}, {MAX_SIZE}], got {size}")
    rng = np.random.default_rng([seed, size, 0x6D617A65])
    for _ in range(100):
        edges = carve(size, rng)
        layout = MazeLayout(size, edges, (1, 1), (1, 1))
        cells = [(x, y) for x in range(1, size + 1) for y in range(1, size + 1)]
        start = cells[int(rng.integers(len(cells)))]
        dist = layout.distances(start)
        hi = min(MAX_GOAL_DIST, MAX_ROUNDS)
        goals = sorted(c for c, d in dist.items() if MIN_GOAL_DIST <= d <= hi)
        if goals:
            goal = goals[int(rng.integers(len(goals)))]
            return MazeLayout(size, edges, start, goal)
    raise ValueError(f"could not generate a solvable maze for seed {seed}")


def render_state(layout: MazeLayout, pos: Cell) -> str:
    walls = [phrase for move, phrase in _WALL_PHRASES if not layout.can_move(pos, move)]
    wall_text = f"There are walls {', '.join(walls)}." if walls else "There are no walls around you."
    return (f"The goal is at position {layout.goal[0]}, {layout.goal[1]}. "
            f"Your current position is at position {pos[0]}, {pos[1]}. {wall_text}")


def parse_state(observation: str) -> tuple[Cell, Cell] | None:
    """(goal, position) from a state observation, or None for other messages."""
    m = _POS_RE.search(observation)
    if not m:
        return None
    gx, gy, px, py = map(int, m.groups())
    return (gx, gy), (px, py)


def parse_open_moves(observation: str) -> list[str] | None:
    """Moves not blocked by a wall according to a state observation."""
    if parse_state(observation) is None:
        return None
    tail = observation[observation.rfind("There are"):]
    return [move for move, phrase in _WALL_PHRASES if phrase not in tail]


def normalize_action(action: str) -> str:
    return " ".join(action.strip().strip(".").lower().split())


class MazeWorld(World):
    def __init__(self, layout: MazeLayout):
        self.layout = layout
        self.position = layout.start

    def first_observation(self) -> str:
        return INSTRUCTION_PREFIX + render_state(self.layout, self.position)

    def step(self, action: str) -> Transition:
        move = normalize_action(action)
        if move not in MOVES:
            return Transition("Invalid action.", -1.0)
        if not self.layout.can_move(self.position, move):
            return Transition("You hit a wall.", -1.0)
        dx, dy = MOVES[move]
        self.position = (self.position[0] + dx, self.position[1] + dy)
        outcome = "success" if self.position == self.layout.goal else None
        return Transition(render_state(self.layout, self.position), -1.0, outcome)

    def available_actions(self) -> list[str]:
        return sorted(m for m in MOVES if self.layout.can_move(self.position, m))

    def fingerprint(self) -> str:
        return f"maze|{self.layout.size}|{self.layout.start}|{self.layout.goal}|{self.position}"


class MazeSpec(EnvSpec):
    descriptor = DESCRIPTOR
    default_difficulty = 7

    def check_difficulty(self, difficulty: int) -> None:
        if not MIN_SIZE <= difficulty <= MAX_SIZE:
            raise ValueError(f"maze size must be in [{MIN_SIZE}, {MAX_SIZE}], got {difficulty}")

    def build(self, seed: int, difficulty: int) -> tuple[str, MazeWorld]:
        world = MazeWorld(generate_layout(seed, difficulty))
        return world.first_observation(), world


class MazeOracle:
    """Shortest-path solver with privileged access to the generated layout."""

    def __init__(self, difficulty: int = MazeSpec.default_difficulty):
        self.difficulty = difficulty
        self._cache: dict[int, MazeLayout] = {}

    def layout(self, seed: int) -> MazeLayout:
        if seed not in self._cache:
            self._cache[seed] = generate_layout(seed, self.difficulty)
        return self._cache[seed]

    def next_move(self, seed: int, observation_history: list[str]) -> str:
        layout = self.layout(seed)
        for obs in reversed(observation_history):
            state = parse_state(obs)
            if state is not None:
                return layout.shortest_path(state[1])[0]
        return layout.shortest_path(layout.start)[0]
