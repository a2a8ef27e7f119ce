"""Text crafting over a small acyclic recipe graph.

Actions: ``get [N] <item>`` for base items, ``craft N <item> using k1 i1, k2 i2``
for one of the listed crafting commands, and ``inventory``.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from ..protocol import EnvDescriptor, EnvSpec, Transition, World

MAX_ROUNDS = 20
MIN_DEPTH, MAX_DEPTH = 1, 4
N_DISTRACTORS = 3
MAX_PLAN = 14  # optimal plan length cap, leaves slack under MAX_ROUNDS

SYSTEM_PROMPT = (
    "You are given a few useful crafting recipes to craft items in Minecraft. Crafting commands "
    "are of the format \"craft [target object] using [input ingredients]\". Every round I will give "
    "you an observation, you have to respond to an action based on the state and instruction. You "
    "can \"get\" an object (ingredients) from the inventory or the environment, look up the game "
    "\"inventory\" by inventory, or \"craft\" (target) using any of the crafting commands. You can "
    "use ONLY these crafting commands provided, do not use your own crafting commands. Your "
    "response should use the following format:\n\nThought: ...\nAction: ..."
)
DESCRIPTOR = EnvDescriptor("craft", MAX_ROUNDS, "binary", SYSTEM_PROMPT)

_CRAFT_RE = re.compile(r"^craft\s+(\d+)\s+(.+?)\s+using\s+(.+)$")
_INGREDIENT_RE = re.compile(r"^(\d+)\s+(.+)$")
_GET_RE = re.compile(r"^get\s+(?:(\d+)\s+)?(.+)$")


def _norm(text: str) -> str:
    return " ".join(text.strip().lower().split())


@dataclass(frozen=True)
class Recipe:
    output: str
    count: int
    inputs: tuple[tuple[int, str], ...]

    def command(self) -> str:
        ins = ", ".join(f"{n} {item}" for n, item in self.inputs)
        return f"craft {self.count} {self.output} using {ins}"

    def signature(self) -> tuple:
        return (self.output, self.count, tuple(sorted(self.inputs, key=lambda p: p[1])))


def parse_craft(text: str) -> Recipe | None:
    """Parse a craft command; ingredient order and extra whitespace are irrelevant."""
    m = _CRAFT_RE.match(_norm(text))
    if not m:
        return None
    inputs = []
    for part in m.group(3).split(","):
        im = _INGREDIENT_RE.match(part.strip())
        if not im:
            return None
        inputs.append((int(im.group(1)), im.group(2)))
    merged: dict[str, int] = {}
    for n, item in inputs:
        merged[item] = merged.get(item, 0) + n
    return Recipe(m.group(2), int(m.group(1)), tuple((n, i) for i, n in merged.items()))


@lru_cache(maxsize=1)
def recipe_book() -> dict[str, Recipe]:
    text = resources.files("evolgym.envs").joinpath("assets/recipes.jsonl").read_text(encoding="utf-8")
    book = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        book[d["output"]] = Recipe(d["output"], int(d["count"]),
                                   tuple((int(n), i) for n, i in d["inputs"]))
    _check_acyclic(book)
    return book


def base_items(book: dict[str, Recipe]) -> set[str]:
    items = {i for r in book.values() for _, i in r.inputs}
    return items - set(book)


def depth(item: str, book: dict[str, Recipe]) -> int:
    if item not in book:
        return 0
    return 1 + max(depth(i, book) for _, i in book[item].inputs)


def _check_acyclic(book: dict[str, Recipe]) -> None:
    state: dict[str, int] = {}

    def visit(item: str) -> None:
        if state.get(item) == 1:
            raise ValueError(f"recipe cycle through {item!r}")
        if state.get(item) == 2 or item not in book:
            return
        state[item] = 1
        for _, i in book[item].inputs:
            visit(i)
        state[item] = 2

    for item in book:
        visit(item)


def tree_recipes(target: str, book: dict[str, Recipe]) -> list[Recipe]:
    """All recipes needed to build ``target``, children before parents."""
    out: list[Recipe] = []

    def visit(item: str) -> None:
        r = book.get(item)
        if r is None or r in out:
            return
        for _, i in r.inputs:
            visit(i)
        out.append(r)

    visit(target)
    return out


def plan(target: str, recipes: dict[str, Recipe], inventory: Counter | None = None) -> list[str]:
    """Greedy depth-first plan: fetch or craft each missing ingredient, then the target."""
    inv = Counter(inventory or {})
    actions: list[str] = []

    def ensure(item: str, n: int) -> None:
        while inv[item] < n:
            if item in recipes:
                build(recipes[item])
            else:
                actions.append(f"get {item}")
                inv[item] += 1

    def build(r: Recipe) -> None:
        # making one input can consume another (planks -> slabs), so re-check all of them
        while not all(inv[i] >= k for k, i in r.inputs):
            for k, i in r.inputs:
                ensure(i, k)
        for k, i in r.inputs:
            inv[i] -= k
        inv[r.output] += r.count
        actions.append(r.command())

    build(recipes[target])
    return actions


def render_inventory(inv: Counter) -> str:
    items = sorted((i, n) for i, n in inv.items() if n > 0)
    if not items:
        return "Inventory: You are not carrying anything."
    return "Inventory: " + " ".join(f"[{i}] ({n})" for i, n in items)


def parse_instruction(text: str) -> tuple[list[Recipe], str | None]:
    recipes, goal = [], None
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("craft "):
            r = parse_craft(line)
            if r is not None:
                recipes.append(r)
        elif line.startswith("Goal: craft "):
            goal = line[len("Goal: craft "):].rstrip(".").strip()
    return recipes, goal


class CraftWorld(World):
    def __init__(self, recipes: list[Recipe], target: str, base: set[str]):
        self.recipes = list(recipes)
        self.by_signature = {r.signature(): r for r in self.recipes}
        self.target = target
        self.base = set(base)
        self.inventory: Counter = Counter()

    def first_observation(self) -> str:
        lines = ["Crafting commands:"] + [r.command() for r in self.recipes] + [f"Goal: craft {self.target}."]
        return "\n".join(lines)

    def _holds(self, r: Recipe) -> bool:
        return all(self.inventory[i] >= n for n, i in r.inputs)

    def step(self, action: str) -> Transition:
        a = _norm(action).rstrip(".")
        if a == "inventory":
            return Transition(render_inventory(self.inventory), 0.0)
        m = _GET_RE.match(a)
        if m:
            n = int(m.group(1) or 1)
            item = m.group(2)
            if item not in self.base or n < 1:
                return Transition(f"Could not find {item}", 0.0)
            self.inventory[item] += n
            return Transition(f"Got {n} {item}", 0.0)
        if a.startswith("craft "):
            r = parse_craft(a)
            if r is None:
                return Transition("Invalid action.", 0.0)
            known = self.by_signature.get(r.signature())
            if known is None:
                return Transition(f"Could not find a valid recipe for {r.output}", 0.0)
            if not self._holds(known):
                return Transition(f"Could not find enough items to craft {known.output}", 0.0)
            for n, i in known.inputs:
                self.inventory[i] -= n
                if self.inventory[i] == 0:
                    del self.inventory[i]
            self.inventory[known.output] += known.count
            outcome = "success" if known.output == self.target else None
            return Transition(f"Crafted {known.count} {known.output}", 1.0 if outcome else 0.0, outcome)
        return Transition("Invalid action.", 0.0)

    def available_actions(self) -> list[str]:
        listed_base = sorted({i for r in self.recipes for _, i in r.inputs if i in self.base})
        acts = ["inventory"] + [f"get {i}" for i in listed_base]
        acts += [r.command() for r in self.recipes if self._holds(r)]
        return sorted(acts)

    def fingerprint(self) -> str:
        return f"craft|{self.target}|{render_inventory(self.inventory)}"


def _candidate_targets(book: dict[str, Recipe], d: int) -> list[str]:
    """Targets of depth 1..d whose plan fits the round budget."""
    out = []
    for item in sorted(book):
        if not 1 <= depth(item, book) <= d:
            continue
        sub = {r.output: r for r in tree_recipes(item, book)}
        if len(plan(item, sub)) <= MAX_PLAN:
            out.append(item)
    return out


@lru_cache(maxsize=None)
def targets_up_to(d: int) -> tuple[str, ...]:
    return tuple(_candidate_targets(recipe_book(), d))


class CraftSpec(EnvSpec):
    descriptor = DESCRIPTOR
    default_difficulty = 3

    def check_difficulty(self, difficulty: int) -> None:
        if not MIN_DEPTH <= difficulty <= MAX_DEPTH:
            raise ValueError(f"craft depth must be in [{MIN_DEPTH}, {MAX_DEPTH}], got {difficulty}")
        if not targets_up_to(difficulty):
            raise ValueError(f"no craftable target of depth <= {difficulty}")

    def build(self, seed: int, difficulty: int) -> tuple[str, CraftWorld]:
        self.check_difficulty(difficulty)
        book = recipe_book()
        rng = np.random.default_rng([seed, difficulty, 0x63726166])
        targets = targets_up_to(difficulty)
        target = targets[int(rng.integers(len(targets)))]
        needed = tree_recipes(target, book)
        others = sorted(set(book) - {r.output for r in needed})
        picks = rng.choice(len(others), size=min(N_DISTRACTORS, len(others)), replace=False)
        listed = needed + [book[others[int(i)]] for i in picks]
        order = rng.permutation(len(listed))
        world = CraftWorld([listed[int(i)] for i in order], target, base_items(book))
        return world.first_observation(), world


class CraftPlanner:
    """Plans from the visible crafting commands; needs no hidden state."""

    def next_action(self, instruction: str, inventory: Counter) -> str:
        recipes, goal = parse_instruction(instruction)
        by_output = {r.output: r for r in recipes}
        return plan(goal, by_output, inventory)[0]
