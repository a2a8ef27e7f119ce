"""Hashed sparse feature map phi(context, action).

Feature names are hashed into ``DIM`` buckets with CRC-32, which is stable
across processes (unlike ``hash``).  Three families:

* generic: action identity, action tokens, observation n-grams crossed with
  action tokens, last action and observation keywords crossed with action tokens;
* cues: a handful of per-environment indicators computed from the visible
  text of the episode (never from hidden state).
"""

from __future__ import annotations

import re
import zlib
from collections import Counter
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from ..envs import craft as craft_env
from ..envs import maze as maze_env
from ..envs import wordle as wordle_env
from .context import PolicyContext

FEATURE_MAP_VERSION = "hashed-v4"
DIM_BITS = 16
DIM = 1 << DIM_BITS
MAX_OBS_TOKENS = 40

SparseVec = tuple[np.ndarray, np.ndarray]

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@lru_cache(maxsize=1 << 18)
def feature_index(name: str) -> int:
    return zlib.crc32(name.encode("utf-8")) & (DIM - 1)


def _obs_ngrams(observation: str) -> list[str]:
    # the last line short enough to be a state description; long listings carry no signal
    for line in reversed(observation.splitlines()):
        toks = tokens(line)
        if toks and len(toks) <= MAX_OBS_TOKENS:
            return toks + [f"{a}_{b}" for a, b in zip(toks, toks[1:])]
    return []


# -- per-environment cue extractors ------------------------------------------

def _maze_cues(ctx: PolicyContext) -> Callable[[str], list[str]]:
    texts = [ctx.instruction] + [s.observation for s in ctx.history]
    if ctx.current_observation not in texts[-1:]:
        texts.append(ctx.current_observation)
    visits: Counter = Counter()
    exits: dict[tuple[int, int], list[tuple[int, int]]] = {}
    state = None
    for t in texts:
        s = maze_env.parse_state(t)
        if s is not None:
            state = s
            visits[s[1]] += 1
            x, y = s[1]
            exits[s[1]] = [(x + maze_env.MOVES[m][0], y + maze_env.MOVES[m][1])
                           for m in maze_env.parse_open_moves(t)]

    def reaches_frontier(start, blocked) -> bool:
        # search the known graph for an open, never-visited cell
        seen, stack = {start, blocked}, [start]
        while stack:
            c = stack.pop()
            for n in exits.get(c, ()):
                if n not in exits:
                    return True
                if n not in seen:
                    seen.add(n)
                    stack.append(n)
        return False
    last = maze_env.normalize_action(ctx.history[-1].action) if ctx.history else ""
    opposite = {"move up": "move down", "move down": "move up",
                "move left": "move right", "move right": "move left"}

    def cues(action: str) -> list[str]:
        move = maze_env.normalize_action(action)
        if state is None or move not in maze_env.MOVES:
            return []
        goal, pos = state
        dx, dy = maze_env.MOVES[move]
        nxt = (pos[0] + dx, pos[1] + dy)
        before = abs(goal[0] - pos[0]) + abs(goal[1] - pos[1])
        after = abs(goal[0] - nxt[0]) + abs(goal[1] - nxt[1])
        out = ["toward" if after < before else "away"]
        if opposite.get(last) == move:
            out.append("reverse")
        seen = visits[nxt]
        if seen:
            out.append("visited")
            out.append("seen%d" % min(seen, 3))
            out.append("backtrack" if reaches_frontier(nxt, pos) else "dead")
        if len(ctx.available_actions) == 1:
            out.append("forced")
        return out

    return cues


_FEEDBACK_RE = re.compile(r"^[bgy]( [bgy]){4}$")


def _wordle_cues(ctx: PolicyContext) -> Callable[[str], list[str]]:
    """Letter-level evidence from past feedback; a soft stand-in for consistency."""
    history = []
    for s in ctx.history:
        if _FEEDBACK_RE.match(s.observation.strip()):
            history.append((wordle_env.normalize_guess(s.action), s.observation.split()))
    guessed = {g for g, _ in history}
    greens: dict[int, str] = {}
    yellows: set[tuple[int, str]] = set()
    present: set[str] = set()
    absent: set[str] = set()
    tried: set[str] = set()
    for g, fb in history:
        tried.update(g)
        for i, (c, f) in enumerate(zip(g, fb)):
            if f == "g":
                greens[i] = c
                present.add(c)
            elif f == "y":
                yellows.add((i, c))
                present.add(c)
        for c, f in zip(g, fb):
            if f == "b" and c not in present:
                absent.add(c)

    def cues(action: str) -> list[str]:
        w = wordle_env.normalize_guess(action)
        if len(w) != 5:
            return []
        if not history:
            out = ["opening"]
        else:
            out = []
            for i, c in greens.items():
                out.append("green_hit" if w[i] == c else "green_miss")
            for i, c in yellows:
                out.append("yellow_same" if w[i] == c else "yellow_in" if c in w else "yellow_out")
            out += ["absent_used"] * sum(c in absent for c in set(w))
            out += ["new_letter"] * sum(c not in tried for c in set(w))
        if w in guessed:
            out.append("repeat")
        if len(set(w)) == 5:
            out.append("distinct")
        return out

    return cues


@lru_cache(maxsize=4096)
def _craft_plan_view(instruction: str):
    recipes, goal = craft_env.parse_instruction(instruction)
    by_output = {r.output: r for r in recipes}
    tree: set[str] = set()
    need: Counter = Counter()

    def visit(item: str) -> None:
        r = by_output.get(item)
        if r is None or item in tree:
            return
        tree.add(item)
        for k, i in r.inputs:
            need[i] = max(need[i], k)
            visit(i)

    if goal:
        visit(goal)
    tree_base = {i for r in recipes if r.output in tree for _, i in r.inputs if i not in by_output}
    return by_output, goal, tree, tree_base, need


def craft_inventory(instruction: str, history: Sequence) -> Counter:
    """Inventory implied by the visible observations so far."""
    by_output = _craft_plan_view(instruction)[0]
    inv: Counter = Counter()
    for s in history:
        obs = s.observation.strip()
        m = re.match(r"^Got (\d+) (.+)$", obs)
        if m:
            inv[m.group(2)] += int(m.group(1))
            continue
        m = re.match(r"^Crafted (\d+) (.+)$", obs)
        if m and m.group(2) in by_output:
            for k, i in by_output[m.group(2)].inputs:
                inv[i] -= k
            inv[m.group(2)] += int(m.group(1))
            continue
        if obs.startswith("Inventory:"):
            inv = Counter({i: int(n) for i, n in re.findall(r"\[([^\]]+)\] \((\d+)\)", obs)})
    return +inv


def _craft_cues(ctx: PolicyContext) -> Callable[[str], list[str]]:
    by_output, goal, tree, tree_base, need = _craft_plan_view(ctx.instruction)
    inv = craft_inventory(ctx.instruction, ctx.history)

    def cues(action: str) -> list[str]:
        a = " ".join(action.lower().split())
        if a == "inventory":
            return ["inventory"]
        if a.startswith("get "):
            item = a[4:]
            out = ["get_tree" if item in tree_base else "get_off"]
            if inv[item] < need[item]:
                out.append("get_short")
            if inv[item] > 0:
                out.append("get_held")
            return out
        r = craft_env.parse_craft(a)
        if r is None:
            return []
        if r.output == goal:
            return ["craft_goal"]
        out = ["craft_tree" if r.output in tree else "craft_off"]
        if inv[r.output] >= max(need[r.output], 1):
            out.append("craft_have")
        return out

    return cues


CUE_EXTRACTORS: dict[str, Callable[[PolicyContext], Callable[[str], list[str]]]] = {
    "maze": _maze_cues,
    "wordle": _wordle_cues,
    "craft": _craft_cues,
}


class ContextFeatures:
    """Per-context precomputation shared by every candidate action."""

    def __init__(self, ctx: PolicyContext):
        self.ctx = ctx
        self.obs_grams = _obs_ngrams(ctx.current_observation)
        # the n-gram block gets unit norm so its size does not depend on observation length
        self.gram_weight = 1.0 / np.sqrt(len(self.obs_grams)) if self.obs_grams else 0.0
        kw = tokens(ctx.current_observation)[:2]
        self.keywords = ["_".join(kw)] if kw else []
        self.last = " ".join(ctx.history[-1].action.lower().split()) if ctx.history else "<start>"
        extractor = CUE_EXTRACTORS.get(ctx.env_name)
        self.cues = extractor(ctx) if extractor else (lambda a: [])
        # CRC-32 state after each cross prefix; crc32(tok, state) == crc32(prefix + tok)
        crosses = [(f"l={self.last}|", 1.0)] + [(f"k={k}|", 1.0) for k in self.keywords]
        crosses += [(f"x={g}|", self.gram_weight) for g in self.obs_grams]
        self._cross_states = [(zlib.crc32(p.encode("utf-8")), w) for p, w in crosses]

    def names(self, action: str) -> dict[str, float]:
        out: Counter = Counter()
        atoks = tokens(action)
        out[f"a={action}"] += 1.0
        for t in atoks:
            out[f"at={t}"] += 1.0
            out[f"l={self.last}|{t}"] += 1.0
            for k in self.keywords:
                out[f"k={k}|{t}"] += 1.0
            for g in self.obs_grams:
                out[f"x={g}|{t}"] += self.gram_weight
        for c in self.cues(action):
            out[f"cue={c}"] += 1.0
        return dict(out)

    def vector(self, action: str) -> SparseVec:
        """Same vector as ``hash_names(self.names(action))``, without building the names."""
        mask = DIM - 1
        acc: dict[int, float] = {}
        j = feature_index(f"a={action}")
        acc[j] = 1.0
        for t in tokens(action):
            tb = t.encode("utf-8")
            j = feature_index(f"at={t}")
            acc[j] = acc.get(j, 0.0) + 1.0
            for state, w in self._cross_states:
                j = zlib.crc32(tb, state) & mask
                acc[j] = acc.get(j, 0.0) + w
        for c in self.cues(action):
            j = feature_index(f"cue={c}")
            acc[j] = acc.get(j, 0.0) + 1.0
        idx = np.array(sorted(acc), dtype=np.int64)
        return idx, np.array([acc[int(i)] for i in idx], dtype=np.float64)


def hash_names(names: dict[str, float]) -> SparseVec:
    acc: dict[int, float] = {}
    for name, v in names.items():
        j = feature_index(name)
        acc[j] = acc.get(j, 0.0) + v
    idx = np.fromiter(sorted(acc), dtype=np.int64, count=len(acc))
    val = np.array([acc[int(j)] for j in idx], dtype=np.float64)
    return idx, val


def featurize(context: PolicyContext, action: str) -> SparseVec:
    return ContextFeatures(context).vector(action)


def featurize_named(context: PolicyContext, action: str) -> dict[str, float]:
    return ContextFeatures(context).names(action)


def to_dense(vec: SparseVec, dim: int = DIM) -> np.ndarray:
    out = np.zeros(dim)
    np.add.at(out, vec[0], vec[1])
    return out
