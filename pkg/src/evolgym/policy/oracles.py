"""Scripted solvers that stand in for expert annotators."""

from __future__ import annotations

import numpy as np

from ..envs import craft as craft_env
from ..envs import maze as maze_env
from ..envs import wordle as wordle_env
from .context import Decision, PolicyContext, candidate_actions
from .features import craft_inventory, _FEEDBACK_RE


class MazeOraclePolicy:
    """BFS over the regenerated layout; needs the instance seed and maze size."""

    def __init__(self, size: int = maze_env.MazeSpec.default_difficulty):
        self.solver = maze_env.MazeOracle(size)

    def act(self, context: PolicyContext, temperature: float = 0.0, rng=None) -> Decision:
        obs = [context.instruction] + [s.observation for s in context.history]
        move = self.solver.next_move(context.seed, obs)
        return Decision("The shortest path to the goal continues this way.", move)


class WordleOraclePolicy:
    def __init__(self):
        self._opening: dict[tuple[str, ...], str] = {}

    def act(self, context: PolicyContext, temperature: float = 0.0, rng=None) -> Decision:
        vocab = candidate_actions(context)
        history = [(wordle_env.normalize_guess(s.action), s.observation.strip())
                   for s in context.history if _FEEDBACK_RE.match(s.observation.strip())]
        if not history:
            key = tuple(vocab)
            if key not in self._opening:
                self._opening[key] = wordle_env.entropy_greedy_guess(vocab, [])
            guess = self._opening[key]
        else:
            guess = wordle_env.entropy_greedy_guess(vocab, history)
        n = len(wordle_env.consistent(vocab, history))
        return Decision(f"{n} words remain consistent with the feedback; {guess} splits them best.", guess)


class CraftOraclePolicy:
    def act(self, context: PolicyContext, temperature: float = 0.0, rng=None) -> Decision:
        inv = craft_inventory(context.instruction, context.history)
        action = craft_env.CraftPlanner().next_action(context.instruction, inv)
        return Decision("Following the crafting plan for the goal.", action)


class OraclePolicy:
    """Dispatches to the per-environment solver."""

    def __init__(self, maze_size: int = maze_env.MazeSpec.default_difficulty):
        self.solvers = {"maze": MazeOraclePolicy(maze_size), "wordle": WordleOraclePolicy(),
                        "craft": CraftOraclePolicy()}

    def act(self, context: PolicyContext, temperature: float = 0.0, rng=None) -> Decision:
        return self.solvers[context.env_name].act(context, temperature, rng)


class ScriptedPolicy:
    """Replays a fixed action list, repeating the last action when it runs out."""

    def __init__(self, actions: list[str], thought: str = ""):
        self.actions = list(actions)
        self.thought = thought

    def act(self, context: PolicyContext, temperature: float = 0.0, rng=None) -> Decision:
        t = min(len(context.history), len(self.actions) - 1)
        return Decision(self.thought, self.actions[t])


class RandomPolicy:
    """Uniform over the closed action set."""

    def act(self, context: PolicyContext, temperature: float, rng: np.random.Generator) -> Decision:
        acts = sorted(candidate_actions(context))
        a = acts[int(rng.integers(len(acts)))]
        return Decision("Trying something.", a, -float(np.log(len(acts))))
