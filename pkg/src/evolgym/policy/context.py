from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from ..core import Step
from ..envs.wordle import vocabulary_from_text
from .react import ReActOutput


@dataclass(frozen=True)
class PolicyContext:
    system_prompt: str
    instruction: str
    history: tuple[Step, ...]
    current_observation: str
    available_actions: tuple[str, ...] = ()
    env_name: str = ""
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "history", tuple(self.history))
        object.__setattr__(self, "available_actions", tuple(self.available_actions))


@dataclass(frozen=True)
class Decision:
    thought: str
    action: str
    log_prob: float = float("nan")

    @property
    def react(self) -> ReActOutput:
        return ReActOutput(self.thought, self.action)


class Policy(Protocol):
    def act(self, context: PolicyContext, temperature: float, rng: np.random.Generator) -> Decision: ...


def candidate_actions(context: PolicyContext) -> list[str]:
    """Closed action set: the server's list, or the instruction's vocabulary when that is empty."""
    if context.available_actions:
        return list(context.available_actions)
    return sorted(vocabulary_from_text(context.instruction))
