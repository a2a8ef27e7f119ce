"""One-round, two-arm environment used to check the evolution loop in closed form."""

from __future__ import annotations

from ..protocol import EnvDescriptor, EnvSpec, Transition, World

ARMS = ("pull left", "pull right")
REWARDED = "pull right"
MAX_ROUNDS = 1


class BanditWorld(World):
    def __init__(self):
        self.pulled: str | None = None

    def first_observation(self) -> str:
        return "Two levers are in front of you. Pull one."

    def step(self, action: str) -> Transition:
        a = action.strip().lower()
        if a not in ARMS:
            return Transition("Invalid action.", 0.0, "failure")
        self.pulled = a
        if a == REWARDED:
            return Transition("A prize drops out.", 1.0, "success")
        return Transition("Nothing happens.", 0.0, "failure")

    def available_actions(self) -> list[str]:
        return list(ARMS) if self.pulled is None else []

    def fingerprint(self) -> str:
        return f"pulled={self.pulled}"


class BanditSpec(EnvSpec):
    descriptor = EnvDescriptor("bandit", MAX_ROUNDS, "binary", "Pick a lever.")
    default_difficulty = 2

    def check_difficulty(self, difficulty: int) -> None:
        if difficulty != 2:
            raise ValueError("the bandit has exactly 2 arms")

    def build(self, seed: int, difficulty: int) -> tuple[str, World]:
        world = BanditWorld()
        return world.first_observation(), world
