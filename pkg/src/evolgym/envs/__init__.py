"""Built-in environments: maze, wordle and craft."""

from __future__ import annotations

import zlib

import numpy as np

from ..core import Instruction, InstructionSet
from ..protocol import EnvSpec, World
from .bandit import BanditSpec
from .craft import CraftSpec, CraftWorld
from .maze import MazeSpec, MazeWorld
from .wordle import WordleSpec, WordleWorld, wordle_feedback

REGISTRY: dict[str, EnvSpec] = {
    "maze": MazeSpec(),
    "wordle": WordleSpec(),
    "craft": CraftSpec(),
}
# Auxiliary specs reachable by name but not part of the default gym.
EXTRA: dict[str, EnvSpec] = {"bandit": BanditSpec()}


class GenerationError(ValueError):
    pass


def get_spec(env_name: str) -> EnvSpec:
    try:
        return REGISTRY[env_name] if env_name in REGISTRY else EXTRA[env_name]
    except KeyError:
        raise KeyError(f"unknown environment {env_name!r}") from None


def make_instruction_id(env_name: str, seed: int) -> str:
    return f"{env_name}-{seed:06d}"


def generate_instance(env_name: str, seed: int, difficulty: int | None = None,
                      split: str = "evolve") -> tuple[Instruction, World]:
    """Deterministic (instruction, hidden world) for ``seed`` at ``difficulty``."""
    spec = get_spec(env_name)
    difficulty = spec.default_difficulty if difficulty is None else difficulty
    try:
        spec.check_difficulty(difficulty)
        text, world = spec.build(seed, difficulty)
    except ValueError as exc:
        raise GenerationError(str(exc)) from None
    return Instruction(env_name, make_instruction_id(env_name, seed), text, seed, split), world


def generate_instruction_set(env_name: str, total: int, n_eval: int, n_bc: int, seed: int = 0,
                             difficulty: int | None = None) -> InstructionSet:
    """``total`` instances with distinct instance seeds: ``n_eval`` eval, ``n_bc`` bc, the rest evolve.

    Instance seeds come from a stream keyed by (seed, env), so the output is a
    pure function of the arguments.  Splits are assigned in stream order.
    """
    if total < 1 or n_eval < 0 or n_bc < 0 or n_eval + n_bc > total:
        raise GenerationError(f"unsatisfiable counts: total={total}, eval={n_eval}, bc={n_bc}")
    rng = np.random.default_rng([seed, zlib.crc32(env_name.encode())])
    seen: set[int] = set()
    out: list[Instruction] = []
    attempts = 0
    while len(out) < total:
        attempts += 1
        if attempts > 20 * total + 100:
            raise GenerationError(f"could not generate {total} {env_name} instances")
        s = int(rng.integers(1_000_000))
        if s in seen:
            continue
        seen.add(s)
        i = len(out)
        split = "eval" if i < n_eval else "bc" if i < n_eval + n_bc else "evolve"
        try:
            ins, _ = generate_instance(env_name, s, difficulty, split)
        except GenerationError:
            continue
        out.append(ins)
    return InstructionSet(sorted(out, key=lambda x: x.instruction_id))


__all__ = ["generate_instruction_set", "EXTRA", "REGISTRY", "GenerationError", "generate_instance", "get_spec", "make_instruction_id",
           "MazeWorld", "WordleWorld", "CraftWorld", "wordle_feedback"]
