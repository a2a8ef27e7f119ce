"""Domain types shared by every part of the package.

Trajectories, instructions and datasets are immutable dataclasses.  On disk
they are UTF-8 JSONL, one record per line.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

REWARD_TOL = 1e-12

SPLITS = ("bc", "evolve", "eval")
DONE_REASONS = ("success", "failure", "max_rounds", "parse_error")
EXPERT = "expert"


class EvolGymError(Exception):
    """Base class for package errors."""


class DomainError(EvolGymError, ValueError):
    """An argument lies outside the domain of an operation."""


class ParseError(EvolGymError, ValueError):
    """A serialized record could not be decoded."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class FramingError(ParseError):
    """The line is not one complete JSON object."""


class MissingFieldError(ParseError):
    pass


class FieldTypeError(ParseError):
    pass


class RangeError(ParseError):
    pass


def sampled(iteration: int) -> str:
    """Provenance tag for a trajectory sampled at evolution iteration ``iteration``."""
    return f"sampled:{int(iteration)}"


def _valid_provenance(p: str) -> bool:
    if p == EXPERT:
        return True
    head, _, tail = p.partition(":")
    return head == "sampled" and tail.isdigit()


@dataclass(frozen=True)
class Instruction:
    env_name: str
    instruction_id: str
    text: str
    seed: int
    split: str = "evolve"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DomainError(f"unknown split {self.split!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"env": self.env_name, "id": self.instruction_id, "text": self.text,
                "seed": self.seed, "split": self.split}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Instruction":
        for key in ("env", "id", "text", "seed", "split"):
            if key not in d:
                raise MissingFieldError(f"instruction record missing field {key!r}", key)
        return cls(env_name=d["env"], instruction_id=d["id"], text=d["text"],
                   seed=int(d["seed"]), split=d["split"])


@dataclass(frozen=True)
class Step:
    thought: str
    action: str
    observation: str = ""

    def to_dict(self) -> dict[str, str]:
        return {"thought": self.thought, "action": self.action, "observation": self.observation}


@dataclass(frozen=True)
class Trajectory:
    env_name: str
    instruction_id: str
    steps: tuple[Step, ...]
    reward: float
    done_reason: str
    provenance: str = EXPERT

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise DomainError("trajectory must contain at least one step")
        if not (0.0 <= self.reward <= 1.0) or math.isnan(self.reward):
            raise DomainError(f"reward {self.reward!r} outside [0, 1]")
        if self.done_reason not in DONE_REASONS:
            raise DomainError(f"unknown done_reason {self.done_reason!r}")
        if not _valid_provenance(self.provenance):
            raise DomainError(f"bad provenance {self.provenance!r}")

    @property
    def key(self) -> tuple[str, str]:
        return (self.env_name, self.instruction_id)

    def __len__(self) -> int:
        return len(self.steps)

    def history(self, t: int) -> tuple[Step, ...]:
        """Interaction history preceding step ``t`` (0-based)."""
        return self.steps[:t]

    def actions(self) -> list[str]:
        return [s.action for s in self.steps]

    def with_reward(self, reward: float) -> "Trajectory":
        return Trajectory(self.env_name, self.instruction_id, self.steps, reward,
                          self.done_reason, self.provenance)


def _json_number(x: float) -> int | float:
    x = float(x)
    return int(x) if x.is_integer() else x


def serialize_trajectory(t: Trajectory) -> str:
    """One compact JSON object, newline-free."""
    obj = {
        "env": t.env_name,
        "id": t.instruction_id,
        "steps": [s.to_dict() for s in t.steps],
        "reward": _json_number(t.reward),
        "done_reason": t.done_reason,
        "provenance": t.provenance,
    }
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def _require(obj: dict, key: str, kind: type | tuple[type, ...]):
    if key not in obj:
        raise MissingFieldError(f"missing field {key!r}", key)
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, kind):
        raise FieldTypeError(f"field {key!r} has wrong type {type(value).__name__}", key)
    return value


def parse_trajectory(line: str) -> Trajectory:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FramingError(f"malformed trajectory record: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise FramingError("trajectory record is not a JSON object")
    env = _require(obj, "env", str)
    iid = _require(obj, "id", str)
    raw_steps = _require(obj, "steps", list)
    reward = float(_require(obj, "reward", (int, float)))
    if not (0.0 <= reward <= 1.0):
        raise RangeError(f"field 'reward' out of range [0, 1]: {reward}", "reward")
    done_reason = _require(obj, "done_reason", str)
    if done_reason not in DONE_REASONS:
        raise RangeError(f"field 'done_reason' has unknown value {done_reason!r}", "done_reason")
    provenance = _require(obj, "provenance", str)
    if not _valid_provenance(provenance):
        raise RangeError(f"field 'provenance' has unknown value {provenance!r}", "provenance")
    if not raw_steps:
        raise RangeError("field 'steps' must be non-empty", "steps")
    steps = []
    for i, s in enumerate(raw_steps):
        if not isinstance(s, dict):
            raise FieldTypeError(f"steps[{i}] is not an object", "steps")
        steps.append(Step(_require(s, "thought", str), _require(s, "action", str),
                          _require(s, "observation", str)))
    return Trajectory(env, iid, tuple(steps), reward, done_reason, provenance)


def binarize_reward(r: float) -> int:
    """1 for a fully successful trajectory, else 0."""
    if math.isnan(r) or r < -REWARD_TOL or r > 1.0 + REWARD_TOL:
        raise DomainError(f"reward {r!r} outside [0, 1]")
    return 1 if abs(r - 1.0) <= REWARD_TOL else 0


@dataclass(frozen=True)
class TrajectoryDataset:
    records: tuple[Trajectory, ...] = ()
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.records)

    def successes(self) -> "TrajectoryDataset":
        return TrajectoryDataset(tuple(t for t in self.records if binarize_reward(t.reward) == 1),
                                 self.label)

    def binarized(self) -> "TrajectoryDataset":
        return TrajectoryDataset(tuple(t.with_reward(binarize_reward(t.reward)) for t in self.records),
                                 self.label)

    def relabel(self, label: str) -> "TrajectoryDataset":
        return TrajectoryDataset(self.records, label)

    def by_env(self) -> dict[str, list[Trajectory]]:
        out: dict[str, list[Trajectory]] = {}
        for t in self.records:
            out.setdefault(t.env_name, []).append(t)
        return out

    def dumps(self) -> str:
        return "".join(serialize_trajectory(t) + "\n" for t in self.records)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, label: str | None = None) -> "TrajectoryDataset":
        path = Path(path)
        records = []
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    records.append(parse_trajectory(line))
                except ParseError as exc:
                    raise type(exc)(f"{path}:{lineno}: {exc}", exc.field) from None
        return cls(tuple(records), label if label is not None else path.stem)

    def validate_against(self, instructions: "InstructionSet") -> None:
        for t in self.records:
            if t.key not in instructions.index:
                raise DomainError(f"trajectory for unknown instruction {t.instruction_id!r} ({t.env_name})")


def _merge_key(t: Trajectory) -> tuple[str, str, str]:
    return (t.env_name, t.instruction_id, t.provenance)


def merge_datasets(strategy: str, d_s: TrajectoryDataset, d_prev: TrajectoryDataset,
                   d_new: TrajectoryDataset, label: str | None = None) -> TrajectoryDataset:
    """Union of the fresh exploration data with either the initial or the previous set.

    No deduplication; ordering is a stable sort of the concatenation.
    """
    if strategy == "with_initial":
        other = d_s
    elif strategy == "with_previous":
        other = d_prev
    else:
        raise DomainError(f"unknown merge strategy {strategy!r}")
    merged = sorted(list(d_new.records) + list(other.records), key=_merge_key)
    return TrajectoryDataset(tuple(merged), label if label is not None else d_new.label)


@dataclass
class InstructionSet:
    instructions: list[Instruction] = field(default_factory=list)

    def __post_init__(self):
        self.index: dict[tuple[str, str], Instruction] = {}
        for ins in self.instructions:
            key = (ins.env_name, ins.instruction_id)
            if key in self.index:
                raise DomainError(f"duplicate instruction id {ins.instruction_id!r} in {ins.env_name}")
            self.index[key] = ins

    def __len__(self) -> int:
        return len(self.instructions)

    def __iter__(self) -> Iterator[Instruction]:
        return iter(self.instructions)

    def get(self, env_name: str, instruction_id: str) -> Instruction:
        try:
            return self.index[(env_name, instruction_id)]
        except KeyError:
            raise KeyError(f"unknown instruction {instruction_id!r} for env {env_name!r}") from None

    def split(self, *splits: str, env: str | None = None) -> list[Instruction]:
        return [i for i in self.instructions
                if i.split in splits and (env is None or i.env_name == env)]

    def bc(self, env: str | None = None) -> list[Instruction]:
        return self.split("bc", env=env)

    def evolve_pool(self, env: str | None = None) -> list[Instruction]:
        """Q_e: the evolution pool, which includes the instructions used for BC."""
        return self.split("bc", "evolve", env=env)

    def eval(self, env: str | None = None) -> list[Instruction]:
        return self.split("eval", env=env)

    def counts(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for ins in self.instructions:
            c = out.setdefault(ins.env_name, {s: 0 for s in SPLITS})
            c[ins.split] += 1
        return out

    def envs(self) -> list[str]:
        return sorted({i.env_name for i in self.instructions})

    def extend(self, other: Iterable[Instruction]) -> "InstructionSet":
        return InstructionSet(list(self.instructions) + list(other))

    def dumps(self) -> str:
        return "".join(json.dumps(i.to_dict(), ensure_ascii=False, separators=(",", ":")) + "\n"
                       for i in self.instructions)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, *paths: str | Path) -> "InstructionSet":
        items: list[Instruction] = []
        for path in paths:
            with Path(path).open(encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        items.append(Instruction.from_dict(json.loads(line)))
                    except json.JSONDecodeError as exc:
                        raise FramingError(f"{path}:{lineno}: {exc.msg}") from None
        return cls(items)


class DatasetWriter:
    """Serializes appends from concurrent collectors into one JSONL file."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._fh = self.path.open("w", encoding="utf-8")

    def append(self, t: Trajectory) -> None:
        line = serialize_trajectory(t) + "\n"
        with self._lock:
            self._fh.write(line)

    def close(self) -> None:
        with self._lock:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def check_instructions_disjoint(instructions: Sequence[Instruction]) -> None:
    """Eval instructions must not share a seed with training instructions of the same env."""
    train = {(i.env_name, i.seed) for i in instructions if i.split != "eval"}
    clash = [i.instruction_id for i in instructions if i.split == "eval" and (i.env_name, i.seed) in train]
    if clash:
        raise DomainError(f"eval instructions overlap training instances: {clash[:5]}")
