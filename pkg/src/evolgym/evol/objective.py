"""Weighted trajectory log-likelihood for the log-linear policy, vectorized.

A :class:`CompiledDataset` flattens every (step, candidate action, feature)
triple into parallel arrays so the objective and its gradient are a few
``bincount``/``reduceat`` calls.  Summation order is fixed by the record
order, so results are bit-stable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..core import DomainError, Instruction, InstructionSet, Trajectory, TrajectoryDataset
from ..controller import EnvClient, ReplayMismatch, replay
from ..policy.context import PolicyContext, candidate_actions
from ..policy.features import DIM, ContextFeatures


class DatasetError(DomainError):
    pass


@dataclass(frozen=True)
class StepBlock:
    """Features of every candidate action at one step, plus the chosen one."""

    idx: np.ndarray        # feature indices, concatenated over candidates
    val: np.ndarray
    owner: np.ndarray      # candidate position of each entry
    n_actions: int
    chosen: int


def compile_step(context: PolicyContext, action: str) -> StepBlock:
    actions = sorted(candidate_actions(context))
    if action not in actions:
        raise DatasetError(f"action {action!r} not in the available set")
    cf = ContextFeatures(context)
    vecs = [cf.vector(a) for a in actions]
    idx = np.concatenate([v[0] for v in vecs])
    val = np.concatenate([v[1] for v in vecs])
    owner = np.repeat(np.arange(len(actions)), [len(v[0]) for v in vecs])
    return StepBlock(idx, val, owner, len(actions), actions.index(action))


@dataclass
class CompiledDataset:
    idx: np.ndarray
    val: np.ndarray
    entry_action: np.ndarray   # global candidate id per entry
    action_step: np.ndarray    # step id per candidate
    step_offsets: np.ndarray   # first candidate id of each step
    chosen: np.ndarray         # global candidate id of the taken action per step
    step_traj: np.ndarray      # trajectory id per step
    n_trajectories: int

    @property
    def n_steps(self) -> int:
        return len(self.chosen)

    @property
    def n_actions(self) -> int:
        return len(self.action_step)

    @classmethod
    def from_blocks(cls, blocks_per_traj: Sequence[Sequence[StepBlock]]) -> "CompiledDataset":
        idx, val, entry_action, action_step, offsets, chosen, step_traj = [], [], [], [], [], [], []
        a0 = s0 = 0
        for ti, blocks in enumerate(blocks_per_traj):
            for b in blocks:
                idx.append(b.idx)
                val.append(b.val)
                entry_action.append(b.owner + a0)
                action_step.append(np.full(b.n_actions, s0))
                offsets.append(a0)
                chosen.append(a0 + b.chosen)
                step_traj.append(ti)
                a0 += b.n_actions
                s0 += 1
        cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt)
        return cls(cat(idx, np.int64), cat(val, np.float64), cat(entry_action, np.int64),
                   cat(action_step, np.int64), np.asarray(offsets, np.int64), np.asarray(chosen, np.int64),
                   np.asarray(step_traj, np.int64), len(blocks_per_traj))

    def log_probs(self, theta: np.ndarray) -> np.ndarray:
        """ln pi(candidate | step context) for every candidate."""
        scores = np.bincount(self.entry_action, weights=theta[self.idx] * self.val, minlength=self.n_actions)
        top = np.maximum.reduceat(scores, self.step_offsets)
        z = scores - top[self.action_step]
        lse = np.log(np.add.reduceat(np.exp(z), self.step_offsets))
        return z - lse[self.action_step]

    def objective(self, theta: np.ndarray, weights: np.ndarray) -> float:
        """sum_tau w_tau sum_t ln pi(a_t | c_t)."""
        if self.n_steps == 0:
            return 0.0
        lp = self.log_probs(theta)[self.chosen]
        return float(np.sum(weights[self.step_traj] * lp))

    def gradient(self, theta: np.ndarray, weights: np.ndarray, dim: int = DIM) -> np.ndarray:
        """sum_tau w_tau sum_t (phi(a_t) - E_pi phi)."""
        if self.n_steps == 0:
            return np.zeros(dim)
        p = np.exp(self.log_probs(theta))
        w_step = weights[self.step_traj]
        coef = -p * w_step[self.action_step]
        coef[self.chosen] += w_step
        return np.bincount(self.idx, weights=self.val * coef[self.entry_action], minlength=dim)

    def step_log_probs(self, theta: np.ndarray) -> np.ndarray:
        return self.log_probs(theta)[self.chosen] if self.n_steps else np.zeros(0)

    def active_features(self) -> np.ndarray:
        return np.unique(self.idx)


ContextSource = Callable[[Trajectory], list[tuple[PolicyContext, str]]]


class Compiler:
    """Turns trajectories into step blocks via replay, caching by action/observation sequence."""

    def __init__(self, client: EnvClient, instructions: InstructionSet, check: bool = True):
        self.client = client
        self.instructions = instructions
        self.check = check
        self._cache: dict[tuple, list[StepBlock]] = {}

    def _key(self, t: Trajectory) -> tuple:
        return (t.env_name, t.instruction_id, t.done_reason == "parse_error",
                tuple((s.action, s.observation) for s in t.steps))

    def blocks(self, t: Trajectory) -> list[StepBlock]:
        key = self._key(t)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        try:
            ins: Instruction = self.instructions.get(t.env_name, t.instruction_id)
        except KeyError as exc:
            raise DatasetError(str(exc)) from None
        try:
            steps = replay(self.client, ins, t, check=self.check)
        except ReplayMismatch as exc:
            raise DatasetError(f"record {t.instruction_id}: {exc}") from None
        out = []
        for i, rs in enumerate(steps):
            try:
                out.append(compile_step(rs.context, rs.action))
            except DatasetError as exc:
                raise DatasetError(f"record {t.instruction_id} step {i}: {exc}") from None
        self._cache[key] = out
        return out

    def compile(self, dataset: TrajectoryDataset | Sequence[Trajectory]) -> CompiledDataset:
        return CompiledDataset.from_blocks([self.blocks(t) for t in dataset])
