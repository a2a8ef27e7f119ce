"""Behavioral cloning, the reward-weighted learning step and the evolution loop."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from ..controller import EnvClient, EvalReport, RolloutConfig, evaluate, explore
from ..core import DomainError, Instruction, TrajectoryDataset, binarize_reward, merge_datasets
from ..policy.loglinear import LogLinearPolicy
from .objective import CompiledDataset, Compiler

log = logging.getLogger(__name__)

MERGE_STRATEGIES = ("with_initial", "with_previous")
RESTART_MODES = ("base", "previous")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 4
    samples: int = 1
    merge: str = "with_initial"
    learning_rate: float = 0.5
    epochs: int = 3
    temperature: float = 0.7
    restart_from: str = "base"

    def __post_init__(self):
        if self.iterations < 1 or self.samples < 1 or self.epochs < 1:
            raise DomainError("iterations, samples and epochs must be >= 1")
        if not self.learning_rate > 0:
            raise DomainError("learning_rate must be > 0")
        if self.temperature < 0:
            raise DomainError("temperature must be >= 0")
        if self.merge not in MERGE_STRATEGIES:
            raise DomainError(f"unknown merge strategy {self.merge!r}")
        if self.restart_from not in RESTART_MODES:
            raise DomainError(f"unknown restart_from {self.restart_from!r}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def trajectory_weights(dataset: TrajectoryDataset) -> np.ndarray:
    return np.array([t.reward for t in dataset], dtype=np.float64)


def ascend(theta: np.ndarray, compiled: CompiledDataset, weights: np.ndarray, lr: float,
           epochs: int) -> tuple[np.ndarray, list[float]]:
    """Full-batch ascent on sum_tau w_tau sum_t ln pi, step lr * grad / sum(w).

    Returns the final parameters and the weighted negative log-likelihood
    measured before each epoch's update.
    """
    theta = np.array(theta, dtype=np.float64, copy=True)
    total = float(np.sum(weights))
    losses: list[float] = []
    if total <= 0 or compiled.n_steps == 0:
        return theta, [0.0] * epochs
    for _ in range(epochs):
        losses.append(-compiled.objective(theta, weights))
        theta += (lr / total) * compiled.gradient(theta, weights, theta.shape[0])
    return theta, losses


@dataclass
class TrainResult:
    policy: LogLinearPolicy
    losses: list[float]
    n_trajectories: int
    weight: float


def bc_train(policy: LogLinearPolicy, dataset: TrajectoryDataset, compiler: Compiler,
             config: TrainConfig = TrainConfig()) -> TrainResult:
    """Maximize the expert log-likelihood; every record has weight 1."""
    compiled = compiler.compile(dataset)
    w = np.ones(len(dataset))
    theta, losses = ascend(policy.weights, compiled, w, config.learning_rate, config.epochs)
    for e, loss in enumerate(losses, 1):
        log.info("bc epoch %d loss %.6f", e, loss)
    return TrainResult(policy.with_weights(theta), losses, len(dataset), float(w.sum()))


def learn_step(policy: LogLinearPolicy, merged: TrajectoryDataset, compiler: Compiler,
               config: TrainConfig = TrainConfig()) -> TrainResult:
    """Reward-weighted likelihood ascent starting from ``policy``; rewards must be binary."""
    for t in merged:
        if t.reward not in (0.0, 1.0):
            raise DomainError(f"record {t.instruction_id}: reward {t.reward} is not binarized")
    w = trajectory_weights(merged)
    keep = [i for i, x in enumerate(w) if x != 0]
    # zero-weight records contribute nothing; skipping them avoids replaying failures
    subset = TrajectoryDataset(tuple(merged.records[i] for i in keep), merged.label)
    compiled = compiler.compile(subset)
    theta, losses = ascend(policy.weights, compiled, w[keep], config.learning_rate, config.epochs)
    return TrainResult(policy.with_weights(theta), losses, len(merged), float(w.sum()))


def gradient(objective: str, compiled: CompiledDataset, theta: np.ndarray,
             rewards: np.ndarray | None = None) -> np.ndarray:
    return compiled.gradient(theta, _objective_weights(objective, compiled, rewards), theta.shape[0])


def objective_value(objective: str, compiled: CompiledDataset, theta: np.ndarray,
                    rewards: np.ndarray | None = None) -> float:
    return compiled.objective(theta, _objective_weights(objective, compiled, rewards))


def _objective_weights(objective: str, compiled: CompiledDataset, rewards) -> np.ndarray:
    if objective == "bc":
        return np.ones(compiled.n_trajectories)
    if objective == "evol":
        if rewards is None:
            raise DomainError("evol objective needs per-trajectory rewards")
        return np.asarray(rewards, dtype=np.float64)
    raise DomainError(f"unknown objective {objective!r}")


def grad_check(objective: str, compiled: CompiledDataset, theta: np.ndarray, h: float = 1e-5,
               rewards: np.ndarray | None = None, n_coords: int = 200,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between central differences and the analytic gradient.

    Coordinates are drawn from the features active in the dataset (where the
    gradient can be nonzero), topped up with random inactive ones.  The
    denominator never drops below ``1e-4 * max(1, |f|)``: central differences
    carry roundoff of order eps * |f| / h, so a near-zero gradient coordinate is
    judged in absolute terms at that resolution.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    theta = np.asarray(theta, dtype=np.float64)
    g = gradient(objective, compiled, theta, rewards)
    active = compiled.active_features()
    pick = rng.choice(active, size=min(n_coords, len(active)), replace=False) if len(active) else np.zeros(0, int)
    if len(pick) < n_coords:
        rest = np.setdiff1d(np.arange(theta.shape[0]), pick)
        pick = np.concatenate([pick, rng.choice(rest, size=n_coords - len(pick), replace=False)])
    floor = 1e-4 * max(1.0, abs(objective_value(objective, compiled, theta, rewards)))
    worst = 0.0
    for i in pick:
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        fd = (objective_value(objective, compiled, up, rewards)
              - objective_value(objective, compiled, down, rewards)) / (2 * h)
        scale = max(abs(fd), abs(g[i]), floor)
        worst = max(worst, abs(fd - g[i]) / scale)
    return worst


@dataclass
class IterationRecord:
    iteration: int
    explored: int
    successes: int
    merged: int
    failures: int
    explore_success: dict[str, float]
    success_counts: dict[str, int]
    eval: EvalReport
    losses: list[float]
    wall_time: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "dataset_sizes": {"explored": self.explored, "successes": self.successes, "merged": self.merged},
            "rollout_failures": self.failures,
            "success_counts": self.success_counts,
            "train_split_success": self.explore_success,
            "eval": self.eval.to_dict(),
            "losses": self.losses,
        }


@dataclass
class EvolResult:
    policy: LogLinearPolicy
    base_eval: EvalReport | None
    iterations: list[IterationRecord] = field(default_factory=list)
    snapshots: list[LogLinearPolicy] = field(default_factory=list)
    datasets: list[TrajectoryDataset] = field(default_factory=list)

    def manifest(self, config: TrainConfig, extra: dict[str, Any] | None = None) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": "evolve", "config": config.to_dict()}
        if extra:
            out.update(extra)
        out["base_eval"] = self.base_eval.to_dict() if self.base_eval else None
        out["iterations"] = [r.to_dict() for r in self.iterations]
        return out

    def timings(self) -> list[float]:
        return [r.wall_time for r in self.iterations]


IterationHook = Callable[[IterationRecord, LogLinearPolicy, TrajectoryDataset], None]


def _per_env_counts(dataset: TrajectoryDataset) -> tuple[dict[str, int], dict[str, float]]:
    counts, rates = {}, {}
    for env, ts in sorted(dataset.by_env().items()):
        s = sum(binarize_reward(t.reward) for t in ts)
        counts[env] = s
        rates[env] = s / len(ts)
    return counts, rates


def agent_evol(base: LogLinearPolicy, d_s: TrajectoryDataset, evolve_pool: Sequence[Instruction],
               eval_split: Sequence[Instruction], client: EnvClient, compiler: Compiler,
               config: TrainConfig = TrainConfig(), rollout: RolloutConfig = RolloutConfig(),
               evaluate_base: bool = True, hook: IterationHook | None = None) -> EvolResult:
    """Alternate exploration and reward-weighted learning for ``config.iterations`` rounds."""
    d_s = d_s.binarized()
    explore_cfg = RolloutConfig(config.temperature, config.samples, rollout.concurrency, rollout.seed,
                                rollout.max_rounds)
    base_eval = evaluate(base, eval_split, client, rollout) if evaluate_base and eval_split else None
    result = EvolResult(base, base_eval)
    current = base
    d_prev = TrajectoryDataset((), "D_0")
    for m in range(1, config.iterations + 1):
        t0 = time.perf_counter()
        collected = explore(current, evolve_pool, client, explore_cfg, iteration=m, label=f"D_{m}")
        d_m = collected.dataset
        merged = merge_datasets(config.merge, d_s, d_prev, d_m, label=f"merged_{m}")
        start = base if config.restart_from == "base" else current
        trained = learn_step(start, merged, compiler, config)
        current = trained.policy
        report = evaluate(current, eval_split, client, rollout) if eval_split else EvalReport({})
        counts, rates = _per_env_counts(d_m)
        rec = IterationRecord(m, len(d_m), sum(counts.values()), len(merged), collected.failures,
                              rates, counts, report, trained.losses)
        rec.wall_time = time.perf_counter() - t0
        log.info("iteration %d: explored %d, successes %d, merged %d, eval %.3f", m, rec.explored,
                 rec.successes, rec.merged, report.overall["success_rate"])
        result.iterations.append(rec)
        result.snapshots.append(current)
        result.datasets.append(d_m)
        if hook is not None:
            hook(rec, current, d_m)
        d_prev = d_m
    result.policy = current
    return result
