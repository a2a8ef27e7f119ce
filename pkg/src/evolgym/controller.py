"""Client-side orchestration: environment clients, rollouts, collection and evaluation."""

from __future__ import annotations

import logging
import threading
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Protocol, Sequence

import numpy as np
import requests

from .core import (EXPERT, EvolGymError, Instruction, InstructionSet, Step, Trajectory,
                   TrajectoryDataset, binarize_reward, sampled)
from .envs import REGISTRY, get_spec
from .policy.context import Policy, PolicyContext
from .policy.react import ReActParseError
from .policy.remote import TransportError
from .protocol import SessionManager, StepResult

log = logging.getLogger(__name__)


class EnvClientError(EvolGymError):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(f"{status} {code}: {message}")
        self.status = status
        self.code = code


class RolloutError(EvolGymError):
    """Transport failure mid-rollout; the partial trajectory is discarded."""


class ReplayMismatch(EvolGymError):
    pass


class EnvClient(Protocol):
    def create(self, env: str, instruction_id: str | None = None, seed: int | None = None) -> dict[str, Any]: ...
    def step(self, session_id: str, action: str) -> StepResult: ...
    def observation(self, session_id: str) -> str: ...
    def available_actions(self, session_id: str) -> list[str]: ...
    def reset(self, session_id: str) -> str: ...
    def close(self, session_id: str) -> None: ...


def _unwrap(status: int, payload: dict[str, Any]) -> dict[str, Any]:
    if status != 200:
        err = payload.get("error", {})
        raise EnvClientError(status, err.get("code", "error"), err.get("message", ""))
    return payload


class LocalEnvClient:
    """Talks to an in-process SessionManager through the same request dispatcher as HTTP."""

    def __init__(self, manager: SessionManager):
        self.manager = manager

    def create(self, env, instruction_id=None, seed=None):
        return _unwrap(*self.manager.dispatch("POST", "/createEnv", None,
                                              {"env": env, "instruction_id": instruction_id, "seed": seed}))

    def step(self, session_id, action):
        return StepResult.from_dict(_unwrap(*self.manager.dispatch(
            "POST", "/step", None, {"session_id": session_id, "action": action})))

    def observation(self, session_id):
        return _unwrap(*self.manager.dispatch("GET", "/observation", {"session_id": session_id}))["observation"]

    def available_actions(self, session_id):
        return _unwrap(*self.manager.dispatch("GET", "/available_actions", {"session_id": session_id}))["actions"]

    def reset(self, session_id):
        return _unwrap(*self.manager.dispatch("POST", "/reset", None, {"session_id": session_id}))["observation"]

    def close(self, session_id):
        self.manager.close(session_id)


class HttpEnvClient:
    """Routes each environment to its own service URL."""

    def __init__(self, targets: Mapping[str, str], timeout: float = 30.0):
        self.targets = {k: v.rstrip("/") for k, v in targets.items()}
        self.timeout = timeout
        self._local = threading.local()
        self._routes: dict[str, str] = {}
        self._lock = threading.Lock()

    def _http(self) -> requests.Session:
        s = getattr(self._local, "session", None)
        if s is None:
            s = self._local.session = requests.Session()
        return s

    def _call(self, method: str, base: str, path: str, **kw) -> dict[str, Any]:
        try:
            r = self._http().request(method, base + path, timeout=self.timeout, **kw)
            payload = r.json()
        except (requests.RequestException, ValueError) as exc:
            raise TransportError(f"{method} {base}{path}: {exc}") from exc
        return _unwrap(r.status_code, payload)

    def _base(self, session_id: str) -> str:
        try:
            return self._routes[session_id]
        except KeyError:
            raise EnvClientError(404, "not_found", f"unknown session {session_id!r}") from None

    def create(self, env, instruction_id=None, seed=None):
        base = self.targets.get(env)
        if base is None:
            raise EnvClientError(404, "not_found", f"no service configured for environment {env!r}")
        out = self._call("POST", base, "/createEnv", json={"env": env, "instruction_id": instruction_id, "seed": seed})
        with self._lock:
            self._routes[out["session_id"]] = base
        return out

    def step(self, session_id, action):
        return StepResult.from_dict(self._call("POST", self._base(session_id), "/step",
                                               json={"session_id": session_id, "action": action}))

    def observation(self, session_id):
        return self._call("GET", self._base(session_id), "/observation", params={"session_id": session_id})["observation"]

    def available_actions(self, session_id):
        return self._call("GET", self._base(session_id), "/available_actions",
                          params={"session_id": session_id})["actions"]

    def reset(self, session_id):
        return self._call("POST", self._base(session_id), "/reset", json={"session_id": session_id})["observation"]

    def close(self, session_id):
        with self._lock:
            self._routes.pop(session_id, None)


def local_client(difficulties: Mapping[str, int] | None = None, instructions: InstructionSet | None = None,
                 envs: Iterable[str] | None = None) -> LocalEnvClient:
    names = list(envs) if envs is not None else list(REGISTRY)
    return LocalEnvClient(SessionManager({n: get_spec(n) for n in names}, difficulties, instructions))


@dataclass(frozen=True)
class RolloutConfig:
    temperature: float = 0.7
    samples_per_instruction: int = 1
    concurrency: int = 1
    seed: int = 0
    max_rounds: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.samples_per_instruction < 1:
            raise ValueError("samples_per_instruction must be >= 1")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def greedy(self) -> "RolloutConfig":
        return RolloutConfig(0.0, 1, self.concurrency, self.seed, self.max_rounds)


def env_max_rounds(env: str, config: RolloutConfig | None = None) -> int | None:
    if config is not None and env in config.max_rounds:
        return config.max_rounds[env]
    try:
        return get_spec(env).descriptor.max_rounds
    except KeyError:
        return None


def rollout_rng(seed: int, iteration: int, instruction: Instruction, sample: int) -> np.random.Generator:
    """Per-rollout stream keyed by identity, never by scheduling order."""
    return np.random.default_rng([seed, iteration, zlib.crc32(instruction.env_name.encode()),
                                  zlib.crc32(instruction.instruction_id.encode()), sample])


def rollout(policy: Policy, instruction: Instruction, client: EnvClient, config: RolloutConfig,
            rng: np.random.Generator | None = None, provenance: str = EXPERT) -> Trajectory:
    rng = rng if rng is not None else rollout_rng(config.seed, 0, instruction, 0)
    env = instruction.env_name
    limit = env_max_rounds(env, config)
    try:
        created = client.create(env, seed=instruction.seed)
        sid = created["session_id"]
        first = created["observation"]
        actions = client.available_actions(sid)
    except (TransportError, EnvClientError) as exc:
        raise RolloutError(f"{instruction.instruction_id}: {exc}") from exc
    steps: list[Step] = []
    obs = first
    reward, done, reason = 0.0, False, "max_rounds"
    try:
        while limit is None or len(steps) < limit:
            ctx = PolicyContext(created["system_prompt"], first, tuple(steps), obs, tuple(actions),
                                env, instruction.seed)
            try:
                decision = policy.act(ctx, config.temperature, rng)
            except ReActParseError as exc:
                steps.append(Step("", getattr(exc, "raw", "") or "<unparseable>", ""))
                reward, done, reason = 0.0, True, "parse_error"
                break
            res = client.step(sid, decision.action)
            steps.append(Step(decision.thought, decision.action, res.observation))
            if res.done:
                reward, done = res.reward, True
                if binarize_reward(res.reward) == 1:
                    reason = "success"
                elif limit is not None and len(steps) >= limit:
                    reason = "max_rounds"
                else:
                    reason = "failure"
                break
            obs, actions = res.observation, res.available_actions
    except (TransportError, EnvClientError) as exc:
        raise RolloutError(f"{instruction.instruction_id}: {exc}") from exc
    finally:
        client.close(sid)
    if not done:
        reward, reason = 0.0, "max_rounds"
    return Trajectory(env, instruction.instruction_id, tuple(steps), float(reward), reason, provenance)


@dataclass
class CollectionResult:
    dataset: TrajectoryDataset
    failures: int = 0
    attempted: int = 0


def _run_tasks(policy: Policy, tasks: Sequence[tuple[Instruction, int]], client: EnvClient,
               config: RolloutConfig, iteration: int, provenance: str) -> tuple[list[Trajectory], int]:
    def run(task):
        ins, k = task
        try:
            return rollout(policy, ins, client, config, rollout_rng(config.seed, iteration, ins, k), provenance)
        except RolloutError as exc:
            log.warning("rollout failed: %s", exc)
            return None

    if config.concurrency == 1:
        results = [run(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
            results = list(pool.map(run, tasks))
    kept = [t for t in results if t is not None]
    return kept, len(results) - len(kept)


def _task_order(instructions: Iterable[Instruction], k: int) -> list[tuple[Instruction, int]]:
    ordered = sorted(instructions, key=lambda i: (i.env_name, i.instruction_id))
    return [(ins, j) for ins in ordered for j in range(k)]


def explore(policy: Policy, instructions: Sequence[Instruction], client: EnvClient, config: RolloutConfig,
            iteration: int = 1, label: str | None = None) -> CollectionResult:
    """K tempered samples per instruction, rewards binarized."""
    if not instructions:
        raise ValueError("exploration needs a non-empty instruction set")
    tasks = _task_order(instructions, config.samples_per_instruction)
    trajs, failures = _run_tasks(policy, tasks, client, config, iteration, sampled(iteration))
    trajs = [t.with_reward(binarize_reward(t.reward)) for t in trajs]
    return CollectionResult(TrajectoryDataset(tuple(trajs), label or f"D_m@iter{iteration}"), failures, len(tasks))


def collect_expert(policy: Policy, instructions: Sequence[Instruction], client: EnvClient,
                   config: RolloutConfig, threshold: float = 1.0, label: str = "D_s") -> CollectionResult:
    """Roll out a source policy and keep only trajectories whose reward reaches ``threshold``."""
    tasks = _task_order(instructions, config.samples_per_instruction)
    trajs, failures = _run_tasks(policy, tasks, client, config, 0, EXPERT)
    kept = [t.with_reward(binarize_reward(t.reward)) for t in trajs if t.reward >= threshold - 1e-12]
    kept = [t for t in kept if t.reward == 1]
    return CollectionResult(TrajectoryDataset(tuple(kept), label), failures, len(tasks))


@dataclass
class EnvScore:
    success_rate: float
    mean_reward: float
    mean_rounds: float
    n: int

    def to_dict(self) -> dict[str, Any]:
        return {"success_rate": self.success_rate, "mean_reward": self.mean_reward,
                "mean_rounds": self.mean_rounds, "n": self.n}


@dataclass
class EvalReport:
    per_env: dict[str, EnvScore]
    failures: int = 0

    @classmethod
    def from_trajectories(cls, trajs: Iterable[Trajectory], failures: int = 0) -> "EvalReport":
        groups: dict[str, list[Trajectory]] = {}
        for t in trajs:
            groups.setdefault(t.env_name, []).append(t)
        per_env = {}
        for env in sorted(groups):
            ts = groups[env]
            per_env[env] = EnvScore(
                success_rate=sum(binarize_reward(t.reward) for t in ts) / len(ts),
                mean_reward=sum(t.reward for t in ts) / len(ts),
                mean_rounds=sum(len(t) for t in ts) / len(ts),
                n=len(ts))
        return cls(per_env, failures)

    @property
    def overall(self) -> dict[str, float]:
        if not self.per_env:
            return {"success_rate": 0.0, "macro_success_rate": 0.0, "mean_rounds": 0.0, "n": 0}
        n = sum(s.n for s in self.per_env.values())
        return {
            "success_rate": sum(s.success_rate * s.n for s in self.per_env.values()) / n,
            "macro_success_rate": sum(s.success_rate for s in self.per_env.values()) / len(self.per_env),
            "mean_rounds": sum(s.mean_rounds * s.n for s in self.per_env.values()) / n,
            "n": n,
        }

    def success(self, env: str) -> float:
        return self.per_env[env].success_rate

    def to_dict(self) -> dict[str, Any]:
        return {"per_env": {k: v.to_dict() for k, v in self.per_env.items()},
                "overall": self.overall, "failures": self.failures}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvalReport":
        return cls({k: EnvScore(**v) for k, v in d["per_env"].items()}, d.get("failures", 0))


def evaluate(policy: Policy, instructions: Sequence[Instruction], client: EnvClient,
             config: RolloutConfig) -> EvalReport:
    """One greedy rollout per held-out instruction."""
    greedy = config.greedy()
    trajs, failures = _run_tasks(policy, _task_order(instructions, 1), client, greedy, 0, EXPERT)
    return EvalReport.from_trajectories(trajs, failures)


def score_table(rows: Mapping[str, EvalReport], envs: Sequence[str] | None = None,
                metric: str = "success_rate") -> str:
    """Plain-text table: one row per method, one column per environment, scores in percent."""
    envs = list(envs) if envs is not None else sorted({e for r in rows.values() for e in r.per_env})
    width = max([len("Method")] + [len(k) for k in rows])
    lines = ["  ".join(["Method".ljust(width)] + [e.rjust(8) for e in envs])]
    for name, rep in rows.items():
        cells = []
        for e in envs:
            s = rep.per_env.get(e)
            cells.append(("-" if s is None else f"{100 * getattr(s, metric):.2f}").rjust(8))
        lines.append("  ".join([name.ljust(width)] + cells))
    return "\n".join(lines)


def collection_summary(result: CollectionResult, instructions: Sequence[Instruction]) -> str:
    """Per-environment instruction count, kept trajectories and mean rounds of kept ones."""
    counts: dict[str, int] = {}
    for ins in instructions:
        counts[ins.env_name] = counts.get(ins.env_name, 0) + 1
    by_env = result.dataset.by_env()
    lines = [f"{'Env':<8} {'Instr':>6} {'Traj':>6} {'Rounds':>7}"]
    for env in sorted(counts):
        ts = by_env.get(env, [])
        rounds = f"{sum(len(t) for t in ts) / len(ts):.1f}" if ts else "-"
        lines.append(f"{env:<8} {counts[env]:>6} {len(ts):>6} {rounds:>7}")
    if result.failures:
        lines.append(f"transport failures: {result.failures}")
    return "\n".join(lines)


@dataclass(frozen=True)
class ReplayedStep:
    context: PolicyContext
    action: str


def replay(client: EnvClient, instruction: Instruction, trajectory: Trajectory,
           check: bool = True) -> list[ReplayedStep]:
    """Re-execute a stored action sequence in a fresh session.

    Returns the policy context seen before each step.  With ``check`` the
    observations and final reward must match the stored trajectory exactly.
    """
    created = client.create(instruction.env_name, seed=instruction.seed)
    sid = created["session_id"]
    first = created["observation"]
    obs, actions = first, client.available_actions(sid)
    out: list[ReplayedStep] = []
    steps = list(trajectory.steps)
    if trajectory.done_reason == "parse_error":
        steps = steps[:-1]
    try:
        res = None
        for t, s in enumerate(steps):
            ctx = PolicyContext(created["system_prompt"], first, tuple(trajectory.steps[:t]), obs,
                                tuple(actions), instruction.env_name, instruction.seed)
            out.append(ReplayedStep(ctx, s.action))
            res = client.step(sid, s.action)
            if check and res.observation != s.observation:
                raise ReplayMismatch(f"{trajectory.instruction_id} step {t}: observation differs "
                                     f"({res.observation!r} != {s.observation!r})")
            obs, actions = res.observation, res.available_actions
        if check and trajectory.done_reason != "parse_error":
            final = res.reward if res is not None else 0.0
            if final != trajectory.reward:
                raise ReplayMismatch(f"{trajectory.instruction_id}: reward {final} != stored {trajectory.reward}")
    finally:
        client.close(sid)
    return out
