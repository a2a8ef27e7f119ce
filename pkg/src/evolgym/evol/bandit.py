"""The evolution loop on the two-arm bandit, computed in exact expectation.

With one round and two arms the exploration dataset has only two possible
trajectories, so the expected merged dataset is a two-record weighted set:
the rewarded arm with weight ``n_expert + N * pi_T(rewarded)`` and the other
arm with weight 0.  The learning step then runs on that set exactly as it
would on sampled data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..envs.bandit import ARMS, REWARDED, BanditSpec
from ..policy.context import PolicyContext
from ..policy.loglinear import LogLinearPolicy
from .objective import CompiledDataset, compile_step
from .train import TrainConfig, ascend


@dataclass(frozen=True)
class BanditIteration:
    iteration: int
    explore_success: float   # pi_T(rewarded) of the policy that explored
    greedy_success: float    # 1 if the argmax is the rewarded arm
    success_prob: float      # pi_1(rewarded) of the trained policy


def bandit_context() -> PolicyContext:
    spec = BanditSpec()
    text, world = spec.build(0, spec.default_difficulty)
    return PolicyContext(spec.descriptor.system_prompt, text, (), world.first_observation(),
                         tuple(ARMS), "bandit", 0)


def _greedy_success(policy: LogLinearPolicy, ctx: PolicyContext) -> float:
    actions, vecs = policy.featurize_all(ctx)
    return 1.0 if actions[int(np.argmax(policy.scores(vecs)))] == REWARDED else 0.0


def _prob(policy: LogLinearPolicy, ctx: PolicyContext, temperature: float) -> float:
    actions, probs = policy.distribution(ctx, temperature)
    return float(probs[actions.index(REWARDED)])


def exact_bandit_evolution(config: TrainConfig = TrainConfig(), n_instructions: int = 100,
                           n_expert: int = 0, base: LogLinearPolicy | None = None) -> list[BanditIteration]:
    ctx = bandit_context()
    base = base if base is not None else LogLinearPolicy()
    blocks = [[compile_step(ctx, REWARDED)], [compile_step(ctx, [a for a in ARMS if a != REWARDED][0])]]
    compiled = CompiledDataset.from_blocks(blocks)
    current = base
    out = []
    for m in range(1, config.iterations + 1):
        p = _prob(current, ctx, config.temperature) if config.temperature > 0 else _greedy_success(current, ctx)
        # expected weights: successes keep reward 1, failures carry reward 0
        weights = np.array([n_expert + n_instructions * config.samples * p, 0.0])
        start = base if config.restart_from == "base" else current
        theta, _ = ascend(start.weights, compiled, weights, config.learning_rate, config.epochs)
        current = start.with_weights(theta)
        out.append(BanditIteration(m, p, _greedy_success(current, ctx), _prob(current, ctx, 1.0)))
    return out
