import math

import numpy as np
import pytest

from evolgym.controller import RolloutConfig, collect_expert, explore, local_client
from evolgym.core import DomainError, Instruction, InstructionSet, Step, Trajectory, TrajectoryDataset
from evolgym.envs import generate_instance, generate_instruction_set
from evolgym.envs.bandit import REWARDED
from evolgym.evol import (Compiler, DatasetError, EnumeratedSpace, SupportError, TrainConfig,
                          ZeroEvidenceError, agent_evol, bc_train, compile_step, elbo, exact_bandit_evolution,
                          grad_check, gradient, learn_step, log_evidence, objective_value, optimal_q)
from evolgym.evol.bandit import bandit_context
from evolgym.policy import LogLinearPolicy, OraclePolicy, RandomPolicy
from evolgym.policy.features import DIM

from conftest import DIFFICULTY


@pytest.fixture(scope="module")
def maze():
    ins = generate_instruction_set("maze", 40, 5, 8, seed=2, difficulty=7)
    client = local_client(DIFFICULTY, ins, ["maze"])
    d_s = collect_expert(OraclePolicy(), ins.bc(), client, RolloutConfig(0.0)).dataset
    sampled = explore(RandomPolicy(), ins.evolve_pool(), client, RolloutConfig(seed=3), iteration=1).dataset
    return ins, client, d_s, sampled, Compiler(client, ins)


@pytest.fixture(scope="module")
def bandit():
    text, _ = generate_instance("bandit", 0)
    ins = InstructionSet([Instruction("bandit", f"b{i}", text, i, "evolve") for i in range(20)])
    client = local_client(instructions=ins, envs=["bandit"])
    return ins, client, Compiler(client, ins)


def bandit_traj(action, reward, prov="expert"):
    obs = "A prize drops out." if reward == 1 else "Nothing happens."
    return Trajectory("bandit", "b0", (Step("", action, obs),), reward, "success" if reward == 1 else "failure", prov)


# -- behavioral cloning -----------------------------------------------------------

def test_bc_argmax_is_demonstrated_action(bandit):
    _, client, comp = bandit
    ds = TrajectoryDataset((bandit_traj(REWARDED, 1.0),) * 3)
    p = bc_train(LogLinearPolicy(), ds, comp).policy
    assert p.act(bandit_context(), 0.0, None).action == REWARDED


def test_bc_empty_dataset_unchanged(maze):
    *_, comp = maze
    base = LogLinearPolicy(np.random.default_rng(0).normal(size=DIM))
    res = bc_train(base, TrajectoryDataset(), comp)
    assert res.policy == base


def test_bc_loss_at_zero_is_sum_ln_k(maze):
    ins, client, d_s, _, comp = maze
    compiled = comp.compile(d_s)
    res = bc_train(LogLinearPolicy(), d_s, comp, TrainConfig(epochs=4))
    expected = sum(math.log(len(ctx_actions)) for ctx_actions in _step_action_counts(compiled))
    assert res.losses[0] == pytest.approx(expected, rel=1e-12)
    assert res.losses[-1] < res.losses[0]


def _step_action_counts(compiled):
    counts = np.bincount(compiled.action_step, minlength=compiled.n_steps)
    return [range(c) for c in counts]


def test_compile_step_rejects_unavailable_action():
    with pytest.raises(DatasetError):
        compile_step(bandit_context(), "pull middle")


def test_compiler_names_bad_record(maze):
    ins, client, d_s, _, comp = maze
    t = d_s.records[0]
    bad = Trajectory(t.env_name, t.instruction_id, (Step("", "move sideways", "Invalid action."),), 0.0, "failure")
    with pytest.raises(DatasetError, match=t.instruction_id):
        comp.compile([bad])
    ghost = Trajectory("maze", "maze-nope", t.steps, 1.0, "success")
    with pytest.raises(DatasetError, match="maze-nope"):
        comp.compile([ghost])


# -- learning step identities --------------------------------------------------------

def test_zero_rewards_leave_parameters(maze):
    *_, sampled, comp = maze
    base = LogLinearPolicy(np.random.default_rng(1).normal(size=DIM))
    zeros = TrajectoryDataset(tuple(t.with_reward(0.0) for t in sampled))
    assert learn_step(base, zeros, comp).policy == base
    compiled = comp.compile(sampled)
    g = gradient("evol", compiled, base.weights, np.zeros(len(sampled)))
    assert not np.any(g)


def test_binary_rewards_equal_bc_on_successes(maze):
    _, _, d_s, sampled, comp = maze
    mixed = TrajectoryDataset(d_s.records + sampled.records)
    rewards = np.array([t.reward for t in mixed])
    assert 0 < rewards.sum() < len(rewards)
    theta = np.random.default_rng(2).normal(scale=0.3, size=DIM)
    g_evol = gradient("evol", comp.compile(mixed), theta, rewards)
    g_bc = gradient("bc", comp.compile(mixed.successes()), theta)
    assert np.max(np.abs(g_evol - g_bc)) <= 1e-12


def test_uniform_reward_equals_bc(maze):
    _, _, d_s, _, comp = maze
    base = LogLinearPolicy()
    cfg = TrainConfig(epochs=3)
    assert learn_step(base, d_s, comp, cfg).policy == bc_train(base, d_s, comp, cfg).policy


def test_learn_step_requires_binary(maze):
    _, _, d_s, _, comp = maze
    half = TrajectoryDataset((d_s.records[0].with_reward(0.5),))
    with pytest.raises(DomainError):
        learn_step(LogLinearPolicy(), half, comp)


@pytest.mark.parametrize("objective", ["bc", "evol"])
def test_grad_check(maze, objective):
    _, _, d_s, sampled, comp = maze
    mixed = TrajectoryDataset(d_s.records + sampled.records)
    compiled = comp.compile(mixed)
    rewards = np.array([t.reward for t in mixed])
    rng = np.random.default_rng(3)
    for _ in range(3):
        theta = rng.normal(scale=0.5, size=DIM)
        assert grad_check(objective, compiled, theta, rewards=rewards, rng=rng) < 1e-5


def test_grad_check_zero_rewards(maze):
    *_, sampled, comp = maze
    compiled = comp.compile(sampled)
    theta = np.random.default_rng(4).normal(size=DIM)
    zeros = np.zeros(len(sampled))
    assert objective_value("evol", compiled, theta, zeros) == 0.0
    assert grad_check("evol", compiled, theta, rewards=zeros) == 0.0


def test_train_config_validation():
    for bad in (dict(iterations=0), dict(samples=0), dict(merge="union"), dict(restart_from="x"),
                dict(learning_rate=0.0), dict(temperature=-1.0)):
        with pytest.raises(DomainError):
            TrainConfig(**bad)
    assert TrainConfig().to_dict() == {"iterations": 4, "samples": 1, "merge": "with_initial",
                                       "learning_rate": 0.5, "epochs": 3, "temperature": 0.7,
                                       "restart_from": "base"}


# -- inference oracles ---------------------------------------------------------------

def test_log_evidence_examples():
    assert log_evidence(EnumeratedSpace([0.5, 0.5], [1, 1])) == 0.0
    assert log_evidence(EnumeratedSpace([0.5, 0.5], [0.8, 0.4])) == pytest.approx(math.log(0.6), abs=1e-15)
    assert math.log(0.6) == pytest.approx(-0.5108, abs=1e-4)
    with pytest.raises(ZeroEvidenceError) as e:
        log_evidence(EnumeratedSpace([1, 0], [0, 1]))
    assert e.value.value == -math.inf


def test_elbo_examples():
    space = EnumeratedSpace([0.5, 0.5], [0.8, 0.4])
    v = elbo([0.5, 0.5], space)
    assert v == pytest.approx((math.log(0.8) + math.log(0.4)) / 2, abs=1e-15)
    assert v == pytest.approx(-0.5697, abs=1e-4) and v <= math.log(0.6)
    c = elbo([1.0, 0.0], space)
    assert c == pytest.approx(math.log(0.8) - math.log(2), abs=1e-15)
    assert c == pytest.approx(-0.9163, abs=1e-4) and c <= math.log(0.6)
    assert elbo(optimal_q(space), space) == pytest.approx(math.log(0.6), abs=1e-12)
    with pytest.raises(SupportError):
        elbo([0.5, 0.5], EnumeratedSpace([1, 0], [1, 1]))
    assert elbo([0.5, 0.5], EnumeratedSpace([0.5, 0.5], [1, 0])) == -math.inf


def test_optimal_q_examples():
    assert np.allclose(optimal_q(EnumeratedSpace([0.5, 0.5], [1, 0])), [1, 0], atol=0)
    assert np.allclose(optimal_q(EnumeratedSpace([0.25, 0.75], [0.8, 0.4])), [0.4, 0.6], atol=1e-15)
    pi = [0.1, 0.2, 0.7]
    assert np.allclose(optimal_q(EnumeratedSpace(pi, [0.3] * 3)), pi, atol=1e-15)
    with pytest.raises(ZeroEvidenceError):
        optimal_q(EnumeratedSpace([0.5, 0.5], [0, 0]))


def test_space_validation():
    with pytest.raises(DomainError):
        EnumeratedSpace([0.5, 0.6], [1, 1])
    with pytest.raises(DomainError):
        EnumeratedSpace([0.5, 0.5], [1, 1.2])


def random_space(rng):
    n = int(rng.integers(2, 7))
    pi = rng.dirichlet(np.ones(n))
    pi = pi / pi.sum()
    pi[-1] = 1.0 - pi[:-1].sum()
    return EnumeratedSpace(pi, rng.uniform(0.01, 1, size=n))


def test_elbo_bound_random_spaces():
    rng = np.random.default_rng(0)
    for _ in range(300):
        space = random_space(rng)
        q = rng.dirichlet(np.ones(len(space)))
        le = log_evidence(space)
        assert elbo(q, space) <= le + 1e-9
        assert abs(elbo(optimal_q(space), space) - le) <= 1e-9
        assert elbo(optimal_q(space), space) >= elbo(q, space)


# -- evolution loop -----------------------------------------------------------------

def test_exact_bandit_converges():
    its = exact_bandit_evolution(TrainConfig())
    assert len(its) == 4
    probs = [it.success_prob for it in its]
    assert all(b >= a for a, b in zip(probs, probs[1:]))
    assert its[-1].greedy_success == 1.0
    assert its[0].explore_success == pytest.approx(0.5)
    # with the default step the renormalized update from base is the same every iteration
    assert probs[0] == pytest.approx(probs[-1]) and probs[-1] > 0.95
    strong = exact_bandit_evolution(TrainConfig(learning_rate=1.0, epochs=20))
    assert strong[-1].success_prob >= 0.99
    grow = [it.success_prob for it in exact_bandit_evolution(TrainConfig(restart_from="previous"))]
    assert all(b > a for a, b in zip(grow, grow[1:]))


def test_sampled_bandit_evolution(bandit):
    ins, client, comp = bandit
    res = agent_evol(LogLinearPolicy(), TrajectoryDataset(), ins.evolve_pool(), ins.evolve_pool(), client, comp,
                     TrainConfig(), RolloutConfig(seed=0))
    assert res.base_eval.success("bandit") == 0.0  # lexicographic tie-break picks "pull left"
    assert res.iterations[-1].eval.success("bandit") == 1.0


def test_agent_evol_accounting(maze):
    ins, client, d_s, _, comp = maze
    base = bc_train(LogLinearPolicy(), d_s, comp).policy
    seen = []
    res = agent_evol(base, d_s, ins.evolve_pool(), ins.eval(), client, comp, TrainConfig(),
                     RolloutConfig(seed=1), hook=lambda rec, pol, dm: seen.append((rec.iteration, len(dm))))
    assert len(res.iterations) == 4 and len(res.datasets) == 4 and len(res.snapshots) == 4
    assert [r.eval.per_env["maze"].n for r in res.iterations] == [5] * 4
    for rec, d_m in zip(res.iterations, res.datasets):
        assert rec.explored == len(d_m) == len(ins.evolve_pool())
        assert rec.merged == len(d_m) + len(d_s)
        assert {t.provenance for t in d_m} == {f"sampled:{rec.iteration}"}
    assert seen == [(m, len(ins.evolve_pool())) for m in range(1, 5)]
    m = res.manifest(TrainConfig())
    assert m["config"]["merge"] == "with_initial" and len(m["iterations"]) == 4
    assert "wall_time" not in str(m)


def test_with_previous_and_restart_previous(maze):
    ins, client, d_s, _, comp = maze
    base = bc_train(LogLinearPolicy(), d_s, comp).policy
    cfg = TrainConfig(iterations=2, merge="with_previous", restart_from="previous")
    res = agent_evol(base, d_s, ins.evolve_pool(), ins.eval(), client, comp, cfg, RolloutConfig(seed=1))
    first, second = res.iterations
    assert first.merged == first.explored
    assert second.merged == second.explored + first.explored


def test_zero_success_iteration_equals_bc(maze):
    ins, client, d_s, _, comp = maze
    base = LogLinearPolicy()
    cfg = TrainConfig(iterations=2)
    starved = RolloutConfig(seed=0, max_rounds={"maze": 1})
    res = agent_evol(base, d_s, ins.evolve_pool(), ins.eval(), client, comp, cfg, starved)
    assert all(r.successes == 0 for r in res.iterations)
    assert res.policy == bc_train(base, d_s, comp, cfg).policy
