import math

import numpy as np
import pytest
from scipy import stats

from marlcredit import critic, trainer
from marlcredit.config import (
    CriticConfig,
    DatasetConfig,
    LLMConfig,
    PolicyConfig,
    RunConfig,
)
from marlcredit.core import CreditSource, EnvKind, TaskAssignmentMatrix
from marlcredit.dataset import read_dataset
from marlcredit.environments import make_env
from marlcredit.exceptions import CriticError, DomainError, ShapeError
from marlcredit.llm_client import ChatSession, SessionMode
from marlcredit.policy import DQNAgent, load_checkpoint
from marlcredit.prompting import PromptMode, build_base_prompt


SMALL_POLICY = PolicyConfig(hidden_sizes=(8,), minibatch_size=8,
                            replay_capacity=500, learning_rate=1e-3)


def small_config(**kwargs):
    kwargs.setdefault("env", "matrix")
    kwargs.setdefault("iterations", 3)
    kwargs.setdefault("episodes_per_iteration", 1)
    kwargs.setdefault("eval_episodes", 2)
    kwargs.setdefault("policy", SMALL_POLICY)
    return RunConfig(**kwargs)


def matrix_agents(d_task=0, count=2):
    env = make_env("matrix")
    return [DQNAgent(env.spec.obs_dim_per_agent,
                     env.spec.action_count_per_agent, d_task, seed=i,
                     hidden_sizes=(8,), minibatch_size=16)
            for i in range(count)]


def params_of(run):
    return [agent.net.params.copy() for agent in run.agents]


class TestSchedules(object):

    @pytest.mark.parametrize(("iteration", "epsilon"), [
        (1, 1.0),
        (3, 0.62),
        (6, 0.05),
        (10, 0.05),
    ])
    def test_epsilon(self, iteration, epsilon):
        policy = PolicyConfig(epsilon_start=1.0, epsilon_end=0.05,
                              epsilon_anneal_fraction=0.5)
        assert trainer.epsilon_at(iteration, 10, policy) == \
            pytest.approx(epsilon)

    @pytest.mark.parametrize(("iteration", "iterations", "progress"), [
        (1, 1, 1.0),
        (1, 5, 0.0),
        (3, 5, 0.5),
        (5, 5, 1.0),
    ])
    def test_progress(self, iteration, iterations, progress):
        assert trainer.training_progress(iteration, iterations) == progress

    def test_gradient_step_count(self, matrix_batch):
        assert trainer.gradient_step_count(matrix_batch, 2, 32) == 2
        env = make_env("matrix")
        batch = trainer.collect_rollouts(matrix_agents(), env, 3, 1.0,
                                         np.random.default_rng(0))
        assert trainer.gradient_step_count(batch, 2, 32) == 4


class TestRollouts(object):

    def test_collect(self):
        env = make_env("matrix")
        batch = trainer.collect_rollouts(matrix_agents(), env, 3, 0.5,
                                         np.random.default_rng(1),
                                         batch_id=4)
        assert len(batch) == 3
        assert batch.batch_id == 4
        assert [len(traj) for traj in batch] == [25, 25, 25]
        assert batch.total_steps == 75
        assert all(traj.steps[-1].done for traj in batch)

    def test_reproducible(self):
        env = make_env("spaceworld:5x5")
        agents = [DQNAgent(env.spec.obs_dim_per_agent,
                           env.spec.action_count_per_agent, seed=i,
                           hidden_sizes=(8,)) for i in range(2)]
        first = trainer.collect_rollouts(agents, env, 2, 0.3,
                                         np.random.default_rng(9))
        second = trainer.collect_rollouts(agents, env, 2, 0.3,
                                          np.random.default_rng(9))
        assert first.trajectories == second.trajectories

    def test_policy_count_mismatch(self):
        with pytest.raises(ShapeError):
            trainer.collect_rollouts(matrix_agents(count=1),
                                     make_env("matrix"), 1, 0.0,
                                     np.random.default_rng(0))

    def test_policy_shape_mismatch(self):
        env = make_env("matrix")
        agents = [DQNAgent(env.spec.obs_dim_per_agent + 1,
                           env.spec.action_count_per_agent)
                  for _ in range(2)]
        with pytest.raises(ShapeError):
            trainer.evaluate(agents, env, 1, 0)


class TestTrainIteration(object):

    def _batch(self, agents, episodes=3):
        return trainer.collect_rollouts(agents, make_env("matrix"), episodes,
                                        1.0, np.random.default_rng(2))

    def test_updates(self):
        agents = matrix_agents()
        batch = self._batch(agents)
        before = [a.net.params.copy() for a in agents]
        verdict, loss, steps = trainer.train_iteration(
            agents, batch, critic.make_critic("shared"), 1.0,
            np.random.default_rng(0), update_epochs=2, warmup=16)
        assert steps == 2 * 4 * 2
        assert math.isfinite(loss)
        assert len(verdict.credits) == 3
        assert [len(a.buffer) for a in agents] == [75, 75]
        assert not any(np.array_equal(b, a.net.params)
                       for b, a in zip(before, agents))

    def test_warming_up(self):
        agents = matrix_agents()
        _, loss, steps = trainer.train_iteration(
            agents, self._batch(agents, 1), critic.make_critic("shared"),
            1.0, np.random.default_rng(0), warmup=1000)
        assert steps == 0
        assert math.isnan(loss)

    def test_critic_failure_changes_nothing(self):
        agents = matrix_agents()
        before = [a.net.params.copy() for a in agents]

        def fail(batch):
            raise CriticError("critic unreachable")

        with pytest.raises(CriticError):
            trainer.train_iteration(agents, self._batch(agents),
                                    critic.Critic(CreditSource.LLM_MCA, fail),
                                    1.0, np.random.default_rng(0))
        assert [len(a.buffer) for a in agents] == [0, 0]
        assert all(np.array_equal(b, a.net.params)
                   for b, a in zip(before, agents))

    def test_credits_reach_buffers(self):
        agents = matrix_agents()
        batch = self._batch(agents, 1)
        verdict = critic.oracle_assign(batch, EnvKind.MATRIX)
        trainer.store_transitions(agents, batch, verdict)
        for i, agent in enumerate(agents):
            assert np.array_equal(agent.buffer.credits[:25],
                                  verdict.credits[0].values[i])
            assert agent.buffer.dones[:25].tolist() == [False] * 24 + [True]

    def test_tasks_forward_filled(self, matrix_batch):
        agents = [DQNAgent(1, 3, 2, seed=i, hidden_sizes=(4,))
                  for i in range(2)]
        tasks = (TaskAssignmentMatrix((((1, 0), None), (None, (0, 1))), 2),
                 TaskAssignmentMatrix.absent(2, 1, 2))
        verdict = critic.CriticVerdict(
            critic.shared_reward_assign(matrix_batch).credits, tasks)
        trainer.store_transitions(agents, matrix_batch, verdict)
        first, second = agents
        assert first.buffer.tasks[:3].tolist() == [[1, 0], [1, 0], [0, 0]]
        assert first.buffer.next_tasks[:3].tolist() == \
            [[1, 0], [1, 0], [0, 0]]
        assert second.buffer.tasks[:3].tolist() == [[0, 0], [0, 1], [0, 0]]
        assert second.buffer.next_tasks[:1].tolist() == [[0, 1]]

    def test_absent_tasks_match_credit_only_training(self):
        mca = matrix_agents()
        taca = matrix_agents(d_task=3)
        batch = self._batch(mca, 2)
        shared = critic.shared_reward_assign(batch)
        absent = critic.CriticVerdict(shared.credits, tuple(
            TaskAssignmentMatrix.absent(2, len(traj), 3) for traj in batch))
        mca_critic = critic.Critic(CreditSource.SHARED, lambda b: shared)
        taca_critic = critic.Critic(CreditSource.LLM_TACA, lambda b: absent)
        rng_a, rng_b = np.random.default_rng(5), np.random.default_rng(5)
        for progress in (0.0, 0.5, 1.0):
            _, loss_a, _ = trainer.train_iteration(
                mca, batch, mca_critic, progress, rng_a, 2, 1, None,
                np.random.default_rng(1))
            _, loss_b, _ = trainer.train_iteration(
                taca, batch, taca_critic, progress, rng_b, 2, 1, None,
                np.random.default_rng(1))
            assert loss_a == loss_b
        for plain, tasked in zip(mca, taca):
            assert np.array_equal(tasked.net.params[:tasked.net.core_size],
                                  plain.net.params)


class TestEvaluate(object):

    def test_greedy_and_reproducible(self):
        agents = matrix_agents()
        env = make_env("matrix")
        first = trainer.evaluate(agents, env, 3, 11)
        assert len(first) == 3
        assert first == trainer.evaluate(agents, env, 3, 11)
        assert len(set(first)) == 1

    def test_no_learning(self):
        agents = matrix_agents()
        before = [a.net.params.copy() for a in agents]
        trainer.evaluate(agents, make_env("matrix"), 2, 0)
        assert all(np.array_equal(b, a.net.params)
                   for b, a in zip(before, agents))
        assert [len(a.buffer) for a in agents] == [0, 0]


class TestConfidenceInterval(object):

    def test_constant(self):
        assert trainer.confidence_interval([10.0] * 5) == (10.0, 0.0)

    def test_two_values(self):
        mean, half = trainer.confidence_interval([0.0, 10.0])
        assert mean == 5.0
        expected = stats.t.ppf(0.975, 1) * np.std([0.0, 10.0], ddof=1) \
            / math.sqrt(2)
        assert half == pytest.approx(expected)
        assert half == pytest.approx(63.531, rel=1e-4)

    @pytest.mark.parametrize("values", [[], [3.0]])
    def test_too_few(self, values):
        with pytest.raises(DomainError):
            trainer.confidence_interval(values)


class TestAggregateEvaluations(object):

    def _record(self, iteration, seed, eval_returns=None):
        return trainer.MetricsRecord(iteration, seed, 0.0, 0.0, 0.1,
                                     eval_returns=eval_returns)

    def test_across_seeds(self):
        records = [self._record(1, 0), self._record(1, 1),
                   self._record(2, 0, (1.0, 3.0)),
                   self._record(2, 1, (4.0,))]
        trainer.aggregate_evaluations(records)
        mean, half = trainer.confidence_interval([2.0, 4.0])
        assert records[0].eval_mean is None
        assert (records[2].eval_mean, records[2].eval_ci95) == (mean, half)
        assert (records[3].eval_mean, records[3].eval_ci95) == (mean, half)

    def test_single_seed(self):
        records = [self._record(1, 0, (2.0, 4.0))]
        trainer.aggregate_evaluations(records)
        assert records[0].eval_mean == 3.0
        assert records[0].eval_ci95 is None


class TestSeedRun(object):

    def test_deterministic(self):
        config = small_config(seeds=(3,))
        first = trainer.SeedRun(config, 3).run()
        second = trainer.SeedRun(config, 3).run()
        for a, b in zip(params_of(first), params_of(second)):
            assert np.array_equal(a, b)
        assert [r.train_return for r in first.records] == \
            [r.train_return for r in second.records]
        assert first.records[-1].eval_returns == \
            second.records[-1].eval_returns

    def test_seeds_differ(self):
        config = small_config(seeds=(0, 1))
        first = trainer.SeedRun(config, 0).run()
        second = trainer.SeedRun(config, 1).run()
        assert not np.array_equal(params_of(first)[0], params_of(second)[0])

    def test_one_critic_call_per_iteration(self):
        config = small_config(episodes_per_iteration=3, iterations=4)
        run = trainer.SeedRun(config, 0)
        sizes = []
        assign = run.critic.call_fn

        def counting(batch):
            sizes.append(len(batch))
            return assign(batch)

        run.critic.call_fn = counting
        run.run()
        assert sizes == [3, 3, 3, 3]
        assert run.critic.calls == 4
        assert [r.iteration for r in run.records] == [1, 2, 3, 4]

    def test_evaluation_schedule(self):
        run = trainer.SeedRun(small_config(iterations=5, eval_interval=2),
                              0).run()
        assert [r.eval_returns is not None for r in run.records] == \
            [False, True, False, True, True]
        assert len(run.records[1].eval_returns) == 2

    def test_epsilon_recorded(self):
        run = trainer.SeedRun(small_config(iterations=2), 0).run()
        assert run.records[0].epsilon == SMALL_POLICY.epsilon_start

    def test_taca_agents_take_tasks(self):
        agents = trainer.build_agents(
            make_env("matrix"),
            small_config(critic=CriticConfig(kind=CreditSource.LLM_TACA)), 0)
        assert [a.d_task for a in agents] == [SMALL_POLICY.d_task] * 2
        agents = trainer.build_agents(make_env("matrix"), small_config(), 0)
        assert [a.d_task for a in agents] == [0, 0]

    def test_single_agent_is_independent_dqn(self):
        config = small_config(env="lbf:5x5-1p-1f", episodes_per_iteration=2,
                              update_epochs=2, seeds=(7,), eval_episodes=1)
        run = trainer.SeedRun(config, 7).run()

        policy = config.policy
        env = make_env(config.env)
        agent = DQNAgent(env.spec.obs_dim_per_agent,
                         env.spec.action_count_per_agent, 0,
                         seed=7 * trainer.AGENT_SEED_STRIDE,
                         hidden_sizes=policy.hidden_sizes,
                         gamma=policy.gamma,
                         learning_rate=policy.learning_rate,
                         replay_capacity=policy.replay_capacity,
                         minibatch_size=policy.minibatch_size,
                         sync_interval=policy.sync_interval,
                         grad_clip=policy.grad_clip,
                         optimizer=policy.optimizer)
        rng = np.random.default_rng(7)
        for iteration in range(1, config.iterations + 1):
            epsilon = trainer.epsilon_at(iteration, config.iterations, policy)
            steps = 0
            for _ in range(config.episodes_per_iteration):
                obs = env.reset(int(rng.integers(0, trainer.SEED_SPACE)))
                done = False
                while not done:
                    action = agent.act(obs[0], None, epsilon, rng)
                    next_obs, reward, done = env.step((action,))
                    agent.buffer.add(obs[0], None, action, reward,
                                     next_obs[0], None, done)
                    obs = next_obs
                    steps += 1
            rounds = config.update_epochs * max(
                1, steps // policy.minibatch_size)
            for _ in range(rounds):
                if len(agent.buffer) >= max(policy.warmup, 1):
                    agent.update(rng)
        assert np.array_equal(run.agents[0].net.params, agent.net.params)

    def test_dataset_export(self, tmpdir):
        config = small_config(
            iterations=2, episodes_per_iteration=2, seeds=(4,),
            critic=CriticConfig(kind=CreditSource.ORACLE),
            dataset=DatasetConfig(enabled=True, root=str(tmpdir)))
        run = trainer.SeedRun(config, 4).run()
        paths = list(tmpdir.visit("*.jsonl"))
        assert len(paths) == 1
        assert "oracle" in str(paths[0])
        records = list(read_dataset(str(paths[0]), strict=True))
        assert len(records) == 4
        assert {r.run_id for r in records} == {"seed4"}
        assert all(r.critic_kind is CreditSource.ORACLE for r in records)
        assert run.writer.episodes == 4

    def test_checkpoints(self, tmpdir):
        run = trainer.SeedRun(small_config(iterations=1), 2).run()
        paths = run.save_checkpoints(str(tmpdir))
        assert [p.endswith(trainer.CHECKPOINT_SUFFIX) for p in paths] == \
            [True, True]
        for agent, path in zip(run.agents, paths):
            assert np.array_equal(load_checkpoint(path).params,
                                  agent.net.params)


class TestRunExperiment(object):

    def test_records_and_summary(self, tmpdir):
        config = small_config(seeds=(0, 1), iterations=2)
        result = trainer.run_experiment(config, checkpoint_dir=str(tmpdir))
        assert [(r.iteration, r.seed) for r in result.records] == \
            [(1, 0), (1, 1), (2, 0), (2, 1)]
        last = result.records[-2:]
        assert last[0].eval_mean == last[1].eval_mean
        assert last[0].eval_ci95 is not None
        summary = result.summary()
        assert summary["seeds"] == [0, 1]
        assert len(summary["final_eval_returns"]) == 2
        assert summary["mean"] == last[0].eval_mean
        assert summary["critic_calls"] == {"0": 2, "1": 2}
        assert summary["degraded_iterations"] == {"0": 0, "1": 0}
        assert result.degraded_iterations == 0
        assert tmpdir.join("seed1", "agent2.mcqn").check()

    def test_single_seed_summary(self):
        summary = trainer.run_experiment(small_config(iterations=1)).summary()
        assert summary["ci95"] is None
        assert summary["mean"] == summary["final_eval_returns"][0]

    def test_parallel_matches_sequential(self):
        sequential = trainer.run_experiment(small_config(seeds=(0, 1)))
        parallel = trainer.run_experiment(small_config(seeds=(0, 1),
                                                       parallel=True))
        assert [r.train_return for r in sequential.records] == \
            [r.train_return for r in parallel.records]
        for a, b in zip(sequential.runs, parallel.runs):
            for x, y in zip(params_of(a), params_of(b)):
                assert np.array_equal(x, y)


def credit_reply(steps, agents=2):
    rows = "\n".join("agent {}: [{}]".format(
        i, ", ".join(str((i + k) % 3 - 1) for k in range(steps)))
        for i in range(1, agents + 1))
    return "Agent 1 led.\nCREDITS:\n" + rows + "\n"


def completion(content):
    response = pytest.Mock(status_code=200)
    response.json.return_value = {
        "choices": [{"message": {"content": content}}]}
    return response


TASK_BLOCK = ("TASKS:\nagent 1 step 3: [1, 0, 0, 1]\n"
              "agent 2 step 10: [0, 1, 0, 0]\nagent 2 step 20: none\n")


class TestRecordReplay(object):

    @pytest.mark.parametrize(("kind", "mode", "tasks"), [
        (CreditSource.LLM_MCA, PromptMode.MCA, ""),
        (CreditSource.LLM_TACA, PromptMode.TACA, TASK_BLOCK),
    ])
    def test_replay_reproduces_recorded_run(self, tmpdir, no_network, kind,
                                            mode, tasks):
        cassette = str(tmpdir.join("cassettes", "run.jsonl"))
        env = make_env("matrix")
        bundle = build_base_prompt(env.spec.env_kind, env.prompt_context(),
                                   mode, SMALL_POLICY.d_task)
        http = pytest.Mock()
        http.post.side_effect = [completion(credit_reply(25) + tasks)
                                 for _ in range(2)]
        recorder = ChatSession(bundle.system_prompt, mode=SessionMode.RECORD,
                               cassette_path=cassette, api_key="k",
                               http=http, sleep=lambda seconds: None)

        def config(session_mode, root):
            return small_config(
                iterations=2, seeds=(5,),
                critic=CriticConfig(kind=kind),
                llm=LLMConfig(mode=session_mode, cassette=cassette),
                dataset=DatasetConfig(enabled=True, root=str(root)))

        recorded = trainer.run_experiment(config(SessionMode.RECORD,
                                                 tmpdir.join("a")),
                                          sessions={5: recorder})
        replayed = trainer.run_experiment(config(SessionMode.REPLAY,
                                                 tmpdir.join("b")))
        assert http.post.call_count == 2
        for x, y in zip(params_of(recorded.runs[0]),
                        params_of(replayed.runs[0])):
            assert np.array_equal(x, y)
        first = sorted(tmpdir.join("a").visit("*.jsonl"))
        second = sorted(tmpdir.join("b").visit("*.jsonl"))
        assert len(first) == len(second) == 1
        assert first[0].read_binary() == second[0].read_binary()
