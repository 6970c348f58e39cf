"""Centralized training with decentralized execution.

Every iteration collects a batch of episodes with the current policies,
asks the critic once for per-agent credits, stores the annotated
transitions in each agent's replay buffer and takes gradient steps. The
critic never takes part in evaluation.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import stats

from .config import cassette_path_for_seed
from .core import (
    CreditSource,
    EpisodeBatch,
    TimeStep,
    Trajectory,
    episode_return,
)
from .critic import OracleSettings, make_critic
from .dataset import DatasetRecord, DatasetWriter, dataset_path
from .environments import make_env
from .exceptions import DomainError, ShapeError
from .llm_client import ChatSession
from .policy import (
    DQNAgent,
    TaskInputSchedule,
    greedy_actions,
    save_checkpoint,
    task_input_schedule,
)
from .prompting import PromptMode, build_base_prompt


log = logging.getLogger(__name__)

SEED_SPACE = 2 ** 31 - 1
AGENT_SEED_STRIDE = 1000
CHECKPOINT_SUFFIX = ".mcqn"


@dataclass
class MetricsRecord:
    """One iteration of one seed.

    ``eval_returns`` holds this seed's evaluation returns on evaluation
    iterations; ``eval_mean`` and ``eval_ci95`` are the cross-seed
    aggregates filled in by :func:`aggregate_evaluations`.
    """

    iteration: int
    seed: int
    train_return: float
    loss: float
    epsilon: float
    degraded: bool = False
    retry_count: int = 0
    gradient_steps: int = 0
    eval_returns: Optional[Tuple[float, ...]] = None
    eval_mean: Optional[float] = None
    eval_ci95: Optional[float] = None


def epsilon_at(iteration, iterations, policy_config):
    """Linear annealing over the first part of training, then constant."""
    horizon = max(1.0, policy_config.epsilon_anneal_fraction * iterations)
    fraction = min(1.0, (iteration - 1) / horizon)
    return policy_config.epsilon_start + fraction * (
        policy_config.epsilon_end - policy_config.epsilon_start)


def training_progress(iteration, iterations):
    if iterations <= 1:
        return 1.0
    return (iteration - 1) / (iterations - 1)


def _check_policies(policies, env):
    spec = env.spec
    if len(policies) != spec.num_agents:
        raise ShapeError("{} policies for {} agents".format(
            len(policies), spec.num_agents))
    for agent in policies:
        if agent.net.obs_dim != spec.obs_dim_per_agent or \
                agent.net.action_count != spec.action_count_per_agent:
            raise ShapeError("Policy dimensions do not match {}".format(
                env.scenario_name))


def run_episode(policies, env, seed, epsilon, rng):
    """Play one episode; each agent sees only its own observation."""
    obs = env.reset(seed)
    steps = []
    done = False
    while not done:
        action = tuple(agent.act(obs[i], None, epsilon, rng)
                       for i, agent in enumerate(policies))
        next_obs, reward, done = env.step(action)
        steps.append(TimeStep(obs, action, reward, done))
        obs = next_obs
    return Trajectory(steps, seed, env.spec.env_kind, final_obs=obs,
                      max_episode_steps=env.spec.max_episode_steps)


def collect_rollouts(policies, env, episodes, epsilon, rng, batch_id=0):
    """``episodes`` complete episodes; their seeds are drawn from ``rng``."""
    _check_policies(policies, env)
    trajectories = []
    for _ in range(episodes):
        seed = int(rng.integers(0, SEED_SPACE))
        trajectories.append(run_episode(policies, env, seed, epsilon, rng))
    return EpisodeBatch(tuple(trajectories), batch_id)


def _task_inputs(verdict, e, traj, d_task, blank_fraction, task_rng):
    if verdict.tasks is None or not d_task:
        return None
    filled = verdict.tasks[e].forward_filled()
    if blank_fraction > 0.0 and len(traj):
        blank = task_rng.random(filled.shape[:2]) < blank_fraction
        filled[blank] = 0.0
    return filled


def store_transitions(policies, batch, verdict, blank_fraction=0.0,
                      task_rng=None):
    """Push every ``(o, t, a, c, o', t', done)`` into the agents' buffers."""
    d_task = policies[0].d_task
    for e, traj in enumerate(batch):
        credits = verdict.credits[e].values
        tasks = _task_inputs(verdict, e, traj, d_task, blank_fraction,
                             task_rng)
        for k, step in enumerate(traj.steps):
            next_obs = traj.next_obs(k)
            for i, agent in enumerate(policies):
                task = next_task = None
                if tasks is not None:
                    task = tasks[i, k]
                    next_task = tasks[i, k + 1] if k + 1 < len(traj) \
                        else task
                agent.buffer.add(step.joint_obs[i], task,
                                 step.joint_action[i], credits[i, k],
                                 next_obs[i], next_task, step.done)


def gradient_step_count(batch, update_epochs, minibatch_size):
    return update_epochs * max(1, batch.total_steps // minibatch_size)


def train_iteration(policies, batch, critic, progress=1.0, rng=None,
                    update_epochs=1, warmup=0, schedule=None,
                    task_rng=None):
    """Annotate ``batch`` with one critic call and update every policy.

    The policies are updated in place; :meth:`SeedRun.iterate` turns the
    result into the iteration's :class:`MetricsRecord`. The critic is
    consulted before anything is stored, so a critic failure leaves the
    policies and buffers untouched.

    :returns: ``(verdict, mean loss, gradient steps taken)``; the loss
        is NaN while every buffer is still warming up.
    """
    verdict = critic.assign(batch)
    blank_fraction, dropout_rate = task_input_schedule(
        progress, schedule or TaskInputSchedule())
    store_transitions(policies, batch, verdict, blank_fraction, task_rng)
    steps = gradient_step_count(batch, update_epochs,
                                policies[0].minibatch_size)
    losses = []
    for _ in range(steps):
        for agent in policies:
            if len(agent.buffer) >= max(warmup, 1):
                losses.append(agent.update(rng, dropout_rate))
    loss = math.fsum(losses) / len(losses) if losses else float("nan")
    return verdict, loss, len(losses)


def evaluate(policies, env, episodes, seed):
    """Greedy returns of ``episodes`` episodes seeded ``seed + e``.

    Task inputs are zero and no critic is involved.
    """
    _check_policies(policies, env)
    returns = []
    for e in range(episodes):
        obs = env.reset(seed + e)
        total = []
        done = False
        while not done:
            obs, reward, done = env.step(greedy_actions(policies, obs))
            total.append(reward)
        returns.append(math.fsum(total))
    return returns


def confidence_interval(values, confidence=0.95):
    """``(mean, half_width)`` of a Student-t interval with n-1 dof."""
    values = np.asarray(list(values), dtype=np.float64)
    if values.size < 2:
        raise DomainError("A confidence interval needs at least 2 values")
    mean = float(np.mean(values))
    sd = float(np.std(values, ddof=1))
    quantile = stats.t.ppf(0.5 + confidence / 2.0, values.size - 1)
    return mean, float(quantile * sd / math.sqrt(values.size))


def aggregate_evaluations(records):
    """Fill ``eval_mean``/``eval_ci95`` with cross-seed aggregates."""
    by_iteration = {}
    for record in records:
        if record.eval_returns is not None:
            by_iteration.setdefault(record.iteration, []).append(record)
    for iteration, rows in by_iteration.items():
        means = [math.fsum(r.eval_returns) / len(r.eval_returns)
                 for r in rows]
        if len(means) >= 2:
            mean, half = confidence_interval(means)
        else:
            mean, half = means[0], None
        for row in rows:
            row.eval_mean, row.eval_ci95 = mean, half
    return records


def build_agents(env, config, seed):
    policy = config.policy
    d_task = policy.d_task if config.critic.kind is CreditSource.LLM_TACA \
        else 0
    return [DQNAgent(env.spec.obs_dim_per_agent,
                     env.spec.action_count_per_agent, d_task,
                     seed=seed * AGENT_SEED_STRIDE + i,
                     hidden_sizes=policy.hidden_sizes, gamma=policy.gamma,
                     learning_rate=policy.learning_rate,
                     replay_capacity=policy.replay_capacity,
                     minibatch_size=policy.minibatch_size,
                     sync_interval=policy.sync_interval,
                     grad_clip=policy.grad_clip, optimizer=policy.optimizer)
            for i in range(env.num_agents)]


def build_critic(env, config, seed, session=None):
    """The configured critic; LLM critics get their own session."""
    critic = config.critic
    settings = OracleSettings.for_env(
        env, collision_penalty=critic.collision_penalty,
        pickup_bonus=critic.pickup_bonus,
        matrix_optimal_bonus=critic.matrix_optimal_bonus)
    bundle = None
    if critic.uses_llm:
        mode = PromptMode.TACA if critic.kind is CreditSource.LLM_TACA \
            else PromptMode.MCA
        bundle = build_base_prompt(env.spec.env_kind, env.prompt_context(),
                                   mode, config.policy.d_task)
        if session is None:
            llm = config.llm
            session = ChatSession(
                bundle.system_prompt, llm.endpoint, llm.model,
                llm.token_budget, llm.mode,
                cassette_path_for_seed(config, seed), llm.api_key,
                llm.timeout, llm.max_attempts)
    return make_critic(critic.kind, env, settings, session, bundle,
                       critic.retries, critic.normalization,
                       config.policy.d_task)


@dataclass
class SeedRun(object):
    """Training state of one seed; seeds never share anything."""

    config: object
    seed: int
    session: Optional[ChatSession] = None
    records: list = field(default_factory=list)

    def __post_init__(self):
        config = self.config
        self.env = make_env(config.env, config.env_params)
        self.eval_env = make_env(config.env, config.env_params)
        self.agents = build_agents(self.env, config, self.seed)
        self.critic = build_critic(self.env, config, self.seed, self.session)
        self.rng = np.random.default_rng(self.seed)
        self.task_rng = np.random.default_rng([self.seed, 2])
        self.schedule = TaskInputSchedule(config.policy.dropout_max)
        self.writer = None
        if config.dataset.enabled:
            root = config.dataset.root or os.path.join(config.out_dir,
                                                       "dataset")
            self.run_id = "seed{}".format(self.seed)
            self.writer = DatasetWriter(dataset_path(
                root, self.env.spec.env_kind, self.env.scenario_name,
                config.critic.kind, self.run_id))

    def iterate(self, iteration):
        config = self.config
        epsilon = epsilon_at(iteration, config.iterations, config.policy)
        batch = collect_rollouts(self.agents, self.env,
                                 config.episodes_per_iteration, epsilon,
                                 self.rng, batch_id=iteration)
        verdict, loss, steps = train_iteration(
            self.agents, batch, self.critic,
            training_progress(iteration, config.iterations), self.rng,
            config.update_epochs, config.policy.warmup, self.schedule,
            self.task_rng)
        if self.writer is not None:
            self._export(batch, verdict)
        returns = [episode_return(traj) for traj in batch]
        record = MetricsRecord(
            iteration, self.seed, math.fsum(returns) / len(returns), loss,
            epsilon, verdict.degraded, verdict.retry_count, steps)
        if iteration % config.eval_interval == 0 or \
                iteration == config.iterations:
            record.eval_returns = tuple(evaluate(
                self.agents, self.eval_env, config.eval_episodes,
                self.seed + SEED_SPACE))
        log.info("seed %d iteration %d/%d: return %.3f loss %.4g eps %.3f%s",
                 self.seed, iteration, config.iterations,
                 record.train_return, loss, epsilon,
                 " (degraded)" if verdict.degraded else "")
        self.records.append(record)
        return record

    def _export(self, batch, verdict):
        for e, traj in enumerate(batch):
            self.writer.write(DatasetRecord(
                env_kind=traj.env_kind,
                scenario=self.env.scenario_name,
                seed=traj.seed,
                critic_kind=self.config.critic.kind,
                run_id=self.run_id,
                trajectory=traj,
                credits=verdict.credits[e],
                tasks=verdict.tasks[e] if verdict.tasks is not None
                else None,
                normalization=self.config.critic.normalization,
                explanation=verdict.explanation,
                degraded=verdict.degraded,
            ))

    def run(self):
        for iteration in range(1, self.config.iterations + 1):
            self.iterate(iteration)
        return self

    def save_checkpoints(self, directory):
        paths = []
        target = os.path.join(directory, "seed{}".format(self.seed))
        os.makedirs(target, exist_ok=True)
        for i, agent in enumerate(self.agents, 1):
            path = os.path.join(target, "agent{}{}".format(
                i, CHECKPOINT_SUFFIX))
            save_checkpoint(agent.net, path)
            paths.append(path)
        return paths


@dataclass
class ExperimentResult:
    records: list
    runs: list

    @property
    def degraded_iterations(self):
        return sum(r.degraded for r in self.records)

    def final_eval_means(self):
        """Last evaluation mean of every seed, in seed order."""
        means = {}
        for record in self.records:
            if record.eval_returns is not None:
                means[record.seed] = (math.fsum(record.eval_returns)
                                      / len(record.eval_returns))
        return [means[run.seed] for run in self.runs if run.seed in means]

    def summary(self):
        finals = self.final_eval_means()
        summary = {
            "seeds": [run.seed for run in self.runs],
            "final_eval_returns": finals,
            "mean": math.fsum(finals) / len(finals) if finals else None,
            "ci95": None,
            "degraded_iterations": {
                str(run.seed): sum(r.degraded for r in run.records)
                for run in self.runs},
            "critic_calls": {str(run.seed): run.critic.calls
                             for run in self.runs},
        }
        if len(finals) >= 2:
            summary["mean"], summary["ci95"] = confidence_interval(finals)
        return summary


def run_experiment(config, checkpoint_dir=None, sessions=None):
    """Train every seed of ``config``; seeds run in threads if
    ``config.parallel``.

    :param dict sessions: optional chat session per seed, used instead of
        opening one from the LLM settings.
    """
    sessions = sessions or {}
    runs = [SeedRun(config, seed, sessions.get(seed))
            for seed in config.seeds]
    if config.parallel and len(runs) > 1:
        with ThreadPoolExecutor(max_workers=len(runs)) as executor:
            for future in [executor.submit(run.run) for run in runs]:
                future.result()
    else:
        for run in runs:
            run.run()
    if checkpoint_dir is not None:
        for run in runs:
            run.save_checkpoints(checkpoint_dir)
    records = sorted((r for run in runs for r in run.records),
                     key=lambda r: (r.iteration, config.seeds.index(r.seed)))
    aggregate_evaluations(records)
    return ExperimentResult(records, runs)
